"""Canned end-to-end experiment flows at desk scale.

Each flow generates its own synthetic data, trains whatever models it
compares, and leaves a self-contained run directory behind: config.resolved
(every knob pinned), metrics.tsv, log.tsv, and model checkpoints. Re-running
a flow from its resolved config reproduces metrics.tsv byte for byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .corpus import (
    Corpus,
    generate_synthetic_corpus,
    speaker_normalize,
    split_corpus,
    topic_similarity,
)
from .evaluation import (
    same_different_ap,
    word_similarity,
    eer,
    kws_metrics,
    write_report_tsv,
)
from .pairing import (
    PairSet,
    build_context_pairs,
    build_positive_pairs,
    simulate_discovered_pairs,
)
from .retrieval import (
    build_index,
    build_keyword_spec,
    kws_detect,
    mask_query_occurrences,
    qbe_rank,
    tune_threshold,
    write_detections_tsv,
    write_topk_tsv,
)
from .runconfig import (
    ConfigError,
    ExperimentConfig,
    default_config,
    parse_split,
    segmentation_from,
    synth_spec_from,
    train_config_from,
    write_resolved,
)
from .semantics import (
    assign_clusters,
    cluster_purity,
    kmeans_fit,
    save_cluster_model,
    save_skipgram,
    semantic_embed,
    skipgram_train,
    soft_label,
)
from .strategies import (
    ADAPT_LEARNING_RATES,
    StrategySpec,
    adapt_model,
    default_adapt_policy,
    train_awe,
    train_projection,
    train_semantic_contrastive,
    train_speech2vec,
)

FLOW_NAMES = (
    "contrastive-chapter",
    "adaptation-chapter",
    "language-choice",
    "kws",
    "semantic",
)

# every flow runs small: narrow networks, short schedules, tiny corpora
_MICRO_TRAIN = {
    "train.hidden_size": 24,
    "train.embedding_size": 12,
    "train.rnn_layers": 2,
    "train.epochs": 6,
    "train.ae_pretrain_epochs": 3,
    "train.batch_size": 40,
    "train.patience": 3,
    "train.pair_cap": 240,
}

FLOW_DEFAULTS = {
    "contrastive-chapter": {
        **_MICRO_TRAIN,
        "data.languages": "lang0:12",
        "data.speakers_per_language": 6,
        "data.tokens_per_type": 20,
        "data.split": "0.7,0.15,0.15",
    },
    "adaptation-chapter": {
        **_MICRO_TRAIN,
        "data.languages": "src0:10,src1:10,src2:10,tgt0:10",
        "data.speakers_per_language": 4,
        "data.tokens_per_type": 12,
        "data.split": "0.6,0.2,0.2",
    },
    "language-choice": {
        **_MICRO_TRAIN,
        # word length is held fixed so the only cross-language signal is the
        # phone inventory itself
        "data.languages": (
            "tgt0:10:inv0:0.0,rel0:10:inv0:0.0,rel1:10:inv0:0.0,"
            "unrel0:10:inv1:0.0,unrel1:10:inv1:0.0"
        ),
        "data.phone_count": 16,
        "data.phones_per_word_min": 3,
        "data.phones_per_word_max": 3,
        "data.frames_per_phone_min": 2,
        "data.frames_per_phone_max": 8,
        "data.speakers_per_language": 4,
        "data.tokens_per_type": 12,
        "data.split": "0.6,0.2,0.2",
    },
    "kws": {
        **_MICRO_TRAIN,
        "data.languages": "lang0:12",
        "data.speakers_per_language": 6,
        "data.tokens_per_type": 20,
        "data.split": "0.6,0.2,0.2",
        "seg.min_len": 6,
        "seg.max_len": 26,
        "seg.start_stride": 2,
        "seg.len_stride": 4,
        "kws.top_k": 20,
    },
    "semantic": {
        **_MICRO_TRAIN,
        "data.languages": "lang0:12",
        "data.speakers_per_language": 4,
        "data.tokens_per_type": 24,
        "data.topic_count": 3,
        "data.split": "0.7,0.15,0.15",
        "train.negatives_per_positive": 8,
        "semantics.clusters": 12,
        "semantics.cluster_restarts": 8,
        "semantics.skipgram_dim": 16,
        "semantics.projection_hidden": 48,
        "seg.min_len": 6,
        "seg.max_len": 26,
        "seg.start_stride": 2,
        "seg.len_stride": 4,
    },
}


def _generate_splits(config: ExperimentConfig):
    """Generate the flow's corpus and return (spec, train, dev, test)."""
    spec = synth_spec_from(config)
    corpus = generate_synthetic_corpus(spec)
    fractions = parse_split(config.get("data.split"))
    parts = split_corpus(corpus, fractions, seed=config.get("data.split_seed"))
    if config.get("data.normalize"):
        parts = tuple(speaker_normalize(p) for p in parts)
    return (spec,) + parts


def _language_subset(corpus: Corpus, languages) -> Corpus:
    wanted = set(languages)
    segs = [seg for seg in corpus.segments if seg.language in wanted]
    return Corpus.build(segs, split=corpus.split)


def _encoder_ap(encoder: nn.EncoderModel, corpus: Corpus) -> float:
    return _embed_ap(lambda feats: nn.encode(encoder, feats), corpus)


def _embed_ap(embed_fn, corpus: Corpus) -> float:
    items = [embed_fn(seg.features) for seg in corpus.segments]
    labels = [seg.word_label for seg in corpus.segments]
    speakers = [seg.speaker for seg in corpus.segments]
    return same_different_ap(items, labels, speakers).ap


def _pair_cap(config: ExperimentConfig):
    cap = config.get("train.pair_cap")
    return cap if cap > 0 else None


def _train_supervised(config, model_kind, regime, corpus, dev_corpus, languages, seed_shift=0):
    train_config = train_config_from(config, seed=config.get("train.seed") + seed_shift)
    pairs = build_positive_pairs(corpus, cap_per_corpus=_pair_cap(config), seed=train_config.seed)
    spec = StrategySpec(
        model_kind=model_kind,
        regime=regime,
        languages=tuple(languages),
        target_language=None,
        config=train_config,
    )
    return train_awe(spec, corpus, pairs, dev_corpus=dev_corpus)


def _append_log(rows: list, log) -> None:
    offset = rows[-1][0] if rows else 0
    for epoch, loss, dev in log:
        rows.append((offset + epoch, loss, dev))


def _write_log(path, rows) -> None:
    lines = ["epoch\tloss\tdev_metric"]
    for epoch, loss, dev in rows:
        lines.append(f"{epoch}\t{loss!r}\t{dev!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# flow bodies


def _flow_contrastive_chapter(config: ExperimentConfig, out: Path):
    """Baseline and three mono-supervised model kinds on one language."""
    spec, train_c, dev_c, test_c = _generate_splits(config)
    lang = spec.languages[0].name
    metrics = {}
    log_rows = []

    baseline = lambda feats: nn.embed_downsample(feats, 10)  # noqa: E731
    metrics["ap_dev_baseline"] = _embed_ap(baseline, dev_c)
    metrics["ap_test_baseline"] = _embed_ap(baseline, test_c)

    untrained = nn.build_encoder(
        train_c.feature_dim(),
        config.get("train.hidden_size"),
        config.get("train.embedding_size"),
        config.get("train.rnn_layers"),
        np.random.default_rng(config.get("train.seed")),
    )
    metrics["ap_test_untrained"] = _encoder_ap(untrained, test_c)

    for model_kind in ("cae", "siamese", "contrastive"):
        result = _train_supervised(config, model_kind, "mono_supervised", train_c, dev_c, [lang])
        nn.save_model(out / f"{model_kind}.awem", result.encoder, result.decoder)
        _append_log(log_rows, result.log)
        metrics[f"ap_dev_{model_kind}"] = _encoder_ap(result.encoder, dev_c)
        metrics[f"ap_test_{model_kind}"] = _encoder_ap(result.encoder, test_c)
    return metrics, log_rows


def _flow_adaptation_chapter(config: ExperimentConfig, out: Path):
    """Multilingual source vs unsupervised mono vs adapted model on a target."""
    spec = synth_spec_from(config)
    corpus = generate_synthetic_corpus(spec)
    languages = [lang.name for lang in spec.languages]
    sources, target = languages[:-1], languages[-1]

    source_corpus = _language_subset(corpus, sources)
    if config.get("data.normalize"):
        source_corpus = speaker_normalize(source_corpus)
    target_all = _language_subset(corpus, [target])
    fractions = parse_split(config.get("data.split"))
    tgt_train, tgt_dev, tgt_test = split_corpus(
        target_all, fractions, seed=config.get("data.split_seed")
    )
    if config.get("data.normalize"):
        tgt_train = speaker_normalize(tgt_train)
        tgt_dev = speaker_normalize(tgt_dev)
        tgt_test = speaker_normalize(tgt_test)

    metrics = {}
    log_rows = []
    seed = config.get("train.seed")

    multi = _train_supervised(config, "contrastive", "multilingual", source_corpus, tgt_dev, sources)
    nn.save_model(out / "multi.awem", multi.encoder)
    _append_log(log_rows, multi.log)
    metrics["ap_target_source"] = _encoder_ap(multi.encoder, tgt_test)

    discovered = PairSet(
        pairs=simulate_discovered_pairs(tgt_train, 160, 0.7, seed=seed),
        source="discovered",
    )
    mono_spec = StrategySpec(
        model_kind="contrastive",
        regime="mono_unsupervised",
        languages=(target,),
        target_language=target,
        config=train_config_from(config),
    )
    mono = train_awe(mono_spec, tgt_train, discovered, dev_corpus=tgt_dev)
    nn.save_model(out / "mono.awem", mono.encoder)
    _append_log(log_rows, mono.log)
    metrics["ap_target_mono"] = _encoder_ap(mono.encoder, tgt_test)

    adapt_lr = config.get("train.adapt_learning_rate") or ADAPT_LEARNING_RATES["contrastive"]
    adapt_config = train_config_from(config, learning_rate=adapt_lr)
    adapted = adapt_model(
        "contrastive",
        multi.encoder,
        None,
        discovered,
        default_adapt_policy("contrastive", multi.encoder.num_layers),
        adapt_config,
        tgt_train,
        dev_corpus=tgt_dev,
    )
    nn.save_model(out / "adapted.awem", adapted.encoder)
    _append_log(log_rows, adapted.log)
    metrics["ap_target_adapted"] = _encoder_ap(adapted.encoder, tgt_test)
    return metrics, log_rows


def _flow_language_choice(config: ExperimentConfig, out: Path):
    """Training-language choice: related pair vs unrelated pair, judged on
    the held-out target language."""
    spec = synth_spec_from(config)
    corpus = generate_synthetic_corpus(spec)
    languages = [lang.name for lang in spec.languages]
    target, related, unrelated = languages[0], languages[1:3], languages[3:5]

    target_all = _language_subset(corpus, [target])
    fractions = parse_split(config.get("data.split"))
    _, tgt_dev, tgt_test = split_corpus(target_all, fractions, seed=config.get("data.split_seed"))
    norm = config.get("data.normalize")
    if norm:
        tgt_dev = speaker_normalize(tgt_dev)
        tgt_test = speaker_normalize(tgt_test)

    metrics = {}
    log_rows = []
    for tag, pool in (("related", related), ("unrelated", unrelated)):
        pool_corpus = _language_subset(corpus, pool)
        if norm:
            pool_corpus = speaker_normalize(pool_corpus)
        result = _train_supervised(config, "contrastive", "multilingual", pool_corpus, tgt_dev, pool)
        nn.save_model(out / f"{tag}.awem", result.encoder)
        _append_log(log_rows, result.log)
        metrics[f"ap_target_{tag}"] = _encoder_ap(result.encoder, tgt_test)
    return metrics, log_rows


def _containment(corpus: Corpus) -> dict:
    """utterance id -> set of word labels it contains."""
    out = {utt_id: set() for utt_id in corpus.utterances}
    for seg in corpus.segments:
        out[seg.utterance_id].add(seg.word_label)
    return out


def _keyword_scores(index, specs, contains):
    """Pooled (scores, labels, keyword names) over every keyword/utterance."""
    scores, labels, names = [], [], []
    for kw_spec in specs:
        ranking = qbe_rank(index, kw_spec.embedding)
        for utt_id, score, _span in ranking.ranking:
            scores.append(score)
            labels.append(kw_spec.keyword in contains[utt_id])
            names.append(kw_spec.keyword)
    return scores, labels, names


def _detection_f1(detections, specs, contains):
    """Mean per-keyword F1 of flagged detections against containment truth."""
    flagged = {kw_spec.keyword: set() for kw_spec in specs}
    for det in detections:
        if det.flag:
            flagged[det.keyword].add(det.utterance_id)
    f1s, precisions, recalls = [], [], []
    for kw_spec in specs:
        truth = {u for u, labs in contains.items() if kw_spec.keyword in labs}
        precision, recall, f1 = kws_metrics(flagged[kw_spec.keyword], truth)
        f1s.append(f1)
        precisions.append(precision)
        recalls.append(recall)
    n = float(len(specs))
    return sum(precisions) / n, sum(recalls) / n, sum(f1s) / n


def _flow_kws(config: ExperimentConfig, out: Path):
    """Keyword spotting: tune thresholds on dev, detect on test, export TSVs."""
    spec, train_c, dev_c, test_c = _generate_splits(config)
    lang = spec.languages[0].name
    metrics = {}
    log_rows = []

    result = _train_supervised(config, "contrastive", "mono_supervised", train_c, dev_c, [lang])
    nn.save_model(out / "model.awem", result.encoder)
    _append_log(log_rows, result.log)
    encoder = result.encoder
    embedder = lambda feats: nn.encode(encoder, feats)  # noqa: E731

    dev_contains = _containment(dev_c)
    test_contains = _containment(test_c)
    per_kw = config.get("kws.templates_per_keyword")
    keywords = []
    for label in sorted({seg.word_label for seg in train_c.segments}):
        templates = [seg.id for seg in train_c.segments if seg.word_label == label][:per_kw]
        in_dev = any(label in labs for labs in dev_contains.values())
        in_test = any(label in labs for labs in test_contains.values())
        if len(templates) >= per_kw and in_dev and in_test:
            keywords.append((label, templates))
        if len(keywords) == 5:
            break

    specs = [
        build_keyword_spec(label, templates, train_c, embedder)
        for label, templates in keywords
    ]
    params = segmentation_from(config)
    dev_index = build_index(embedder, {u: dev_c.utterance_frames(u) for u in dev_c.utterances}, params)
    test_index = build_index(embedder, {u: test_c.utterance_frames(u) for u in test_c.utterances}, params)

    scores, truth_labels, names = _keyword_scores(dev_index, specs, dev_contains)
    global_threshold = tune_threshold(scores, truth_labels, mode="global")
    per_keyword = tune_threshold(scores, truth_labels, mode="per_keyword", keywords=names)
    metrics["threshold_global"] = global_threshold

    dev_global = kws_detect(dev_index, specs, threshold=global_threshold)
    tuned_specs = [
        build_keyword_spec(s.keyword, s.template_ids, train_c, embedder, threshold=per_keyword[s.keyword])
        for s in specs
    ]
    dev_tuned = kws_detect(dev_index, tuned_specs)
    _, _, metrics["f1_dev_global"] = _detection_f1(dev_global, specs, dev_contains)
    _, _, metrics["f1_dev_per_keyword"] = _detection_f1(dev_tuned, specs, dev_contains)

    test_detections = kws_detect(test_index, specs, threshold=global_threshold)
    precision, recall, f1 = _detection_f1(test_detections, specs, test_contains)
    metrics["precision_test"] = precision
    metrics["recall_test"] = recall
    metrics["f1_test_global"] = f1
    test_tuned = kws_detect(test_index, tuned_specs)
    _, _, metrics["f1_test_per_keyword"] = _detection_f1(test_tuned, specs, test_contains)

    write_detections_tsv(out / "detections.tsv", test_detections)
    write_topk_tsv(out / "topk.tsv", test_detections, config.get("kws.top_k"))
    return metrics, log_rows


def _reference_pairs(spec, vocab_size, lang, eval_corpus):
    # limit the oracle to word types the evaluation split actually holds,
    # since word_similarity refuses words it cannot embed
    present = {seg.word_label for seg in eval_corpus.segments}
    pairs = []
    for i in range(vocab_size):
        for j in range(i + 1, vocab_size):
            a, b = f"{lang}_w{i:03d}", f"{lang}_w{j:03d}"
            if a in present and b in present:
                pairs.append((a, b, topic_similarity(spec, vocab_size, i, j)))
    return pairs


def _flow_semantic(config: ExperimentConfig, out: Path):
    """The semantic ladder: phonetic baseline, speech2vec, semantic
    contrastive (scratch and warm start), projection head, cluster plus
    skip-gram, and a masked query-by-example comparison."""
    spec, train_c, dev_c, test_c = _generate_splits(config)
    lang = spec.languages[0].name
    vocab = spec.languages[0].vocab_size
    reference = _reference_pairs(spec, vocab, lang, test_c)
    window = config.get("semantics.context_window")
    draws = config.get("eval.wordsim_draws")
    metrics = {}
    log_rows = []

    def wordsim(embed_fn, tag):
        rho_avg, rho_single = word_similarity(embed_fn, test_c, reference, draws=draws)
        metrics[f"rho_avg_{tag}"] = rho_avg
        metrics[f"rho_single_{tag}"] = rho_single

    phonetic = _train_supervised(config, "contrastive", "mono_supervised", train_c, dev_c, [lang])
    nn.save_model(out / "phonetic.awem", phonetic.encoder)
    _append_log(log_rows, phonetic.log)
    enc = phonetic.encoder
    wordsim(lambda feats: nn.encode(enc, feats), "phonetic")

    context = build_context_pairs(train_c, window)
    s2v_config = train_config_from(config)
    s2v = train_speech2vec(train_c, context, s2v_config)
    nn.save_model(out / "speech2vec.awem", s2v.encoder, s2v.decoder)
    _append_log(log_rows, s2v.log)
    s2v_enc = s2v.encoder
    wordsim(lambda feats: nn.encode(s2v_enc, feats), "speech2vec")

    scratch = train_semantic_contrastive(train_c, context, train_config_from(config))
    nn.save_model(out / "sem_scratch.awem", scratch.encoder)
    _append_log(log_rows, scratch.log)
    scratch_enc = scratch.encoder
    wordsim(lambda feats: nn.encode(scratch_enc, feats), "sem_scratch")

    warm = train_semantic_contrastive(train_c, context, train_config_from(config), init_encoder=enc)
    nn.save_model(out / "sem_init.awem", warm.encoder)
    _append_log(log_rows, warm.log)
    warm_enc = warm.encoder
    wordsim(lambda feats: nn.encode(warm_enc, feats), "sem_init")

    phon_embeddings = {seg.id: nn.encode(enc, seg.features) for seg in train_c.segments}
    net = nn.build_projection_net(
        enc.embedding_size,
        config.get("semantics.projection_hidden"),
        enc.embedding_size,
        activation=config.get("semantics.projection_activation"),
        rng=config.get("train.seed"),
    )
    net, proj_log = train_projection(phon_embeddings, context, net, train_config_from(config))
    nn.save_projection_net(out / "projection.awem", net)
    _append_log(log_rows, proj_log)
    wordsim(lambda feats: nn.projection_apply(net, nn.encode(enc, feats)), "projection")

    train_matrix = np.asarray([phon_embeddings[seg.id] for seg in train_c.segments])
    clusters = kmeans_fit(
        train_matrix,
        config.get("semantics.clusters"),
        restarts=config.get("semantics.cluster_restarts"),
        seed=config.get("train.seed"),
        sigma=config.get("semantics.sigma"),
    )
    save_cluster_model(out / "clusters.awec", clusters)
    assignments, _ = assign_clusters(clusters.centroids, train_matrix)
    metrics["cluster_purity"] = cluster_purity(
        assignments, [seg.word_label for seg in train_c.segments]
    )
    mode = config.get("semantics.soft_mode")
    sequences = []
    for utt_id in sorted(train_c.utterances):
        rows = [
            soft_label(clusters, phon_embeddings[seg_id], mode=mode)
            for seg_id in train_c.utterances[utt_id]
        ]
        sequences.append(np.asarray(rows))
    sg_config = train_config_from(
        config,
        epochs=config.get("semantics.skipgram_epochs"),
        learning_rate=config.get("semantics.skipgram_lr"),
    )
    sg = skipgram_train(sequences, window, sg_config, dim=config.get("semantics.skipgram_dim"))
    save_skipgram(out / "skipgram.awes", sg)
    semantic_fn = lambda feats: semantic_embed(enc, clusters, sg, feats)  # noqa: E731
    wordsim(semantic_fn, "cluster_skipgram")

    # masked retrieval: remove the query word's own tokens from every test
    # utterance, then ask whether each system still finds the utterances
    # that contained it
    dev_tokens = {}
    for seg in dev_c.segments:
        dev_tokens.setdefault(seg.word_label, seg)
    test_contains = _containment(test_c)
    queries = [
        label
        for label in sorted(dev_tokens)
        if any(label in labs for labs in test_contains.values())
    ][:4]
    params = segmentation_from(config)
    phonetic_scores, semantic_scores, truth = [], [], []
    phonetic_fn = lambda feats: nn.encode(enc, feats)  # noqa: E731
    for label in queries:
        masked = mask_query_occurrences(test_c, label)
        utterances = {u: masked.utterance_frames(u) for u in masked.utterances}
        phon_index = build_index(phonetic_fn, utterances, params)
        sem_index = build_index(semantic_fn, utterances, params)
        query_seg = dev_tokens[label]
        phon_rank = {u: s for u, s, _ in qbe_rank(phon_index, phonetic_fn(query_seg.features)).ranking}
        sem_rank = {u: s for u, s, _ in qbe_rank(sem_index, semantic_fn(query_seg.features)).ranking}
        for utt_id in sorted(utterances):
            phonetic_scores.append(phon_rank[utt_id])
            semantic_scores.append(sem_rank[utt_id])
            truth.append(label in test_contains[utt_id])
    metrics["eer_masked_phonetic"] = eer(phonetic_scores, truth)
    metrics["eer_masked_semantic"] = eer(semantic_scores, truth)
    return metrics, log_rows


_FLOW_IMPLS = {
    "contrastive-chapter": _flow_contrastive_chapter,
    "adaptation-chapter": _flow_adaptation_chapter,
    "language-choice": _flow_language_choice,
    "kws": _flow_kws,
    "semantic": _flow_semantic,
}


def run_thesis_flow(flow_name: str, out_dir, overrides: dict | None = None) -> dict:
    """Run one named flow into out_dir and return its metrics.

    overrides is a dict of config key -> value laid over the flow's own
    defaults; passing the content of a previous run's config.resolved
    reproduces that run's metrics.tsv bitwise.
    """
    if flow_name not in FLOW_NAMES:
        raise ConfigError(f"unknown flow {flow_name!r}; choose from {', '.join(FLOW_NAMES)}")
    values = dict(default_config().values)
    values.update(FLOW_DEFAULTS[flow_name])
    config = ExperimentConfig(values=values).with_overrides(overrides or {})
    config.values["flow.name"] = flow_name
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(config, out / "config.resolved")
    metrics, log_rows = _FLOW_IMPLS[flow_name](config, out)
    write_report_tsv(out / "metrics.tsv", metrics)
    _write_log(out / "log.tsv", log_rows)
    return metrics
