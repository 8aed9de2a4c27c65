"""Command-line front end.

Every command reads its knobs from an optional flat key=value config file
(defaults apply when a key or the whole file is absent), runs one job, and
writes its outputs plus a fully resolved config copy into --out. Exit codes:
0 on success, 1 on a usage or config problem, 2 on a data problem. The
AWE_THREADS environment variable caps worker parallelism; the numeric code
here is single-threaded, so the cap is validated and recorded only.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .alignment import AlignmentError
from .corpus import (
    ArchiveError,
    CorpusError,
    generate_synthetic_corpus,
    read_archive,
    speaker_normalize,
    split_corpus,
    strip_labels,
    write_archive,
)
from .evaluation import (
    MetricError,
    macro_average,
    precision_at_10,
    precision_at_n,
    same_different_ap,
    speaker_probe,
    word_similarity,
    write_pr_curve_tsv,
    write_report_tsv,
)
from .flows import run_thesis_flow, FLOW_NAMES
from .pairing import (
    PairingError,
    build_context_pairs,
    build_positive_pairs,
    load_discovered_pairs,
)
from .retrieval import (
    RetrievalError,
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
    default_config,
    load_config,
    parse_config_text,
    parse_languages,
    parse_split,
    segmentation_from,
    synth_spec_from,
    train_config_from,
    write_resolved,
)
from .semantics import (
    SemanticsError,
    assign_clusters,
    cluster_purity,
    kmeans_fit,
    load_cluster_model,
    load_skipgram,
    save_cluster_model,
    save_skipgram,
    semantic_embed,
    skipgram_train,
    soft_label,
)
from .strategies import (
    ADAPT_LEARNING_RATES,
    StrategyError,
    StrategySpec,
    TrainingError,
    adapt_model,
    default_adapt_policy,
    train_awe,
    train_semantic_contrastive,
    train_projection,
    train_speech2vec,
    write_training_log,
)

_DATA_ERRORS = (
    CorpusError,
    ArchiveError,
    PairingError,
    nn.ModelError,
    AlignmentError,
    StrategyError,
    TrainingError,
    SemanticsError,
    RetrievalError,
    MetricError,
    OSError,
)


def _load_cfg(args):
    if getattr(args, "config", None):
        return load_config(args.config)
    return default_config()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _encoder_from(path) -> nn.EncoderModel:
    encoder, _ = nn.load_model(path)
    return encoder


def _corpus_embeddings(encoder, corpus):
    return [nn.encode(encoder, seg.features) for seg in corpus.segments]


# ---------------------------------------------------------------------------
# command handlers


def _cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    spec = synth_spec_from(cfg)
    corpus = generate_synthetic_corpus(spec)
    normalize = bool(cfg.get("data.normalize"))
    out = _out_dir(args)
    if args.dev_out or args.test_out:
        if not (args.dev_out and args.test_out):
            print("awelab: --dev-out and --test-out go together", file=sys.stderr)
            return 1
        fractions = parse_split(cfg.get("data.split"))
        train_c, dev_c, test_c = split_corpus(corpus, fractions, seed=cfg.get("data.split_seed"))
        parts = [(out, train_c), (Path(args.dev_out), dev_c), (Path(args.test_out), test_c)]
    else:
        parts = [(out, corpus)]
    for index, (dest, part) in enumerate(parts):
        if normalize:
            part = speaker_normalize(part)
        if index == 0 and cfg.get("data.strip_labels"):
            part = strip_labels(part)
        dest.mkdir(parents=True, exist_ok=True)
        write_archive(part, dest)
    write_resolved(cfg, out / "config.resolved")
    print(f"wrote {len(parts)} archive(s); training archive at {out}")
    return 0


def _load_train_data(args):
    corpora = {}
    for path in args.data:
        corpora[str(path)] = read_archive(path)
    languages = sorted({seg.language for c in corpora.values() for seg in c.segments})
    single = corpora[str(args.data[0])] if len(corpora) == 1 else corpora
    return single, languages


def _cmd_train(args) -> int:
    cfg = _load_cfg(args)
    corpora, languages = _load_train_data(args)
    pooled = corpora if isinstance(corpora, dict) else {"only": corpora}
    all_segments = [seg for c in pooled.values() for seg in c.segments]
    from .corpus import Corpus

    merged = Corpus.build(all_segments, split="train")
    dev_corpus = read_archive(args.dev) if args.dev else None
    cap = cfg.get("train.pair_cap") or None
    if args.pairs:
        pairs = load_discovered_pairs(args.pairs, merged)
    else:
        pairs = build_positive_pairs(merged, cap_per_corpus=cap, seed=cfg.get("train.seed"))
    out = _out_dir(args)

    if args.regime == "adapt":
        if not args.source:
            print("awelab: --regime adapt needs --source", file=sys.stderr)
            return 1
        encoder, decoder = nn.load_model(args.source)
        lr = cfg.get("train.adapt_learning_rate") or ADAPT_LEARNING_RATES[args.model]
        config = train_config_from(
            cfg,
            learning_rate=lr,
            hidden_size=encoder.hidden_size,
            embedding_size=encoder.embedding_size,
            rnn_layers=encoder.num_layers,
        )
        policy = default_adapt_policy(args.model, encoder.num_layers)
        result = adapt_model(args.model, encoder, decoder, pairs, policy, config, merged, dev_corpus)
    else:
        regime = {
            "mono": "mono_unsupervised" if args.pairs else "mono_supervised",
            "multi": "multilingual",
        }[args.regime]
        spec = StrategySpec(
            model_kind=args.model,
            regime=regime,
            languages=tuple(languages),
            target_language=None,
            config=train_config_from(cfg),
        )
        result = train_awe(spec, merged, pairs, dev_corpus=dev_corpus)

    nn.save_model(out / "model.awem", result.encoder, result.decoder)
    write_training_log(out / "log.tsv", result.log)
    metrics = {"best_epoch": float(result.best_epoch)}
    if result.log:
        metrics["final_loss"] = float(result.log[-1][1])
    if dev_corpus is not None:
        items = _corpus_embeddings(result.encoder, dev_corpus)
        labels = [seg.word_label for seg in dev_corpus.segments]
        speakers = [seg.speaker for seg in dev_corpus.segments]
        metrics["ap_dev"] = same_different_ap(items, labels, speakers).ap
    write_report_tsv(out / "metrics.tsv", metrics)
    write_resolved(cfg, out / "config.resolved")
    print(f"trained {args.model} ({args.regime}); model at {out / 'model.awem'}")
    return 0


def _cmd_semantic(args) -> int:
    cfg = _load_cfg(args)
    corpus = read_archive(args.data)
    window = cfg.get("semantics.context_window")
    out = _out_dir(args)
    config = train_config_from(cfg)
    metrics = {}

    if args.method in ("speech2vec", "contrastive", "init", "project"):
        context = build_context_pairs(corpus, window)
    if args.method == "speech2vec":
        result = train_speech2vec(corpus, context, config)
        nn.save_model(out / "model.awem", result.encoder, result.decoder)
        write_training_log(out / "log.tsv", result.log)
        metrics["final_loss"] = float(result.log[-1][1])
    elif args.method in ("contrastive", "init"):
        init_encoder = None
        if args.method == "init":
            if not args.source:
                print("awelab: --method init needs --source", file=sys.stderr)
                return 1
            init_encoder = _encoder_from(args.source)
            config = train_config_from(
                cfg,
                hidden_size=init_encoder.hidden_size,
                embedding_size=init_encoder.embedding_size,
                rnn_layers=init_encoder.num_layers,
            )
        result = train_semantic_contrastive(corpus, context, config, init_encoder=init_encoder)
        nn.save_model(out / "model.awem", result.encoder)
        write_training_log(out / "log.tsv", result.log)
        metrics["final_loss"] = float(result.log[-1][1])
    elif args.method == "project":
        if not args.source:
            print("awelab: --method project needs --source", file=sys.stderr)
            return 1
        encoder = _encoder_from(args.source)
        embeddings = {seg.id: nn.encode(encoder, seg.features) for seg in corpus.segments}
        net = nn.build_projection_net(
            encoder.embedding_size,
            cfg.get("semantics.projection_hidden"),
            encoder.embedding_size,
            activation=cfg.get("semantics.projection_activation"),
            rng=cfg.get("train.seed"),
        )
        net, log = train_projection(embeddings, context, net, config)
        nn.save_projection_net(out / "projection.awem", net)
        write_training_log(out / "log.tsv", log)
        metrics["final_loss"] = float(log[-1][1])
    else:  # cluster-skipgram
        if not args.source:
            print("awelab: --method cluster-skipgram needs --source", file=sys.stderr)
            return 1
        encoder = _encoder_from(args.source)
        embeddings = {seg.id: nn.encode(encoder, seg.features) for seg in corpus.segments}
        matrix = np.asarray([embeddings[seg.id] for seg in corpus.segments])
        clusters = kmeans_fit(
            matrix,
            cfg.get("semantics.clusters"),
            restarts=cfg.get("semantics.cluster_restarts"),
            seed=cfg.get("train.seed"),
            sigma=cfg.get("semantics.sigma"),
        )
        save_cluster_model(out / "clusters.awec", clusters)
        labels = [seg.word_label for seg in corpus.segments]
        if all(lab is not None for lab in labels):
            assignments, _ = assign_clusters(clusters.centroids, matrix)
            metrics["cluster_purity"] = cluster_purity(assignments, labels)
        mode = cfg.get("semantics.soft_mode")
        sequences = []
        for utt_id in sorted(corpus.utterances):
            rows = [
                soft_label(clusters, embeddings[seg_id], mode=mode)
                for seg_id in corpus.utterances[utt_id]
            ]
            sequences.append(np.asarray(rows))
        sg_config = train_config_from(
            cfg,
            epochs=cfg.get("semantics.skipgram_epochs"),
            learning_rate=cfg.get("semantics.skipgram_lr"),
        )
        sg = skipgram_train(sequences, window, sg_config, dim=cfg.get("semantics.skipgram_dim"))
        save_skipgram(out / "skipgram.awes", sg)

    write_report_tsv(out / "metrics.tsv", metrics)
    write_resolved(cfg, out / "config.resolved")
    print(f"semantic {args.method} done; outputs at {out}")
    return 0


def _cmd_eval_samediff(args) -> int:
    cfg = _load_cfg(args)
    corpus = read_archive(args.data)
    labels = [seg.word_label for seg in corpus.segments]
    speakers = [seg.speaker for seg in corpus.segments]
    scorer = "cosine"
    if args.ckpt:
        encoder = _encoder_from(args.ckpt)
        items = _corpus_embeddings(encoder, corpus)
    elif cfg.get("eval.scorer") == "dtw":
        items = [seg.features for seg in corpus.segments]
        scorer = "dtw"
    else:
        items = [nn.embed_downsample(seg.features, 10) for seg in corpus.segments]
    curve = same_different_ap(items, labels, speakers, scorer=scorer)
    out = _out_dir(args)
    write_report_tsv(out / "metrics.tsv", {"ap": curve.ap})
    write_pr_curve_tsv(out / "pr_curve.tsv", curve)
    write_resolved(cfg, out / "config.resolved")
    print(f"average precision {curve.ap!r}")
    return 0


def _cmd_eval_speaker(args) -> int:
    cfg = _load_cfg(args)
    corpus = read_archive(args.data)
    encoder = _encoder_from(args.ckpt)
    items = np.asarray(_corpus_embeddings(encoder, corpus))
    speakers = [seg.speaker for seg in corpus.segments]
    accuracy = speaker_probe(items, speakers, seed=cfg.get("train.seed"))
    out = _out_dir(args)
    write_report_tsv(out / "metrics.tsv", {"speaker_accuracy": accuracy})
    write_resolved(cfg, out / "config.resolved")
    print(f"speaker probe accuracy {accuracy!r}")
    return 0


def _query_tokens(query_corpus):
    """One query segment per word type: the first token in id order."""
    tokens = {}
    for seg in sorted(query_corpus.segments, key=lambda s: s.id):
        if seg.word_label is None:
            raise PairingError("query corpus must be labeled")
        tokens.setdefault(seg.word_label, seg)
    return tokens


def _cmd_qbe(args) -> int:
    cfg = _load_cfg(args)
    collection = read_archive(args.data)
    queries = read_archive(args.query_data)
    encoder = _encoder_from(args.ckpt)
    embedder = lambda feats: nn.encode(encoder, feats)  # noqa: E731
    params = segmentation_from(cfg)
    contains = {utt_id: set() for utt_id in collection.utterances}
    for seg in collection.segments:
        contains[seg.utterance_id].add(seg.word_label)
    tokens = _query_tokens(queries)
    per_type_pn, per_type_p10 = {}, {}
    base_index = None
    if not args.mask:
        base_index = build_index(
            embedder, {u: collection.utterance_frames(u) for u in collection.utterances}, params
        )
    for label, seg in sorted(tokens.items()):
        if not any(label in labs for labs in contains.values()):
            continue
        if args.mask:
            masked = mask_query_occurrences(collection, label)
            index = build_index(
                embedder, {u: masked.utterance_frames(u) for u in masked.utterances}, params
            )
        else:
            index = base_index
        ranking = qbe_rank(index, embedder(seg.features))
        relevant = {utt_id for utt_id, _score, _span in ranking.ranking if label in contains[utt_id]}
        if not relevant:
            continue
        per_type_pn.setdefault(label, []).append(precision_at_n(ranking, relevant))
        if len(ranking.ranking) >= 10:
            per_type_p10.setdefault(label, []).append(precision_at_10(ranking, relevant))
    if not per_type_pn:
        raise RetrievalError("no query type has a relevant utterance in the collection")
    metrics = {"p_at_n": macro_average(per_type_pn)}
    if per_type_p10:
        metrics["p_at_10"] = macro_average(per_type_p10)
    out = _out_dir(args)
    write_report_tsv(out / "metrics.tsv", metrics)
    write_resolved(cfg, out / "config.resolved")
    print(f"query-by-example precision at N {metrics['p_at_n']!r}")
    return 0


def _cmd_kws(args) -> int:
    cfg = _load_cfg(args)
    collection = read_archive(args.data)
    dev = read_archive(args.dev_data)
    template_corpus = read_archive(args.template_data) if args.template_data else dev
    encoder = _encoder_from(args.ckpt)
    embedder = lambda feats: nn.encode(encoder, feats)  # noqa: E731
    params = segmentation_from(cfg)

    def containment(corpus):
        out = {utt_id: set() for utt_id in corpus.utterances}
        for seg in corpus.segments:
            out[seg.utterance_id].add(seg.word_label)
        return out

    dev_contains = containment(dev)
    test_contains = containment(collection)
    per_kw = cfg.get("kws.templates_per_keyword")
    if args.keywords:
        wanted = args.keywords.split(",")
    else:
        wanted = sorted({seg.word_label for seg in template_corpus.segments if seg.word_label})
    specs = []
    for label in wanted:
        templates = [seg.id for seg in template_corpus.segments if seg.word_label == label][:per_kw]
        in_dev = any(label in labs for labs in dev_contains.values())
        in_test = any(label in labs for labs in test_contains.values())
        if templates and in_dev and in_test:
            specs.append(build_keyword_spec(label, templates, template_corpus, embedder))
        if not args.keywords and len(specs) == 5:
            break
    if not specs:
        raise RetrievalError("no usable keyword: need templates plus dev and test occurrences")

    dev_index = build_index(embedder, {u: dev.utterance_frames(u) for u in dev.utterances}, params)
    test_index = build_index(
        embedder, {u: collection.utterance_frames(u) for u in collection.utterances}, params
    )
    scores, truth, names = [], [], []
    for kw_spec in specs:
        ranking = qbe_rank(dev_index, kw_spec.embedding)
        for utt_id, score, _span in ranking.ranking:
            scores.append(score)
            truth.append(kw_spec.keyword in dev_contains[utt_id])
            names.append(kw_spec.keyword)
    mode = cfg.get("kws.tune_mode")
    metrics = {}
    if mode == "per_keyword":
        per_keyword = tune_threshold(scores, truth, mode="per_keyword", keywords=names)
        specs = [
            build_keyword_spec(
                s.keyword, s.template_ids, template_corpus, embedder, threshold=per_keyword[s.keyword]
            )
            for s in specs
        ]
        detections = kws_detect(test_index, specs)
    else:
        threshold = tune_threshold(scores, truth, mode="global")
        metrics["threshold_global"] = threshold
        detections = kws_detect(test_index, specs, threshold=threshold)

    flagged = {s.keyword: set() for s in specs}
    for det in detections:
        if det.flag:
            flagged[det.keyword].add(det.utterance_id)
    from .evaluation import kws_metrics

    f1s, ps, rs = [], [], []
    for kw_spec in specs:
        truth_set = {u for u, labs in test_contains.items() if kw_spec.keyword in labs}
        precision, recall, f1 = kws_metrics(flagged[kw_spec.keyword], truth_set)
        ps.append(precision)
        rs.append(recall)
        f1s.append(f1)
    metrics["precision"] = float(np.mean(ps))
    metrics["recall"] = float(np.mean(rs))
    metrics["f1"] = float(np.mean(f1s))
    out = _out_dir(args)
    write_detections_tsv(out / "detections.tsv", detections)
    write_topk_tsv(out / "topk.tsv", detections, cfg.get("kws.top_k"))
    write_report_tsv(out / "metrics.tsv", metrics)
    write_resolved(cfg, out / "config.resolved")
    print(f"keyword spotting f1 {metrics['f1']!r} over {len(specs)} keywords")
    return 0


def _cmd_wordsim(args) -> int:
    cfg = _load_cfg(args)
    corpus = read_archive(args.data)
    spec = synth_spec_from(cfg)
    first = parse_languages(cfg.get("data.languages"))[0]
    from .corpus import topic_similarity

    reference = []
    for i in range(first.vocab_size):
        for j in range(i + 1, first.vocab_size):
            sim = topic_similarity(spec, first.vocab_size, i, j)
            reference.append((f"{first.name}_w{i:03d}", f"{first.name}_w{j:03d}", sim))
    encoder = _encoder_from(args.ckpt)
    if args.clusters and args.skipgram:
        clusters = load_cluster_model(args.clusters)
        sg = load_skipgram(args.skipgram)
        embed_fn = lambda feats: semantic_embed(encoder, clusters, sg, feats)  # noqa: E731
    elif args.projection:
        net = nn.load_projection_net(args.projection)
        embed_fn = lambda feats: nn.projection_apply(net, nn.encode(encoder, feats))  # noqa: E731
    else:
        embed_fn = lambda feats: nn.encode(encoder, feats)  # noqa: E731
    rho_avg, rho_single = word_similarity(
        embed_fn, corpus, reference, draws=cfg.get("eval.wordsim_draws")
    )
    out = _out_dir(args)
    write_report_tsv(out / "metrics.tsv", {"rho_avg": rho_avg, "rho_single": rho_single})
    write_resolved(cfg, out / "config.resolved")
    print(f"word similarity rho_avg {rho_avg!r} rho_single {rho_single!r}")
    return 0


def _cmd_export_embeddings(args) -> int:
    corpus = read_archive(args.data)
    if args.ckpt:
        encoder = _encoder_from(args.ckpt)
        embed_fn = lambda feats: nn.encode(encoder, feats)  # noqa: E731
    else:
        embed_fn = lambda feats: nn.embed_downsample(feats, args.downsample)  # noqa: E731
    lines = []
    for seg in corpus.segments:
        vec = embed_fn(seg.features)
        lines.append(seg.id + "\t" + "\t".join(repr(float(v)) for v in vec))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} embeddings to {out}")
    return 0


def _cmd_flow(args) -> int:
    overrides = {}
    if args.config:
        overrides = parse_config_text(Path(args.config).read_text(encoding="utf-8"))
    name = args.name or overrides.get("flow.name")
    if not name:
        print("awelab: flow needs --name or a config carrying flow.name", file=sys.stderr)
        return 1
    metrics = run_thesis_flow(name, args.out, overrides)
    print(f"flow {name} wrote {len(metrics)} metrics to {Path(args.out) / 'metrics.tsv'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="awelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus archive")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--dev-out")
    p.add_argument("--test-out")
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("train", help="train an acoustic word embedding model")
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--model", choices=("cae", "siamese", "contrastive"), required=True)
    p.add_argument("--regime", choices=("mono", "multi", "adapt"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--pairs", help="discovered-pairs file; switches mono to the unsupervised path")
    p.add_argument("--dev", help="dev archive for model selection")
    p.add_argument("--source", help="source checkpoint for --regime adapt")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("semantic", help="train a semantic embedding component")
    p.add_argument(
        "--method",
        choices=("speech2vec", "contrastive", "init", "project", "cluster-skipgram"),
        required=True,
    )
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--source", help="phonetic encoder checkpoint")
    p.set_defaults(handler=_cmd_semantic)

    p = sub.add_parser("eval-samediff", help="same-different average precision")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--config")
    p.set_defaults(handler=_cmd_eval_samediff)

    p = sub.add_parser("eval-speaker", help="speaker classification probe")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(handler=_cmd_eval_speaker)

    p = sub.add_parser("qbe", help="query-by-example search over utterances")
    p.add_argument("--data", required=True, help="collection archive")
    p.add_argument("--query-data", required=True, help="archive supplying query tokens")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--mask", action="store_true", help="mask each query's own occurrences")
    p.set_defaults(handler=_cmd_qbe)

    p = sub.add_parser("kws", help="keyword spotting with tuned thresholds")
    p.add_argument("--data", required=True, help="collection archive to search")
    p.add_argument("--dev-data", required=True, help="archive for threshold tuning")
    p.add_argument("--template-data", help="archive supplying templates (default: dev data)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keywords", help="comma-separated labels (default: auto-pick)")
    p.add_argument("--config")
    p.set_defaults(handler=_cmd_kws)

    p = sub.add_parser("wordsim", help="similarity correlation against the topic oracle")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--clusters")
    p.add_argument("--skipgram")
    p.add_argument("--projection")
    p.set_defaults(handler=_cmd_wordsim)

    p = sub.add_parser("export-embeddings", help="write one embedding per segment to TSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--downsample", type=int, default=10)
    p.set_defaults(handler=_cmd_export_embeddings)

    p = sub.add_parser("flow", help="run one canned experiment flow")
    p.add_argument("--name", choices=FLOW_NAMES)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(handler=_cmd_flow)

    return parser


def dispatch(argv) -> int:
    """Parse argv and run one command. Returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    threads = os.environ.get("AWE_THREADS")
    if threads is not None:
        try:
            if int(threads) < 1:
                raise ValueError
        except ValueError:
            print(f"awelab: AWE_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
            return 1
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"awelab: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        print(f"awelab: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
