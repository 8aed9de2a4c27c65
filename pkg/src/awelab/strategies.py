"""Training strategies over the neural core: monolingual (supervised or on
discovered pairs), pooled multilingual, adaptation with parameter freezing,
and the semantic trainers (context-pair encoder-decoder, semantic
contrastive with sampled negatives, and the projection network).

All trainers share the same conventions: one seeded RNG stream drives every
shuffle and sampling decision, batch losses are means over batch members,
Adam updates skip frozen parameter keys entirely (so frozen weights stay
bitwise identical), per-epoch rows of (epoch, loss, dev metric) are
collected, and when a labeled dev corpus is given the checkpoint with the
best dev same-different AP is kept, stopping early after a patience run of
epochs without improvement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import neuralnet as nn
from .corpus import Corpus
from .evaluation import same_different_ap
from .pairing import (
    ContextPairSet,
    PairingError,
    PairSet,
    build_contrastive_batches,
    pseudo_labels_from_pairs,
    symmetrize_pairs,
)

REGIMES = ("mono_unsupervised", "mono_supervised", "multilingual", "adapt")
MODEL_KINDS = ("cae", "siamese", "contrastive")

ADAPT_LEARNING_RATES = {"cae": 1e-4, "siamese": 1e-5, "contrastive": 1e-4}


class StrategyError(Exception):
    pass


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class FreezePolicy:
    frozen_encoder_layers: frozenset = frozenset()
    freeze_projection: bool = False
    reinit_decoder: bool = False


@dataclass
class StrategySpec:
    model_kind: str
    regime: str
    languages: tuple
    target_language: str | None
    config: nn.TrainConfig

    def validate(self):
        if self.model_kind not in MODEL_KINDS:
            raise StrategyError(f"unknown model kind {self.model_kind!r}")
        if self.regime not in REGIMES:
            raise StrategyError(f"unknown regime {self.regime!r}")
        if self.regime == "multilingual" and len(self.languages) < 2:
            raise StrategyError("multilingual training needs at least two languages")


@dataclass
class TrainResult:
    encoder: nn.EncoderModel
    decoder: nn.DecoderModel | None
    log: list  # (epoch, loss, dev_metric) rows
    best_epoch: int | None
    trace: dict = field(default_factory=dict)


def frozen_param_keys(policy: FreezePolicy | None, num_layers: int) -> set:
    """Parameter names excluded from updates under the policy."""
    if policy is None:
        return set()
    keys = set()
    for layer in policy.frozen_encoder_layers:
        if not 0 <= layer < num_layers:
            raise StrategyError(f"freeze policy names absent encoder layer {layer}")
        keys.update({f"enc{layer}_w_in", f"enc{layer}_w_rec", f"enc{layer}_b"})
    if policy.freeze_projection:
        keys.update({"enc_proj_w", "enc_proj_b"})
    return keys


def default_adapt_policy(model_kind: str, num_layers: int) -> FreezePolicy:
    """Adaptation defaults: the encoder-decoder model freezes its whole
    encoder RNN, updates only the projection, and restarts the decoder;
    the pair-discriminative models update everything."""
    if model_kind == "cae":
        return FreezePolicy(
            frozen_encoder_layers=frozenset(range(num_layers)),
            freeze_projection=False,
            reinit_decoder=True,
        )
    return FreezePolicy()


def write_training_log(path, log) -> None:
    from pathlib import Path

    lines = ["epoch\tloss\tdev_metric"]
    for epoch, loss, dev in log:
        lines.append(f"{epoch}\t{loss!r}\t{dev!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def compute_dev_ap(encoder: nn.EncoderModel, dev_corpus: Corpus) -> float:
    """Same-different AP of the encoder's embeddings on a labeled corpus."""
    embeddings = [nn.encode(encoder, seg.features) for seg in dev_corpus.segments]
    labels = [seg.word_label for seg in dev_corpus.segments]
    speakers = [seg.speaker for seg in dev_corpus.segments]
    return same_different_ap(embeddings, labels, speakers, scorer="cosine").ap


def _check_finite(loss, epoch, batch_index):
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch_index}")


def _scaled(grads: dict, factor: float, frozen: set) -> dict:
    return {k: g * factor for k, g in grads.items() if k not in frozen}


def _accumulate(total: dict, grads: dict):
    for key, g in grads.items():
        if key in total:
            total[key] += g
        else:
            total[key] = g.copy()


class _Selector:
    """Best-dev-AP checkpointing with patience-based early stopping."""

    def __init__(self, patience):
        self.patience = patience
        self.best_ap = -np.inf
        self.best_epoch = None
        self.best_params = None
        self.stale = 0

    def update(self, epoch, ap, param_dicts):
        if ap > self.best_ap:
            self.best_ap = ap
            self.best_epoch = epoch
            self.best_params = [nn.clone_params(p) for p in param_dicts]
            self.stale = 0
        else:
            self.stale += 1
        return self.stale > self.patience

    def restore(self, param_dicts):
        if self.best_params is None:
            return
        for target, saved in zip(param_dicts, self.best_params):
            target.clear()
            target.update(saved)


def _train_reconstruction(
    corpus,
    pairs,
    config,
    encoder,
    decoder,
    frozen,
    dev_corpus,
    ae_epochs,
    log,
    trace,
    rng,
    state,
    epoch_offset=0,
):
    """Shared loop for the encoder-decoder models: an optional autoencoder
    stage over single segments, then a stage over (input, target) id pairs.
    Returns the next epoch number."""
    epoch = epoch_offset
    selector = _Selector(config.patience)
    ae_items = [(seg.id, seg.id) for seg in corpus.segments]
    stages = []
    if ae_epochs > 0:
        stages.append(("ae", ae_epochs, ae_items))
    stages.append(("pair", config.epochs, pairs))
    for stage_name, n_epochs, items in stages:
        if not items:
            raise TrainingError(f"no training items for stage {stage_name}")
        for _ in range(n_epochs):
            epoch += 1
            order = rng.permutation(len(items))
            losses = []
            for batch_index, start in enumerate(range(0, len(items), config.batch_size)):
                chunk = [items[i] for i in order[start : start + config.batch_size]]
                total_grads = {}
                batch_loss = 0.0
                for in_id, target_id in chunk:
                    x = corpus.segment(in_id).features
                    target = corpus.segment(target_id).features
                    loss, enc_g, dec_g = nn.reconstruction_loss_and_grads(
                        encoder, decoder, x, target
                    )
                    batch_loss += loss
                    _accumulate(total_grads, enc_g)
                    _accumulate(total_grads, dec_g)
                batch_loss /= len(chunk)
                _check_finite(batch_loss, epoch, batch_index)
                nn.adam_step(
                    {**encoder.params, **decoder.params},
                    _scaled(total_grads, 1.0 / len(chunk), frozen),
                    state,
                    config.learning_rate,
                )
                losses.append(batch_loss)
            dev_ap = compute_dev_ap(encoder, dev_corpus) if dev_corpus is not None else float("nan")
            log.append((epoch, float(np.mean(losses)), dev_ap))
            if stage_name == "pair" and dev_corpus is not None:
                if selector.update(epoch, dev_ap, [encoder.params, decoder.params]):
                    trace["early_stop_epoch"] = epoch
                    break
    selector.restore([encoder.params, decoder.params])
    trace.setdefault("stages", [(name, n) for name, n, _ in stages])
    return epoch, selector.best_epoch


def _train_cae(corpus, pair_set, config, encoder, decoder, frozen, dev_corpus, ae_epochs):
    """Encoder-decoder training: AE stage then reconstruction across pairs."""
    log, trace = [], {}
    rng = np.random.default_rng(config.seed)
    state = nn.AdamState()
    if config.epochs == 0:
        return TrainResult(encoder, decoder, log, None, {"stages": []})
    pairs = symmetrize_pairs(pair_set).pairs
    _, best_epoch = _train_reconstruction(
        corpus, pairs, config, encoder, decoder, frozen, dev_corpus, ae_epochs, log, trace, rng, state
    )
    return TrainResult(encoder, decoder, log, best_epoch, trace)


def _encode_members(encoder, corpus, ids):
    embeddings = []
    caches = []
    for seg_id in ids:
        z, cache = nn.encode_with_cache(encoder, corpus.segment(seg_id).features)
        embeddings.append(z)
        caches.append(cache)
    return np.asarray(embeddings), caches


def _backprop_members(encoder, caches, d_z):
    total = {}
    for cache, dz in zip(caches, d_z):
        _accumulate(total, nn.encoder_backward(encoder, cache, dz))
    return total


def _train_siamese(corpus, pair_set, config, labels_by_id, encoder, frozen, dev_corpus):
    """Triplet training with batch-hard mining over pair-derived batches."""
    log, trace = [], {}
    rng = np.random.default_rng(config.seed)
    state = nn.AdamState()
    if config.epochs == 0:
        return TrainResult(encoder, None, log, None, trace)
    seen = set()
    canonical = []
    for a, b in pair_set.pairs:
        key = (a, b) if a <= b else (b, a)
        if key not in seen:
            seen.add(key)
            canonical.append(key)
    pairs_per_batch = max(2, config.batch_size // 2)
    selector = _Selector(config.patience)
    epoch = 0
    for _ in range(config.epochs):
        epoch += 1
        order = rng.permutation(len(canonical))
        losses = []
        skipped = 0
        for batch_index, start in enumerate(range(0, len(canonical), pairs_per_batch)):
            chunk = [canonical[i] for i in order[start : start + pairs_per_batch]]
            if len(chunk) < 2:
                continue
            member_ids = []
            for a, b in chunk:
                for seg_id in (a, b):
                    if seg_id not in member_ids:
                        member_ids.append(seg_id)
            labels = [labels_by_id[seg_id] for seg_id in member_ids]
            if len(set(labels)) < 2:
                skipped += 1
                continue
            z, caches = _encode_members(encoder, corpus, member_ids)
            loss, d_z = nn.loss_triplet_hard_with_grad(z, labels, config.margin)
            _check_finite(loss, epoch, batch_index)
            grads = _backprop_members(encoder, caches, d_z)
            nn.adam_step(encoder.params, _scaled(grads, 1.0, frozen), state, config.learning_rate)
            losses.append(loss)
        if not losses:
            raise TrainingError("every batch lacked a usable anchor; pairs too homogeneous")
        if skipped:
            trace["single_label_batches_skipped"] = trace.get("single_label_batches_skipped", 0) + skipped
        dev_ap = compute_dev_ap(encoder, dev_corpus) if dev_corpus is not None else float("nan")
        log.append((epoch, float(np.mean(losses)), dev_ap))
        if dev_corpus is not None and selector.update(epoch, dev_ap, [encoder.params]):
            trace["early_stop_epoch"] = epoch
            break
    selector.restore([encoder.params])
    return TrainResult(encoder, None, log, selector.best_epoch, trace)


def _train_contrastive(corpus, pair_set, config, encoder, frozen, dev_corpus):
    """Batch contrastive training; the loss sum is scaled to a per-anchor
    mean so the learning rate is batch-size independent."""
    log, trace = [], {}
    rng = np.random.default_rng(config.seed)
    state = nn.AdamState()
    if config.epochs == 0:
        return TrainResult(encoder, None, log, None, trace)
    # a batch needs member-disjoint pairs, so it can never hold more pairs
    # than half the distinct segments the pair set touches; the pair graph
    # can be tighter still, so shrink until a full batch is formable
    members = {seg_id for pair in pair_set.pairs for seg_id in pair}
    pairs_per_batch = max(2, min(config.batch_size // 2, len(members) // 2))
    selector = _Selector(config.patience)
    epoch = 0
    for _ in range(config.epochs):
        epoch += 1
        batch_seed = int(rng.integers(2**31))
        size = pairs_per_batch
        while True:
            try:
                batches = build_contrastive_batches(pair_set, size, seed=batch_seed)
                break
            except PairingError:
                if size == 2:
                    raise
                size = max(2, size // 2)
        losses = []
        for batch_index, batch in enumerate(batches):
            member_ids = [seg_id for pair in batch.positive_pairs for seg_id in pair]
            z, caches = _encode_members(encoder, corpus, member_ids)
            loss_sum, d_z = nn.loss_contrastive_with_grad(z, config.temperature)
            loss = loss_sum / len(member_ids)
            _check_finite(loss, epoch, batch_index)
            grads = _backprop_members(encoder, caches, d_z / len(member_ids))
            nn.adam_step(encoder.params, _scaled(grads, 1.0, frozen), state, config.learning_rate)
            losses.append(loss)
        dev_ap = compute_dev_ap(encoder, dev_corpus) if dev_corpus is not None else float("nan")
        log.append((epoch, float(np.mean(losses)), dev_ap))
        if dev_corpus is not None and selector.update(epoch, dev_ap, [encoder.params]):
            trace["early_stop_epoch"] = epoch
            break
    selector.restore([encoder.params])
    return TrainResult(encoder, None, log, selector.best_epoch, trace)


def _pool_corpora(corpora) -> Corpus:
    if isinstance(corpora, Corpus):
        return corpora
    segments = []
    utterances = {}
    for key in sorted(corpora):
        part = corpora[key]
        segments.extend(part.segments)
        utterances.update(part.utterances)
    return Corpus(segments=segments, utterances=utterances, split="train")


def train_awe(spec: StrategySpec, corpora, pairs: PairSet, dev_corpus: Corpus | None = None) -> TrainResult:
    """Train one AWE model under a regime.

    corpora is a single Corpus or a dict of per-language corpora (pooled for
    multilingual training). Pair provenance must match the regime: discovered
    pairs for mono_unsupervised (word labels are never consulted on that
    path), ground-truth pairs for the supervised regimes.
    """
    spec.validate()
    if spec.regime == "adapt":
        raise StrategyError("the adapt regime runs through adapt_model with a source model")
    if not pairs.pairs:
        raise StrategyError("empty pair set")
    if spec.regime == "mono_unsupervised" and pairs.source != "discovered":
        raise StrategyError("mono_unsupervised trains on discovered pairs only")
    if spec.regime in ("mono_supervised", "multilingual") and pairs.source != "ground_truth":
        raise StrategyError(f"{spec.regime} trains on ground-truth pairs")
    corpus = _pool_corpora(corpora)
    config = spec.config
    frozen = frozen_param_keys(config.freeze, config.rnn_layers)
    rng = np.random.default_rng(config.seed)
    encoder = nn.build_encoder(
        corpus.feature_dim(), config.hidden_size, config.embedding_size, config.rnn_layers, rng
    )
    if spec.model_kind == "cae":
        decoder = nn.build_decoder(
            corpus.feature_dim(), config.hidden_size, config.embedding_size, config.rnn_layers, rng
        )
        return _train_cae(
            corpus, pairs, config, encoder, decoder, frozen, dev_corpus, config.ae_pretrain_epochs
        )
    if spec.model_kind == "siamese":
        if pairs.source == "ground_truth":
            labels_by_id = {seg.id: seg.word_label for seg in corpus.segments}
        else:
            labels_by_id = pseudo_labels_from_pairs(pairs)
        return _train_siamese(corpus, pairs, config, labels_by_id, encoder, frozen, dev_corpus)
    return _train_contrastive(corpus, pairs, config, encoder, frozen, dev_corpus)


def adapt_model(
    model_kind: str,
    source_encoder: nn.EncoderModel,
    source_decoder: nn.DecoderModel | None,
    target_pairs: PairSet,
    policy: FreezePolicy,
    config: nn.TrainConfig,
    target_corpus: Corpus,
    dev_corpus: Corpus | None = None,
) -> TrainResult:
    """Fine-tune a source model on target-language pairs under a freeze
    policy. Frozen parameters are bitwise unchanged; the decoder can be
    re-initialized (fresh random weights, config seed)."""
    if model_kind not in MODEL_KINDS:
        raise StrategyError(f"unknown model kind {model_kind!r}")
    if not target_pairs.pairs:
        raise StrategyError("empty target pair set")
    frozen = frozen_param_keys(policy, source_encoder.num_layers)
    encoder = nn.EncoderModel(
        source_encoder.input_dim,
        source_encoder.hidden_size,
        source_encoder.embedding_size,
        source_encoder.num_layers,
        nn.clone_params(source_encoder.params),
    )
    if model_kind == "cae":
        if policy.reinit_decoder or source_decoder is None:
            decoder = nn.build_decoder(
                encoder.input_dim,
                encoder.hidden_size,
                encoder.embedding_size,
                encoder.num_layers,
                np.random.default_rng(config.seed),
            )
        else:
            decoder = nn.DecoderModel(
                source_decoder.output_dim,
                source_decoder.hidden_size,
                source_decoder.embedding_size,
                source_decoder.num_layers,
                nn.clone_params(source_decoder.params),
            )
        # adaptation resumes from a trained model, so no autoencoder stage
        return _train_cae(target_corpus, target_pairs, config, encoder, decoder, frozen, dev_corpus, 0)
    if model_kind == "siamese":
        labels_by_id = (
            {seg.id: seg.word_label for seg in target_corpus.segments}
            if target_pairs.source == "ground_truth"
            else pseudo_labels_from_pairs(target_pairs)
        )
        return _train_siamese(target_corpus, target_pairs, config, labels_by_id, encoder, frozen, dev_corpus)
    return _train_contrastive(target_corpus, target_pairs, config, encoder, frozen, dev_corpus)


# ---------------------------------------------------------------------------
# semantic trainers


def train_speech2vec(corpus: Corpus, context_pairs: ContextPairSet, config: nn.TrainConfig) -> TrainResult:
    """Encoder-decoder over context pairs: encode the target word, decode
    its context word. Same machinery as the reconstruction trainer."""
    if not context_pairs.pairs:
        raise StrategyError("empty context pair set")
    rng = np.random.default_rng(config.seed)
    encoder = nn.build_encoder(
        corpus.feature_dim(), config.hidden_size, config.embedding_size, config.rnn_layers, rng
    )
    decoder = nn.build_decoder(
        corpus.feature_dim(), config.hidden_size, config.embedding_size, config.rnn_layers, rng
    )
    pair_set = PairSet(pairs=list(context_pairs.pairs), source="ground_truth")
    return _train_cae(
        corpus, pair_set, config, encoder, decoder, set(), None, config.ae_pretrain_epochs
    )


def _context_neighbors(context_pairs: ContextPairSet) -> dict:
    """Each segment's in-window neighborhood (itself included), recovered
    from the pair list so negative sampling can exclude it."""
    neighbors = {}
    for a, b in context_pairs.pairs:
        neighbors.setdefault(a, {a}).add(b)
        neighbors.setdefault(b, {b}).add(a)
    return neighbors


def _sample_negatives(rng, pool, excluded, count):
    allowed = [seg_id for seg_id in pool if seg_id not in excluded]
    if not allowed:
        raise StrategyError("no segment outside the context window to sample")
    if len(allowed) >= count:
        picks = rng.choice(len(allowed), size=count, replace=False)
    else:
        picks = rng.integers(0, len(allowed), size=count)
    return [allowed[int(i)] for i in picks]


def train_semantic_contrastive(
    corpus: Corpus,
    context_pairs: ContextPairSet,
    config: nn.TrainConfig,
    init_encoder: nn.EncoderModel | None = None,
) -> TrainResult:
    """Contrastive training where positives are context words and negatives
    are sampled corpus-wide outside the anchor's context window.

    Starting from init_encoder freezes the first two recurrent layers
    (transfer setting); a fresh encoder trains all layers.
    """
    if not context_pairs.pairs:
        raise StrategyError("empty context pair set")
    if config.negatives_per_positive < 1:
        raise StrategyError("negatives_per_positive must be >= 1")
    rng = np.random.default_rng(config.seed)
    if init_encoder is not None:
        encoder = nn.EncoderModel(
            init_encoder.input_dim,
            init_encoder.hidden_size,
            init_encoder.embedding_size,
            init_encoder.num_layers,
            nn.clone_params(init_encoder.params),
        )
        frozen_layers = frozenset(range(min(2, encoder.num_layers)))
        frozen = frozen_param_keys(FreezePolicy(frozen_encoder_layers=frozen_layers), encoder.num_layers)
    else:
        encoder = nn.build_encoder(
            corpus.feature_dim(), config.hidden_size, config.embedding_size, config.rnn_layers, rng
        )
        frozen = set()
    neighbors = _context_neighbors(context_pairs)
    pool = [seg.id for seg in corpus.segments]
    state = nn.AdamState()
    log = []
    trace = {"batches": [], "frozen_keys": sorted(frozen)}
    pairs = list(context_pairs.pairs)
    epoch = 0
    for _ in range(config.epochs):
        epoch += 1
        order = rng.permutation(len(pairs))
        losses = []
        for batch_index, start in enumerate(range(0, len(pairs), config.batch_size)):
            chunk = [pairs[i] for i in order[start : start + config.batch_size]]
            jobs = []
            for anchor, positive in chunk:
                negatives = _sample_negatives(
                    rng, pool, neighbors.get(anchor, {anchor}), config.negatives_per_positive
                )
                jobs.append((anchor, positive, negatives))
            unique_ids = []
            for anchor, positive, negatives in jobs:
                for seg_id in [anchor, positive] + negatives:
                    if seg_id not in unique_ids:
                        unique_ids.append(seg_id)
            z, caches = _encode_members(encoder, corpus, unique_ids)
            index_of = {seg_id: i for i, seg_id in enumerate(unique_ids)}
            d_z = np.zeros_like(z)
            batch_loss = 0.0
            for anchor, positive, negatives in jobs:
                cand_ids = [positive] + negatives
                loss, d_anchor, d_cands = nn.nce_softmax_loss(
                    z[index_of[anchor]], z[[index_of[c] for c in cand_ids]], config.temperature
                )
                batch_loss += loss
                d_z[index_of[anchor]] += d_anchor
                for cand_id, d_c in zip(cand_ids, d_cands):
                    d_z[index_of[cand_id]] += d_c
            batch_loss /= len(jobs)
            _check_finite(batch_loss, epoch, batch_index)
            grads = _backprop_members(encoder, caches, d_z / len(jobs))
            nn.adam_step(encoder.params, _scaled(grads, 1.0, frozen), state, config.learning_rate)
            losses.append(batch_loss)
            trace["batches"].append(
                {"pairs": len(jobs), "negatives_per_positive": config.negatives_per_positive}
            )
        log.append((epoch, float(np.mean(losses)), float("nan")))
    return TrainResult(encoder, None, log, None, trace)


def train_projection(
    phonetic_embeddings: dict,
    context_pairs: ContextPairSet,
    net: nn.ProjectionNet,
    config: nn.TrainConfig,
) -> tuple:
    """Train the projection head over fixed phonetic embeddings with the
    same context-positive / sampled-negative loss. Returns (net, log)."""
    if not context_pairs.pairs:
        raise StrategyError("empty context pair set")
    sample = next(iter(phonetic_embeddings.values()))
    if np.asarray(sample).shape != (net.input_dim,):
        raise StrategyError(
            f"projection expects {net.input_dim}-dim embeddings, got {np.asarray(sample).shape}"
        )
    for a, b in context_pairs.pairs:
        if a not in phonetic_embeddings or b not in phonetic_embeddings:
            raise StrategyError(f"context pair ({a!r}, {b!r}) missing an embedding")
    neighbors = _context_neighbors(context_pairs)
    pool = sorted(phonetic_embeddings)
    rng = np.random.default_rng(config.seed)
    state = nn.AdamState()
    log = []
    pairs = list(context_pairs.pairs)
    epoch = 0
    for _ in range(config.epochs):
        epoch += 1
        order = rng.permutation(len(pairs))
        losses = []
        for batch_index, start in enumerate(range(0, len(pairs), config.batch_size)):
            chunk = [pairs[i] for i in order[start : start + config.batch_size]]
            jobs = []
            for anchor, positive in chunk:
                negatives = _sample_negatives(
                    rng, pool, neighbors.get(anchor, {anchor}), config.negatives_per_positive
                )
                jobs.append((anchor, positive, negatives))
            unique_ids = []
            for anchor, positive, negatives in jobs:
                for seg_id in [anchor, positive] + negatives:
                    if seg_id not in unique_ids:
                        unique_ids.append(seg_id)
            outs = {}
            proj_caches = {}
            for seg_id in unique_ids:
                out, cache = nn.projection_with_cache(net, phonetic_embeddings[seg_id])
                outs[seg_id] = out
                proj_caches[seg_id] = cache
            d_out = {seg_id: np.zeros(net.output_dim) for seg_id in unique_ids}
            batch_loss = 0.0
            for anchor, positive, negatives in jobs:
                cand_ids = [positive] + negatives
                loss, d_anchor, d_cands = nn.nce_softmax_loss(
                    outs[anchor], np.asarray([outs[c] for c in cand_ids]), config.temperature
                )
                batch_loss += loss
                d_out[anchor] += d_anchor
                for cand_id, d_c in zip(cand_ids, d_cands):
                    d_out[cand_id] += d_c
            batch_loss /= len(jobs)
            _check_finite(batch_loss, epoch, batch_index)
            grads = {}
            for seg_id in unique_ids:
                g, _ = nn.projection_backward(net, proj_caches[seg_id], d_out[seg_id] / len(jobs))
                _accumulate(grads, g)
            nn.adam_step(net.params, grads, state, config.learning_rate)
            losses.append(batch_loss)
        log.append((epoch, float(np.mean(losses)), float("nan")))
    return net, log
