"""Hand-rolled recurrent encoder/decoder, the four embedding losses with
analytic gradients, Adam, finite-difference gradient checking, and the
checkpoint format.

Everything is plain numpy in float64. Models are dataclasses wrapping a flat
``params`` dict of named arrays; gradients are dicts with the same keys, so
the optimizer and freezing logic never need to know the architecture.

The recurrent cell is ``h_t = tanh(W_in x_t + W_rec h_{t-1} + b)`` with zero
initial state. The encoder projects the final hidden state of the top layer
to the embedding. The decoder receives the embedding as its input at every
step (no teacher forcing) and projects each top hidden state to a frame.

Checkpoint format: magic ``AWEM``, format version u32, four u32 dims
(layers, hidden, embedding, feature dim), then named blocks of
(name length u32, UTF-8 name, element count u64, float64 little-endian
values, row-major). Blocks carry no shape; loaders reconstruct shapes from
the dims and the key name.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"AWEM"
CHECKPOINT_VERSION = 1


class ModelError(Exception):
    """Bad model input, bad loss configuration, or a broken checkpoint."""


Params = dict  # str -> np.ndarray


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _init_matrix(rng, rows, cols):
    bound = 1.0 / np.sqrt(cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class EncoderModel:
    input_dim: int
    hidden_size: int
    embedding_size: int
    num_layers: int
    params: Params


@dataclass
class DecoderModel:
    output_dim: int
    hidden_size: int
    embedding_size: int
    num_layers: int
    params: Params


@dataclass
class ProjectionNet:
    """Two affine layers with an optional elementwise nonlinearity between."""

    input_dim: int
    hidden_dim: int
    output_dim: int
    activation: str  # "relu" or "linear"
    params: Params


@dataclass
class TrainConfig:
    """Knobs shared by all trainers. Defaults follow the reference setup for
    pair-trained models; contrastive runs usually override batch_size to 600.
    """

    learning_rate: float = 0.001
    batch_size: int = 300
    margin: float = 0.25
    temperature: float = 0.1
    epochs: int = 5
    seed: int = 0
    negatives_per_positive: int = 20
    freeze: object | None = None
    ae_pretrain_epochs: int = 10
    patience: int = 5
    hidden_size: int = 400
    embedding_size: int = 130
    rnn_layers: int = 3

    def __post_init__(self):
        if self.temperature <= 0:
            raise ModelError("temperature must be > 0")
        if self.margin < 0:
            raise ModelError("margin must be >= 0")
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be > 0")


@dataclass
class AdamState:
    """Per-parameter moment accumulators and step counts."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def build_encoder(input_dim, hidden_size=400, embedding_size=130, num_layers=3, rng=0):
    """Seeded encoder with uniform +-1/sqrt(fan_in) weights and zero biases.
    Parameter creation order is fixed so equal seeds give equal models."""
    if num_layers < 1 or embedding_size < 1:
        raise ModelError("need num_layers >= 1 and embedding_size >= 1")
    rng = _as_rng(rng)
    params = {}
    for layer in range(num_layers):
        in_dim = input_dim if layer == 0 else hidden_size
        params[f"enc{layer}_w_in"] = _init_matrix(rng, hidden_size, in_dim)
        params[f"enc{layer}_w_rec"] = _init_matrix(rng, hidden_size, hidden_size)
        params[f"enc{layer}_b"] = np.zeros(hidden_size)
    params["enc_proj_w"] = _init_matrix(rng, embedding_size, hidden_size)
    params["enc_proj_b"] = np.zeros(embedding_size)
    return EncoderModel(input_dim, hidden_size, embedding_size, num_layers, params)


def build_decoder(output_dim, hidden_size=400, embedding_size=130, num_layers=3, rng=0):
    if num_layers < 1 or embedding_size < 1:
        raise ModelError("need num_layers >= 1 and embedding_size >= 1")
    rng = _as_rng(rng)
    params = {}
    for layer in range(num_layers):
        in_dim = embedding_size if layer == 0 else hidden_size
        params[f"dec{layer}_w_in"] = _init_matrix(rng, hidden_size, in_dim)
        params[f"dec{layer}_w_rec"] = _init_matrix(rng, hidden_size, hidden_size)
        params[f"dec{layer}_b"] = np.zeros(hidden_size)
    params["dec_out_w"] = _init_matrix(rng, output_dim, hidden_size)
    params["dec_out_b"] = np.zeros(output_dim)
    return DecoderModel(output_dim, hidden_size, embedding_size, num_layers, params)


def build_projection_net(input_dim=100, hidden_dim=1024, output_dim=100, activation="relu", rng=0):
    if activation not in ("relu", "linear"):
        raise ModelError(f"unknown activation {activation!r}")
    rng = _as_rng(rng)
    params = {
        "p_w1": _init_matrix(rng, hidden_dim, input_dim),
        "p_b1": np.zeros(hidden_dim),
        "p_w2": _init_matrix(rng, output_dim, hidden_dim),
        "p_b2": np.zeros(output_dim),
    }
    return ProjectionNet(input_dim, hidden_dim, output_dim, activation, params)


def clone_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


# ---------------------------------------------------------------------------
# recurrent stack forward/backward


def _stack_forward(params, prefix, num_layers, seq):
    """Run the layer stack over seq (T, M0). Returns (inputs, hiddens): the
    input sequence and tanh hidden states of each layer, for backprop."""
    inputs, hiddens = [], []
    layer_in = seq
    for layer in range(num_layers):
        w_in = params[f"{prefix}{layer}_w_in"]
        w_rec = params[f"{prefix}{layer}_w_rec"]
        b = params[f"{prefix}{layer}_b"]
        pre = layer_in @ w_in.T + b
        hs = np.empty((layer_in.shape[0], w_rec.shape[0]))
        h = np.zeros(w_rec.shape[0])
        for t in range(layer_in.shape[0]):
            h = np.tanh(pre[t] + w_rec @ h)
            hs[t] = h
        inputs.append(layer_in)
        hiddens.append(hs)
        layer_in = hs
    return inputs, hiddens


def _stack_backward(params, prefix, num_layers, inputs, hiddens, d_top):
    """Backprop through the stack. d_top is the gradient arriving on the top
    layer's hidden sequence (T, N). Returns (grads, d_seq) where d_seq is the
    gradient with respect to the layer-0 input sequence."""
    grads = {}
    d_ext = d_top
    for layer in reversed(range(num_layers)):
        w_in = params[f"{prefix}{layer}_w_in"]
        w_rec = params[f"{prefix}{layer}_w_rec"]
        hs = hiddens[layer]
        layer_in = inputs[layer]
        steps = hs.shape[0]
        g_w_in = np.zeros_like(w_in)
        g_w_rec = np.zeros_like(w_rec)
        g_b = np.zeros(w_rec.shape[0])
        d_inp = np.zeros_like(layer_in)
        d_carry = np.zeros(w_rec.shape[0])
        for t in reversed(range(steps)):
            d_h = d_ext[t] + d_carry
            d_pre = d_h * (1.0 - hs[t] ** 2)
            prev = hs[t - 1] if t > 0 else np.zeros(w_rec.shape[0])
            g_w_in += np.outer(d_pre, layer_in[t])
            g_w_rec += np.outer(d_pre, prev)
            g_b += d_pre
            d_inp[t] = w_in.T @ d_pre
            d_carry = w_rec.T @ d_pre
        grads[f"{prefix}{layer}_w_in"] = g_w_in
        grads[f"{prefix}{layer}_w_rec"] = g_w_rec
        grads[f"{prefix}{layer}_b"] = g_b
        d_ext = d_inp
    return grads, d_ext


def encode_with_cache(model: EncoderModel, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ModelError(
            f"encoder expects (T, {model.input_dim}) input, got {x.shape}"
        )
    if x.shape[0] == 0:
        raise ModelError("cannot encode an empty sequence")
    inputs, hiddens = _stack_forward(model.params, "enc", model.num_layers, x)
    h_last = hiddens[-1][-1]
    z = model.params["enc_proj_w"] @ h_last + model.params["enc_proj_b"]
    return z, (inputs, hiddens)


def encode(model: EncoderModel, x):
    """Embed one segment: final top hidden state through the projection."""
    z, _ = encode_with_cache(model, x)
    return z


def encoder_backward(model: EncoderModel, cache, dz):
    """Gradients of a scalar loss given dz = d loss / d embedding."""
    inputs, hiddens = cache
    h_last = hiddens[-1][-1]
    grads = {
        "enc_proj_w": np.outer(dz, h_last),
        "enc_proj_b": np.asarray(dz, dtype=np.float64).copy(),
    }
    d_top = np.zeros_like(hiddens[-1])
    d_top[-1] = model.params["enc_proj_w"].T @ dz
    stack_grads, _ = _stack_backward(model.params, "enc", model.num_layers, inputs, hiddens, d_top)
    grads.update(stack_grads)
    return grads


def decode_with_cache(model: DecoderModel, z, t_out):
    z = np.asarray(z, dtype=np.float64)
    if t_out < 1:
        raise ModelError("t_out must be >= 1")
    if z.shape != (model.embedding_size,):
        raise ModelError(f"decoder expects embedding of size {model.embedding_size}, got {z.shape}")
    seq = np.tile(z, (t_out, 1))
    inputs, hiddens = _stack_forward(model.params, "dec", model.num_layers, seq)
    y = hiddens[-1] @ model.params["dec_out_w"].T + model.params["dec_out_b"]
    return y, (inputs, hiddens)


def decode(model: DecoderModel, z, t_out):
    """Unroll the decoder for t_out steps conditioned on z at every step."""
    y, _ = decode_with_cache(model, z, t_out)
    return y


def decoder_backward(model: DecoderModel, cache, d_y):
    """Gradients given d_y = d loss / d output frames. Also returns dz."""
    inputs, hiddens = cache
    grads = {
        "dec_out_w": d_y.T @ hiddens[-1],
        "dec_out_b": d_y.sum(axis=0),
    }
    d_top = d_y @ model.params["dec_out_w"]
    stack_grads, d_seq = _stack_backward(model.params, "dec", model.num_layers, inputs, hiddens, d_top)
    grads.update(stack_grads)
    dz = d_seq.sum(axis=0)
    return grads, dz


# ---------------------------------------------------------------------------
# losses


def loss_cae(encoder: EncoderModel, decoder: DecoderModel, x, x_target):
    """Sum of squared frame errors reconstructing x_target from encode(x)."""
    x_target = np.asarray(x_target, dtype=np.float64)
    if x_target.ndim != 2 or x_target.shape[1] != decoder.output_dim:
        raise ModelError(f"target must be (T', {decoder.output_dim}), got {x_target.shape}")
    z = encode(encoder, x)
    y = decode(decoder, z, x_target.shape[0])
    diff = y - x_target
    return float(np.sum(diff * diff))


def loss_ae(encoder: EncoderModel, decoder: DecoderModel, x):
    """Autoencoder case: the reconstruction target is the input itself."""
    return loss_cae(encoder, decoder, x, x)


def reconstruction_loss_and_grads(encoder, decoder, x, x_target):
    """Forward+backward for one (input, target) pair.

    Returns:
        (loss, encoder grads, decoder grads).
    """
    x_target = np.asarray(x_target, dtype=np.float64)
    if x_target.ndim != 2 or x_target.shape[1] != decoder.output_dim:
        raise ModelError(f"target must be (T', {decoder.output_dim}), got {x_target.shape}")
    z, enc_cache = encode_with_cache(encoder, x)
    y, dec_cache = decode_with_cache(decoder, z, x_target.shape[0])
    diff = y - x_target
    loss = float(np.sum(diff * diff))
    dec_grads, dz = decoder_backward(decoder, dec_cache, 2.0 * diff)
    enc_grads = encoder_backward(encoder, enc_cache, dz)
    return loss, enc_grads, dec_grads


def cosine_distance(u, v):
    """1 - cos(u, v), in [0, 2]. Zero-norm inputs are rejected."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ModelError("cosine distance undefined for zero-norm input")
    return float(1.0 - (u @ v) / (nu * nv))


def _normalize_rows(z):
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ModelError("zero-norm embedding in batch")
    return z / norms[:, None], norms


def _denormalize_row_grads(z_hat, norms, d_hat):
    """Backprop through row normalization: z_hat = z / ||z||."""
    inner = np.sum(d_hat * z_hat, axis=1, keepdims=True)
    return (d_hat - inner * z_hat) / norms[:, None]


def _mined_triplets(embeddings, labels):
    """Hardest positive (max cosine distance, same label) and hardest
    negative (min cosine distance, other label) per anchor. Returns index
    triples for anchors that have both."""
    z_hat, _ = _normalize_rows(embeddings)
    dist = 1.0 - z_hat @ z_hat.T
    labels = np.asarray(labels)
    n = len(labels)
    same = labels[:, None] == labels[None, :]
    triples = []
    for a in range(n):
        pos_mask = same[a].copy()
        pos_mask[a] = False
        neg_mask = ~same[a]
        if not pos_mask.any() or not neg_mask.any():
            continue
        pos_d = np.where(pos_mask, dist[a], -np.inf)
        neg_d = np.where(neg_mask, dist[a], np.inf)
        triples.append((a, int(np.argmax(pos_d)), int(np.argmin(neg_d))))
    return triples, dist


def loss_triplet_hard(embeddings, labels, margin=0.25):
    """Mean hinge over anchors with batch-hard mining."""
    triples, dist = _mined_triplets(embeddings, labels)
    if not triples:
        raise ModelError("no anchor has both a positive and a negative in batch")
    terms = [max(0.0, margin + dist[a, p] - dist[a, n]) for a, p, n in triples]
    return float(np.mean(terms))


def loss_triplet_hard_with_grad(embeddings, labels, margin=0.25):
    z = np.asarray(embeddings, dtype=np.float64)
    triples, dist = _mined_triplets(z, labels)
    if not triples:
        raise ModelError("no anchor has both a positive and a negative in batch")
    z_hat, norms = _normalize_rows(z)
    d_hat = np.zeros_like(z_hat)
    terms = []
    scale = 1.0 / len(triples)
    for a, p, n in triples:
        term = margin + dist[a, p] - dist[a, n]
        terms.append(max(0.0, term))
        if term <= 0.0:
            continue
        # d(a,p) = 1 - z_hat[a].z_hat[p]: gradient -z_hat[p] on row a etc.
        d_hat[a] += scale * (z_hat[n] - z_hat[p])
        d_hat[p] += -scale * z_hat[a]
        d_hat[n] += scale * z_hat[a]
    loss = float(np.mean(terms))
    return loss, _denormalize_row_grads(z_hat, norms, d_hat)


def _contrastive_logits(embeddings, temperature):
    if temperature <= 0:
        raise ModelError("temperature must be > 0")
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 4 or z.shape[0] % 2 != 0:
        raise ModelError("contrastive batch must hold 2N embeddings with N >= 2")
    z_hat, norms = _normalize_rows(z)
    logits = (z_hat @ z_hat.T) / temperature
    np.fill_diagonal(logits, -np.inf)
    return z_hat, norms, logits


def loss_contrastive(embeddings, temperature=0.1):
    """Softmax contrastive loss over an interleaved pair batch.

    Row 2i and row 2i+1 are a positive pair; every row acts as an anchor
    whose denominator spans all other rows. Returns the sum over the 2N
    anchor roles (callers wanting a mean divide by the batch size).
    """
    _, _, logits = _contrastive_logits(embeddings, temperature)
    partners = np.arange(logits.shape[0]) ^ 1
    row_max = logits.max(axis=1)
    lse = np.log(np.exp(logits - row_max[:, None]).sum(axis=1)) + row_max
    per_anchor = lse - logits[np.arange(logits.shape[0]), partners]
    return float(per_anchor.sum())


def loss_contrastive_with_grad(embeddings, temperature=0.1):
    z_hat, norms, logits = _contrastive_logits(embeddings, temperature)
    n_rows = logits.shape[0]
    partners = np.arange(n_rows) ^ 1
    row_max = logits.max(axis=1)
    shifted = np.exp(logits - row_max[:, None])
    denom = shifted.sum(axis=1)
    lse = np.log(denom) + row_max
    loss = float((lse - logits[np.arange(n_rows), partners]).sum())
    probs = shifted / denom[:, None]  # zero on the diagonal via exp(-inf)
    g = probs.copy()
    g[np.arange(n_rows), partners] -= 1.0
    g /= temperature
    d_hat = (g + g.T) @ z_hat
    return loss, _denormalize_row_grads(z_hat, norms, d_hat)


def nce_softmax_loss(anchor, candidates, temperature=0.1):
    """Softmax loss of an anchor against candidates, candidates[0] positive.

    Used by the semantic contrastive trainer where negatives are sampled
    rather than taken from the batch. Returns (loss, d_anchor, d_candidates).
    """
    if temperature <= 0:
        raise ModelError("temperature must be > 0")
    cands = np.asarray(candidates, dtype=np.float64)
    if cands.ndim != 2 or cands.shape[0] < 2:
        raise ModelError("need the positive plus at least one negative")
    a = np.asarray(anchor, dtype=np.float64)
    na = np.linalg.norm(a)
    if na == 0.0:
        raise ModelError("zero-norm anchor")
    a_hat = a / na
    c_hat, c_norms = _normalize_rows(cands)
    logits = (c_hat @ a_hat) / temperature
    m = logits.max()
    shifted = np.exp(logits - m)
    denom = shifted.sum()
    loss = float(np.log(denom) + m - logits[0])
    g = shifted / denom
    g[0] -= 1.0
    g /= temperature
    d_a_hat = c_hat.T @ g
    d_c_hat = np.outer(g, a_hat)
    d_anchor = (d_a_hat - (d_a_hat @ a_hat) * a_hat) / na
    d_cands = _denormalize_row_grads(c_hat, c_norms, d_c_hat)
    return loss, d_anchor, d_cands


def projection_with_cache(net: ProjectionNet, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ModelError(f"projection expects a {net.input_dim}-vector, got {x.shape}")
    pre = net.params["p_w1"] @ x + net.params["p_b1"]
    hidden = np.maximum(pre, 0.0) if net.activation == "relu" else pre
    out = net.params["p_w2"] @ hidden + net.params["p_b2"]
    return out, (x, pre, hidden)


def projection_apply(net: ProjectionNet, x):
    """Map one embedding through the two affine layers."""
    out, _ = projection_with_cache(net, x)
    return out


def projection_backward(net: ProjectionNet, cache, d_out):
    """Gradients for one projected vector. Returns (grads, d_input)."""
    x, pre, hidden = cache
    grads = {
        "p_w2": np.outer(d_out, hidden),
        "p_b2": np.asarray(d_out, dtype=np.float64).copy(),
    }
    d_hidden = net.params["p_w2"].T @ d_out
    d_pre = d_hidden * (pre > 0.0) if net.activation == "relu" else d_hidden
    grads["p_w1"] = np.outer(d_pre, x)
    grads["p_b1"] = d_pre
    d_input = net.params["p_w1"].T @ d_pre
    return grads, d_input


# ---------------------------------------------------------------------------
# optimization and verification


def adam_step(params: Params, grads: Params, state: AdamState, lr):
    """One Adam update, in place, on exactly the keys present in grads.

    Keys absent from grads are untouched, which is how freezing works.
    Moment buffers and per-key step counts are created on first use.
    Iteration order is sorted so updates are bitwise reproducible.
    """
    for key in sorted(grads):
        g = grads[key]
        if params[key].shape != g.shape:
            raise ModelError(f"gradient shape mismatch for {key!r}")
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(params[key])
            state.m[key] = m
            state.v[key] = np.zeros_like(params[key])
            state.t[key] = 0
        v = state.v[key]
        state.t[key] += 1
        t = state.t[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def grad_check(loss_fn, params: Params, seed=0, step=1e-5, sample_size=200):
    """Compare analytic gradients with central finite differences.

    Args:
        loss_fn: callable params -> (loss, grads dict).
        params: float64 parameter dict; perturbed in place and restored.
        seed: sample seed for choosing coordinates.
        step: finite-difference half-step.
        sample_size: number of coordinates to probe (all, if fewer exist).

    Returns:
        Max over sampled coordinates of |analytic - numeric| /
        max(1e-8, |analytic| + |numeric|).
    """
    loss0, grads = loss_fn(params)
    if not np.isfinite(loss0):
        raise ModelError("loss is not finite at the given parameters")
    coords = []
    for key in sorted(grads):
        for flat_index in range(params[key].size):
            coords.append((key, flat_index))
    rng = np.random.default_rng(seed)
    if len(coords) > sample_size:
        chosen = rng.choice(len(coords), size=sample_size, replace=False)
        coords = [coords[i] for i in chosen]
    worst = 0.0
    for key, flat_index in coords:
        flat = params[key].reshape(-1)
        original = flat[flat_index]
        flat[flat_index] = original + step
        loss_plus, _ = loss_fn(params)
        flat[flat_index] = original - step
        loss_minus, _ = loss_fn(params)
        flat[flat_index] = original
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        analytic = grads[key].reshape(-1)[flat_index]
        rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, rel)
    return worst


def embed_downsample(x, k=10):
    """Baseline embedding: k uniformly spaced frames concatenated.

    Index j of k maps to floor(j*(T-1)/(k-1) + 0.5); with T=1 every index
    collapses to the single frame.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ModelError("expected a nonempty (T, D) sequence")
    t = x.shape[0]
    if k == 1:
        indices = np.array([(t - 1) // 2])
    else:
        j = np.arange(k)
        indices = np.floor(j * (t - 1) / (k - 1) + 0.5).astype(int)
    return x[indices].reshape(-1)


# ---------------------------------------------------------------------------
# checkpoints


def write_param_file(path, dims, params: Params, magic: bytes = CHECKPOINT_MAGIC) -> None:
    """Serialize named float64 blocks with a 4-byte magic header.

    dims is a 4-tuple of nonnegative ints; its meaning is fixed by the
    container being saved (layers/hidden/embedding/feature for models;
    other containers document their own reading and magic tag).
    """
    if len(magic) != 4:
        raise ModelError("magic tag must be 4 bytes")
    chunks = [magic, struct.pack("<I", CHECKPOINT_VERSION)]
    chunks.append(struct.pack("<4I", *[int(d) for d in dims]))
    for name in sorted(params):
        data = np.ascontiguousarray(params[name], dtype="<f8")
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<Q", data.size))
        chunks.append(data.tobytes())
    from pathlib import Path

    Path(path).write_bytes(b"".join(chunks))


def read_param_file(path, magic: bytes = CHECKPOINT_MAGIC):
    """Read a param file. Returns (dims tuple, dict name -> flat float64)."""
    from pathlib import Path

    blob = Path(path).read_bytes()
    if len(blob) < 24 or blob[:4] != magic:
        raise ModelError(f"bad checkpoint magic in {path}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"unsupported checkpoint version {version}")
    dims = struct.unpack("<4I", blob[8:24])
    offset = 24
    blocks = {}
    while offset < len(blob):
        if offset + 4 > len(blob):
            raise ModelError("truncated checkpoint block header")
        (name_len,) = struct.unpack("<I", blob[offset : offset + 4])
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (count,) = struct.unpack("<Q", blob[offset : offset + 8])
        offset += 8
        end = offset + 8 * count
        if end > len(blob):
            raise ModelError(f"truncated checkpoint block {name!r}")
        blocks[name] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64)
        offset = end
    return dims, blocks


def _model_shapes(prefix, num_layers, hidden, first_in, head_rows, head_name):
    shapes = {}
    for layer in range(num_layers):
        in_dim = first_in if layer == 0 else hidden
        shapes[f"{prefix}{layer}_w_in"] = (hidden, in_dim)
        shapes[f"{prefix}{layer}_w_rec"] = (hidden, hidden)
        shapes[f"{prefix}{layer}_b"] = (hidden,)
    shapes[f"{prefix}_{head_name}_w"] = (head_rows, hidden)
    shapes[f"{prefix}_{head_name}_b"] = (head_rows,)
    return shapes


def save_model(path, encoder: EncoderModel, decoder: DecoderModel | None = None) -> None:
    """Write the encoder (and decoder, when present) to one checkpoint."""
    dims = (encoder.num_layers, encoder.hidden_size, encoder.embedding_size, encoder.input_dim)
    params = dict(encoder.params)
    if decoder is not None:
        if (decoder.num_layers, decoder.hidden_size) != (encoder.num_layers, encoder.hidden_size):
            raise ModelError("encoder/decoder layer dims disagree; save separately")
        if decoder.embedding_size != encoder.embedding_size or decoder.output_dim != encoder.input_dim:
            raise ModelError("decoder dims do not mirror the encoder")
        params.update(decoder.params)
    write_param_file(path, dims, params)


PROJECTION_MAGIC = b"AWEP"
_ACTIVATION_FLAGS = {"relu": 0, "linear": 1}


def save_projection_net(path, net: ProjectionNet) -> None:
    flag = _ACTIVATION_FLAGS.get(net.activation)
    if flag is None:
        raise ModelError(f"unknown activation {net.activation!r}")
    dims = (net.input_dim, net.hidden_dim, net.output_dim, flag)
    write_param_file(path, dims, net.params, magic=PROJECTION_MAGIC)


def load_projection_net(path) -> ProjectionNet:
    dims, blocks = read_param_file(path, magic=PROJECTION_MAGIC)
    in_dim, hidden, out_dim, flag = (int(d) for d in dims)
    by_flag = {v: k for k, v in _ACTIVATION_FLAGS.items()}
    if flag not in by_flag:
        raise ModelError(f"unknown activation flag {flag}")
    shapes = {
        "p_w1": (hidden, in_dim),
        "p_b1": (hidden,),
        "p_w2": (out_dim, hidden),
        "p_b2": (out_dim,),
    }
    if set(blocks) != set(shapes):
        raise ModelError("projection checkpoint holds the wrong blocks")
    params = {}
    for name, shape in shapes.items():
        flat = blocks[name]
        if flat.size != int(np.prod(shape)):
            raise ModelError(f"block {name!r} holds {flat.size} values, expected {int(np.prod(shape))}")
        params[name] = flat.reshape(shape)
    return ProjectionNet(in_dim, hidden, out_dim, by_flag[flag], params)


def load_model(path):
    """Read a checkpoint. Returns (encoder, decoder or None)."""
    dims, blocks = read_param_file(path)
    num_layers, hidden, emb, feat = (int(d) for d in dims)
    shapes = _model_shapes("enc", num_layers, hidden, feat, emb, "proj")
    has_decoder = "dec0_w_in" in blocks
    if has_decoder:
        shapes.update(_model_shapes("dec", num_layers, hidden, emb, feat, "out"))
    params = {}
    for name, shape in shapes.items():
        if name not in blocks:
            raise ModelError(f"checkpoint missing block {name!r}")
        flat = blocks[name]
        expected = int(np.prod(shape))
        if flat.size != expected:
            raise ModelError(f"block {name!r} holds {flat.size} values, expected {expected}")
        params[name] = flat.reshape(shape)
    extra = set(blocks) - set(shapes)
    if extra:
        raise ModelError(f"checkpoint holds unknown blocks {sorted(extra)}")
    encoder = EncoderModel(feat, hidden, emb, num_layers, {k: v for k, v in params.items() if k.startswith("enc")})
    decoder = None
    if has_decoder:
        decoder = DecoderModel(feat, hidden, emb, num_layers, {k: v for k, v in params.items() if k.startswith("dec")})
    return encoder, decoder
