"""Tests for the recurrent encoder/decoder, losses, Adam, and checkpoints.

Scalar cases are recomputed inline with math.* as the independent oracle;
batch losses are checked against tests/oracles.py and against finite
differences through grad_check.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from awelab import neuralnet as nn
from oracles import contrastive_loss_ref, cosine_distance_ref


def tiny_models(input_dim=3, hidden=5, emb=4, layers=2, seed=0):
    enc = nn.build_encoder(input_dim, hidden_size=hidden, embedding_size=emb,
                           num_layers=layers, rng=seed)
    dec = nn.build_decoder(input_dim, hidden_size=hidden, embedding_size=emb,
                           num_layers=layers, rng=seed + 1)
    return enc, dec


# ---------------------------------------------------------------------------
# forward passes against scalar unrolls


def test_encoder_matches_scalar_unroll():
    enc = nn.EncoderModel(1, 1, 1, 1, {
        "enc0_w_in": np.array([[1.0]]),
        "enc0_w_rec": np.array([[0.5]]),
        "enc0_b": np.array([0.1]),
        "enc_proj_w": np.array([[2.0]]),
        "enc_proj_b": np.array([-0.1]),
    })
    x = np.array([[0.2], [0.4], [0.6]])
    h = 0.0
    for xv in (0.2, 0.4, 0.6):
        h = math.tanh(1.0 * xv + 0.5 * h + 0.1)
    expected = 2.0 * h - 0.1
    z = nn.encode(enc, x)
    assert z.shape == (1,)
    assert z[0] == pytest.approx(expected, rel=1e-12)


def test_decoder_matches_scalar_unroll():
    dec = nn.DecoderModel(1, 1, 1, 1, {
        "dec0_w_in": np.array([[1.0]]),
        "dec0_w_rec": np.array([[0.5]]),
        "dec0_b": np.array([0.1]),
        "dec_out_w": np.array([[2.0]]),
        "dec_out_b": np.array([-0.1]),
    })
    y = nn.decode(dec, np.array([0.3]), 3)
    h = 0.0
    expected = []
    for _ in range(3):
        h = math.tanh(1.0 * 0.3 + 0.5 * h + 0.1)
        expected.append(2.0 * h - 0.1)
    assert y.shape == (3, 1)
    np.testing.assert_allclose(y[:, 0], expected, rtol=1e-12)


def test_encoder_embedding_is_deterministic_in_seed():
    enc_a = nn.build_encoder(4, hidden_size=6, embedding_size=3, num_layers=2, rng=7)
    enc_b = nn.build_encoder(4, hidden_size=6, embedding_size=3, num_layers=2, rng=7)
    enc_c = nn.build_encoder(4, hidden_size=6, embedding_size=3, num_layers=2, rng=8)
    for key in enc_a.params:
        np.testing.assert_array_equal(enc_a.params[key], enc_b.params[key])
    assert any(not np.array_equal(enc_a.params[k], enc_c.params[k]) for k in enc_a.params)


def test_encoder_input_validation():
    enc, _ = tiny_models()
    with pytest.raises(nn.ModelError):
        nn.encode(enc, np.zeros((4, 2)))  # wrong feature dim
    with pytest.raises(nn.ModelError):
        nn.encode(enc, np.zeros((0, 3)))  # empty sequence


def test_decoder_input_validation():
    _, dec = tiny_models()
    with pytest.raises(nn.ModelError):
        nn.decode(dec, np.zeros(4), 0)  # t_out < 1
    with pytest.raises(nn.ModelError):
        nn.decode(dec, np.zeros(3), 5)  # wrong embedding size


def test_build_rejects_degenerate_dims():
    with pytest.raises(nn.ModelError):
        nn.build_encoder(3, num_layers=0)
    with pytest.raises(nn.ModelError):
        nn.build_decoder(3, embedding_size=0)


# ---------------------------------------------------------------------------
# cosine distance


def test_cosine_distance_frozen_case():
    # 1 - cos45 = 1 - 1/sqrt(2)
    d = nn.cosine_distance([1.0, 0.0], [1.0, 1.0])
    assert d == pytest.approx(0.29289321881345254, rel=1e-12)


def test_cosine_distance_rejects_zero_norm():
    with pytest.raises(nn.ModelError):
        nn.cosine_distance([0.0, 0.0], [1.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_cosine_distance_matches_reference(seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=5)
    v = rng.normal(size=5)
    assert nn.cosine_distance(u, v) == pytest.approx(cosine_distance_ref(u, v), abs=1e-12)


# ---------------------------------------------------------------------------
# reconstruction losses


def test_ae_is_cae_with_input_target():
    enc, dec = tiny_models()
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 3))
    assert nn.loss_ae(enc, dec, x) == nn.loss_cae(enc, dec, x, x)


def test_cae_loss_matches_explicit_sum():
    enc, dec = tiny_models()
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 3))
    target = rng.normal(size=(7, 3))
    y = nn.decode(dec, nn.encode(enc, x), 7)
    assert nn.loss_cae(enc, dec, x, target) == pytest.approx(np.sum((y - target) ** 2))


def test_reconstruction_grads_pass_finite_differences():
    enc, dec = tiny_models()
    merged = {**enc.params, **dec.params}
    enc_shared = nn.EncoderModel(enc.input_dim, enc.hidden_size, enc.embedding_size,
                                 enc.num_layers, merged)
    dec_shared = nn.DecoderModel(dec.output_dim, dec.hidden_size, dec.embedding_size,
                                 dec.num_layers, merged)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 3))
    target = rng.normal(size=(6, 3))

    def loss_fn(params):
        loss, eg, dg = nn.reconstruction_loss_and_grads(enc_shared, dec_shared, x, target)
        return loss, {**eg, **dg}

    assert nn.grad_check(loss_fn, merged, seed=0, sample_size=120) < 1e-4


def test_reconstruction_rejects_bad_target():
    enc, dec = tiny_models()
    with pytest.raises(nn.ModelError):
        nn.loss_cae(enc, dec, np.zeros((4, 3)), np.zeros((4, 2)))


# ---------------------------------------------------------------------------
# triplet loss


def test_triplet_hinge_frozen_case():
    # a=(1,0) p=(1,1) n=(0,1), margin 0.8.
    # anchor a: d(a,p) = 1 - 1/sqrt(2), d(a,n) = 1, hinge = m + d(a,p) - 1
    # anchor p: d(p,a) = d(p,n) = 1 - 1/sqrt(2), hinge = m
    # anchor n: no positive, skipped; mean over the two active anchors.
    z = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    d_ap = 1.0 - 1.0 / math.sqrt(2.0)
    expected = ((0.8 + d_ap - 1.0) + 0.8) / 2.0
    assert nn.loss_triplet_hard(z, [0, 0, 1], margin=0.8) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.4464466094067263, rel=1e-12)


def test_triplet_needs_positive_and_negative():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    with pytest.raises(nn.ModelError):
        nn.loss_triplet_hard(z, [0, 0, 0])


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_triplet_matches_brute_force_mining(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 9))
    z = rng.normal(size=(n, 3))
    labels = rng.integers(0, 3, size=n)
    if len(set(labels.tolist())) < 2 or max(np.bincount(labels)) < 2:
        labels[0] = labels[1] = 0
        labels[2] = 1
    margin = 0.25
    terms = []
    for a in range(n):
        pos = [j for j in range(n) if j != a and labels[j] == labels[a]]
        neg = [j for j in range(n) if labels[j] != labels[a]]
        if not pos or not neg:
            continue
        d_pos = max(cosine_distance_ref(z[a], z[j]) for j in pos)
        d_neg = min(cosine_distance_ref(z[a], z[j]) for j in neg)
        terms.append(max(0.0, margin + d_pos - d_neg))
    assert nn.loss_triplet_hard(z, labels, margin=margin) == pytest.approx(
        sum(terms) / len(terms), rel=1e-9)


def test_triplet_grad_passes_finite_differences():
    rng = np.random.default_rng(11)
    z = rng.normal(size=(6, 4))
    labels = [0, 0, 1, 1, 2, 2]
    params = {"z": z}

    def loss_fn(p):
        loss, dz = nn.loss_triplet_hard_with_grad(p["z"], labels, margin=0.4)
        return loss, {"z": dz}

    assert nn.grad_check(loss_fn, params, seed=1, sample_size=24) < 1e-4


# ---------------------------------------------------------------------------
# batch contrastive loss


def test_contrastive_orthogonal_pairs_frozen_value():
    # two identical pairs on orthogonal axes at tau 0.1: every anchor sees
    # logits (10, 0, 0), so each of the four terms is log(1 + 2 e^-10).
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    total = nn.loss_contrastive(z, temperature=0.1)
    assert total == pytest.approx(4.0 * math.log(1.0 + 2.0 * math.exp(-10.0)), rel=1e-10)
    assert total == pytest.approx(3.631829498690249e-4, rel=1e-10)


def test_contrastive_identical_batch_frozen_value():
    z = np.tile(np.array([0.3, -0.7]), (4, 1))
    assert nn.loss_contrastive(z, temperature=0.1) == pytest.approx(
        4.0 * math.log(3.0), rel=1e-12)


def test_contrastive_batch_shape_validation():
    with pytest.raises(nn.ModelError):
        nn.loss_contrastive(np.ones((3, 2)))  # odd row count
    with pytest.raises(nn.ModelError):
        nn.loss_contrastive(np.ones((2, 2)))  # fewer than two pairs
    with pytest.raises(nn.ModelError):
        nn.loss_contrastive(np.ones((4, 2)), temperature=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_contrastive_matches_reference(seed):
    rng = np.random.default_rng(seed)
    n_pairs = int(rng.integers(2, 6))
    z = rng.normal(size=(2 * n_pairs, 4))
    tau = float(rng.uniform(0.05, 1.0))
    assert nn.loss_contrastive(z, temperature=tau) == pytest.approx(
        contrastive_loss_ref(z, tau), rel=1e-10, abs=1e-10)


def test_contrastive_grad_passes_finite_differences():
    rng = np.random.default_rng(13)
    z = rng.normal(size=(8, 5))
    params = {"z": z}

    def loss_fn(p):
        loss, dz = nn.loss_contrastive_with_grad(p["z"], temperature=0.2)
        return loss, {"z": dz}

    assert nn.grad_check(loss_fn, params, seed=2, sample_size=40) < 1e-4


def test_contrastive_with_grad_agrees_with_plain_loss():
    rng = np.random.default_rng(14)
    z = rng.normal(size=(6, 3))
    loss, _ = nn.loss_contrastive_with_grad(z, temperature=0.1)
    assert loss == nn.loss_contrastive(z, temperature=0.1)


# ---------------------------------------------------------------------------
# sampled-negative softmax loss


def test_nce_frozen_case():
    # anchor == positive, one orthogonal negative, tau 0.1:
    # logits (10, 0), loss = log(1 + e^-10).
    loss, _, _ = nn.nce_softmax_loss(np.array([1.0, 0.0]),
                                     np.array([[1.0, 0.0], [0.0, 1.0]]),
                                     temperature=0.1)
    assert loss == pytest.approx(math.log(1.0 + math.exp(-10.0)), rel=1e-9)


def test_nce_input_validation():
    with pytest.raises(nn.ModelError):
        nn.nce_softmax_loss(np.ones(2), np.ones((1, 2)))  # no negative
    with pytest.raises(nn.ModelError):
        nn.nce_softmax_loss(np.zeros(2), np.ones((2, 2)))  # zero-norm anchor
    with pytest.raises(nn.ModelError):
        nn.nce_softmax_loss(np.ones(2), np.ones((2, 2)), temperature=-1.0)


def test_nce_grads_pass_finite_differences():
    rng = np.random.default_rng(15)
    params = {"a": rng.normal(size=4), "c": rng.normal(size=(5, 4))}

    def loss_fn(p):
        loss, da, dc = nn.nce_softmax_loss(p["a"], p["c"], temperature=0.3)
        return loss, {"a": da, "c": dc}

    assert nn.grad_check(loss_fn, params, seed=3, sample_size=24) < 1e-4


# ---------------------------------------------------------------------------
# projection net


def test_projection_relu_forward_by_hand():
    net = nn.ProjectionNet(2, 2, 1, "relu", {
        "p_w1": np.array([[1.0, -1.0], [0.5, 0.5]]),
        "p_b1": np.array([0.0, -2.0]),
        "p_w2": np.array([[3.0, 4.0]]),
        "p_b2": np.array([0.25]),
    })
    # x = (1, 2): pre = (-1, -0.5), relu -> (0, 0), out = 0.25
    out = nn.projection_apply(net, np.array([1.0, 2.0]))
    assert out == pytest.approx([0.25])
    # x = (2, 1): pre = (1, -0.5), relu -> (1, 0), out = 3.25
    out = nn.projection_apply(net, np.array([2.0, 1.0]))
    assert out == pytest.approx([3.25])


def test_projection_linear_keeps_negative_preactivations():
    net = nn.build_projection_net(3, 4, 2, activation="linear", rng=0)
    x = np.array([-1.0, 2.0, 0.5])
    pre = net.params["p_w1"] @ x + net.params["p_b1"]
    expected = net.params["p_w2"] @ pre + net.params["p_b2"]
    np.testing.assert_allclose(nn.projection_apply(net, x), expected)


def test_projection_input_validation():
    net = nn.build_projection_net(3, 4, 2, rng=0)
    with pytest.raises(nn.ModelError):
        nn.projection_apply(net, np.zeros(4))
    with pytest.raises(nn.ModelError):
        nn.build_projection_net(3, 4, 2, activation="gelu")


@pytest.mark.parametrize("activation", ["relu", "linear"])
def test_projection_grads_pass_finite_differences(activation):
    net = nn.build_projection_net(4, 6, 3, activation=activation, rng=2)
    rng = np.random.default_rng(16)
    x = rng.normal(size=4) + 0.05  # keep relu away from its kink
    target = rng.normal(size=3)

    def loss_fn(params):
        out, cache = nn.projection_with_cache(net, x)
        diff = out - target
        grads, _ = nn.projection_backward(net, cache, 2.0 * diff)
        return float(diff @ diff), grads

    assert nn.grad_check(loss_fn, net.params, seed=4, sample_size=60) < 1e-4


# ---------------------------------------------------------------------------
# optimizer


def test_adam_first_step_frozen_value():
    # m_hat = v_hat = 1 on the first step, so the update is lr / (1 + eps).
    params = {"w": np.array([0.0])}
    nn.adam_step(params, {"w": np.array([1.0])}, nn.AdamState(), 1e-3)
    assert params["w"][0] == pytest.approx(-1e-3 / (1.0 + 1e-8), rel=1e-12)


def test_adam_leaves_frozen_keys_untouched():
    params = {"w": np.array([1.0]), "frozen": np.array([2.0])}
    state = nn.AdamState()
    nn.adam_step(params, {"w": np.array([0.5])}, state, 1e-2)
    assert params["frozen"][0] == 2.0
    assert "frozen" not in state.m
    # the frozen key never accrues a step count, so unfreezing later starts
    # its moments from zero rather than from stale history
    assert state.t == {"w": 1}


def test_adam_is_insensitive_to_grad_dict_order():
    def run(order):
        rng = np.random.default_rng(0)
        params = {k: rng.normal(size=3) for k in ("a", "b", "c")}
        state = nn.AdamState()
        for step in range(5):
            g = np.sin(np.arange(3) + step)
            grads = {k: g * (i + 1) for i, k in enumerate(order)}
            nn.adam_step(params, grads, state, 1e-2)
        return params

    # grads arrive keyed the same but inserted in different orders
    p1 = run(["a", "b", "c"])
    p2 = run(["a", "b", "c"][::-1])
    # reversal changes which gradient lands on which key, so realign
    rng = np.random.default_rng(0)
    params = {k: rng.normal(size=3) for k in ("a", "b", "c")}
    state = nn.AdamState()
    for step in range(5):
        g = np.sin(np.arange(3) + step)
        grads = {}
        for i, k in enumerate(["c", "b", "a"]):
            grads[k] = g * (3 - i)
        nn.adam_step(params, grads, state, 1e-2)
    for key in p1:
        np.testing.assert_array_equal(p1[key], params[key])


def test_adam_rejects_shape_mismatch():
    with pytest.raises(nn.ModelError):
        nn.adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, nn.AdamState(), 1e-3)


# ---------------------------------------------------------------------------
# gradient checker


def test_grad_check_accepts_correct_gradient():
    rng = np.random.default_rng(17)
    params = {"w": rng.normal(size=(3, 3))}

    def loss_fn(p):
        return float(np.sum(p["w"] ** 2)), {"w": 2.0 * p["w"]}

    assert nn.grad_check(loss_fn, params, seed=0) < 1e-8


def test_grad_check_flags_broken_gradient():
    params = {"w": np.ones(4)}

    def loss_fn(p):
        return float(np.sum(p["w"] ** 2)), {"w": p["w"]}  # missing factor 2

    assert nn.grad_check(loss_fn, params, seed=0) > 1e-2


def test_grad_check_restores_parameters():
    params = {"w": np.arange(4.0)}
    before = params["w"].copy()

    def loss_fn(p):
        return float(np.sum(p["w"] ** 2)), {"w": 2.0 * p["w"]}

    nn.grad_check(loss_fn, params, seed=0)
    np.testing.assert_array_equal(params["w"], before)


def test_grad_check_rejects_nonfinite_loss():
    def loss_fn(p):
        return float("nan"), {"w": p["w"]}

    with pytest.raises(nn.ModelError):
        nn.grad_check(loss_fn, {"w": np.ones(2)})


# ---------------------------------------------------------------------------
# downsampling baseline


def test_downsample_frozen_indices():
    x = np.arange(20.0)[:, None]
    v = nn.embed_downsample(x, k=10)
    np.testing.assert_array_equal(v, [0, 2, 4, 6, 8, 11, 13, 15, 17, 19])


def test_downsample_k1_takes_middle_frame():
    x = np.arange(7.0)[:, None]
    assert nn.embed_downsample(x, k=1) == pytest.approx([3.0])
    x = np.arange(8.0)[:, None]
    assert nn.embed_downsample(x, k=1) == pytest.approx([3.0])


def test_downsample_short_sequence_repeats_frames():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    v = nn.embed_downsample(x, k=4)
    assert v.shape == (8,)
    np.testing.assert_array_equal(v, [1, 2, 1, 2, 3, 4, 3, 4])


def test_downsample_rejects_empty():
    with pytest.raises(nn.ModelError):
        nn.embed_downsample(np.zeros((0, 3)), k=5)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=40), st.integers(min_value=2, max_value=12))
def test_downsample_indices_are_monotone_and_bounded(t, k):
    x = np.arange(t, dtype=float)[:, None]
    v = nn.embed_downsample(x, k=k)
    assert v.shape == (k,)
    assert all(0 <= i <= t - 1 for i in v)
    assert list(v) == sorted(v)
    assert v[0] == 0 and v[-1] == t - 1


# ---------------------------------------------------------------------------
# checkpoints


def test_save_load_round_trips_encoder_only(tmp_path):
    enc, _ = tiny_models()
    path = tmp_path / "enc.awem"
    nn.save_model(path, enc)
    loaded, dec = nn.load_model(path)
    assert dec is None
    assert (loaded.input_dim, loaded.hidden_size, loaded.embedding_size,
            loaded.num_layers) == (3, 5, 4, 2)
    for key in enc.params:
        np.testing.assert_array_equal(loaded.params[key], enc.params[key])


def test_save_load_round_trips_encoder_and_decoder(tmp_path):
    enc, dec = tiny_models()
    path = tmp_path / "pair.awem"
    nn.save_model(path, enc, dec)
    enc2, dec2 = nn.load_model(path)
    for key in enc.params:
        np.testing.assert_array_equal(enc2.params[key], enc.params[key])
    for key in dec.params:
        np.testing.assert_array_equal(dec2.params[key], dec.params[key])


def test_save_rejects_mismatched_decoder(tmp_path):
    enc, _ = tiny_models()
    _, dec = tiny_models(hidden=6)
    with pytest.raises(nn.ModelError):
        nn.save_model(tmp_path / "bad.awem", enc, dec)


def test_load_rejects_wrong_magic(tmp_path):
    net = nn.build_projection_net(3, 4, 2, rng=0)
    path = tmp_path / "proj.awem"
    nn.save_projection_net(path, net)
    with pytest.raises(nn.ModelError, match="magic"):
        nn.load_model(path)


def test_load_rejects_truncated_file(tmp_path):
    enc, _ = tiny_models()
    path = tmp_path / "enc.awem"
    nn.save_model(path, enc)
    blob = path.read_bytes()
    (tmp_path / "cut.awem").write_bytes(blob[: len(blob) - 9])
    with pytest.raises(nn.ModelError, match="truncated"):
        nn.load_model(tmp_path / "cut.awem")


def test_load_rejects_unknown_blocks(tmp_path):
    enc, _ = tiny_models()
    params = dict(enc.params)
    params["mystery"] = np.zeros(3)
    path = tmp_path / "extra.awem"
    nn.write_param_file(path, (2, 5, 4, 3), params)
    with pytest.raises(nn.ModelError, match="unknown blocks"):
        nn.load_model(path)


def test_load_rejects_missing_block(tmp_path):
    enc, _ = tiny_models()
    params = dict(enc.params)
    del params["enc_proj_b"]
    path = tmp_path / "short.awem"
    nn.write_param_file(path, (2, 5, 4, 3), params)
    with pytest.raises(nn.ModelError, match="missing block"):
        nn.load_model(path)


def test_projection_checkpoint_round_trips(tmp_path):
    net = nn.build_projection_net(3, 7, 2, activation="linear", rng=5)
    path = tmp_path / "proj.awep"
    nn.save_projection_net(path, net)
    loaded = nn.load_projection_net(path)
    assert (loaded.input_dim, loaded.hidden_dim, loaded.output_dim) == (3, 7, 2)
    assert loaded.activation == "linear"
    for key in net.params:
        np.testing.assert_array_equal(loaded.params[key], net.params[key])


def test_projection_load_rejects_model_checkpoint(tmp_path):
    enc, _ = tiny_models()
    path = tmp_path / "enc.awem"
    nn.save_model(path, enc)
    with pytest.raises(nn.ModelError, match="magic"):
        nn.load_projection_net(path)


# ---------------------------------------------------------------------------
# config validation


def test_train_config_validation():
    with pytest.raises(nn.ModelError):
        nn.TrainConfig(temperature=0.0)
    with pytest.raises(nn.ModelError):
        nn.TrainConfig(margin=-0.1)
    with pytest.raises(nn.ModelError):
        nn.TrainConfig(learning_rate=0.0)
