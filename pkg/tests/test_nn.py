import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from stormwarn.nn import (
    RADAR_BLOCKS, ConvBlock, ConvParams, LossWeights, LstmParams, LstmState, TrainConfig,
    TrainingDivergedError, class_balanced_ce, class_balanced_ce_grad, class_weights,
    conv_block_forward, feature_extractor_forward, lstm_cell_step, lstm_forward,
    train_toy_classifier,
)
from stormwarn.nn.toy import init_params, loss_and_grad, predict_proba
from stormwarn.verify import compute_score


# --- LSTM ---------------------------------------------------------------------

def test_zero_params_from_rest():
    p = LstmParams.zeros(3, 2)
    s = lstm_cell_step(np.array([0.3, -1.0, 2.0]), LstmState.zeros(2), p)
    assert np.array_equal(s.c, np.zeros(2)) and np.array_equal(s.h, np.zeros(2))


def test_zero_params_halve_the_cell():
    p = LstmParams.zeros(2, 1)
    s = lstm_cell_step(np.array([5.0, -3.0]), LstmState(np.zeros(1), np.ones(1)), p)
    assert s.c[0] == pytest.approx(0.5, abs=1e-12)
    assert s.h[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-12)
    assert s.h[0] == pytest.approx(0.2311, abs=1e-4)


def _step_by_hand(x, h, c, q):
    """Gate equations written out one unit at a time."""
    H = h.size
    h_new, c_new = np.zeros(H), np.zeros(H)
    for u in range(H):
        i = 1 / (1 + math.exp(-(q["w_xi"][u] @ x + q["w_hi"][u] @ h + q["w_ci"][u] * c[u] + q["b_i"][u])))
        f = 1 / (1 + math.exp(-(q["w_xf"][u] @ x + q["w_hf"][u] @ h + q["w_cf"][u] * c[u] + q["b_f"][u])))
        cu = f * c[u] + i * math.tanh(q["w_xc"][u] @ x + q["w_hc"][u] @ h + q["b_c"][u])
        o = 1 / (1 + math.exp(-(q["w_xo"][u] @ x + q["w_ho"][u] @ h + q["w_co"][u] * cu + q["b_o"][u])))
        c_new[u] = cu
        h_new[u] = o * math.tanh(cu)
    return h_new, c_new


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_cell_matches_hand_written_equations(d, h, seed):
    rng = np.random.default_rng(seed)
    p = LstmParams.random(d, h, rng, scale=0.8)
    q = {k: getattr(p, k) for k in ("w_xi", "w_hi", "w_ci", "w_xf", "w_hf", "w_cf", "w_xc", "w_hc",
                                    "w_xo", "w_ho", "w_co", "b_i", "b_f", "b_c", "b_o")}
    x, h0, c0 = rng.normal(size=d), np.tanh(rng.normal(size=h)), rng.normal(size=h)
    s = lstm_cell_step(x, LstmState(h0, c0), p)
    hh, cc = _step_by_hand(x, h0, c0, q)
    assert np.allclose(s.h, hh, atol=1e-12, rtol=0) and np.allclose(s.c, cc, atol=1e-12, rtol=0)


def test_hidden_state_range_over_many_trials():
    rng = np.random.default_rng(0)
    p = LstmParams.random(4, 6, rng, scale=2.0)
    state = LstmState.zeros(6)
    for _ in range(2000):
        state = lstm_cell_step(rng.normal(scale=3.0, size=4), state, p)
        assert (np.abs(state.h) < 1).all()


def test_forward_sequence_matches_repeated_steps():
    rng = np.random.default_rng(1)
    p = LstmParams.random(3, 4, rng)
    xs = rng.normal(size=(7, 3))
    hs, final = lstm_forward(xs, p)
    s = LstmState.zeros(4)
    for t, x in enumerate(xs):
        s = lstm_cell_step(x, s, p)
        assert np.array_equal(hs[t], s.h)
    assert np.array_equal(final.c, s.c)


def test_shape_checks():
    p = LstmParams.zeros(3, 2)
    with pytest.raises(ValueError):
        lstm_cell_step(np.zeros(4), LstmState.zeros(2), p)
    arrays = {k: getattr(p, k) for k in ("w_xi", "w_hi", "w_ci", "w_xf", "w_hf", "w_cf", "w_xc", "w_hc",
                                         "w_xo", "w_ho", "w_co", "b_i", "b_f", "b_c", "b_o")}
    arrays["w_ci"] = np.zeros((2, 2))  # peepholes act elementwise
    with pytest.raises(ValueError):
        LstmParams.from_dict(arrays)


# --- convolution -------------------------------------------------------------

def _conv_loops(x, block, p):
    """Direct nested-loop version with explicit 'same' padding."""
    F, H, W, C = x.shape
    kh, kw = block.kernel_size
    sh, sw = block.conv_stride
    oh, ow = -(-H // sh), -(-W // sw)
    pad_h = max((oh - 1) * sh + kh - H, 0)
    pad_w = max((ow - 1) * sw + kw - W, 0)
    top, left = pad_h // 2, pad_w // 2
    conv = np.zeros((F, oh, ow, block.kernels))
    for f in range(F):
        for a in range(oh):
            for b in range(ow):
                for i in range(kh):
                    for j in range(kw):
                        r, c = a * sh + i - top, b * sw + j - left
                        if 0 <= r < H and 0 <= c < W:
                            conv[f, a, b] += x[f, r, c] @ p.weights[i, j]
    act = np.maximum((conv + p.bias) * p.scale + p.shift, 0)
    ph, pw = block.pool_size
    qh, qw = block.pool_stride
    out = np.zeros((F, (oh - ph) // qh + 1, (ow - pw) // qw + 1, block.kernels))
    for a in range(out.shape[1]):
        for b in range(out.shape[2]):
            out[:, a, b] = act[:, a * qh:a * qh + ph, b * qw:b * qw + pw].max(axis=(1, 2))
    return out


def test_radar_block_output_shape():
    rng = np.random.default_rng(0)
    block = RADAR_BLOCKS[0]
    x = rng.random((10, 128, 256, 3))
    out = conv_block_forward(x, block, ConvParams.glorot(block, 3, rng))
    assert out.shape == (10, 31, 63, 8)


def test_unit_kernel_is_relu():
    block = ConvBlock(1, (1, 1), (1, 1), (1, 1), (1, 1))
    p = ConvParams(np.ones((1, 1, 1, 1)), np.zeros(1), np.ones(1), np.zeros(1))
    x = np.random.default_rng(2).normal(size=(2, 5, 6, 1))
    assert np.array_equal(conv_block_forward(x, block, p), np.maximum(x, 0))


def test_channel_chain():
    rng = np.random.default_rng(0)
    x = rng.random((2, 128, 256, 3))
    params, c = [], 3
    for block in RADAR_BLOCKS:
        params.append(ConvParams.glorot(block, c, rng))
        c = block.kernels
    assert [p.weights.shape[2] for p in params] == [3, 8, 16]
    out = x
    for block, p in zip(RADAR_BLOCKS, params):
        out = conv_block_forward(out, block, p)
    assert out.shape[-1] == 32
    flat = feature_extractor_forward(x, params)
    assert flat.shape == (2, out[0].size)


@settings(max_examples=40, deadline=None)
@given(st.integers(6, 20), st.integers(6, 20), st.integers(1, 3), st.integers(1, 4),
       st.sampled_from([1, 3, 5]), st.sampled_from([1, 2]), st.sampled_from([(2, 1), (2, 2), (3, 2)]),
       st.integers(0, 2**31 - 1))
def test_conv_matches_loops(h, w, c, k, ks, stride, pool, seed):
    rng = np.random.default_rng(seed)
    block = ConvBlock(k, (ks, ks), (stride, stride), (pool[0], pool[0]), (pool[1], pool[1]))
    p = ConvParams(rng.normal(size=(ks, ks, c, k)), rng.normal(size=k), rng.random(k) + 0.5, rng.normal(size=k))
    x = rng.normal(size=(2, h, w, c))
    out = conv_block_forward(x, block, p)
    ch, cw = math.ceil(h / stride), math.ceil(w / stride)
    assert out.shape == (2, (ch - pool[0]) // pool[1] + 1, (cw - pool[0]) // pool[1] + 1, k)
    assert np.allclose(out, _conv_loops(x, block, p), atol=1e-10)


def test_too_small_input_rejected():
    with pytest.raises(ValueError):
        ConvBlock(8, (5, 5)).output_hw(4, 4)


# --- loss --------------------------------------------------------------------

def test_class_weight_examples():
    w = class_weights([1, 0, 0, 0])
    assert (w.beta0, w.beta1) == pytest.approx((1 / 3, 1.0))
    y = np.zeros(7128, dtype=int)
    y[:105] = 1
    w = class_weights(y)
    assert w.beta1 == pytest.approx(1 / 105) and w.beta0 == pytest.approx(1 / 7023)
    w = class_weights([0, 1, 1, 0])
    assert w.beta0 == w.beta1
    with pytest.raises(ValueError):
        class_weights([0, 0, 0])


def test_ce_examples():
    ones = LossWeights(1.0, 1.0)
    assert class_balanced_ce([0.5, 0.5], [1, 0], ones) == pytest.approx(2 * math.log(2))
    assert class_balanced_ce([1.0, 0.0], [1, 0], ones) < 1e-6


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=30))
def test_ce_nonnegative_and_plain_when_unweighted(pairs):
    p = np.array([a for a, _ in pairs])
    y = np.array([b for _, b in pairs])
    ones = LossWeights(1.0, 1.0)
    value = class_balanced_ce(p, y, ones)
    assert value >= 0
    pc = np.clip(p, 1e-7, 1 - 1e-7)
    plain = -np.sum(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    assert value == pytest.approx(plain)


def test_ce_gradient_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        y = rng.integers(0, 2, n)
        p = rng.uniform(0.02, 0.98, n)
        w = LossWeights(float(rng.uniform(0.01, 1)), float(rng.uniform(0.01, 1)))
        g = class_balanced_ce_grad(p, y, w)
        h = 1e-6
        num = np.array([(class_balanced_ce(p + h * e, y, w) - class_balanced_ce(p - h * e, y, w)) / (2 * h)
                        for e in np.eye(n)])
        assert np.linalg.norm(g - num) <= 1e-3 * np.linalg.norm(num)


def test_toy_gradients_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n, d = int(rng.integers(4, 20)), int(rng.integers(1, 5))
        x = rng.normal(size=(n, d))
        y = rng.integers(0, 2, n)
        y[:2] = (0, 1)
        w = class_weights(y)
        params = init_params(d, 4, rng)
        _, grads = loss_and_grad(params, x, y, w)
        for name, arr in params.items():
            num = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + 1e-6
                up = loss_and_grad(params, x, y, w)[0]
                arr[idx] = old - 1e-6
                down = loss_and_grad(params, x, y, w)[0]
                arr[idx] = old
                num[idx] = (up - down) / 2e-6
            denom = max(np.linalg.norm(num), 1e-8)
            assert np.linalg.norm(grads[name] - num) / denom < 1e-3


# --- toy classifier -------------------------------------------------------------

def _separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0.8).astype(int)
    x[y == 1] += 0.5  # open a margin
    return x, y


def test_separable_set_is_learned():
    x, y = _separable()
    res = train_toy_classifier(x, y, TrainConfig(epochs=60, learning_rate=0.05, batch_size=32, seed=3))
    last = res.probs["train"][-1]
    assert compute_score("tss", y, (last > 0.5).astype(int)) == 1.0
    assert ((res.probs["train"] >= 0) & (res.probs["train"] <= 1)).all()


def test_training_is_deterministic():
    x, y = _separable(80, seed=4)
    cfg = TrainConfig(epochs=5, learning_rate=0.01, batch_size=16, seed=9)
    a = train_toy_classifier(x, y, cfg, {"val": x[:10]})
    b = train_toy_classifier(x, y, cfg, {"val": x[:10]})
    assert np.array_equal(a.probs["train"], b.probs["train"])
    assert np.array_equal(a.probs["val"], b.probs["val"])
    assert a.probs["val"].shape == (5, 10)
    assert all(np.array_equal(s["w1"], t["w1"]) for s, t in zip(a.snapshots, b.snapshots))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    x, y = _separable(50)
    x[3, 0] = np.inf
    with pytest.raises(TrainingDivergedError) as err:
        train_toy_classifier(x, y, TrainConfig(epochs=3, batch_size=50))
    assert err.value.epoch == 1


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_predict_proba_is_sigmoid_of_logit():
    rng = np.random.default_rng(0)
    params = init_params(3, 5, rng)
    x = rng.normal(size=(4, 3))
    z = np.tanh(x @ params["w1"] + params["b1"]) @ params["w2"] + params["b2"][0]
    assert np.allclose(predict_proba(params, x), expit(z))
