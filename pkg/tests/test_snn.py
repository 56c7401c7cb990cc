import math

import numpy as np
import pytest

from imdd_snn import autograd as ag
from imdd_snn.signal_chain import gray_demap, make_dataset
from imdd_snn.snn import (
    NeuronState,
    SnnModel,
    SnnParams,
    decode_max_over_time,
    encode_spikes,
    forward_tape,
    hidden_silent_fraction,
    li_layer_step,
    lif_layer_step,
    simulate,
    snn_forward,
    snn_loss,
    snn_train_epoch,
    spike_steps,
    superspike_surrogate,
)

from .gradcheck import numeric_grad, rel_error

P = SnnParams()


def test_default_parameters():
    assert P.n_steps == 60 and P.n_inputs == 70 and P.cutoff_step == 30
    assert np.allclose(P.ref_points, 7 / 9 * np.arange(10))
    with pytest.raises(ValueError):
        SnnParams(duration=30.2)


# --- encoding --------------------------------------------------------------


def test_sample_on_reference_point_spikes_at_zero():
    chunk = np.full(7, P.ref_points[3])
    raster = encode_spikes(chunk, P)
    for tap in range(7):
        assert raster[tap * 10 + 3, 0] == 1


def test_hand_evaluated_spike_time():
    chunk = np.zeros(7)
    chunk[2] = 3.5
    steps = spike_steps(chunk, P)[0]
    # |3.5 - 28/9| * 8 = 3.11 us -> step 6
    assert steps[2 * 10 + 4] == 6


def test_far_sample_is_silent():
    chunk = np.zeros(7)
    chunk[5] = -2.0
    raster = encode_spikes(chunk, P)
    assert raster[50:60].sum() == 0
    assert raster[:10].sum() > 0


def test_raster_invariants(rng):
    for chunk in rng.uniform(-1, 8, size=(200, 7)):
        raster = encode_spikes(chunk, P)
        assert raster.shape == (70, 60)
        assert raster.sum(axis=1).max() <= 1
        assert raster[:, P.cutoff_step :].sum() == 0
        if np.all((chunk >= 0) & (chunk <= 7)):
            assert raster.reshape(7, 10, 60).sum(axis=(1, 2)).min() >= 1


def test_encode_rejects_wrong_length():
    with pytest.raises(ValueError):
        encode_spikes(np.zeros(5), P)


# --- neuron dynamics -------------------------------------------------------


def test_rest_state_is_fixed_point():
    s = NeuronState.zeros((1, 3))
    for _ in range(20):
        s, z = lif_layer_step(s, np.zeros((1, 3)), P)
    assert np.all(s.v == 0) and np.all(s.current == 0) and np.all(z == 0)


def test_euler_membrane_decay():
    s = NeuronState(np.zeros(1), np.array([0.5]))
    for k in range(1, 30):
        s = li_layer_step(s, np.zeros(1), P)
        assert s.v[0] == pytest.approx(0.5 * (11 / 12) ** k, rel=1e-12)


def test_spike_and_reset():
    s = NeuronState.zeros(1)
    # current 12 lifts v to exactly 1 after one step with dt/tau = 1/12
    s, z = lif_layer_step(s, np.array([12.0]), P)
    assert z[0] == 1 and s.v[0] == 0.0
    s, z = lif_layer_step(s, np.array([0.0]), P)
    # the decayed current 11 lifts v from reset to 11/12, below threshold
    assert z[0] == 0 and s.v[0] == pytest.approx(11 / 12)
    below = NeuronState.zeros(1)
    below, z = lif_layer_step(below, np.array([11.0]), P)
    assert z[0] == 0 and below.v[0] == pytest.approx(11 / 12)


def test_li_equals_lif_without_threshold(rng):
    p = P.replace(threshold=math.inf)
    a, b = NeuronState.zeros(5), NeuronState.zeros(5)
    for _ in range(60):
        x = rng.standard_normal(5) * (rng.random(5) < 0.2)
        a = li_layer_step(a, x, p)
        b, z = lif_layer_step(b, x, p)
        assert np.array_equal(a.v, b.v) and not z.any()


def test_non_finite_state_raises():
    with pytest.raises(FloatingPointError):
        li_layer_step(NeuronState.zeros(1), np.array([np.inf]), P)


def test_li_single_spike_rises_then_decays():
    s = NeuronState.zeros(1)
    vs = []
    for t in range(60):
        s = li_layer_step(s, np.array([1.0 if t == 0 else 0.0]), P)
        vs.append(s.v[0])
    peak = int(np.argmax(vs))
    assert 0 < peak < 59 and max(vs) > 0 and vs[-1] < max(vs)


# --- network ---------------------------------------------------------------


def _model(rng, **kw):
    m = SnnModel.init(P, rng, **kw)
    return m


def test_zero_weights_give_zero_traces(rng):
    m = _model(rng)
    m.w_ih.data[...] = 0
    m.w_ho.data[...] = 0
    out, hidden, _ = snn_forward(m, encode_spikes(np.full(7, 3.0), P))
    assert out.shape == (4, 60) and hidden.shape == (40, 60)
    assert np.all(out == 0)
    assert decode_max_over_time(out)[1] == 0
    assert decode_max_over_time(out)[2].tolist() == [0, 0]


def test_doubling_readout_weights_doubles_traces(rng):
    m = _model(rng, ih_gain=3.0)
    raster = encode_spikes(rng.uniform(0, 7, 7), P)
    out1 = snn_forward(m, raster)[0]
    m.w_ho.data *= 2
    out2 = snn_forward(m, raster)[0]
    assert np.allclose(out2, 2 * out1, rtol=1e-12, atol=1e-15)


def test_readout_superposition_with_frozen_spikes(rng):
    m = _model(rng)
    steps = spike_steps(rng.uniform(0, 7, (2, 7)), P)
    z1 = (rng.random((2, 60, 40)) < 0.05).astype(float)
    z2 = (rng.random((2, 60, 40)) < 0.05).astype(float)
    sum_traces = simulate(m, steps, z1)[0] + simulate(m, steps, z2)[0]
    assert np.allclose(simulate(m, steps, z1 + z2)[0], sum_traces, atol=1e-12)


def test_forward_is_deterministic_and_tape_matches(rng):
    m = _model(rng, ih_gain=3.0)
    steps = spike_steps(rng.uniform(0, 7, (16, 7)), P)
    a = simulate(m, steps)[0]
    assert np.array_equal(a, simulate(m, steps)[0])
    assert np.allclose(forward_tape(m, steps).data, a, atol=1e-12)


def test_decode_rules():
    traces = np.zeros((4, 60))
    traces[2, 10] = 0.5
    traces[1, 30] = 0.4
    scores, idx, bits = decode_max_over_time(traces)
    assert idx == 2 and bits.tolist() == gray_demap(2).tolist()
    assert decode_max_over_time(traces + 3.0)[1] == 2
    tie = np.zeros((4, 60))
    tie[1, 5] = tie[3, 9] = 1.0
    assert decode_max_over_time(tie)[1] == 1


def test_superspike_values():
    assert superspike_surrogate(1.0, P) == 1.0
    assert superspike_surrogate(1.1, P) == pytest.approx(0.25)
    assert superspike_surrogate(0.9, P) == pytest.approx(0.25)
    d = np.linspace(0, 3, 50)
    assert np.allclose(superspike_surrogate(1 + d, P), superspike_surrogate(1 - d, P))


def test_loss_on_identical_traces_is_ln4():
    traces = np.tile(np.linspace(0, 1, 60)[None, :, None], (3, 1, 4))
    assert float(snn_loss(traces, np.array([0, 1, 3])).data) == pytest.approx(math.log(4))
    losses = []
    for s in (0.0, 1.0, 5.0, 20.0):
        t = np.zeros((1, 60, 4))
        t[0, 7, 2] = s
        losses.append(float(snn_loss(t, np.array([2])).data))
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_frozen_spike_readout_gradient(rng):
    m = _model(rng)
    steps = spike_steps(rng.uniform(0, 7, (6, 7)), P)
    frozen = (rng.random((6, 60, 40)) < 0.08).astype(float)
    targets = rng.integers(0, 4, 6)
    g = ag.backward(snn_loss(forward_tape(m, steps, frozen), targets), [m.w_ho])[0]
    fd = numeric_grad(lambda: float(snn_loss(simulate(m, steps, frozen)[0], targets).data), m.w_ho.data)
    assert rel_error(g, fd) < 1e-5


# --- training --------------------------------------------------------------


def test_zero_learning_rate_keeps_weights(rng):
    m = _model(rng, ih_gain=3.0)
    x = rng.uniform(1, 12, (64, 7))
    m.fit_input_scaling(x)
    before = [w.data.copy() for w in m.weights]
    snn_train_epoch(m, x, rng.integers(0, 4, 64), ag.Adam(m.weights, lr=0.0), 32, rng)
    assert all(np.array_equal(w.data, b) for w, b in zip(m.weights, before))


def test_silent_hidden_layer_escapes(params):
    x, t = make_dataset(params, -6.0, "train", seed=0).chunks(7)
    x, t = x[:3000], t[:3000]
    rng = np.random.default_rng(0)
    m = SnnModel.init(P, rng)
    m.fit_input_scaling(x)
    start = hidden_silent_fraction(m, x[:1000])
    assert start > 0.5
    opt = ag.Adam(m.weights, lr=1e-3)
    fractions = []
    for _ in range(10):
        snn_train_epoch(m, x, t, opt, 64, rng)
        fractions.append(hidden_silent_fraction(m, x[:1000]))
    assert fractions[-1] < 0.01 and fractions[0] < start


def test_overfits_small_set(params):
    x, t = make_dataset(params, -6.0, "train", seed=1).chunks(7)
    x, t = x[:100], t[:100]
    rng = np.random.default_rng(1)
    m = SnnModel.init(P, rng, ih_gain=3.0)
    m.fit_input_scaling(x)
    opt = ag.Adam(m.weights, lr=3e-3)
    for epoch in range(200):
        snn_train_epoch(m, x, t, opt, 25, rng)
        if np.all(m.decide(x) == t):
            break
    assert np.all(m.decide(x) == t)


def test_separable_link_held_out_zero_ber(params):
    p = params.replace(fiber_length=0.0)
    x, t = make_dataset(p, None, "train", seed=0).chunks(7)
    xv, tv = make_dataset(p, None, "test", seed=0).chunks(7)
    rng = np.random.default_rng(0)
    m = SnnModel.init(P, rng, ih_gain=3.0)
    m.fit_input_scaling(x)
    opt = ag.Adam(m.weights, lr=3e-3)
    for _ in range(8):
        snn_train_epoch(m, x, t, opt, 256, rng)
        if np.all(m.decide(xv) == tv):
            break
    assert np.sum(gray_demap(m.decide(xv)) != gray_demap(tv)) == 0


def test_checkpoint_roundtrip(tmp_path, rng):
    m = _model(rng, ih_gain=3.0)
    m.fit_input_scaling(rng.uniform(1, 12, (100, 7)))
    m.save(tmp_path / "snn.ckpt")
    back = SnnModel.load(tmp_path / "snn.ckpt")
    x = rng.uniform(1, 12, (50, 7))
    assert back.params == m.params
    assert np.array_equal(back.decide(x), m.decide(x))
    assert np.array_equal(simulate(back, back.encode(x))[0], simulate(m, m.encode(x))[0])
