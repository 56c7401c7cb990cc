import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imdd_snn.classical import (
    ClassicalDemapper,
    LinearModel,
    ThresholdDemapper,
    VolterraModel,
    build_le_features,
    build_volterra_features,
    count_bit_errors,
    decide_indices,
    equalize,
    fit_classical,
    fit_least_squares,
    fit_linear,
    fit_thresholds,
    fit_volterra,
    hard_decide,
    load_classical,
    save_classical,
    volterra_block_widths,
    volterra_size,
)
from imdd_snn.signal_chain import GRAY_LABELS, extract_chunks, gray_demap, make_dataset, simulate_link


def multiset_count(n_tap, order):
    """Independent enumerator: distinct sorted index tuples over the full product."""
    return len({tuple(sorted(t)) for t in itertools.product(range(n_tap), repeat=order)})


def test_le_features():
    A = build_le_features(np.array([[2.0], [5.0]]))
    assert A.tolist() == [[1.0, 2.0], [1.0, 5.0]]
    assert build_le_features(np.zeros((3, 7))).shape == (3, 8)
    assert np.all(build_le_features(np.random.default_rng(0).random((9, 7)))[:, 0] == 1)


def test_volterra_small_example():
    assert build_volterra_features(np.array([[1.0, 2.0]]), 2)[0].tolist() == [1, 1, 2, 1, 2, 4]


def test_volterra_seven_taps_fifth_order():
    assert volterra_block_widths(7, 5) == [1, 7, 28, 84, 210, 462]
    assert volterra_size(7, 5) == 792
    assert build_volterra_features(np.ones((2, 7)), 5).shape == (2, 792)


@pytest.mark.parametrize("n_tap", range(1, 10))
@pytest.mark.parametrize("order", range(0, 6))
def test_block_widths_match_enumeration(n_tap, order):
    assert volterra_block_widths(n_tap, order)[-1] == multiset_count(n_tap, order)


def test_volterra_columns_are_the_monomials():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3))
    F = build_volterra_features(x, 3)
    expected = [np.prod(x[:, list(idx)], axis=1) for m in range(4)
                for idx in sorted({tuple(sorted(t)) for t in itertools.product(range(3), repeat=m)})]
    assert np.allclose(F, np.array(expected).T)


# --- least squares ---------------------------------------------------------


def test_square_system_interpolates():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((6, 6))
    y = rng.standard_normal(6)
    assert np.allclose(A @ fit_least_squares(A, y), y, atol=1e-10)


def test_residual_orthogonality_and_normal_equation_oracle():
    rng = np.random.default_rng(2)
    for rows, cols in [(50, 10), (20, 5), (12, 3)]:
        A = rng.standard_normal((rows, cols))
        y = rng.standard_normal(rows)
        x = fit_least_squares(A, y)
        r = A @ x - y
        assert np.linalg.norm(A.T @ r) < 1e-8 * np.linalg.norm(A) * np.linalg.norm(r)
        x_ne = np.linalg.solve(A.T @ A, A.T @ y)
        assert np.linalg.norm(A @ x_ne - y) == pytest.approx(np.linalg.norm(r), abs=1e-8)


def test_recovers_known_linear_model():
    rng = np.random.default_rng(3)
    chunks = rng.standard_normal((400, 7))
    h = rng.standard_normal(7)
    model = fit_linear(chunks, 0.7 + chunks @ h)
    assert model.bias == pytest.approx(0.7, abs=1e-8)
    assert np.allclose(model.taps, h, atol=1e-8)


def test_rank_deficient_uses_minimum_norm(caplog):
    A = np.ones((10, 2))
    x = fit_least_squares(A, np.full(10, 2.0))
    assert np.allclose(x, [1.0, 1.0])
    assert "rank-deficient" in caplog.text


def test_equalize_examples():
    c = np.array([0.1, 0.2, 0.3])
    unit = LinearModel(taps=np.array([0.0, 1.0, 0.0]), bias=0.0)
    assert equalize(unit, c) == 0.2
    zero = LinearModel(taps=np.zeros(3), bias=1.5)
    assert equalize(zero, c) == 1.5
    with pytest.raises(ValueError):
        equalize(unit, np.zeros(5))


def test_equalize_matches_matrix_path():
    rng = np.random.default_rng(4)
    chunks = rng.standard_normal((50, 5))
    vm = VolterraModel(order=3, n_tap=5, coefficients=rng.standard_normal(volterra_size(5, 3)))
    full = build_volterra_features(chunks, 3) @ vm.coefficients
    for n in range(0, 50, 7):
        assert equalize(vm, chunks[n]) == pytest.approx(full[n], abs=1e-12)


def test_first_order_volterra_equals_linear(train_m6):
    chunks, idx = train_m6
    targets = np.array([-3.0, -1.0, 1.0, 3.0])[idx]
    le = fit_linear(chunks, targets)
    vn = fit_volterra(chunks, targets, order=1)
    assert np.allclose(vn.coefficients, np.concatenate([[le.bias], le.taps]), atol=1e-10)
    assert np.allclose(equalize(vn, chunks), equalize(le, chunks), atol=1e-10)


# --- thresholds ------------------------------------------------------------


def brute_force_thresholds(y, idx):
    """Minimum bit-error count over every ordered triple of candidate midpoints."""
    v = np.unique(y)
    cand = np.concatenate([[v[0] - 1], (v[1:] + v[:-1]) / 2, [v[-1] + 1]])
    truth = GRAY_LABELS[idx]
    best = None
    for t in itertools.combinations(cand, 3):
        errs = np.sum(GRAY_LABELS[np.searchsorted(t, y, side="right")] != truth)
        best = errs if best is None else min(best, errs)
    return best


def test_point_masses_give_interval_midpoints():
    y = np.repeat([-3.0, -1.0, 1.0, 3.0], 5)
    idx = np.repeat(np.arange(4), 5)
    assert fit_thresholds(y, idx).boundaries.tolist() == [-2.0, 0.0, 2.0]


def test_two_cluster_boundary_against_grid_scan():
    rng = np.random.default_rng(5)
    n = 20000
    y = np.concatenate([rng.normal(-10, 0.5, n), rng.normal(0, 0.5, n), rng.normal(2, 0.5, n), rng.normal(12, 0.5, n)])
    idx = np.repeat(np.arange(4), n)
    dm = fit_thresholds(y, idx)
    assert dm.boundaries[1] == pytest.approx(1.0, abs=0.05)
    grid = np.arange(-1.0, 3.0, 1e-3)
    b1_true = GRAY_LABELS[idx][:, 0]
    grid_errs = [np.sum((y >= t) != b1_true) for t in grid]
    # the MSB depends on the middle boundary only
    msb_errs = np.sum(GRAY_LABELS[decide_indices(dm, y)][:, 0] != b1_true)
    assert msb_errs <= min(grid_errs)
    assert abs(dm.boundaries[1] - grid[int(np.argmin(grid_errs))]) < 0.05


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 9), st.floats(0.2, 1.5))
def test_threshold_search_equals_brute_force(seed, per_class, spread):
    rng = np.random.default_rng(seed)
    idx = np.repeat(np.arange(4), per_class)
    y = np.round(rng.normal(idx.astype(float), spread), 2)
    dm = fit_thresholds(y, idx)
    assert count_bit_errors(dm, y, idx) == brute_force_thresholds(y, idx)


def test_missing_class_rejected():
    with pytest.raises(ValueError, match="absent"):
        fit_thresholds(np.array([0.0, 1.0, 2.0]), np.array([0, 1, 2]))


def test_boundaries_not_transmit_midpoints_after_square_law(params):
    ds = make_dataset(params.replace(fiber_length=0.0), None, "train", seed=0)
    model = fit_classical("le1", *ds.chunks(1), params.alphabet)
    assert np.max(np.abs(model.slicer.boundaries - np.array([-2.0, 0.0, 2.0]))) > 0.1


def test_hard_decide_rules():
    dm = ThresholdDemapper(np.array([-2.0, 0.0, 2.0]))
    assert hard_decide(dm, -5.0).tolist() == [0, 0]
    assert hard_decide(dm, 0.0).tolist() == gray_demap(2).tolist()
    assert hard_decide(dm, 2.0).tolist() == gray_demap(3).tolist()
    with pytest.raises(ValueError):
        ThresholdDemapper(np.array([0.0, 0.0, 1.0]))


def test_zero_ber_on_separable_data():
    rng = np.random.default_rng(6)
    idx = rng.integers(0, 4, 1000)
    y = idx * 3.0 + rng.uniform(-1, 1, 1000)
    dm = fit_thresholds(y, idx)
    assert count_bit_errors(dm, y, idx) == 0


# --- end to end on the link -----------------------------------------------


def test_training_ber_non_increasing_in_taps(params):
    ds = make_dataset(params, -4.0, "train", seed=1)
    chunks, idx = ds.chunks(7)
    errs = [count_bit_errors(fit_classical_taps(chunks, idx, n, params), equalize_taps(chunks, idx, n, params), idx)
            for n in (1, 3, 5, 7)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def fit_classical_taps(chunks, idx, n, params):
    half = (7 - n) // 2
    c = chunks[:, half : half + n]
    eq = fit_linear(c, np.asarray(params.alphabet)[idx])
    return fit_thresholds(equalize(eq, c), idx)


def equalize_taps(chunks, idx, n, params):
    half = (7 - n) // 2
    c = chunks[:, half : half + n]
    return equalize(fit_linear(c, np.asarray(params.alphabet)[idx]), c)


def test_memory_helps_without_noise(params):
    train = make_dataset(params, None, "train", seed=0, n_frames=2)
    test = make_dataset(params, None, "test", seed=0, n_frames=2)
    bers = {}
    for kind in ("le1", "le7"):
        x, i = train.chunks(7)
        m = fit_classical(kind, x, i, params.alphabet)
        xt, it = test.chunks(7)
        xt = xt[:, 3:4] if kind == "le1" else xt
        bers[kind] = np.mean(gray_demap(m.decide(xt)) != gray_demap(it))
    assert bers["le1"] > bers["le7"]


def test_model_file_roundtrip(train_m6, tmp_path, params):
    chunks, idx = train_m6
    for kind in ("le7", "vnle"):
        m = fit_classical(kind, chunks[:3000], idx[:3000], params.alphabet)
        save_classical(tmp_path / kind, m)
        back = load_classical(tmp_path / kind)
        assert np.array_equal(back.decide(chunks[:500]), m.decide(chunks[:500]))
        assert np.array_equal(back.slicer.boundaries, m.slicer.boundaries)
