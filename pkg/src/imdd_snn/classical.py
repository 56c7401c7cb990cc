"""Least-squares linear and Volterra equalizers followed by a BER-optimal slicer."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .signal_chain import GRAY_LABELS, gray_demap

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearModel:
    taps: NDArray[np.float64]
    bias: float

    @property
    def n_tap(self) -> int:
        return len(self.taps)

    def __post_init__(self):
        if self.n_tap % 2 == 0:
            raise ValueError("n_tap must be odd")


@dataclass(frozen=True)
class VolterraModel:
    order: int
    n_tap: int
    coefficients: NDArray[np.float64]

    def __post_init__(self):
        if len(self.coefficients) != volterra_size(self.n_tap, self.order):
            raise ValueError("coefficient count does not match order and n_tap")


@dataclass(frozen=True)
class ThresholdDemapper:
    boundaries: NDArray[np.float64]

    def __post_init__(self):
        b = np.asarray(self.boundaries)
        if b.shape != (3,) or np.any(np.diff(b) <= 0):
            raise ValueError("need 3 strictly increasing boundaries")


# --- features --------------------------------------------------------------


def build_le_features(chunks: NDArray) -> NDArray[np.float64]:
    chunks = np.atleast_2d(np.asarray(chunks, dtype=float))
    return np.hstack([np.ones((len(chunks), 1)), chunks])


def volterra_block_widths(n_tap: int, order: int) -> list[int]:
    return [comb(m + n_tap - 1, m) for m in range(order + 1)]


def volterra_size(n_tap: int, order: int) -> int:
    return sum(volterra_block_widths(n_tap, order))


def volterra_index_sets(n_tap: int, order: int) -> list[tuple[int, ...]]:
    """Monomial index tuples j <= k <= ... in output column order."""
    out: list[tuple[int, ...]] = []
    for m in range(order + 1):
        out.extend(itertools.combinations_with_replacement(range(n_tap), m))
    return out


def build_volterra_features(chunks: NDArray, order: int) -> NDArray[np.float64]:
    if order < 0:
        raise ValueError("order must be non-negative")
    chunks = np.atleast_2d(np.asarray(chunks, dtype=float))
    rows, n_tap = chunks.shape
    cols: dict[tuple[int, ...], NDArray] = {(): np.ones(rows)}
    out = np.empty((rows, volterra_size(n_tap, order)))
    for i, idx in enumerate(volterra_index_sets(n_tap, order)):
        if idx not in cols:
            cols[idx] = cols[idx[:-1]] * chunks[:, idx[-1]]
        out[:, i] = cols[idx]
    return out


# --- fitting ---------------------------------------------------------------


def fit_least_squares(A: NDArray, y: NDArray) -> NDArray[np.float64]:
    """Minimum-norm least-squares solution via pivoted QR on column-equilibrated A."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.shape[0] != len(y):
        raise ValueError("targets do not align with feature rows")
    if A.shape[0] < A.shape[1]:
        raise ValueError("need at least as many rows as columns")
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    x, _, rank, _ = scipy.linalg.lstsq(A / scale, y, lapack_driver="gelsy")
    if rank < A.shape[1]:
        log.warning("rank-deficient feature matrix (rank %d of %d); using minimum-norm solution", rank, A.shape[1])
    return x / scale


def fit_linear(chunks: NDArray, targets: NDArray) -> LinearModel:
    x = fit_least_squares(build_le_features(chunks), targets)
    return LinearModel(taps=x[1:], bias=float(x[0]))


def fit_volterra(chunks: NDArray, targets: NDArray, order: int = 5) -> VolterraModel:
    x = fit_least_squares(build_volterra_features(chunks, order), targets)
    return VolterraModel(order=order, n_tap=np.shape(chunks)[1], coefficients=x)


def equalize(model: LinearModel | VolterraModel, chunks: NDArray) -> NDArray[np.float64] | float:
    """Equalized output for one chunk (scalar) or a stack of chunks."""
    chunks = np.asarray(chunks, dtype=float)
    single = chunks.ndim == 1
    chunks = np.atleast_2d(chunks)
    if chunks.shape[1] != model.n_tap:
        raise ValueError(f"chunk length {chunks.shape[1]} != n_tap {model.n_tap}")
    if isinstance(model, LinearModel):
        out = model.bias + chunks @ model.taps
    else:
        out = build_volterra_features(chunks, model.order) @ model.coefficients
    return float(out[0]) if single else out


# --- thresholds ------------------------------------------------------------


def _tied_midpoint(costs: NDArray, best: int, lo: int, hi: int, cand: NDArray, values: NDArray) -> float:
    """Midpoint of the contiguous run of equal-cost candidates around ``best``.

    Candidate i sits between sorted sample values[i-1] and values[i]; the run
    [a, b] spans the continuous threshold interval (values[a-1], values[b]).
    """
    a = best
    while a - 1 >= lo and costs[a - 1] == costs[best]:
        a -= 1
    b = best
    while b + 1 <= hi and costs[b + 1] == costs[best]:
        b += 1
    if a == b:
        return float(cand[best])
    left = values[a - 1] if a >= 1 else cand[a]
    right = values[b] if b < len(values) else cand[b]
    return float(0.5 * (left + right))


def fit_thresholds(equalized: NDArray, indices: NDArray) -> ThresholdDemapper:
    """Three boundaries minimizing the Gray-labelled bit error count.

    With Gray labels the MSB depends only on the middle boundary and the LSB
    on the outer two, so the error count is f(t0) + g(t1) + h(t2); it is
    minimized exactly over all sample midpoints subject to t0 < t1 < t2.
    """
    yh = np.asarray(equalized, dtype=float)
    idx = np.asarray(indices)
    if len(yh) != len(idx):
        raise ValueError("length mismatch")
    counts = np.bincount(idx, minlength=4)
    if np.any(counts == 0):
        raise ValueError(f"class(es) {np.flatnonzero(counts == 0).tolist()} absent from training data")

    order = np.argsort(yh, kind="stable")
    ys = yh[order]
    bits = GRAY_LABELS[idx[order]].astype(np.int64)
    values, first = np.unique(ys, return_index=True)
    # candidate i splits samples into values[:i] (below) and values[i:] (above)
    cand = np.concatenate([[values[0] - 1.0], 0.5 * (values[1:] + values[:-1]), [values[-1] + 1.0]])
    bounds = np.append(first, len(ys))

    def below(col, val):
        c = np.concatenate([[0], np.cumsum(bits[:, col] == val)])
        return c[bounds]

    n1 = below(1, 1)
    n0 = below(1, 0)
    m1 = below(0, 1)
    m0 = below(0, 0)
    tot1, tot0 = n1[-1], n0[-1]
    # LSB: errors from t0 = ones below + zeros above t0; t2 adds ones above, removes zeros above
    f = n1 + (tot0 - n0)
    h = (tot1 - n1) - (tot0 - n0)
    # MSB decided 1 above t1
    g = m1 + (m0[-1] - m0)

    K = len(cand)
    if K < 3:
        raise ValueError("not enough distinct samples to place 3 boundaries")
    inf = np.iinfo(np.int64).max // 4
    f_pref = np.minimum.accumulate(f)
    best_f_arg = np.zeros(K, dtype=np.int64)
    run = 0
    for i in range(K):
        if f[i] < f[run]:
            run = i
        best_f_arg[i] = run
    fg = np.full(K, inf)
    fg[1:] = g[1:] + f_pref[:-1]
    fg_pref = np.minimum.accumulate(fg)
    total = np.full(K, inf)
    total[2:] = h[2:] + fg_pref[1:-1]
    k = int(np.argmin(total))
    j = int(np.argmin(fg[:k]))
    i = int(best_f_arg[j - 1])

    t0 = _tied_midpoint(f, i, 0, j - 1, cand, values)
    t1 = _tied_midpoint(g, j, i + 1, k - 1, cand, values)
    t2 = _tied_midpoint(h, k, j + 1, K - 1, cand, values)
    return ThresholdDemapper(boundaries=np.array([t0, t1, t2]))


def decide_indices(demapper: ThresholdDemapper, equalized) -> NDArray[np.int64]:
    return np.searchsorted(demapper.boundaries, equalized, side="right")


def hard_decide(demapper: ThresholdDemapper, equalized) -> NDArray[np.uint8]:
    """Bit pair(s) for equalized sample(s); a sample on a boundary goes to the upper interval."""
    return gray_demap(decide_indices(demapper, equalized))


def count_bit_errors(demapper: ThresholdDemapper, equalized, indices) -> int:
    return int(np.sum(hard_decide(demapper, equalized) != gray_demap(indices)))


# --- combined demapper and persistence -------------------------------------


@dataclass(frozen=True)
class ClassicalDemapper:
    """Equalizer + slicer; ``decide`` maps chunks to symbol indices."""

    equalizer: LinearModel | VolterraModel
    slicer: ThresholdDemapper

    @property
    def n_tap(self) -> int:
        return self.equalizer.n_tap

    def decide(self, chunks: NDArray) -> NDArray[np.int64]:
        """Symbol indices; chunks wider than ``n_tap`` are centre-cropped."""
        chunks = np.atleast_2d(chunks)
        half = (chunks.shape[1] - self.n_tap) // 2
        if half > 0:
            chunks = chunks[:, half : half + self.n_tap]
        return decide_indices(self.slicer, equalize(self.equalizer, chunks))


CLASSICAL_KINDS = {"le1": ("le", 1), "le7": ("le", 7), "vnle": ("vnle", 7)}


def fit_classical(kind: str, chunks: NDArray, indices: NDArray, alphabet, order: int = 5) -> ClassicalDemapper:
    """Fit equalizer on the chunk centres' transmit symbols, then the slicer on its output."""
    targets = np.asarray(alphabet, dtype=float)[indices]
    family, n_tap = CLASSICAL_KINDS[kind]
    if chunks.shape[1] != n_tap:
        half = (chunks.shape[1] - n_tap) // 2
        if half < 0:
            raise ValueError("chunks narrower than the requested equalizer")
        chunks = chunks[:, half : half + n_tap]
    eq = fit_linear(chunks, targets) if family == "le" else fit_volterra(chunks, targets, order)
    slicer = fit_thresholds(equalize(eq, chunks), indices)
    return ClassicalDemapper(eq, slicer)


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_classical(path: str | Path, model: ClassicalDemapper) -> None:
    eq = model.equalizer
    lines = []
    if isinstance(eq, LinearModel):
        lines += ["type le", f"n_tap {eq.n_tap}", "order 1", f"coefficients {eq.bias!r} {_fmt(eq.taps)}"]
    else:
        lines += ["type vnle", f"n_tap {eq.n_tap}", f"order {eq.order}", f"coefficients {_fmt(eq.coefficients)}"]
    lines.append(f"boundaries {_fmt(model.slicer.boundaries)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_classical(path: str | Path) -> ClassicalDemapper:
    fields = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, rest = line.partition(" ")
            fields[key] = rest.strip()
    coeffs = np.array(fields["coefficients"].split(), dtype=float)
    if fields["type"] == "le":
        eq: LinearModel | VolterraModel = LinearModel(taps=coeffs[1:], bias=float(coeffs[0]))
    elif fields["type"] == "vnle":
        eq = VolterraModel(order=int(fields["order"]), n_tap=int(fields["n_tap"]), coefficients=coeffs)
    else:
        raise ValueError(f"unknown model type {fields['type']!r}")
    if eq.n_tap != int(fields["n_tap"]):
        raise ValueError("n_tap does not match coefficient count")
    return ClassicalDemapper(eq, ThresholdDemapper(np.array(fields["boundaries"].split(), dtype=float)))
