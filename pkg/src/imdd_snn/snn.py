"""Spiking demapper: distance-coded input spikes -> LIF hidden layer -> LI readout.

Time runs on a fixed grid of ``n_steps`` forward-Euler steps. Within a step
the synaptic current is updated first (decay plus the weighted spikes
arriving in that step), then the membrane, then threshold and reset.

Single-sample arrays are neuron x time; batched arrays are (batch, time, neuron).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from . import autograd as ag
from .checkpoint import load_checkpoint, save_checkpoint
from .signal_chain import gray_demap


@dataclass(frozen=True)
class SnnParams:
    # input encoding (times in microseconds)
    enc_scale: float = 8.0
    enc_offset: float = 0.0
    n_ref: int = 10
    ref_spacing: float = 7 / 9
    cutoff: float = 15.0
    n_tap: int = 7
    # network
    n_hidden: int = 40
    n_out: int = 4
    tau_mem: float = 6.0
    tau_syn: float = 6.0
    v_leak: float = 0.0
    v_reset: float = 0.0
    threshold: float = 1.0
    leak_resistance: float = 1.0
    dt: float = 0.5
    duration: float = 30.0
    surrogate_beta: float = 10.0

    def __post_init__(self):
        steps = self.duration / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("duration must be an integer number of steps")
        if self.cutoff > self.duration:
            raise ValueError("cutoff must not exceed duration")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def n_inputs(self) -> int:
        return self.n_tap * self.n_ref

    @property
    def ref_points(self) -> NDArray[np.float64]:
        return self.ref_spacing * np.arange(self.n_ref)

    @property
    def cutoff_step(self) -> int:
        return math.ceil(self.cutoff / self.dt - 1e-9)

    def replace(self, **changes) -> "SnnParams":
        return dataclasses.replace(self, **changes)


# --- encoding --------------------------------------------------------------


def spike_steps(chunks: NDArray, params: SnnParams) -> NDArray[np.int64]:
    """Spike step per input neuron, -1 for silent; shape (batch, n_inputs).

    Neuron ``l * n_ref + i`` encodes tap ``l`` against reference point ``i``.
    """
    chunks = np.atleast_2d(np.asarray(chunks, dtype=float))
    if chunks.shape[1] != params.n_tap:
        raise ValueError(f"chunk length {chunks.shape[1]} != n_tap {params.n_tap}")
    t = params.enc_scale * np.abs(chunks[:, :, None] - params.ref_points[None, None, :]) + params.enc_offset
    steps = np.floor(t / params.dt + 1e-9).astype(np.int64)
    steps[t >= params.cutoff] = -1
    return steps.reshape(len(chunks), -1)


def encode_spikes(chunk: NDArray, params: SnnParams) -> NDArray[np.uint8]:
    """Binary raster (n_inputs x n_steps) for a single chunk."""
    steps = spike_steps(chunk, params)[0]
    raster = np.zeros((params.n_inputs, params.n_steps), dtype=np.uint8)
    on = steps >= 0
    raster[np.flatnonzero(on), steps[on]] = 1
    return raster


def raster_to_steps(raster: NDArray) -> NDArray[np.int64]:
    raster = np.asarray(raster)
    if np.any(raster.sum(axis=1) > 1):
        raise ValueError("input neurons may spike at most once")
    return np.where(raster.any(axis=1), raster.argmax(axis=1), -1)


# --- neuron dynamics -------------------------------------------------------


@dataclass
class NeuronState:
    current: NDArray | ag.Tensor
    v: NDArray | ag.Tensor

    @classmethod
    def zeros(cls, shape) -> "NeuronState":
        return cls(np.zeros(shape), np.zeros(shape))


def hard_threshold(v: NDArray, threshold: float) -> NDArray:
    return (v >= threshold).astype(float)


def superspike_surrogate(v, params: SnnParams):
    """Pseudo-derivative of the spike threshold at membrane value ``v``."""
    return 1.0 / (params.surrogate_beta * np.abs(np.asarray(v) - params.threshold) + 1.0) ** 2


def _check_finite(*arrays):
    for a in arrays:
        data = a.data if isinstance(a, ag.Tensor) else a
        if not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite neuron state (exploding weights?)")


def li_layer_step(state: NeuronState, weighted_input, params: SnnParams) -> NeuronState:
    """Euler step of leaky integrators: I += -I dt/tau_s + input, then
    v += dt/tau_m * ((v_l - v) + R I)."""
    k = params.dt / params.tau_mem
    current = ag.lincomb([(1.0 - params.dt / params.tau_syn, state.current), (1.0, weighted_input)])
    v = ag.lincomb([(1.0 - k, state.v), (k * params.leak_resistance, current)], k * params.v_leak)
    _check_finite(current, v)
    return NeuronState(current, v)


def lif_layer_step(state: NeuronState, weighted_input, params: SnnParams, spike_fn=hard_threshold):
    """One Euler step of LIF neurons; returns (new state, spikes).

    ``spike_fn(v, threshold)`` produces the spikes; on tape tensors pass a
    surrogate-gradient step. The reset uses the spike values as constants.
    """
    new = li_layer_step(state, weighted_input, params)
    z = spike_fn(new.v, params.threshold)
    zc = z.data if isinstance(z, ag.Tensor) else z
    v = ag.lincomb([(1.0 - zc, new.v)], params.v_reset * zc)
    return NeuronState(new.current, v), z


# --- model -----------------------------------------------------------------


@dataclass
class SnnModel:
    w_ih: ag.Tensor
    w_ho: ag.Tensor
    params: SnnParams = SnnParams()
    # fixed affine map from received samples to the encoder domain
    input_shift: float = 0.0
    input_scale: float = 1.0

    @classmethod
    def init(cls, params: SnnParams, rng: np.random.Generator, ih_gain: float = 3.0, ho_gain: float = 1.0) -> "SnnModel":
        """Uniform weights in +-gain/sqrt(fan_in). At gain 1 the sparse input
        raster rarely drives a hidden neuron over threshold, so the hidden layer
        starts silent; gain 3 starts with most samples evoking hidden spikes."""
        b_ih = ih_gain / np.sqrt(params.n_inputs)
        b_ho = ho_gain / np.sqrt(params.n_hidden)
        return cls(
            ag.parameter(rng.uniform(-b_ih, b_ih, size=(params.n_inputs, params.n_hidden))),
            ag.parameter(rng.uniform(-b_ho, b_ho, size=(params.n_hidden, params.n_out))),
            params,
        )

    @property
    def n_tap(self) -> int:
        return self.params.n_tap

    @property
    def weights(self) -> list[ag.Tensor]:
        return [self.w_ih, self.w_ho]

    def fit_input_scaling(self, chunks: NDArray, quantile: float = 1e-3) -> None:
        """Map the [q, 1-q] range of training samples onto the reference-point span."""
        lo, hi = np.quantile(chunks, [quantile, 1 - quantile])
        self.input_scale = float(self.params.ref_points[-1] / (hi - lo))
        self.input_shift = float(lo)

    def encode(self, chunks: NDArray) -> NDArray[np.int64]:
        x = (np.atleast_2d(np.asarray(chunks, dtype=float)) - self.input_shift) * self.input_scale
        return spike_steps(x, self.params)

    def decide(self, chunks: NDArray, batch: int = 4096) -> NDArray[np.int64]:
        chunks = np.atleast_2d(chunks)
        out = []
        for s in range(0, len(chunks), batch):
            traces = simulate(self, self.encode(chunks[s : s + batch]))[0]
            out.append(np.argmax(traces.max(axis=1), axis=-1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def copy(self) -> "SnnModel":
        return SnnModel(ag.parameter(self.w_ih.data), ag.parameter(self.w_ho.data), self.params,
                        self.input_shift, self.input_scale)

    def save(self, path: str | Path) -> None:
        meta = {"input_shift": repr(self.input_shift), "input_scale": repr(self.input_scale)}
        meta.update({f"param.{k}": repr(v) for k, v in dataclasses.asdict(self.params).items()})
        save_checkpoint(path, "snn", {"w_ih": self.w_ih.data, "w_ho": self.w_ho.data}, meta)

    @classmethod
    def load(cls, path: str | Path) -> "SnnModel":
        kind, arrays, meta = load_checkpoint(path)
        if kind != "snn":
            raise ValueError(f"expected an snn checkpoint, got {kind!r}")
        types = {f.name: f.type for f in dataclasses.fields(SnnParams)}
        pvals = {k[6:]: (int if types[k[6:]] == "int" else float)(v) for k, v in meta.items() if k.startswith("param.")}
        return cls(ag.parameter(arrays["w_ih"]), ag.parameter(arrays["w_ho"]), SnnParams(**pvals),
                   float(meta["input_shift"]), float(meta["input_scale"]))


@dataclass
class LayerTrace:
    """Per-step records, each shaped (batch, time, neuron)."""

    v: NDArray
    current: NDArray
    spikes: NDArray | None = None


def simulate(model: SnnModel, steps: NDArray[np.int64], frozen_hidden: NDArray | None = None
             ) -> tuple[NDArray, LayerTrace, LayerTrace]:
    """Batched forward pass without a tape.

    Returns output membrane traces (batch, time, n_out) plus hidden and
    output layer records. ``frozen_hidden`` (batch, time, n_hidden) replaces
    the hidden spikes with a fixed pattern.
    """
    p = model.params
    B = len(steps)
    w_ih, w_ho = model.w_ih.data, model.w_ho.data
    hid = NeuronState.zeros((B, p.n_hidden))
    out = NeuronState.zeros((B, p.n_out))
    rec = {k: np.empty((B, p.n_steps, n)) for k, n in
           [("hv", p.n_hidden), ("hi", p.n_hidden), ("hz", p.n_hidden), ("ov", p.n_out), ("oi", p.n_out)]}
    for t in range(p.n_steps):
        hid, z = lif_layer_step(hid, (steps == t).astype(float) @ w_ih, p)
        if frozen_hidden is not None:
            z = frozen_hidden[:, t, :]
        out = li_layer_step(out, z @ w_ho, p)
        rec["hv"][:, t], rec["hi"][:, t], rec["hz"][:, t] = hid.v, hid.current, z
        rec["ov"][:, t], rec["oi"][:, t] = out.v, out.current
    return (rec["ov"], LayerTrace(rec["hv"], rec["hi"], rec["hz"]), LayerTrace(rec["ov"], rec["oi"]))


def snn_forward(model: SnnModel, raster: NDArray) -> tuple[NDArray, NDArray, LayerTrace]:
    """Single-raster forward pass: (output traces n_out x T, hidden spikes n_hidden x T, hidden trace)."""
    if raster.shape != (model.params.n_inputs, model.params.n_steps):
        raise ValueError(f"raster shape {raster.shape} != {(model.params.n_inputs, model.params.n_steps)}")
    traces, hidden, _ = simulate(model, raster_to_steps(raster)[None, :])
    return traces[0].T, hidden.spikes[0].T, hidden


def forward_tape(model: SnnModel, steps: NDArray[np.int64], frozen_hidden: NDArray | None = None) -> ag.Tensor:
    """Recorded forward pass; returns output traces as a (batch, time, n_out) tensor."""
    p = model.params
    B = len(steps)

    def spike(v, threshold):
        return ag.heaviside_surrogate(v, lambda u: superspike_surrogate(u, p), threshold)

    hid = NeuronState.zeros((B, p.n_hidden))
    out = NeuronState.zeros((B, p.n_out))
    traces = []
    for t in range(p.n_steps):
        hid, z = lif_layer_step(hid, ag.matmul((steps == t).astype(float), model.w_ih), p, spike)
        if frozen_hidden is not None:
            z = ag.as_tensor(frozen_hidden[:, t, :])
        out = li_layer_step(out, ag.matmul(z, model.w_ho), p)
        traces.append(out.v)
    return ag.stack(traces, axis=1)


def decode_max_over_time(traces: NDArray) -> tuple[NDArray, int, NDArray[np.uint8]]:
    """Scores, symbol index and bits from single-sample output traces (n_out x T)."""
    scores = np.max(traces, axis=-1)
    idx = int(np.argmax(scores))
    return scores, idx, gray_demap(idx)


def snn_loss(traces: ag.Tensor, targets) -> ag.Tensor:
    """Cross-entropy over max-over-time scores of (batch, time, n_out) traces."""
    return ag.softmax_cross_entropy(ag.max_over(ag.as_tensor(traces), axis=1), targets)


def snn_train_epoch(model: SnnModel, chunks: NDArray, targets: NDArray, adam: ag.Adam, batch_size: int,
                    rng: np.random.Generator) -> float:
    if len(chunks) == 0:
        raise ValueError("empty training set")
    steps = model.encode(chunks)
    perm = rng.permutation(len(chunks))
    total = 0.0
    for s in range(0, len(perm), batch_size):
        idx = perm[s : s + batch_size]
        loss = snn_loss(forward_tape(model, steps[idx]), targets[idx])
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite SNN loss at batch {s // batch_size}")
        adam.step(ag.backward(loss, model.weights))
        total += float(loss.data) * len(idx)
    return total / len(perm)


def snn_eval_loss(model: SnnModel, chunks: NDArray, targets: NDArray) -> float:
    scores = simulate(model, model.encode(chunks))[0].max(axis=1)
    return float(-np.mean(ag.log_softmax_np(scores)[np.arange(len(targets)), targets]))


def hidden_silent_fraction(model: SnnModel, chunks: NDArray) -> float:
    """Fraction of samples for which no hidden neuron spikes."""
    _, hidden, _ = simulate(model, model.encode(chunks))
    return float(np.mean(hidden.spikes.sum(axis=(1, 2)) == 0))
