"""Dense tanh network demapper (7-40-20-4) trained with softmax cross-entropy."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from . import autograd as ag
from .checkpoint import load_checkpoint, save_checkpoint
from .signal_chain import gray_demap

ANN_SIZES = (7, 40, 20, 4)


@dataclass
class DenseLayer:
    weights: ag.Tensor
    biases: ag.Tensor

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64) -> "DenseLayer":
        bound = 1 / np.sqrt(n_in)
        return cls(
            ag.parameter(rng.uniform(-bound, bound, size=(n_out, n_in)), dtype),
            ag.parameter(rng.uniform(-bound, bound, size=n_out), dtype),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


def dense_forward(layer: DenseLayer, x) -> ag.Tensor:
    x = ag.as_tensor(x)
    if x.shape[-1] != layer.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} != layer fan-in {layer.shape[1]}")
    return ag.affine(x, layer.weights, layer.biases)


def tanh_forward(x) -> ag.Tensor:
    return ag.tanh(ag.as_tensor(x))


@dataclass
class AnnModel:
    layers: list[DenseLayer]
    # fixed input standardization, (x - shift) * scale
    input_shift: float = 0.0
    input_scale: float = 1.0
    dtype: type = np.float64

    @classmethod
    def init(cls, rng: np.random.Generator, sizes=ANN_SIZES, dtype=np.float64) -> "AnnModel":
        layers = [DenseLayer.init(a, b, rng, dtype) for a, b in zip(sizes[:-1], sizes[1:])]
        return cls(layers, dtype=dtype)

    @property
    def params(self) -> list[ag.Tensor]:
        return [p for layer in self.layers for p in (layer.weights, layer.biases)]

    def fit_input_scaling(self, chunks: NDArray) -> None:
        self.input_shift = float(np.mean(chunks))
        self.input_scale = float(1 / np.std(chunks))

    def _prep(self, chunks) -> NDArray:
        x = np.asarray(chunks, dtype=self.dtype)
        if x.shape[-1] != self.layers[0].shape[1]:
            raise ValueError(f"chunk length {x.shape[-1]} != {self.layers[0].shape[1]}")
        return ((x - self.input_shift) * self.input_scale).astype(self.dtype)

    def forward(self, chunks) -> ag.Tensor:
        h = ag.as_tensor(self._prep(chunks))
        for layer in self.layers[:-1]:
            h = tanh_forward(dense_forward(layer, h))
        return dense_forward(self.layers[-1], h)

    def logits(self, chunks) -> NDArray:
        """Forward pass without recording a tape."""
        h = self._prep(chunks)
        for layer in self.layers[:-1]:
            h = np.tanh(h @ layer.weights.data.T + layer.biases.data)
        last = self.layers[-1]
        return h @ last.weights.data.T + last.biases.data

    def decide(self, chunks) -> NDArray[np.int64]:
        return np.argmax(self.logits(np.atleast_2d(chunks)), axis=-1)

    @property
    def n_tap(self) -> int:
        return self.layers[0].shape[1]

    def copy(self) -> "AnnModel":
        layers = [DenseLayer(ag.parameter(l.weights.data, self.dtype), ag.parameter(l.biases.data, self.dtype))
                  for l in self.layers]
        return AnnModel(layers, self.input_shift, self.input_scale, self.dtype)

    def save(self, path: str | Path) -> None:
        arrays = {}
        for i, layer in enumerate(self.layers):
            arrays[f"layer{i}.weights"] = layer.weights.data
            arrays[f"layer{i}.biases"] = layer.biases.data
        meta = {"input_shift": repr(self.input_shift), "input_scale": repr(self.input_scale),
                "dtype": np.dtype(self.dtype).name}
        save_checkpoint(path, "ann", arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> "AnnModel":
        kind, arrays, meta = load_checkpoint(path)
        if kind != "ann":
            raise ValueError(f"expected an ann checkpoint, got {kind!r}")
        dtype = np.dtype(meta.get("dtype", "float64")).type
        n = len(arrays) // 2
        layers = [DenseLayer(ag.parameter(arrays[f"layer{i}.weights"], dtype), ag.parameter(arrays[f"layer{i}.biases"], dtype))
                  for i in range(n)]
        return cls(layers, float(meta["input_shift"]), float(meta["input_scale"]), dtype)


def ann_demap(model: AnnModel, chunk) -> tuple[NDArray, NDArray[np.uint8]]:
    """Log-probabilities and Gray bits for one chunk; argmax ties go to the lower index."""
    logp = ag.log_softmax_np(model.logits(np.atleast_2d(chunk)))[0]
    return logp, gray_demap(int(np.argmax(logp)))


def ann_loss(model: AnnModel, chunks, targets) -> float:
    return float(-np.mean(ag.log_softmax_np(model.logits(chunks))[np.arange(len(targets)), targets]))


def ann_train_epoch(model: AnnModel, chunks: NDArray, targets: NDArray, adam: ag.Adam, batch_size: int,
                    rng: np.random.Generator) -> float:
    """One shuffled mini-batch pass; returns the mean training loss."""
    if len(chunks) == 0:
        raise ValueError("empty training set")
    perm = rng.permutation(len(chunks))
    params = model.params
    losses = []
    for start in range(0, len(perm), batch_size):
        idx = perm[start : start + batch_size]
        loss = ag.softmax_cross_entropy(model.forward(chunks[idx]), targets[idx])
        if not np.isfinite(loss.data):
            raise FloatingPointError("non-finite ANN loss")
        adam.step(ag.backward(loss, params))
        losses.append(float(loss.data) * len(idx))
    return float(np.sum(losses) / len(perm))
