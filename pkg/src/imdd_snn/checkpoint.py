"""Plain-text checkpoints shared by the ANN and SNN demappers.

Layout::

    model <kind>
    meta <key> <value>          (zero or more)
    array <name> <dim0> [<dim1> ...]
    <row-major values separated by spaces>
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


def save_checkpoint(path: str | Path, kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    lines = [f"model {kind}"]
    for k, v in (meta or {}).items():
        lines.append(f"meta {k} {v}")
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=float)
        lines.append(f"array {name} " + " ".join(str(d) for d in arr.shape))
        lines.append(" ".join(repr(float(x)) for x in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray], dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("model "):
        raise ValueError(f"{path}: not a checkpoint file")
    kind = lines[0].split(maxsplit=1)[1]
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    i = 1
    while i < len(lines):
        head = lines[i].split()
        if not head:
            i += 1
            continue
        if head[0] == "meta":
            meta[head[1]] = " ".join(head[2:])
            i += 1
        elif head[0] == "array":
            shape = tuple(int(d) for d in head[2:])
            values = np.array(lines[i + 1].split(), dtype=float)
            if values.size != int(np.prod(shape)):
                raise ValueError(f"{path}: array {head[1]} has {values.size} values for shape {shape}")
            arrays[head[1]] = values.reshape(shape)
            i += 2
        else:
            raise ValueError(f"{path}: unexpected line {lines[i][:40]!r}")
    return kind, arrays, meta
