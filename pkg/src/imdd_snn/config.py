"""Run configuration: one flat ``key = value`` text file per run.

Link and SNN parameters live under ``link.`` and ``snn.`` prefixes; lists are
comma separated. Lines starting with ``#`` are comments.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .signal_chain import LinkParams
from .snn import SnnParams

DEMAPPERS = ("le1", "le7", "vnle", "ann", "snn")


@dataclass(frozen=True)
class SweepSchedule:
    noise_levels_db: tuple[float, ...] = tuple(float(x) for x in range(-10, -1))
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs_per_level: int = 100
    validation_size: int = 2000
    patience: int = 30

    def __post_init__(self):
        levels = list(self.noise_levels_db)
        if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("noise levels must be non-empty and strictly increasing")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.epochs_per_level < 1 or self.validation_size < 1 or self.patience < 1:
            raise ValueError("epochs, validation size and patience must be positive")


@dataclass(frozen=True)
class RunConfig:
    link: LinkParams = LinkParams()
    snn: SnnParams = SnnParams()
    schedule: SweepSchedule = SweepSchedule()
    demappers: tuple[str, ...] = DEMAPPERS
    # root seed for all simulated data; model seeds come from the schedule
    seed: int = 0
    output_dir: str = "runs/default"
    n_tap: int = 7
    volterra_order: int = 5
    classical_train_frames: int = 10
    # neural training
    batch_size: int = 256
    ann_lr: float = 1e-3
    snn_lr: float = 3e-3
    snn_init_gain: float = 3.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ann_precision: str = "float64"
    # symbols used to rank seeds at each level
    selection_size: int = 20000
    # BER evaluation
    min_errors: int = 2000
    bit_cap: int = 20_000_000

    def __post_init__(self):
        unknown = set(self.demappers) - set(DEMAPPERS)
        if unknown:
            raise ValueError(f"unknown demappers: {sorted(unknown)}")
        if self.n_tap != self.snn.n_tap:
            raise ValueError("n_tap must equal snn.n_tap")
        if self.ann_precision not in ("float32", "float64"):
            raise ValueError("ann_precision must be float32 or float64")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_items(self) -> dict[str, str]:
        items = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                prefix = "" if f.name == "schedule" else f.name + "."
                for sub in dataclasses.fields(value):
                    items[prefix + sub.name] = _format(getattr(value, sub.name))
            else:
                items[f.name] = _format(value)
        return items

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items().items())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "RunConfig":
        groups: dict[str, dict] = {"link": {}, "snn": {}, "schedule": {}, "top": {}}
        targets = {
            "link": {f.name: f for f in dataclasses.fields(LinkParams)},
            "snn": {f.name: f for f in dataclasses.fields(SnnParams)},
            "schedule": {f.name: f for f in dataclasses.fields(SweepSchedule)},
            "top": {f.name: f for f in dataclasses.fields(cls) if f.name not in ("link", "snn", "schedule")},
        }
        for key, raw in items.items():
            prefix, _, name = key.partition(".")
            if name and prefix in ("link", "snn"):
                group = prefix
            elif key in targets["schedule"]:
                group, name = "schedule", key
            elif key in targets["top"]:
                group, name = "top", key
            else:
                raise ValueError(f"unknown config key {key!r}")
            if name not in targets[group]:
                raise ValueError(f"unknown config key {key!r}")
            groups[group][name] = _parse(raw, targets[group][name], key)
        return cls(
            link=LinkParams(**groups["link"]),
            snn=SnnParams(**groups["snn"]),
            schedule=SweepSchedule(**groups["schedule"]),
            **groups["top"],
        )

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.from_items(parse_items(text))

    @classmethod
    def load(cls, path: str | Path, overrides: dict[str, str] | None = None) -> "RunConfig":
        items = parse_items(Path(path).read_text()) if path else {}
        items.update(overrides or {})
        return cls.from_items(items)


def parse_items(text: str) -> dict[str, str]:
    items = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {n}: expected 'key = value'")
        items[key.strip()] = value.strip()
    return items


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _scalar(raw: str, kind: str, key: str):
    try:
        if kind == "int":
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ValueError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def _parse(raw: str, f: dataclasses.Field, key: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if kind.startswith("tuple"):
        inner = kind[len("tuple[") :].split(",")[0].strip()
        return tuple(_scalar(p.strip(), inner, key) for p in raw.split(",") if p.strip())
    return _scalar(raw, kind, key)
