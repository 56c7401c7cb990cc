"""Training/testing protocol: curriculum over noise levels, seed selection,
Monte-Carlo BER with credibility intervals, CSV and plot output."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from . import autograd as ag
from .ann import AnnModel, ann_loss, ann_train_epoch
from .classical import fit_classical, load_classical, save_classical
from .config import RunConfig
from .signal_chain import LinkParams, extract_chunks, gray_demap, make_dataset, simulate_link, split_rng
from .snn import SnnModel, snn_eval_loss, snn_train_epoch

log = logging.getLogger(__name__)

CSV_FIELDS = ("demapper", "noise_db", "errors", "bits", "ber", "ci_low", "ci_high", "seed", "censored")
# frame indices of the validation stream reserved for ranking seeds
SELECTION_FRAME_OFFSET = 100_000


class Demapper(Protocol):
    n_tap: int

    def decide(self, chunks: NDArray) -> NDArray[np.int64]: ...


# --- statistics ------------------------------------------------------------


def credibility_interval(errors: int, bits: int, level: float = 0.99) -> tuple[float, float]:
    """Equal-tailed Jeffreys interval, Beta(k + 1/2, n - k + 1/2).

    The bound is pinned to 0 (or 1) when no error (or only errors) was seen,
    so the point estimate always lies inside.
    """
    if bits <= 0:
        raise ValueError("credibility interval needs at least one bit")
    if not 0 <= errors <= bits:
        raise ValueError("errors must lie in [0, bits]")
    tail = (1 - level) / 2
    a, b = errors + 0.5, bits - errors + 0.5
    low = 0.0 if errors == 0 else float(stats.beta.ppf(tail, a, b))
    high = 1.0 if errors == bits else float(stats.beta.ppf(1 - tail, a, b))
    return low, high


@dataclass(frozen=True)
class BerRecord:
    demapper: str
    noise_db: float
    errors: int
    bits: int
    ber: float
    ci_low: float
    ci_high: float
    seed: int = -1
    censored: bool = False

    @classmethod
    def from_counts(cls, demapper: str, noise_db: float, errors: int, bits: int, seed: int = -1,
                    censored: bool = False) -> "BerRecord":
        low, high = credibility_interval(errors, bits)
        return cls(demapper, float(noise_db), int(errors), int(bits), errors / bits, low, high, int(seed), censored)


def count_errors(demapper: Demapper, chunks: NDArray, indices: NDArray) -> int:
    return int(np.sum(gray_demap(demapper.decide(chunks)) != gray_demap(indices)))


def evaluate_ber_until(
    demapper: Demapper,
    params: LinkParams,
    noise_level_db: float | None,
    name: str = "demapper",
    min_errors: int = 2000,
    bit_cap: int = 10**9,
    seed: int = 0,
    model_seed: int = -1,
    n_tap: int = 7,
) -> BerRecord:
    """Stream fresh test frames until ``min_errors`` bit errors or ``bit_cap`` bits.

    Every demapper sees the same ``n_tap``-wide chunks, so the frame edges are
    excluded identically; narrower demappers crop the centre.
    """
    errors = bits = 0
    frame = 0
    while errors < min_errors and bits < bit_cap:
        sym, rx = simulate_link(params, noise_level_db, split_rng(seed, "test", noise_level_db, frame))
        chunks, centres = extract_chunks(rx, n_tap)
        errors += count_errors(demapper, chunks, sym.indices[centres])
        bits += 2 * len(centres)
        frame += 1
    return BerRecord.from_counts(name, noise_level_db if noise_level_db is not None else -math.inf,
                                 errors, bits, model_seed, censored=errors < min_errors)


def interpolate_crossing_db(noise_db: Sequence[float], ber: Sequence[float], target_ber: float = 2e-3) -> float:
    """Noise level where a BER curve first reaches ``target_ber``, linear in log10(BER)."""
    x = np.asarray(noise_db, dtype=float)
    y = np.asarray(ber, dtype=float)
    order = np.argsort(x)
    x, y = x[order], y[order]
    for i in range(1, len(x)):
        if y[i - 1] < target_ber <= y[i]:
            lo = math.log10(max(y[i - 1], 1e-300))
            frac = (math.log10(target_ber) - lo) / (math.log10(y[i]) - lo)
            return float(x[i - 1] + frac * (x[i] - x[i - 1]))
    raise ValueError(f"curve does not bracket BER {target_ber:g}")


def interpolate_gain_db(curve_a, curve_b, target_ber: float = 2e-3) -> float:
    """Extra noise (dB) curve ``a`` tolerates over ``b`` at ``target_ber``.

    Each curve is a pair (noise levels, BERs).
    """
    return interpolate_crossing_db(*curve_a, target_ber) - interpolate_crossing_db(*curve_b, target_ber)


def select_best_seed(scores: dict[int, float | None]) -> int:
    """Seed with the lowest validation BER; ties go to the lowest seed, diverged seeds are None."""
    alive = [(ber, seed) for seed, ber in scores.items() if ber is not None and np.isfinite(ber)]
    if not alive:
        raise RuntimeError("every seed diverged")
    return min(alive)[1]


def monotone_violations(records: Sequence[BerRecord]) -> dict[str, list[tuple[float, float, bool]]]:
    """Per demapper, the level pairs where BER drops as noise grows.

    Each entry is (lower level, higher level, intervals overlap).
    """
    out: dict[str, list] = {}
    for name in dict.fromkeys(r.demapper for r in records):
        curve = sorted((r for r in records if r.demapper == name), key=lambda r: r.noise_db)
        out[name] = [(a.noise_db, b.noise_db, b.ci_high >= a.ci_low)
                     for a, b in zip(curve, curve[1:]) if b.ber < a.ber]
    return out


def curve_is_monotone(violations: list[tuple[float, float, bool]]) -> bool:
    """Non-decreasing up to at most one drop whose intervals overlap."""
    return all(overlap for *_, overlap in violations) and len(violations) <= 1


# --- report files ----------------------------------------------------------


def write_records_csv(path: str | Path, records: Sequence[BerRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow([r.demapper, repr(r.noise_db), r.errors, r.bits, repr(r.ber), repr(r.ci_low),
                        repr(r.ci_high), r.seed, int(r.censored)])


def read_records_csv(path: str | Path) -> list[BerRecord]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != CSV_FIELDS:
        raise ValueError(f"{path}: unexpected columns {list(rows[0].keys())}")
    return [
        BerRecord(r["demapper"], float(r["noise_db"]), int(r["errors"]), int(r["bits"]), float(r["ber"]),
                  float(r["ci_low"]), float(r["ci_high"]), int(r["seed"]), bool(int(r["censored"])))
        for r in rows
    ]


def plot_records(path: str | Path, records: Sequence[BerRecord], target_ber: float = 2e-3) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.2))
    for name in dict.fromkeys(r.demapper for r in records):
        curve = sorted((r for r in records if r.demapper == name), key=lambda r: r.noise_db)
        x = np.array([r.noise_db for r in curve])
        y = np.array([r.ber for r in curve])
        # zero-error points have no place on a log axis; draw their upper bound
        shown = np.where(y > 0, y, [r.ci_high for r in curve])
        err = np.array([[s - r.ci_low for s, r in zip(shown, curve)], [r.ci_high - s for s, r in zip(shown, curve)]])
        ax.errorbar(x, shown, yerr=np.clip(err, 0, None), marker="o", ms=3, capsize=2, label=name.upper())
    ax.axhline(target_ber, color="0.5", ls="--", lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("noise level (dB)")
    ax.set_ylabel("BER")
    ax.grid(True, which="both", lw=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format=Path(path).suffix.lstrip(".") or "svg")
    plt.close(fig)


def emit_report(records: Sequence[BerRecord], out_dir: str | Path, stem: str = "ber") -> tuple[Path, Path]:
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = out / f"{stem}.csv", out / f"{stem}.svg"
    write_records_csv(csv_path, records)
    plot_records(svg_path, records)
    return csv_path, svg_path


def curves(records: Sequence[BerRecord]) -> dict[str, tuple[list[float], list[float]]]:
    out: dict[str, tuple[list[float], list[float]]] = {}
    for r in sorted(records, key=lambda r: r.noise_db):
        xs, ys = out.setdefault(r.demapper, ([], []))
        xs.append(r.noise_db)
        ys.append(r.ber)
    return out


def gain_table(records: Sequence[BerRecord], reference: str = "snn", target_ber: float = 2e-3) -> dict[str, float | None]:
    """Gain of ``reference`` over every other demapper; None when a curve does not bracket the target."""
    cs = curves(records)
    gains: dict[str, float | None] = {}
    for name, curve in cs.items():
        if name == reference:
            continue
        try:
            gains[name] = interpolate_gain_db(cs[reference], curve, target_ber)
        except (ValueError, KeyError):
            gains[name] = None
    return gains


# --- training --------------------------------------------------------------


def _dataset_chunks(cfg: RunConfig, db: float, split: str, frame: int, n_frames: int = 1, limit: int | None = None):
    ds = make_dataset(cfg.link, db, split, seed=cfg.seed, n_frames=n_frames, n_tap=cfg.n_tap, first_frame=frame)
    x, t = ds.chunks(cfg.n_tap)
    return (x[:limit], t[:limit]) if limit else (x, t)


def _validation_set(cfg: RunConfig, db: float, epoch: int):
    return _dataset_chunks(cfg, db, "validation", epoch, limit=cfg.schedule.validation_size)


def _selection_set(cfg: RunConfig, db: float):
    n_frames = max(1, math.ceil(cfg.selection_size / (cfg.link.seq_len - cfg.n_tap + 1)))
    return _dataset_chunks(cfg, db, "validation", SELECTION_FRAME_OFFSET, n_frames, limit=cfg.selection_size)


def bit_error_rate(model: Demapper, chunks: NDArray, indices: NDArray) -> float:
    return count_errors(model, chunks, indices) / (2 * len(indices))


def new_model(kind: str, cfg: RunConfig, rng: np.random.Generator):
    if kind == "snn":
        return SnnModel.init(cfg.snn, rng, ih_gain=cfg.snn_init_gain)
    if kind == "ann":
        return AnnModel.init(rng, dtype=np.dtype(cfg.ann_precision).type)
    raise ValueError(f"{kind!r} is not a trainable demapper")


def load_model(kind: str, path: str | Path):
    if kind == "snn":
        return SnnModel.load(path)
    if kind == "ann":
        return AnnModel.load(path)
    return load_classical(path)


def train_level(kind: str, model, cfg: RunConfig, db: float, rng: np.random.Generator,
                on_epoch: Callable[[int, float, float], None] | None = None):
    """Train one noise level; returns (best-validation copy, its validation BER, epochs run).

    Each epoch draws a fresh training frame and a fresh validation set. Models
    are ranked by validation BER, then validation cross-entropy, which still
    separates models once the validation set shows no errors. Stops after
    ``patience`` epochs without improvement.
    """
    params = model.weights if kind == "snn" else model.params
    lr = cfg.snn_lr if kind == "snn" else cfg.ann_lr
    adam = ag.Adam(params, lr=lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    step = snn_train_epoch if kind == "snn" else ann_train_epoch
    val_loss = snn_eval_loss if kind == "snn" else ann_loss
    best, best_score, stale = model.copy(), (math.inf, math.inf), 0
    epoch = 0
    for epoch in range(cfg.schedule.epochs_per_level):
        x, t = _dataset_chunks(cfg, db, "train", epoch)
        loss = step(model, x, t, adam, cfg.batch_size, rng)
        xv, tv = _validation_set(cfg, db, epoch)
        score = (bit_error_rate(model, xv, tv), val_loss(model, xv, tv))
        if on_epoch:
            on_epoch(epoch, loss, score[0])
        if score < best_score:
            best, best_score, stale = model.copy(), score, 0
        else:
            stale += 1
            if stale >= cfg.schedule.patience:
                break
    return best, best_score[0], epoch + 1


def checkpoint_path(out_dir: Path, kind: str, seed: int, db: float) -> Path:
    return out_dir / "checkpoints" / f"{kind}_seed{seed}_{db:+.2f}dB.ckpt"


def noise_sweep_train(kind: str, cfg: RunConfig, out_dir: str | Path, log_rows: list | None = None
                      ) -> dict[int, dict[float, Path | None]]:
    """Curriculum training from the lowest to the highest noise level, per seed.

    Each level warm-starts from the previous level's best-validation model.
    Returns checkpoint paths per seed and level; None marks a diverged seed.
    Existing checkpoints are reused, so an interrupted sweep can resume.
    """
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    levels = cfg.schedule.noise_levels_db
    chains: dict[int, dict[float, Path | None]] = {}
    for seed in cfg.schedule.seeds:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(("ann", "snn").index(kind),)))
        model = None
        chain: dict[float, Path | None] = {}
        for db in levels:
            path = checkpoint_path(out, kind, seed, db)
            if model is None and chain:
                chain[db] = None
                continue
            if path.exists():
                model = load_model(kind, path)
                chain[db] = path
                continue
            if model is None:
                model = new_model(kind, cfg, rng)
                model.fit_input_scaling(_dataset_chunks(cfg, db, "train", 0)[0])

            def record(epoch, loss, ber, seed=seed, db=db):
                if log_rows is not None:
                    log_rows.append((kind, seed, db, epoch, loss, ber))
                log.debug("%s seed %d %+.1f dB epoch %d loss %.4f val %.2e", kind, seed, db, epoch, loss, ber)

            try:
                best, best_ber, epochs = train_level(kind, model, cfg, db, rng, record)
            except FloatingPointError as exc:
                log.warning("%s seed %d diverged at %+.1f dB: %s", kind, seed, db, exc)
                model = None
                chain[db] = None
                continue
            log.info("%s seed %d %+.1f dB: best val BER %.2e after %d epochs", kind, seed, db, best_ber, epochs)
            best.save(path)
            chain[db] = path
            model = best.copy()
        chains[seed] = chain
    return chains


def select_champions(kind: str, cfg: RunConfig, chains: dict[int, dict[float, Path | None]]
                     ) -> dict[float, tuple[int, Path, float]]:
    """Per level, the seed whose checkpoint has the lowest BER on the shared selection set."""
    champions = {}
    for db in cfg.schedule.noise_levels_db:
        xs, ts = _selection_set(cfg, db)
        scores = {seed: (bit_error_rate(load_model(kind, chain[db]), xs, ts) if chain.get(db) else None)
                  for seed, chain in chains.items()}
        seed = select_best_seed(scores)
        champions[db] = (seed, chains[seed][db], scores[seed])
    return champions


def fit_classical_level(kind: str, cfg: RunConfig, db: float):
    x, t = _dataset_chunks(cfg, db, "train", 0, n_frames=cfg.classical_train_frames)
    return fit_classical(kind, x, t, cfg.link.alphabet, order=cfg.volterra_order)


def run_sweep(cfg: RunConfig, out_dir: str | Path | None = None) -> list[BerRecord]:
    """Full protocol: fit/train every demapper per level, evaluate, write report files."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = cfg.replace(output_dir=str(out))
    cfg.save(out / "run.cfg")
    records: list[BerRecord] = []
    levels = cfg.schedule.noise_levels_db

    def evaluate(model, name, db, seed):
        rec = evaluate_ber_until(model, cfg.link, db, name, cfg.min_errors, cfg.bit_cap, cfg.seed, seed, cfg.n_tap)
        log.info("%s %+.1f dB: BER %.3e (%d errors / %d bits)%s", name, db, rec.ber, rec.errors, rec.bits,
                 " censored" if rec.censored else "")
        records.append(rec)
        write_records_csv(out / "ber.csv", records)

    for kind in cfg.demappers:
        if kind in ("ann", "snn"):
            rows: list = []
            chains = noise_sweep_train(kind, cfg, out, rows)
            if rows:
                with (out / f"training_{kind}.csv").open("a", newline="") as fh:
                    csv.writer(fh).writerows(rows)
            for db, (seed, path, _) in select_champions(kind, cfg, chains).items():
                evaluate(load_model(kind, path), kind, db, seed)
        else:
            (out / "models").mkdir(exist_ok=True)
            for db in levels:
                model = fit_classical_level(kind, cfg, db)
                save_classical(out / "models" / f"{kind}_{db:+.2f}dB.txt", model)
                evaluate(model, kind, db, -1)
    emit_report(records, out)
    write_gain_summary(out / "gains.txt", records)
    return records


def write_gain_summary(path: str | Path, records: Sequence[BerRecord], target_ber: float = 2e-3) -> None:
    lines = [f"target BER {target_ber:g}"]
    for name, (xs, ys) in curves(records).items():
        try:
            lines.append(f"crossing {name} {interpolate_crossing_db(xs, ys, target_ber):.4f} dB")
        except ValueError:
            lines.append(f"crossing {name} not bracketed")
    for name, gain in gain_table(records, "snn", target_ber).items():
        lines.append(f"gain snn over {name} " + ("n/a" if gain is None else f"{gain:.4f} dB"))
    Path(path).write_text("\n".join(lines) + "\n")

