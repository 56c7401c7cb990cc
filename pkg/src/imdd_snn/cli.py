"""Command line entry point: ``imdd-snn <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .classical import CLASSICAL_KINDS, save_classical
from .config import RunConfig
from .harness import (
    emit_report,
    evaluate_ber_until,
    fit_classical_level,
    load_model,
    noise_sweep_train,
    read_records_csv,
    run_sweep,
    select_champions,
    write_gain_summary,
    write_records_csv,
)
from .signal_chain import make_dataset, save_dataset

log = logging.getLogger("imdd_snn")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (defaults are used without one)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, help="root data seed")
    common.add_argument("--output", help="output directory (overrides output_dir)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="imdd-snn", description="PAM4 IM/DD demapper experiments")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write simulated frames as CSV")
    s.add_argument("--noise-db", type=float, action="append", help="noise level(s); default: schedule levels")
    s.add_argument("--split", choices=("train", "validation", "test"), default="train")
    s.add_argument("--frames", type=int, default=1)

    s = sub.add_parser("fit", parents=[common], help="fit classical demappers per noise level")
    s.add_argument("--demapper", choices=sorted(CLASSICAL_KINDS), action="append")
    s.add_argument("--noise-db", type=float, action="append")

    s = sub.add_parser("train", parents=[common], help="curriculum-train the ANN or SNN demapper")
    s.add_argument("--demapper", choices=("ann", "snn"), required=True)

    s = sub.add_parser("evaluate", parents=[common], help="Monte-Carlo BER of a saved demapper")
    s.add_argument("--demapper", required=True, help="le1, le7, vnle, ann or snn")
    s.add_argument("--model", required=True, help="model or checkpoint file")
    s.add_argument("--noise-db", type=float, action="append", required=True)

    sub.add_parser("sweep", parents=[common], help="full train/evaluate/report pipeline")

    s = sub.add_parser("report", parents=[common], help="plot and gain summary from BER CSV files")
    s.add_argument("csv", nargs="+")
    return p


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.output:
        overrides["output_dir"] = args.output
    return RunConfig.load(args.config, overrides)


def run(args) -> None:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "run.cfg")
    levels = getattr(args, "noise_db", None) or list(cfg.schedule.noise_levels_db)

    if args.command == "simulate":
        (out / "data").mkdir(exist_ok=True)
        for db in levels:
            ds = make_dataset(cfg.link, db, args.split, seed=cfg.seed, n_frames=args.frames, n_tap=cfg.n_tap)
            for i, (frame, rx) in enumerate(ds.frames):
                save_dataset(out / "data" / f"{args.split}_{db:+.2f}dB_{i}.csv", frame, rx)
    elif args.command == "fit":
        (out / "models").mkdir(exist_ok=True)
        for kind in args.demapper or [k for k in cfg.demappers if k in CLASSICAL_KINDS]:
            for db in levels:
                save_classical(out / "models" / f"{kind}_{db:+.2f}dB.txt", fit_classical_level(kind, cfg, db))
    elif args.command == "train":
        chains = noise_sweep_train(args.demapper, cfg, out)
        champions = select_champions(args.demapper, cfg, chains)
        lines = [f"{db!r} {seed} {path} {ber!r}" for db, (seed, path, ber) in champions.items()]
        (out / f"champions_{args.demapper}.txt").write_text("noise_db seed checkpoint selection_ber\n"
                                                            + "\n".join(lines) + "\n")
    elif args.command == "evaluate":
        model = load_model(args.demapper, args.model)
        records = [evaluate_ber_until(model, cfg.link, db, args.demapper, cfg.min_errors, cfg.bit_cap,
                                      cfg.seed, n_tap=cfg.n_tap) for db in levels]
        write_records_csv(out / f"evaluate_{args.demapper}.csv", records)
    elif args.command == "sweep":
        run_sweep(cfg, out)
    elif args.command == "report":
        records = [r for path in args.csv for r in read_records_csv(path)]
        emit_report(records, out, stem="report")
        write_gain_summary(out / "gains.txt", records)


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(asctime)s %(message)s")
    try:
        run(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"imdd-snn {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
