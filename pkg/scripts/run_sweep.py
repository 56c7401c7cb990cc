"""Run the full BER-vs-noise sweep and write results next to the resolved config.

    python3 scripts/run_sweep.py [--config configs/default.cfg] [--output DIR]
"""
import argparse
import logging

from imdd_snn.config import RunConfig
from imdd_snn.harness import run_sweep

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/default.cfg")
    ap.add_argument("--output")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    overrides = {"output_dir": args.output} if args.output else {}
    cfg = RunConfig.load(args.config, overrides)
    run_sweep(cfg)
