"""Run every high-point experiment of a config and write the tables to results/.

    python3 scripts/run_experiment.py configs/membrane_trend.toml
"""
import argparse
import logging
from pathlib import Path

from membrane_lab import experiments
from membrane_lab.config import load_config

KINDS = ("exponents", "clusters", "pairs", "square", "max")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--kinds", default=",".join(KINDS))
    p.add_argument("--results", default="results")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config)
    ext = "csv" if cfg.format == "csv" else "ndjson"
    for kind in args.kinds.split(","):
        report = experiments.run_highpoints(cfg, kind)
        out = Path(args.results) / f"{cfg.name}-{kind}.{ext}"
        for path in experiments.emit(report, out, cfg.format):
            logging.info("wrote %s", path)


if __name__ == "__main__":
    main()
