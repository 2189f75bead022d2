"""Command-line entry point: ``membrane-lab <subcommand> [flags]``.

Progress goes to standard error through logging; data goes to ``--out`` or
standard output.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

import numpy as np

from . import experiments
from .config import load_config
from .gaussian import sample_exact, sample_gbar, save_sample
from .lattice import build_box
from .operators import assemble_precision
from .solver import SolverCache, factorize, green_column

log = logging.getLogger("membrane_lab")

RUNNERS = {
    "exponents": experiments.run_exponents,
    "clusters": experiments.run_clusters,
    "pairs": experiments.run_pairs,
    "square": experiments.run_square,
    "max": experiments.run_max,
}


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--model", choices=["membrane", "dgff"])
    p.add_argument("--d", type=int, help="lattice dimension")
    p.add_argument("--N", type=_ints, help="comma-separated box radii")
    p.add_argument("--eta", type=_floats)
    p.add_argument("--alpha", type=_floats)
    p.add_argument("--beta", type=_floats)
    p.add_argument("--ell", type=float)
    p.add_argument("--replicas", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sampler", choices=["auto", "exact", "gbar"])
    p.add_argument("--normalization", choices=["normalized", "unnormalized"])
    p.add_argument("--workers", type=int)
    p.add_argument("--cache-dir")
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "ndjson"])
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--budget", type=int, help="maximum number of lattice sites")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="membrane-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("validate", help="run the invariant suite"))
    g = sub.add_parser("green", help="Green's function column at a site")
    _common(g)
    g.add_argument("--x", type=_ints, help="source site, comma-separated (default: origin)")
    _common(sub.add_parser("sample", help="draw one field and write it in binary form"))
    for name in RUNNERS:
        _common(sub.add_parser(name, help=f"replicated {name} experiment"))
    r = sub.add_parser("report", help="summarise previously emitted row files")
    r.add_argument("files", nargs="+")
    r.add_argument("--out")
    r.add_argument("--format", choices=["csv", "ndjson"])
    r.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args) -> "experiments.ExperimentConfig":
    overrides = {
        "model": args.model, "d": args.d, "N": args.N, "eta": args.eta, "alpha": args.alpha,
        "beta": args.beta, "ell": args.ell, "replicas": args.replicas, "seed": args.seed,
        "sampler": args.sampler, "normalization": args.normalization,
        "workers": args.workers, "cache_dir": args.cache_dir, "out": args.out,
        "format": args.format, "site_budget": args.budget,
    }
    if args.no_cache:
        overrides["use_cache"] = False
    return load_config(args.config, **overrides)


def _cmd_validate(cfg) -> int:
    report = experiments.run_validate(cfg)
    experiments.emit(report, cfg.out, cfg.format)
    failed = [c.name for c in report.checks if not c.passed]
    for c in report.checks:
        log.info("%s %s", "PASS" if c.passed else "FAIL", c.name)
    if failed:
        log.error("failed checks: %s", ", ".join(failed))
        return 1
    return 0


def _cmd_green(cfg, x) -> int:
    box = build_box(cfg.N[0], cfg.d, budget=cfg.site_budget)
    x = tuple(x) if x else (0,) * cfg.d
    f = factorize(assemble_precision(box, cfg.model, cfg.normalization))
    cache = SolverCache(cfg.cache_dir, enabled=cfg.use_cache) if cfg.cache_dir else None
    col = green_column(f, x, rtol=cfg.green_rtol, cache=cache)
    if cfg.out:
        np.save(cfg.out, col.values)
    record = {"model": cfg.model, "d": cfg.d, "N": box.N, "x": list(x),
              "variance": format(col.variance, ".17g"), "backend": f.backend}
    sys.stdout.write(json.dumps(record) + "\n")
    return 0


def _cmd_sample(cfg) -> int:
    if not cfg.out:
        log.error("sample needs --out")
        return 2
    N = cfg.N[0]
    seed = (cfg.seed, N, 0)
    if cfg.sampler_for(N) == "gbar":
        phi = sample_gbar(build_box(N, cfg.d, budget=cfg.site_budget), seed,
                          normalization=cfg.normalization)
    else:
        box = build_box(N, cfg.d, budget=cfg.site_budget)
        phi = sample_exact(factorize(assemble_precision(box, cfg.model, cfg.normalization)),
                           seed, rtol=cfg.sample_rtol)
    save_sample(phi, cfg.out)
    log.info("wrote %s sample with %d sites to %s", phi.sampler, phi.box.n_sites, cfg.out)
    return 0


def _cmd_report(args) -> int:
    rows = []
    for path in args.files:
        header, recs = experiments.read_rows(path)
        if header.get("section") == "summary":
            continue
        rows.extend(r for r in recs if "observable" in r)
    fmt = args.format or "ndjson"
    summary = experiments.summarize(rows)
    text = experiments._csv_text if fmt == "csv" else experiments._ndjson_text
    header = experiments._stamped({"schema_version": experiments.SCHEMA_VERSION,
                                   "subcommand": "report", "sources": ",".join(args.files)})
    body = text(header, experiments.SUMMARY_COLUMNS, summary)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(body)
    else:
        sys.stdout.write(body)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    warnings.simplefilter("default")
    try:
        if args.command == "report":
            return _cmd_report(args)
        cfg = config_from_args(args)
        if args.command == "validate":
            return _cmd_validate(cfg)
        if args.command == "green":
            return _cmd_green(cfg, args.x)
        if args.command == "sample":
            return _cmd_sample(cfg)
        report = RUNNERS[args.command](cfg)
        experiments.emit(report, cfg.out, cfg.format)
        return 0
    except (ValueError, OSError, MemoryError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
