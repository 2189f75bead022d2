"""Replicated high-point experiments, resumable through a per-unit cache,
and csv / ndjson emitters."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, theory
from .config import ExperimentConfig
from .gaussian import FieldSample, sample_exact, sample_gbar
from .lattice import build_box, inner_region
from .operators import assemble_precision
from .solver import SpectralLaplacian, factorize
from .statistics import (
    DEFAULT_ELL,
    InsufficientPointsError,
    LevelThreshold,
    _within,
    biggest_high_square,
    exponent_fit,
    high_points,
    max_in_region,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

ROW_COLUMNS = [
    "experiment", "model", "d", "N", "sampler", "replica", "seed", "observable",
    "eta", "alpha", "beta", "ell", "value", "ratio", "prediction",
]
SUMMARY_COLUMNS = [
    "experiment", "model", "observable", "eta", "alpha", "beta", "N", "replicas_used",
    "replicas_zero", "ratio_mean", "ratio_std", "prediction", "fit_slope", "fit_intercept",
    "fit_half_width", "fit_residual_norm",
]

OBSERVABLES = {
    "exponents": ("high_point_count",),
    "clusters": ("cluster_center", "cluster_conditional"),
    "pairs": ("pair_count",),
    "square": ("square_side",),
    "max": ("field_max",),
}
ALL_OBSERVABLES = tuple(o for obs in OBSERVABLES.values() for o in obs)


@dataclass
class Report:
    kind: str
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def header(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "subcommand": self.kind,
                "experiment": self.config.name, "config_fp": self.config.fingerprint(),
                "code_version": __version__}


def _prediction(model: str, observable: str, eta, alpha, beta):
    if model == "dgff":
        if observable == "high_point_count" and 0 < eta < 1:
            return theory.dgff_high_point_dim(eta)
        if observable == "field_max":
            return theory.max_rate("dgff")
        return None
    if observable == "high_point_count" and 0 < eta < 1:
        return theory.high_point_dim(eta)
    if observable == "cluster_center":
        return theory.cluster_dim(alpha, beta) if alpha < beta else None
    if observable == "cluster_conditional":
        return theory.cluster_dim_conditional(alpha, beta)
    if observable == "pair_count":
        return theory.rho(alpha, beta)
    if observable == "square_side":
        return theory.square_exp(eta)
    if observable == "field_max":
        return theory.max_rate("membrane")
    return None


def _ratio(observable, value, N):
    if value is None:
        return None
    if observable in ("field_max", "cluster_conditional"):
        return value / math.log(N)
    return math.log(value) / math.log(N) if value > 0 else None


def _levels(cfg: ExperimentConfig, observable: str):
    if observable in ("high_point_count", "square_side"):
        return [(eta, None, None) for eta in cfg.eta]
    if observable in ("cluster_center", "cluster_conditional", "pair_count"):
        return [(None, a, b) for a in cfg.alpha for b in cfg.beta]
    return [(None, None, None)]


def observe(phi: FieldSample, cfg: ExperimentConfig, observables) -> list[dict]:
    """All requested observables on one sample, one dict per (observable, level)."""
    box = phi.box
    bulk = inner_region(box, cfg.ell)
    bulk_idx = bulk.indices
    out = []
    for obs in observables:
        for eta, alpha, beta in _levels(cfg, obs):
            if obs == "high_point_count":
                value = len(high_points(phi, LevelThreshold(eta, box.N, phi.model), bulk))
            elif obs == "square_side":
                value = biggest_high_square(phi, eta, cfg.ell)
            elif obs == "field_max":
                value = max_in_region(phi)[1]
            else:
                t = LevelThreshold(alpha, box.N, phi.model).value
                hp = box.coords(bulk_idx[phi.values[bulk_idx] >= t])
                radius = box.N**beta
                if obs == "cluster_center":
                    value = int(_within(np.zeros((1, box.d), dtype=np.int64), hp, radius)[0])
                elif obs == "pair_count":
                    per = _within(hp, hp, radius)
                    value = int(per.sum()) - (0 if cfg.include_diagonal else len(hp))
                else:
                    # mean log cluster size around each high point
                    per = _within(hp, hp, radius)
                    value = float(np.mean(np.log(per))) if len(per) else None
            out.append({"observable": obs, "eta": eta, "alpha": alpha, "beta": beta,
                        "value": value})
    return out


class _Sampler:
    """Per-N sampling state shared by all replicas at that N."""

    def __init__(self, cfg: ExperimentConfig, N: int):
        self.cfg = cfg
        self.kind = cfg.sampler_for(N)
        self.box = build_box(N, cfg.d, budget=cfg.site_budget)
        if self.kind == "exact":
            pm = assemble_precision(self.box, cfg.model, cfg.normalization)
            self.factor = factorize(pm)
        else:
            self.spectral = SpectralLaplacian(self.box, cfg.normalization)

    def draw(self, seed) -> FieldSample:
        if self.kind == "exact":
            return sample_exact(self.factor, seed, rtol=self.cfg.sample_rtol)
        return sample_gbar(self.box, seed, normalization=self.cfg.normalization,
                           spectral=self.spectral)


def _unit_rows(cfg: ExperimentConfig, kind: str, N: int, replica: int,
               sampler: _Sampler | None = None) -> list[dict]:
    sampler = sampler or _Sampler(cfg, N)
    seed = (cfg.seed, N, replica)
    phi = sampler.draw(seed)
    rows = []
    for rec in observe(phi, cfg, OBSERVABLES[kind]):
        obs = rec["observable"]
        rows.append({
            "experiment": cfg.name, "model": cfg.model, "d": cfg.d, "N": N,
            "sampler": sampler.kind, "replica": replica,
            "seed": "-".join(map(str, seed)), "observable": obs,
            "eta": rec["eta"], "alpha": rec["alpha"], "beta": rec["beta"], "ell": cfg.ell,
            "value": rec["value"], "ratio": _ratio(obs, rec["value"], N),
            "prediction": _prediction(cfg.model, obs, rec["eta"], rec["alpha"], rec["beta"]),
        })
    return rows


def _unit_path(cfg: ExperimentConfig, kind: str, N: int, replica: int) -> Path | None:
    if not (cfg.use_cache and cfg.cache_dir):
        return None
    return Path(cfg.cache_dir) / "runs" / f"{kind}-{cfg.fingerprint()}" / f"N{N}_r{replica}.json"


def _load_unit(path: Path | None):
    if path is None or not path.exists():
        return None
    try:
        payload = json.loads(path.read_text())
    except (OSError, ValueError):
        return None
    if payload.get("code_version") != __version__:
        return None
    return payload["rows"]


def _store_unit(path: Path | None, rows) -> None:
    if path is None:
        return
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"code_version": __version__, "rows": rows}))
        tmp.replace(path)
    except OSError as exc:
        log.warning("could not store partial result %s: %s", path, exc)


def _worker(args):
    cfg, kind, N, replica = args
    return N, replica, _unit_rows(cfg, kind, N, replica)


def run_highpoints(cfg: ExperimentConfig, kind: str) -> Report:
    """Sample every (N, replica) unit, measure, and summarise per level.

    Finished units are written to the cache as they complete, so an
    interrupted run resumes where it stopped and yields identical rows.
    """
    if kind not in OBSERVABLES:
        raise ValueError(f"unknown experiment kind {kind!r}")
    cfg.validate()
    report = Report(kind, cfg)
    if cfg.replicas == 0:
        warnings.warn("zero replicas requested; report is empty", stacklevel=2)
        return report
    results: dict = {}
    todo = []
    for N in cfg.N:
        for r in range(cfg.replicas):
            cached = _load_unit(_unit_path(cfg, kind, N, r))
            if cached is not None:
                results[(N, r)] = cached
            else:
                todo.append((N, r))
    log.info("%s: %d units cached, %d to run", kind, len(results), len(todo))
    if cfg.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for N, r, rows in pool.map(_worker, [(cfg, kind, N, r) for N, r in todo]):
                _store_unit(_unit_path(cfg, kind, N, r), rows)
                results[(N, r)] = rows
    else:
        samplers: dict = {}
        for N, r in todo:
            if N not in samplers:
                samplers.clear()
                samplers[N] = _Sampler(cfg, N)
            rows = _unit_rows(cfg, kind, N, r, samplers[N])
            _store_unit(_unit_path(cfg, kind, N, r), rows)
            results[(N, r)] = rows
            log.info("%s N=%d replica=%d done", kind, N, r)
    for key in sorted(results):
        report.rows.extend(results[key])
    report.summary = summarize(report.rows, cfg)
    return report


def run_validate(cfg: ExperimentConfig) -> Report:
    """Invariant suite; one pass/fail record per check."""
    from .validation import run_checks

    cfg.validate()
    report = Report("validate", cfg)
    report.checks = run_checks(cfg)
    return report


def run_exponents(cfg):
    return run_highpoints(cfg, "exponents")


def run_clusters(cfg):
    return run_highpoints(cfg, "clusters")


def run_pairs(cfg):
    return run_highpoints(cfg, "pairs")


def run_square(cfg):
    return run_highpoints(cfg, "square")


def run_max(cfg):
    return run_highpoints(cfg, "max")


def summarize(rows: list[dict], cfg: ExperimentConfig | None = None) -> list[dict]:
    """Per (observable, level, N): replica spread of the ratio; per (observable,
    level): an exponent fit over all positive replica values."""
    groups: dict = {}
    for row in rows:
        key = (row["experiment"], row["model"], row["observable"], row["eta"], row["alpha"],
               row["beta"])
        groups.setdefault(key, []).append(row)
    out = []
    for key, grp in groups.items():
        exp, model, obs, eta, alpha, beta = key
        fit = None
        if obs in ("high_point_count", "cluster_center", "pair_count", "square_side"):
            pts = [(r["N"], r["value"]) for r in grp if r["value"] is not None]
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    fit = exponent_fit(pts)
            except InsufficientPointsError:
                fit = None
        for N in sorted({r["N"] for r in grp}):
            at_n = [r for r in grp if r["N"] == N]
            ratios = [r["ratio"] for r in at_n if r["ratio"] is not None]
            out.append({
                "experiment": exp, "model": model, "observable": obs, "eta": eta,
                "alpha": alpha, "beta": beta, "N": N, "replicas_used": len(ratios),
                "replicas_zero": len(at_n) - len(ratios),
                "ratio_mean": float(np.mean(ratios)) if ratios else None,
                "ratio_std": float(np.std(ratios, ddof=1)) if len(ratios) > 1 else None,
                "prediction": at_n[0]["prediction"],
                "fit_slope": fit.slope if fit else None,
                "fit_intercept": fit.intercept if fit else None,
                "fit_half_width": fit.half_width if fit else None,
                "fit_residual_norm": fit.residual_norm if fit else None,
            })
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return ""
        return format(v, ".17g")
    if isinstance(v, (dict, list, tuple)):
        return _json_value(v)
    return str(v)


def _json_value(v) -> str:
    if v is None or isinstance(v, (str, bool, np.bool_)):
        return json.dumps(v if not isinstance(v, np.bool_) else bool(v))
    if isinstance(v, (float, np.floating)):
        s = _fmt(v)
        return s if s else "null"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_json_value(v[k])}" for k in sorted(v)) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_json_value(x) for x in v) + "]"
    return json.dumps(str(v))


def _json_line(obj: dict, columns=None) -> str:
    keys = columns or list(obj)
    return "{" + ",".join(f"{json.dumps(k)}:{_json_value(obj.get(k))}" for k in keys) + "}"


def _csv_text(header: dict, columns, records) -> str:
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([_fmt(rec.get(c)) for c in columns])
    return buf.getvalue()


def _ndjson_text(header: dict, columns, records) -> str:
    lines = [_json_line({"kind": "header", **header})]
    lines += [_json_line(rec, columns) for rec in records]
    return "\n".join(lines) + "\n"


def _stamped(header: dict) -> dict:
    return {**header, "created": datetime.now(timezone.utc).isoformat(timespec="seconds")}


def render(report: Report, fmt: str = "ndjson") -> tuple[str, str | None]:
    """Rows text and summary text (None for check reports)."""
    write = _csv_text if fmt == "csv" else _ndjson_text
    header = _stamped(report.header)
    if report.checks:
        columns = ["name", "passed", "measured", "detail"]
        recs = [{"name": c.name, "passed": bool(c.passed), "measured": c.measured,
                 "detail": c.detail} for c in report.checks]
        return write(header, columns, recs), None
    return (write(header, ROW_COLUMNS, report.rows),
            write({**header, "section": "summary"}, SUMMARY_COLUMNS, report.summary))


def emit(report: Report, out=None, fmt: str = "ndjson") -> list[Path]:
    """Write rows to ``out`` and the summary block to ``<stem>.summary<suffix>``;
    with ``out=None`` both go to standard output.

    Only header lines carry a timestamp; data lines are a pure function of
    the configuration and code version.
    """
    rows, summary = render(report, fmt)
    if out is None:
        sys.stdout.write(rows)
        if summary is not None:
            sys.stdout.write(summary)
        sys.stdout.flush()
        return []
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rows)
    if summary is None:
        return [out]
    summary_path = out.with_name(f"{out.stem}.summary{out.suffix}")
    summary_path.write_text(summary)
    return [out, summary_path]


def read_rows(path) -> tuple[dict, list[dict]]:
    """Parse an emitted file back into (header, records)."""
    text = Path(path).read_text()
    if Path(path).suffix == ".csv":
        header = {}
        body = []
        for line in text.splitlines():
            if line.startswith("# "):
                k, _, v = line[2:].partition("=")
                header[k] = v
            else:
                body.append(line)
        records = list(csv.DictReader(body))
        return header, [{k: _parse_csv(v) for k, v in r.items()} for r in records]
    lines = [json.loads(line) for line in text.splitlines() if line.strip()]
    return lines[0], lines[1:]


def _parse_csv(v: str):
    if v == "":
        return None
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def data_section(path) -> str:
    """File contents without header lines."""
    lines = Path(path).read_text().splitlines()
    if Path(path).suffix == ".csv":
        return "\n".join(line for line in lines if not line.startswith("# "))
    return "\n".join(line for line in lines if '"kind":"header"' not in line)
