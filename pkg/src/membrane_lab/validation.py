"""Deterministic checks of covariance bounds, oracles and identities.

Each ``check_*`` returns a :class:`CheckResult`; ``run_checks`` catches
solver failures per check so one failure never aborts the suite.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import theory
from .gaussian import ConditionalOperator, conditional_decompose, sample_exact
from .gaussian import tail_exact, tail_lower, tail_upper
from .lattice import build_box, cube_region, inner_margin
from .operators import assemble_block, assemble_precision
from .solver import SolverCache, factorize, gbar_column, green_column, solve_laplace

log = logging.getLogger(__name__)

VARIANCE_SLOPE_BAND = (0.65, 0.97)
PROFILE_MAX = 1.5
PROFILE_DRIFT = 0.3
GAP_DRIFT = 0.2


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    detail: str = ""


def variance_ladder(Ns, *, d: int = 4, normalization: str = "normalized",
                    cache: SolverCache | None = None, rtol: float = 1e-9) -> np.ndarray:
    """Rows ``(N, Var(φ_0))`` from exact Green columns at the box centre."""
    out = []
    for N in Ns:
        pm = assemble_precision(build_box(N, d), "membrane", normalization)
        col = green_column(factorize(pm), np.zeros(d, dtype=int), rtol=rtol, cache=cache)
        out.append((N, col.variance))
    return np.array(out, dtype=float)


def bulk_pairs(N: int, d: int = 4, ell: float = 0.25) -> list[tuple[tuple, tuple]]:
    """Deterministic stratified pairs in ``V_N^ℓ``: three anchors (centre,
    face, corner of the bulk) times three directions (axis, 2-diagonal,
    full diagonal), at lattice steps 1, 2, 4, ... while both ends stay in the
    bulk."""
    R = N - inner_margin(N, ell)
    anchors = [(0,) * d, (-R,) + (0,) * (d - 1), (-R,) * d]
    dirs = [(1,) + (0,) * (d - 1)]
    if d >= 2:
        dirs.append((1, 1) + (0,) * (d - 2))
    if d >= 3:
        dirs.append((1,) * d)
    pairs = []
    for a in anchors:
        for u in dirs:
            r = 1
            while True:
                y = tuple(ai + r * ui for ai, ui in zip(a, u))
                if max(abs(v) for v in y) > R:
                    break
                pairs.append((a, y))
                r *= 2
    return pairs


def _columns(N, d, normalization, anchors, cache, rtol):
    box = build_box(N, d)
    f = factorize(assemble_precision(box, "membrane", normalization))
    return box, {a: green_column(f, a, rtol=rtol, cache=cache).values for a in anchors}


def covariance_profile(N: int, *, d: int = 4, ell: float = 0.25,
                       normalization: str = "normalized", cache=None,
                       rtol: float = 1e-9) -> float:
    """``max |Cov(φ_x, φ_y) - g(log N - log|x-y|)|`` over :func:`bulk_pairs`."""
    pairs = bulk_pairs(N, d, ell)
    box, cols = _columns(N, d, normalization, sorted({a for a, _ in pairs}), cache, rtol)
    g = theory.g_const()
    dev = [abs(cols[a][box.site_index(y)] - g * (math.log(N) - math.log(np.linalg.norm(np.subtract(y, a)))))
           for a, y in pairs]
    return float(max(dev))


def green_gbar_gap(N: int, *, d: int = 4, ell: float = 0.25,
                   normalization: str = "normalized", cache=None, rtol: float = 1e-9) -> float:
    """``max |G_N(x,y) - Ḡ_N(x,y)|`` over bulk pairs and their diagonals."""
    pairs = bulk_pairs(N, d, ell)
    anchors = sorted({a for a, _ in pairs})
    box, cols = _columns(N, d, normalization, anchors, cache, rtol)
    gaps = []
    for a in anchors:
        gb = gbar_column(box, a, normalization)
        ys = [a] + [y for aa, y in pairs if aa == a]
        gaps += [abs(cols[a][box.site_index(y)] - gb[box.site_index(y)]) for y in ys]
    return float(max(gaps))


def random_walk_visits(N: int, d: int, x, walks: int, rng: np.random.Generator,
                       batch: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo expected visit counts (time 0 included) of a simple random
    walk from ``x`` killed on leaving ``[-N, N]^d``; returns (mean, stderr)."""
    box = build_box(N, d)
    total = np.zeros(box.n_sites)
    total_sq = np.zeros(box.n_sites)
    done = 0
    while done < walks:
        b = min(batch, walks - done)
        pos = np.tile(np.asarray(x, dtype=np.int64), (b, 1))
        counts = np.zeros((b, box.n_sites), dtype=np.int32)
        alive = np.arange(b)
        while len(alive):
            p = pos[alive]
            np.add.at(counts, (alive, box.site_index(p)), 1)
            axis = rng.integers(0, d, len(alive))
            step = rng.choice(np.array([-1, 1]), len(alive))
            p[np.arange(len(alive)), axis] += step
            pos[alive] = p
            alive = alive[np.all(np.abs(p) <= N, axis=1)]
        total += counts.sum(axis=0)
        total_sq += (counts.astype(np.float64) ** 2).sum(axis=0)
        done += b
    mean = total / walks
    var = total_sq / walks - mean**2
    return mean, np.sqrt(np.maximum(var, 0) / walks)


def check_tail_sandwich(points: int = 600) -> CheckResult:
    a = np.linspace(1.0, 6.0, points)
    lo, ex, up = tail_lower(a), tail_exact(a), tail_upper(a)
    small = np.linspace(0.0, 1.0, 100, endpoint=False)
    ok = bool(np.all(lo <= ex) and np.all(ex <= up) and np.all(tail_exact(small) <= tail_upper(small)))
    return CheckResult("tail_sandwich", ok, {"min_gap_lower": float(np.min(ex - lo)),
                                             "min_gap_upper": float(np.min(up - ex))})


def check_theory_identities() -> CheckResult:
    betas = np.linspace(0.01, 0.99, 99)
    f1 = max(abs(theory.F(2, b, 1.0) - (1 + b)) for b in betas)
    fix = max(abs(theory.F(2, b, theory.gamma_star(b)) - theory.gamma_star(b)) for b in betas)
    grid = np.linspace(0.02, 0.98, 50)
    lower_ok = all(theory.rho(a, b) >= 4 * (1 - a * a) * (1 + b) - 1e-12 for a in grid for b in grid)
    grid_err = max(abs(theory.rho(a, b) - theory.rho_grid(a, b, 1e-4)) for a in grid[::7] for b in grid[::7])
    ok = bool(f1 <= 1e-12 and fix <= 1e-12 and lower_ok and grid_err <= 1e-4)
    return CheckResult("theory_identities", ok, {"F_at_one": float(f1), "fixed_point": float(fix),
                                                 "rho_grid_error": float(grid_err),
                                                 "rho_lower_bound": lower_ok})


def check_markov_submatrix(N: int = 6, d: int = 4) -> CheckResult:
    """Every cube sub-box at l-inf distance >= 3 from the double boundary:
    its block of ``Q`` equals its own precision matrix exactly."""
    box = build_box(N, d)
    q = assemble_precision(box).entries
    lim = N - 2
    checked = bad = 0
    for side in range(1, 2 * lim + 2):
        sub = assemble_block((side,) * d)
        starts = np.arange(-lim, lim - side + 2)
        for lo in itertools.product(starts, repeat=d):
            axes = [np.arange(a, a + side) for a in lo]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
            idx = box.site_index(pts)
            checked += 1
            if (q[idx][:, idx] != sub).nnz:
                bad += 1
    return CheckResult("markov_submatrix", bad == 0, {"boxes": checked, "mismatches": bad})


def check_green_dense(cases=((1, 10), (2, 8), (4, 3)), model: str = "membrane",
                      tol: float = 1e-9) -> CheckResult:
    worst = 0.0
    for d, N in cases:
        box = build_box(N, d)
        pm = assemble_precision(box, model)
        f = factorize(pm)
        dense = np.linalg.inv(pm.entries.toarray())
        for x in (np.zeros(d, dtype=int), -N * np.ones(d, dtype=int)):
            col = green_column(f, x).values
            worst = max(worst, float(np.abs(col - dense[:, box.site_index(x)]).max()))
    return CheckResult(f"green_dense_{model}", worst <= tol, {"max_abs_error": worst})


def check_variance_slope(Ns, normalization="normalized", cache=None) -> CheckResult:
    ladder = variance_ladder(Ns, normalization=normalization, cache=cache)
    slope = float(np.polyfit(np.log(ladder[:, 0]), ladder[:, 1], 1)[0])
    band = np.abs(ladder[:, 1] - theory.g_const() * np.log(ladder[:, 0]))
    non_expanding = bool(band[-1] <= band[0] + 1e-12)
    lo, hi = VARIANCE_SLOPE_BAND
    return CheckResult("variance_slope", lo <= slope <= hi and non_expanding,
                       {"slope": slope, "band_first": float(band[0]),
                        "band_last": float(band[-1])})


def check_covariance_profile(Ns, normalization="normalized", cache=None) -> CheckResult:
    vals = {N: covariance_profile(N, normalization=normalization, cache=cache) for N in Ns}
    big = vals[max(Ns)]
    drift = max(vals.values()) - min(vals.values())
    return CheckResult("covariance_profile", big <= PROFILE_MAX and drift < PROFILE_DRIFT,
                       {f"max_dev_N{N}": v for N, v in vals.items()} | {"drift": drift})


def check_green_gbar_gap(Ns, normalization="normalized", cache=None) -> CheckResult:
    gaps = [green_gbar_gap(N, normalization=normalization, cache=cache) for N in Ns]
    ok = all(b <= a + GAP_DRIFT for a, b in zip(gaps, gaps[1:]))
    return CheckResult("green_gbar_gap", ok, {f"gap_N{N}": g for N, g in zip(Ns, gaps)})


def check_random_walk(N: int = 3, walks: int = 200_000, seed: int = 7) -> CheckResult:
    from .gaussian import make_rng

    box = build_box(N, 2)
    x = np.zeros(2, dtype=int)
    mean, se = random_walk_visits(N, 2, x, walks, make_rng(seed))
    e = np.zeros(box.n_sites)
    e[box.site_index(x)] = 1.0
    exact = solve_laplace(box, e)
    z = np.abs(mean - exact) / np.maximum(se, 1e-300)
    z_source = float(z[box.site_index(x)])
    # 3 SE at the source; family-wise 3-sigma level (p = 0.0027) across all sites
    z_family = float(norm.isf(0.0027 / 2 / box.n_sites))
    ok = z_source <= 3.0 and float(z.max()) <= z_family
    return CheckResult("random_walk_green", ok, {"z_source": z_source, "max_z": float(z.max()),
                                                 "z_family": z_family, "walks": walks})


def check_conditional_identity(N: int = 4, d: int = 4, seed: int = 3) -> CheckResult:
    box = build_box(N, d)
    pm = assemble_precision(box)
    phi = sample_exact(factorize(pm), seed)
    region = cube_region(box, np.zeros(d, dtype=int), 1)
    split = conditional_decompose(phi, region, op=ConditionalOperator(pm, region))
    err = float(np.max(np.abs(split.mean_part + split.residual - phi.values[region.indices])))
    scale = float(np.max(np.abs(phi.values[region.indices])))
    return CheckResult("conditional_identity", err <= 1e-12 * max(scale, 1.0), {"max_error": err})


def run_checks(config) -> list[CheckResult]:
    cache = SolverCache(config.cache_dir, enabled=config.use_cache) if config.cache_dir else None
    norm = config.normalization
    if config.model == "dgff":
        plan = [
            ("tail_sandwich", check_tail_sandwich),
            ("theory_identities", check_theory_identities),
            ("green_dense_dgff", lambda: check_green_dense(((1, 10), (2, 8)), "dgff")),
            ("random_walk_green", lambda: check_random_walk(3, config.walks, config.seed)),
        ]
    else:
        plan = [
            ("tail_sandwich", check_tail_sandwich),
            ("theory_identities", check_theory_identities),
            ("markov_submatrix", check_markov_submatrix),
            ("green_dense_membrane", check_green_dense),
            ("conditional_identity", check_conditional_identity),
            ("variance_slope", lambda: check_variance_slope(config.validate_N, norm, cache)),
            ("covariance_profile", lambda: check_covariance_profile(config.profile_N, norm, cache)),
            ("green_gbar_gap", lambda: check_green_gbar_gap(config.gap_N, norm, cache)),
        ]
    results = []
    for name, fn in plan:
        log.info("check %s", name)
        try:
            results.append(fn())
        except Exception as exc:  # reported per check, never aborts the suite
            results.append(CheckResult(name, False, {}, f"{type(exc).__name__}: {exc}"))
    return results
