"""High-point extraction and fractal observables: counts, clusters, pairs,
the biggest high square, the maximum and log-log exponent fits."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps
from scipy.ndimage import minimum_filter1d

from . import theory
from .gaussian import FieldSample
from .lattice import EmptyRegionError, LatticeBox, Region, inner_region

DEFAULT_ELL = 0.25


@dataclass(frozen=True)
class LevelThreshold:
    """Height ``level · rate · log N`` with ``rate = 2√(2g)`` for the membrane."""

    level: float
    N: int
    model: str = "membrane"

    @property
    def value(self) -> float:
        return self.level * theory.max_rate(self.model) * math.log(self.N)


def high_points(phi: FieldSample, level, region: Region | None = None) -> np.ndarray:
    """Sorted site indices of ``region`` where ``φ_x >= threshold``.

    ``level`` is a :class:`LevelThreshold` or a raw threshold value.
    """
    t = level.value if isinstance(level, LevelThreshold) else float(level)
    idx = np.arange(phi.box.n_sites) if region is None else region.indices
    return np.sort(idx[phi.values[idx] >= t])


def _bulk_high(phi, alpha, ell):
    bulk = inner_region(phi.box, ell)
    return high_points(phi, LevelThreshold(alpha, phi.box.N, phi.model), bulk)


def max_in_region(phi: FieldSample, region: Region | None = None) -> tuple[tuple, float]:
    idx = np.arange(phi.box.n_sites) if region is None else np.sort(region.indices)
    if len(idx) == 0:
        raise EmptyRegionError("max over an empty region")
    k = int(idx[np.argmax(phi.values[idx])])
    return tuple(int(v) for v in phi.box.coords(k)), float(phi.values[k])


def _within(points_a: np.ndarray, points_b: np.ndarray, radius: float) -> np.ndarray:
    """For each row of ``points_a``, the number of rows of ``points_b`` within
    Euclidean distance ``radius``, using a grid of cells of side ``ceil(radius)``."""
    counts = np.zeros(len(points_a), dtype=np.int64)
    if len(points_a) == 0 or len(points_b) == 0:
        return counts
    d = points_a.shape[1]
    cell = max(1, math.ceil(radius))
    r2 = radius * radius + 1e-9
    ca = np.floor_divide(points_a, cell)
    cb = np.floor_divide(points_b, cell)
    buckets: dict = {}
    order = np.lexsort(cb.T[::-1])
    keys = [tuple(r) for r in cb[order]]
    for k, grp in itertools.groupby(range(len(order)), key=lambda i: keys[i]):
        buckets[k] = points_b[order[list(grp)]]
    offsets = list(itertools.product((-1, 0, 1), repeat=d))
    a_order = np.lexsort(ca.T[::-1])
    a_keys = [tuple(r) for r in ca[a_order]]
    for k, grp in itertools.groupby(range(len(a_order)), key=lambda i: a_keys[i]):
        rows = a_order[list(grp)]
        near = [buckets[n] for n in (tuple(a + o for a, o in zip(k, off)) for off in offsets)
                if n in buckets]
        if not near:
            continue
        nb = np.concatenate(near)
        diff = points_a[rows][:, None, :] - nb[None, :, :]
        counts[rows] = np.count_nonzero((diff * diff).sum(axis=2) <= r2, axis=1)
    return counts


def cluster_count(phi: FieldSample, alpha: float, x, beta: float,
                  ell: float = DEFAULT_ELL) -> int:
    """``|H_N(α) ∩ D(x, N^β)|`` with a closed Euclidean ball."""
    return int(cluster_counts(phi, alpha, beta, np.atleast_2d(x), ell)[0])


def cluster_counts(phi: FieldSample, alpha: float, beta: float, centers,
                   ell: float = DEFAULT_ELL) -> np.ndarray:
    hp = phi.box.coords(_bulk_high(phi, alpha, ell))
    return _within(np.asarray(centers, dtype=np.int64).reshape(-1, phi.box.d), hp,
                   phi.box.N**beta)


def pair_count(phi: FieldSample, alpha: float, beta: float, ell: float = DEFAULT_ELL,
               include_diagonal: bool = True) -> int:
    """Ordered pairs ``(x, y)`` of ``H_N(α)`` with ``|x - y| <= N^β``."""
    hp = phi.box.coords(_bulk_high(phi, alpha, ell))
    total = int(_within(hp, hp, phi.box.N**beta).sum())
    return total if include_diagonal else total - len(hp)


def _cube_all(mask: np.ndarray, k: int) -> np.ndarray:
    """``out[x]`` is True iff every site within l-inf radius ``k`` of ``x`` is
    set; cubes reaching outside the array fail."""
    out = mask.astype(np.uint8)
    for ax in range(mask.ndim):
        out = minimum_filter1d(out, 2 * k + 1, axis=ax, mode="constant", cval=0)
    return out.astype(bool)


def biggest_high_square(phi: FieldSample, eta: float, ell: float = DEFAULT_ELL,
                        threshold: float | None = None) -> int:
    """``D_N(η)``: side ``2k+1`` of the largest cube ``B(x, ·)`` centred in
    ``V_N^ℓ``, contained in ``V_N``, with every height above the threshold;
    0 when no single site qualifies."""
    box = phi.box
    t = LevelThreshold(eta, box.N, phi.model).value if threshold is None else threshold
    mask = phi.grid() >= t
    centers = np.zeros(box.n_sites, dtype=bool)
    centers[inner_region(box, ell).indices] = True
    centers = centers.reshape(box.shape)

    def ok(k):
        return bool(np.any(_cube_all(mask, k) & centers))

    if not ok(0):
        return 0
    lo, hi = 0, box.N
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid - 1
    return 2 * lo + 1


class InsufficientPointsError(ValueError):
    pass


@dataclass(frozen=True)
class ExponentFit:
    points: np.ndarray = field(repr=False)
    slope: float
    intercept: float
    residual_norm: float
    half_width: float
    ratios: dict = field(default_factory=dict)
    dropped: int = 0


def exponent_fit(points, confidence: float = 0.95) -> ExponentFit:
    """Least-squares slope of ``log statistic`` against ``log N``.

    Non-positive statistics are dropped with a warning.  ``ratios`` maps each
    N to the mean of ``log statistic / log N`` over its points.
    """
    arr = np.asarray(points, dtype=float).reshape(-1, 2)
    keep = arr[:, 1] > 0
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        warnings.warn(f"dropped {dropped} non-positive statistics from the fit", stacklevel=2)
    arr = arr[keep]
    if len(np.unique(arr[:, 0])) < 3:
        raise InsufficientPointsError("need statistics at >= 3 distinct N")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    res = sps.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    dof = len(x) - 2
    half = float(sps.t.ppf(0.5 + confidence / 2, dof) * res.stderr) if dof > 0 else math.inf
    ratios = {int(n) if float(n).is_integer() else float(n): float(np.mean(y[arr[:, 0] == n] / np.log(n)))
              for n in np.unique(arr[:, 0])}
    return ExponentFit(np.column_stack([x, y]), float(res.slope), float(res.intercept),
                       float(np.linalg.norm(resid)), half, ratios, dropped)


@dataclass(frozen=True)
class HighPointRecord:
    model: str
    N: int
    eta: float
    alpha: float
    beta: float
    ell: float
    seed: tuple
    sampler: str
    count: int
    cluster_center: int
    cluster_conditional: float | None
    pairs: int
    square_side: int
    field_max: float

    def exponents(self) -> dict:
        """``log(statistic) / log N`` per observable; None where undefined."""
        ln = math.log(self.N)

        def r(v):
            return math.log(v) / ln if v and v > 0 else None

        return {
            "high_point_dim": r(self.count),
            "cluster_dim": r(self.cluster_center),
            "cluster_dim_conditional": self.cluster_conditional,
            "rho": r(self.pairs),
            "square_exp": r(self.square_side),
            "max_rate": self.field_max / ln,
        }


def measure(phi: FieldSample, eta: float, alpha: float, beta: float,
            ell: float = DEFAULT_ELL) -> HighPointRecord:
    box: LatticeBox = phi.box
    hp_eta = _bulk_high(phi, eta, ell)
    hp_alpha = box.coords(_bulk_high(phi, alpha, ell))
    radius = box.N**beta
    center = np.zeros((1, box.d), dtype=np.int64)
    around_center = int(_within(center, hp_alpha, radius)[0])
    per_point = _within(hp_alpha, hp_alpha, radius)
    ln = math.log(box.N)
    conditional = float(np.mean(np.log(per_point)) / ln) if len(per_point) else None
    _, fmax = max_in_region(phi)
    return HighPointRecord(
        phi.model, box.N, eta, alpha, beta, ell, phi.seed, phi.sampler,
        count=len(hp_eta), cluster_center=around_center, cluster_conditional=conditional,
        pairs=int(per_point.sum()), square_side=biggest_high_square(phi, eta, ell),
        field_max=fmax,
    )


def monotonicity_violations(phi: FieldSample, etas, alphas, betas,
                            ell: float = DEFAULT_ELL) -> list[str]:
    """Order relations every sample must satisfy; returns the broken ones.

    Counts shrink as levels rise, neighbourhood counts grow with the radius,
    ordered pair counts sit between ``|H|`` and ``|H|²`` and the biggest
    high square is odd, bounded and shrinks as ``η`` rises.
    """
    box = phi.box
    bad = []
    etas, alphas, betas = sorted(etas), sorted(alphas), sorted(betas)
    counts = [len(_bulk_high(phi, e, ell)) for e in etas]
    squares = [biggest_high_square(phi, e, ell) for e in etas]
    for i in range(len(etas) - 1):
        if counts[i] < counts[i + 1]:
            bad.append(f"|H(eta)| increased from eta={etas[i]} to {etas[i + 1]}")
        if squares[i] < squares[i + 1]:
            bad.append(f"D_N increased from eta={etas[i]} to {etas[i + 1]}")
    for s in squares:
        if s and (s % 2 == 0 or s > box.side):
            bad.append(f"D_N={s} is not an odd side within the box")
    origin = np.zeros((1, box.d), dtype=np.int64)
    prev_pairs = None
    for a in alphas:
        hp = box.coords(_bulk_high(phi, a, ell))
        n = len(hp)
        pairs = [int(_within(hp, hp, box.N**b).sum()) for b in betas]
        around = [int(_within(origin, hp, box.N**b)[0]) for b in betas]
        if any(p < n or p > n * n for p in pairs):
            bad.append(f"pair count outside [|H|, |H|^2] at alpha={a}")
        if any(p > q for p, q in zip(pairs, pairs[1:])):
            bad.append(f"pair count decreased in beta at alpha={a}")
        if any(c > n for c in around) or any(p > q for p, q in zip(around, around[1:])):
            bad.append(f"cluster count not monotone or above |H| at alpha={a}")
        if prev_pairs is not None and any(p > q for p, q in zip(pairs, prev_pairs)):
            bad.append(f"pair count increased with alpha at alpha={a}")
        prev_pairs = pairs
    return bad
