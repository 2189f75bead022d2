"""Integer-lattice geometry: centred boxes, bulk regions, double boundaries,
balls and gapped sub-box partitions.

Sites are integer vectors in ``[-N, N]^d``.  Every box carries a dense
C-ordered index over its sites so that fields can be stored as flat arrays.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SITE_BUDGET = 2_000_000
METRICS = ("linf", "l1")


class BudgetError(ValueError):
    """Raised when a box would exceed the configured site budget."""


class EmptyRegionError(ValueError):
    """Raised when a geometric construction selects no site."""


@dataclass(frozen=True)
class LatticeBox:
    d: int
    N: int
    metric: str = "linf"

    @property
    def side(self) -> int:
        return 2 * self.N + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def n_sites(self) -> int:
        return self.side**self.d

    def coords(self, index=None) -> np.ndarray:
        """Site coordinates, shape ``(k, d)``; all sites when ``index`` is None."""
        if index is None:
            index = np.arange(self.n_sites)
        index = np.asarray(index)
        return np.stack(np.unravel_index(index, self.shape), axis=-1) - self.N

    def site_index(self, x) -> np.ndarray | int:
        x = np.asarray(x)
        if np.any(np.abs(x) > self.N):
            raise IndexError(f"site {x.tolist()} outside V_{self.N}")
        idx = np.ravel_multi_index(tuple(np.moveaxis(x + self.N, -1, 0)), self.shape)
        return int(idx) if np.ndim(idx) == 0 else idx

    def contains(self, x) -> np.ndarray:
        return np.all(np.abs(np.asarray(x)) <= self.N, axis=-1)

    def sup_norm(self) -> np.ndarray:
        """``||x||_inf`` for every site, as a ``shape``-shaped array."""
        grids = np.meshgrid(*[np.abs(np.arange(-self.N, self.N + 1))] * self.d,
                            indexing="ij", sparse=True)
        out = grids[0]
        for gr in grids[1:]:
            out = np.maximum(out, gr)
        return np.broadcast_to(out, self.shape)

    @property
    def center_index(self) -> int:
        return self.site_index(np.zeros(self.d, dtype=int))


@dataclass(frozen=True)
class Region:
    """An ordered set of sites attached to a box.

    ``members`` holds coordinates sorted lexicographically.  Regions flagged
    ``exterior`` (double boundaries) live outside the parent box and have no
    dense indices.
    """

    parent: LatticeBox
    members: np.ndarray = field(repr=False)
    exterior: bool = False
    clipped: bool = False

    def __len__(self) -> int:
        return len(self.members)

    @property
    def indices(self) -> np.ndarray:
        if self.exterior:
            raise ValueError("exterior region has no interior indices")
        return np.asarray(self.parent.site_index(self.members), dtype=np.int64).reshape(-1)

    def as_set(self) -> set[tuple[int, ...]]:
        return {tuple(int(v) for v in row) for row in self.members}


def _sorted_unique(points: np.ndarray, d: int) -> np.ndarray:
    points = np.asarray(points, dtype=np.int64).reshape(-1, d)
    if len(points) == 0:
        return points
    return np.unique(points, axis=0)


def _region(box, points, **kw) -> Region:
    return Region(box, _sorted_unique(points, box.d), **kw)


def build_box(N: int, d: int, *, budget: int = DEFAULT_SITE_BUDGET,
              metric: str = "linf") -> LatticeBox:
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if d not in (1, 2, 3, 4):
        raise ValueError(f"dimension must be in 1..4, got {d}")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    n_sites = (2 * N + 1) ** d
    if n_sites > budget or n_sites >= np.iinfo(np.int64).max:
        raise BudgetError(f"box N={N}, d={d} has {n_sites} sites, budget is {budget}")
    return LatticeBox(d=d, N=N, metric=metric)


def inner_margin(N: int, ell: float) -> int:
    return int(math.floor(ell * N))


def inner_region(box: LatticeBox, ell: float) -> Region:
    """Bulk ``V_N^ell``: sites at least ``floor(ell*N)`` steps inside the
    outermost layer of the box.

    Distance to the complement is the same under the l-inf and l-1 metrics
    (the nearest exterior site is reached along one axis), so ``box.metric``
    does not change the result.
    """
    if not 0 < ell <= 1:
        raise ValueError(f"ell must lie in (0, 1], got {ell}")
    margin = inner_margin(box.N, ell)
    radius = box.N - margin
    if radius < 0:
        raise EmptyRegionError(f"V_N^ell empty for N={box.N}, ell={ell}")
    return cube_region(box, np.zeros(box.d, dtype=int), radius)


def cube_region(box: LatticeBox, center, radius: int) -> Region:
    """Sites ``y`` with ``||y - center||_inf <= radius``, clipped to the box."""
    center = np.asarray(center, dtype=np.int64)
    lo = np.maximum(center - radius, -box.N)
    hi = np.minimum(center + radius, box.N)
    clipped = bool(np.any(center - radius < -box.N) or np.any(center + radius > box.N))
    if np.any(hi < lo):
        return Region(box, np.zeros((0, box.d), dtype=np.int64), clipped=True)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.d)
    return Region(box, pts.astype(np.int64), clipped=clipped)


def _offsets(d: int, reach: int, metric: str) -> np.ndarray:
    rng = range(-reach, reach + 1)
    offs = np.array(list(itertools.product(rng, repeat=d)), dtype=np.int64)
    if metric == "l1":
        keep = np.abs(offs).sum(axis=1) <= reach
    else:
        keep = np.abs(offs).max(axis=1) <= reach
    offs = offs[keep]
    return offs[np.any(offs != 0, axis=1)]


def double_boundary(region: Region, *, metric: str | None = None) -> Region:
    """Sites outside ``region`` within distance 2 of it.

    For the full box this is ``∂₂V_N`` (sites outside the box).  For a proper
    sub-region the shell may include sites of the parent box; the result is
    flagged exterior only when every shell site lies outside the parent.
    """
    if len(region) == 0:
        raise EmptyRegionError("double boundary of an empty region")
    metric = metric or region.parent.metric
    d = region.parent.d
    offs = _offsets(d, 2, metric)
    cand = (region.members[:, None, :] + offs[None, :, :]).reshape(-1, d)
    cand = _sorted_unique(cand, d)
    inside = _membership(cand, region.members)
    shell = cand[~inside]
    exterior = not np.any(region.parent.contains(shell))
    return Region(region.parent, shell, exterior=exterior)


def _membership(points: np.ndarray, members: np.ndarray) -> np.ndarray:
    if len(members) == 0:
        return np.zeros(len(points), dtype=bool)
    view = np.ascontiguousarray(members).view([("", members.dtype)] * members.shape[1]).ravel()
    pv = np.ascontiguousarray(points).view([("", points.dtype)] * points.shape[1]).ravel()
    return np.isin(pv, view)


def full_region(box: LatticeBox) -> Region:
    return Region(box, box.coords())


def ball(box: LatticeBox, x, rho: float) -> Region:
    """Closed Euclidean ball ``D(x, rho)`` intersected with the box."""
    x = np.asarray(x, dtype=np.int64)
    r = int(math.floor(rho))
    cube = cube_region(box, x, r)
    diff = cube.members - x
    keep = (diff * diff).sum(axis=1) <= rho * rho
    full_extent = np.all(x - r >= -box.N) and np.all(x + r <= box.N)
    return Region(box, cube.members[keep], clipped=not full_extent)


def box_region(box: LatticeBox, x, a: float) -> Region:
    """Box ``B(x, a)`` of side length ``a`` centred at ``x``: ``||y-x||_inf <= a/2``."""
    return cube_region(box, x, int(math.floor(a / 2)))


@dataclass(frozen=True)
class SubBoxPartition:
    parent: LatticeBox
    alpha: float
    anchor: tuple[int, ...]
    side: int
    stride: int
    corners: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.corners)

    def box(self, i: int) -> Region:
        lo = self.corners[i]
        axes = [np.arange(a, a + self.side + 1) for a in lo]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.parent.d)
        return Region(self.parent, pts)

    def boxes(self) -> list[Region]:
        return [self.box(i) for i in range(len(self))]

    def sigma_scope(self) -> Region:
        """Union of the double boundaries of all member boxes."""
        shells = [double_boundary(b).members for b in self.boxes()]
        return _region(self.parent, np.concatenate(shells), exterior=False)


def partition_subboxes(box: LatticeBox, alpha: float, anchor=None) -> SubBoxPartition:
    """Grid of cubes of side length ``floor(N^alpha)`` (``side + 1`` sites per
    axis, as for ``B(x, a)``) with stride ``side + 4`` through ``anchor``
    (lowest corner of one cube), keeping those inside the box.  Neighbouring
    cubes are 4 apart in l-inf distance.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    side = int(math.floor(box.N**alpha))
    if side < 1:
        raise ValueError("floor(N^alpha) must be >= 1")
    stride = side + 4
    if anchor is None:
        anchor = (-box.N,) * box.d
    anchor = np.asarray(anchor, dtype=np.int64)
    if not box.contains(anchor):
        raise ValueError("anchor must be a site of the box")
    per_axis = []
    for a in anchor:
        # corner c = a + i*stride with -N <= c and c + side <= N
        i_lo = -((a + box.N) // stride)
        i_hi = (box.N - side - a) // stride
        per_axis.append(a + stride * np.arange(i_lo, i_hi + 1))
    if any(len(p) == 0 for p in per_axis):
        raise EmptyRegionError(f"no sub-box of side {side} fits in V_{box.N}")
    corners = np.stack(np.meshgrid(*per_axis, indexing="ij"), axis=-1).reshape(-1, box.d)
    return SubBoxPartition(box, alpha, tuple(int(v) for v in anchor), side, stride,
                           corners.astype(np.int64))
