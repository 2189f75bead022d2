"""Factorisations, Green's function columns, Dirichlet Laplace solves,
the convolved harmonic Green's function ``Ḡ_N = Γ_N²`` and an on-disk cache.

Three backends share one interface:

``cholesky``
    Sparse LDLᵀ through SuperLU with a reverse Cuthill-McKee ordering and no
    pivoting, rescaled to ``P L Lᵀ Pᵀ``.  Fill is bounded in advance by the
    envelope of the reordered matrix.
``pcg``
    Membrane boxes too large to factor.  The truncated bilaplacian is
    ``Δ_N² + diag(c)``, so ``Δ_N⁻²`` (diagonal in the DST-I basis) is an
    excellent preconditioner; CG typically stops after ~10 iterations.
``spectral``
    DGFF boxes: ``-Δ_N`` is diagonalised exactly by the DST-I.
"""
from __future__ import annotations

import hashlib
import io
import logging
import os
import re
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.fft import dstn
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .lattice import LatticeBox
from .operators import PrecisionMatrix, assemble_precision, boundary_counts

log = logging.getLogger(__name__)

DIRECT_MAX_SITES = 5000
DEFAULT_FILL_BUDGET = 60_000_000
GREEN_RTOL = 1e-9
SAMPLE_RTOL = 1e-6


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class MemoryBudgetError(MemoryError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


def _neighbour_weight(d: int, normalization: str) -> float:
    return 1.0 / (2 * d) if normalization == "normalized" else 1.0


class SpectralLaplacian:
    """``-Δ_N`` on a box with zero Dirichlet data, in the DST-I eigenbasis."""

    def __init__(self, box: LatticeBox, normalization: str = "normalized"):
        self.box = box
        self.normalization = normalization
        k = np.arange(1, box.side + 1) * np.pi / (box.side + 1)
        cos = np.meshgrid(*[np.cos(k)] * box.d, indexing="ij", sparse=True)
        mu = 1.0 - sum(cos) / box.d
        if normalization == "unnormalized":
            mu = mu * (2 * box.d)
        self.eigenvalues = np.broadcast_to(mu, box.shape).copy()

    def _transform(self, v):
        return dstn(v.reshape(self.box.shape), type=1, norm="ortho")

    def apply_power(self, rhs: np.ndarray, power: float) -> np.ndarray:
        """``(-Δ_N)^power rhs``; negative powers are inverses."""
        spec = self._transform(np.asarray(rhs, dtype=float))
        return self._transform(spec * self.eigenvalues**power).ravel()


def solve_laplace(box: LatticeBox, rhs, *, method: str = "spectral",
                  normalization: str = "normalized") -> np.ndarray:
    """Apply ``Γ_N = (-Δ_N)^{-1}``, the Dirichlet Green's function of the box.

    Under the normalised convention ``Γ_N(x, y)`` is the expected number of
    visits to ``y`` of a simple random walk started at ``x`` and killed on
    leaving the box (time 0 included).
    """
    rhs = np.asarray(rhs, dtype=float).ravel()
    if method == "spectral":
        return SpectralLaplacian(box, normalization).apply_power(rhs, -1)
    if method == "sparse":
        lap = assemble_precision(box, "dgff", normalization).entries.tocsc()
        return spla.spsolve(lap, rhs)
    raise ValueError(f"unknown method {method!r}")


def gbar_column(box: LatticeBox, x, normalization: str = "normalized") -> np.ndarray:
    e = np.zeros(box.n_sites)
    e[box.site_index(x)] = 1.0
    return SpectralLaplacian(box, normalization).apply_power(e, -2)


def gbar(box: LatticeBox, x, y, normalization: str = "normalized") -> float:
    """``Ḡ_N(x, y) = Σ_z Γ_N(x, z) Γ_N(z, y)`` from two Laplace solves."""
    gx = solve_laplace(box, _unit(box, x), normalization=normalization)
    gy = solve_laplace(box, _unit(box, y), normalization=normalization)
    return float(gx @ gy)


def _unit(box: LatticeBox, x) -> np.ndarray:
    e = np.zeros(box.n_sites)
    e[box.site_index(x)] = 1.0
    return e


def envelope_size(a: sp.spmatrix) -> int:
    """Entries in the lower envelope (profile) of a symmetric matrix.

    The Cholesky factor of ``a`` without further reordering is confined to
    its envelope, so this bounds the factor's fill from above.
    """
    low = sp.tril(a).tocsr()
    low.sort_indices()
    rows = np.arange(a.shape[0])
    first = rows.copy()
    has = np.diff(low.indptr) > 0
    first[has] = np.minimum(low.indices[low.indptr[:-1][has]], rows[has])
    return int(np.sum(rows - first + 1))


@dataclass
class Factorization:
    backend: str
    n: int
    fingerprint: str
    stats: dict = field(default_factory=dict)
    perm: np.ndarray | None = field(default=None, repr=False)
    factor: sp.csc_matrix | None = field(default=None, repr=False)
    precision: PrecisionMatrix | None = field(default=None, repr=False)
    matrix: sp.csr_matrix | None = field(default=None, repr=False)
    _lu: object = field(default=None, repr=False)
    _spectral: SpectralLaplacian | None = field(default=None, repr=False)
    _aux: dict = field(default_factory=dict, repr=False)

    @property
    def exact_solves(self) -> bool:
        return self.backend in ("cholesky", "spectral")

    def solve(self, b, rtol: float = GREEN_RTOL) -> np.ndarray:
        b = np.asarray(b, dtype=float).ravel()
        if self.backend == "cholesky":
            x = np.empty_like(b)
            x[self.perm] = self._lu.solve(b[self.perm])
            return x
        if self.backend == "spectral":
            return self._spectral.apply_power(b, -1)
        return self._pcg(b, rtol)

    def _pcg(self, b, rtol):
        if not np.any(b):
            return np.zeros_like(b)
        spec = self._spectral
        q = self.matrix
        m = spla.LinearOperator(q.shape, matvec=lambda v: spec.apply_power(v, -2), dtype=float)
        counter = {"it": 0}

        def cb(_):
            counter["it"] += 1

        x, info = spla.cg(q, b, M=m, rtol=rtol, atol=0.0, maxiter=2000, callback=cb)
        res = np.linalg.norm(q @ x - b) / np.linalg.norm(b)
        self.stats["last_iterations"] = counter["it"]
        if info != 0 or res > 10 * rtol:
            raise ConvergenceError("conjugate gradient failed", res)
        return x

    def sample(self, rng: np.random.Generator, rtol: float = SAMPLE_RTOL) -> np.ndarray:
        """One draw with covariance ``Q⁻¹``."""
        if self.backend == "cholesky":
            z = rng.standard_normal(self.n)
            # A⁻¹ L z = L⁻ᵀ z for A = L Lᵀ
            y = self._lu.solve(self.factor @ z)
            x = np.empty_like(y)
            x[self.perm] = y
            return x
        if self.backend == "spectral":
            z = rng.standard_normal(self.n).reshape(self._spectral.box.shape)
            scaled = z / np.sqrt(self._spectral.eigenvalues)
            return dstn(scaled, type=1, norm="ortho").ravel()
        # Q = A Aᵀ with A = [-Δ_N | diag(sqrt(c))]; Q⁻¹ A ξ has covariance Q⁻¹
        z1 = rng.standard_normal(self.n)
        z2 = rng.standard_normal(self.n)
        rhs = self._aux["neg_lap"] @ z1 + self._aux["sqrt_diag"] * z2
        return self._pcg(rhs, rtol)

    def reconstruction_error(self) -> float:
        if self.backend != "cholesky":
            raise ValueError("only defined for the cholesky backend")
        a = self.matrix[self.perm][:, self.perm]
        diff = (self.factor @ self.factor.T - a)
        return float(abs(diff).max() / abs(a).max())


def factorize(q, method: str = "auto", *, fill_budget: int = DEFAULT_FILL_BUDGET,
              ordering: str = "rcm") -> Factorization:
    """Factorise a precision matrix (or any sparse SPD matrix) for solves and sampling."""
    pm = q if isinstance(q, PrecisionMatrix) else None
    mat = (pm.entries if pm is not None else sp.csr_matrix(q)).tocsr()
    if mat.shape[0] != mat.shape[1]:
        raise ValueError("matrix must be square")
    if mat.nnz and abs(mat - mat.T).max() != 0:
        raise ValueError("matrix must be symmetric")
    if method == "auto":
        if pm is not None and pm.model == "dgff":
            method = "spectral"
        elif pm is not None and pm.n > DIRECT_MAX_SITES:
            method = "pcg"
        else:
            method = "cholesky"
    fp = pm.fingerprint() if pm is not None else _matrix_fingerprint(mat)
    if method == "cholesky":
        return _cholesky(mat, fp, pm, fill_budget, ordering)
    if pm is None:
        raise ValueError(f"{method} backend needs a box PrecisionMatrix")
    spec = SpectralLaplacian(pm.box, pm.normalization)
    if method == "spectral":
        if pm.model != "dgff":
            raise ValueError("spectral backend is exact only for the dgff model")
        return Factorization("spectral", pm.n, fp, {"n": pm.n, "nnz_Q": mat.nnz}, precision=pm,
                             matrix=mat, _spectral=spec)
    if method == "pcg":
        if pm.model != "membrane":
            raise ValueError("pcg backend expects the membrane model")
        neg_lap = assemble_precision(pm.box, "dgff", pm.normalization).entries
        w = _neighbour_weight(pm.box.d, pm.normalization)
        sqrt_diag = w * np.sqrt(boundary_counts(pm.box))
        return Factorization("pcg", pm.n, fp, {"n": pm.n, "nnz_Q": mat.nnz}, precision=pm,
                             matrix=mat, _spectral=spec,
                             _aux={"neg_lap": neg_lap, "sqrt_diag": sqrt_diag})
    raise ValueError(f"unknown factorization method {method!r}")


def _matrix_fingerprint(mat: sp.csr_matrix) -> str:
    h = hashlib.sha256()
    mat = mat.copy()
    mat.sort_indices()
    for arr in (mat.indptr, mat.indices, mat.data):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:32]


def _cholesky(mat, fp, pm, fill_budget, ordering) -> Factorization:
    n = mat.shape[0]
    if ordering == "rcm":
        perm = reverse_cuthill_mckee(mat, symmetric_mode=True).astype(np.int64)
    elif ordering == "natural":
        perm = np.arange(n)
    else:
        raise ValueError(f"unknown ordering {ordering!r}")
    a = mat[perm][:, perm].tocsc()
    predicted = envelope_size(a)
    if predicted > fill_budget:
        raise MemoryBudgetError(f"predicted factor fill {predicted} exceeds budget {fill_budget}")
    try:
        lu = spla.splu(a, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    if not (np.array_equal(lu.perm_r, np.arange(n)) and np.array_equal(lu.perm_c, np.arange(n))):
        raise NotPositiveDefiniteError("solver pivoted off the diagonal")
    diag = lu.U.diagonal()
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise NotPositiveDefiniteError(f"non-positive pivot {diag.min():.3e}")
    factor = (lu.L @ sp.diags(np.sqrt(diag))).tocsc()
    col_counts = np.diff(factor.indptr)
    stats = {"n": n, "nnz_Q": int(mat.nnz), "nnz_L": int(factor.nnz),
             "predicted_fill": predicted, "flops": int(np.sum(col_counts.astype(np.int64) ** 2))}
    return Factorization("cholesky", n, fp, stats, perm=perm, factor=factor, precision=pm,
                         matrix=mat, _lu=lu)


@dataclass(frozen=True)
class GreenColumn:
    source: tuple
    index: int
    values: np.ndarray = field(repr=False)

    @property
    def variance(self) -> float:
        return float(self.values[self.index])


def green_column(f: Factorization, x, *, rtol: float = GREEN_RTOL,
                 cache: "SolverCache | None" = None) -> GreenColumn:
    """Covariance column ``G_N(x, ·)`` from ``Q g = e_x``."""
    box = f.precision.box if f.precision is not None else None
    idx = int(box.site_index(x)) if box is not None else int(x)
    src = tuple(int(v) for v in np.atleast_1d(x))
    op = "green_" + "_".join(map(str, src)) + f"_{rtol:g}"
    if cache is not None:
        hit = cache.get(f.fingerprint, op)
        if hit is not None:
            return GreenColumn(src, idx, hit)
    e = np.zeros(f.n)
    e[idx] = 1.0
    g = f.solve(e, rtol=rtol)
    if cache is not None:
        cache.put(f.fingerprint, op, g)
    return GreenColumn(src, idx, g)


CACHE_MAGIC = b"MLCA"
CACHE_VERSION = 1


class SolverCache:
    """Content-addressed store: ``<root>/<fingerprint>/<op>.bin``.

    Entries carry a format version and a SHA-256 of the payload; anything
    that fails either check is treated as a miss.
    """

    def __init__(self, root, enabled: bool = True, version: int = CACHE_VERSION):
        self.root = Path(root)
        self.enabled = enabled
        self.version = version
        self._lock = threading.Lock()

    def path(self, fingerprint: str, op: str) -> Path:
        safe = re.sub(r"[^A-Za-z0-9_.+-]", "_", op)
        return self.root / fingerprint / f"{safe}.bin"

    def put(self, fingerprint: str, op: str, payload: np.ndarray) -> None:
        if not self.enabled:
            return
        buf = io.BytesIO()
        np.save(buf, np.asarray(payload), allow_pickle=False)
        data = buf.getvalue()
        blob = (CACHE_MAGIC + struct.pack("<H", self.version) + hashlib.sha256(data).digest()
                + struct.pack("<Q", len(data)) + data)
        path = self.path(fingerprint, op)
        with self._lock:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(f".tmp{os.getpid()}")
                tmp.write_bytes(blob)
                os.replace(tmp, path)
            except OSError as exc:
                log.warning("cache write failed for %s: %s", path, exc)

    def get(self, fingerprint: str, op: str) -> np.ndarray | None:
        if not self.enabled:
            return None
        path = self.path(fingerprint, op)
        with self._lock:
            try:
                blob = path.read_bytes()
            except OSError:
                return None
        if len(blob) < 46 or blob[:4] != CACHE_MAGIC:
            return None
        (version,) = struct.unpack_from("<H", blob, 4)
        if version != self.version:
            return None
        digest = blob[6:38]
        (length,) = struct.unpack_from("<Q", blob, 38)
        data = blob[46:46 + length]
        if len(data) != length or hashlib.sha256(data).digest() != digest:
            log.warning("corrupt cache entry %s, recomputing", path)
            return None
        return np.load(io.BytesIO(data), allow_pickle=False)
