"""Laplacian / bilaplacian stencils and sparse precision-matrix assembly.

The default Laplacian is the random-walk normalised one,
``Δf(x) = (1/2d) Σ_{|e|=1} f(x+e) - f(x)``.  ``normalization="unnormalized"``
switches to ``Σ f(x+e) - 2d f(x)`` for sensitivity checks.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .lattice import LatticeBox

MODELS = ("membrane", "dgff")
NORMALIZATIONS = ("normalized", "unnormalized")

MATRIX_MAGIC = b"MLPQ"
MATRIX_VERSION = 1


@dataclass(frozen=True)
class Stencil:
    """Exact rational weights keyed by lattice offset."""

    d: int
    weights: dict = field(repr=False)

    @property
    def offsets(self) -> np.ndarray:
        return np.array(sorted(self.weights), dtype=np.int64).reshape(-1, self.d)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([float(self.weights[o]) for o in sorted(self.weights)])

    def __getitem__(self, offset) -> Fraction:
        return self.weights.get(tuple(int(v) for v in offset), Fraction(0))

    def __len__(self) -> int:
        return len(self.weights)

    def total(self) -> Fraction:
        return sum(self.weights.values(), Fraction(0))

    def convolve(self, other: "Stencil") -> "Stencil":
        out: dict = {}
        for a, wa in self.weights.items():
            for b, wb in other.weights.items():
                key = tuple(x + y for x, y in zip(a, b))
                out[key] = out.get(key, Fraction(0)) + wa * wb
        return Stencil(self.d, {k: v for k, v in out.items() if v != 0})

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Apply to a ``d``-dimensional array on the sites where the full
        stencil fits; the result is shrunk by the stencil reach on each side."""
        reach = int(np.abs(self.offsets).max())
        out = np.zeros([s - 2 * reach for s in f.shape])
        for off, w in self.weights.items():
            sl = tuple(slice(reach + o, s - reach + o) for o, s in zip(off, f.shape))
            out += float(w) * f[sl]
        return out


def laplacian_stencil(d: int, normalization: str = "normalized") -> Stencil:
    if d < 1:
        raise ValueError("d must be >= 1")
    if normalization == "normalized":
        center, nb = Fraction(-1), Fraction(1, 2 * d)
    elif normalization == "unnormalized":
        center, nb = Fraction(-2 * d), Fraction(1)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    w = {(0,) * d: center}
    for k in range(d):
        for s in (-1, 1):
            e = [0] * d
            e[k] = s
            w[tuple(e)] = nb
    return Stencil(d, w)


def bilaplacian_stencil(d: int, normalization: str = "normalized") -> Stencil:
    lap = laplacian_stencil(d, normalization)
    return lap.convolve(lap)


@dataclass(frozen=True)
class PrecisionMatrix:
    box: LatticeBox
    model: str
    entries: sp.csr_matrix = field(repr=False)
    normalization: str = "normalized"

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.model}|{self.normalization}|{self.box.d}|{self.box.N}|".encode())
        q = self.entries
        for arr in (q.indptr, q.indices, q.data):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:32]

    def submatrix(self, idx) -> sp.csr_matrix:
        idx = np.asarray(idx)
        return self.entries[idx][:, idx].tocsr()


def _stencil_matrix(shape: tuple, stencil: Stencil) -> sp.csr_matrix:
    """Rows are stencil rows; columns outside the block are dropped."""
    n = int(np.prod(shape))
    grid = np.indices(shape).reshape(len(shape), -1).T
    rows, cols, vals = [], [], []
    for off, w in stencil.weights.items():
        nb = grid + np.asarray(off)
        ok = np.all((nb >= 0) & (nb < np.asarray(shape)), axis=1)
        r = np.nonzero(ok)[0]
        c = np.ravel_multi_index(tuple(nb[ok].T), shape)
        rows.append(r)
        cols.append(c)
        vals.append(np.full(len(r), float(w)))
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    m = m.tocsr()
    m.sort_indices()
    return m


def assemble_precision(box: LatticeBox, model: str = "membrane",
                       normalization: str = "normalized") -> PrecisionMatrix:
    """Membrane: truncated bilaplacian ``Δ²(x,y) 1{x,y ∈ V_N}``.
    DGFF: truncated ``-Δ``."""
    if box.n_sites < 1:
        raise ValueError("degenerate box")
    entries = assemble_block(box.shape, model, normalization)
    return PrecisionMatrix(box, model, entries, normalization)


def assemble_block(shape, model: str = "membrane",
                   normalization: str = "normalized") -> sp.csr_matrix:
    """Precision matrix of a rectangular block of sites (C order) with zero
    boundary conditions, for blocks that are not centred boxes."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    d = len(shape)
    if model == "membrane":
        st = bilaplacian_stencil(d, normalization)
    else:
        lap = laplacian_stencil(d, normalization)
        st = Stencil(d, {k: -v for k, v in lap.weights.items()})
    return _stencil_matrix(tuple(shape), st)


def boundary_counts(box: LatticeBox) -> np.ndarray:
    """Number of coordinates with ``|x_i| = N``, per site (flat order).

    The truncated bilaplacian equals ``(Δ_N)^2 + diag(counts) / (2d)^2``
    under the normalised convention: each exterior neighbour of ``x`` is
    adjacent to ``x`` only.
    """
    c = np.zeros(box.shape)
    for ax in range(box.d):
        for end in (0, -1):
            sl = [slice(None)] * box.d
            sl[ax] = end
            c[tuple(sl)] += 1
    return c.ravel()


def dump_matrix(pm: PrecisionMatrix, path) -> None:
    """Lower-triangle coordinate triplets, sorted by (row, col), little-endian."""
    low = sp.tril(pm.entries).tocoo()
    order = np.lexsort((low.col, low.row))
    header = f"{pm.model}|{pm.normalization}|{pm.box.d}|{pm.box.N}".encode()
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<HI", MATRIX_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<qq", pm.n, len(order)))
        fh.write(low.row[order].astype("<i8").tobytes())
        fh.write(low.col[order].astype("<i8").tobytes())
        fh.write(low.data[order].astype("<f8").tobytes())


def load_matrix(path) -> PrecisionMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != MATRIX_MAGIC:
        raise ValueError("not a precision-matrix dump")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != MATRIX_VERSION:
        raise ValueError(f"unsupported matrix dump version {version}")
    pos = 10
    model, norm, d, N = raw[pos:pos + hlen].decode().split("|")
    pos += hlen
    n, nnz = struct.unpack_from("<qq", raw, pos)
    pos += 16
    row = np.frombuffer(raw, "<i8", nnz, pos)
    col = np.frombuffer(raw, "<i8", nnz, pos + 8 * nnz)
    val = np.frombuffer(raw, "<f8", nnz, pos + 16 * nnz)
    low = sp.coo_matrix((val, (row, col)), shape=(n, n)).tocsr()
    full = (low + sp.tril(low, -1).T).tocsr()
    full.sort_indices()
    return PrecisionMatrix(LatticeBox(int(d), int(N)), model, full, norm)
