"""Field samplers, Markov conditional decomposition and Gaussian tail bounds."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erfc

from .lattice import LatticeBox, Region
from .operators import PrecisionMatrix, assemble_precision
from .solver import SAMPLE_RTOL, Factorization, SpectralLaplacian, factorize

SAMPLE_MAGIC = b"MLFS"
SAMPLE_VERSION = 1


def make_rng(seed, *keys) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *keys)``.

    Every replica gets its own Philox stream, so results do not depend on
    the order in which replicas run.
    """
    entropy = [int(seed), *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class FieldSample:
    box: LatticeBox
    values: np.ndarray = field(repr=False)
    sampler: str = "exact"
    model: str = "membrane"
    seed: tuple = ()
    tolerance: float = 0.0
    normalization: str = "normalized"

    def __post_init__(self):
        if self.values.shape != (self.box.n_sites,):
            raise ValueError(f"expected {self.box.n_sites} values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field sample contains non-finite values")

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.box.shape)

    def at(self, x) -> float:
        return float(self.values[self.box.site_index(x)])


def _seed_tuple(seed) -> tuple:
    return tuple(int(s) for s in np.atleast_1d(seed))


def sample_exact(f: Factorization, seed, *, rtol: float = SAMPLE_RTOL) -> FieldSample:
    """Exact draw from ``N(0, Q⁻¹)`` for the factorised precision ``Q``."""
    pm = f.precision
    if pm is None:
        raise ValueError("sampling needs a factorisation of a box precision matrix")
    key = _seed_tuple(seed)
    values = f.sample(make_rng(*key), rtol=rtol)
    tol = 0.0 if f.exact_solves else rtol
    return FieldSample(pm.box, values, "exact", pm.model, key, tol, pm.normalization)


def sample_gbar(box: LatticeBox, seed, *, normalization: str = "normalized",
                spectral: SpectralLaplacian | None = None) -> FieldSample:
    """``Γ_N ξ`` for white noise ``ξ``; its covariance is exactly ``Ḡ_N = Γ_N²``."""
    key = _seed_tuple(seed)
    spec = spectral or SpectralLaplacian(box, normalization)
    xi = make_rng(*key).standard_normal(box.n_sites)
    return FieldSample(box, spec.apply_power(xi, -1), "gbar", "membrane", key, 0.0,
                       normalization)


def save_sample(sample: FieldSample, path) -> None:
    header = json.dumps({
        "model": sample.model, "d": sample.box.d, "N": sample.box.N,
        "sampler": sample.sampler, "seed": list(sample.seed),
        "tolerance": sample.tolerance, "normalization": sample.normalization,
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(SAMPLE_MAGIC + struct.pack("<HI", SAMPLE_VERSION, len(header)))
        fh.write(header)
        fh.write(sample.values.astype("<f8").tobytes())


def load_sample(path) -> FieldSample:
    raw = Path(path).read_bytes()
    if raw[:4] != SAMPLE_MAGIC:
        raise ValueError("not a field-sample file")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != SAMPLE_VERSION:
        raise ValueError(f"unsupported sample version {version}")
    meta = json.loads(raw[10:10 + hlen])
    box = LatticeBox(meta["d"], meta["N"])
    values = np.frombuffer(raw, "<f8", box.n_sites, 10 + hlen).copy()
    return FieldSample(box, values, meta["sampler"], meta["model"], tuple(meta["seed"]),
                       meta["tolerance"], meta["normalization"])


class RegionTooCloseError(ValueError):
    pass


@dataclass(frozen=True)
class ConditionalSplit:
    region: Region
    mean_part: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)


class ConditionalOperator:
    """``E[φ_B | φ outside B] = -Q_BB⁻¹ Q_BC φ_C`` for a fixed region ``B``.

    ``Q_BB`` is the region's own precision matrix, so the conditional
    covariance is ``Q_BB⁻¹ = G_B``.
    """

    def __init__(self, pm: PrecisionMatrix, region: Region, min_gap: int = 3):
        box = pm.box
        if len(region) == 0:
            raise ValueError("empty region")
        reach = box.N + 1 - np.abs(region.members).max()
        if reach < min_gap:
            raise RegionTooCloseError(
                f"region is at distance {reach} from the double boundary, need {min_gap}")
        self.pm = pm
        self.region = region
        self.inside = region.indices
        mask = np.ones(pm.n, dtype=bool)
        mask[self.inside] = False
        self.outside = np.nonzero(mask)[0]
        q = pm.entries
        self.q_bb = q[self.inside][:, self.inside].tocsr()
        self.q_bc = q[self.inside][:, self.outside].tocsr()
        self.factor = factorize(self.q_bb, "cholesky")

    def mean(self, values: np.ndarray) -> np.ndarray:
        return self.factor.solve(-(self.q_bc @ values[self.outside]))

    def weights(self, local: int) -> np.ndarray:
        """Row vector ``w`` over all sites with ``E[φ_b | outside] = w · φ``."""
        e = np.zeros(len(self.inside))
        e[local] = 1.0
        w_out = -(self.q_bc.T @ self.factor.solve(e))
        w = np.zeros(self.pm.n)
        w[self.outside] = w_out
        return w


def _precision_for(phi: FieldSample) -> PrecisionMatrix:
    return assemble_precision(phi.box, phi.model, phi.normalization)


def conditional_decompose(phi: FieldSample, region: Region, *,
                          op: ConditionalOperator | None = None) -> ConditionalSplit:
    op = op or ConditionalOperator(_precision_for(phi), region)
    field_b = phi.values[op.inside]
    mean = op.mean(phi.values)
    return ConditionalSplit(region, mean, field_b - mean)


def _center_local(region: Region) -> int:
    lo = region.members.min(axis=0)
    hi = region.members.max(axis=0)
    if np.any((hi - lo) % 2):
        raise ValueError("box_conditional_mean needs an odd-sided box")
    center = (lo + hi) // 2
    hit = np.nonzero(np.all(region.members == center, axis=1))[0]
    if len(hit) != 1:
        raise ValueError("region has no centre site")
    return int(hit[0])


def box_conditional_mean(phi: FieldSample, region: Region, *,
                         op: ConditionalOperator | None = None) -> float:
    """``φ_B``: conditional mean of the centre of ``B`` given the field outside ``B``."""
    op = op or ConditionalOperator(_precision_for(phi), region)
    w = op.weights(_center_local(region))
    return float(w @ phi.values)


def tail_upper(a):
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("tail_upper needs a >= 0")
    out = np.exp(-a * a / 2)
    return float(out) if out.ndim == 0 else out


def tail_lower(a):
    a = np.asarray(a, dtype=float)
    if np.any(a < 1):
        raise ValueError("tail_lower needs a >= 1")
    out = np.exp(-a * a / 2) / (math.sqrt(2 * math.pi) * a)
    return float(out) if out.ndim == 0 else out


def tail_exact(a):
    """``P(|X| >= a)`` for standard normal ``X``."""
    a = np.asarray(a, dtype=float)
    out = erfc(np.abs(a) / math.sqrt(2))
    return float(out) if out.ndim == 0 else out
