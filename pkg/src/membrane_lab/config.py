"""Experiment configuration: TOML files with CLI overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .lattice import DEFAULT_SITE_BUDGET
from .operators import MODELS, NORMALIZATIONS

SAMPLERS = ("auto", "exact", "gbar")

# TOML section -> config fields it may hold
SECTIONS = {
    "experiment": ("name", "model", "d", "N", "ell", "replicas", "seed", "sampler", "workers"),
    "levels": ("eta", "alpha", "beta", "include_diagonal"),
    "solver": ("green_rtol", "sample_rtol", "exact_budget", "site_budget", "normalization"),
    "validate": ("validate_N", "profile_N", "gap_N", "walks"),
    "output": ("out", "format", "cache_dir", "use_cache"),
}

# fields that never change the numbers produced
_NON_SEMANTIC = {"out", "format", "cache_dir", "use_cache", "workers"}


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    model: str = "membrane"
    d: int = 4
    N: list = field(default_factory=lambda: [4, 6, 8, 10, 12, 16])
    ell: float = 0.25
    replicas: int = 10
    seed: int = 12345
    sampler: str = "auto"
    workers: int = 1
    eta: list = field(default_factory=lambda: [0.3])
    alpha: list = field(default_factory=lambda: [0.5])
    beta: list = field(default_factory=lambda: [0.5])
    include_diagonal: bool = True
    green_rtol: float = 1e-9
    sample_rtol: float = 1e-6
    exact_budget: int = 100_000
    site_budget: int = DEFAULT_SITE_BUDGET
    normalization: str = "normalized"
    validate_N: list = field(default_factory=lambda: [3, 4, 5, 6, 7, 8])
    profile_N: list = field(default_factory=lambda: [6, 8])
    gap_N: list = field(default_factory=lambda: [4, 6, 8])
    walks: int = 200_000
    out: str | None = None
    format: str = "ndjson"
    cache_dir: str | None = ".membrane_cache"
    use_cache: bool = True

    def validate(self) -> "ExperimentConfig":
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if self.sampler == "gbar" and self.model != "membrane":
            raise ValueError("the gbar sampler only applies to the membrane model")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.format not in ("csv", "ndjson"):
            raise ValueError("format must be csv or ndjson")
        if not 0 < self.ell < 0.5:
            raise ValueError("ell must lie in (0, 1/2)")
        if self.replicas < 0:
            raise ValueError("replicas must be >= 0")
        if any(n < 2 for n in self.N):
            raise ValueError("every N must be >= 2 (log N > 0)")
        for name in ("alpha", "beta"):
            if any(not 0 < v < 1 for v in getattr(self, name)):
                raise ValueError(f"{name} values must lie in (0, 1)")
        if any(not -1 < v < 1 for v in self.eta):
            raise ValueError("eta values must lie in (-1, 1)")
        return self

    def sampler_for(self, N: int) -> str:
        if self.model == "dgff":
            return "exact"
        if self.sampler != "auto":
            return self.sampler
        return "exact" if (2 * N + 1) ** self.d <= self.exact_budget else "gbar"

    def semantic_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in _NON_SEMANTIC}

    def fingerprint(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


_LIST_FIELDS = {"N", "eta", "alpha", "beta", "validate_N", "profile_N", "gap_N"}


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a TOML file (optional) and apply non-None keyword overrides."""
    values: dict = {}
    if path is not None:
        raw = tomllib.loads(Path(path).read_text())
        for section, body in raw.items():
            if section not in SECTIONS:
                raise ValueError(f"unknown config section [{section}]")
            for key, val in body.items():
                if key not in SECTIONS[section]:
                    raise ValueError(f"unknown key {key!r} in [{section}]")
                values[key] = val
    values.update({k: v for k, v in overrides.items() if v is not None})
    for k in _LIST_FIELDS & values.keys():
        values[k] = _as_list(values[k])
    return ExperimentConfig(**values).validate()
