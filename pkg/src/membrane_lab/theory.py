"""Closed-form constants and limiting exponents for high points."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Prediction:
    name: str
    value: float
    params: dict = field(default_factory=dict)
    source: str = "membrane"


def g_const() -> float:
    """Variance growth rate of the 4-d membrane model, ``Var(φ_x) ≈ g log N``."""
    return 8.0 / math.pi**2


# Random-walk Green's function of the 2-d box grows like (2/π) log N.
DGFF_G = 2.0 / math.pi


def model_g(model: str = "membrane") -> float:
    return g_const() if model == "membrane" else DGFF_G


def max_rate(model: str = "membrane") -> float:
    """First-order growth of the maximum, ``max φ ≈ rate · log N``.

    ``sqrt(2 d g)``: ``2√(2g) = 8/π`` for the membrane in d=4 and
    ``2√(2/π)`` for the 2-d DGFF.
    """
    d = 4 if model == "membrane" else 2
    return math.sqrt(2 * d * model_g(model))


def _open_unit(name, v):
    if not 0 < v < 1:
        raise ValueError(f"{name} must lie in (0, 1), got {v}")


def high_point_dim(eta: float) -> float:
    _open_unit("eta", eta)
    return 4.0 * (1.0 - eta * eta)


def dgff_high_point_dim(eta: float) -> float:
    """2-d DGFF analogue, an external literature value used for calibration."""
    _open_unit("eta", eta)
    return 2.0 * (1.0 - eta * eta)


def cluster_dim(alpha: float, beta: float) -> float:
    """Unconditional cluster exponent ``4β(1-(α/β)²)``, for ``α < β``."""
    _open_unit("alpha", alpha)
    _open_unit("beta", beta)
    if not alpha < beta:
        raise ValueError("cluster_dim needs alpha < beta")
    return 4.0 * beta * (1.0 - (alpha / beta) ** 2)


def cluster_dim_conditional(alpha: float, beta: float) -> float:
    """Cluster exponent around a point already known to be high."""
    _open_unit("alpha", alpha)
    _open_unit("beta", beta)
    return 4.0 * beta * (1.0 - alpha * alpha)


def F(h: float, beta: float, gamma):
    gamma = np.asarray(gamma, dtype=float)
    out = gamma**2 * (1.0 - beta) + h * (1.0 - gamma * (1.0 - beta)) ** 2 / beta
    return float(out) if out.ndim == 0 else out


def gamma_star(beta: float) -> float:
    """Unconstrained minimiser of ``F(2, β, ·)``; also its fixed point."""
    return 2.0 / (2.0 - beta)


def gamma_plus(alpha: float) -> float:
    return 1.0 / alpha


def gamma_min(alpha: float, beta: float) -> float:
    """Minimiser of ``F(2, β, ·)`` over ``[0, 1/α]`` (F is a convex parabola)."""
    return min(gamma_star(beta), gamma_plus(alpha))


def rho(alpha: float, beta: float) -> float:
    """Pair-count exponent ``4 + 4β - 4α² inf_{γ ∈ [0, 1/α]} F(2, β, γ)``."""
    _open_unit("alpha", alpha)
    _open_unit("beta", beta)
    return 4.0 + 4.0 * beta - 4.0 * alpha**2 * F(2.0, beta, gamma_min(alpha, beta))


def rho_grid(alpha: float, beta: float, step: float = 1e-5) -> float:
    """Same exponent with the infimum taken over a uniform γ grid."""
    grid = np.arange(0.0, 1.0 / alpha + step / 2, step)
    grid = np.append(grid[grid <= 1.0 / alpha], 1.0 / alpha)
    return 4.0 + 4.0 * beta - 4.0 * alpha**2 * float(np.min(F(2.0, beta, grid)))


def rho_at_one(alpha: float, beta: float) -> float:
    """``4 + 4β - 4α² F(2, β, 1) = 4(1-α²)(1+β)``, a lower bound for ``rho``."""
    return 4.0 + 4.0 * beta - 4.0 * alpha**2 * F(2.0, beta, 1.0)


def square_exp(eta: float) -> float:
    if not -1 < eta < 1:
        raise ValueError(f"eta must lie in (-1, 1), got {eta}")
    return (1.0 - eta) / 2.0


def predictions(eta: float, alpha: float, beta: float) -> list[Prediction]:
    out = [
        Prediction("high_point_dim", high_point_dim(eta), {"eta": eta}),
        Prediction("cluster_dim_conditional", cluster_dim_conditional(alpha, beta),
                   {"alpha": alpha, "beta": beta}),
        Prediction("rho", rho(alpha, beta), {"alpha": alpha, "beta": beta}),
        Prediction("square_exp", square_exp(eta), {"eta": eta}),
        Prediction("max_rate", max_rate()),
    ]
    if alpha < beta:
        out.append(Prediction("cluster_dim", cluster_dim(alpha, beta),
                              {"alpha": alpha, "beta": beta}))
    return out
