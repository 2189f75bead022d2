import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from membrane_lab import theory

unit = st.floats(0.01, 0.99)


def test_g_const():
    assert theory.g_const() == pytest.approx(0.81057, abs=5e-6)
    assert math.pi**2 * theory.g_const() == pytest.approx(8.0, rel=1e-15)


def test_max_rate():
    # 2 sqrt(2g) with g = 8/pi^2 is 8/pi
    assert theory.max_rate() == pytest.approx(2 * math.sqrt(2 * theory.g_const()), rel=1e-15)
    assert theory.max_rate() == pytest.approx(8 / math.pi, rel=1e-15)
    assert theory.max_rate("dgff") == pytest.approx(2 * math.sqrt(2 / math.pi))


def test_high_point_dim():
    assert theory.high_point_dim(0.5) == 3.0
    assert theory.high_point_dim(1 - 1e-9) == pytest.approx(0.0, abs=1e-8)
    assert theory.high_point_dim(1e-9) == pytest.approx(4.0)
    assert theory.dgff_high_point_dim(0.4) == pytest.approx(1.68)
    with pytest.raises(ValueError):
        theory.high_point_dim(1.0)


def test_cluster_dims():
    assert theory.cluster_dim(0.25, 0.5) == pytest.approx(1.5)
    assert theory.cluster_dim(0.5 - 1e-9, 0.5) == pytest.approx(0.0, abs=1e-7)
    assert theory.cluster_dim_conditional(0.5, 0.5) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        theory.cluster_dim(0.6, 0.5)


@settings(derandomize=True, max_examples=100)
@given(unit)
def test_F_identities(beta):
    assert theory.F(2, beta, 1.0) == pytest.approx(1 + beta, abs=1e-12)
    g = theory.gamma_star(beta)
    assert theory.F(2, beta, g) == pytest.approx(g, abs=1e-12)
    # gamma_star minimises the parabola
    assert theory.F(2, beta, g) <= min(theory.F(2, beta, g + 1e-3), theory.F(2, beta, g - 1e-3))


def test_gamma_values():
    assert theory.gamma_star(0.5) == pytest.approx(4 / 3)
    assert theory.gamma_plus(0.5) == 2.0
    assert theory.gamma_min(0.5, 0.5) == pytest.approx(4 / 3)
    assert theory.gamma_min(0.9, 0.5) == pytest.approx(1 / 0.9)


def test_rho_reference_point():
    assert theory.rho(0.5, 0.5) == pytest.approx(14 / 3, abs=1e-12)
    assert theory.rho_grid(0.5, 0.5) == pytest.approx(14 / 3, abs=1e-4)


def test_rho_grid_lower_bound_and_grid_min():
    grid = np.linspace(0.02, 0.98, 50)
    for a in grid:
        for b in grid:
            assert theory.rho(a, b) >= theory.rho_at_one(a, b) - 1e-12
            assert theory.rho_at_one(a, b) == pytest.approx(4 * (1 - a * a) * (1 + b))
    for a in grid[::5]:
        for b in grid[::5]:
            assert abs(theory.rho(a, b) - theory.rho_grid(a, b)) <= 1e-4


@settings(derandomize=True, max_examples=100)
@given(unit, unit, unit)
def test_rho_increasing_in_beta(alpha, b1, b2):
    lo, hi = sorted((b1, b2))
    assert theory.rho(alpha, lo) <= theory.rho(alpha, hi) + 1e-12


def test_square_exp():
    assert theory.square_exp(0.0) == 0.5
    assert theory.square_exp(1 - 1e-12) == pytest.approx(0.0, abs=1e-11)
    assert theory.square_exp(-0.5) == 0.75


def test_predictions_list():
    names = {p.name for p in theory.predictions(0.3, 0.25, 0.5)}
    assert {"high_point_dim", "rho", "square_exp", "max_rate", "cluster_dim"} <= names
    assert "cluster_dim" not in {p.name for p in theory.predictions(0.3, 0.5, 0.5)}
