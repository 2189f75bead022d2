import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from membrane_lab import theory
from membrane_lab.gaussian import make_rng
from membrane_lab.lattice import build_box
from membrane_lab.operators import assemble_precision
from membrane_lab.solver import (
    MemoryBudgetError,
    NotPositiveDefiniteError,
    SolverCache,
    SpectralLaplacian,
    envelope_size,
    factorize,
    gbar,
    gbar_column,
    green_column,
    solve_laplace,
)
from membrane_lab.validation import random_walk_visits


def test_one_by_one():
    f = factorize(sp.csr_matrix([[4.0]]), "cholesky")
    assert f.factor.toarray()[0, 0] == pytest.approx(2.0)


def test_small_membrane_factor():
    pm = assemble_precision(build_box(2, 1))
    f = factorize(pm, "cholesky")
    assert f.reconstruction_error() < 1e-12
    assert f.stats["nnz_L"] <= f.stats["predicted_fill"]


@pytest.mark.parametrize("d,N", [(2, 4), (3, 2), (4, 2)])
def test_reconstruction_residual(d, N):
    f = factorize(assemble_precision(build_box(N, d)), "cholesky")
    assert f.reconstruction_error() <= 1e-10


def test_dgff_is_positive_definite():
    pm = assemble_precision(build_box(4, 2), "dgff")
    assert np.linalg.eigvalsh(pm.entries.toarray()).min() > 0
    f = factorize(pm, "cholesky")
    assert f.backend == "cholesky"


def test_indefinite_rejected():
    m = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPositiveDefiniteError):
        factorize(m, "cholesky")


def test_asymmetric_rejected():
    with pytest.raises(ValueError):
        factorize(sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]])))


def test_fill_budget():
    with pytest.raises(MemoryBudgetError):
        factorize(assemble_precision(build_box(3, 3)), "cholesky", fill_budget=100)


def test_envelope_bounds_fill():
    a = assemble_precision(build_box(3, 2)).entries
    f = factorize(a, "cholesky", ordering="natural")
    assert f.stats["nnz_L"] <= envelope_size(a.tocsc())


@pytest.mark.parametrize("d,N,model", [(1, 10, "membrane"), (2, 6, "membrane"),
                                       (2, 6, "dgff"), (1, 7, "dgff")])
def test_green_column_dense(d, N, model):
    box = build_box(N, d)
    pm = assemble_precision(box, model)
    dense = np.linalg.inv(pm.entries.toarray())
    f = factorize(pm)
    for x in [(0,) * d, (N,) * d, (1 - N,) + (0,) * (d - 1)]:
        assert np.abs(green_column(f, x).values - dense[:, box.site_index(x)]).max() < 1e-10


def test_pcg_backend_matches_direct():
    box = build_box(3, 3)
    pm = assemble_precision(box)
    direct = green_column(factorize(pm, "cholesky"), (1, 0, -1)).values
    iterative = green_column(factorize(pm, "pcg"), (1, 0, -1), rtol=1e-12).values
    assert np.abs(direct - iterative).max() < 1e-9


def test_green_symmetry():
    box = build_box(4, 2)
    f = factorize(assemble_precision(box))
    x, y = (1, -2), (-3, 0)
    gx, gy = green_column(f, x).values, green_column(f, y).values
    assert abs(gx[box.site_index(y)] - gy[box.site_index(x)]) < 1e-8


@settings(derandomize=True, max_examples=15, deadline=None)
@given(st.integers(2, 5), st.integers(1, 3))
def test_variance_shrinks_with_domain(N, shrink):
    # G_N(0,0) >= G_B(0,0) for a smaller centred box B
    big = factorize(assemble_precision(build_box(N + shrink, 2)))
    small = factorize(assemble_precision(build_box(N, 2)))
    assert green_column(big, (0, 0)).variance >= green_column(small, (0, 0)).variance


def test_laplace_methods_agree_and_linearity():
    box = build_box(5, 2)
    rhs = np.random.default_rng(0).standard_normal(box.n_sites)
    a = solve_laplace(box, rhs)
    b = solve_laplace(box, rhs, method="sparse")
    assert np.abs(a - b).max() < 1e-10
    assert not np.any(solve_laplace(box, np.zeros(box.n_sites)))
    e = np.zeros(box.n_sites)
    e[box.center_index] = 1.0
    assert solve_laplace(box, e)[box.center_index] > 0


def test_laplace_random_walk_oracle():
    N, d = 3, 2
    box = build_box(N, d)
    mean, se = random_walk_visits(N, d, (0, 0), 1_000_000, make_rng(11))
    e = np.zeros(box.n_sites)
    e[box.center_index] = 1.0
    exact = solve_laplace(box, e)
    i = box.center_index
    assert abs(mean[i] - exact[i]) <= 3 * se[i]
    assert np.max(np.abs(mean - exact) / se) <= 4.5


def test_gbar_double_sum():
    box = build_box(3, 2)
    gamma = np.linalg.inv(assemble_precision(box, "dgff").entries.toarray())
    x, y = (1, 0), (-2, 1)
    ix, iy = box.site_index(x), box.site_index(y)
    brute = sum(gamma[ix, z] * gamma[z, iy] for z in range(box.n_sites))
    assert gbar(box, x, y) == pytest.approx(brute, rel=1e-10)
    assert gbar(box, y, x) == pytest.approx(gbar(box, x, y), rel=1e-12)
    assert gbar_column(box, x)[iy] == pytest.approx(brute, rel=1e-10)


def test_gbar_band_in_four_dimensions():
    g = theory.g_const()
    diffs = []
    for N in (4, 8, 12, 16):
        box = build_box(N, 4)
        diffs.append(gbar_column(box, (0, 0, 0, 0))[box.center_index] - g * np.log(N))
    assert max(diffs) - min(diffs) < 0.3


def test_spectral_eigenvalues_match_dense():
    box = build_box(2, 2)
    lap = assemble_precision(box, "dgff").entries.toarray()
    spec = SpectralLaplacian(box)
    assert np.allclose(np.sort(spec.eigenvalues.ravel()), np.linalg.eigvalsh(lap))


def test_cache_round_trip(tmp_path):
    cache = SolverCache(tmp_path)
    payload = np.random.default_rng(1).standard_normal(50)
    cache.put("abc", "green_0_0", payload)
    assert np.array_equal(cache.get("abc", "green_0_0"), payload)
    assert cache.path("abc", "green_0_0") == tmp_path / "abc" / "green_0_0.bin"
    assert cache.get("abd", "green_0_0") is None
    assert SolverCache(tmp_path, version=2).get("abc", "green_0_0") is None
    assert SolverCache(tmp_path, enabled=False).get("abc", "green_0_0") is None


def test_cache_corruption_is_a_miss(tmp_path):
    cache = SolverCache(tmp_path)
    cache.put("fp", "op", np.arange(10.0))
    path = cache.path("fp", "op")
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    assert cache.get("fp", "op") is None


def test_green_column_uses_cache(tmp_path):
    box = build_box(3, 2)
    f = factorize(assemble_precision(box))
    cache = SolverCache(tmp_path)
    first = green_column(f, (0, 0), cache=cache)
    assert any(tmp_path.rglob("*.bin"))
    second = green_column(f, (0, 0), cache=cache)
    assert np.array_equal(first.values, second.values)
