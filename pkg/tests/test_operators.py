import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from membrane_lab.lattice import build_box
from membrane_lab.operators import (
    assemble_precision,
    bilaplacian_stencil,
    boundary_counts,
    dump_matrix,
    laplacian_stencil,
    load_matrix,
)


def _brute_bilaplacian(d):
    # Δ²(0, z) = Σ_y Δ(0, y) Δ(y, z) by direct enumeration
    lap = laplacian_stencil(d)
    out = {}
    for z in itertools.product(range(-2, 3), repeat=d):
        total = Fraction(0)
        for y in itertools.product(range(-1, 2), repeat=d):
            diff = tuple(a - b for a, b in zip(z, y))
            total += lap[y] * lap[diff]
        if total:
            out[z] = total
    return out


def test_laplacian_coefficients():
    lap = laplacian_stencil(4)
    assert lap[(0, 0, 0, 0)] == -1
    assert lap[(0, 1, 0, 0)] == Fraction(1, 8)
    assert len(lap) == 9 and lap.total() == 0


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_bilaplacian_is_self_convolution(d):
    bil = bilaplacian_stencil(d)
    assert bil.weights == _brute_bilaplacian(d)
    assert bil.total() == 0


def test_bilaplacian_centers_and_support():
    b4, b2 = bilaplacian_stencil(4), bilaplacian_stencil(2)
    assert b4[(0,) * 4] == Fraction(9, 8)
    assert b2[(0, 0)] == Fraction(5, 4)
    # 1 center + 8 neighbours + 8 axial at distance 2 + 24 diagonal pairs
    assert len(b4) == 41
    assert len(b2) == 13


def test_stencil_annihilates_linear_functions():
    lap = laplacian_stencil(3)
    grid = np.indices((7, 7, 7)).astype(float)
    assert np.allclose(lap.apply(np.ones((7, 7, 7))), 0)
    assert np.allclose(lap.apply(grid[0]), 0)
    assert np.allclose(bilaplacian_stencil(3).apply(grid[0] * grid[1]), 0)


def test_interior_row_has_full_support():
    box = build_box(4, 4)
    q = assemble_precision(box).entries
    row = q.getrow(box.center_index)
    assert row.nnz == 41
    assert row[0, box.center_index] == pytest.approx(9 / 8, abs=0)


def test_one_dimensional_pentadiagonal():
    q = assemble_precision(build_box(2, 1)).entries.toarray()
    a = 1 / 16
    expected = np.zeros((5, 5))
    for i in range(5):
        expected[i, i] = 1.5 - (a if i in (0, 4) else 0) + (a if i in (0, 4) else 0)
    # each 1-d row: [1/4, -1, 3/2, -1, 1/4] truncated to the box
    for i in range(5):
        for j, w in zip(range(i - 2, i + 3), (0.25, -1.0, 1.5, -1.0, 0.25)):
            if 0 <= j < 5:
                expected[i, j] = w
    assert np.array_equal(q, expected)
    dense_inv = np.linalg.inv(q)
    assert np.allclose(q @ dense_inv, np.eye(5), atol=1e-12)


@pytest.mark.parametrize("model,reach", [("membrane", 2), ("dgff", 1)])
def test_symmetry_and_locality(model, reach):
    box = build_box(3, 2)
    q = assemble_precision(box, model).entries
    assert (q != q.T).nnz == 0
    coo = q.tocoo()
    coords = box.coords()
    dist = np.abs(coords[coo.row] - coords[coo.col]).sum(axis=1)
    assert dist.max() == reach


def _hamiltonian(phi_grid, d):
    # ½ Σ_{x ∈ Z^d} (Δφ(x))² with φ = 0 off the box
    padded = np.pad(phi_grid, 3)
    lap = laplacian_stencil(d).apply(padded)
    return 0.5 * float(np.sum(lap**2))


@settings(derandomize=True, max_examples=25)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_quadratic_form_matches_gibbs_energy(d, N, seed):
    box = build_box(N, d)
    phi = np.random.default_rng(seed).standard_normal(box.n_sites)
    q = assemble_precision(box).entries
    assert 0.5 * phi @ (q @ phi) == pytest.approx(_hamiltonian(phi.reshape(box.shape), d),
                                                  rel=1e-12)


@pytest.mark.parametrize("d,N", [(1, 4), (2, 3), (3, 2), (4, 2)])
def test_truncated_square_decomposition(d, N):
    box = build_box(N, d)
    q = assemble_precision(box).entries
    lap = -assemble_precision(box, "dgff").entries
    diag = boundary_counts(box) / (2 * d) ** 2
    assert abs(q - (lap @ lap) - np.diag(diag)).max() < 1e-15


def test_fingerprint_and_dump_round_trip(tmp_path):
    pm = assemble_precision(build_box(2, 3))
    path = tmp_path / "q.bin"
    dump_matrix(pm, path)
    back = load_matrix(path)
    assert (back.entries != pm.entries).nnz == 0
    assert back.fingerprint() == pm.fingerprint()
    assert pm.fingerprint() != assemble_precision(build_box(2, 3), "dgff").fingerprint()
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        load_matrix(path)


def test_unknown_model():
    with pytest.raises(ValueError):
        assemble_precision(build_box(2, 2), "ising")
