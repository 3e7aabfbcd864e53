import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sofmesh.delaunay import (
    CoplanarInputError,
    delaunay_tetrahedralize,
    delaunay_violations,
    insphere,
    orient,
    perturbed_insphere,
)


def tet_volumes(P, tets):
    a, b, c, d = (P[tets[:, k]] for k in range(4))
    return np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a)) / 6.0


def check_grid(P, grid):
    tets = grid.tetrahedra
    vol = tet_volumes(P, tets)
    assert np.all(vol > 0), "tetrahedra must be positively oriented"
    assert delaunay_violations(P, tets) == 0
    # tetrahedra tile the convex hull
    from scipy.spatial import ConvexHull

    assert vol.sum() == pytest.approx(ConvexHull(P).volume, rel=1e-9)
    # every face is shared by at most two tetrahedra
    faces = {}
    for t in tets:
        for f in itertools.combinations(sorted(t), 3):
            faces[f] = faces.get(f, 0) + 1
    assert max(faces.values()) <= 2


# ---------------------------------------------------------------------------
# predicates


def test_orient_signs():
    a, b, c = (0, 0, 0), (1, 0, 0), (0, 1, 0)
    assert orient(a, b, c, (0, 0, 1)) == 1
    assert orient(a, b, c, (0, 0, -1)) == -1
    assert orient(a, b, c, (0.3, 0.3, 0)) == 0


def test_orient_exact_near_degenerate():
    # d lies on the plane through a, b, c up to the last bit of double precision
    a, b, c = (0.1, 0.2, 0.3), (1.1, 0.2, 0.3), (0.1, 1.2, 0.3)
    assert orient(a, b, c, (0.7, 0.9, 0.3)) == 0
    assert orient(a, b, c, (0.7, 0.9, np.nextafter(0.3, 1))) == 1
    assert orient(a, b, c, (0.7, 0.9, np.nextafter(0.3, 0))) == -1


def test_insphere_signs():
    a, b, c, d = (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)
    assert orient(a, b, c, d) == 1
    assert insphere(a, b, c, d, (0.25, 0.25, 0.25)) == 1
    assert insphere(a, b, c, d, (2, 2, 2)) == -1
    assert insphere(a, b, c, d, (1, 1, 0)) == 0


def test_perturbed_insphere_never_zero():
    a, b, c, d = (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)
    assert perturbed_insphere((a, b, c, d), (1, 1, 0)) in (-1, 1)


# ---------------------------------------------------------------------------
# triangulation


def test_four_points_single_tet():
    P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    grid = delaunay_tetrahedralize(P)
    assert len(grid) == 1
    check_grid(P, grid)


@pytest.mark.parametrize("apex", [0.4, 3.0])
def test_double_tetrahedron(apex):
    P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.3, apex], [0.3, 0.3, -apex]])
    grid = delaunay_tetrahedralize(P)
    assert len(grid) in (2, 3)
    check_grid(P, grid)


def test_cube_corners_cospherical():
    P = np.array(list(itertools.product([0.0, 1.0], repeat=3)))
    grid = delaunay_tetrahedralize(P)
    check_grid(P, grid)


def test_lattice_degenerate_input():
    P = np.array(list(itertools.product(range(4), repeat=3)), dtype=float)
    grid = delaunay_tetrahedralize(P)
    check_grid(P, grid)
    assert set(np.unique(grid.tetrahedra)) == set(range(len(P)))


def test_random_500():
    P = np.random.default_rng(0).random((500, 3))
    grid = delaunay_tetrahedralize(P)
    check_grid(P, grid)
    assert set(np.unique(grid.tetrahedra)) == set(range(len(P)))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(5, 60))
def test_random_clouds_are_delaunay(seed, n):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(n, 3)) * rng.uniform(0.01, 100)
    check_grid(P, delaunay_tetrahedralize(P, seed=seed))


def test_result_independent_of_walk_seed():
    P = np.random.default_rng(5).random((200, 3))
    a = delaunay_tetrahedralize(P, seed=0).tetrahedra
    b = delaunay_tetrahedralize(P, seed=7).tetrahedra
    canon = lambda t: sorted(tuple(sorted(x)) for x in t)  # noqa: E731
    assert canon(a) == canon(b)


def test_errors():
    with pytest.raises(CoplanarInputError):
        delaunay_tetrahedralize(np.random.default_rng(0).random((3, 3)))
    flat = np.random.default_rng(0).random((20, 3))
    flat[:, 2] = 0.5
    with pytest.raises(CoplanarInputError):
        delaunay_tetrahedralize(flat)
    with pytest.raises(ValueError):
        delaunay_tetrahedralize(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, np.nan]]))
    with pytest.raises(ValueError):
        delaunay_tetrahedralize(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 0.0]]))


def test_oracle_detects_violation():
    # the flattened tetrahedron pair is not Delaunay: its circumsphere holds the opposite apex
    P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.3, 0.4], [0.3, 0.3, -0.4]])
    bad = np.array([[0, 1, 2, 3], [0, 2, 1, 4]])
    assert delaunay_violations(P, bad) > 0
