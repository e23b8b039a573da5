import numpy as np
from hypothesis import given

from mbblab.geometry import TAU_GEOM, Position, compactly_contained, hull_geometry
from mbblab.measures import DiscreteMeasure

from .strategies import measures

P = Position


def test_interval_classification():
    geo = hull_geometry(DiscreteMeasure([[-1.0], [0.0], [1.0]], [1 / 3] * 3))
    assert geo.classify([[0.0], [1.0], [2.0]]) == [P.INTERIOR, P.BOUNDARY, P.EXTERIOR]


def test_triangle_and_collinear():
    tri = hull_geometry(DiscreteMeasure([[0, 0], [1, 0], [0, 1]], [1 / 3] * 3))
    assert tri.classify_one([0.2, 0.2]) is P.INTERIOR
    assert tri.classify_one([0.5, 0.0]) is P.BOUNDARY
    assert tri.classify_one([1.0, 1.0]) is P.EXTERIOR
    line = hull_geometry(DiscreteMeasure([[0, 0], [1, 1], [2, 2]], [1 / 3] * 3))
    assert line.dim_affine_hull == 1
    assert line.classify_one([1.0, 1.0]) is P.INTERIOR
    assert line.classify_one([1.0, 1.1]) is P.EXTERIOR


def test_compactly_contained_examples():
    nu = DiscreteMeasure([[-1.0], [1.0]], [0.5, 0.5])
    geo = hull_geometry(nu)
    assert compactly_contained(DiscreteMeasure.dirac([0.0]), geo)
    assert not compactly_contained(nu, geo)
    assert not compactly_contained(DiscreteMeasure.dirac([0.999999999]), geo)


def _convex_position(v):
    n = len(v)
    if n < 3:
        return True
    for i in range(n):
        a, b, c = v[i - 1], v[i], v[(i + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross <= 0:
            return False
    return True


@given(measures(d=2, min_size=1, max_size=8))
def test_atoms_never_exterior_and_barycenter_in_C(m):
    geo = hull_geometry(m)
    assert P.EXTERIOR not in geo.classify(m.points)
    pos = geo.classify_one(m.barycenter())
    assert pos is not P.EXTERIOR
    if m.size >= 2:
        assert pos is P.INTERIOR
    if geo.dim_affine_hull == 2:
        assert _convex_position(geo.hull_vertices)


@given(measures(d=2, min_size=3, max_size=8))
def test_classification_stable_under_small_moves(m):
    geo = hull_geometry(m)
    rng = np.random.default_rng(0)
    pts = np.vstack([m.points, geo.lattice(5), rng.normal(size=(20, 2)) * 3])
    base = geo.classify(pts)
    jitter = rng.normal(size=pts.shape)
    jitter *= (TAU_GEOM / 10) / np.linalg.norm(jitter, axis=1, keepdims=True) * 0.99
    moved = geo.classify(pts + jitter)
    for a, b in zip(base, moved):
        assert {a, b} != {P.INTERIOR, P.EXTERIOR}
