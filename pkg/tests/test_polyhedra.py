import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from accompany_lab.distributions import RngStream
from accompany_lab.errors import (
    DegenerateInput,
    DimensionMismatch,
    NegativeLambda,
    UnsupportedDimension,
    ZeroNormal,
)
from accompany_lab.polyhedra import (
    AugmentedPolyhedron,
    Polyhedron,
    augment_cuts,
    contains,
    cut_bound,
    distance_to,
    in_neighborhood,
    inflate,
    inflation_ratio_2d,
    is_empty,
    make_polyhedron,
    max_gap_angle,
    random_family,
    vertices_2d,
    whole_space,
)

CORNER = make_polyhedron([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])


def random_polygon(gen, k=None):
    """Random bounded polygon containing the origin."""
    k = k or int(gen.integers(3, 8))
    angles = np.sort(gen.uniform(0, 2 * math.pi, k))
    angles[-1] = min(angles[-1], angles[0] + 2 * math.pi - 0.1)
    normals = np.column_stack([np.cos(angles), np.sin(angles)])
    # close the polygon with a few evenly spread normals if a gap exceeds pi
    normals = np.vstack([normals, [[1, 0], [0, 1], [-1, 0], [0, -1]]])
    return make_polyhedron(normals, gen.uniform(0.2, 2.0, len(normals)))


class TestConstruction:
    def test_normalizes(self):
        P = make_polyhedron([[2.0, 0.0]], [4.0])
        assert np.allclose(P.normals, [[1.0, 0.0]]) and P.offsets[0] == 2.0

    def test_single_halfspace(self):
        P = make_polyhedron([[0.0, 1.0]], [1.0])
        assert P.m == 1 and P.dimension == 2

    def test_infinite_offset_is_whole_space(self):
        P = make_polyhedron([[1.0, 1.0]], [math.inf])
        pts = np.random.default_rng(0).normal(size=(50, 2)) * 100
        assert contains(P, pts).all()
        assert np.all(distance_to(P, pts) == 0)

    def test_zero_normal(self):
        with pytest.raises(ZeroNormal):
            make_polyhedron([[0.0, 0.0]], [1.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            make_polyhedron([[1.0, 0.0]], [1.0, 2.0])

    def test_unit_normals_required(self):
        with pytest.raises(ValueError):
            Polyhedron([[2.0, 0.0]], [1.0])

    def test_json_round_trip(self):
        P = make_polyhedron([[1.0, 0.0], [0.0, 1.0]], [1.0, math.inf])
        back = Polyhedron.from_json(P.to_json())
        assert np.array_equal(back.normals, P.normals) and np.array_equal(back.offsets, P.offsets)
        assert P.to_json()["offsets"][1] == "inf"


class TestContains:
    def test_origin(self):
        P = make_polyhedron([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]], [0.0, 1.0, 2.0])
        assert contains(P, [0.0, 0.0])

    def test_boundary_is_inside(self):
        assert contains(CORNER, [0.0, -3.0])

    def test_outside(self):
        assert not contains(CORNER, [0.1, -1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            contains(CORNER, [0.0, 0.0, 0.0])


class TestInflate:
    def test_zero_lambda(self):
        assert np.array_equal(inflate(CORNER, 0.0).offsets, CORNER.offsets)

    def test_negative(self):
        with pytest.raises(NegativeLambda):
            inflate(CORNER, -0.1)

    def test_halfspace_inflation_is_neighborhood(self, gen):
        P = make_polyhedron([[0.6, 0.8]], [0.5])
        pts = gen.normal(size=(500, 2)) * 3
        lam = 0.7
        assert np.array_equal(contains(inflate(P, lam), pts), distance_to(P, pts) <= lam)

    def test_corner_exceeds_neighborhood(self):
        x = np.array([1.0, 1.0])
        assert contains(inflate(CORNER, 1.0), x)
        assert distance_to(CORNER, x) == pytest.approx(math.sqrt(2))
        assert not in_neighborhood(CORNER, x, 1.0)

    def test_augmented_inflates_cuts(self):
        aug = augment_cuts(CORNER, 0.09)
        assert inflate(aug, 1.0).m == 3


class TestDistance:
    def test_inside(self):
        assert distance_to(CORNER, [-1.0, -2.0]) == 0.0

    def test_halfspace_formula(self):
        P = make_polyhedron([[0.6, 0.8]], [0.5])
        x = np.array([3.0, 1.0])
        assert distance_to(P, x) == pytest.approx(x @ [0.6, 0.8] - 0.5, abs=1e-15)

    def test_corner_point(self):
        assert distance_to(CORNER, [3.0, 4.0]) == pytest.approx(5.0, abs=1e-9)

    def test_dykstra_agrees_with_enumeration(self, gen):
        P = random_polygon(gen)
        pts = gen.normal(size=(200, 2)) * 4
        a = distance_to(P, pts, method="enumerate")
        b = distance_to(P, pts, tol=1e-11, method="dykstra")
        assert np.max(np.abs(a - b)) < 1e-8

    def test_empty_polyhedron(self):
        P = make_polyhedron([[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0])
        assert is_empty(P)
        assert math.isinf(distance_to(P, [0.0, 0.0]))

    def test_box_in_3d(self):
        box = make_polyhedron(np.vstack([np.eye(3), -np.eye(3)]), np.ones(6))
        assert distance_to(box, [2.0, 2.0, 2.0]) == pytest.approx(math.sqrt(3))
        assert distance_to(box, [0.0, 3.0, 0.5]) == pytest.approx(2.0)


class TestCuts:
    def test_halfspace_needs_no_cuts(self):
        aug = augment_cuts(make_polyhedron([[0.0, 1.0]], [1.0]), 0.1)
        assert aug.cuts == ()

    def test_corner_one_bisector(self):
        aug = augment_cuts(CORNER, 0.09)
        assert len(aug.cuts) == 1
        assert np.allclose(aug.cuts[0].normal, [1 / math.sqrt(2), 1 / math.sqrt(2)])
        ratio = inflation_ratio_2d(CORNER, aug, 1.0)
        assert ratio == pytest.approx(math.sqrt(4 - 2 * math.sqrt(2)), abs=1e-9)
        assert ratio <= 1.09

    def test_uncut_corner_ratio(self):
        aug = AugmentedPolyhedron(CORNER, (), 0.09)
        assert inflation_ratio_2d(CORNER, aug, 2.0) == pytest.approx(math.sqrt(2))

    def test_sharp_wedge(self):
        # edges nearly parallel: the normals are nearly opposite and the
        # normal cone at the apex approaches a half-plane
        eps = 0.05
        counts = []
        for a in (0.5, 0.1, 0.01):
            P = make_polyhedron([[-math.sin(a), math.cos(a)], [-math.sin(a), -math.cos(a)]], [0, 0])
            aug = augment_cuts(P, eps)
            counts.append(len(aug.cuts))
            assert inflation_ratio_2d(P, aug, 1.0) <= 1 + eps + 1e-12
        assert counts[0] <= counts[1] <= counts[2]
        assert counts[2] > counts[0]

    def test_flat_vertex_needs_no_cut(self):
        a = 0.01
        P = make_polyhedron([[math.sin(a), math.cos(a)], [-math.sin(a), math.cos(a)]], [0, 0])
        assert augment_cuts(P, 0.05).cuts == ()

    def test_cut_count_bound(self, gen):
        for _ in range(10):
            P = random_polygon(gen)
            aug = augment_cuts(P, 0.25)
            assert len(aug.cuts) <= cut_bound(P.m, 0.25)

    def test_duplicate_normals_merged(self):
        P = make_polyhedron([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [0.0, 0.0, 0.0])
        assert len(augment_cuts(P, 0.09).cuts) == 1

    def test_3d_unsupported(self):
        with pytest.raises(UnsupportedDimension):
            augment_cuts(make_polyhedron(np.eye(3), np.zeros(3)), 0.1)

    def test_empty_rejected(self):
        P = make_polyhedron([[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0])
        with pytest.raises(DegenerateInput):
            augment_cuts(P, 0.1)

    def test_gap_angle(self):
        assert 1 / math.cos(max_gap_angle(0.09) / 2) == pytest.approx(1.09)


class TestFamilies:
    def test_single_halfspace(self):
        fam = random_family(1, 3, 1, RngStream(1))
        assert len(fam) == 1 and fam[0].m == 1
        assert abs(np.linalg.norm(fam[0].normals[0]) - 1) < 1e-12

    def test_quantile_offsets(self, gen):
        pts = gen.normal(size=(300, 2))
        for P in random_family(2, 2, 5, RngStream(2), offset_mode="quantile", samples=pts):
            for t, b in zip(P.normals, P.offsets):
                assert np.any(pts @ t == b)

    def test_deterministic(self):
        a = random_family(3, 2, 4, RngStream(5))
        b = random_family(3, 2, 4, RngStream(5))
        assert all(np.array_equal(x.normals, y.normals) and np.array_equal(x.offsets, y.offsets)
                   for x, y in zip(a, b))

    def test_validation(self):
        with pytest.raises(ValueError):
            random_family(0, 2, 1, RngStream(0))


# --- properties --------------------------------------------------------------

@st.composite
def polyhedra(draw, d=None):
    seed = draw(st.integers(0, 10**6))
    gen = np.random.default_rng(seed)
    d = d or int(gen.integers(1, 4))
    m = int(gen.integers(1, 5))
    normals = gen.normal(size=(m, d))
    return make_polyhedron(normals, gen.uniform(-1, 1, m)), gen


@given(polyhedra(), st.floats(0, 5), st.floats(0, 5))
def test_inflate_additive(pg, l1, l2):
    P, _ = pg
    assert np.array_equal(inflate(P, l1 + l2).offsets, P.offsets + (l1 + l2))
    # equal up to the rounding of two float additions versus one
    twice = inflate(inflate(P, l1), l2).offsets
    once = inflate(P, l1 + l2).offsets
    assert np.all(np.abs(twice - once) <= 2 * np.spacing(np.maximum(np.abs(once), np.abs(twice))))


@given(polyhedra(), st.floats(0.01, 3))
def test_neighborhood_inside_inflation(pg, lam):
    P, gen = pg
    if is_empty(P):
        return
    pts = gen.normal(size=(300, P.dimension)) * 3
    near = distance_to(P, pts) <= lam
    assert contains(inflate(P, lam), pts[near]).all()


@given(st.integers(0, 10**6), st.floats(0, 3))
def test_m1_notions_coincide(seed, lam):
    gen = np.random.default_rng(seed)
    d = int(gen.integers(1, 4))
    P = make_polyhedron(gen.normal(size=(1, d)), gen.uniform(-1, 1, 1))
    pts = gen.normal(size=(300, d)) * 3
    assert np.array_equal(distance_to(P, pts) <= lam, contains(inflate(P, lam), pts))


@given(st.integers(0, 10**6), st.sampled_from([0.05, 0.25, 1.0]))
def test_cut_containment(seed, eps):
    gen = np.random.default_rng(seed)
    P = random_polygon(gen)
    aug = augment_cuts(P, eps)
    full = aug.as_polyhedron()
    # every cut contains every vertex of P
    for v, _ in vertices_2d(P):
        assert np.all(full.normals @ v - full.offsets <= 1e-9)
    for lam in (0.01, 0.1, 1.0):
        lo, hi = -4 - lam * 3, 4 + lam * 3
        pts = gen.uniform(lo, hi, (2000, 2))
        inside = contains(inflate(aug, lam), pts)
        assert np.all(distance_to(P, pts[inside]) <= (1 + eps) * lam + 1e-9)
