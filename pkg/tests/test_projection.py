import numpy as np
import pytest
from hypothesis import given, strategies as st

from accompany_lab.distributions import (
    CompoundPoissonLaw,
    ConvolutionLaw,
    FiniteLaw,
    GaussianLaw,
    moments,
)
from accompany_lab.errors import DimensionMismatch, ZeroDirection
from accompany_lab.polyhedra import contains, distance_to, inflate, make_polyhedron
from accompany_lab.projection import (
    ProjectionMap,
    build_map,
    pushforward,
    support_certificate,
    verify_exponential_commutation,
)

from conftest import random_finite_law, subspace_directions


class TestBuildMap:
    def test_identity(self, gen):
        pmap = build_map(np.eye(3), "coordinate")
        x = gen.normal(size=(10, 3))
        assert np.array_equal(pmap.apply(x), x)

    def test_normalizes(self):
        pmap = build_map([[3.0, 4.0]])
        assert np.allclose(pmap.directions, [[0.6, 0.8]])

    def test_duplicates_rank_one(self):
        pmap = build_map([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [-1.0, -1.0, 0.0]], "orthogonal")
        assert pmap.rank == 1 and pmap.target_dimension == 1

    def test_orthonormal_basis(self, gen):
        t = subspace_directions(gen, 8, 3, 5)
        pmap = build_map(t, "orthogonal")
        assert pmap.rank == 3
        assert np.allclose(pmap.basis @ pmap.basis.T, np.eye(3), atol=1e-12)
        # every direction lies in the span
        assert np.allclose(np.linalg.norm(t @ pmap.basis.T, axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("m,d", [(1, 3), (3, 3), (5, 4), (4, 8)])
    def test_operator_norm(self, gen, m, d):
        pmap = build_map(gen.normal(size=(m, d)))
        assert pmap.operator_norm() <= np.sqrt(m) + 1e-9
        assert pmap.operator_norm() == pytest.approx(np.linalg.norm(pmap.matrix, 2), rel=1e-6)

    def test_zero_direction(self):
        with pytest.raises(ZeroDirection):
            build_map([[1.0, 0.0], [0.0, 0.0]])

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            build_map([[1.0]], "oblique")

    def test_apply_dimension(self):
        with pytest.raises(DimensionMismatch):
            build_map([[1.0, 0.0]]).apply([1.0, 2.0, 3.0])

    def test_json_roundtrip(self, gen):
        pmap = build_map(gen.normal(size=(2, 3)), "orthogonal")
        back = ProjectionMap.from_json(pmap.to_json())
        assert np.array_equal(back.directions, pmap.directions)
        assert np.array_equal(back.basis, pmap.basis)


class TestPushforward:
    def test_point_mass(self):
        pmap = build_map([[1.0, 0.0], [1.0, 1.0]])
        out = pushforward(FiniteLaw.point_mass([2.0, 3.0]), pmap)
        assert out.size == 1 and np.allclose(out.atoms[0], [2.0, 5.0 / np.sqrt(2)])

    def test_merge(self):
        law = FiniteLaw.uniform([[0.0, 1.0], [0.0, -1.0]])
        out = pushforward(law, build_map([[1.0, 0.0]]))
        assert out.size == 1 and out.atoms[0, 0] == 0.0 and out.weights[0] == 1.0

    def test_support_certificate(self, gen):
        tau, m = 0.3, 3
        for _ in range(10):
            atoms = gen.normal(size=(6, 4))
            atoms = tau * atoms / np.linalg.norm(atoms, axis=1)[:, None] * gen.uniform(0, 1, (6, 1))
            law = FiniteLaw.uniform(atoms).shift(-FiniteLaw.uniform(atoms).mean())
            # recentering can push atoms up to 2*tau from the origin
            cert = support_certificate(law, build_map(gen.normal(size=(m, 4))), 2 * tau)
            assert cert["holds"]
            assert np.max(np.abs(cert["mean"])) <= 1e-12

    def test_compound_poisson(self, gen):
        base = random_finite_law(gen, 3, 4)
        pmap = build_map(gen.normal(size=(2, 3)))
        out = pushforward(CompoundPoissonLaw(base, 0.7), pmap)
        assert isinstance(out, CompoundPoissonLaw) and out.rate == 0.7 and out.dimension == 2

    def test_gaussian(self, gen):
        a = gen.normal(size=(3, 3))
        g = GaussianLaw(np.ones(3), a @ a.T)
        pmap = build_map(gen.normal(size=(2, 3)))
        out = pushforward(g, pmap)
        A = pmap.matrix
        assert np.allclose(out.mean, A @ np.ones(3))
        assert np.allclose(out.covariance, A @ a @ a.T @ A.T)

    def test_dimension(self):
        with pytest.raises(DimensionMismatch):
            pushforward(FiniteLaw.point_mass([0.0]), build_map([[1.0, 0.0]]))


class TestCommutation:
    def test_point_mass_at_zero(self):
        assert verify_exponential_commutation(FiniteLaw.point_mass([0.0, 0.0]), build_map([[1.0, 2.0]])) == 0.0

    def test_single_jump(self):
        tau, e = 0.4, np.array([0.6, 0.8])
        dev = verify_exponential_commutation(FiniteLaw.point_mass(tau * e), build_map([[1.0, -1.0]]), 1e-10)
        assert dev <= 2e-10

    def test_random_five_atoms(self, gen):
        for _ in range(5):
            W = random_finite_law(gen, 3, 5)
            assert verify_exponential_commutation(W, build_map(gen.normal(size=(2, 3))), 1e-10) <= 2e-10


class TestEventEquality:
    def test_coordinate_exact(self, gen):
        for _ in range(20):
            d, m = 5, int(gen.integers(1, 4))
            pmap = build_map(gen.normal(size=(m, d)))
            P = make_polyhedron(pmap.directions, gen.normal(size=m))
            Q = pmap.reduce_polyhedron(P)
            x = gen.normal(size=(2000, d))
            assert np.array_equal(contains(P, x), contains(Q, pmap.apply(x)))
            for lam in (0.1, 1.0):
                assert np.array_equal(contains(inflate(P, lam), x), contains(inflate(Q, lam), pmap.apply(x)))

    def test_orthogonal(self, gen):
        for _ in range(20):
            k = int(gen.integers(1, 4))
            t = subspace_directions(gen, 8, k, int(gen.integers(1, 4)))
            pmap = build_map(t, "orthogonal")
            P = make_polyhedron(t, gen.normal(size=len(t)))
            Q = pmap.reduce_polyhedron(P)
            x = gen.normal(size=(2000, 8))
            y = pmap.apply(x)
            assert np.array_equal(contains(P, x), contains(Q, y))
            assert np.array_equal(contains(inflate(P, 0.3), x), contains(inflate(Q, 0.3), y))
            # distance to P is attained along the span, so it is preserved
            assert np.allclose(distance_to(P, x[:50]), distance_to(Q, y[:50]), atol=1e-8)

    def test_coordinate_requires_matching_normals(self):
        pmap = build_map([[1.0, 0.0]])
        with pytest.raises(ValueError):
            pmap.reduce_polyhedron(make_polyhedron([[0.0, 1.0]], [0.0]))

    def test_orthogonal_requires_span(self):
        pmap = build_map([[1.0, 0.0, 0.0]], "orthogonal")
        with pytest.raises(ValueError):
            pmap.reduce_polyhedron(make_polyhedron([[0.0, 1.0, 0.0]], [0.0]))


# --- properties --------------------------------------------------------------

@given(st.integers(0, 10**6), st.sampled_from(["coordinate", "orthogonal"]))
def test_moments_commute(seed, kind):
    gen = np.random.default_rng(seed)
    d = int(gen.integers(1, 5))
    pmap = build_map(gen.normal(size=(int(gen.integers(1, 4)), d)), kind)
    a = gen.normal(size=(d, d))
    law = ConvolutionLaw((CompoundPoissonLaw(random_finite_law(gen, d, 4), 0.5),
                          GaussianLaw(gen.normal(size=d), a @ a.T),
                          random_finite_law(gen, d, 3)), d)
    mean, cov = moments(law)
    pm, pc = moments(pushforward(law, pmap))
    A = pmap.matrix
    assert np.allclose(pm, A @ mean, atol=1e-10)
    assert np.allclose(pc, A @ cov @ A.T, atol=1e-10)


@given(st.integers(0, 10**6))
def test_covariance_preserved(seed):
    gen = np.random.default_rng(seed)
    d = 3
    law = random_finite_law(gen, d, 5)
    mean, cov = moments(law)
    twin = GaussianLaw(mean, cov)
    pmap = build_map(gen.normal(size=(2, d)))
    _, c1 = moments(pushforward(law, pmap))
    _, c2 = moments(pushforward(twin, pmap))
    assert np.allclose(c1, c2, atol=1e-10)


@given(st.integers(0, 10**6))
def test_commutation_property(seed):
    gen = np.random.default_rng(seed)
    d = int(gen.integers(1, 4))
    W = random_finite_law(gen, d, int(gen.integers(1, 5)))
    pmap = build_map(gen.normal(size=(int(gen.integers(1, 3)), d)))
    assert verify_exponential_commutation(W, pmap, 1e-10) <= 2e-10
