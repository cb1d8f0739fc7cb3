"""Linear maps that reduce polyhedral questions to low dimension.

``kind="coordinate"`` is ``x -> (<x, t_1>, ..., <x, t_m>)`` in R^m; a
polyhedron with normals ``t_j`` becomes the box-like set ``{y_j <= b_j}``.
``kind="orthogonal"`` projects onto ``span{t_j}`` and returns coordinates in
an orthonormal basis of that span (dimension ``k <= m``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .distributions import (
    CompoundPoissonLaw,
    ConvolutionLaw,
    FiniteLaw,
    GaussianLaw,
    exact_pmf,
    merge_atoms,
)
from .errors import DimensionMismatch, ZeroDirection
from .polyhedra import Polyhedron, unit_scale

KINDS = ("coordinate", "orthogonal")
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ProjectionMap:
    directions: np.ndarray
    kind: str
    basis: np.ndarray

    @property
    def source_dimension(self) -> int:
        return self.directions.shape[1]

    @property
    def m(self) -> int:
        return self.directions.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[0]

    @property
    def target_dimension(self) -> int:
        return self.m if self.kind == "coordinate" else self.rank

    @property
    def matrix(self) -> np.ndarray:
        """Matrix of the map from R^d to the target coordinates."""
        return self.directions if self.kind == "coordinate" else self.basis

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.source_dimension:
            raise DimensionMismatch("point dimension does not match the map")
        return x @ self.matrix.T

    def operator_norm(self, iterations: int = 500, seed: int = 0) -> float:
        """Largest singular value by power iteration on ``A^T A``."""
        a = self.matrix
        v = np.random.default_rng(seed).standard_normal(a.shape[1])
        v /= np.linalg.norm(v)
        sigma = 0.0
        for _ in range(iterations):
            w = a.T @ (a @ v)
            nrm = np.linalg.norm(w)
            if nrm == 0:
                return 0.0
            v = w / nrm
            sigma = np.sqrt(nrm)
        return float(sigma)

    def reduce_polyhedron(self, P: Polyhedron) -> Polyhedron:
        """The polyhedron in target coordinates describing the same events.

        Coordinate maps need ``P``'s normals to be exactly the map directions
        (in order); orthogonal maps need them to lie in the span.
        """
        P = P.as_polyhedron()
        if self.kind == "coordinate":
            if P.m != self.m or not np.array_equal(P.normals, self.directions):
                raise ValueError("polyhedron normals must equal the map directions")
            return Polyhedron(np.eye(self.m), P.offsets)
        coords = P.normals @ self.basis.T
        if np.max(np.abs(np.linalg.norm(coords, axis=1) - 1.0)) > 1e-9:
            raise ValueError("polyhedron normals do not lie in the span of the directions")
        coords = coords / np.linalg.norm(coords, axis=1)[:, None]
        return Polyhedron(coords, P.offsets)

    def to_json(self) -> dict:
        return {"directions": self.directions.tolist(), "kind": self.kind}

    @classmethod
    def from_json(cls, doc: dict) -> "ProjectionMap":
        return build_map(doc["directions"], doc["kind"])

    def dumps(self) -> str:
        return json.dumps(self.to_json()) + "\n"


def _orthonormal_basis(t: np.ndarray) -> np.ndarray:
    # modified Gram-Schmidt with largest-residual pivoting
    residual = t.copy()
    basis = []
    for _ in range(min(t.shape)):
        norms = np.linalg.norm(residual, axis=1)
        j = int(np.argmax(norms))
        if norms[j] <= RANK_TOL:
            break
        q = residual[j] / norms[j]
        for b in basis:
            q = q - (q @ b) * b
        q /= np.linalg.norm(q)
        basis.append(q)
        residual = residual - np.outer(residual @ q, q)
    return np.array(basis).reshape(len(basis), t.shape[1])


def build_map(directions, kind: str = "coordinate") -> ProjectionMap:
    t = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    norms = unit_scale(t)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise ZeroDirection("directions must be nonzero")
    t = t / norms[:, None]
    basis = _orthonormal_basis(t)
    t.setflags(write=False)
    basis.setflags(write=False)
    return ProjectionMap(t, kind, basis)


def pushforward(law, pmap: ProjectionMap):
    """Law of the image of ``X ~ law`` under the map."""
    a = pmap.matrix
    if law.dimension != pmap.source_dimension:
        raise DimensionMismatch("law dimension does not match the map")
    if isinstance(law, FiniteLaw):
        atoms, weights = merge_atoms(law.atoms @ a.T, law.weights)
        return FiniteLaw._trusted(atoms, weights, law.missing_mass)
    if isinstance(law, CompoundPoissonLaw):
        return CompoundPoissonLaw(pushforward(law.base, pmap), law.rate)
    if isinstance(law, GaussianLaw):
        return GaussianLaw(a @ law.mean, a @ law.covariance @ a.T)
    if isinstance(law, ConvolutionLaw):
        return ConvolutionLaw(tuple(pushforward(c, pmap) for c in law.components), pmap.target_dimension)
    raise TypeError(f"unsupported law {type(law).__name__}")


def support_certificate(u_law: FiniteLaw, pmap: ProjectionMap, tau: float) -> dict:
    """Largest image norm against the ``tau * sqrt(m)`` ball, and the image mean."""
    image = pushforward(u_law, pmap)
    radius = image.support_radius()
    bound = tau * np.sqrt(pmap.m)
    return {
        "radius": radius,
        "bound": float(bound),
        "holds": bool(radius <= bound + 1e-12),
        "mean": image.mean(),
    }


def verify_exponential_commutation(W: FiniteLaw, pmap: ProjectionMap, tail_eps: float = 1e-10,
                                   max_atoms: int = 2_000_000, match_tol: float = 1e-9) -> float:
    """Max pmf gap between ``pushforward(e(W))`` and ``e(pushforward(W))``.

    Both sides are expanded with the same jump-count truncation. Atoms of
    the two sides are matched when closer than ``match_tol``: the same point
    reached by different float paths must not count as two atoms.
    """
    lhs = pushforward(exact_pmf(CompoundPoissonLaw(W), tail_eps, max_atoms), pmap)
    rhs = exact_pmf(CompoundPoissonLaw(pushforward(W, pmap)), tail_eps, max_atoms)
    atoms = np.vstack([lhs.atoms, rhs.atoms])
    weights = np.concatenate([lhs.weights, -rhs.weights])
    diff = cluster_sums(atoms, weights, match_tol)
    gap = float(np.max(np.abs(diff))) if diff.size else 0.0
    return max(gap, abs(lhs.missing_mass - rhs.missing_mass))


def cluster_sums(atoms: np.ndarray, weights: np.ndarray, tol: float) -> np.ndarray:
    """Summed weight of each connected cluster of atoms at mutual distance <= tol."""
    if atoms.shape[0] == 0:
        return np.zeros(0)
    pairs = cKDTree(atoms).query_pairs(tol, output_type="ndarray")
    n = atoms.shape[0]
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, label = connected_components(graph, directed=False)
    return np.bincount(label, weights=weights)
