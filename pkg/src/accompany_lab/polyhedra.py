"""Convex polyhedra ``{x : <x, t_j> <= b_j}`` and their two kinds of closeness.

``inflate(P, lam)`` raises every offset by ``lam`` (the set ``P_lam``); the
Euclidean neighbourhood ``P^lam`` is handled through :func:`distance_to`.
Offsets may be ``+inf``; such halfspaces are the whole space and are ignored
by every computation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .distributions import RngStream, _as_generator
from .errors import (
    DegenerateInput,
    DimensionMismatch,
    NegativeLambda,
    NonConvergence,
    UnsupportedDimension,
    ZeroNormal,
)

UNIT_TOL = 1e-12
DEFAULT_TOL = 1e-9
DYKSTRA_MAX_ITER = 10_000
MAX_ACTIVE_SETS = 20_000


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HalfSpace:
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.normal, dtype=np.float64))
        if abs(np.linalg.norm(t) - 1.0) > UNIT_TOL:
            raise ZeroNormal("halfspace normal must have unit length")
        offset = float(self.offset)
        if offset == -math.inf or math.isnan(offset):
            raise ValueError("offset must be finite or +inf")
        object.__setattr__(self, "normal", _frozen(t))
        object.__setattr__(self, "offset", offset)

    def contains(self, x) -> np.ndarray:
        return np.asarray(x) @ self.normal <= self.offset


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """Intersection of ``m`` closed halfspaces with unit normals."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.normals, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.offsets, dtype=np.float64)).ravel()
        if t.shape[0] != b.shape[0]:
            raise DimensionMismatch("one offset per normal is required")
        if t.shape[0] < 1:
            raise ValueError("a polyhedron needs at least one halfspace")
        if np.any(np.abs(np.linalg.norm(t, axis=1) - 1.0) > UNIT_TOL):
            raise ZeroNormal("normals must have unit length (use make_polyhedron)")
        if np.any(np.isnan(b)) or np.any(b == -np.inf):
            raise ValueError("offsets must be finite or +inf")
        object.__setattr__(self, "normals", _frozen(t))
        object.__setattr__(self, "offsets", _frozen(b))

    @property
    def dimension(self) -> int:
        return self.normals.shape[1]

    @property
    def m(self) -> int:
        return self.normals.shape[0]

    @property
    def halfspaces(self) -> list:
        return [HalfSpace(t, b) for t, b in zip(self.normals, self.offsets)]

    def finite(self):
        """``(T, b)`` restricted to halfspaces with finite offsets."""
        keep = np.isfinite(self.offsets)
        return self.normals[keep], self.offsets[keep]

    def excess(self, x) -> np.ndarray:
        """``max_j (<x, t_j> - b_j)``; ``x`` lies in ``P_lam`` iff this is ``<= lam``."""
        x = _points(x, self.dimension)
        t, b = self.finite()
        if t.shape[0] == 0:
            return np.full(x.shape[0], -np.inf)
        return np.max(x @ t.T - b, axis=1)

    def as_polyhedron(self) -> "Polyhedron":
        return self

    def to_json(self) -> dict:
        return {
            "normals": self.normals.tolist(),
            "offsets": [("inf" if np.isinf(b) else float(b)) for b in self.offsets],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Polyhedron":
        offsets = [math.inf if b in ("inf", "Infinity") else float(b) for b in doc["offsets"]]
        return make_polyhedron(doc["normals"], offsets)


@dataclass(frozen=True, eq=False)
class AugmentedPolyhedron:
    """``base`` rewritten with extra supporting halfspaces (``cuts``).

    The cuts contain ``base``, so the set is unchanged; only the inflation
    ``P_lam`` shrinks.
    """

    base: Polyhedron
    cuts: tuple
    epsilon: float

    @property
    def dimension(self) -> int:
        return self.base.dimension

    @property
    def m0(self) -> int:
        return self.base.m + len(self.cuts)

    def as_polyhedron(self) -> Polyhedron:
        if not self.cuts:
            return self.base
        normals = np.vstack([self.base.normals] + [c.normal[None, :] for c in self.cuts])
        offsets = np.concatenate([self.base.offsets, [c.offset for c in self.cuts]])
        return Polyhedron(normals, offsets)

    def excess(self, x) -> np.ndarray:
        return self.as_polyhedron().excess(x)


def _points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != d:
        raise DimensionMismatch(f"points live in R^{x.shape[-1]}, polyhedron in R^{d}")
    return x


def unit_scale(t: np.ndarray) -> np.ndarray:
    """Row norms, with rows already of unit length (to a few ulp) reported
    as exactly 1 so that normalizing twice changes nothing."""
    norms = np.linalg.norm(t, axis=1)
    return np.where(np.abs(norms - 1.0) <= 4 * np.finfo(float).eps, 1.0, norms)


def make_polyhedron(normals, offsets) -> Polyhedron:
    """Normalize the normals to unit length, scaling finite offsets alike."""
    t = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    b = np.atleast_1d(np.asarray(offsets, dtype=np.float64)).astype(np.float64)
    if t.shape[0] != b.shape[0]:
        raise DimensionMismatch("one offset per normal is required")
    norms = unit_scale(t)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise ZeroNormal("normals must be nonzero and finite")
    return Polyhedron(t / norms[:, None], b / norms)


def whole_space(d: int) -> Polyhedron:
    t = np.zeros((1, d))
    t[0, 0] = 1.0
    return Polyhedron(t, [math.inf])


def contains(P, x) -> np.ndarray | bool:
    """Membership in the closed polyhedron; vectorized over rows of ``x``."""
    P = P.as_polyhedron()
    scalar = np.asarray(x).ndim == 1
    t, b = P.finite()
    pts = _points(x, P.dimension)
    inside = np.all(pts @ t.T <= b, axis=1) if t.shape[0] else np.ones(len(pts), bool)
    return bool(inside[0]) if scalar else inside


def inflate(P, lam: float) -> Polyhedron:
    """``P_lam``: every offset (cuts included) raised by ``lam``."""
    if lam < 0:
        raise NegativeLambda(f"lambda must be nonnegative, got {lam}")
    P = P.as_polyhedron()
    return Polyhedron(P.normals, P.offsets + lam)


def is_empty(P) -> bool:
    """LP feasibility check of the finite constraints."""
    P = P.as_polyhedron()
    t, b = P.finite()
    if t.shape[0] == 0:
        return False
    res = linprog(
        np.zeros(P.dimension), A_ub=t, b_ub=b, bounds=[(None, None)] * P.dimension, method="highs"
    )
    return res.status == 2


# ---------------------------------------------------------------------------
# Euclidean distance
# ---------------------------------------------------------------------------

def _n_active_sets(m: int, d: int) -> int:
    return sum(math.comb(m, k) for k in range(1, min(m, d) + 1))


def distance_to(P, x, tol: float = DEFAULT_TOL, method: str = "auto"):
    """Euclidean distance from ``x`` (a point or an ``(N, d)`` array) to ``P``.

    The default method enumerates linearly independent active sets of size at
    most ``d`` and keeps the nearest feasible affine projection, which is the
    exact projection. Polyhedra with too many candidate active sets fall back
    to Dykstra's alternating projections. An empty polyhedron is at distance
    ``inf`` from every point.
    """
    P = P.as_polyhedron()
    scalar = np.asarray(x).ndim == 1
    pts = _points(x, P.dimension)
    t, b = P.finite()
    if t.shape[0] == 0:
        out = np.zeros(len(pts))
    elif t.shape[0] == 1:
        out = np.maximum(pts @ t[0] - b[0], 0.0)
    else:
        if method == "auto":
            method = "enumerate" if _n_active_sets(*t.shape) <= MAX_ACTIVE_SETS else "dykstra"
        if method == "enumerate":
            out = _distance_enumerate(t, b, pts)
        elif method == "dykstra":
            if is_empty(P):
                out = np.full(len(pts), np.inf)
            else:
                out = _distance_dykstra(t, b, pts, tol)
        else:
            raise ValueError(f"unknown method {method!r}")
    return float(out[0]) if scalar else out


def in_neighborhood(P, x, lam: float, tol: float = DEFAULT_TOL):
    """Membership in the closed ``lam``-neighbourhood ``P^lam`` (up to ``tol``)."""
    if lam < 0:
        raise NegativeLambda(f"lambda must be nonnegative, got {lam}")
    return distance_to(P, x, tol) <= lam + tol


def _feasible(t, b, y) -> np.ndarray:
    slack = 1e-9 * (1.0 + np.abs(b)[None, :] + np.linalg.norm(y, axis=1)[:, None])
    return np.all(y @ t.T - b <= slack, axis=1)


def _distance_enumerate(t, b, pts) -> np.ndarray:
    m, d = t.shape
    proj = pts @ t.T - b
    inside = np.all(proj <= 0.0, axis=1)
    best = np.where(inside, 0.0, np.inf)
    todo = np.nonzero(~inside)[0]
    if todo.size == 0:
        return best
    x = pts[todo]
    r = proj[todo]
    sq_best = np.full(todo.size, np.inf)
    for k in range(1, min(m, d) + 1):
        for s in itertools.combinations(range(m), k):
            s = list(s)
            ts = t[s]
            gram = ts @ ts.T
            if k > 1 and np.linalg.cond(gram) > 1e12:
                continue
            mu = np.linalg.solve(gram, r[:, s].T).T
            y = x - mu @ ts
            ok = _feasible(t, b, y)
            sq = np.einsum("ij,ij->i", x - y, x - y)
            sq_best = np.where(ok & (sq < sq_best), sq, sq_best)
    best[todo] = np.sqrt(sq_best)
    return best


def _distance_dykstra(t, b, pts, tol) -> np.ndarray:
    m = t.shape[0]
    y = pts.copy()
    incr = np.zeros((m,) + pts.shape)
    for _ in range(DYKSTRA_MAX_ITER):
        prev = y
        for j in range(m):
            z = y + incr[j]
            viol = np.maximum(z @ t[j] - b[j], 0.0)
            y = z - viol[:, None] * t[j]
            incr[j] = z - y
        if np.max(np.abs(y - prev)) < 0.1 * tol and np.all(y @ t.T - b <= tol):
            return np.linalg.norm(pts - y, axis=1)
    raise NonConvergence(f"Dykstra projection did not reach tol={tol} in {DYKSTRA_MAX_ITER} sweeps")


# ---------------------------------------------------------------------------
# planar cuts
# ---------------------------------------------------------------------------

def vertices_2d(P, tol: float = 1e-9) -> list:
    """Vertices of a planar polyhedron with the indices of their active constraints."""
    P = P.as_polyhedron()
    if P.dimension != 2:
        raise UnsupportedDimension("vertex enumeration is implemented for d = 2 only")
    t, b = P.finite()
    found = []
    for i, j in itertools.combinations(range(t.shape[0]), 2):
        a = t[[i, j]]
        if abs(np.linalg.det(a)) < 1e-12:
            continue
        v = np.linalg.solve(a, b[[i, j]])
        if np.all(t @ v - b <= tol * (1.0 + np.abs(b) + np.linalg.norm(v))):
            if not any(np.linalg.norm(v - w) <= tol * (1.0 + np.linalg.norm(v)) for w, _ in found):
                active = np.nonzero(np.abs(t @ v - b) <= tol * (1.0 + np.abs(b) + np.linalg.norm(v)))[0]
                found.append((v, tuple(int(k) for k in active)))
    return found


def max_gap_angle(epsilon: float) -> float:
    """Largest angle between adjacent normals at a vertex keeping the
    inflated corner within ``(1 + epsilon) * lam`` of the vertex."""
    return 2.0 * math.acos(1.0 / (1.0 + epsilon))


def cut_bound(m: int, epsilon: float) -> int:
    """Upper bound on the number of cuts :func:`augment_cuts` may add."""
    return m * (math.ceil(math.pi / max_gap_angle(epsilon)) - 1)


def augment_cuts(P: Polyhedron, epsilon: float) -> AugmentedPolyhedron:
    """Add supporting halfspaces so that ``inflate(result, lam)`` lies in
    the ``(1 + epsilon) lam``-neighbourhood of ``P`` for every ``lam > 0``.

    At each vertex the normal cone is split into angular gaps no wider than
    ``2 arccos(1 / (1 + epsilon))``; the new normals support ``P`` at that
    vertex. Planar polyhedra only.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if P.dimension != 2:
        raise UnsupportedDimension("exact cut construction is available for d = 2 only")
    if is_empty(P):
        raise DegenerateInput("cannot augment an empty polyhedron")
    t, _ = P.finite()
    theta = max_gap_angle(epsilon)
    cuts = []
    for v, active in vertices_2d(P):
        angles = np.unique(np.round(np.arctan2(t[list(active), 1], t[list(active), 0]), 13))
        # the normal cone is the complement of the widest circular gap
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * math.pi]]))
        widest = int(np.argmax(gaps))
        if gaps[widest] <= math.pi + 1e-12:
            raise DegenerateInput("normal cone at a vertex is not pointed (P has empty interior)")
        order = np.roll(angles, -(widest + 1))
        order = np.unwrap(order)
        for lo, hi in zip(order[:-1], order[1:]):
            gap = hi - lo
            pieces = math.ceil(gap / theta - 1e-12)
            for i in range(1, pieces):
                ang = lo + gap * i / pieces
                n = np.array([math.cos(ang), math.sin(ang)])
                cuts.append(HalfSpace(n, float(n @ v)))
    return AugmentedPolyhedron(P, tuple(cuts), float(epsilon))


def inflation_ratio_2d(P: Polyhedron, augmented, lam: float) -> float:
    """``max dist(x, P) / lam`` over ``inflate(augmented, lam)`` by vertex enumeration.

    The distance is convex and does not grow along recession directions of
    ``P``, so the maximum sits at a vertex of the inflated set.
    """
    if lam <= 0:
        raise NegativeLambda("lambda must be positive")
    inflated = inflate(augmented, lam)
    verts = vertices_2d(inflated)
    if not verts:
        return 1.0
    pts = np.array([v for v, _ in verts])
    return float(np.max(distance_to(P, pts)) / lam)


# ---------------------------------------------------------------------------
# random families
# ---------------------------------------------------------------------------

def random_unit_vectors(gen: np.random.Generator, count: int, d: int) -> np.ndarray:
    out = np.empty((count, d))
    filled = 0
    while filled < count:
        z = gen.standard_normal((count - filled, d))
        norms = np.linalg.norm(z, axis=1)
        z = z[norms > 1e-8] / norms[norms > 1e-8, None]
        out[filled:filled + len(z)] = z
        filled += len(z)
    return out


def random_family(
    m: int,
    d: int,
    count: int,
    rng,
    offset_mode: str = "grid",
    grid: Sequence[float] | None = None,
    samples=None,
) -> list:
    """``count`` random polyhedra with ``m`` uniformly distributed unit normals.

    ``offset_mode="grid"`` draws each offset from ``grid``;
    ``offset_mode="quantile"`` sets each offset to an empirical quantile (at a
    uniform random level) of the projections of ``samples`` on the normal.
    """
    if m < 1 or d < 1 or count < 1:
        raise ValueError("m, d and count must be positive")
    gen = _as_generator(rng) if not isinstance(rng, int) else RngStream(rng).generator()
    if offset_mode == "grid":
        grid = np.linspace(-2.0, 2.0, 17) if grid is None else np.asarray(grid, dtype=np.float64)
    elif offset_mode == "quantile":
        if samples is None:
            raise ValueError("quantile offsets need samples")
        samples = _points(samples, d)
    else:
        raise ValueError(f"unknown offset_mode {offset_mode!r}")
    family = []
    for _ in range(count):
        normals = random_unit_vectors(gen, m, d)
        if offset_mode == "grid":
            offsets = gen.choice(grid, size=m)
        else:
            levels = gen.random(m)
            offsets = np.array(
                [np.quantile(samples @ t, q, method="inverted_cdf") for t, q in zip(normals, levels)]
            )
        family.append(Polyhedron(normals, offsets))
    return family


def family_to_json(family) -> list:
    return [P.as_polyhedron().to_json() for P in family]
