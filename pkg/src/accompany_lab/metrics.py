"""Distances between laws: exact ones on finite supports and polyhedral
Levy/Prokhorov-type discrepancies over finite families of polyhedra.

A family-based value is always a lower bound for the supremum over all
polyhedra with ``m`` faces; Monte Carlo estimates carry a simultaneous
Hoeffding radius.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtr

from .distributions import FiniteLaw, GaussianLaw, RngStream, merge_atoms
from .errors import DimensionMismatch, EmptyFamily, EmptyMeasure, NegativeLambda, NonMonotoneDetected
from .polyhedra import Polyhedron, distance_to, make_polyhedron

KINDS = ("inflate", "neighborhood")
CSV_HEADER = "kind,lambda,value,conf_radius,family_size,witness_index"
WITNESS_TIE = 1e-12


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Equal-weight samples standing in for a law."""

    samples: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] == 0:
            raise EmptyMeasure("an empirical measure needs at least one sample")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def from_law(cls, law, rng: RngStream, count: int, source: str = "") -> "EmpiricalMeasure":
        return cls(law.sample(rng, count), {"rng": rng.describe(), "source": source, "count": count})

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]

    @property
    def count(self) -> int:
        return self.samples.shape[0]


Measure = Union[FiniteLaw, EmpiricalMeasure]


def _points_weights(mu: Measure):
    """``(points, weights, sample count)``; exact laws report ``inf`` samples."""
    if isinstance(mu, FiniteLaw):
        return mu.atoms, mu.weights, math.inf
    if isinstance(mu, EmpiricalMeasure):
        n = mu.count
        return mu.samples, np.full(n, 1.0 / n), n
    raise TypeError(f"cannot measure sets with {type(mu).__name__}")


def _excess(points: np.ndarray, P, kind: str) -> np.ndarray:
    """Per-point value ``e`` with ``x in P <=> e <= 0`` and
    ``x in P_lam`` (or ``P^lam``) ``<=> e <= lam``."""
    if kind == "inflate":
        return P.as_polyhedron().excess(points)
    if kind == "neighborhood":
        return distance_to(P, points)
    raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


def measure_prob(mu: Measure, P, mode: str = "set", lam: float = 0.0, tol: float = 0.0) -> float:
    """``mu{P}``, ``mu{P_lam}`` (``mode="inflate"``) or ``mu{P^lam}`` (``mode="neighborhood"``).

    Neighbourhood membership is ``distance <= lam + tol``.
    """
    if lam < 0:
        raise NegativeLambda("lambda must be nonnegative")
    points, weights, _ = _points_weights(mu)
    if points.shape[1] != P.dimension:
        raise DimensionMismatch("measure and polyhedron live in different spaces")
    if mode == "set":
        hit = _excess(points, P, "inflate") <= 0.0
    else:
        slack = tol if mode == "neighborhood" else 0.0
        hit = _excess(points, P, mode) <= lam + slack
    if isinstance(mu, EmpiricalMeasure):
        # counting avoids rounding drift in sums of 1/n
        return int(np.count_nonzero(hit)) / mu.count
    return float(weights[hit].sum())


def confidence_radius(counts, family_size: int, delta: float = 0.05) -> float:
    """Hoeffding radius covering ``4 * family_size`` probability estimates
    simultaneously at level ``1 - delta``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    counts = np.atleast_1d(np.asarray(counts, dtype=np.float64))
    if np.any(counts < 1):
        raise ValueError("sample counts must be at least 1")
    n = float(np.min(counts))
    if math.isinf(n):
        return 0.0
    return math.sqrt(math.log(4.0 * family_size / delta) / (2.0 * n))


@dataclass
class DiscrepancyReport:
    value: float
    lam: float
    kind: str
    family_size: int
    confidence_radius: float
    witness_index: int
    raw_value: float

    def to_json(self) -> dict:
        return asdict(self)

    def csv_row(self) -> str:
        return (
            f"{self.kind},{self.lam!r},{self.value!r},{self.confidence_radius!r},"
            f"{self.family_size},{self.witness_index}"
        )


class DiscrepancyProfile:
    """``lam -> max_P max{G{P} - H{P'}, H{P} - G{P'}}`` for a fixed family.

    Excess values are computed once per polyhedron, so evaluating many
    ``lam`` (profiles, bisection) is cheap.
    """

    def __init__(self, G: Measure, H: Measure, family: Sequence, kind: str = "inflate",
                 delta: float = 0.05, tol: float = 0.0):
        if not family:
            raise EmptyFamily("the polyhedron family is empty")
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
        pg, wg, ng = _points_weights(G)
        ph, wh, nh = _points_weights(H)
        d = pg.shape[1]
        if ph.shape[1] != d or any(P.dimension != d for P in family):
            raise DimensionMismatch("measures and polyhedra must share the dimension")
        self.kind = kind
        self.family_size = len(family)
        self.slack = tol if kind == "neighborhood" else 0.0
        self.radius = confidence_radius([ng, nh], len(family), delta)
        self._g = [self._cumulative(_excess(pg, P, kind), wg) for P in family]
        self._h = [self._cumulative(_excess(ph, P, kind), wh) for P in family]
        self.diameter = float(np.linalg.norm(np.ptp(np.vstack([pg, ph]), axis=0)))
        self._evaluated = []

    @staticmethod
    def _cumulative(e, w):
        order = np.argsort(e, kind="stable")
        return e[order], np.concatenate([[0.0], np.cumsum(w[order])])

    @staticmethod
    def _mass(cum, level: float) -> float:
        e, c = cum
        return c[np.searchsorted(e, level, side="right")]

    def raw(self, lam: float) -> np.ndarray:
        """Per-polyhedron discrepancy (unclamped)."""
        if lam < 0:
            raise NegativeLambda("lambda must be nonnegative")
        level = lam + self.slack
        out = np.empty(self.family_size)
        for k, (g, h) in enumerate(zip(self._g, self._h)):
            out[k] = max(self._mass(g, 0.0) - self._mass(h, level),
                         self._mass(h, 0.0) - self._mass(g, level))
        return out

    def report(self, lam: float) -> DiscrepancyReport:
        vals = self.raw(lam)
        raw = float(np.max(vals))
        # first member within WITNESS_TIE of the max, so float dust between
        # equivalent evaluations cannot move the witness
        k = int(np.flatnonzero(vals >= raw - WITNESS_TIE)[0])
        value = min(max(raw, 0.0), 1.0)
        self._evaluated.append((float(lam), value))
        return DiscrepancyReport(value, float(lam), self.kind, self.family_size, self.radius, k, raw)

    def value(self, lam: float) -> float:
        return self.report(lam).value

    def metric(self, tol: float = 1e-6) -> float:
        """Crossing ``inf{lam : value(lam) <= lam}``."""
        out = _bisect_crossing(self.value, self.diameter + 1.0, tol)
        self.check_monotone()
        return out

    def check_monotone(self, slack: float = 1e-12):
        pts = sorted(self._evaluated)
        for (l0, v0), (l1, v1) in zip(pts, pts[1:]):
            if l1 > l0 and v1 > v0 + slack:
                raise NonMonotoneDetected(
                    f"discrepancy rose from {v0} at lambda={l0} to {v1} at lambda={l1}"
                )


def discrepancy(G: Measure, H: Measure, family: Sequence, lam: float, kind: str = "inflate",
                delta: float = 0.05, tol: float = 0.0) -> DiscrepancyReport:
    """``L_m(G, H, lam)`` (``kind="inflate"``) or ``pi_m(G, H, lam)``
    (``kind="neighborhood"``) restricted to ``family``."""
    return DiscrepancyProfile(G, H, family, kind, delta, tol).report(lam)


def _bisect_crossing(f, hi: float, tol: float) -> float:
    """``inf{lam >= 0 : f(lam) <= lam}`` for nonincreasing ``f``."""
    if f(0.0) <= 0.0:
        return 0.0
    lo = 0.0
    while f(hi) > hi:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) <= mid:
            hi = mid
        else:
            lo = mid
    return hi


def metric_from_discrepancy(G: Measure, H: Measure, family: Sequence, kind: str = "inflate",
                            tol: float = 1e-6, delta: float = 0.05) -> float:
    """``inf{lam : discrepancy(lam) <= lam}`` by bisection on ``[0, diam + 1]``."""
    return DiscrepancyProfile(G, H, family, kind, delta).metric(tol)


# ---------------------------------------------------------------------------
# exact distances on finite supports
# ---------------------------------------------------------------------------

def _sorted_1d(law: FiniteLaw):
    if law.dimension != 1:
        raise DimensionMismatch("expected a law on the real line")
    order = np.argsort(law.atoms[:, 0], kind="stable")
    return law.atoms[order, 0], np.cumsum(law.weights[order])


def _levy_holds(f_x, f_c, g_x, g_c, eps: float) -> bool:
    # G(b) <= F(b + eps) + eps, checked at the jumps of G
    f_at = np.concatenate([[0.0], f_c])[np.searchsorted(f_x, g_x + eps, side="right")]
    if np.any(g_c - f_at > eps):
        return False
    # F(y) <= G(y + eps) + eps, checked at the jumps of F
    g_at = np.concatenate([[0.0], g_c])[np.searchsorted(g_x, f_x + eps, side="right")]
    return not np.any(f_c - g_at > eps)


def levy_1d_exact(F: FiniteLaw, G: FiniteLaw, tol: float = 1e-15) -> float:
    """Levy distance between two finite laws on the real line.

    The sandwich condition is checked exactly at the cdf breakpoints and the
    smallest admissible ``eps`` is located by bisection down to ``tol``.
    """
    f_x, f_c = _sorted_1d(F)
    g_x, g_c = _sorted_1d(G)
    if _levy_holds(f_x, f_c, g_x, g_c, 0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol and hi > lo:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _levy_holds(f_x, f_c, g_x, g_c, mid):
            hi = mid
        else:
            lo = mid
    return hi


def tv_exact(F: FiniteLaw, G: FiniteLaw) -> float:
    """Total variation distance ``sup_X |F{X} - G{X}|`` of two finite laws.

    Untracked (truncated) mass is charged in full, which makes the value an
    upper bound whenever either law is truncated.
    """
    if F.dimension != G.dimension:
        raise DimensionMismatch("laws live in different dimensions")
    atoms = np.vstack([F.atoms, G.atoms])
    weights = np.concatenate([F.weights, -G.weights])
    _, diff = merge_atoms(atoms, weights)
    return float(0.5 * (np.abs(diff).sum() + F.missing_mass + G.missing_mass))


def rho_m(F: Measure, G: Measure, family: Sequence) -> float:
    """``max_P |F{P} - G{P}|`` over ``family``."""
    if not family:
        raise EmptyFamily("the polyhedron family is empty")
    return max(abs(measure_prob(F, P) - measure_prob(G, P)) for P in family)


def breakpoint_family(G: FiniteLaw, H: FiniteLaw, directions) -> list:
    """Halfspaces ``{<x, t> <= b}`` with ``b`` running over all projected atoms.

    For finite laws this family attains the supremum over all offsets for each
    listed direction, at every ``lam``.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    family = []
    for t in directions:
        t = t / np.linalg.norm(t)
        offsets = np.unique(np.concatenate([G.atoms @ t, H.atoms @ t]))
        family.extend(make_polyhedron(t[None, :], [b]) for b in offsets)
    return family


# ---------------------------------------------------------------------------
# halfspaces against laws with a Gaussian part
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SmoothedLaw:
    """``finite * gaussian``; its projection on any line has an explicit cdf."""

    finite: FiniteLaw
    gaussian: GaussianLaw

    @property
    def dimension(self) -> int:
        return self.finite.dimension


class _Projected:
    """Law of ``<X, t>`` for a finite or smoothed law."""

    def __init__(self, law, t: np.ndarray):
        if isinstance(law, SmoothedLaw):
            self.centers = law.finite.atoms @ t + law.gaussian.mean @ t
            self.w = law.finite.weights
            self.sigma = float(np.sqrt(max(t @ law.gaussian.covariance @ t, 0.0)))
            finite = self.sigma == 0.0
        elif isinstance(law, FiniteLaw):
            self.centers = law.atoms @ t
            self.w = law.weights
            self.sigma = 0.0
            finite = True
        else:
            raise TypeError(f"unsupported law {type(law).__name__}")
        self.discrete = finite
        if finite:
            order = np.argsort(self.centers, kind="stable")
            self.x = self.centers[order]
            self.c = np.concatenate([[0.0], np.cumsum(self.w[order])])

    def cdf(self, b: np.ndarray) -> np.ndarray:
        if self.discrete:
            return self.c[np.searchsorted(self.x, b, side="right")]
        z = (b[:, None] - self.centers[None, :]) / self.sigma
        return ndtr(z) @ self.w

    def cdf_left(self, b: np.ndarray) -> np.ndarray:
        if self.discrete:
            return self.c[np.searchsorted(self.x, b, side="left")]
        return self.cdf(b)


def _one_sided_sup(A: _Projected, B: _Projected, lam: float) -> float:
    """``sup_b A(b) - B(b + lam)`` for projected laws, at least one discrete."""
    best = 0.0
    if A.discrete:
        best = max(best, float(np.max(A.cdf(A.x) - B.cdf(A.x + lam))))
    if B.discrete:
        best = max(best, float(np.max(A.cdf_left(B.x - lam) - B.cdf_left(B.x))))
    if not (A.discrete or B.discrete):
        raise ValueError("at least one of the laws must be finite")
    return best


def halfspace_discrepancy(G, H, directions, lam: float) -> float:
    """Exact ``sup`` over all halfspaces with the listed normals of
    ``max{G{P} - H{P_lam}, H{P} - G{P_lam}}`` for finite/smoothed laws."""
    if lam < 0:
        raise NegativeLambda("lambda must be nonnegative")
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    best = 0.0
    for t in directions:
        t = t / np.linalg.norm(t)
        g, h = _Projected(G, t), _Projected(H, t)
        best = max(best, _one_sided_sup(g, h, lam), _one_sided_sup(h, g, lam))
    return min(best, 1.0)


def halfspace_metric(G, H, directions, tol: float = 1e-6) -> float:
    """``inf{lam : halfspace_discrepancy(lam) <= lam}`` (``m = 1``: both kinds agree)."""
    seen = []

    def f(lam):
        v = halfspace_discrepancy(G, H, directions, lam)
        seen.append((lam, v))
        return v

    out = _bisect_crossing(f, 1.0, tol)
    seen.sort()
    for (l0, v0), (l1, v1) in zip(seen, seen[1:]):
        if l1 > l0 and v1 > v0 + 1e-12:
            raise NonMonotoneDetected(f"discrepancy rose from {v0} to {v1}")
    return out
