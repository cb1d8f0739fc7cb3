"""Mixture schemes, accompanying infinitely divisible laws and exact oracles.

Laws are built from three immutable blocks:

* :class:`FiniteLaw` -- finitely many atoms in R^d,
* :class:`CompoundPoissonLaw` -- ``e(H)`` with an arbitrary intensity,
* :class:`GaussianLaw` -- a (possibly degenerate) normal law,

and a :class:`ConvolutionLaw` that multiplies them in the convolution sense.
Every block can be sampled from an :class:`RngStream`; lattice-like blocks can
be expanded into an exact :class:`FiniteLaw` with :func:`exact_pmf`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import special, stats

from .errors import (
    DimensionMismatch,
    GaussianNotExact,
    InvalidScheme,
    MeanViolation,
    MomentMismatch,
    NonPSDCovariance,
    SpectralSupportViolation,
    SupportExplosion,
    SupportViolation,
    WeightViolation,
)

ATOM_DECIMALS = 12
WEIGHT_TOL = 1e-12
MEAN_TOL = 1e-12
SUPPORT_TOL = 1e-12
DSTARSTAR_MOMENT_TOL = 1e-9
DEFAULT_MAX_ATOMS = 2_000_000


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Every call to :meth:`generator` returns a fresh generator positioned at the
    start of the stream, so two consumers holding equal streams draw identical
    sequences.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if int(self.stream_id) < 0:
            raise ValueError("stream_id must be nonnegative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RngStream":
        """Derive a disjoint stream, e.g. one per grid cell or worker."""
        return RngStream(self.seed, int(self.stream_id) * 1_000_003 + int(index) + 1)

    def describe(self) -> dict:
        return {"seed": int(self.seed), "stream_id": int(self.stream_id)}


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


# ---------------------------------------------------------------------------
# finite laws
# ---------------------------------------------------------------------------

def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def merge_atoms(atoms: np.ndarray, weights: np.ndarray, decimals: int = ATOM_DECIMALS):
    """Round atoms to a ``10**-decimals`` grid and sum the weights of collisions.

    Returns ``(atoms, weights)`` sorted lexicographically, zero weights dropped.
    """
    atoms = np.asarray(atoms, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    keep = weights != 0.0
    atoms, weights = atoms[keep], weights[keep]
    # "+ 0.0" folds -0.0 into 0.0 so that both land in one bucket
    rounded = np.round(atoms, decimals) + 0.0
    if rounded.shape[0] == 0:
        return rounded.reshape(0, atoms.shape[1]), weights
    if rounded.shape[1] == 1:
        uniq, inv = np.unique(rounded[:, 0], return_inverse=True)
        uniq = uniq[:, None]
    else:
        uniq, inv = np.unique(rounded, axis=0, return_inverse=True)
    merged = np.bincount(inv.ravel(), weights=weights, minlength=uniq.shape[0])
    return uniq, merged


@dataclass(frozen=True, eq=False)
class FiniteLaw:
    """A distribution with finitely many atoms.

    ``missing_mass`` is nonzero only for truncated exact expansions (see
    :func:`exact_pmf`); it is mass whose location is not tracked.
    """

    atoms: np.ndarray
    weights: np.ndarray
    missing_mass: float = 0.0

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if atoms.ndim != 2 or atoms.shape[1] < 1:
            raise DimensionMismatch("atoms must be an (k, d) array with d >= 1")
        if atoms.shape[0] != weights.shape[0]:
            raise WeightViolation("atoms and weights differ in length")
        if atoms.shape[0] == 0:
            raise WeightViolation("a law needs at least one atom")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        if np.any(weights < 0):
            raise WeightViolation("weights must be nonnegative")
        if not 0.0 <= self.missing_mass <= 1.0:
            raise WeightViolation("missing_mass must lie in [0, 1]")
        total = float(weights.sum()) + float(self.missing_mass)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise WeightViolation(f"weights sum to {total!r}, not 1")
        uniq, _ = merge_atoms(atoms, np.ones(atoms.shape[0]))
        if uniq.shape[0] != atoms.shape[0]:
            raise WeightViolation("atoms must be pairwise distinct (use FiniteLaw.from_pmf)")
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "missing_mass", float(self.missing_mass))

    @classmethod
    def _trusted(cls, atoms, weights, missing_mass: float = 0.0) -> "FiniteLaw":
        # atoms already merged by merge_atoms; skip the O(k log k) checks
        total = float(weights.sum()) + missing_mass
        if abs(total - 1.0) > WEIGHT_TOL:
            raise WeightViolation(f"weights sum to {total!r}, not 1")
        law = object.__new__(cls)
        object.__setattr__(law, "atoms", _frozen(atoms))
        object.__setattr__(law, "weights", _frozen(weights))
        object.__setattr__(law, "missing_mass", float(missing_mass))
        return law

    # construction helpers -------------------------------------------------

    @classmethod
    def from_pmf(cls, atoms, weights, missing_mass: float = 0.0) -> "FiniteLaw":
        """Build a law from possibly repeated atoms, merging duplicates."""
        atoms = np.asarray(atoms, dtype=np.float64)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        d = atoms.shape[1]
        a, w = merge_atoms(atoms, weights)
        if a.shape[0] == 0:
            raise WeightViolation("all weights are zero")
        if np.any(w < 0):
            raise WeightViolation("weights must be nonnegative")
        return cls._trusted(a.reshape(-1, d), w, missing_mass)

    @classmethod
    def point_mass(cls, x) -> "FiniteLaw":
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return cls(x[None, :], np.ones(1))

    @classmethod
    def uniform(cls, atoms) -> "FiniteLaw":
        atoms = np.asarray(atoms, dtype=np.float64)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        return cls.from_pmf(atoms, np.full(atoms.shape[0], 1.0 / atoms.shape[0]))

    @classmethod
    def from_samples(cls, points, decimals: int = 6) -> "FiniteLaw":
        """Discretize a continuous law: the empirical law of ``points`` rounded
        to ``decimals`` places."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        a, w = merge_atoms(np.round(points, decimals), np.full(len(points), 1.0 / len(points)))
        return cls(a, w / w.sum())

    @classmethod
    def mixture(cls, laws: Sequence["FiniteLaw"], probs: Sequence[float]) -> "FiniteLaw":
        probs = np.asarray(probs, dtype=np.float64)
        if len(laws) != len(probs) or not laws:
            raise ValueError("need one probability per law")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > WEIGHT_TOL:
            raise WeightViolation("mixture probabilities must form a distribution")
        _common_dimension(laws)
        atoms = np.concatenate([law.atoms for law in laws])
        weights = np.concatenate([q * law.weights for law, q in zip(laws, probs)])
        missing = float(sum(q * law.missing_mass for law, q in zip(laws, probs)))
        return cls.from_pmf(atoms, weights, missing)

    # basic properties -----------------------------------------------------

    @property
    def dimension(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def second_moment(self) -> np.ndarray:
        """``E[X X^T]``."""
        return (self.atoms * self.weights[:, None]).T @ self.atoms

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        return self.second_moment() - np.outer(mu, mu)

    def support_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.atoms, axis=1)))

    def is_point_mass(self) -> bool:
        return self.size == 1 and self.missing_mass == 0.0

    # algebra --------------------------------------------------------------

    def shift(self, a) -> "FiniteLaw":
        """``self * E_a``."""
        a = np.atleast_1d(np.asarray(a, dtype=np.float64))
        if a.shape != (self.dimension,):
            raise DimensionMismatch("shift vector has the wrong dimension")
        return FiniteLaw.from_pmf(self.atoms + a, self.weights, self.missing_mass)

    def map(self, matrix) -> "FiniteLaw":
        """Law of ``matrix @ X``."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        if matrix.shape[1] != self.dimension:
            raise DimensionMismatch("matrix columns must match the law dimension")
        return FiniteLaw.from_pmf(self.atoms @ matrix.T, self.weights, self.missing_mass)

    def convolve(self, other: "FiniteLaw", max_atoms: int = DEFAULT_MAX_ATOMS) -> "FiniteLaw":
        if other.dimension != self.dimension:
            raise DimensionMismatch("cannot convolve laws of different dimension")
        if self.dimension == 1:
            q = _lattice_scale(self.atoms, other.atoms)
            if q is not None:
                dense = _convolve_lattice_1d(self, other, q, max_atoms)
                if dense is not None:
                    return dense
        if self.size * other.size > 20 * max_atoms:
            raise SupportExplosion(
                f"convolution needs {self.size * other.size} atom pairs (cap {20 * max_atoms})"
            )
        atoms = (self.atoms[:, None, :] + other.atoms[None, :, :]).reshape(-1, self.dimension)
        weights = np.outer(self.weights, other.weights).ravel()
        missing = 1.0 - (1.0 - self.missing_mass) * (1.0 - other.missing_mass)
        a, w = merge_atoms(atoms, weights)
        if a.shape[0] > max_atoms:
            raise SupportExplosion(f"support grew to {a.shape[0]} atoms (cap {max_atoms})")
        return FiniteLaw._trusted(a, w, missing)

    def pmf(self, x) -> float:
        """Mass of the atom at ``x`` (0 if ``x`` is not an atom)."""
        x = np.round(np.atleast_1d(np.asarray(x, dtype=np.float64)), ATOM_DECIMALS) + 0.0
        hit = np.all(np.round(self.atoms, ATOM_DECIMALS) + 0.0 == x, axis=1)
        return float(self.weights[hit].sum())

    def as_dict(self) -> dict:
        """Atom tuple -> weight, for readable comparisons in tests."""
        return {tuple(a): float(w) for a, w in zip(self.atoms.tolist(), self.weights)}

    # sampling -------------------------------------------------------------

    def sample(self, rng, count: int) -> np.ndarray:
        gen = _as_generator(rng)
        if count == 0:
            return np.zeros((0, self.dimension))
        if self.size == 1:
            return np.repeat(self.atoms, count, axis=0)
        p = self.weights / self.weights.sum()
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, gen.random(count), side="right")
        return self.atoms[np.minimum(idx, self.size - 1)]

    # serialization --------------------------------------------------------

    def to_json(self) -> dict:
        out = {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}
        if self.missing_mass:
            out["missing_mass"] = self.missing_mass
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "FiniteLaw":
        atoms = np.asarray(doc["atoms"], dtype=np.float64)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        return cls(atoms, doc["weights"], doc.get("missing_mass", 0.0))


_LATTICE_STEPS = (1, 2, 3, 4, 5, 6, 8, 10, 12, 16, 20, 25, 32, 40, 50, 64, 100, 128,
                  200, 250, 400, 500, 1000, 1024, 2000, 4000, 5000, 10000)


def _lattice_scale(*arrays) -> int | None:
    """Smallest listed ``q`` making every coordinate times ``q`` an integer."""
    x = np.concatenate([a.ravel() for a in arrays])
    if np.max(np.abs(x)) > 2**30:
        return None
    for q in _LATTICE_STEPS:
        y = x * q
        if np.all(np.abs(y - np.round(y)) <= 1e-9 * np.maximum(1.0, np.abs(y))):
            return q
    return None


def _convolve_lattice_1d(a: "FiniteLaw", b: "FiniteLaw", q: int, max_atoms: int):
    # dense fast path for laws on the lattice (1/q)Z of the real line
    ia = np.round(a.atoms[:, 0] * q).astype(np.int64)
    ib = np.round(b.atoms[:, 0] * q).astype(np.int64)
    span_a = int(ia.max() - ia.min()) + 1
    span_b = int(ib.max() - ib.min()) + 1
    if span_a * span_b > 5e7 or span_a + span_b > 4e6:
        return None
    da = np.zeros(span_a)
    np.add.at(da, ia - ia.min(), a.weights)
    db = np.zeros(span_b)
    np.add.at(db, ib - ib.min(), b.weights)
    dc = np.convolve(da, db)
    idx = np.nonzero(dc)[0]
    if idx.size > max_atoms:
        raise SupportExplosion(f"support grew to {idx.size} atoms (cap {max_atoms})")
    missing = 1.0 - (1.0 - a.missing_mass) * (1.0 - b.missing_mass)
    atoms = ((idx + ia.min() + ib.min()) / q)[:, None]
    return FiniteLaw._trusted(atoms, dc[idx], missing)


def _common_dimension(laws) -> int:
    dims = {law.dimension for law in laws}
    if len(dims) != 1:
        raise DimensionMismatch(f"laws have mixed dimensions {sorted(dims)}")
    return dims.pop()


# ---------------------------------------------------------------------------
# infinitely divisible blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CompoundPoissonLaw:
    """``e(rate * H)``: the law of ``X_1 + ... + X_N``, ``N ~ Poisson(rate)``."""

    base: FiniteLaw
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0 or not np.isfinite(self.rate):
            raise ValueError("compound Poisson rate must be positive and finite")
        if self.base.missing_mass:
            raise ValueError("compound Poisson base must be a proper law")
        object.__setattr__(self, "rate", float(self.rate))

    @property
    def dimension(self) -> int:
        return self.base.dimension

    def jump_radius(self) -> float:
        """Largest jump norm among atoms with positive mass."""
        return float(np.max(np.linalg.norm(self.base.atoms[self.base.weights > 0], axis=1)))

    def sample(self, rng, count: int) -> np.ndarray:
        gen = _as_generator(rng)
        counts = gen.poisson(self.rate, size=count)
        jumps = self.base.sample(gen, int(counts.sum()))
        owner = np.repeat(np.arange(count), counts)
        out = np.empty((count, self.dimension))
        for k in range(self.dimension):
            out[:, k] = np.bincount(owner, weights=jumps[:, k], minlength=count)
        return out

    def to_json(self) -> dict:
        return {"type": "compound_poisson", "rate": self.rate, "base": self.base.to_json()}


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise DimensionMismatch("covariance shape does not match the mean")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise NonPSDCovariance("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        if np.min(np.linalg.eigvalsh(cov)) < -1e-10 * scale:
            raise NonPSDCovariance("covariance has a negative eigenvalue")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", _frozen(cov))

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]

    def is_degenerate(self, tol: float = 0.0) -> bool:
        """True when the law is the point mass at its mean."""
        return bool(np.max(np.abs(self.covariance)) <= tol)

    def sqrt_covariance(self) -> np.ndarray:
        vals, vecs = np.linalg.eigh(self.covariance)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))

    def sample(self, rng, count: int) -> np.ndarray:
        gen = _as_generator(rng)
        z = gen.standard_normal((count, self.dimension))
        return self.mean + z @ self.sqrt_covariance().T

    def to_json(self) -> dict:
        return {"type": "gaussian", "mean": self.mean.tolist(), "covariance": self.covariance.tolist()}


Law = Union[FiniteLaw, CompoundPoissonLaw, GaussianLaw, "ConvolutionLaw"]


@dataclass(frozen=True, eq=False)
class ConvolutionLaw:
    """Convolution product of its components; the empty product is ``E_0``."""

    components: tuple
    dimension: int = field(default=0)

    def __post_init__(self):
        flat = []
        for comp in self.components:
            if isinstance(comp, ConvolutionLaw):
                flat.extend(comp.components)
            elif isinstance(comp, (FiniteLaw, CompoundPoissonLaw, GaussianLaw)):
                flat.append(comp)
            else:
                raise TypeError(f"unsupported component {type(comp).__name__}")
        if flat:
            d = _common_dimension(flat)
            if self.dimension and self.dimension != d:
                raise DimensionMismatch("declared dimension differs from the components'")
        elif self.dimension < 1:
            raise DimensionMismatch("an empty convolution needs an explicit dimension")
        else:
            d = self.dimension
        object.__setattr__(self, "components", tuple(flat))
        object.__setattr__(self, "dimension", int(d))

    def sample(self, rng, count: int) -> np.ndarray:
        gen = _as_generator(rng)
        out = np.zeros((count, self.dimension))
        for comp in self.components:
            out += comp.sample(gen, count)
        return out

    def to_json(self) -> dict:
        return {
            "type": "convolution",
            "dimension": self.dimension,
            "components": [law_to_json(c) for c in self.components],
        }


def convolve(*laws: Law) -> ConvolutionLaw:
    return ConvolutionLaw(tuple(laws))


def law_to_json(law: Law) -> dict:
    if isinstance(law, FiniteLaw):
        return {"type": "finite", **law.to_json()}
    return law.to_json()


def law_from_json(doc: dict) -> Law:
    kind = doc.get("type", "finite")
    if kind == "finite":
        return FiniteLaw.from_json(doc)
    if kind == "compound_poisson":
        return CompoundPoissonLaw(FiniteLaw.from_json(doc["base"]), doc.get("rate", 1.0))
    if kind == "gaussian":
        return GaussianLaw(doc["mean"], doc["covariance"])
    if kind == "convolution":
        return ConvolutionLaw(tuple(law_from_json(c) for c in doc["components"]), doc.get("dimension", 0))
    raise ValueError(f"unknown law type {kind!r}")


def sample_law(law: Law, rng, count: int) -> np.ndarray:
    if count < 0:
        raise ValueError("count must be nonnegative")
    return law.sample(rng, count)


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

def moments(law: Law):
    """Exact ``(mean, covariance)`` of any law built from the blocks above."""
    if isinstance(law, FiniteLaw):
        if law.missing_mass:
            raise ValueError("moments of a truncated law are not defined")
        return law.mean(), law.covariance()
    if isinstance(law, CompoundPoissonLaw):
        return law.rate * law.base.mean(), law.rate * law.base.second_moment()
    if isinstance(law, GaussianLaw):
        return np.array(law.mean), np.array(law.covariance)
    if isinstance(law, ConvolutionLaw):
        mean = np.zeros(law.dimension)
        cov = np.zeros((law.dimension, law.dimension))
        for comp in law.components:
            m, c = moments(comp)
            if m.shape != mean.shape:
                raise DimensionMismatch("component dimension mismatch")
            mean = mean + m
            cov = cov + c
        return mean, cov
    raise TypeError(f"unsupported law {type(law).__name__}")


def gaussian_match(law: Law) -> GaussianLaw:
    """``Phi(law)``: the Gaussian law with the same mean and covariance."""
    mean, cov = moments(law)
    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
        raise NonPSDCovariance("covariance is not symmetric within tolerance")
    return GaussianLaw(mean, 0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# mixture schemes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MixtureFactor:
    """``F_i = (1 - p) U + p V``."""

    p: float
    u_law: FiniteLaw
    v_law: FiniteLaw

    def __post_init__(self):
        object.__setattr__(self, "p", float(self.p))

    @property
    def dimension(self) -> int:
        return self.u_law.dimension

    @property
    def shift(self) -> np.ndarray:
        """``a_i``, the mean of the ``U`` component."""
        return self.u_law.mean()

    def law(self) -> FiniteLaw:
        """Exact pmf of ``F_i`` from the mixture formula."""
        return _two_point_mixture(self.u_law, self.v_law, self.p)

    def switch_law(self) -> FiniteLaw:
        """Exact pmf of ``(1 - alpha) X + alpha Y`` by enumerating ``alpha, X, Y``.

        Independent route to :meth:`law`, mirroring what the sampler does.
        """
        atoms, weights = [], []
        for alpha, q in ((0, 1.0 - self.p), (1, self.p)):
            for x, wx in zip(self.u_law.atoms, self.u_law.weights):
                for y, wy in zip(self.v_law.atoms, self.v_law.weights):
                    atoms.append((1 - alpha) * x + alpha * y)
                    weights.append(q * wx * wy)
        return FiniteLaw.from_pmf(np.array(atoms), np.array(weights))

    def sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        alpha = gen.random(count) < self.p
        x = self.u_law.sample(gen, count)
        y = self.v_law.sample(gen, count)
        return np.where(alpha[:, None], y, x)

    def to_json(self) -> dict:
        return {"p": self.p, "u": self.u_law.to_json(), "v": self.v_law.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "MixtureFactor":
        return cls(doc["p"], FiniteLaw.from_json(doc["u"]), FiniteLaw.from_json(doc["v"]))


def _two_point_mixture(u: FiniteLaw, v: FiniteLaw, p: float) -> FiniteLaw:
    if p == 0.0:
        return u
    if p == 1.0:
        return v
    return FiniteLaw.mixture([u, v], [1.0 - p, p])


@dataclass(frozen=True, eq=False)
class Scheme:
    """A row ``F_1, ..., F_n`` of mixture factors sharing the ball radius ``tau``."""

    tau: float
    factors: tuple
    dimension: int

    def __post_init__(self):
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "dimension", int(self.dimension))

    @property
    def n(self) -> int:
        return len(self.factors)

    @property
    def p(self) -> float:
        return max((f.p for f in self.factors), default=0.0)

    @property
    def shifts(self) -> np.ndarray:
        return np.array([f.shift for f in self.factors]).reshape(self.n, self.dimension)

    def to_json(self) -> dict:
        return {
            "tau": self.tau,
            "dimension": self.dimension,
            "factors": [f.to_json() for f in self.factors],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Scheme":
        try:
            factors = tuple(MixtureFactor.from_json(f) for f in doc["factors"])
            return cls(float(doc["tau"]), factors, int(doc["dimension"]))
        except (KeyError, TypeError) as exc:
            raise InvalidScheme(f"malformed scheme document: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


def load_scheme(path) -> Scheme:
    with open(path) as fh:
        return Scheme.from_json(json.load(fh))


def bernoulli_scheme(n: int, p, dimension: int = 1) -> Scheme:
    """``U_i = E_0``, ``V_i = E_{e_1}``: ``F`` is Binomial(n, p) along ``e_1``."""
    probs = np.broadcast_to(np.asarray(p, dtype=np.float64), (n,))
    e1 = np.zeros(dimension)
    e1[0] = 1.0
    zero = FiniteLaw.point_mass(np.zeros(dimension))
    one = FiniteLaw.point_mass(e1)
    return Scheme(0.0, tuple(MixtureFactor(float(q), zero, one) for q in probs), dimension)


def lattice_scheme(n: int, p: float, tau: float, dimension: int = 1) -> Scheme:
    """Symmetric ``U_i`` uniform on ``{+-tau e_k}``, ``V_i = E_{e_1}``.

    All atoms lie on the lattice spanned by ``tau e_k`` and ``e_1``, so every
    accompanying law without a Gaussian part has an exact finite expansion.
    """
    eye = np.eye(dimension)
    e1 = eye[0]
    if tau == 0.0:
        u = FiniteLaw.point_mass(np.zeros(dimension))
    else:
        u = FiniteLaw.uniform(np.concatenate([tau * eye, -tau * eye]))
    v = FiniteLaw.point_mass(e1)
    return Scheme(tau, tuple(MixtureFactor(p, u, v) for _ in range(n)), dimension)


def validate_scheme(s: Scheme, require_centered: bool = True) -> Scheme:
    """Check the mixture conditions; raise the first violation found.

    With ``require_centered=False`` the zero-mean condition on ``U_i`` is
    skipped (schemes meant for the recentered approximant).
    """
    if not isinstance(s, Scheme):
        raise InvalidScheme("not a Scheme")
    if not (s.tau >= 0 and np.isfinite(s.tau)):
        raise InvalidScheme("tau must be a finite nonnegative number")
    for i, f in enumerate(s.factors):
        if f.u_law.dimension != s.dimension or f.v_law.dimension != s.dimension:
            raise DimensionMismatch(f"factor {i} does not live in R^{s.dimension}")
        if not 0.0 <= f.p <= 1.0:
            raise WeightViolation(f"factor {i}: p = {f.p} is not a probability")
        for name, law in (("U", f.u_law), ("V", f.v_law)):
            if law.missing_mass or abs(law.weights.sum() - 1.0) > WEIGHT_TOL:
                raise WeightViolation(f"factor {i}: {name} is not a probability law")
        radius = f.u_law.support_radius()
        if radius > s.tau + SUPPORT_TOL:
            raise SupportViolation(
                f"factor {i}: U has an atom of norm {radius:.6g} outside the ball of radius {s.tau:.6g}"
            )
        if require_centered:
            mean = f.u_law.mean()
            if np.max(np.abs(mean)) > MEAN_TOL:
                raise MeanViolation(f"factor {i}: U has nonzero mean {mean.tolist()}")
    return s


def sample_scheme(s: Scheme, rng, count: int, require_centered: bool = True) -> np.ndarray:
    """Draw ``count`` samples of ``F = F_1 * ... * F_n`` via the Bernoulli switch."""
    try:
        validate_scheme(s, require_centered)
    except InvalidScheme:
        raise
    except DimensionMismatch as exc:
        raise InvalidScheme(str(exc)) from exc
    if count < 0:
        raise ValueError("count must be nonnegative")
    gen = _as_generator(rng)
    out = np.zeros((count, s.dimension))
    for f in s.factors:
        out += f.sample(gen, count)
    return out


# ---------------------------------------------------------------------------
# approximating laws
# ---------------------------------------------------------------------------

def _checked(s: Scheme, require_centered: bool = True) -> Scheme:
    try:
        return validate_scheme(s, require_centered)
    except DimensionMismatch as exc:
        raise InvalidScheme(str(exc)) from exc


def _origin(s: Scheme) -> FiniteLaw:
    return FiniteLaw.point_mass(np.zeros(s.dimension))


def scheme_law(s: Scheme) -> ConvolutionLaw:
    """``F`` as an explicit convolution of the factor pmfs."""
    return ConvolutionLaw(tuple(f.law() for f in s.factors), s.dimension)


def accompany(s: Scheme, recenter: bool = False) -> ConvolutionLaw:
    """Accompanying law ``D = prod e(F_i)``.

    With ``recenter=True`` returns ``prod E_{a_i} e(F_i E_{-a_i})`` where
    ``a_i`` is the mean of ``U_i``; ``U_i`` need not be centered then.
    """
    _checked(s, require_centered=not recenter)
    comps = []
    for f in s.factors:
        law = f.law()
        if recenter:
            a = f.shift
            comps.append(FiniteLaw.point_mass(a))
            comps.append(CompoundPoissonLaw(law.shift(-a)))
        else:
            comps.append(CompoundPoissonLaw(law))
    return ConvolutionLaw(tuple(comps), s.dimension)


def small_jump_product(s: Scheme) -> ConvolutionLaw:
    """``prod ((1 - p_i) U_i + p_i E)``."""
    zero = _origin(s)
    return ConvolutionLaw(tuple(_two_point_mixture(f.u_law, zero, f.p) for f in s.factors), s.dimension)


def rare_part(s: Scheme) -> ConvolutionLaw:
    """``prod e((1 - p_i) E + p_i V_i)``."""
    zero = _origin(s)
    comps = tuple(CompoundPoissonLaw(_two_point_mixture(zero, f.v_law, f.p)) for f in s.factors)
    return ConvolutionLaw(comps, s.dimension)


def accompanying_small_jumps(s: Scheme) -> ConvolutionLaw:
    """``prod e((1 - p_i) U_i + p_i E)``: the ``D_0`` that turns ``D**`` into ``D``."""
    zero = _origin(s)
    comps = tuple(CompoundPoissonLaw(_two_point_mixture(f.u_law, zero, f.p)) for f in s.factors)
    return ConvolutionLaw(comps, s.dimension)


def build_dstar(s: Scheme) -> ConvolutionLaw:
    """``Phi(prod((1-p_i)U_i + p_i E)) * prod e((1-p_i)E + p_i V_i)``."""
    _checked(s)
    gauss = gaussian_match(small_jump_product(s))
    return ConvolutionLaw((gauss,) + rare_part(s).components, s.dimension)


def _d0_components(d0) -> tuple:
    if isinstance(d0, ConvolutionLaw):
        return d0.components
    return (d0,)


def build_dstarstar(s: Scheme, d0) -> ConvolutionLaw:
    """``D0 * prod e((1-p_i)E + p_i V_i)`` after checking ``D0``.

    ``D0`` must be built from compound Poisson blocks with jumps in the
    ``tau``-ball, Gaussian blocks and point masses, and must reproduce the
    mean and covariance of ``prod((1-p_i)U_i + p_i E)`` to 1e-9.
    """
    _checked(s)
    comps = _d0_components(d0)
    for comp in comps:
        if isinstance(comp, CompoundPoissonLaw):
            radius = comp.jump_radius()
            if radius > s.tau + SUPPORT_TOL:
                raise SpectralSupportViolation(
                    f"jump of norm {radius:.6g} outside the ball of radius {s.tau:.6g}"
                )
        elif isinstance(comp, GaussianLaw):
            pass
        elif isinstance(comp, FiniteLaw) and comp.is_point_mass():
            pass
        else:
            raise SpectralSupportViolation(
                f"{type(comp).__name__} is not an infinitely divisible block"
            )
    d0 = ConvolutionLaw(comps, s.dimension)
    want_mean, want_cov = moments(small_jump_product(s))
    got_mean, got_cov = moments(d0)
    gap = max(np.max(np.abs(want_mean - got_mean)), np.max(np.abs(want_cov - got_cov)))
    if gap > DSTARSTAR_MOMENT_TOL:
        raise MomentMismatch(
            f"D0 moments differ from the small-jump product by {gap:.3g}",
            expected=(want_mean.tolist(), want_cov.tolist()),
            found=(got_mean.tolist(), got_cov.tolist()),
        )
    return ConvolutionLaw(comps + rare_part(s).components, s.dimension)


def split_dstarstar_d0(s: Scheme, gaussian_share: float = 0.5) -> ConvolutionLaw:
    """A ``D0`` mixing both kinds of blocks.

    Gaussian part with ``gaussian_share`` of the covariance, compound Poisson
    part ``prod e_{1-share}((1-p_i)U_i + p_i E)`` for the rest.
    """
    if not 0.0 < gaussian_share < 1.0:
        raise ValueError("gaussian_share must lie strictly between 0 and 1")
    mean, cov = moments(small_jump_product(s))
    gauss = GaussianLaw(gaussian_share * mean, gaussian_share * cov)
    zero = _origin(s)
    comps = [gauss]
    for f in s.factors:
        h = _two_point_mixture(f.u_law, zero, f.p)
        if np.allclose(h.atoms, 0.0):
            continue
        comps.append(CompoundPoissonLaw(h, rate=1.0 - gaussian_share))
    return ConvolutionLaw(tuple(comps), s.dimension)


APPROXIMANTS = ("D", "Dstar", "Dstarstar", "Dbar")


def approximant(s: Scheme, which: str) -> ConvolutionLaw:
    """Dispatch on the approximant name used by configs and the CLI."""
    if which == "D":
        return accompany(s)
    if which == "Dbar":
        return accompany(s, recenter=True)
    if which == "Dstar":
        return build_dstar(s)
    if which == "Dstarstar":
        return build_dstarstar(s, split_dstarstar_d0(s))
    raise ValueError(f"unknown approximant {which!r}; choose from {APPROXIMANTS}")


# ---------------------------------------------------------------------------
# exact expansion
# ---------------------------------------------------------------------------

def poisson_truncation(rate: float, eps: float) -> int:
    """Smallest ``K`` with ``P(N > K) <= eps`` for ``N ~ Poisson(rate)``."""
    hi = int(rate + 12.0 * np.sqrt(rate) + 60.0)
    while True:
        ks = np.arange(hi + 1)
        tails = special.pdtrc(ks, rate)
        ok = np.nonzero(tails <= eps)[0]
        if ok.size:
            return int(ok[0])
        hi *= 2


def compound_poisson_pmf(law: CompoundPoissonLaw, eps: float, max_atoms: int = DEFAULT_MAX_ATOMS) -> FiniteLaw:
    """Exact pmf of ``e(rate H)`` with the jump count truncated at tail ``eps``.

    Jumps of size zero are absorbed first: ``e(rate H) = e(rate' H')`` with
    ``H'`` the law of ``H`` off the origin and ``rate' = rate H{x != 0}``.
    """
    d = law.dimension
    zero = np.all(law.base.atoms == 0.0, axis=1)
    rate = law.rate * float(law.base.weights[~zero].sum())
    if rate == 0.0:
        return FiniteLaw.point_mass(np.zeros(d))
    if zero.any():
        kept = law.base.weights[~zero]
        law = CompoundPoissonLaw(FiniteLaw._trusted(law.base.atoms[~zero], kept / kept.sum(), 0.0), rate)
    k_max = poisson_truncation(law.rate, eps)
    probs = stats.poisson.pmf(np.arange(k_max + 1), law.rate)
    power = FiniteLaw.point_mass(np.zeros(d))
    atoms = [power.atoms]
    weights = [probs[0] * power.weights]
    for k in range(1, k_max + 1):
        power = power.convolve(law.base, max_atoms)
        atoms.append(power.atoms)
        weights.append(probs[k] * power.weights)
    a, w = merge_atoms(np.concatenate(atoms), np.concatenate(weights))
    if a.shape[0] > max_atoms:
        raise SupportExplosion(f"support grew to {a.shape[0]} atoms (cap {max_atoms})")
    missing = float(special.pdtrc(k_max, law.rate))
    return FiniteLaw._trusted(a, w * ((1.0 - missing) / w.sum()), missing)


def _law_key(law: FiniteLaw, rate: float):
    return (rate, law.atoms.shape, law.atoms.tobytes(), law.weights.tobytes())


def _flat_components(law: Law) -> tuple:
    if isinstance(law, ConvolutionLaw):
        return law.components
    return (law,)


def exact_split(law: Law, tail_eps: float = 1e-12, max_atoms: int = DEFAULT_MAX_ATOMS):
    """Split ``law`` into ``(finite part, gaussian part or None)``.

    The finite part is exact up to ``tail_eps`` missing mass; all Gaussian
    blocks are merged into one Gaussian law.
    """
    comps = _flat_components(law)
    d = law.dimension
    n_compound = sum(isinstance(c, CompoundPoissonLaw) for c in comps)
    eps_each = tail_eps / max(n_compound, 1)
    finite = FiniteLaw.point_mass(np.zeros(d))
    g_mean = np.zeros(d)
    g_cov = np.zeros((d, d))
    has_gauss = False
    cache = {}
    for comp in comps:
        if isinstance(comp, GaussianLaw):
            if comp.is_degenerate():
                finite = finite.shift(comp.mean)
            else:
                has_gauss = True
                g_mean = g_mean + comp.mean
                g_cov = g_cov + comp.covariance
            continue
        if isinstance(comp, CompoundPoissonLaw):
            key = _law_key(comp.base, comp.rate)
            if key not in cache:
                cache[key] = compound_poisson_pmf(comp, eps_each, max_atoms)
            piece = cache[key]
        elif isinstance(comp, FiniteLaw):
            piece = comp
        else:
            raise TypeError(f"unsupported component {type(comp).__name__}")
        finite = finite.convolve(piece, max_atoms)
    return finite, (GaussianLaw(g_mean, g_cov) if has_gauss else None)


def exact_pmf(law: Law, tail_eps: float = 1e-12, max_atoms: int = DEFAULT_MAX_ATOMS) -> FiniteLaw:
    """Exact pmf of a law without (non-degenerate) Gaussian blocks.

    Each compound Poisson block has its jump count truncated at the smallest
    ``K`` whose Poisson tail is at most ``tail_eps / #blocks``; the returned
    law records the dropped mass in ``missing_mass`` (at most ``tail_eps``).
    """
    finite, gauss = exact_split(law, tail_eps, max_atoms)
    if gauss is not None:
        raise GaussianNotExact("law has a non-degenerate Gaussian component")
    return finite


def iter_factor_laws(s: Scheme) -> Iterable[FiniteLaw]:
    return (f.law() for f in s.factors)
