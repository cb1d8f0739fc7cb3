"""Experiment configurations, bound sweeps, the Le Cam check and the
Poissonization sandwich experiment.

Every run returns a :class:`RunManifest`; identical configuration and seed
give identical manifests (wall-clock time is only recorded on request).
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .distributions import (
    APPROXIMANTS,
    CompoundPoissonLaw,
    ConvolutionLaw,
    FiniteLaw,
    MixtureFactor,
    RngStream,
    Scheme,
    accompany,
    approximant,
    bernoulli_scheme,
    exact_pmf,
    exact_split,
    lattice_scheme,
    load_scheme,
    sample_law,
    sample_scheme,
    scheme_law,
    validate_scheme,
)
from .errors import AccompanyError, NegativeLambda
from .metrics import (
    DiscrepancyProfile,
    EmpiricalMeasure,
    SmoothedLaw,
    confidence_radius,
    halfspace_discrepancy,
    halfspace_metric,
    tv_exact,
)
from .polyhedra import Polyhedron, random_family, random_unit_vectors

DEFAULT_P = (0.2, 0.1, 0.05, 0.02, 0.01)
DEFAULT_TAU = (0.0, 0.01, 0.05, 0.1)
DEFAULT_N = (5, 10, 20)
DEFAULT_D = (1, 2, 3)
DEFAULT_M = (1, 2, 3)

SPREAD_LIMIT = 25.0
PEARSON_LIMIT = -0.95
PROFILE_POINTS = 3
PROFILE_FLOOR_TOL = 1e-12

BERNSTEIN_FORM = "2*exp(-lam^2 / (2*(V + W*lam/3))), V = sum w_i^2, W = max |w_i|, clamped to 1"
THREADS_ENV = "ACCOMPANY_LAB_THREADS"

SWEEP_COLUMNS = (
    "cell", "scheme", "approximant", "kind", "mode", "n", "d", "m", "p", "tau",
    "estimate", "conf_radius", "bound_value", "ratio", "witness", "profile_r", "status",
)


def bound_value(p: float, tau: float) -> float:
    """``p + tau (|log tau| + 1)`` with the ``tau = 0`` term taken as 0."""
    if tau < 0 or p < 0:
        raise ValueError("p and tau must be nonnegative")
    if tau == 0.0:
        return float(p)
    return float(p + tau * (abs(math.log(tau)) + 1.0))


def thread_count(cells: int) -> int:
    env = os.environ.get(THREADS_ENV)
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, cells))


def _parallel_map(fn, items) -> list:
    """Ordered map; results come back in item order whatever the thread count."""
    items = list(items)
    workers = thread_count(len(items))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# configuration and manifest
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scheme: str = "lattice"  # bernoulli | lattice | custom
    scheme_path: str | None = None
    p_grid: list = field(default_factory=lambda: list(DEFAULT_P))
    tau_grid: list = field(default_factory=lambda: list(DEFAULT_TAU))
    n_grid: list = field(default_factory=lambda: list(DEFAULT_N))
    d_grid: list = field(default_factory=lambda: list(DEFAULT_D))
    m_grid: list = field(default_factory=lambda: list(DEFAULT_M))
    approximant: str = "D"
    kind: str = "inflate"  # inflate -> L_m, neighborhood -> pi_m
    mode: str = "auto"  # auto | exact | monte_carlo
    family_size: int = 50
    samples: int = 100_000
    delta: float = 0.05
    tol: float = 1e-6
    spread_limit: float = SPREAD_LIMIT
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> "ExperimentConfig":
        if self.scheme not in ("bernoulli", "lattice", "custom"):
            raise ValueError(f"unknown scheme generator {self.scheme!r}")
        if self.scheme == "custom" and not self.scheme_path:
            raise ValueError("a custom scheme needs scheme_path")
        for name in ("p_grid", "tau_grid", "n_grid", "d_grid", "m_grid"):
            grid = getattr(self, name)
            if isinstance(grid, (int, float)):
                grid = [grid]
            grid = list(grid)
            if not grid:
                raise ValueError(f"{name} must be nonempty")
            setattr(self, name, grid)
        if self.samples < 1 or self.family_size < 1:
            raise ValueError("sample counts and family size must be at least 1")
        if self.approximant not in APPROXIMANTS:
            raise ValueError(f"approximant must be one of {APPROXIMANTS}")
        if self.kind not in ("inflate", "neighborhood"):
            raise ValueError("kind must be 'inflate' or 'neighborhood'")
        if self.mode not in ("auto", "exact", "monte_carlo"):
            raise ValueError("mode must be auto, exact or monte_carlo")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def digest(self) -> str:
        doc = self.to_json()
        doc.pop("out", None)
        return config_hash(doc)


def config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


@dataclass
class RunManifest:
    experiment: str
    config: dict
    config_hash: str
    seed: int
    version: str = __version__
    columns: tuple = ()
    cells: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    bernstein_form: str = BERNSTEIN_FORM
    wall_clock: float | None = None

    @property
    def ok(self) -> bool:
        return all(c.get("ok", True) for c in self.checks.values()) and all(
            not str(c.get("status", "ok")).startswith("failed") for c in self.cells
        )

    def to_json(self) -> dict:
        doc = _clean(asdict(self))
        doc["ok"] = self.ok
        if self.wall_clock is None:
            doc.pop("wall_clock")
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for cell in self.cells:
            writer.writerow([_csv_value(cell.get(c, "")) for c in self.columns])
        return buf.getvalue()

    def write(self, out, fmt: str = "csv") -> list:
        """Write results; CSV output gets a ``.manifest.json`` sidecar."""
        out = Path(out)
        if fmt == "json":
            out.write_text(self.dumps())
            return [out]
        out.write_text(self.to_csv())
        sidecar = out.with_suffix(".manifest.json")
        sidecar.write_text(self.dumps())
        return [out, sidecar]


def _csv_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(_csv_value(x) for x in v)
    return v


# ---------------------------------------------------------------------------
# bound sweep
# ---------------------------------------------------------------------------

def _pearson(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 3 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return math.nan
    return float(np.corrcoef(x, y)[0, 1])


def lambda_profile(fn, tau: float, points: int = PROFILE_POINTS, noise: float = 0.0) -> dict:
    """Discrepancy on ``lam_k = (k + 1/2) tau`` and the log-linearity of its
    excess over the floor.

    The floor is the value one grid step past the last fitted point; points
    whose excess does not clear ``noise`` are dropped from the fit.
    """
    if tau <= 0:
        raise ValueError("the profile needs tau > 0")
    lams = tau * (np.arange(points + 1) + 0.5)
    vals = np.array([fn(lam) for lam in lams])
    floor = vals[-1]
    excess = vals[:-1] - floor
    keep = excess > max(noise, PROFILE_FLOOR_TOL)
    r = _pearson(lams[:-1][keep], np.log(excess[keep])) if keep.sum() >= 3 else math.nan
    return {"lambdas": lams.tolist(), "values": vals.tolist(), "floor": float(floor),
            "fitted": int(keep.sum()), "r": r}


def _cell_scheme(config: ExperimentConfig, n: int, d: int, p: float, tau: float) -> Scheme:
    if config.scheme == "bernoulli":
        return bernoulli_scheme(n, p, d)
    if config.scheme == "lattice":
        return lattice_scheme(n, p, tau, d)
    return load_scheme(config.scheme_path)


def sweep_cells(config: ExperimentConfig) -> list:
    if config.scheme == "custom":
        s = load_scheme(config.scheme_path)
        return [dict(n=s.n, d=s.dimension, m=m, p=s.p, tau=s.tau) for m in config.m_grid]
    taus = [0.0] if config.scheme == "bernoulli" else config.tau_grid
    return [dict(n=n, d=d, m=m, p=p, tau=t) for n, d, m, p, t in
            itertools.product(config.n_grid, config.d_grid, config.m_grid, config.p_grid, taus)]


def _approximant_law(s: Scheme, which: str):
    law = approximant(s, which)
    fin, gauss = exact_split(law)
    return fin if gauss is None else SmoothedLaw(fin, gauss)


def _exact_cell(config, s: Scheme, cell: dict) -> dict:
    F = exact_pmf(scheme_law(s))
    H = _approximant_law(s, config.approximant)
    directions = np.array([[1.0], [-1.0]])
    est = halfspace_metric(F, H, directions, config.tol)
    out = {"estimate": est, "conf_radius": 0.0, "witness": ""}
    if s.tau > 0:
        out["profile"] = lambda_profile(lambda lam: halfspace_discrepancy(F, H, directions, lam), s.tau)
    return out


def _monte_carlo_cell(config, s: Scheme, cell: dict, rng: RngStream) -> dict:
    n_samples = config.samples
    G = EmpiricalMeasure(sample_scheme(s, rng.child(0), n_samples), {"source": "F"})
    law = approximant(s, config.approximant)
    H = EmpiricalMeasure(sample_law(law, rng.child(1), n_samples), {"source": config.approximant})
    pooled = np.vstack([G.samples, H.samples])
    family = random_family(cell["m"], s.dimension, config.family_size, rng.child(2),
                           offset_mode="quantile", samples=pooled)
    prof = DiscrepancyProfile(G, H, family, config.kind, config.delta)
    est = prof.metric(config.tol)
    out = {"estimate": est, "conf_radius": prof.radius, "witness": prof.report(est).witness_index}
    if s.tau > 0:
        out["profile"] = lambda_profile(prof.value, s.tau, noise=2.0 * prof.radius)
    return out


def _ratio(estimate: float, bound: float) -> float:
    if bound == 0.0:
        return 0.0 if estimate == 0.0 else math.inf
    return estimate / bound


def run_cell(config: ExperimentConfig, index: int, cell: dict) -> dict:
    rng = RngStream(config.seed).child(index)
    row = dict(cell=index, scheme=config.scheme, approximant=config.approximant,
               kind=config.kind, **cell)
    row["bound_value"] = bound_value(cell["p"], cell["tau"])
    exact = config.mode == "exact" or (config.mode == "auto" and cell["d"] == 1 and cell["m"] == 1)
    row["mode"] = "exact" if exact else "monte_carlo"
    try:
        s = _cell_scheme(config, cell["n"], cell["d"], cell["p"], cell["tau"])
        validate_scheme(s)
        res = _exact_cell(config, s, cell) if exact else _monte_carlo_cell(config, s, cell, rng)
    except (AccompanyError, ValueError, AssertionError) as exc:
        row.update(estimate=math.nan, conf_radius=math.nan, ratio=math.nan, witness="",
                   profile_r=math.nan, status=f"failed: {type(exc).__name__}: {exc}")
        return row
    row.update(res)
    row["ratio"] = _ratio(row["estimate"], row["bound_value"])
    row["profile_r"] = res["profile"]["r"] if "profile" in res else math.nan
    row["status"] = "ok"
    return row


def _spread(values) -> float:
    v = np.array([x for x in values if np.isfinite(x) and x > 0])
    if len(v) < 2:
        return 1.0
    return float(v.max() / v.min())


def bound_shape_check(cells: list, spread_limit: float = SPREAD_LIMIT,
                      pearson_limit: float = PEARSON_LIMIT) -> dict:
    """Ordering checks on the per-cell ratios.

    Ratios must stay within ``spread_limit`` (max/min) along every sweep in
    ``p`` at fixed ``tau`` and along every sweep in ``tau > 0`` at fixed
    ``p``; every fitted lambda-profile must have Pearson ``r < pearson_limit``.
    """
    ok_cells = [c for c in cells if c.get("status") == "ok"]
    groups = []
    for sweep, fixed in (("p", "tau"), ("tau", "p")):
        keyf = lambda c: (c["n"], c["d"], c["m"], c[fixed])
        pool = [c for c in ok_cells if sweep == "p" or c["tau"] > 0]
        for key, members in itertools.groupby(sorted(pool, key=keyf), key=keyf):
            members = list(members)
            if len(members) < 2:
                continue
            spread = _spread([c["ratio"] for c in members])
            groups.append({"sweep": sweep, "n": key[0], "d": key[1], "m": key[2], fixed: key[3],
                           "spread": spread, "ok": spread < spread_limit})
    profiles = []
    for c in ok_cells:
        r = c.get("profile_r", math.nan)
        if isinstance(r, float) and not math.isnan(r):
            profiles.append({"cell": c["cell"], "r": r, "ok": r < pearson_limit})
    return {
        "spreads": groups,
        "profiles": profiles,
        "max_spread": max((g["spread"] for g in groups), default=1.0),
        "max_r": max((p["r"] for p in profiles), default=math.nan),
        "ok": all(g["ok"] for g in groups) and all(p["ok"] for p in profiles),
    }


def run_bound_sweep(config: ExperimentConfig, timing: bool = False) -> RunManifest:
    """Estimate ``L_m``/``pi_m`` between ``F`` and the chosen approximant on
    every grid cell and record ratios to ``p + tau(|log tau| + 1)``."""
    import time

    config.validate()
    start = time.perf_counter()
    cells = sweep_cells(config)
    rows = _parallel_map(lambda ic: run_cell(config, ic[0], ic[1]), list(enumerate(cells)))
    doc = config.to_json()
    doc.pop("out")
    manifest = RunManifest("sweep", doc, config.digest(), config.seed,
                           columns=SWEEP_COLUMNS, cells=rows)
    manifest.checks["bound_shape"] = bound_shape_check(rows, config.spread_limit)
    failed = [r["cell"] for r in rows if r["status"] != "ok"]
    manifest.checks["cells"] = {"failed": failed, "ok": not failed}
    if timing:
        manifest.wall_clock = time.perf_counter() - start
    return manifest


# ---------------------------------------------------------------------------
# Le Cam
# ---------------------------------------------------------------------------

LECAM_COLUMNS = ("n", "p", "tv", "bound", "holds")


def binomial_law(n: int, p: float) -> FiniteLaw:
    k = np.arange(n + 1)
    return FiniteLaw.from_pmf(k[:, None].astype(float), stats.binom.pmf(k, n, p))


def lecam_cell(n: int, p: float, tail_eps: float = 1e-12) -> dict:
    s = bernoulli_scheme(n, p)
    D = exact_pmf(accompany(s), tail_eps)
    tv = tv_exact(binomial_law(n, p), D)
    bound = n * p * p
    return {"n": n, "p": p, "tv": tv, "bound": bound, "holds": bool(tv <= bound + 2 * tail_eps)}


def lecam_experiment(n_grid, p_grid, tail_eps: float = 1e-12, seed: int = 0) -> RunManifest:
    """Exact total variation between Binomial(n, p) and its accompanying
    Poisson law, against ``n p^2``."""
    n_grid, p_grid = list(n_grid), list(p_grid)
    if not n_grid or not p_grid:
        raise ValueError("grids must be nonempty")
    if min(n_grid) < 1 or not all(0.0 <= p <= 1.0 for p in p_grid):
        raise ValueError("need n >= 1 and p in [0, 1]")
    rows = [lecam_cell(int(n), float(p), tail_eps) for n in n_grid for p in p_grid]
    doc = {"n_grid": n_grid, "p_grid": p_grid, "tail_eps": tail_eps}
    manifest = RunManifest("lecam", doc, config_hash(doc), seed, columns=LECAM_COLUMNS, cells=rows)
    violations = [(r["n"], r["p"]) for r in rows if not r["holds"]]
    manifest.checks["lecam"] = {"violations": violations, "ok": not violations}
    return manifest


# ---------------------------------------------------------------------------
# Bernstein tail and Poissonization
# ---------------------------------------------------------------------------

def bernstein_tail(weights, lam: float) -> float:
    """Sub-gamma bound on ``P(|sum w_i (nu_i - 1)| >= lam)``, ``nu_i`` iid Poisson(1)."""
    if lam < 0:
        raise NegativeLambda("lambda must be nonnegative")
    w = np.atleast_1d(np.asarray(weights, dtype=np.float64))
    v = float(np.sum(w * w))
    b = float(np.max(np.abs(w))) if w.size else 0.0
    denom = 2.0 * (v + b * lam / 3.0)
    if denom == 0.0:
        return 1.0
    return min(1.0, 2.0 * math.exp(-lam * lam / denom))


def delta_tail_exact(weights, lam: float, tail_eps: float = 1e-14) -> float:
    """``P(|sum w_i (nu_i - 1)| >= lam)`` from the exact compound Poisson pmf."""
    w = np.atleast_1d(np.asarray(weights, dtype=np.float64))
    comps = []
    for wi in w:
        if wi == 0.0:
            continue
        comps.append(CompoundPoissonLaw(FiniteLaw.point_mass([wi])))
        comps.append(FiniteLaw.point_mass([-wi]))
    if not comps:
        return 1.0 if lam <= 0 else 0.0
    law = exact_pmf(ConvolutionLaw(tuple(comps), 1), tail_eps)
    mass = float(law.weights[np.abs(law.atoms[:, 0]) >= lam - 1e-12].sum())
    return mass + law.missing_mass


@dataclass(frozen=True, eq=False)
class PoissonizationInstance:
    """Factors ``F_i`` whose ``U_i`` need not be centered, with a polyhedron
    ``P`` (normals ``t_j``) and a grid of ``lam``."""

    factors: tuple
    polyhedron: Polyhedron
    lambdas: tuple

    @property
    def dimension(self) -> int:
        return self.factors[0].dimension

    @property
    def shifts(self) -> np.ndarray:
        return np.array([f.shift for f in self.factors])

    def scheme(self) -> Scheme:
        tau = max(f.u_law.support_radius() for f in self.factors)
        return Scheme(tau, self.factors, self.dimension)

    def to_json(self) -> dict:
        return {"factors": [f.to_json() for f in self.factors],
                "polyhedron": self.polyhedron.to_json(), "lambdas": list(self.lambdas)}

    @classmethod
    def from_json(cls, doc: dict) -> "PoissonizationInstance":
        return cls(tuple(MixtureFactor.from_json(f) for f in doc["factors"]),
                   Polyhedron.from_json(doc["polyhedron"]), tuple(doc["lambdas"]))


def random_instance(rng, d: int | None = None, n: int | None = None, m: int | None = None,
                    tau: float = 0.3, p_max: float = 0.2,
                    lambdas=(0.05, 0.1, 0.2, 0.5)) -> PoissonizationInstance:
    """Random instance with non-centered ``U_i`` in the ``tau``-ball.

    The polyhedron gets random unit normals and offsets at random quantiles
    of a pilot sample of ``T``, so it cuts through the bulk of the law.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    d = d or int(gen.integers(1, 4))
    n = n or int(gen.integers(1, 11))
    m = m or int(gen.integers(1, 4))
    factors = []
    for _ in range(n):
        k = int(gen.integers(1, 4))
        dirs = random_unit_vectors(gen, k, d)
        u = FiniteLaw.from_pmf(dirs * tau * gen.random((k, 1)), gen.dirichlet(np.ones(k)))
        kv = int(gen.integers(1, 3))
        v = FiniteLaw.from_pmf(gen.uniform(-1.0, 1.0, (kv, d)), gen.dirichlet(np.ones(kv)))
        factors.append(MixtureFactor(float(gen.uniform(0.0, p_max)), u, v))
    normals = random_unit_vectors(gen, m, d)
    pilot = _poissonized_sums(tuple(factors), gen, 2000)[1]
    levels = gen.uniform(0.3, 0.9, m)
    offsets = np.array([np.quantile(pilot @ t, q) for t, q in zip(normals, levels)])
    return PoissonizationInstance(tuple(factors), Polyhedron(normals, offsets), tuple(lambdas))


def _poissonized_sums(factors, gen: np.random.Generator, count: int):
    """Coupled ``(S, T, Delta)``: ``S`` from one draw per factor, ``T`` from
    ``nu_i ~ Poisson(1)`` draws per factor, ``Delta = sum (nu_i - 1) a_i``."""
    d = factors[0].dimension
    S = np.zeros((count, d))
    T = np.zeros((count, d))
    delta = np.zeros((count, d))
    for f in factors:
        S += f.sample(gen, count)
        nu = gen.poisson(1.0, count)
        draws = f.sample(gen, int(nu.sum()))
        owner = np.repeat(np.arange(count), nu)
        for k in range(d):
            T[:, k] += np.bincount(owner, weights=draws[:, k], minlength=count)
        delta += np.outer(nu - 1, f.shift)
    return S, T, delta


POISSON_COLUMNS = (
    "instance", "lambda", "F_P", "D_P", "D_P2lam", "Dbar_Plam", "tail_sum", "bernstein_sum",
    "radius", "sandwich_lower", "sandwich_upper", "tails_ok", "ok",
)


def poissonization_experiment(instance: PoissonizationInstance, count: int, rng,
                              delta: float = 0.05, index: int = 0) -> list:
    """Monte Carlo check of

    ``D{P} <= Dbar{P_lam} + sum_j P(|<Delta, t_j>| >= lam)`` and
    ``Dbar{P_lam} <= D{P_2lam} + sum_j P(|<Delta, t_j>| >= lam)``

    on coupled samples of ``S``, ``T`` and ``T* = T - Delta``. Each
    probability carries a simultaneous Hoeffding radius; the inequalities
    must hold within the sum of the radii involved. Empirical ``Delta``
    tails are compared with :func:`bernstein_tail` at 4 sigma.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    P = instance.polyhedron
    S, T, dlt = _poissonized_sums(instance.factors, gen, count)
    Tstar = T - dlt
    lams = list(instance.lambdas)
    n_estimates = len(lams) * (4 + P.m)
    # confidence_radius covers 4 * family_size estimates simultaneously
    radius = confidence_radius(count, max(1, math.ceil(n_estimates / 4)), delta)
    eS, eT, eTs = P.excess(S), P.excess(T), P.excess(Tstar)
    proj = dlt @ P.normals.T
    weights = instance.shifts @ P.normals.T
    rows = []
    for lam in lams:
        if lam <= 0:
            raise NegativeLambda("the lambda grid must be positive")
        f_p = float(np.mean(eS <= 0))
        d_p = float(np.mean(eT <= 0))
        d_2 = float(np.mean(eT <= 2 * lam))
        dbar = float(np.mean(eTs <= lam))
        tails = np.mean(np.abs(proj) >= lam, axis=0)
        bern = np.array([bernstein_tail(weights[:, j], lam) for j in range(P.m)])
        sigma = np.sqrt(np.maximum(tails * (1 - tails), 1.0 / count) / count)
        tails_ok = bool(np.all(tails <= bern + 4 * sigma))
        tail_sum = float(tails.sum())
        slack = (2 + P.m) * radius
        lower = d_p - dbar - tail_sum
        upper = dbar - d_2 - tail_sum
        rows.append({
            "instance": index, "lambda": float(lam), "F_P": f_p, "D_P": d_p, "D_P2lam": d_2,
            "Dbar_Plam": dbar, "tail_sum": tail_sum, "bernstein_sum": float(bern.sum()),
            "radius": radius, "sandwich_lower": lower, "sandwich_upper": upper,
            "tails_ok": tails_ok, "ok": bool(lower <= slack and upper <= slack and tails_ok),
        })
    return rows


def run_poissonization(instances: int = 20, count: int = 100_000, seed: int = 0,
                       delta: float = 0.05, d: int | None = None, n: int | None = None,
                       m: int | None = None) -> RunManifest:
    root = RngStream(seed)

    def one(i):
        inst = random_instance(root.child(2 * i), d, n, m)
        return poissonization_experiment(inst, count, root.child(2 * i + 1), delta, i)

    rows = [r for block in _parallel_map(one, range(instances)) for r in block]
    doc = {"instances": instances, "count": count, "delta": delta, "d": d, "n": n, "m": m}
    manifest = RunManifest("poissonize", doc, config_hash(doc), seed, columns=POISSON_COLUMNS, cells=rows)
    bad = [(r["instance"], r["lambda"]) for r in rows if not r["ok"]]
    manifest.checks["sandwich"] = {"violations": bad, "ok": not bad}
    return manifest
