"""Command line entry point: ``accompany-lab <subcommand> [options]``.

Exit codes: 0 success, 1 validation or usage failure (including a failed
check), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .distributions import (
    APPROXIMANTS,
    RngStream,
    approximant,
    bernoulli_scheme,
    exact_split,
    lattice_scheme,
    law_from_json,
    load_scheme,
    sample_law,
    sample_scheme,
    scheme_law,
    validate_scheme,
)
from .errors import AccompanyError, InvalidScheme, SupportExplosion
from .experiments import ExperimentConfig, lecam_experiment, run_bound_sweep, run_poissonization
from .metrics import DiscrepancyProfile, EmpiricalMeasure, rho_m
from .polyhedra import (
    augment_cuts,
    cut_bound,
    inflation_ratio_2d,
    make_polyhedron,
    random_family,
    vertices_2d,
)


EXACT_ATOMS = 200_000


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text: str) -> list:
    return [int(x) for x in str(text).split(",") if x.strip()]


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])
    return buf.getvalue()


def _emit(args, columns, rows, extra: dict | None = None):
    if args.format == "json":
        doc = {"rows": rows, **(extra or {})}
        text = json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    else:
        text = _csv_text(columns, rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def _emit_manifest(args, manifest):
    if args.out:
        manifest.write(args.out, args.format)
    elif args.format == "json":
        sys.stdout.write(manifest.dumps())
    else:
        sys.stdout.write(manifest.to_csv())
    if not manifest.ok:
        raise CheckFailed(f"{manifest.experiment}: checks failed: "
                          + ", ".join(k for k, v in manifest.checks.items() if not v.get("ok", True)))


# ---------------------------------------------------------------------------
# scheme sources
# ---------------------------------------------------------------------------

def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _scheme_from_args(args):
    if getattr(args, "scheme", None):
        return load_scheme(args.scheme)
    if args.generator == "bernoulli":
        return bernoulli_scheme(args.n, args.p, args.d)
    return lattice_scheme(args.n, args.p, args.tau, args.d)


def _add_scheme_options(p):
    p.add_argument("--scheme", help="scheme JSON file (overrides the generator)")
    p.add_argument("--generator", choices=("lattice", "bernoulli"), default="lattice")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--p", type=float, default=0.1)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--d", type=int, default=1)


def _source_law(token: str, s):
    """``F``, an approximant name, or ``file:<path>`` holding a law JSON."""
    if token == "F":
        return scheme_law(s)
    if token in APPROXIMANTS:
        return approximant(s, token)
    if token.startswith("file:"):
        return law_from_json(json.loads(Path(token[5:]).read_text()))
    raise UsageError(f"unknown source {token!r}; use F, one of {APPROXIMANTS} or file:<path>")


def _measure(law, rng: RngStream, count: int):
    """Exact finite law when there is no Gaussian part, samples otherwise."""
    try:
        fin, gauss = exact_split(law, max_atoms=EXACT_ATOMS)
    except SupportExplosion:
        gauss = True
    if gauss is None:
        return fin
    return EmpiricalMeasure(sample_law(law, rng, count), {"rng": rng.describe()})


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_validate(args):
    if not args.path:
        raise UsageError("validate needs a scheme file")
    s = load_scheme(args.path)
    validate_scheme(s, require_centered=not args.uncentered)
    rows = [{"path": args.path, "n": s.n, "dimension": s.dimension, "tau": s.tau, "p": s.p, "valid": True}]
    _emit(args, ("path", "n", "dimension", "tau", "p", "valid"), rows)


def cmd_sample(args):
    s = _scheme_from_args(args)
    rng = RngStream(_seed(args))
    if args.law == "F":
        pts = sample_scheme(s, rng, args.count, require_centered=not args.uncentered)
    else:
        pts = sample_law(approximant(s, args.law), rng, args.count)
    cols = tuple(f"x{k}" for k in range(pts.shape[1]))
    rows = [dict(zip(cols, map(float, row))) for row in pts]
    _emit(args, cols, rows, {"law": args.law, "seed": _seed(args)})


def cmd_distance(args):
    s = _scheme_from_args(args)
    root = RngStream(_seed(args))
    G = _measure(_source_law(args.left, s), root.child(0), args.samples)
    H = _measure(_source_law(args.right, s), root.child(1), args.samples)
    pts = np.vstack([G.atoms if hasattr(G, "atoms") else G.samples,
                     H.atoms if hasattr(H, "atoms") else H.samples])
    family = random_family(args.m, s.dimension, args.family_size, root.child(2),
                           offset_mode="quantile", samples=pts)
    if args.metric == "rho":
        prof = DiscrepancyProfile(G, H, family, "inflate")
        est, witness = rho_m(G, H, family), ""
    else:
        kind = "inflate" if args.metric == "L" else "neighborhood"
        prof = DiscrepancyProfile(G, H, family, kind)
        est = prof.metric(args.tol)
        witness = prof.report(est).witness_index
    row = {"metric": args.metric, "left": args.left, "right": args.right, "m": args.m,
           "family_size": args.family_size, "estimate": est, "conf_radius": prof.radius, "witness": witness}
    _emit(args, tuple(row), [row])


def _sweep_config(args) -> ExperimentConfig:
    doc = dict(args.config_doc or {})
    for key in ("approximant", "kind", "mode", "samples", "family_size"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out:
        doc["out"] = args.out
    elif doc.get("out"):
        args.out = doc["out"]
    return ExperimentConfig.from_json(doc)


def cmd_sweep(args):
    config = _sweep_config(args)
    _emit_manifest(args, run_bound_sweep(config))


def cmd_lecam(args):
    manifest = lecam_experiment(args.n, args.p, args.tail_eps, _seed(args))
    _emit_manifest(args, manifest)


def cmd_poissonize(args):
    manifest = run_poissonization(args.instances, args.samples, _seed(args), args.delta,
                                  args.d, args.n, args.m)
    _emit_manifest(args, manifest)


def cmd_cuts(args):
    if args.polygon:
        doc = json.loads(Path(args.polygon).read_text())
        P = make_polyhedron(doc["normals"], doc["offsets"])
    else:
        P = make_polyhedron([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    aug = augment_cuts(P, args.epsilon)
    ratio = inflation_ratio_2d(P, aug, args.lam)
    full = aug.as_polyhedron()
    rows = [{"index": j, "t0": float(t[0]), "t1": float(t[1]), "offset": float(b), "is_cut": j >= P.m}
            for j, (t, b) in enumerate(zip(full.normals, full.offsets))]
    extra = {"epsilon": args.epsilon, "ratio": ratio, "bound": 1.0 + args.epsilon,
             "cuts": len(aug.cuts), "cut_bound": cut_bound(P.m, args.epsilon),
             "vertices": len(vertices_2d(P))}
    if args.format == "json":
        _emit(args, None, rows, extra)
    else:
        cols = ("index", "t0", "t1", "offset", "is_cut")
        text = _csv_text(cols, rows) + f"# ratio={ratio!r} bound={1.0 + args.epsilon!r}\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    if ratio > 1.0 + args.epsilon + 1e-9:
        raise CheckFailed(f"inflation ratio {ratio} exceeds 1 + epsilon")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _globals(p, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--out", default=d, help="output file (stdout when absent)")
    p.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS if suppress else "csv")
    p.add_argument("--config", default=d, help="JSON file with option defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="accompany-lab", description=__doc__.splitlines()[0])
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("validate", help="check a scheme JSON file")
    p.add_argument("path", nargs="?")
    p.add_argument("--uncentered", action="store_true", help="skip the zero-mean check on U_i")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sample", help="draw samples of F or an approximant")
    _add_scheme_options(p)
    p.add_argument("--law", choices=("F",) + APPROXIMANTS, default="F")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--uncentered", action="store_true", help="allow U_i with nonzero mean")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("distance", help="estimate L_m, pi_m or rho_m between two sources")
    _add_scheme_options(p)
    p.add_argument("--left", default="F")
    p.add_argument("--right", default="D")
    p.add_argument("--metric", choices=("L", "pi", "rho"), default="L")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--family-size", type=int, default=50)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("sweep", help="bound-shape sweep over a (p, tau, n, d, m) grid")
    p.add_argument("--approximant", choices=APPROXIMANTS)
    p.add_argument("--kind", choices=("inflate", "neighborhood"))
    p.add_argument("--mode", choices=("auto", "exact", "monte_carlo"))
    p.add_argument("--samples", type=int)
    p.add_argument("--family-size", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lecam", help="exact TV between Binomial(n, p) and its Poisson approximation")
    p.add_argument("--n", type=_ints, default=[10])
    p.add_argument("--p", type=_floats, default=[0.1])
    p.add_argument("--tail-eps", type=float, default=1e-12)
    p.set_defaults(func=cmd_lecam)

    p = sub.add_parser("poissonize", help="Poissonization sandwich experiment")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.set_defaults(func=cmd_poissonize)

    p = sub.add_parser("cuts", help="planar cut augmentation and its inflation ratio")
    p.add_argument("--polygon", help="JSON with 'normals' and 'offsets' (default: right-angle corner)")
    p.add_argument("--epsilon", type=float, default=0.09)
    p.add_argument("--lam", type=float, default=1.0)
    p.set_defaults(func=cmd_cuts)

    for sp in sub.choices.values():
        _globals(sp, suppress=True)
    return parser


def _apply_config(parser, argv):
    """Reparse with values from ``--config`` as defaults for the subcommand."""
    args = parser.parse_args(argv)
    args.config_doc = None
    if not getattr(args, "config", None):
        return args
    doc = json.loads(Path(args.config).read_text())
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    if args.command == "sweep":
        args.config_doc = doc
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest for a in sub._actions}
    unknown = set(doc) - dests
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    sub.set_defaults(**doc)
    args = parser.parse_args(argv)
    args.config_doc = doc
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        args.func(args)
    except (UsageError, InvalidScheme, CheckFailed, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError) as exc:
        if isinstance(exc, AccompanyError) and not isinstance(exc, InvalidScheme):
            print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (AccompanyError, ArithmeticError, MemoryError, AssertionError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
