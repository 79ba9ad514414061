"""Command-line surface for building, classifying, and simulating systems.

Reports are machine-readable JSON bodies between a header (whose timestamp
line is the only nondeterministic byte) and human summary footer lines.
Exit codes: 0 success, 1 negative verdict (``rich`` only), 2 validation
failure, 3 numerical-degeneracy abort, 4 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import builders, classify, fileio, model, paths
from . import torusflow as flow
from .config import DEFAULT_TOLS, Tolerances
from .geometry import orthonormalize

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_VALIDATION = 2
EXIT_DEGENERACY = 3
EXIT_USAGE = 4


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _tols_from_args(args) -> Tolerances:
    kw = {}
    if args.tol_rank is not None:
        kw["rank_rel"] = args.tol_rank
    if args.disc_tol is not None:
        kw["disc"] = args.disc_tol
    if args.t_min_gap is not None:
        kw["t_min_gap"] = args.t_min_gap
    if args.fd_step is not None:
        kw["fd_step"] = args.fd_step
    return Tolerances(**kw) if kw else DEFAULT_TOLS


def _run_info(args, seed=None) -> dict:
    info = {
        "threads_cap": os.environ.get("CYLBILL_THREADS", ""),
        "tolerances": {
            "rank_rel": _tols_from_args(args).rank_rel,
            "disc": _tols_from_args(args).disc,
            "t_min_gap": _tols_from_args(args).t_min_gap,
            "fd_step": _tols_from_args(args).fd_step,
        },
    }
    if seed is not None:
        info["seed"] = int(seed)
    return info


def _write_report(command: str, body: dict, summary: list[str],
                  out_path: str | None) -> None:
    stamp = datetime.now(timezone.utc).isoformat()
    text = (
        f"# cylbill report: {command}\n"
        f"# generated: {stamp}\n"
        + fileio.dumps(body)
        + "".join(f"# summary: {line}\n" for line in summary)
    )
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_valid_system(path):
    system = model.load_system(path)
    report = model.validate(system)
    if not report.ok:
        raise ValidationFailure(f"{path}:\n{report}")
    return system


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError as exc:
        raise UsageError(f"cannot parse vector {text!r}") from exc


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse integer list {text!r}") from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_classify(args) -> int:
    system = _load_valid_system(args.system)
    bases = system.base_spaces()
    transitive, witness = classify.is_transitive(bases, ambient_dim=system.dim)
    commutant = classify.commutant_dimension(bases) \
        if all(b.dim >= 2 for b in bases) else None
    transverse, counterexample = classify.is_transverse(
        system, max_enumeration=args.max_subsets
    )
    graph = classify.non_orthogonality_graph(bases)
    import networkx as nx

    components = [sorted(c) for c in
                  sorted(nx.connected_components(graph), key=min)]
    body = {
        "system": args.system,
        "dim": system.dim,
        "n_cylinders": system.k,
        "transitive": transitive,
        "transverse": transverse,
        "commutant_dimension": commutant,
        "graph_components": components,
        "run": _run_info(args),
    }
    if witness is not None:
        body["splitting_witness"] = {
            "b1_dim": witness.b1.dim,
            "b2_dim": witness.b2.dim,
            "b1_basis": [[float(x) for x in row] for row in witness.b1.basis],
            "assignment": {str(k): v for k, v in witness.assignment.items()},
        }
    if counterexample is not None:
        body["transverseness_counterexample"] = list(counterexample)
    summary = [
        f"transitive: {'yes' if transitive else 'no'}",
        f"transverse: {'yes' if transverse else 'no'}",
        f"commutant dimension: {commutant}",
        f"graph components: {len(components)}",
    ]
    _write_report("classify", body, summary, args.out)
    return EXIT_OK


def cmd_build(args) -> int:
    if args.kind == "hardball":
        if args.n is None or args.nu is None or args.masses is None \
                or args.r is None:
            raise UsageError("hardball needs --n, --nu, --masses, --r")
        masses = tuple(float(x) for x in args.masses.split(","))
        params = builders.HardBallParams(
            n_balls=args.n, torus_dim=args.nu, masses=masses, radius=args.r
        )
        system, embedding = builders.hard_ball_system(params)
        extra = {
            "kind": "hardball",
            "reduced_dim": system.dim,
            "n_cylinders": system.k,
            "pairs": [list(p) for p in embedding.pairs],
            "radii": [c.radius for c in system.cylinders],
        }
    elif args.kind == "directsum":
        if args.params is None:
            raise UsageError("directsum needs --params (JSON parameter file)")
        doc = fileio.load(args.params)
        bases = [
            orthonormalize(np.asarray(rows, dtype=float),
                           ambient_dim=len(rows[0]))
            for rows in doc["bases"]
        ]
        system, graph = builders.direct_sum_system(
            block_dims=doc["block_dims"],
            bases=bases,
            radii=doc["radii"],
            translations=[np.asarray(t, dtype=float)
                          for t in doc.get("translations", [])] or None,
            lattice_basis=np.asarray(doc["lattice_basis"], dtype=float)
            if "lattice_basis" in doc else None,
        )
        extra = {
            "kind": "directsum",
            "n_cylinders": system.k,
            "graph_edges": sorted([sorted(e) for e in graph.edges]),
        }
    elif args.kind == "subbilliard":
        if args.system is None or args.indices is None:
            raise UsageError("subbilliard needs --system and --indices")
        parent = _load_valid_system(args.system)
        system, report = builders.sub_billiard(parent,
                                               _parse_ints(args.indices))
        extra = {
            "kind": "subbilliard",
            "parent": args.system,
            "parent_indices": list(report.parent_indices),
            "factor_dim": system.dim,
            "drift_rank": report.drift_lattice_rank,
            "notes": report.notes,
        }
    else:
        raise UsageError(f"unknown build kind {args.kind!r}")
    report = model.validate(system)
    if not report.ok:
        raise ValidationFailure(f"built system failed validation:\n{report}")
    model.save_system(system, args.out)
    body = {"out": args.out, "dim": system.dim, "run": _run_info(args)}
    body.update(extra)
    _write_report("build", body, [f"wrote {args.out} (dim {system.dim}, "
                                  f"{system.k} cylinders)"], None)
    return EXIT_OK


def _delta_body(args):
    system = _load_valid_system(args.system)
    labels = paths.load_sigma(args.sigma)
    report = paths.delta_sigma_report(
        system, labels, n_samples=args.samples, seed=args.seed,
        box_scale=args.box_scale, tols=_tols_from_args(args),
    )
    body = {
        "system": args.system,
        "sigma": args.sigma,
        "labels": labels,
        "delta": report.value,
        "full_target": report.d - 1,
        "bound": report.bound,
        "rich": report.rich,
        "n_success": report.n_success,
        "n_failed_samples": report.n_failed_samples,
        "sample_dims": report.sample_dims,
        "constrained_manifold_dim": paths.constrained_manifold_dim(system,
                                                                   labels),
        "run": _run_info(args, seed=args.seed),
    }
    summary = [
        f"delta = {report.value} (full target {report.d - 1}, "
        f"bound {report.bound})",
        f"rich: {'yes' if report.rich else 'no'}",
        f"samples: {report.n_success} ok, {report.n_failed_samples} failed",
    ]
    return body, summary, report


def cmd_delta(args) -> int:
    body, summary, _ = _delta_body(args)
    _write_report("delta", body, summary, args.out)
    return EXIT_OK


def cmd_rich(args) -> int:
    body, summary, report = _delta_body(args)
    _write_report("rich", body, summary, args.out)
    return EXIT_OK if report.rich else EXIT_NEGATIVE


def _initial_phase(args, system) -> flow.PhasePoint:
    if args.random:
        if args.seed is None:
            raise UsageError("--random requires --seed")
        rng = np.random.default_rng(np.random.SeedSequence(args.seed))
        return flow.random_phase(system, rng)
    if args.q is None or args.v is None:
        raise UsageError("provide --q and --v, or --random with --seed")
    q = _parse_vector(args.q)
    v = _parse_vector(args.v)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise UsageError("velocity must be nonzero")
    return flow.PhasePoint(q, v / nv)


def cmd_simulate(args) -> int:
    system = _load_valid_system(args.system)
    phase = _initial_phase(args, system)
    if args.collisions is None and args.time is None:
        raise UsageError("need --collisions or --time")
    record = flow.flow(
        system, phase,
        max_collisions=args.collisions,
        max_time=args.time,
        tols=_tols_from_args(args),
    )
    flow.save_record(record, args.out)
    if args.table:
        with open(args.table, "w", encoding="utf-8") as fh:
            fh.write(flow.record_table(record))
    degenerate = record.flags["tangential_encountered"] \
        or record.flags["simultaneous_encountered"] \
        or record.flags["cascade_capped"]
    body = {
        "system": args.system,
        "out": args.out,
        "n_events": len(record.events),
        "total_time": record.total_time,
        "flags": {k: bool(v) for k, v in record.flags.items()},
        "run": _run_info(args, seed=args.seed),
    }
    summary = [
        f"{len(record.events)} events over time {record.total_time:.6g}",
        "flags: " + ", ".join(k for k, v in record.flags.items() if v)
        if any(record.flags.values()) else "flags: none",
    ]
    _write_report("simulate", body, summary, None)
    return EXIT_DEGENERACY if degenerate else EXIT_OK


def cmd_lyapunov(args) -> int:
    system = _load_valid_system(args.system)
    phase = _initial_phase(args, system)
    result = flow.lyapunov_max(
        system, phase,
        total_t=args.total_time,
        renorm_dt=args.renorm_dt,
        d0=args.d0,
        seed=args.seed,
        tols=_tols_from_args(args),
    )
    body = {
        "system": args.system,
        "estimate": result.estimate,
        "stderr": result.stderr if np.isfinite(result.stderr) else None,
        "n_windows": result.n_windows,
        "n_kept": len(result.window_logs),
        "discarded": result.discarded,
        "unreliable": result.unreliable,
        "window_logs": result.window_logs if args.dump_windows else None,
        "run": _run_info(args, seed=args.seed),
    }
    summary = [
        f"lyapunov estimate {result.estimate:.6g} "
        f"(stderr {result.stderr:.3g}, {len(result.window_logs)} windows, "
        f"{result.discarded} discarded)",
        "UNRELIABLE (too many discarded windows)" if result.unreliable
        else "reliability: ok",
    ]
    _write_report("lyapunov", body, summary, args.out)
    return EXIT_DEGENERACY if result.unreliable else EXIT_OK


def cmd_splitting_scan(args) -> int:
    system = _load_valid_system(args.system)
    result = flow.splitting_scan(
        system,
        n_orbits=args.orbits,
        n_collisions=args.collisions,
        seed=args.seed,
        tols=_tols_from_args(args),
    )
    body = {
        "system": args.system,
        "fraction": result.fraction,
        "n_orbits": result.n_orbits,
        "n_with_witness": result.n_with_witness,
        "n_degenerate": result.n_degenerate,
        "collisions_per_orbit": args.collisions,
        "run": _run_info(args, seed=args.seed),
    }
    summary = [
        f"splitting fraction {result.fraction:.4f} "
        f"({result.n_with_witness}/{result.n_orbits} orbits, "
        f"{args.collisions} collisions each)",
    ]
    _write_report("splitting-scan", body, summary, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="cylbill",
                     description="Cylindric billiards: build, classify, "
                                 "simulate, and diagnose hyperbolicity.")
    parser.add_argument("--tol-rank", type=float, default=None,
                        help="relative singular-value cutoff for ranks")
    parser.add_argument("--disc-tol", type=float, default=None,
                        help="tangency guard on quadratic discriminants")
    parser.add_argument("--t-min-gap", type=float, default=None,
                        help="minimal advance between collisions")
    parser.add_argument("--fd-step", type=float, default=None,
                        help="finite-difference step")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="transitivity / transverseness report")
    p.add_argument("--system", required=True)
    p.add_argument("--max-subsets", type=int, default=24)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("build", help="build a system file")
    p.add_argument("kind", choices=["hardball", "directsum", "subbilliard"])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="number of balls")
    p.add_argument("--nu", type=int, default=None, help="torus dimension")
    p.add_argument("--masses", default=None, help="comma-separated masses")
    p.add_argument("--r", type=float, default=None, help="ball radius")
    p.add_argument("--params", default=None,
                   help="JSON parameters (directsum)")
    p.add_argument("--system", default=None, help="parent system (subbilliard)")
    p.add_argument("--indices", default=None,
                   help="comma-separated cylinder indices (subbilliard)")
    p.set_defaults(func=cmd_build)

    for name, fn in (("delta", cmd_delta), ("rich", cmd_rich)):
        p = sub.add_parser(name, help="expanding-dimension sampler")
        p.add_argument("--system", required=True)
        p.add_argument("--sigma", required=True)
        p.add_argument("--samples", type=int, required=True)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--box-scale", type=float, default=None)
        p.add_argument("--out", default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("simulate", help="run the flow, export the record")
    p.add_argument("--system", required=True)
    p.add_argument("--q", default=None, help="comma-separated start position")
    p.add_argument("--v", default=None, help="comma-separated start velocity")
    p.add_argument("--random", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--collisions", type=int, default=None)
    p.add_argument("--time", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--table", default=None, help="also write a flat TSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("lyapunov", help="largest Lyapunov exponent estimate")
    p.add_argument("--system", required=True)
    p.add_argument("--q", default=None)
    p.add_argument("--v", default=None)
    p.add_argument("--random", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--total-time", type=float, required=True)
    p.add_argument("--renorm-dt", type=float, default=1.0)
    p.add_argument("--d0", type=float, default=1e-9)
    p.add_argument("--dump-windows", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_lyapunov)

    p = sub.add_parser("splitting-scan",
                       help="fraction of orbits with a splitting witness")
    p.add_argument("--system", required=True)
    p.add_argument("--orbits", type=int, required=True)
    p.add_argument("--collisions", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_splitting_scan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except classify.EnumerationGuardError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (model.SystemFormatError, ValidationFailure,
            builders.BuilderError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (paths.NoValidPath, paths.PerturbationFailure, paths.TraceError,
            builders.FactorLatticeError, flow.FlowError) as exc:
        print(f"numerical-degeneracy abort: {exc}", file=sys.stderr)
        return EXIT_DEGENERACY
    except OSError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
