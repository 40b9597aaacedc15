"""Command-line front end: scenario simulation, dispatch, stability reports
and bundled experiment reproduction.

Exit codes: 0 success (simulate: converged), 2 simulate finished without
convergence, 1 bad input or validation failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from typing import Optional

import numpy as np

from . import experiments
from .controllers import ControlContext
from .dispatch import optimal_dispatch
from .model import (CONTINUOUS, load_scenario, save_scenario, toy_grid,
                    validate, with_overrides)
from .simulator import run_scenario, write_trajectory_csv
from .stability import (assemble_state_matrix, characteristic_identity_check,
                        check_sufficient_multi_node, check_sufficient_two_node,
                        build_Lc_star, spectrum)


def _load(args) -> Optional[object]:
    if args.scenario == "toy":
        scn = toy_grid()
    else:
        try:
            scn = load_scenario(args.scenario)
        except FileNotFoundError:
            print(f"error: scenario file not found: {args.scenario}", file=sys.stderr)
            return None
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return None
    T = "unset"
    if getattr(args, "T", None) is not None:
        T = CONTINUOUS if args.T == "continuous" else float(args.T)
    scn = with_overrides(scn, scheme=getattr(args, "scheme", None),
                         horizon=getattr(args, "horizon", None),
                         dt=getattr(args, "dt", None), message_interval=T,
                         record_stride=getattr(args, "record_stride", None))
    problems = validate(scn)
    if problems:
        for p in problems:
            print(f"invalid scenario: {p}", file=sys.stderr)
        return None
    return scn


def cmd_simulate(args) -> int:
    scn = _load(args)
    if scn is None:
        return 1
    try:
        if args.emit_scenario:
            save_scenario(scn, args.emit_scenario)
        traj, summary = run_scenario(scn)
        csv_path = args.out + ".csv"
        json_path = args.out + ".summary.json"
        write_trajectory_csv(traj, csv_path)
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(summary.to_dict(), fh, indent=2)
            fh.write("\n")
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"trajectory: {csv_path}")
    print(f"summary:    {json_path}")
    print(f"steady cost {summary.steady_cost_paper:.6g}, "
          f"t* {summary.t_star if summary.t_star is not None else 'not converged'}")
    return 0 if summary.t_star is not None else 2


def cmd_optimal(args) -> int:
    scn = _load(args)
    if scn is None:
        return 1
    p_star = scn.grid.fixed_power().copy()
    for d in scn.disturbances:
        p_star[d.node] += d.delta_p
    res = optimal_dispatch(scn.grid, p_star)
    doc = {
        "p_star": [float(v) for v in p_star],
        "u_star": [float(v) for v in res.u_star],
        "lambda": res.lam,
        "cost_paper": res.cost_paper,
        "cost_quadratic": res.cost_quadratic,
    }
    out = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out + "\n")
    else:
        print(out)
    return 0


def _stability_context(scn) -> ControlContext:
    power_edges = scn.grid.edge_set()
    failed = tuple(link for link, _ in scn.comm.failed)
    if scn.scheme == "PAIR_FLOW":
        pair = sorted((ln.i, ln.j) for ln in scn.grid.lines)[0]
        return ControlContext(scheme="PAIR_FLOW", F=frozenset(pair),
                              pair_edges=frozenset([pair]))
    if scn.scheme == "HYBRID_SINGLE" and failed and failed[0] in power_edges:
        return ControlContext(scheme="HYBRID_SINGLE", F=frozenset(failed[0]),
                              pair_edges=frozenset([failed[0]]))
    if scn.scheme == "MULTI_FAILURE":
        pairs = frozenset(l for l in failed if l in power_edges)
        return ControlContext(scheme="MULTI_FAILURE",
                              F=frozenset(i for l in pairs for i in l),
                              pair_edges=pairs)
    return ControlContext(scheme="CONSENSUS")


def cmd_stability(args) -> int:
    scn = _load(args)
    if scn is None:
        return 1
    ctx = _stability_context(scn)
    failed = {link for link, _ in scn.comm.failed}
    comm = type(scn.comm)(links=tuple(l for l in scn.comm.links if l not in failed),
                          failed=(), message_interval=scn.comm.message_interval)
    sm = assemble_state_matrix(scn.grid, comm, ctx)
    rep = spectrum(sm)

    doc = {
        "scheme": ctx.scheme,
        "state_dim": int(sm.A.shape[0]),
        "labels": list(sm.labels),
        "eigenvalues": [[float(z.real), float(z.imag)] for z in rep.eigenvalues],
        "structural_zero_count": rep.structural_zero_count,
        "spectral_abscissa_excl_zeros": rep.spectral_abscissa_excl_zeros,
        "sufficient": None,
        "identity": None,
    }

    grid = scn.grid
    M = np.diag(grid.inertia())
    D = np.diag(grid.droop())
    C = np.diag(grid.cost())
    if ctx.scheme == "PAIR_FLOW" and grid.n_nodes == 2:
        L_c = np.array([[1.0, -1.0], [-1.0, 1.0]])
        doc["sufficient"] = check_sufficient_two_node(
            M, D, C, grid.lines[0].b, L_c)
    elif ctx.scheme == "HYBRID_SINGLE":
        pair = next(iter(ctx.pair_edges))
        n = grid.n_nodes
        order = [k for k in range(n) if k not in pair] + sorted(pair)
        P = np.eye(n)[order]
        Lstar = build_Lc_star(P @ comm.laplacian(comm.links, n) @ P.T,
                              P @ C @ P.T, (n - 2, n - 1))
        doc["sufficient"] = check_sufficient_multi_node(
            P @ M @ P.T, P @ D @ P.T, P @ C @ P.T, Lstar,
            P @ grid.weighted_laplacian() @ P.T)

    if ctx.scheme in ("PAIR_FLOW", "HYBRID_SINGLE"):
        rng = np.random.default_rng(args.seed)
        pts = rng.uniform(0.5, 5.0, args.samples) * np.exp(
            1j * rng.uniform(0.0, 2.0 * np.pi, args.samples))
        idr = characteristic_identity_check(grid, comm, ctx, pts)
        doc["identity"] = {
            "max_residual": idr.max_residual,
            "sign": [idr.sign.real, idr.sign.imag],
            "consistent": idr.consistent,
            "n_samples": args.samples,
        }

    out = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out + "\n")
    else:
        print(out)
    return 0


def cmd_repro(args) -> int:
    rows = experiments.EXPERIMENTS[args.experiment]()
    fields = list(rows[0].keys())
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
        print(f"wrote {args.out}")
    for row in rows:
        print("  ".join(f"{k}={row[k]}" for k in fields))
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gridfreq",
                                 description="Distributed grid frequency control "
                                             "simulator and analysis toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=False):
        p.add_argument("scenario",
                       help="scenario JSON file, or 'toy' for the bundled grid")
        p.add_argument("--scheme", choices=["CONSENSUS", "CONSENSUS_SAMPLED",
                                            "PAIR_FLOW", "HYBRID_SINGLE",
                                            "MULTI_FAILURE", "SEQUENTIAL"])
        p.add_argument("--horizon", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--T", help="message interval in seconds, or 'continuous'")
        p.add_argument("--record-stride", dest="record_stride", type=int)

    ps = sub.add_parser("simulate", help="integrate a scenario, write CSV + JSON")
    add_common(ps)
    ps.add_argument("--out", default="trajectory",
                    help="output base path (writes <out>.csv and <out>.summary.json)")
    ps.add_argument("--emit-scenario", help="also write the normalized scenario JSON")
    ps.set_defaults(func=cmd_simulate)

    po = sub.add_parser("optimal", help="closed-form optimal dispatch for the "
                                        "post-disturbance fixed powers")
    add_common(po)
    po.add_argument("--out", help="write JSON here instead of stdout")
    po.set_defaults(func=cmd_optimal)

    pst = sub.add_parser("stability", help="state matrix spectrum, sufficient "
                                           "conditions, factorization check")
    add_common(pst)
    pst.add_argument("--out", help="write JSON here instead of stdout")
    pst.add_argument("--samples", type=int, default=10)
    pst.add_argument("--seed", type=int, default=0)
    pst.set_defaults(func=cmd_stability)

    pr = sub.add_parser("repro", help="run a bundled toy-grid experiment sweep")
    pr.add_argument("experiment", choices=sorted(experiments.EXPERIMENTS))
    pr.add_argument("--out", help="write the comparison table CSV here")
    pr.set_defaults(func=cmd_repro)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
