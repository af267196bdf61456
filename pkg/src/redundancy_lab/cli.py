"""Command-line entry point: ``redlab <command> [options]``.

Every command writes one comma-separated table (to ``--out``, to the directory
in ``$REDLAB_OUTPUT_DIR``, or to stdout) and prints a one-line summary to
stderr. When the table goes to a file, a sidecar ``<file>.manifest.json``
records the command, resolved parameters, model fingerprint, version, seeds
and wall-clock duration.

Exit status: 0 on success, 1 on a domain error (unstable model, local
stability violated, enumeration cap exceeded), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, asymptotics, fixtures, productform, simulator, stability
from .model import CompatibilityModel, ModelError, build_uniform_complete
from .stability import CapacityError

OUTPUT_DIR_ENV = "REDLAB_OUTPUT_DIR"
EXAMPLE_STATE = ((1, 2), (1, 4), (2, 3), (1, 4))


class UsageError(Exception):
    pass


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


class Output:
    """Collects one CSV table and writes it together with its manifest."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.header: list[str] = []
        self.rows: list[list] = []
        self.params: dict = {}
        self.model_sha = None
        self.seeds = None
        self.started = time.perf_counter()

    def table(self, header, rows):
        self.header = list(header)
        self.rows = [list(r) for r in rows]

    def _target(self) -> Path | None:
        if self.args.out:
            return Path(self.args.out)
        directory = os.environ.get(OUTPUT_DIR_ENV)
        if directory:
            return Path(directory) / f"{self.command}.csv"
        return None

    def write(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        target = self._target()
        if target is None:
            sys.stdout.write(buf.getvalue())
            return
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(buf.getvalue())
        manifest = {
            "command": self.command,
            "parameters": self.params,
            "model_sha256": self.model_sha,
            "version": __version__,
            "seeds": self.seeds,
            "duration_seconds": time.perf_counter() - self.started,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "output": target.name,
        }
        Path(f"{target}.manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _summary(text: str):
    print(text, file=sys.stderr)


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _load_model(args, out: Output) -> CompatibilityModel:
    model, sha = fixtures.resolve_model(args.model)
    if getattr(args, "lam", None) is not None:
        model = model.with_lambda(args.lam)
    elif args.load is not None:
        model = model.with_load(args.load)
    out.model_sha = sha
    out.params.update({"model": args.model, "lambda": model.lam, "load": model.load})
    return model


# -- commands ----------------------------------------------------------------


def cmd_stability(args, out: Output) -> int:
    model = _load_model(args, out)
    keep = None if args.all_rows else args.keep
    reports = [
        ("global", stability.check_stability_typesets(model, keep=keep)),
        ("global", stability.check_stability_serversets(model, keep=keep)),
        ("local", stability.check_local_stability(model, keep=keep, form="servers")),
        ("local", stability.check_local_stability(model, keep=keep, form="types")),
        ("local", stability.local_stability_dual_forms(model, keep=keep, form="servers")),
        ("local", stability.local_stability_dual_forms(model, keep=keep, form="types")),
    ]
    rows = []
    for kind, rep in reports:
        for r in rep.slacks:
            rows.append([kind, rep.form_used, rep.status, r.subset, r.lhs, r.rhs, r.slack])
    out.table(["check", "form", "verdict", "subset", "lhs", "rhs", "slack"], rows)
    out.params["keep"] = keep
    out.write()
    g, loc = reports[1][1], reports[2][1]
    _summary(f"global: {g.status} (worst {g.worst_subset}, slack {g.min_slack:.6g}); "
             f"local: {loc.status} (worst {loc.worst_subset}, slack {loc.min_slack:.6g})")
    if any(rep.status != "stable" for _, rep in reports):
        note = "boundary" if all(rep.status != "unstable" for _, rep in reports) else "unstable"
        _summary(f"note: at least one condition is {note}; strict inequality fails")
        return 1
    return 0


def cmd_exact(args, out: Output) -> int:
    model = _load_model(args, out)
    dist = productform.occupancy_distribution(model, args.qmax, method=args.method)
    tails = productform.tail_probabilities(dist)
    out.table(["q", "probability", "tail"], [[q, dist[q], tails[q]] for q in range(dist.size)])
    out.params.update({"qmax": args.qmax, "method": args.method})
    out.write()
    _summary(f"P{{Q=0}} = {dist[0]:.15g}; mass beyond q={args.qmax}: {1 - dist.sum():.3e}")
    return 0


def cmd_pgf(args, out: Output) -> int:
    model = _load_model(args, out)
    k = model.type_count
    points = args.z or [[0.5]]
    rows = []
    for z in points:
        if len(z) == 1:
            z = z * k
        if len(z) != k:
            raise UsageError(f"--z needs 1 or {k} values, got {len(z)}")
        ev = productform.pgf(model, np.array(z))
        rows.append(list(z) + [ev.value])
    out.table([f"z_{lab}" for lab in model.type_labels] + ["pgf"], rows)
    out.params["z"] = [list(r[:k]) for r in rows]
    out.write()
    _summary(f"{len(rows)} point(s), {productform.order_vector_count(k)} ordered type vectors")
    return 0


def cmd_constant(args, out: Output) -> int:
    model = _load_model(args, out)
    c = productform.normalization_constant(model)
    means = productform.mean_per_type(model)
    rows = [["C", "", c]]
    rows += [["mean_queue", lab, v] for lab, v in zip(model.type_labels, means)]
    rows += [["mean_replicas", str(n + 1), v]
             for n, v in enumerate(productform.mean_per_server(model))]
    out.table(["quantity", "entity", "value"], rows)
    out.write()
    _summary(f"C = P{{empty}} = {c:.15g}")
    return 0


def cmd_simulate(args, out: Output) -> int:
    model = _load_model(args, out)
    est = simulator.run(model, args.horizon, warmup=args.warmup, seed=args.seed,
                        replications=args.replications, threads=args.threads)
    rows = []

    def table(name, labels, values, hws):
        for lab, val, hw in zip(labels, values, hws):
            for q in range(len(val) - 1):
                if val[q] > 0:
                    rows.append([name, lab, q, val[q], hw[q]])
            rows.append([name, lab, f">={len(val) - 1}", val[-1], hw[-1]])

    types = model.type_labels
    servers = [str(n + 1) for n in range(model.server_count)]
    table("queue", types, est.type_distribution, est.type_distribution_hw)
    table("replicas", servers, est.server_distribution, est.server_distribution_hw)
    table("total", ["all"], [est.total_distribution], [est.total_distribution_hw])
    for lab, v, hw in zip(types, est.mean_queue, est.mean_queue_hw):
        rows.append(["mean_queue", lab, "", v, hw])
    for lab, v, hw in zip(types, est.mean_sojourn, est.mean_sojourn_hw):
        rows.append(["mean_sojourn", lab, "", v, hw])
    for lab, v, hw in zip(types, est.mean_waiting, est.mean_waiting_hw):
        rows.append(["mean_waiting", lab, "", v, hw])
    for r in simulator.littles_law_check(est):
        rows.append(["little_mean_residual", r.type_label, r.status, r.mean_residual, ""])
    out.table(["table", "entity", "k", "value", "half_width"], rows)
    meta = est.metadata()
    out.params.update({"horizon": est.horizon, "warmup": est.warmup,
                       "replications": args.replications, "threads": args.threads})
    out.seeds = {"seed": args.seed, "streams": meta["streams"],
                 "bit_generator": meta["bit_generator"]}
    out.write()
    for flag in est.flags:
        _summary(f"warning: {flag}")
    _summary(f"{meta['events']} events over {len(est.replications)} replication(s); "
             f"P{{Q=0}} = {est.total_distribution[0]:.6g}")
    return 0


def cmd_heavy(args, out: Output) -> int:
    model = _load_model(args, out)
    loads = args.loads
    if args.sojourn:
        rows = asymptotics.sojourn_limit_check(model, loads, horizon=args.horizon,
                                               replications=args.replications, seed=args.seed,
                                               threads=args.threads)
        out.table(["load", "type", "completed", "scaled_mean_sojourn", "half_width",
                   "scaled_mean_waiting", "target", "rel_error", "kolmogorov", "status"],
                  [[r.load, r.type_label, r.completed, r.scaled_mean_sojourn,
                    r.scaled_mean_sojourn_hw, r.scaled_mean_waiting, r.target, r.rel_error,
                    r.kolmogorov, r.status] for r in rows])
        out.params.update({"loads": loads, "horizon": args.horizon,
                           "replications": args.replications})
        out.seeds = {"seed": args.seed}
        out.write()
        worst = max((r.rel_error for r in rows if r.status == "ok"), default=math.nan)
        _summary(f"largest relative error of the scaled mean sojourn: {worst:.4g}")
        return 0
    t = args.t if args.t else [1.0] * model.type_count
    if len(t) == 1:
        t = t * model.type_count
    probe = asymptotics.heavy_traffic_probe(model, loads, t, threads=args.threads)
    report = asymptotics.collapse_report(model, loads, threads=args.threads)
    rows = []
    for pr, cr in zip(probe.rows(), report.rows):
        rows.append([pr["load"], pr["mgf"], pr["limit"], pr["rel_error"],
                     cr.type_max_rel_error, cr.server_max_rel_error, cr.total_scaled_mean,
                     cr.kolmogorov, cr.kolmogorov_source])
    out.table(["load", "scaled_mgf", "limit", "mgf_rel_error", "type_mean_max_rel_error",
               "server_mean_max_rel_error", "total_scaled_mean", "lattice_kolmogorov",
               "kolmogorov_source"], rows)
    out.params.update({"loads": list(loads), "t": list(t)})
    out.write()
    verdict = "strictly decreasing" if probe.strictly_decreasing else "NOT strictly decreasing"
    _summary(f"MGF error {verdict}; last {probe.errors[-1]:.4g}")
    return 0


def cmd_light(args, out: Output) -> int:
    model = _load_model(args, out)
    if args.reference:
        reference, _ = fixtures.resolve_model(args.reference)
    else:
        reference = build_uniform_complete(model.server_count)
    rows = asymptotics.light_traffic_ratio(model, reference, args.qmax, method=args.method)
    out.table(["q", "alpha_model", "alpha_reference", "ratio", "status"],
              [[r.q, r.alpha_model, r.alpha_reference, r.ratio, r.status] for r in rows])
    out.params.update({"reference": args.reference or "uniform-complete",
                       "qmax": args.qmax, "method": args.method})
    out.write()
    bad = [r.q for r in rows if "violated" in r.status]
    _summary("proved bound (q <= 2): " + ("violated at q=" + str(bad) if bad else "holds"))
    return 1 if bad else 0


def cmd_dominance(args, out: Output) -> int:
    loads = args.loads or None
    rep = asymptotics.dominance_check(loads, args.qmax, epsilons=args.eps)
    out.table(["load", "q", "tail_complete", "tail_hom_ring", "gap", "g_lambda"], rep.rows)
    out.params.update({"loads": loads, "qmax": args.qmax, "eps": list(args.eps)})
    out.write()
    if args.eps_out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["load", "q", "epsilon", "gap_to_complete"])
        for row in rep.epsilon_rows:
            w.writerow([_fmt(v) for v in row])
        Path(args.eps_out).write_text(buf.getvalue())
    _summary(f"dominance {'holds' if rep.holds else 'FAILS'}: {len(rep.violations)} violation(s), "
             f"smallest relative gap {rep.min_relative_gap:.4g}")
    return 0 if rep.holds else 1


def cmd_demo(args, out: Output) -> int:
    model = fixtures.load_fixture("fig1-ring")
    load = args.load if args.load is not None else 0.8
    model = model.with_load(load)
    out.model_sha = None
    out.params.update({"model": "fig1-ring", "load": load})
    state = [model.type_index(s) for s in EXAMPLE_STATE]
    n = model.server_count
    c = productform.normalization_constant(model)
    rows = []
    symbolic = []
    mask = 0
    cumulative = 1.0
    for pos, t in enumerate(state):
        mask |= model.masks[t]
        rate = model.mask_rate(mask)
        factor = model.total_arrival_rate * model.probs[t] / rate
        cumulative *= factor
        symbolic.append(f"({n}lam*{model.probs[t]:g})/({rate:g}mu)")
        rows.append([pos + 1, model.type_label(t), bin(mask).count("1"), rate, factor, cumulative])
    out.table(["position", "type", "busy_servers", "rate", "factor", "cumulative"], rows)
    weight = productform.stationary_weight(model, state)
    labels = ",".join(model.type_label(t) for t in state)
    print(f"state c = ({labels}) in the ring of four servers, lam/mu = {load:g}")
    print("pi(c) = C * " + " * ".join(symbolic))
    print(f"      = C * {weight:.12g},  C = {c:.12g}")
    print(f"      = {c * weight:.12g}")
    if args.out or os.environ.get(OUTPUT_DIR_ENV):
        out.write()
    return 0


# -- parser ------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, model_required: bool = True):
    p.add_argument("--model", required=model_required,
                   help="model file (JSON) or bundled fixture name, e.g. fig1-ring")
    p.add_argument("--load", type=float, help="set lambda to LOAD * mean speed")
    p.add_argument("--out", help=f"output CSV path (default: ${OUTPUT_DIR_ENV}/<command>.csv, "
                                 "else stdout)")
    p.add_argument("--threads", type=int, default=1, help="bound on internal parallelism (1)")
    p.add_argument("--seed", type=int, default=0, help="random seed (0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redlab",
        description="Exact and simulated analysis of redundancy scheduling models.",
        epilog="fixtures: " + ", ".join(fixtures.FIXTURE_NAMES),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stability", help="global and local stability slacks")
    _add_common(p)
    p.add_argument("--keep", type=int, default=10, help="tightest rows per form (10)")
    p.add_argument("--all-rows", action="store_true", help="report every subset")

    p = sub.add_parser("exact", help="exact distribution of the total number of jobs")
    _add_common(p)
    p.add_argument("--qmax", type=int, default=10, help="largest q (10)")
    p.add_argument("--method", choices=["grouped", "enumerate"], default="grouped")

    p = sub.add_parser("pgf", help="joint generating function of per-type counts")
    _add_common(p)
    p.add_argument("--z", type=_float_list, action="append",
                   help="comma-separated point, one value per type or one shared (0.5)")

    p = sub.add_parser("constant", help="normalization constant and exact means")
    _add_common(p)

    p = sub.add_parser("simulate", help="discrete-event simulation")
    _add_common(p)
    p.add_argument("--lambda", dest="lam", type=float, help="per-server arrival rate")
    p.add_argument("--horizon", type=float, default=1e5, help="simulated time (1e5)")
    p.add_argument("--warmup", type=float, help="discarded initial time (10%% of horizon)")
    p.add_argument("--replications", type=int, default=10, help="independent runs (10)")

    p = sub.add_parser("heavy", help="heavy-traffic collapse diagnostics")
    _add_common(p)
    p.add_argument("--loads", type=_float_list, default=[0.9, 0.99, 0.999],
                   help="comma-separated loads (0.9,0.99,0.999)")
    p.add_argument("--t", type=_float_list, help="MGF argument, per type or shared (1)")
    p.add_argument("--sojourn", action="store_true", help="simulate scaled sojourn times instead")
    p.add_argument("--horizon", type=float, default=1e6, help="simulated time with --sojourn")
    p.add_argument("--replications", type=int, default=4, help="runs per load with --sojourn")

    p = sub.add_parser("light", help="light-traffic coefficient ratios")
    _add_common(p)
    p.add_argument("--reference", help="reference model (default: uniform complete graph)")
    p.add_argument("--qmax", type=int, default=6, help="largest q (6)")
    p.add_argument("--method", choices=["grouped", "enumerate"], default="grouped")

    p = sub.add_parser("dominance", help="N=4 complete vs homogeneous ring tails")
    p.add_argument("--loads", type=_float_list, help="comma-separated loads (0.05,...,0.95)")
    p.add_argument("--qmax", type=int, default=50, help="largest q (50)")
    p.add_argument("--eps", type=_float_list, default=[0.5, 0.6, 0.7, 0.8, 0.9],
                   help="heterogeneity grid for the epsilon table")
    p.add_argument("--eps-out", help="write the epsilon table to this path")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--threads", type=int, default=1, help="accepted for uniformity")
    p.add_argument("--load", type=float, help="single load (same as --loads LOAD)")

    p = sub.add_parser("demo", help="worked stationary weight of the four-server ring example")
    p.add_argument("--load", type=float, help="lam/mu (0.8)")
    p.add_argument("--out", help="also write the factor table here")
    return parser


COMMANDS = {
    "stability": cmd_stability, "exact": cmd_exact, "pgf": cmd_pgf, "constant": cmd_constant,
    "simulate": cmd_simulate, "heavy": cmd_heavy, "light": cmd_light,
    "dominance": cmd_dominance, "demo": cmd_demo,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "lam", None) is not None and args.load is not None:
        parser.error("--lambda and --load are mutually exclusive")
    if args.command == "dominance" and args.load is not None:
        if args.loads:
            parser.error("--load and --loads are mutually exclusive")
        args.loads = [args.load]
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    out = Output(args, args.command)
    try:
        return COMMANDS[args.command](args, out)
    except (UsageError, fixtures.ModelFileError) as exc:
        print(f"redlab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, CapacityError, productform.UnstableModelError,
            productform.SingularFactorError, ValueError) as exc:
        print(f"redlab {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
