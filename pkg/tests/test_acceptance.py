"""Acceptance criteria 1-12, one check each.

Every check returns ``(passed, detail)``. Under pytest the outcome is also
collected into a summary printed at the end of the run; run this file directly
(``python3 tests/test_acceptance.py``) to print the same lines without pytest.
Tolerances are the ones the criteria state; nothing here is tuned to pass.
"""

import csv
import io
import itertools
import math
import sys
import tempfile
import time
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from golden import LIGHT_RATIOS, OCCUPANCY_TAILS
from redundancy_lab import asymptotics as A
from redundancy_lab import cli, fixtures
from redundancy_lab import model as M
from redundancy_lab import productform as P
from redundancy_lab import simulator as sim
from redundancy_lab import stability as S

TITLES = {
    1: "normalization",
    2: "occupancy tails (exact)",
    3: "light-traffic ratios (light)",
    4: "N=4 closed forms vs product form",
    5: "stochastic dominance",
    6: "heavy-traffic collapse",
    7: "per-server scaled means",
    8: "product form vs simulation",
    9: "scaled sojourn times",
    10: "Little's law",
    11: "stability equivalence",
    12: "reproducibility",
}


def _cli(argv):
    """Run the CLI in-process, returning (exit status, stderr text)."""
    err = io.StringIO()
    with redirect_stderr(err), redirect_stdout(io.StringIO()):
        code = cli.main([str(a) for a in argv])
    return code, err.getvalue()


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- checks --------------------------------------------------------------------


def criterion_1():
    rng = np.random.default_rng(20240601)
    models = [M.random_model(rng, max_servers=6, max_types=6) for _ in range(50)]
    start = time.perf_counter()
    worst = max(abs(P.pgf(m, np.ones(m.type_count)).value - 1.0) for m in models)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 10
    return ok, f"max |pgf(1) - 1| = {worst:.2e} over 50 models (<= 1e-10), {elapsed:.2f} s (< 10 s)"


def criterion_2(workdir):
    start = time.perf_counter()
    worst = 0.0
    for name, expected in OCCUPANCY_TAILS.items():
        out = Path(workdir) / f"exact-{name}.csv"
        code, err = _cli(["exact", "--model", name, "--load", 0.8, "--qmax", 10, "--out", out])
        if code != 0:
            return False, f"exact {name} exited {code}: {err.strip()}"
        tails = [float(r["tail"]) for r in _read(out)]
        worst = max(worst, max(abs(a - b) for a, b in zip(tails, expected)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 5
    return ok, f"max deviation {worst:.2e} over 4 fixtures, q = 0..10 (<= 1e-9), {elapsed:.2f} s (< 5 s)"


def criterion_3(workdir):
    worst = 0.0
    n12_time = 0.0
    for (n, eps), expected in LIGHT_RATIOS.items():
        model = M.build_ring(n, 0.5 if eps == "hom" else eps)
        path = Path(workdir) / f"ring-{n}-{eps}.json"
        fixtures.save_model(model, path)
        out = Path(workdir) / f"light-{n}-{eps}.csv"
        start = time.perf_counter()
        code, err = _cli(["light", "--model", path, "--qmax", 6, "--out", out])
        if n == 12:
            n12_time += time.perf_counter() - start
        if code != 0:
            return False, f"light on N={n} ring {eps} exited {code}: {err.strip()}"
        for row in _read(out):
            worst = max(worst, abs(float(row["ratio"]) - expected[int(row["q"])]))
    ok = worst <= 1e-9 and n12_time < 60
    return ok, (f"max deviation {worst:.2e} over N=4 and N=12, q <= 6 (<= 1e-9); "
                f"N=12 runs {n12_time:.2f} s (< 60 s)")


def criterion_4():
    q = np.arange(13)
    worst = 0.0
    cases = [("complete", 0.5)] + [("ring", e) for e in (0.5, 0.7, 0.9)]
    for (family, eps), load in itertools.product(cases, (0.2, 0.5, 0.8)):
        base = M.build_uniform_complete(4) if family == "complete" else M.build_ring(4, eps)
        exact = P.occupancy_distribution(base.with_load(load), 12)
        worst = max(worst, np.max(np.abs(A.closed_form_n4(family, load, eps, q=q) - exact)))
    return worst <= 1e-10, f"max |closed form - product form| = {worst:.2e}, 12 cases, q <= 12 (<= 1e-10)"


def criterion_5():
    rep = A.dominance_check(loads=[round(0.05 * k, 2) for k in range(1, 20)], q_max=50)
    return rep.holds, (f"{len(rep.violations)} violations over 19 loads x q = 0..50; "
                       f"smallest relative gap for q >= 1: {rep.min_relative_gap:.3e}")


def _collapse(name):
    model = fixtures.load_fixture(name)
    probe = A.heavy_traffic_probe(model, (0.9, 0.99, 0.999))
    report = A.collapse_report(model, (0.9, 0.99, 0.999))
    return probe, report.rows[-1]


def criterion_6():
    ok = True
    parts = []
    for name in ("fig1-ring", "tree-example"):
        probe, last = _collapse(name)
        good = (probe.strictly_decreasing and probe.errors[-1] < 0.01
                and last.type_max_rel_error <= 0.02)
        ok &= good
        errs = ", ".join(f"{e:.3g}" for e in probe.errors)
        parts.append(f"{name} {'ok' if good else 'FAILS'}: MGF errors {errs} "
                     f"(decreasing: {probe.strictly_decreasing}; last < 0.01), "
                     f"type means {last.type_max_rel_error:.3g} (<= 0.02)")
    return ok, "; ".join(parts)


def criterion_7():
    ok = True
    parts = []
    for name in ("fig1-ring", "tree-example"):
        _, last = _collapse(name)
        good = last.server_max_rel_error <= 0.02
        ok &= good
        parts.append(f"{name} {last.server_max_rel_error:.3g}{'' if good else ' FAILS'}")
    return ok, "max relative error of scaled per-server means at 0.999 (<= 0.02): " + ", ".join(parts)


def criterion_8():
    model = fixtures.load_fixture("fig1-ring").with_load(0.7)
    c = P.normalization_constant(model)
    depth = 0
    states = []
    while True:
        level = [s for s in itertools.product(range(model.type_count), repeat=depth)
                 if c * P.stationary_weight(model, s) >= 1e-3]
        if not level:
            break
        states += level
        depth += 1
    start = time.perf_counter()
    est = sim.run(model, 1e5, seed=8, replications=20, state_depth=depth - 1)
    elapsed = time.perf_counter() - start
    exceed = 0
    worst = 0.0
    for s in states:
        samples = est.state_probability_samples(s)
        sigma = samples.std(ddof=1) / math.sqrt(samples.size)
        z = abs(samples.mean() - c * P.stationary_weight(model, s)) / sigma
        worst = max(worst, z)
        exceed += z > 3
    frac = exceed / len(states)
    ok = frac <= 0.05 and elapsed < 120
    return ok, (f"{exceed}/{len(states)} states beyond 3 sigma ({frac:.1%}, <= 5%), "
                f"largest |z| {worst:.2f}; simulation {elapsed:.1f} s (< 120 s)")


def criterion_9():
    base = fixtures.load_fixture("fig1-ring")
    short = A.sojourn_limit_check(base, loads=(0.8, 0.9), horizon=1e6, replications=2, seed=9)
    long = A.sojourn_limit_check(base, loads=(0.99,), horizon=1e8, replications=10, seed=9)
    rows = short + long
    ok = all(r.status == "ok" for r in rows)
    worst = max(r.rel_error for r in long)
    ok &= worst <= 0.05
    parts = []
    for label in base.type_labels:
        ks = [r.kolmogorov for r in rows if r.type_label == label]
        decreasing = all(b < a for a, b in zip(ks, ks[1:]))
        ok &= decreasing
        parts.append(f"{label} " + ">".join(f"{k:.3f}" for k in ks)
                     + ("" if decreasing else " (not decreasing)"))
    means = ", ".join(f"{r.type_label} {r.rel_error:.4f}" for r in long)
    return ok, (f"relative error of (1-rho)E[V_S] at 0.99 (<= 0.05): {means}; "
                f"Kolmogorov 0.8>0.9>0.99: " + "; ".join(parts))


def criterion_10():
    worst_mean = worst_dist = 0.0
    problems = []
    for name in fixtures.FIXTURE_NAMES:
        est = sim.run(fixtures.load_fixture(name), 1e7, seed=10)
        for row in sim.littles_law_check(est):
            if row.status != "ok":
                problems.append(f"{name} {row.type_label}: {row.status}")
                continue
            worst_mean = max(worst_mean, row.mean_residual)
            worst_dist = max(worst_dist, max(row.distribution_residuals))
    ok = not problems and worst_mean < 0.01 and worst_dist < 0.02
    detail = (f"{len(fixtures.FIXTURE_NAMES)} fixtures at horizon 1e7: mean residual "
              f"{worst_mean:.2e} (< 1e-2), distributional {worst_dist:.2e} (< 2e-2)")
    return ok, detail + ("; " + "; ".join(problems) if problems else "")


def _random_stability_model(rng):
    m = M.random_model(rng, load=float(rng.uniform(0.2, 1.3)), ensure_stable=False)
    if rng.random() < 0.2:
        cap = S.max_stable_load(m)
        if cap > 0:
            return m.with_load(cap)
    return m


def criterion_11():
    rng = np.random.default_rng(11)
    global_bad = local_bad = 0
    verdicts = set()
    for _ in range(200):
        m = _random_stability_model(rng)
        a = S.check_stability_typesets(m).status
        b = S.check_stability_serversets(m).status
        global_bad += a != b
        verdicts.add(a)
        local = {S.check_local_stability(m, form="servers").status,
                 S.check_local_stability(m, form="types").status,
                 S.local_stability_dual_forms(m, form="servers").status,
                 S.local_stability_dual_forms(m, form="types").status}
        local_bad += len(local) != 1
    fixtures_bad = []
    for builder, eps in itertools.product((M.build_tree_model, M.build_singleton_fullset),
                                          (0.01, 0.1, 0.5, 0.0)):
        m = builder(4, eps)
        want = "boundary" if eps == 0 else "stable"
        got = S.check_local_stability(m).status
        if got != want:
            fixtures_bad.append(f"{builder.__name__}({eps}) -> {got}")
    ok = global_bad == 0 and local_bad == 0 and not fixtures_bad
    return ok, (f"200 models (verdicts seen: {', '.join(sorted(verdicts))}): "
                f"{global_bad} global and {local_bad} local disagreements; "
                f"tree and singleton-fullset examples {'as expected' if not fixtures_bad else fixtures_bad}")


def criterion_12(workdir):
    commands = [
        ["simulate", "--model", "fig1-ring", "--load", 0.7, "--horizon", 2e4,
         "--replications", 4, "--seed", 123],
        ["heavy", "--model", "fig1-ring", "--sojourn", "--loads", "0.8", "--horizon", 2e4,
         "--replications", 2, "--seed", 5],
        ["exact", "--model", "het-ring-4-e07", "--qmax", 30],
        ["light", "--model", "hom-ring-4"],
    ]
    mismatched = []
    for k, argv in enumerate(commands):
        outputs = []
        for rep in range(2):
            out = Path(workdir) / f"repro-{k}-{rep}.csv"
            code, err = _cli(argv + ["--out", out])
            if code != 0:
                return False, f"{argv[0]} exited {code}: {err.strip()}"
            outputs.append(out.read_bytes())
        if outputs[0] != outputs[1]:
            mismatched.append(argv[0])
    return not mismatched, (f"{len(commands)} commands run twice: "
                            + ("byte-identical" if not mismatched else f"differ: {mismatched}"))


CHECKS = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
    11: criterion_11, 12: criterion_12,
}
NEEDS_WORKDIR = {2, 3, 12}


def evaluate(number, workdir):
    fn = CHECKS[number]
    ok, detail = fn(workdir) if number in NEEDS_WORKDIR else fn()
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {TITLES[number]}: {detail}"
    return ok, line


# -- pytest entry points ---------------------------------------------------------


def _run(number, tmp_path, acceptance_log):
    ok, line = evaluate(number, tmp_path)
    acceptance_log[number] = line
    assert ok, line


def test_criterion_01_normalization(tmp_path, acceptance_log):
    _run(1, tmp_path, acceptance_log)


def test_criterion_02_occupancy_tails(tmp_path, acceptance_log):
    _run(2, tmp_path, acceptance_log)


def test_criterion_03_light_traffic_ratios(tmp_path, acceptance_log):
    _run(3, tmp_path, acceptance_log)


def test_criterion_04_closed_forms(tmp_path, acceptance_log):
    _run(4, tmp_path, acceptance_log)


def test_criterion_05_dominance(tmp_path, acceptance_log):
    _run(5, tmp_path, acceptance_log)


def test_criterion_06_heavy_traffic_collapse(tmp_path, acceptance_log):
    _run(6, tmp_path, acceptance_log)


def test_criterion_07_server_means(tmp_path, acceptance_log):
    _run(7, tmp_path, acceptance_log)


def test_criterion_08_simulation_vs_product_form(tmp_path, acceptance_log):
    _run(8, tmp_path, acceptance_log)


@pytest.mark.slow
def test_criterion_09_scaled_sojourn(tmp_path, acceptance_log):
    _run(9, tmp_path, acceptance_log)


@pytest.mark.slow
def test_criterion_10_littles_law(tmp_path, acceptance_log):
    _run(10, tmp_path, acceptance_log)


def test_criterion_11_stability_equivalence(tmp_path, acceptance_log):
    _run(11, tmp_path, acceptance_log)


def test_criterion_12_reproducibility(tmp_path, acceptance_log):
    _run(12, tmp_path, acceptance_log)


if __name__ == "__main__":
    wanted = [int(a) for a in sys.argv[1:]] or sorted(CHECKS)
    failed = 0
    with tempfile.TemporaryDirectory() as tmp:
        for number in wanted:
            ok, line = evaluate(number, tmp)
            failed += not ok
            print(line, flush=True)
    sys.exit(1 if failed else 0)
