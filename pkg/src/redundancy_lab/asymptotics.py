"""Heavy-traffic collapse, light-traffic coefficients and the N = 4 closed forms.

Heavy traffic: with ``rho = lam/mu`` close to 1, ``(1 - rho)(Q_S)`` tends to
``p_S`` times a single unit-mean exponential, so the scaled joint MGF tends to
``1 / (1 + sum_S p_S t_S)``. Light traffic: for graph models with identical
speeds, ``P{Q = q} = P{Q = 0} alpha_q (N lam/mu)^q``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import productform, simulator
from .model import CompatibilityModel, ModelError
from .productform import UnstableModelError
from .stability import CapacityError, check_local_stability

MAX_HEAVY_LOAD = 1.0 - 1e-6
DEFAULT_LOADS = (0.9, 0.99, 0.999)
TAIL_CUTOFF = 1e-12
DEFAULT_LEVEL_BUDGET = 10**8


class LocalStabilityError(UnstableModelError):
    """Raised when the heavy-traffic hypothesis (local stability) fails."""


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _require_heavy(model: CompatibilityModel):
    report = check_local_stability(model, keep=1)
    if not report.stable:
        raise LocalStabilityError(
            f"local stability is {report.status} at server set {report.worst_subset} "
            f"(slack {report.min_slack:.3g}); the heavy-traffic limit does not apply"
        )
    if not 0.0 < model.load <= MAX_HEAVY_LOAD:
        raise ModelError(f"load {model.load!r} outside (0, {MAX_HEAVY_LOAD}]")


# -- heavy traffic ---------------------------------------------------------


def mgf_limit(model: CompatibilityModel, t: Sequence[float]) -> float:
    return 1.0 / (1.0 + float(np.dot(model.probs, t)))


def scaled_mgf(model: CompatibilityModel, t: Sequence[float]) -> float:
    """E[exp(-(1 - rho) sum_S t_S Q_S)] at the model's own load, exactly."""
    _require_heavy(model)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (model.type_count,):
        raise ModelError(f"need one t value per job type ({model.type_count})")
    if np.any(t < 0):
        raise ModelError("t values must be non-negative")
    z = np.exp(-(1.0 - model.load) * t)
    return productform.pgf(model, z).value


@dataclass
class HeavyTrafficProbe:
    loads: tuple
    t: tuple
    values: tuple
    limit: float
    errors: tuple  # relative, |value - limit| / limit

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    def rows(self) -> list[dict]:
        return [{"load": l, "mgf": v, "limit": self.limit, "rel_error": e}
                for l, v, e in zip(self.loads, self.values, self.errors)]


def heavy_traffic_probe(model: CompatibilityModel, loads: Sequence[float] = DEFAULT_LOADS,
                        t: Sequence[float] | None = None, threads: int = 1) -> HeavyTrafficProbe:
    if t is None:
        t = np.ones(model.type_count)
    loads = tuple(float(x) for x in loads)
    values = _map(lambda load: scaled_mgf(model.with_load(load), t), loads, threads)
    limit = mgf_limit(model, t)
    errors = tuple(abs(v - limit) / limit for v in values)
    return HeavyTrafficProbe(loads, tuple(float(x) for x in t), tuple(values), limit, errors)


def lattice_kolmogorov(distribution: np.ndarray, scale: float) -> tuple[float, float]:
    """Sup distance between the law of ``scale * Q`` and Exp(1).

    ``distribution`` holds P{Q = k} for k = 0..K. The scaled variable lives on
    the lattice ``scale * k``, so the supremum is attained at lattice points,
    either at the CDF value or at its left limit. Returns the distance over the
    covered range and a bound on what the uncovered tail could add.
    """
    dist = np.asarray(distribution, dtype=np.float64)
    cdf = np.cumsum(dist)
    left = np.concatenate([[0.0], cdf[:-1]])
    x = scale * np.arange(dist.size)
    g = -np.expm1(-x)
    dist_sup = float(max(np.max(np.abs(cdf - g)), np.max(np.abs(left - g))))
    tail = float(max(1.0 - cdf[-1], math.exp(-x[-1])))
    return dist_sup, tail


@dataclass
class CollapseRow:
    load: float
    type_scaled_means: tuple
    type_targets: tuple
    type_max_rel_error: float
    server_scaled_means: tuple
    server_targets: tuple
    server_max_rel_error: float
    total_scaled_mean: float
    kolmogorov: float
    kolmogorov_tail: float
    kolmogorov_source: str


@dataclass
class CollapseReport:
    model_name: str
    type_labels: tuple
    rows: list[CollapseRow] = field(default_factory=list)

    def converging(self) -> dict:
        def dec(xs):
            return all(b < a for a, b in zip(xs, xs[1:]))
        return {
            "type_means": dec([r.type_max_rel_error for r in self.rows]),
            "server_means": dec([r.server_max_rel_error for r in self.rows]),
            "kolmogorov": dec([r.kolmogorov for r in self.rows]),
        }


def _levels_needed(load: float) -> int:
    # the total is roughly geometric with ratio rho; cover a tail of TAIL_CUTOFF
    return int(math.ceil(math.log(TAIL_CUTOFF) / math.log(load))) + 1


def collapse_report(model: CompatibilityModel, loads: Sequence[float] = DEFAULT_LOADS,
                    budget: int = DEFAULT_LEVEL_BUDGET, sim_horizon: float = 1e6,
                    seed: int = 0, threads: int = 1) -> CollapseReport:
    """Scaled per-type and per-server means and the Kolmogorov distance to Exp(1).

    The distance uses the exact occupancy distribution while the grouped level
    recursion fits the budget, and a simulation run otherwise.
    """
    p = np.asarray(model.probs)
    q_share = np.asarray(model.server_shares)

    def one(load: float) -> CollapseRow:
        m = model.with_load(load)
        _require_heavy(m)
        scale = 1.0 - load
        type_means = scale * productform.mean_per_type(m)
        server_means = np.array([sum(type_means[k] for k, mask in enumerate(m.masks)
                                     if mask >> n & 1) for n in range(m.server_count)])
        q_max = _levels_needed(load)
        try:
            dist = productform.occupancy_distribution(m, q_max, budget=budget)
            source = "exact"
        except CapacityError:
            est = simulator.run(m, sim_horizon, seed=seed)
            dist = est.total_distribution[:-1]
            source = "simulation"
        ks, tail = lattice_kolmogorov(dist, scale)
        return CollapseRow(
            load=load,
            type_scaled_means=tuple(type_means.tolist()),
            type_targets=tuple(p.tolist()),
            type_max_rel_error=float(np.max(np.abs(type_means - p) / p)),
            server_scaled_means=tuple(server_means.tolist()),
            server_targets=tuple(q_share.tolist()),
            server_max_rel_error=float(np.max(np.abs(server_means - q_share) / q_share)),
            total_scaled_mean=float(type_means.sum()),
            kolmogorov=ks, kolmogorov_tail=tail, kolmogorov_source=source,
        )

    rows = _map(one, [float(x) for x in loads], threads)
    return CollapseReport(model.name, tuple(model.type_labels), rows)


@dataclass
class SojournRow:
    load: float
    type_label: str
    completed: int
    scaled_mean_sojourn: float
    scaled_mean_sojourn_hw: float
    scaled_mean_waiting: float
    target: float
    rel_error: float
    kolmogorov: float
    status: str


def sojourn_limit_check(model: CompatibilityModel, loads: Sequence[float] = (0.8, 0.9, 0.99),
                        horizon: float = 1e6, replications: int = 4, seed: int = 0,
                        warmup: float | None = None, threads: int = 1,
                        min_jobs: int = simulator.MIN_JOBS_FOR_CHECK) -> list[SojournRow]:
    """Scaled sojourn and waiting times against the Exp(N mu) limit, by simulation.

    The Kolmogorov distance compares the recorded (subsampled) scaled sojourn
    times of each type with the Exp(N mu) CDF.
    """
    target = 1.0 / model.total_speed
    rows = []
    for load in loads:
        m = model.with_load(float(load))
        _require_heavy(m)
        est = simulator.run(m, horizon, warmup=warmup, seed=seed, replications=replications,
                            threads=threads)
        scale = 1.0 - load
        v = est.mean_sojourn
        vhw = est.mean_sojourn_hw
        w = est.mean_waiting
        for k in range(m.type_count):
            n = int(est.completed[k])
            label = m.type_label(k)
            if n < min_jobs:
                rows.append(SojournRow(load, label, n, math.nan, math.nan, math.nan, target,
                                       math.nan, math.nan, "insufficient data"))
                continue
            samples = scale * est.sojourn_samples(k)
            ks = float(stats.kstest(samples, "expon", args=(0.0, target)).statistic)
            sv = scale * float(v[k])
            rows.append(SojournRow(load, label, n, sv, scale * float(vhw[k]), scale * float(w[k]),
                                   target, abs(sv - target) / target, ks, "ok"))
    return rows


# -- light traffic -----------------------------------------------------------


def _require_graph(model: CompatibilityModel):
    if not model.is_graph_model:
        raise ModelError("light-traffic coefficients need a graph model (every type has two servers)")
    if not model.has_identical_speeds:
        raise ModelError("light-traffic coefficients need identical server speeds")


def alpha_levels(model: CompatibilityModel, q_max: int, method: str = "grouped",
                 budget: int = DEFAULT_LEVEL_BUDGET) -> np.ndarray:
    """alpha_q = sum over S^q of prod_i p_{c_i} / |c_1 u ... u c_i|, q = 0..q_max.

    ``method="grouped"`` sums states sharing a server union together;
    ``method="enumerate"`` visits every state individually.
    """
    _require_graph(model)

    def factor(p, mask):
        return p / mask.bit_count()

    if method == "grouped":
        return productform._level_sums(model, q_max, factor, budget)
    if method == "enumerate":
        return productform._level_sums_enumerated(model, q_max, factor, budget)
    raise ValueError(f"unknown method {method!r}")


def alpha(model: CompatibilityModel, q: int, **kwargs) -> float:
    if q < 0:
        raise ValueError("q must be non-negative")
    return float(alpha_levels(model, q, **kwargs)[q])


def is_uniform_complete(model: CompatibilityModel) -> bool:
    n = model.server_count
    pairs = {(1 << i) | (1 << j) for i in range(n) for j in range(i + 1, n)}
    if set(model.masks) != pairs or len(model.masks) != len(pairs):
        return False
    return max(model.probs) - min(model.probs) <= 1e-12


@dataclass
class LightTrafficRow:
    q: int
    alpha_model: float
    alpha_reference: float
    ratio: float
    status: str


def light_traffic_ratio(model: CompatibilityModel, reference: CompatibilityModel, q_max: int,
                        method: str = "grouped",
                        budget: int = DEFAULT_LEVEL_BUDGET) -> list[LightTrafficRow]:
    """alpha_q(reference) / alpha_q(model) for q = 1..q_max.

    With the uniform complete graph as reference this is the light-traffic
    ratio of tail probabilities, proved to be at most 1 for q = 1, 2 and
    only conjectured beyond.
    """
    if model.server_count != reference.server_count:
        raise ModelError("both models need the same number of servers")
    a = alpha_levels(model, q_max, method=method, budget=budget)
    b = alpha_levels(reference, q_max, method=method, budget=budget)
    complete_ref = is_uniform_complete(reference)
    rows = []
    for q in range(1, q_max + 1):
        ratio = float(b[q] / a[q])
        if not complete_ref:
            status = "reported"
        elif q <= 2:
            status = "bound holds" if ratio <= 1.0 + 1e-12 else "bound violated"
        else:
            status = "conjecture holds" if ratio <= 1.0 + 1e-12 else "conjecture fails"
        rows.append(LightTrafficRow(q, float(a[q]), float(b[q]), ratio, status))
    return rows


# -- N = 4 closed forms -------------------------------------------------------


def _check_load(load: float):
    if not 0.0 < load < 1.0:
        raise ModelError(f"load must lie in (0, 1), got {load!r}")


def _power_sum(x: float, y: float, n: np.ndarray) -> np.ndarray:
    """S_n = sum_{k < n} y^k x^(n-1-k), equal to (y^n - x^n)/(y - x) off the diagonal."""
    n = np.asarray(n)
    if abs(y - x) > 1e-3 * max(abs(x), abs(y)):
        return (y**n - x**n) / (y - x)
    out = np.zeros(n.shape, dtype=np.float64)
    flat = out.reshape(-1)
    for i, m in enumerate(n.reshape(-1)):
        k = np.arange(m)
        flat[i] = math.fsum((y**k * x ** (m - 1 - k)).tolist())
    return out


def _ring_terms(load: float, epsilon: float):
    """Prefactor and coefficients of the N = 4 ring closed form, mapped to eps <= 1/2.

    The ring with 1 - eps is the ring with eps after relabelling servers, and
    the formula is invariant under that swap, so only eps <= 1/2 is evaluated.
    There the coefficient poles at eps = 1/3 cancel between the (2 rho/3)^q and
    ((1 - eps) rho)^q terms; the combination is rewritten without the pole.
    """
    if not 0.0 < epsilon < 1.0:
        raise ModelError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    e = min(epsilon, 1.0 - epsilon)
    r = load
    pref = ((1 - r) * (1 - (1 - e) * r) * (1 - e * r) * (3 - 2 * r)
            / (3 - 2 * r + (1 - e) * e * r * r))
    x, y, w = 2 * r / 3, (1 - e) * r, e * r
    coef_x = (1 - e) * (e + 2) / (e * (3 * e - 2))
    coef_diff = -((1 - e) ** 2 / e) * (r / 3)
    coef_w = e * e / ((1 - e) * (2 - 3 * e))
    coef_r = (1 + e - e * e) / (e * (1 - e))
    return pref, x, y, w, coef_x, coef_diff, coef_w, coef_r


def _complete_terms(load: float):
    r = load
    pref = (1 - r) * (3 - r) * (3 - 2 * r) / 9
    return pref, ((-4.0, 2 * r / 3), (0.5, r / 3), (4.5, r))


def closed_form_n4(family: str, load: float, epsilon: float = 0.5, q=0):
    """P{Q = q} for N = 4 with the uniform complete graph or the (heterogeneous) ring."""
    _check_load(load)
    qa = np.asarray(q)
    if np.any(qa < 0):
        raise ValueError("q must be non-negative")
    if family == "complete":
        pref, terms = _complete_terms(load)
        out = pref * sum(c * b**qa for c, b in terms)
    elif family == "ring":
        pref, x, y, w, cx, cd, cw, cr = _ring_terms(load, epsilon)
        out = pref * (cx * x**qa + cd * _power_sum(x, y, qa) + cw * w**qa + cr * load**qa)
    else:
        raise ModelError(f"unknown family {family!r} (expected 'complete' or 'ring')")
    return float(out) if np.ndim(out) == 0 else out


def closed_form_tail_n4(family: str, load: float, epsilon: float = 0.5, q=0):
    """P{Q >= q} by summing each geometric term of the closed form analytically."""
    _check_load(load)
    qa = np.asarray(q)
    if np.any(qa < 0):
        raise ValueError("q must be non-negative")
    if family == "complete":
        pref, terms = _complete_terms(load)
        out = pref * sum(c * b**qa / (1 - b) for c, b in terms)
    elif family == "ring":
        pref, x, y, w, cx, cd, cw, cr = _ring_terms(load, epsilon)
        # sum_{k >= q} S_k = (S_q - x y S_{q-1}) / ((1 - x)(1 - y)), with S_0 = 0
        prev = _power_sum(x, y, np.maximum(qa - 1, 0))
        diff_tail = np.where(qa == 0, 1.0,
                             _power_sum(x, y, qa) - x * y * prev) / ((1 - x) * (1 - y))
        out = pref * (cx * x**qa / (1 - x) + cd * diff_tail + cw * w**qa / (1 - w)
                      + cr * load**qa / (1 - load))
    else:
        raise ModelError(f"unknown family {family!r} (expected 'complete' or 'ring')")
    out = np.where(qa == 0, 1.0, out)
    return float(out) if np.ndim(out) == 0 else out


def g_lambda(load: float, q):
    """Scaled gap between the homogeneous ring and complete tails; positive for q >= 1."""
    r = load
    c = (1 - r) * (3 - 2 * r)
    q = np.asarray(q, dtype=np.float64)
    return (4.5 * (1 - r) * (2 + r) * (3 - 2 * r) + 36 * c * 0.5**q
            - 1.5 * c * (6 - r) * (1 / 3) ** q - 6 * c * (6 + r) * (2 / 3) ** q)


def complete_tail_reference(load: float, q):
    """P{Q* >= q} for the N = 4 uniform complete graph, in factored tail form."""
    r = load
    q = np.asarray(q, dtype=np.float64)
    return (-4 / 3 * (1 - r) * (3 - r) * (2 * r / 3) ** q
            + (1 - r) * (3 - 2 * r) / 6 * (r / 3) ** q
            + 0.5 * (3 - r) * (3 - 2 * r) * r**q)


def hom_ring_tail_reference(load: float, q):
    """P{Q^hom >= q} for the N = 4 homogeneous ring, in factored tail form."""
    r = load
    q = np.asarray(q, dtype=np.float64)
    return (-18 * (1 - r) * (2 - r) / (6 - r) * (2 * r / 3) ** q
            + 4 * (1 - r) * (3 - 2 * r) / (6 - r) * (r / 2) ** q
            + 5 * (3 - 2 * r) * (2 - r) / (6 - r) * r**q)


@dataclass
class DominanceReport:
    holds: bool
    violations: list  # (load, q, tail_complete, tail_ring)
    min_relative_gap: float
    rows: list  # (load, q, tail_complete, tail_hom, gap, g_lambda)
    epsilon_rows: list  # (load, q, epsilon, gap to complete)
    epsilon_monotone: dict  # (load, q) -> gap grows as |eps - 1/2| grows


def dominance_check(loads: Sequence[float] | None = None, q_max: int = 50,
                    epsilons: Sequence[float] = (0.5, 0.6, 0.7, 0.8, 0.9),
                    eps_q: Sequence[int] = (1, 2, 5, 10)) -> DominanceReport:
    """Check P{Q*_4 >= q} <= P{Q^hom_4 >= q} on a grid, plus heterogeneity data.

    The heterogeneity table lists P{Q^het >= q} - P{Q* >= q} across epsilon; it
    is recorded as data, not checked.
    """
    if loads is None:
        loads = [round(0.05 * k, 2) for k in range(1, 20)]
    qs = np.arange(q_max + 1)
    violations = []
    rows = []
    min_gap = math.inf
    for load in loads:
        tc = closed_form_tail_n4("complete", load, q=qs)
        th = closed_form_tail_n4("ring", load, 0.5, q=qs)
        g = g_lambda(load, qs)
        for q in range(q_max + 1):
            gap = th[q] - tc[q]
            rows.append((float(load), q, float(tc[q]), float(th[q]), float(gap), float(g[q])))
            if tc[q] > th[q]:
                violations.append((float(load), q, float(tc[q]), float(th[q])))
            if q >= 1:
                min_gap = min(min_gap, gap / th[q])
    eps_rows = []
    monotone = {}
    for load in loads:
        for q in eps_q:
            tc = closed_form_tail_n4("complete", load, q=q)
            gaps = [closed_form_tail_n4("ring", load, e, q=q) - tc for e in epsilons]
            for e, gap in zip(epsilons, gaps):
                eps_rows.append((float(load), int(q), float(e), float(gap)))
            order = np.argsort([abs(e - 0.5) for e in epsilons])
            ordered = [gaps[i] for i in order]
            monotone[(float(load), int(q))] = all(b >= a for a, b in zip(ordered, ordered[1:]))
    return DominanceReport(not violations, violations, float(min_gap), rows, eps_rows, monotone)
