"""Continuous-time simulation of the central queue with cancel-on-completion.

Each server works on the oldest job in the central queue whose type contains
it; a job leaves as soon as any of its replicas finishes, which with
exponential run times means at the summed speed of the servers working on it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import _kernel
from .model import CompatibilityModel, validate_state
from .stability import check_stability_typesets

DEFAULT_Z_POINTS = (0.25, 0.5, 0.75)
MIN_JOBS_FOR_CHECK = 1000


def server_assignment(model: CompatibilityModel, state: Sequence[int]) -> list[int | None]:
    """0-based position of the job each server works on, or None when idle."""
    state = validate_state(model, state)
    out: list[int | None] = [None] * model.server_count
    for n in range(model.server_count):
        for pos, t in enumerate(state):
            if model.masks[t] >> n & 1:
                out[n] = pos
                break
    return out


def transition_rates(model: CompatibilityModel, state: Sequence[int]):
    """Arrival rate per type (append) and departure rate per queue position (remove)."""
    state = validate_state(model, state)
    departures = [0.0] * len(state)
    for n, pos in enumerate(server_assignment(model, state)):
        if pos is not None:
            departures[pos] += model.speeds[n]
    return list(model.arrival_rates), departures


@dataclass
class ReplicationResult:
    seed_entropy: int
    spawn_key: tuple
    events: int
    observed_time: float
    max_queue: int
    type_dist: np.ndarray
    server_dist: np.ndarray
    total_dist: np.ndarray
    type_mean: np.ndarray
    state_prob: np.ndarray
    completed: np.ndarray
    sum_v: np.ndarray
    sum_v2: np.ndarray
    sum_w: np.ndarray
    sum_w2: np.ndarray
    laplace_sum: np.ndarray
    records: np.ndarray  # columns: type, arrival, start, completion


def _half_width(samples: np.ndarray, axis: int = 0) -> np.ndarray:
    r = samples.shape[axis]
    if r < 2:
        return np.full(np.delete(samples.shape, axis), np.inf)
    sd = samples.std(axis=axis, ddof=1)
    return stats.t.ppf(0.975, r - 1) * sd / math.sqrt(r)


@dataclass
class SimulationEstimate:
    model: CompatibilityModel
    horizon: float
    warmup: float
    seed: int
    z_points: tuple
    state_depth: int
    replications: list[ReplicationResult]
    flags: list[str] = field(default_factory=list)

    # -- pooled distributions ------------------------------------------

    def _stack(self, name: str) -> np.ndarray:
        return np.stack([getattr(r, name) for r in self.replications])

    @property
    def type_distribution(self) -> np.ndarray:
        return self._stack("type_dist").mean(axis=0)

    @property
    def type_distribution_hw(self) -> np.ndarray:
        return _half_width(self._stack("type_dist"))

    @property
    def server_distribution(self) -> np.ndarray:
        return self._stack("server_dist").mean(axis=0)

    @property
    def server_distribution_hw(self) -> np.ndarray:
        return _half_width(self._stack("server_dist"))

    @property
    def total_distribution(self) -> np.ndarray:
        return self._stack("total_dist").mean(axis=0)

    @property
    def total_distribution_hw(self) -> np.ndarray:
        return _half_width(self._stack("total_dist"))

    @property
    def mean_queue(self) -> np.ndarray:
        """Time-average E[Q_S] per type."""
        return self._stack("type_mean").mean(axis=0)

    @property
    def mean_queue_hw(self) -> np.ndarray:
        return _half_width(self._stack("type_mean"))

    @property
    def mean_replicas(self) -> np.ndarray:
        q = self.mean_queue
        return np.array([sum(q[k] for k, m in enumerate(self.model.masks) if m >> n & 1)
                         for n in range(self.model.server_count)])

    def queue_pgf(self, z: float) -> np.ndarray:
        """Empirical E[z^{Q_S}] per type."""
        dist = self.type_distribution
        return dist @ (z ** np.arange(dist.shape[1]))

    @property
    def total_time(self) -> float:
        return sum(r.observed_time for r in self.replications)

    @property
    def events(self) -> int:
        return sum(r.events for r in self.replications)

    # -- job statistics ---------------------------------------------------

    @property
    def completed(self) -> np.ndarray:
        return self._stack("completed").sum(axis=0)

    def _ratio(self, name: str) -> np.ndarray:
        total = self._stack(name).sum(axis=0)
        n = self.completed
        with np.errstate(invalid="ignore", divide="ignore"):
            return total / n

    @property
    def mean_sojourn(self) -> np.ndarray:
        return self._ratio("sum_v")

    @property
    def mean_waiting(self) -> np.ndarray:
        return self._ratio("sum_w")

    def _per_rep_ratio(self, name: str) -> np.ndarray:
        num = self._stack(name)
        den = self._stack("completed")
        with np.errstate(invalid="ignore", divide="ignore"):
            return num / den

    @property
    def mean_sojourn_hw(self) -> np.ndarray:
        return _half_width(self._per_rep_ratio("sum_v"))

    @property
    def mean_waiting_hw(self) -> np.ndarray:
        return _half_width(self._per_rep_ratio("sum_w"))

    @property
    def sojourn_laplace(self) -> np.ndarray:
        """Empirical E[exp(-lam_S (1 - z) V_S)] per type (rows) and z point (columns)."""
        total = self._stack("laplace_sum").sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return total / self.completed[:, None]

    @property
    def records(self) -> np.ndarray:
        recs = [r.records for r in self.replications]
        return np.concatenate(recs) if recs else np.zeros((0, 4))

    def sojourn_samples(self, type_index: int) -> np.ndarray:
        r = self.records
        sel = r[:, 0] == type_index
        return r[sel, 3] - r[sel, 1]

    def waiting_samples(self, type_index: int) -> np.ndarray:
        r = self.records
        sel = r[:, 0] == type_index
        return r[sel, 2] - r[sel, 1]

    def sojourn_quantiles(self, qs=(0.5, 0.9, 0.99)) -> np.ndarray:
        return np.array([np.quantile(self.sojourn_samples(k), qs) if
                         self.sojourn_samples(k).size else np.full(len(qs), np.nan)
                         for k in range(self.model.type_count)])

    # -- state probabilities ----------------------------------------------

    def state_probability(self, state: Sequence[int]) -> tuple[float, float]:
        """Time-average probability of an exact central-queue state and its half-width."""
        state = tuple(state)
        if len(state) > self.state_depth:
            raise ValueError(f"states longer than {self.state_depth} were not tracked")
        idx = _state_offsets(self.model.type_count, self.state_depth)[len(state)]
        base = 1
        for t in state:
            idx += t * base
            base *= self.model.type_count
        samples = np.array([r.state_prob[idx] for r in self.replications])
        return float(samples.mean()), float(_half_width(samples[:, None])[0])

    def state_probability_samples(self, state: Sequence[int]) -> np.ndarray:
        idx = _state_offsets(self.model.type_count, self.state_depth)[len(state)]
        base = 1
        for t in state:
            idx += t * base
            base *= self.model.type_count
        return np.array([r.state_prob[idx] for r in self.replications])

    def metadata(self) -> dict:
        return {
            "model": self.model.name,
            "lambda": self.model.lam,
            "load": self.model.load,
            "horizon": self.horizon,
            "warmup": self.warmup,
            "seed": self.seed,
            "replications": len(self.replications),
            "streams": [list(r.spawn_key) for r in self.replications],
            "bit_generator": "PCG64",
            "events": self.events,
            "observed_time": self.total_time,
            "max_queue": max(r.max_queue for r in self.replications),
            "flags": list(self.flags),
        }


def _state_offsets(n_types: int, depth: int) -> np.ndarray:
    offsets = np.zeros(depth + 2, dtype=np.int64)
    for length in range(depth + 1):
        offsets[length + 1] = offsets[length] + n_types**length
    return offsets


def default_hist_cap(model: CompatibilityModel) -> int:
    load = model.load
    if load >= 1.0:
        return 1 << 16
    return int(min(max(256, 60.0 / (1.0 - load) + 64), 1 << 16))


def _run_one(model, horizon, warmup, seq, hist_cap, state_depth, z_points, record_cap):
    k = model.type_count
    masks = np.array(model.masks, dtype=np.int64)
    speeds = np.array(model.speeds, dtype=np.float64)
    cum = np.cumsum(np.array(model.probs))
    cum[-1] = 1.0
    rates = np.array(model.arrival_rates)
    lap = np.outer(rates, 1.0 - np.asarray(z_points, dtype=np.float64)).reshape(k, len(z_points))
    offsets = _state_offsets(k, state_depth)
    expected_jobs = model.total_arrival_rate * (horizon - warmup)
    stride = max(1, int(expected_jobs // record_cap) + 1) if record_cap > 0 else 1
    rng = np.random.Generator(np.random.PCG64(seq))
    out = _kernel.simulate(masks, speeds, cum, model.total_arrival_rate, float(horizon),
                           float(warmup), rng, int(hist_cap), int(state_depth), offsets, lap,
                           int(stride), int(max(record_cap, 0)))
    (type_hist, server_hist, total_hist, type_area, state_time, done, sv, sv2, sw, sw2, lapv,
     rt, ra, rs, rd, events, observed, max_len) = out
    records = np.column_stack([rt.astype(np.float64), ra, rs, rd])
    return ReplicationResult(
        seed_entropy=int(seq.entropy), spawn_key=tuple(seq.spawn_key), events=int(events),
        observed_time=float(observed), max_queue=int(max_len),
        type_dist=type_hist / observed, server_dist=server_hist / observed,
        total_dist=total_hist / observed, type_mean=type_area / observed,
        state_prob=state_time / observed, completed=done, sum_v=sv, sum_v2=sv2, sum_w=sw,
        sum_w2=sw2, laplace_sum=lapv, records=records,
    )


def run(model: CompatibilityModel, horizon: float, warmup: float | None = None, seed: int = 0,
        replications: int = 1, threads: int = 1, hist_cap: int | None = None,
        state_depth: int = 0, z_points: Sequence[float] = DEFAULT_Z_POINTS,
        record_cap: int = 200_000) -> SimulationEstimate:
    """Simulate independent replications, each over [0, horizon] starting empty.

    Statistics cover [warmup, horizon] (default warmup: 10% of the horizon).
    Replication i draws from PCG64 seeded by the i-th child of
    ``SeedSequence(seed)``, so results depend only on the arguments.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if warmup is None:
        warmup = 0.1 * horizon
    if not 0 <= warmup < horizon:
        raise ValueError("need 0 <= warmup < horizon")
    if replications < 1:
        raise ValueError("need at least one replication")
    if model.server_count > 62:
        raise ValueError("the simulator supports at most 62 servers")
    flags = []
    report = check_stability_typesets(model, keep=1)
    if not report.stable:
        flags.append(f"model is {report.status}; queue lengths may grow without bound")
    if hist_cap is None:
        hist_cap = default_hist_cap(model)
    children = np.random.SeedSequence(seed).spawn(replications)
    args = (model, horizon, warmup)
    extra = (hist_cap, state_depth, tuple(z_points), record_cap)
    if threads > 1 and replications > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _run_one(*args, c, *extra), children))
    else:
        results = [_run_one(*args, c, *extra) for c in children]
    for r in results:
        if r.type_dist[:, -1].max() > 0 or r.total_dist[-1] > 0:
            flags.append("histogram overflow: raise hist_cap for exact tail estimates")
            break
    return SimulationEstimate(model, float(horizon), float(warmup), int(seed), tuple(z_points),
                              int(state_depth), results, flags)


@dataclass
class LittleRow:
    type_label: str
    completed: int
    mean_queue: float
    rate_times_sojourn: float
    mean_residual: float
    pgf: tuple
    laplace: tuple
    distribution_residuals: tuple
    status: str


def littles_law_check(estimate: SimulationEstimate, model: CompatibilityModel | None = None,
                      min_jobs: int = MIN_JOBS_FOR_CHECK) -> list[LittleRow]:
    """Compare E[Q_S] with lam_S E[V_S], and E[z^Q_S] with E[exp(-lam_S (1-z) V_S)]."""
    model = model or estimate.model
    rates = model.arrival_rates
    eq = estimate.mean_queue
    ev = estimate.mean_sojourn
    lap = estimate.sojourn_laplace
    rows = []
    for k in range(model.type_count):
        n = int(estimate.completed[k])
        label = model.type_label(k)
        if n < min_jobs:
            rows.append(LittleRow(label, n, float(eq[k]), math.nan, math.nan, (), (), (),
                                  "insufficient data"))
            continue
        lv = rates[k] * ev[k]
        g = tuple(float(estimate.queue_pgf(z)[k]) for z in estimate.z_points)
        lt = tuple(float(x) for x in lap[k])
        res = tuple(abs(a - b) / a for a, b in zip(g, lt))
        rows.append(LittleRow(label, n, float(eq[k]), float(lv), abs(eq[k] - lv) / eq[k],
                              g, lt, res, "ok"))
    return rows
