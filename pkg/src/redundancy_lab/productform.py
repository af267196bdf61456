"""Exact stationary analytics of the central-queue product form.

The weight of a state ``c = (c_1, ..., c_M)`` is

    prod_i  N*lam*p_{c_i} / mu(c_1, ..., c_i)

where ``mu(...)`` is the aggregate speed of the servers compatible with at
least one of the listed types. The joint generating function of the per-type
counts is a finite sum over ordered vectors of distinct types; every prefix of
such a vector contributes one geometric factor.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy import sparse

from .model import CompatibilityModel, ModelError, validate_state
from .stability import CapacityError, check_stability_typesets

DEFAULT_TYPE_CAP = 8
DEFAULT_TERM_BUDGET = 10**8
SINGULAR_THRESHOLD = 1e-14


class UnstableModelError(RuntimeError):
    """Raised when an operation needs a stable model and gets an unstable one."""


class SingularFactorError(ArithmeticError):
    """Raised when a geometric factor of the generating function vanishes."""


@dataclass(frozen=True)
class PgfEvaluation:
    value: complex | float
    z: tuple
    lam: float
    term_count: int

    @property
    def real(self) -> float:
        return float(np.real(self.value))


def stationary_weight(model: CompatibilityModel, state: Sequence[int]) -> float:
    """Unnormalized stationary weight of a central-queue state (empty state -> 1)."""
    state = validate_state(model, state)
    nl = model.total_arrival_rate
    weight = 1.0
    mask = 0
    for t in state:
        mask |= model.masks[t]
        weight *= nl * model.probs[t] / model.mask_rate(mask)
    return weight


def order_vector_count(type_count: int) -> int:
    """Number of ordered vectors of distinct types, sum_m m! C(K, m)."""
    return sum(math.perm(type_count, m) for m in range(1, type_count + 1))


def _check_type_cap(model: CompatibilityModel, cap: int):
    if model.type_count > cap:
        raise CapacityError(
            f"{model.type_count} job types exceed the cap {cap}: the generating "
            f"function would need {order_vector_count(model.type_count)} ordered vectors"
        )


def enumerate_type_orders(model: CompatibilityModel,
                          cap: int = DEFAULT_TYPE_CAP) -> Iterator[tuple[int, ...]]:
    """Yield every ordered vector of distinct type indices, by length then lexicographically."""
    _check_type_cap(model, cap)
    k = model.type_count
    for m in range(1, k + 1):
        yield from itertools.permutations(range(k), m)


def _require_stable(model: CompatibilityModel):
    report = check_stability_typesets(model, keep=1)
    if not report.stable:
        raise UnstableModelError(
            f"model is {report.status} (worst type set {report.worst_subset}, "
            f"slack {report.min_slack:.3g}); the generating function diverges"
        )


def _f_batch(model: CompatibilityModel, zs: np.ndarray) -> tuple[np.ndarray, int]:
    """Evaluate the unnormalized generating function at each row of ``zs``.

    Walks the prefix tree of ordered distinct-type vectors depth first; each
    node is one vector and contributes one term. Terms are summed with
    ``math.fsum`` (exactly rounded), separately for real and imaginary parts.
    """
    k = model.type_count
    nl = model.total_arrival_rate
    probs = np.asarray(model.probs)
    pz = zs * probs  # (B, K)
    numer = nl * pz
    terms: list[np.ndarray] = []
    used = [False] * k

    def visit(mask: int, pz_sum: np.ndarray, term: np.ndarray):
        for j in range(k):
            if used[j]:
                continue
            m = mask | model.masks[j]
            mu = model.mask_rate(m)
            s = pz_sum + pz[:, j]
            denom = 1.0 - (nl / mu) * s
            if np.any(np.abs(denom) < SINGULAR_THRESHOLD):
                raise SingularFactorError(
                    f"geometric factor vanishes after type {model.type_label(j)} "
                    f"(prefix rate {mu:g})"
                )
            t = term * numer[:, j] / (mu * denom)
            terms.append(t)
            used[j] = True
            visit(m, s, t)
            used[j] = False

    b = zs.shape[0]
    visit(0, np.zeros(b, dtype=zs.dtype), np.ones(b, dtype=zs.dtype))
    stacked = np.vstack(terms) if terms else np.zeros((0, b), dtype=zs.dtype)
    if np.iscomplexobj(stacked):
        out = np.array([complex(1.0 + math.fsum(col.real), math.fsum(col.imag))
                        for col in stacked.T])
    else:
        out = np.array([1.0 + math.fsum(col) for col in stacked.T])
    return out, len(terms)


def unnormalized_pgf(model: CompatibilityModel, z: Sequence, cap: int = DEFAULT_TYPE_CAP):
    """f(z) with no range or stability checks (used for analytic continuation)."""
    _check_type_cap(model, cap)
    zs = np.atleast_2d(np.asarray(z))
    if not np.iscomplexobj(zs):
        zs = zs.astype(np.float64)
    values, _ = _f_batch(model, zs)
    return values if np.ndim(z) > 1 else values[0]


def pgf(model: CompatibilityModel, z: Sequence, cap: int = DEFAULT_TYPE_CAP) -> PgfEvaluation:
    """E[prod_S z_S^{Q_S}] = f(z) / f(1) by the ordered-vector sum."""
    _check_type_cap(model, cap)
    z = np.asarray(z)
    if z.shape != (model.type_count,):
        raise ModelError(f"need one argument per job type ({model.type_count})")
    if np.any(np.abs(z) > 1.0 + 1e-15):
        raise ModelError("generating function arguments must satisfy |z_S| <= 1")
    _require_stable(model)
    dtype = np.complex128 if np.iscomplexobj(z) else np.float64
    zs = np.vstack([z.astype(dtype), np.ones(model.type_count, dtype=dtype)])
    values, count = _f_batch(model, zs)
    value = values[0] / values[1]
    if dtype is np.float64:
        value = float(np.real(value))
    return PgfEvaluation(value, tuple(z.tolist()), model.lam, count)


def normalization_constant(model: CompatibilityModel, cap: int = DEFAULT_TYPE_CAP) -> float:
    """C = 1 / f(1), the probability that the system is empty."""
    _check_type_cap(model, cap)
    _require_stable(model)
    values, _ = _f_batch(model, np.ones((1, model.type_count)))
    return float(1.0 / values[0])


# -- occupancy levels ------------------------------------------------------


def reachable_masks(model: CompatibilityModel) -> list[int]:
    """All unions of type masks (including the empty union 0), sorted."""
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for a in frontier:
            for m in model.masks:
                b = a | m
                if b not in seen:
                    seen.add(b)
                    nxt.append(b)
        frontier = nxt
    return sorted(seen)


def _level_sums(model: CompatibilityModel, q_max: int, step_factor, budget: int) -> np.ndarray:
    """Sum of per-state products over all states of length q, for q = 0..q_max.

    A state's product depends on its prefix only through the union of server
    masks, so states are grouped by that union; ``step_factor(p, mask)`` is the
    factor for appending a type of probability ``p`` that yields ``mask``.
    """
    masks = reachable_masks(model)
    work = len(masks) * model.type_count * max(q_max, 1)
    if work > budget:
        raise CapacityError(f"grouped summation needs {work} operations, budget {budget}")
    index = {m: i for i, m in enumerate(masks)}
    rows, cols, vals = [], [], []
    for a in masks:
        for m, p in zip(model.masks, model.probs):
            b = a | m
            rows.append(index[b])
            cols.append(index[a])
            vals.append(step_factor(p, b))
    step = sparse.csr_matrix((vals, (rows, cols)), shape=(len(masks), len(masks)))
    w = np.zeros(len(masks))
    w[index[0]] = 1.0
    out = np.empty(q_max + 1)
    out[0] = 1.0
    for q in range(1, q_max + 1):
        w = step @ w
        out[q] = math.fsum(w)
    return out


def _level_sums_enumerated(model: CompatibilityModel, q_max: int, step_factor,
                           budget: int) -> np.ndarray:
    """Same as ``_level_sums`` by visiting every state in S^q individually."""
    k = model.type_count
    work = sum(k**q for q in range(q_max + 1))
    if work > budget:
        raise CapacityError(f"enumerating S^q for q <= {q_max} needs {work} states, "
                            f"budget {budget}")
    levels: list[list[float]] = [[] for _ in range(q_max + 1)]
    levels[0].append(1.0)

    def visit(depth: int, mask: int, weight: float):
        for t in range(k):
            b = mask | model.masks[t]
            w = weight * step_factor(model.probs[t], b)
            levels[depth + 1].append(w)
            if depth + 1 < q_max:
                visit(depth + 1, b, w)

    if q_max > 0:
        visit(0, 0, 1.0)
    return np.array([math.fsum(level) for level in levels])


def weight_level_sums(model: CompatibilityModel, q_max: int, method: str = "grouped",
                      budget: int = DEFAULT_TERM_BUDGET) -> np.ndarray:
    """Sum of stationary weights over all states with exactly q jobs."""
    nl = model.total_arrival_rate

    def factor(p, mask):
        return nl * p / model.mask_rate(mask)

    if method == "grouped":
        return _level_sums(model, q_max, factor, budget)
    if method == "enumerate":
        return _level_sums_enumerated(model, q_max, factor, budget)
    raise ValueError(f"unknown method {method!r}")


def occupancy_distribution(model: CompatibilityModel, q_max: int, method: str = "grouped",
                           budget: int = DEFAULT_TERM_BUDGET,
                           cap: int = DEFAULT_TYPE_CAP) -> np.ndarray:
    """P{total jobs = q} for q = 0..q_max."""
    if q_max < 0:
        raise ValueError("q_max must be non-negative")
    c = normalization_constant(model, cap=cap)
    return c * weight_level_sums(model, q_max, method=method, budget=budget)


def tail_probabilities(distribution: Sequence[float]) -> np.ndarray:
    """P{Q >= q} for each q covered by a (head of a) distribution."""
    dist = np.asarray(distribution, dtype=np.float64)
    head = np.concatenate([[0.0], np.cumsum(dist)[:-1]])
    return 1.0 - head


# -- moments ---------------------------------------------------------------


def mean_per_type(model: CompatibilityModel, cap: int = DEFAULT_TYPE_CAP) -> np.ndarray:
    """E[Q_S] = (d f / d z_S)(1) / f(1), differentiating each term exactly.

    A term is prod_j numer_j / (mu_j * denom_j) with numer_j linear in z_{S_j}
    and denom_j = 1 - (N lam / mu_j) * (sum of p z over the prefix), so its
    logarithmic derivative is a sum over prefix factors.
    """
    _check_type_cap(model, cap)
    _require_stable(model)
    k = model.type_count
    nl = model.total_arrival_rate
    probs = np.asarray(model.probs)
    values: list[float] = []
    grads: list[np.ndarray] = []
    used = np.zeros(k, dtype=bool)

    def visit(mask: int, p_sum: float, term: float, logd: np.ndarray):
        for j in range(k):
            if used[j]:
                continue
            m = mask | model.masks[j]
            mu = model.mask_rate(m)
            s = p_sum + probs[j]
            denom = 1.0 - (nl / mu) * s
            t = term * nl * probs[j] / (mu * denom)
            used[j] = True
            g = logd + np.where(used, (nl / mu) * probs / denom, 0.0)
            g[j] += 1.0
            values.append(t)
            grads.append(t * g)
            visit(m, s, t, g)
            used[j] = False

    visit(0, 0.0, 1.0, np.zeros(k))
    f1 = 1.0 + math.fsum(values)
    stacked = np.array(grads)
    return np.array([math.fsum(stacked[:, i]) for i in range(k)]) / f1


def mean_per_server(model: CompatibilityModel, **kwargs) -> np.ndarray:
    """E[R_n] = sum over types containing n of E[Q_S]."""
    per_type = mean_per_type(model, **kwargs)
    return np.array([
        math.fsum(v for m, v in zip(model.masks, per_type) if m >> n & 1)
        for n in range(model.server_count)
    ])
