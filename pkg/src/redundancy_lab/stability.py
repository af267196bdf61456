"""Stability and local (resource-pooling) stability conditions.

Every check enumerates subsets by bitmask and reports one slack row per
subset, ``slack = rhs - lhs``. A condition holds when the minimal slack is
strictly positive beyond a relative tolerance; a minimal slack within the
tolerance is reported as ``"boundary"``, never as stable.

Servers with zero speed are dropped before enumeration: they add nothing to
any service rate, so a type whose servers all have zero speed can never be
served, and an idle zero-speed server is not a violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import CompatibilityModel, format_subset

DEFAULT_ENUMERATION_CAP = 20
DEFAULT_KEEP_ROWS = 10
RELATIVE_TOLERANCE = 1e-12


class CapacityError(RuntimeError):
    """Raised when an enumeration would exceed its configured cap."""


@dataclass(frozen=True)
class SlackRow:
    subset: str
    lhs: float
    rhs: float
    slack: float

    def to_dict(self) -> dict:
        return {"subset": self.subset, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack}


@dataclass
class StabilityReport:
    status: str  # "stable", "boundary" or "unstable"
    worst_subset: str
    min_slack: float
    slacks: list[SlackRow]
    form_used: str
    rows_evaluated: int
    tolerance: float
    notes: list[str] = field(default_factory=list)

    @property
    def stable(self) -> bool:
        return self.status == "stable"

    def to_dict(self) -> dict:
        return {
            "form": self.form_used,
            "status": self.status,
            "stable": self.stable,
            "worst_subset": self.worst_subset,
            "min_slack": self.min_slack,
            "tolerance": self.tolerance,
            "rows_evaluated": self.rows_evaluated,
            "rows": [r.to_dict() for r in self.slacks],
            "notes": list(self.notes),
        }


def _check_cap(count: int, cap: int, what: str):
    if count > cap:
        raise CapacityError(
            f"{what}: {count} elements exceed the enumeration cap {cap} "
            f"({2 ** count} subsets); raise the cap explicitly to proceed"
        )


def _positive_servers(model: CompatibilityModel) -> int:
    mask = 0
    for n, s in enumerate(model.speeds):
        if s > 0:
            mask |= 1 << n
    return mask


def _effective_masks(model: CompatibilityModel) -> np.ndarray:
    pos = _positive_servers(model)
    return np.array([m & pos for m in model.masks], dtype=np.uint64)


def _mask_rates(model: CompatibilityModel, masks: np.ndarray) -> np.ndarray:
    rates = np.zeros(masks.shape, dtype=np.float64)
    for n, s in enumerate(model.speeds):
        if s > 0:
            rates += s * ((masks >> np.uint64(n)) & np.uint64(1)).astype(np.float64)
    return rates


def _type_subsets(model: CompatibilityModel):
    """Probability sums and effective server unions for all subsets of types.

    Index ``t`` encodes the subset {i : bit i of t set}.
    """
    eff = _effective_masks(model)
    sums = np.zeros(1, dtype=np.float64)
    unions = np.zeros(1, dtype=np.uint64)
    for i in range(model.type_count):
        sums = np.concatenate([sums, sums + model.probs[i]])
        unions = np.concatenate([unions, unions | eff[i]])
    return sums, unions


def _server_subsets(model: CompatibilityModel):
    """Server subsets U over positive-speed servers with the probability of
    the types contained in U."""
    pos = _positive_servers(model)
    eff = [int(m) for m in _effective_masks(model)]
    servers = [n for n in range(model.server_count) if pos >> n & 1]
    subsets = np.zeros(1, dtype=np.uint64)
    for n in servers:
        subsets = np.concatenate([subsets, subsets | np.uint64(1 << n)])
    inside = np.zeros(subsets.shape, dtype=np.float64)
    for m, p in zip(eff, model.probs):
        mm = np.uint64(m)
        inside += p * ((subsets & mm) == mm)
    return subsets, inside, np.uint64(pos)


def _type_set_label(model: CompatibilityModel, t: int) -> str:
    return "{" + ",".join(model.type_label(i) for i in range(model.type_count) if t >> i & 1) + "}"


def _server_set_label(mask) -> str:
    return format_subset(int(mask))


def _report(form: str, lhs: np.ndarray, rhs: np.ndarray, labels, tol: float,
            keep: int | None, notes=None) -> StabilityReport:
    slack = rhs - lhs
    if slack.size == 0:
        return StabilityReport("stable", "", math.inf, [], form, 0, tol, list(notes or []))
    order = np.argsort(slack, kind="stable")
    if keep is not None:
        order = order[:keep]
    rows = [SlackRow(labels(int(i)), float(lhs[i]), float(rhs[i]), float(slack[i]))
            for i in order]
    worst = int(np.argmin(slack))
    min_slack = float(slack[worst])
    if min_slack > tol:
        status = "stable"
    elif min_slack >= -tol:
        status = "boundary"
    else:
        status = "unstable"
    return StabilityReport(status, labels(worst), min_slack, rows, form, int(slack.size), tol,
                           list(notes or []))


def check_stability_typesets(model: CompatibilityModel, cap: int = DEFAULT_ENUMERATION_CAP,
                             keep: int | None = DEFAULT_KEEP_ROWS) -> StabilityReport:
    """N*lam*sum_{S in T} p_S < mu(union of T) for every non-empty set of types T."""
    _check_cap(model.type_count, cap, "job types")
    sums, unions = _type_subsets(model)
    idx = np.arange(1, sums.size)
    lhs = model.total_arrival_rate * sums[idx]
    rhs = _mask_rates(model, unions[idx])
    tol = RELATIVE_TOLERANCE * model.total_speed
    return _report("types", lhs, rhs, lambda i: _type_set_label(model, int(idx[i])), tol, keep)


def check_stability_serversets(model: CompatibilityModel, cap: int = DEFAULT_ENUMERATION_CAP,
                               keep: int | None = DEFAULT_KEEP_ROWS) -> StabilityReport:
    """N*lam*sum_{S subset of U} p_S < mu(U) for every non-empty server set U."""
    _check_cap(model.server_count, cap, "servers")
    subsets, inside, _ = _server_subsets(model)
    # U = {} only matters when some type has no positive-speed server
    sel = np.flatnonzero((subsets != 0) | (inside > 0))
    lhs = model.total_arrival_rate * inside[sel]
    rhs = _mask_rates(model, subsets[sel])
    tol = RELATIVE_TOLERANCE * model.total_speed
    return _report("servers", lhs, rhs, lambda i: _server_set_label(subsets[sel[i]]), tol, keep)


def check_stability(model: CompatibilityModel, **kwargs) -> StabilityReport:
    return check_stability_serversets(model, **kwargs)


def _local_type_domain(model: CompatibilityModel):
    sums, unions = _type_subsets(model)
    pos = np.uint64(_positive_servers(model))
    idx = np.arange(1, sums.size)
    idx = idx[unions[idx] != pos]
    return sums, unions, idx, pos


def _local_server_domain(model: CompatibilityModel):
    subsets, inside, pos = _server_subsets(model)
    sel = np.flatnonzero((subsets != pos) & ((subsets != 0) | (inside > 0)))
    return subsets, inside, pos, sel


def check_local_stability(model: CompatibilityModel, cap: int = DEFAULT_ENUMERATION_CAP,
                          keep: int | None = DEFAULT_KEEP_ROWS,
                          form: str = "servers") -> StabilityReport:
    """Local stability in primal form, normalized by the total speed N*mu.

    ``form="types"``: sum_{S in T} p_S < mu(union T)/(N mu) for non-empty T whose
    union is not every server. ``form="servers"``: sum_{S subset of U} p_S <
    mu(U)/(N mu) for non-empty strict subsets U.
    """
    total = model.total_speed
    if form == "types":
        _check_cap(model.type_count, cap, "job types")
        sums, unions, idx, _ = _local_type_domain(model)
        lhs = sums[idx]
        rhs = _mask_rates(model, unions[idx]) / total
        return _report("local-types", lhs, rhs, lambda i: _type_set_label(model, int(idx[i])),
                       RELATIVE_TOLERANCE, keep)
    if form == "servers":
        _check_cap(model.server_count, cap, "servers")
        subsets, inside, _, sel = _local_server_domain(model)
        lhs = inside[sel]
        rhs = _mask_rates(model, subsets[sel]) / total
        return _report("local-servers", lhs, rhs,
                       lambda i: _server_set_label(subsets[sel[i]]), RELATIVE_TOLERANCE, keep)
    raise ValueError(f"unknown form {form!r}")


def local_stability_dual_forms(model: CompatibilityModel, cap: int = DEFAULT_ENUMERATION_CAP,
                               keep: int | None = DEFAULT_KEEP_ROWS,
                               form: str = "servers") -> StabilityReport:
    """Local stability rewritten over complements.

    ``form="types"``: for T' the complement of a non-empty set of types, the
    speed of servers outside the union of the types not in T', over N*mu, is
    below sum_{S in T'} p_S.
    ``form="servers"``: for U' = (complement of U), mu(U')/(N mu) is below the
    probability of the types touching U'.
    """
    total = model.total_speed
    if form == "types":
        _check_cap(model.type_count, cap, "job types")
        sums, unions = _type_subsets(model)
        pos = np.uint64(_positive_servers(model))
        # T' = complement of T for every non-empty T; when T covers all
        # servers the row reads 0 < p(T') and holds trivially, except for
        # T = all types where it degenerates to 0 < 0 and is left out
        idx = np.arange(1, sums.size)
        idx = idx[(idx != sums.size - 1) | (unions[-1] != pos)]
        complement_prob = 1.0 - sums[idx]
        lhs = _mask_rates(model, pos & ~unions[idx]) / total
        full = (1 << model.type_count) - 1
        return _report("local-types-dual", lhs, complement_prob,
                       lambda i: _type_set_label(model, full & ~int(idx[i])),
                       RELATIVE_TOLERANCE, keep)
    if form == "servers":
        _check_cap(model.server_count, cap, "servers")
        subsets, _, pos, sel = _local_server_domain(model)
        comp = pos & ~subsets[sel]
        lhs = _mask_rates(model, comp) / total
        rhs = np.zeros(comp.shape, dtype=np.float64)
        for m, p in zip(_effective_masks(model), model.probs):
            rhs += p * ((comp & m) != 0)
        return _report("local-servers-dual", lhs, rhs, lambda i: _server_set_label(comp[i]),
                       RELATIVE_TOLERANCE, keep)
    raise ValueError(f"unknown form {form!r}")


def max_stable_load(model: CompatibilityModel) -> float:
    """Supremum of lam/mu over which the model is stable."""
    subsets, inside, _ = _server_subsets(model)
    sel = np.flatnonzero(inside > 0)
    if sel.size == 0:
        return math.inf
    rates = _mask_rates(model, subsets[sel])
    bound = rates / (model.server_count * inside[sel])
    return float(bound.min()) / model.mean_speed
