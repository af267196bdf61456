import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from redundancy_lab import model as M
from redundancy_lab import stability as S
from redundancy_lab.stability import CapacityError


def brute_global(model):
    """min over non-empty type sets of mu(union) - N lam sum p, by plain itertools."""
    k = model.type_count
    best = np.inf
    for r in range(1, k + 1):
        for combo in itertools.combinations(range(k), r):
            union = 0
            for t in combo:
                union |= model.masks[t]
            rate = sum(s for n, s in enumerate(model.speeds) if union >> n & 1)
            best = min(best, rate - model.total_arrival_rate * sum(model.probs[t] for t in combo))
    return best


def brute_local(model):
    n = model.server_count
    best = np.inf
    for r in range(1, n):
        for combo in itertools.combinations(range(n), r):
            u = sum(1 << i for i in combo)
            inside = sum(p for m, p in zip(model.masks, model.probs) if m & ~u == 0)
            best = min(best, sum(model.speeds[i] for i in combo) / model.total_speed - inside)
    return best


def mm1(lam=0.5):
    return M.build_model([1.0], [((1,), 1.0)], lam)


def test_mm1_stable_with_slack_half():
    for rep in (S.check_stability_typesets(mm1()), S.check_stability_serversets(mm1())):
        assert rep.status == "stable"
        assert rep.min_slack == pytest.approx(0.5)


def test_fig1_ring_stable_below_capacity():
    m = M.build_ring(4, 0.25).with_load(0.95)
    rep = S.check_stability_typesets(m, keep=None)
    assert rep.stable and rep.rows_evaluated == 15


def test_unstable_single_server_example():
    m = M.build_model([1.0, 1.0], [((1,), 1.0)], 0.6)
    a, b = S.check_stability_typesets(m), S.check_stability_serversets(m)
    assert a.status == b.status == "unstable"
    assert a.min_slack == pytest.approx(1.0 - 1.2)
    assert b.worst_subset == "{1}"


def test_uniform_complete_near_capacity_stable():
    m = M.build_uniform_complete(4).with_load(0.99)
    assert S.check_stability_serversets(m).stable
    assert S.check_stability_typesets(m).stable


def test_full_set_slack_is_n_mu_minus_n_lambda():
    m = M.build_ring(4, 0.3, speeds=[1, 2, 3, 4]).with_load(0.7)
    rep = S.check_stability_serversets(m, keep=None)
    full = [r for r in rep.slacks if r.subset == "{1,2,3,4}"][0]
    assert full.slack == pytest.approx(m.total_speed - m.total_arrival_rate, abs=1e-12)


def test_exact_capacity_is_boundary():
    m = M.build_ring(4, 0.5).with_load(1.0)
    assert S.check_stability_typesets(m).status == "boundary"
    assert S.check_stability_serversets(m).status == "boundary"


def test_enumeration_cap():
    m = M.build_uniform_complete(8)  # 28 types
    with pytest.raises(CapacityError):
        S.check_stability_typesets(m)
    assert S.check_stability_serversets(m).stable


def test_report_keeps_worst_rows_sorted():
    m = M.build_uniform_complete(5)
    rep = S.check_stability_serversets(m)
    assert len(rep.slacks) == 10
    assert [r.slack for r in rep.slacks] == sorted(r.slack for r in rep.slacks)
    for r in rep.slacks:
        assert r.slack == pytest.approx(r.rhs - r.lhs)


@pytest.mark.parametrize("eps", [0.01, 0.1, 0.5])
def test_sparse_examples_locally_stable(eps):
    for m in (M.build_tree_model(4, eps), M.build_singleton_fullset(4, eps),
              M.build_tree_model(6, eps, edges=[(1, 2), (1, 3), (1, 4), (4, 5), (4, 6)])):
        for form in ("servers", "types"):
            assert S.check_local_stability(m, form=form).status == "stable"
            assert S.local_stability_dual_forms(m, form=form).status == "stable"


def test_sparse_examples_at_zero_are_boundary():
    for m in (M.build_tree_model(4, 0.0), M.build_singleton_fullset(4, 0.0)):
        for form in ("servers", "types"):
            assert S.check_local_stability(m, form=form).status == "boundary"
            assert S.local_stability_dual_forms(m, form=form).status == "boundary"


def test_idle_positive_speed_server_violates_dual_singleton():
    m = M.build_model([1, 1, 1], [((1, 2), 1.0)], 0.3)
    rep = S.local_stability_dual_forms(m, keep=None)
    assert rep.status == "unstable"
    row = [r for r in rep.slacks if r.subset == "{3}"][0]
    assert row.lhs == pytest.approx(1 / 3) and row.rhs == 0.0
    assert S.check_local_stability(m).status == "unstable"


def test_zero_speed_server_is_not_a_violation():
    m = M.build_model([1, 1, 0], [((1, 2), 0.5), ((1,), 0.25), ((2,), 0.25)], 0.3)
    assert S.check_local_stability(m).status == S.local_stability_dual_forms(m).status
    assert S.check_local_stability(m).status != "unstable"


def test_uniform_complete_dual_all_strict():
    rep = S.local_stability_dual_forms(M.build_uniform_complete(4), keep=None)
    assert rep.stable and all(r.slack > 0 for r in rep.slacks)


def test_ring_dual_type_singleton_has_empty_complement():
    m = M.build_ring(4, 0.5)
    rep = S.local_stability_dual_forms(m, form="types", keep=None)
    # T' = {S_0}: every server is covered by the other three edges
    row = [r for r in rep.slacks if r.subset == "{{1,2}}"][0]
    assert row.lhs == 0.0 and row.rhs == pytest.approx(0.25)


def test_local_stability_implies_stability_below_capacity():
    m = M.build_tree_model(5, 0.2)
    assert S.check_local_stability(m).stable
    for load in np.linspace(0.05, 0.995, 25):
        assert S.check_stability_serversets(m.with_load(load)).stable


def test_max_stable_load():
    m = M.build_model([1.0, 1.0], [((1,), 0.75), ((1, 2), 0.25)], 0.5)
    # server 1 alone must absorb 2 lam 0.75 < 1
    assert S.max_stable_load(m) == pytest.approx(2 / 3)


def random_with_zero_speeds(rng):
    m = M.random_model(rng, load=float(rng.uniform(0.2, 1.3)), ensure_stable=False)
    speeds = list(m.speeds)
    if m.server_count > 1 and rng.random() < 0.3:
        speeds[int(rng.integers(m.server_count))] = 0.0
    base = M.CompatibilityModel(tuple(speeds), m.masks, m.probs, 1.0)
    if rng.random() < 0.2 and S.max_stable_load(base) > 0:
        # land exactly on the stability boundary
        return base.with_load(S.max_stable_load(base))
    return M.CompatibilityModel(tuple(speeds), m.masks, m.probs, m.lam)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forms_agree_and_match_brute_force(seed):
    m = random_with_zero_speeds(np.random.default_rng(seed))
    a = S.check_stability_typesets(m)
    b = S.check_stability_serversets(m)
    assert a.status == b.status
    if all(s > 0 for s in m.speeds):
        assert a.min_slack == pytest.approx(brute_global(m), abs=1e-12)
    c = S.check_local_stability(m, form="servers")
    d = S.check_local_stability(m, form="types")
    e = S.local_stability_dual_forms(m, form="servers")
    f = S.local_stability_dual_forms(m, form="types")
    assert c.status == d.status == e.status == f.status
    if all(s > 0 for s in m.speeds) and m.server_count > 1:
        assert c.min_slack == pytest.approx(brute_local(m), abs=1e-12)
