import math
import threading

import numpy as np
import pytest

from partsel.accounting import DpBudget, rdp_to_dp
from partsel.divergence import RenyiBudget, approx_renyi_bernoulli
from partsel.primitive import pi_star
from partsel.snaps import (NonMonotoneTable, SensitivityBound, SnapsParams, TableRangeError,
                           certify, expected_size, phi, psi_table, snaps_budget, snaps_select,
                           table_rows)

# 20 jumps per unit weight keeps the tables cheap
COARSE = SnapsParams(eps0=0.01, delta0=1e-4, eps1=0.5, delta1=1e-3, r=2.0,
                     delta_disc=0.05, delta_cap=1.0, alpha=4.0)


def test_params_validation():
    with pytest.raises(ValueError):
        SnapsParams(-1, 0, 0, 0)
    with pytest.raises(ValueError):
        SnapsParams(0.1, 0.1, 0.1, 0.1, r=0.5)
    with pytest.raises(ValueError):
        SnapsParams(0.1, 0.1, 0.1, 0.1, delta_disc=0)
    with pytest.raises(ValueError):
        SnapsParams(0.1, 0.1, 0.1, 0.1, alpha=1.0)
    with pytest.raises(ValueError):
        SnapsParams(0.1, 0.6, 0.1, 0.5)  # per-step delta reaches 1


def test_n_disc():
    assert SnapsParams(1, 1e-3, 1, 1e-3, delta_disc=5e-4, delta_cap=1.0).n_disc == 2000
    assert SnapsParams(1, 1e-3, 1, 1e-3, delta_disc=0.3, delta_cap=1.0).n_disc == 4
    assert SnapsParams(1, 1e-3, 1, 1e-3, delta_disc=2.0, delta_cap=1.0).n_disc == 1
    e, d = COARSE.step_budgets()
    assert e[0] == COARSE.eps0 and d[0] == COARSE.delta0
    assert e[-1] == pytest.approx(0.01 + 0.5 * 0.95 ** 2)


def test_psi_zero_and_monotone():
    t = psi_table(COARSE, 400)
    assert t[0] == 0.0
    assert np.all(np.diff(t.probs) >= 0)
    assert t.saturation_index is not None and t[t.saturation_index] == 1.0


def test_per_step_budget_holds():
    t = psi_table(COARSE, 400).probs
    e, d = COARSE.step_budgets()
    for i in range(1, COARSE.n_disc + 1):
        hi, lo = t[i:], t[:-i]
        up = approx_renyi_bernoulli(hi, lo, d[i - 1], COARSE.alpha)
        down = approx_renyi_bernoulli(lo, hi, d[i - 1], COARSE.alpha)
        assert np.max(np.maximum(up, down)) <= e[i - 1] + 1e-9


def test_single_jump_collapses_to_pi_star():
    p = SnapsParams(0.7, 1e-3, 5.0, 0.01, delta_disc=1.0, delta_cap=1.0, alpha=2.0)
    assert p.n_disc == 1
    a = psi_table(p, 300).probs
    b = pi_star(300, RenyiBudget(1e-3, 2.0, 0.7)).probs
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_table_prefix_is_stable_under_extension():
    p = SnapsParams(0.02, 1e-4, 0.3, 1e-3, delta_disc=0.1, alpha=3.0)
    short = psi_table(p, 10).probs.copy()
    long_ = psi_table(p, 60).probs
    assert np.array_equal(short, long_[:11])


def test_phi_lookup():
    t = psi_table(COARSE, 400)
    assert phi(COARSE, t, 0.0) == 0.0
    assert phi(COARSE, t, 0.049) == 0.0
    ks = np.arange(0, 50)
    np.testing.assert_array_equal(phi(COARSE, t, ks * COARSE.delta_disc), t.probs[ks])
    y = np.linspace(0, 5, 333)
    assert np.all(np.diff(phi(COARSE, t, y)) >= 0)
    # past saturation the table is 1
    assert phi(COARSE, t, 1e6) == 1.0
    with pytest.raises(ValueError):
        phi(COARSE, t, -0.1)


def test_phi_out_of_range_reported():
    p = SnapsParams(1e-4, 1e-6, 0.01, 1e-6, delta_disc=0.05, alpha=4.0)
    t = psi_table(p, 20)
    assert t.saturation_index is None
    with pytest.raises(TableRangeError):
        phi(p, t, 2.0)


def test_budget_formula():
    p = SnapsParams(1e-5, 5e-5, 0.3, 1e-7, alpha=18.5)
    b = snaps_budget(p, SensitivityBound(100, 1.0))
    assert b.alpha == 18.5
    assert b.delta == pytest.approx(5e-3 + 1e-7, rel=1e-12)
    assert b.epsilon == pytest.approx(1e-3 + 0.3, rel=1e-12)
    # one partition bounded by linf
    b1 = snaps_budget(p, SensitivityBound(1, 0.5, linf=0.5))
    assert b1.delta == pytest.approx(5e-5 + 1e-7 * 0.25)
    assert b1.epsilon == pytest.approx(1e-5 + 0.3 * 0.25)
    # no per-weight rate
    z = SnapsParams(0.2, 1e-4, 0.0, 0.0)
    bz = snaps_budget(z, SensitivityBound(7, 3.0))
    assert (bz.delta, bz.epsilon) == (pytest.approx(7e-4), pytest.approx(1.4))


def test_sensitivity_bound_invariant():
    with pytest.raises(ValueError):
        SensitivityBound(0, 1.0)
    with pytest.raises(ValueError):
        SensitivityBound(1, 0.0)
    p = SnapsParams(1e-5, 5e-5, 0.3, 1e-7, r=2.0)
    # 4 entries of size at most 0.5 have L2 norm at most 1
    snaps_budget(p, SensitivityBound(4, 1.0, linf=0.5))
    with pytest.raises(ValueError):
        snaps_budget(p, SensitivityBound(4, 1.01, linf=0.5))


def test_for_target_certifies():
    target = DpBudget(1.0, 1e-5)
    p = SnapsParams.for_target(target, 100)
    b = snaps_budget(p, SensitivityBound(100, 1.0))
    assert rdp_to_dp(b, 1.0) <= 1e-5 * (1 + 1e-9)
    g = certify(p, SensitivityBound(100, 1.0), target)
    assert g.delta == pytest.approx(1e-5, rel=1e-6)
    with pytest.raises(ValueError):
        certify(p, SensitivityBound(200, 1.0), target)
    with pytest.raises(ValueError):
        SnapsParams.for_target(target, 10 ** 6)


def test_select_empty_and_small_weights():
    assert snaps_select({}, COARSE, seed=1) == set()
    w = {f"k{i}": 0.01 * i for i in range(5)}  # all below delta_disc
    for s in range(20):
        assert snaps_select(w, COARSE, seed=s) == set()


def test_select_deterministic_and_heavy_items_kept():
    w = {f"k{i}": 0.1 * i for i in range(60)}
    a = snaps_select(w, COARSE, seed=3)
    assert a == snaps_select(w, COARSE, seed=3)
    t = psi_table(COARSE, 400)
    assert all(k in a for k, v in w.items() if phi(COARSE, t, v) == 1.0)
    assert all(w[k] >= COARSE.delta_disc for k in a)


def test_select_size_matches_expectation():
    rng = np.random.default_rng(0)
    w = dict(enumerate(rng.uniform(0, 3, 80)))
    t = psi_table(COARSE, 100)
    exact = expected_size(w.values(), COARSE, t)
    p = np.atleast_1d(phi(COARSE, t, np.array(list(w.values()))))
    sizes = np.array([len(snaps_select(w, COARSE, seed=s, table=t)) for s in range(10_000)])
    se = math.sqrt(np.sum(p * (1 - p)) / sizes.size)
    assert abs(sizes.mean() - exact) <= 3 * se


def test_table_rows():
    t = psi_table(COARSE, 5)
    rows = list(table_rows(COARSE, t))
    assert [r[0] for r in rows] == list(range(6))
    assert rows[3][1] == pytest.approx(0.15)
    assert rows[0][2] == 0.0


def test_concurrent_tables_agree():
    p = SnapsParams(0.02, 1e-4, 0.4, 1e-3, delta_disc=0.1, alpha=5.0)
    out = [None] * 4

    def work(j):
        out[j] = psi_table(p, 80 + 10 * j).probs

    th = [threading.Thread(target=work, args=(j,)) for j in range(4)]
    for x in th:
        x.start()
    for x in th:
        x.join()
    for j in range(4):
        assert np.array_equal(out[j][:81], out[0][:81])


def test_nonmonotone_error_type():
    assert issubclass(NonMonotoneTable, ArithmeticError)
    assert issubclass(TableRangeError, IndexError)
