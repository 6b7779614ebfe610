import math
import warnings

import numpy as np
import pytest

from partsel.additive import (GAP_TOL, AdditiveMechanism, additive_privacy, bounded_baseline,
                              compare_privacy, noise_rows, optimal_additive, pi_to_additive,
                              primitive_of_additive, truncated_discrete_laplace)
from partsel.divergence import (DiscreteDistribution, RenyiBudget, approx_renyi_divergence,
                                hockey_stick, total_variation)
from partsel.primitive import pi_star


def test_mechanism_support_check():
    with pytest.raises(ValueError):
        AdditiveMechanism(DiscreteDistribution(0, [0.5, 0.5]), 0)


def test_primitive_of_uniform_noise():
    m = AdditiveMechanism(DiscreteDistribution(0, np.full(5, 0.2)), 4)
    t = primitive_of_additive(m, 8)
    np.testing.assert_allclose(t.probs, [0, .2, .4, .6, .8, 1, 1, 1, 1], atol=1e-15)
    assert t.saturation_index == 5


def test_primitive_of_point_mass_and_negative_support():
    t = primitive_of_additive(AdditiveMechanism(DiscreteDistribution(3, [1.0]), 3), 4)
    assert t.probs.tolist() == [0, 1, 1, 1, 1]
    # noise on {-2..0}: P(n + Z > 0)
    m = AdditiveMechanism(DiscreteDistribution(-2, [0.25, 0.25, 0.5]), 0)
    assert primitive_of_additive(m, 4).probs.tolist() == [0, 0.5, 0.75, 1, 1]


def test_additive_privacy_cases():
    lap, _ = truncated_discrete_laplace(9, 1e-3)
    up = approx_renyi_divergence(lap.shifted(1), lap, 1e-3, 3.0)
    down = approx_renyi_divergence(lap, lap.shifted(1), 1e-3, 3.0)
    assert up == pytest.approx(down, abs=1e-9)
    assert additive_privacy(lap, 1e-3, 3.0) == pytest.approx(max(up, down))
    assert additive_privacy(DiscreteDistribution(0, [1.0]), 0.3, 2.0) == math.inf
    assert additive_privacy(DiscreteDistribution(0, np.full(6, 1 / 6)), 1 / 6, 2.0) == pytest.approx(0, abs=1e-12)


def test_pi_to_additive_small_table():
    t = pi_star(3, RenyiBudget(0.3, 2.0, 1.0))
    m = pi_to_additive(t)
    assert m.tau == 2
    np.testing.assert_allclose(m.noise.pmf, [1 - 0.908830500277, 0.908830500277 - 0.3, 0.3], rtol=1e-11)
    assert math.fsum(m.noise.pmf) == pytest.approx(1, abs=1e-15)


def test_pi_to_additive_roundtrip():
    for budget in [RenyiBudget(1e-3, 18.5, 1.0), RenyiBudget(0.05, 2.0, 0.4), RenyiBudget(1e-4, 4.0, 2.5)]:
        t = pi_star(100_000, budget)
        nd = t.saturation_index
        m = pi_to_additive(t)
        assert np.all(m.noise.pmf >= 0)
        back = primitive_of_additive(m, nd + 5).probs
        np.testing.assert_allclose(back[:nd + 1], t.probs[:nd + 1], rtol=0, atol=1e-14)
        assert np.all(back[nd:] == 1)


def test_pi_to_additive_rejects_nonsaturating():
    t = pi_star(3, RenyiBudget(1e-6, 2.0, 0.1))
    with pytest.raises(ValueError):
        pi_to_additive(t)


def test_pi_noise_is_weaker_than_pi_star():
    t = pi_star(100_000, RenyiBudget(1e-3, 18.5, 1.0))
    assert additive_privacy(pi_to_additive(t).noise, 1e-3, 18.5) > 1.0


def test_optimal_additive_uniform_branch():
    s = optimal_additive(5, 0.25, 2.0)
    assert s.epsilon == 0.0 and s.converged
    np.testing.assert_allclose(s.noise.pmf, 0.2)


def test_optimal_additive_validation():
    with pytest.raises(ValueError):
        optimal_additive(1, 0.1, 2.0)
    with pytest.raises(ValueError):
        optimal_additive(5, 0.0, 2.0)
    with pytest.raises(ValueError):
        optimal_additive(5, 0.1, 1.0)


@pytest.mark.parametrize("n_d,delta,alpha", [(3, 0.1, 2.0), (7, 0.01, 4.0), (11, 1e-3, 8.0), (21, 1e-4, 3.0)])
def test_optimal_additive_certified_and_consistent(n_d, delta, alpha):
    s = optimal_additive(n_d, delta, alpha)
    assert s.gap <= GAP_TOL
    p = s.noise.pmf
    assert p.size == n_d and math.fsum(p) == pytest.approx(1, abs=1e-12)
    np.testing.assert_allclose(p, p[::-1], rtol=1e-9)
    # the reported epsilon is the mechanism's epsilon
    assert additive_privacy(s.noise, delta, alpha) == pytest.approx(s.epsilon, rel=1e-7, abs=1e-12)
    # and no worse than the truncated Laplace
    lap, _ = truncated_discrete_laplace(n_d, delta)
    assert s.epsilon <= additive_privacy(lap, delta, alpha) * (1 + 1e-9) + 1e-12


def test_optimal_noise_becomes_peaked_with_alpha():
    lo = optimal_additive(61, 1e-5, 2.0).noise.pmf
    hi = optimal_additive(61, 1e-5, 1000.0).noise.pmf
    assert lo[30] < hi[30]


def test_truncated_laplace_uniform_at_threshold():
    p, e = truncated_discrete_laplace(7, 1 / 7)
    assert e == 0.0
    np.testing.assert_allclose(p.pmf, 1 / 7)


def test_truncated_laplace_three_points():
    p, e = truncated_discrete_laplace(3, 0.2)
    # 0.2 (2 + e^eps) = 1
    assert e == pytest.approx(math.log(3), rel=1e-13)
    np.testing.assert_allclose(p.pmf, [0.2, 0.6, 0.2], rtol=1e-13)
    assert hockey_stick(p, p.shifted(1), e) == pytest.approx(0.2, abs=1e-12)


def test_truncated_laplace_tight_and_warns_on_even():
    for n_d, delta in [(5, 0.01), (31, 1e-4)]:
        p, e = truncated_discrete_laplace(n_d, delta)
        assert hockey_stick(p, p.shifted(1), e) == pytest.approx(delta, abs=1e-10)
        assert hockey_stick(p, p.shifted(1), e - 1e-6) > delta
    with pytest.warns(UserWarning):
        truncated_discrete_laplace(6, 0.01)
    with pytest.raises(ValueError):
        truncated_discrete_laplace(5, 0.3)


def test_bounded_baseline_shapes():
    lap = bounded_baseline("laplace", 30, 1e-5)
    g = bounded_baseline("gaussian", 30, 1e-5)
    for d in (lap, g):
        assert d.offset == -30 and d.pmf.size == 61
        assert d.pmf[0] == pytest.approx(1e-5, rel=1e-10)
        np.testing.assert_allclose(d.pmf, d.pmf[::-1], rtol=1e-12)
        assert math.fsum(d.pmf) == pytest.approx(1, abs=1e-12)
    ratios = lap.pmf[31:] / lap.pmf[30:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)
    assert ratios[0] < 1
    second = np.diff(np.log(g.pmf), 2)
    np.testing.assert_allclose(second, second[0], rtol=1e-7)
    with pytest.raises(ValueError):
        bounded_baseline("cauchy", 3, 0.01)
    with pytest.raises(ValueError):
        bounded_baseline("laplace", 3, 0.2)


def test_laplace_baselines_agree():
    # the end-pinned laplace on {-w..w} is the truncated discrete laplace
    a = bounded_baseline("laplace", 10, 1e-4)
    b, _ = truncated_discrete_laplace(21, 1e-4)
    assert total_variation(DiscreteDistribution(0, a.pmf), b) < 1e-10


def test_compare_privacy_ordering():
    c = compare_privacy(21, 1e-4, 4.0)
    assert c.eps_pistar < c.eps_opt_additive
    tol = 1e-9 + c.gap
    assert c.eps_opt_additive <= c.eps_pi * (1 + tol)
    assert c.eps_opt_additive <= c.eps_trunc_laplace * (1 + tol)
    assert c.eps_opt_additive <= c.eps_trunc_gauss * (1 + tol)


def test_noise_rows():
    rows = list(noise_rows(7, 0.01, [2.0, 4.0]))
    assert len(rows) == 14
    assert {r[0] for r in rows} == {2.0, 4.0}
    assert all(0 <= r[2] <= 1 for r in rows)
