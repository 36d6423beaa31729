import math

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from spare import analytics as an
from spare.rectlr import capacity_lower_bound

from reference_tables import GRID, TABLES


def mp_mu(n, r):
    mpmath.mp.dps = 30
    return mpmath.gamma(mpmath.mpf(1) / r) / r * mpmath.mpf(n) ** (1 - mpmath.mpf(1) / r)


def test_mu_matches_high_precision_oracle():
    for n, r in GRID + [(2, 2), (5, 2), (10**6, 27)]:
        exact = mp_mu(n, r)
        assert abs(an.mean_failures_to_wipeout(n, r) - float(exact)) <= 1e-11 * float(exact)


@pytest.mark.parametrize("n,r,value", [(200, 2, 12.5), (600, 20, 424.2), (1000, 26, 750.7)])
def test_mu_spot_values(n, r, value):
    assert round(an.mean_failures_to_wipeout(n, r), 1) == value


def test_mu_theory_column_transcription():
    errors = []
    for n, table in TABLES.items():
        for r, (mu_th, _, s_th, _) in table.items():
            mu = an.mean_failures_to_wipeout(n, r)
            assert round(mu, 1) == mu_th, (n, r)
            assert round(an.mean_overhead_lower_bound(n, r), 2) == s_th, (n, r)
            errors.append(abs(mu - mu_th) / mu_th)
    assert sum(errors) / len(errors) < 0.005


def test_mu_domain():
    for n, r in [(1, 2), (5, 1), (5, 6)]:
        with pytest.raises(ValueError):
            an.mean_failures_to_wipeout(n, r)


def test_mu_monotone_over_grid():
    for n, table in TABLES.items():
        rs = sorted(table)
        vals = [an.mean_failures_to_wipeout(n, r) for r in rs]
        assert all(a < b for a, b in zip(vals, vals[1:]))
    for r in range(2, 13):
        vals = [an.mean_failures_to_wipeout(n, r) for n in (200, 600, 1000)]
        assert vals[0] < vals[1] < vals[2]


@pytest.mark.parametrize("n,k,rho", [(7, 0, 1.0), (200, 0, 1.0), (200, 50, 1 / 3), (200, 100, 1.0)])
def test_patch_probability(n, k, rho):
    assert an.patch_probability(n, k) == pytest.approx(rho, abs=1e-15)


def test_patch_probability_direct_formula():
    for n in (9, 200, 1000):
        for k in range(n):
            n_k = -(-n // (n - k)) * (n - k)
            assert an.patch_probability(n, k) == max(0, 2 * n - n_k) / n_k


def test_overhead_spot_values():
    assert round(an.mean_overhead(600, 20), 1) == 2.8
    assert round(an.mean_overhead_lower_bound(600, 20), 2) == 2.34
    assert round(an.mean_overhead_lower_bound(600, 8), 2) == 1.99
    assert round(an.mean_overhead_lower_bound(200, 2), 2) == 1.84
    assert round(an.mean_overhead_lower_bound(1000, 2), 2) == 1.96


def test_overhead_normalisation_by_mu():
    # the sum runs over k < floor(mu) and is divided by mu itself
    n, r = 200, 2
    mu = an.mean_failures_to_wipeout(n, r)
    terms = [capacity_lower_bound(n, k) for k in range(math.floor(mu))]
    assert an.mean_overhead_lower_bound(n, r) == pytest.approx(sum(terms) / mu)
    assert sum(terms) / math.floor(mu) != pytest.approx(an.mean_overhead_lower_bound(n, r), abs=0.05)


def test_overhead_envelope():
    for n, r in GRID:
        lb = an.mean_overhead_lower_bound(n, r)
        s = an.mean_overhead(n, r)
        assert lb <= s <= lb + 1
        if an.mean_failures_to_wipeout(n, r) <= n / 2:
            assert 1 <= lb <= 2


def test_degenerate_model():
    # mu(2, 2) = Gamma(1/2)/2 * sqrt(2) ~ 1.25, so floor(mu) = 1 is fine;
    # a monkeypatched tiny mu must raise
    assert an.mean_overhead(2, 2) > 0


def test_degenerate_model_error(monkeypatch):
    monkeypatch.setattr(an, "mean_failures_to_wipeout", lambda n, r: 0.5)
    with pytest.raises(an.DegenerateModelError):
        an.mean_overhead(10, 2)


def test_ckpt_period_value():
    expected = 60 + math.sqrt(3600 + 120 * 7200)
    assert an.optimal_ckpt_period(3600, 60, 3600) == pytest.approx(expected, rel=1e-15)
    assert an.optimal_ckpt_period(3600, 60, 3600) == pytest.approx(991.4505, abs=1e-4)


def test_ckpt_period_limits_and_scaling():
    assert an.optimal_ckpt_period(1000, 0, 50) == 0
    for args in [(3600, 60, 3600), (12.3, 4.5, 6.7), (1e5, 1, 0)]:
        assert an.optimal_ckpt_period(*[2 * a for a in args]) == pytest.approx(
            2 * an.optimal_ckpt_period(*args))
    with pytest.raises(ValueError):
        an.optimal_ckpt_period(0, 60, 3600)


def test_availability_limits():
    assert an.availability(1000, 0, 250) == pytest.approx(1000 / 1250)
    assert an.availability(1000, 0, 0) == 1.0
    assert an.availability(math.inf, 60, 3600) == 1.0
    with pytest.raises(ValueError):
        an.availability(0, 60, 3600)
    with pytest.raises(ValueError):
        an.availability(-5, 60, 3600)


def test_availability_reference_cluster_value():
    t_f = an.mean_failures_to_wipeout(600, 8) * 300
    t_c = 60 + math.sqrt(60**2 + 2 * 60 * (t_f + 3600))
    direct = (t_f - t_f * 60 / t_c) / (t_f + t_c / 2 + 3600)
    assert an.availability(t_f, 60, 3600) == pytest.approx(direct, rel=1e-14)
    # the plotted empirical curve sits near 0.94; the closed form gives 0.9186
    assert direct == pytest.approx(0.918567, abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(1, 1e7), st.floats(0, 1e4), st.floats(0, 1e5), st.floats(1.01, 3))
def test_availability_bounds_and_monotonicity(t_f, t_s, t_r, factor):
    a = an.availability(t_f, t_s, t_r)
    assert 0 < a <= 1
    assert an.availability(t_f * factor, t_s, t_r) >= a - 1e-12
    assert an.availability(t_f, t_s, t_r * factor + 1) <= a + 1e-12


def test_normalized_ttt_identity():
    for n, r in GRID:
        mu = an.mean_failures_to_wipeout(n, r)
        j = an.normalized_ttt(n, r, 300, 60, 3600)
        assert j == pytest.approx(an.mean_overhead(n, r) / an.availability(mu * 300, 60, 3600))


def test_normalized_ttt_without_waste_equals_overhead():
    assert an.normalized_ttt(600, 8, 300, 0, 0) == pytest.approx(an.mean_overhead(600, 8))


def _j_curve(n, lower_bound=False):
    rs = sorted(TABLES[n])
    return rs, [an.normalized_ttt(n, r, 300, 60, 3600, lower_bound=lower_bound) for r in rs]


def test_j_has_interior_minimum_n600():
    rs, js = _j_curve(600)
    i = min(range(len(js)), key=js.__getitem__)
    assert 0 < i < len(js) - 1
    # strictly decreasing then increasing around the minimum
    assert all(a > b for a, b in zip(js[:i], js[1:i + 1]))
    assert all(a < b for a, b in zip(js[i:], js[i + 1:]))


@pytest.mark.parametrize("n", [200, 600, 1000])
def test_j_argmin_near_optimal_redundancy_lower_bound_form(n):
    rs, js = _j_curve(n, lower_bound=True)
    best = rs[min(range(len(js)), key=js.__getitem__)]
    assert abs(best - an.optimal_redundancy(n)) <= 1


@pytest.mark.xfail(strict=True, reason="with the patch term the J minimum sits at r=6/5/5, "
                   "not within 1 of r*=8/10/10; see decisions ledger")
@pytest.mark.parametrize("n", [200, 600, 1000])
def test_j_argmin_near_optimal_redundancy(n):
    rs, js = _j_curve(n)
    best = rs[min(range(len(js)), key=js.__getitem__)]
    assert abs(best - an.optimal_redundancy(n)) <= 1


@pytest.mark.parametrize("n,r", [(200, 8), (600, 10), (1000, 10), (2, 1), (4, 2), (1024, 10)])
def test_optimal_redundancy(n, r):
    assert an.optimal_redundancy(n) == r


def test_optimal_redundancy_domain():
    with pytest.raises(ValueError):
        an.optimal_redundancy(1)


def test_analytic_model():
    m = an.AnalyticModel(600, 8)
    assert m.system_mtbf == pytest.approx(m.mu * 300)
    assert m.normalized_ttt == pytest.approx(an.normalized_ttt(600, 8, 300, 60, 3600))
    assert set(m.row()) == {"r", "mu", "overhead", "overhead_lb", "ckpt_period", "availability", "J"}
    with pytest.raises(ValueError):
        an.AnalyticModel(600, 1)
    with pytest.raises(ValueError):
        an.AnalyticModel(600, 8, node_mtbf=0)
