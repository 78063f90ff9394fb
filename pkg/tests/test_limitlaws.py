import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from asiplab.dynamics import CatMap
from asiplab.errors import (DegenerateVariance, HypothesisError,
                            InsufficientSamples, NonCentered)
from asiplab.limitlaws import (GreenKubo, ObservableSequence, SeriesEnsemble,
                               _ceil_pow, _ks_continuous, _ks_lattice,
                               asclt_ks, block_approximation_diagnostic,
                               block_schedule, clt_ks, epsilon_budget,
                               green_kubo, lil_running_stat, long_orbit,
                               loglog_fit, moment_scaling_fit, moment_times,
                               resolve_workers, simulate_process,
                               variance_curve, wip_covariance_check)
from asiplab.observables import (CatCharacter, Coboundary, NegLogCosPhi,
                                 ShrinkingTargetFamily, TrigBoundary)


def iid(E, n, seed=0):
    return SeriesEnsemble.from_series(
        np.random.default_rng(seed).standard_normal((E, n)))


# --- simulation ------------------------------------------------------------

def test_constant_sum_catmap():
    ens = simulate_process(CatMap(), CatCharacter((0, 0)), 100, 1, 0)
    assert np.array_equal(ens.partial_sums[0], ens.times.astype(float))


def test_constant_sum_billiard(table):
    fam = ShrinkingTargetFamily.constant_family(1.0, n_max=200)
    ens = simulate_process(table, fam, 200, 1, 0, times=[1, 50, 200])
    assert np.array_equal(ens.partial_sums[0], [1.0, 50.0, 200.0])


def test_centered_mean_near_zero(table):
    ens = simulate_process(table, NegLogCosPhi(center=True), 500, 400, 11)
    S = ens.sums_at(500)
    assert abs(S.mean()) < 3 * S.std(ddof=1) / math.sqrt(len(S))
    assert ens.n_truncated == 0 and not ens.flagged


def test_simulation_deterministic_across_workers(table):
    f = NegLogCosPhi(center=True)
    a = simulate_process(table, f, 300, 64, 5, workers=1)
    b = simulate_process(table, f, 300, 64, 5, workers=1)
    c = simulate_process(table, f, 300, 64, 5, workers=4)
    assert a.partial_sums.tobytes() == b.partial_sums.tobytes()
    assert a.partial_sums.tobytes() == c.partial_sums.tobytes()
    d = simulate_process(table, f, 300, 64, 6, workers=1)
    assert a.partial_sums.tobytes() != d.partial_sums.tobytes()


def test_simulation_rejects_wrong_system(table):
    with pytest.raises(TypeError):
        simulate_process(table, CatCharacter(), 10, 2, 0)


def test_modulated_sequence(table):
    f = TrigBoundary(table)
    a = long_orbit(table, ObservableSequence.stationary(f), 100, 3)
    b = long_orbit(table, ObservableSequence.modulated(f, 0.5), 100, 3)
    assert np.allclose(b, a * np.arange(1, 101) ** 0.5)


def test_sums_at_unrecorded_time():
    ens = iid(5, 10)
    assert np.all(ens.sums_at(0) == 0)
    ens2 = SeriesEnsemble.from_series(np.ones((2, 10)), times=[5, 10])
    with pytest.raises(KeyError):
        ens2.sums_at(7)


def test_resolve_workers(monkeypatch):
    monkeypatch.setenv("ASIPLAB_WORKERS", "3")
    assert resolve_workers() == 3
    assert resolve_workers(2) == 2
    monkeypatch.delenv("ASIPLAB_WORKERS")
    assert resolve_workers() == 1
    with pytest.raises(ValueError):
        resolve_workers(0)


def test_moment_times():
    assert moment_times([2, 5], 20).tolist() == [2, 4, 5, 6, 8, 10, 15]


# --- variance and Green-Kubo -----------------------------------------------

def test_variance_curve_iid():
    E = 4000
    vc = variance_curve(iid(E, 200, 1), [10, 50, 200])
    assert np.all(np.abs(vc.variance - vc.grid) <= 3 * vc.grid * math.sqrt(2 / E))
    assert np.all(vc.stderr > 0)


def test_coboundary_variance_bounded(table):
    f = Coboundary(TrigBoundary(table), table)
    ens = simulate_process(table, f, 2000, 200, 2, times=[10, 100, 1000, 2000])
    vc = variance_curve(ens, ens.times)
    # |S_n| = |g(x_0) - g(x_n)| <= 2
    assert np.all(vc.variance <= 4.0)
    assert np.all(np.abs(ens.partial_sums) <= 2.0 + 1e-9)


def test_green_kubo_zero():
    est = green_kubo(np.zeros(100_000), L=5)
    assert est.sigma2 == 0.0


def test_green_kubo_ar1_oracle():
    """AR(1) with coefficient rho and unit innovations has long-run variance
    1 / (1 - rho)^2."""
    rho = 0.5
    e = np.random.default_rng(3).standard_normal(2_000_000)
    from scipy.signal import lfilter
    x = lfilter([1.0], [1.0, -rho], e)
    est = green_kubo(x)
    assert est.sigma2 == pytest.approx(1 / (1 - rho) ** 2, abs=4 * est.sigma2_stderr)
    assert 5 <= est.lag <= 40
    assert est.autocov[1] == pytest.approx(rho / (1 - rho ** 2), abs=0.02)


def test_green_kubo_requires_centering():
    x = np.random.default_rng(0).standard_normal(100_000) + 1.0
    with pytest.raises(NonCentered):
        green_kubo(x, L=3)


def test_green_kubo_short_series():
    with pytest.raises(InsufficientSamples):
        green_kubo(np.ones(100), L=3)


def test_green_kubo_is_sklearn_estimator():
    gk = GreenKubo(lag=4, n_batches=20)
    assert gk.get_params()["lag"] == 4
    assert gk.set_params(lag=6).lag == 6


def test_green_kubo_ensemble_input():
    ens = SeriesEnsemble.from_series(
        np.random.default_rng(4).standard_normal((4, 50_000)))
    est = green_kubo(ens, L=5)
    assert est.sigma2 == pytest.approx(1.0, abs=5 * est.sigma2_stderr)
    with pytest.raises(ValueError):
        green_kubo(SeriesEnsemble.from_series(np.ones((2, 10)),
                                              keep_series=False))


# --- moments ---------------------------------------------------------------

def test_moment_scaling_iid():
    grid = [10, 20, 40, 80, 160]
    n = 800
    X = np.random.default_rng(5).standard_normal((4000, n))
    ens = SeriesEnsemble.from_series(X, moment_times(grid, n))
    ms = moment_scaling_fit(ens, grid, 4)
    assert ms.kappa2 == pytest.approx(0.5, abs=0.05)
    assert ms.kappa_p == pytest.approx(0.5, abs=0.05)


def test_moment_scaling_rejects_high_p():
    with pytest.raises(ValueError):
        moment_scaling_fit(iid(10, 10), [5, 10], p=10)


def test_loglog_fit_exact():
    x = np.array([1, 2, 4, 8.0])
    fit = loglog_fit(x, 3 * x ** 0.7)
    assert fit.slope == pytest.approx(0.7, abs=1e-12)
    assert fit.upper() >= fit.slope


# --- distributional tests --------------------------------------------------

def test_clt_ks_iid():
    E = 5000
    res = clt_ks(iid(E, 20, 6), 20)
    assert res.statistic < 1.63 / math.sqrt(E)
    assert res.sample_size == E


def test_clt_ks_degenerate():
    ens = SeriesEnsemble.from_series(np.ones((10, 5)))
    with pytest.raises(DegenerateVariance):
        clt_ks(ens, 5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=300))
def test_ks_matches_scipy(values):
    z = np.array(values)
    ours = _ks_continuous(z.copy())
    ref = stats.kstest(z, "norm").statistic
    assert 0.0 <= ours <= 1.0
    assert ours == pytest.approx(ref, abs=1e-12)


def test_ks_lattice_binomial():
    """Lattice-corrected KS of a large binomial is close to zero while the
    plain KS is floored by the atom size."""
    rng = np.random.default_rng(7)
    S = rng.binomial(400, 0.5, 20000).astype(float)
    plain = _ks_continuous((S - 200) / 10)
    corrected = _ks_lattice(S, 200.0, 10.0, 1.0)
    assert corrected < 0.015 < plain


def test_wip_iid():
    n = 400
    X = np.random.default_rng(8).standard_normal((5000, n))
    ens = SeriesEnsemble.from_series(X, [100, 200, 400])
    w = wip_covariance_check(ens, (0.25, 0.5, 1.0))
    assert w.max_abs_error <= 0.05
    assert w.covariance[-1, -1] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.xfail(strict=False, reason=(
    "log-averaged law converges at rate 1/sqrt(log n); over 20 i.i.d. seeds "
    "at n = 1e7 only 2 fell below 0.1 (median 0.15), see decisions ledger"))
def test_asclt_iid_long():
    x = np.random.default_rng(9).standard_normal(10 ** 7)
    assert asclt_ks(x, 1.0).statistic < 0.1


def test_asclt_iid_converges():
    """Averaged over seeds, the statistic shrinks as n grows by 1e3."""
    short, long_ = [], []
    for s in range(8):
        x = np.random.default_rng(100 + s).standard_normal(10 ** 6)
        short.append(asclt_ks(x, 1.0, 10 ** 3).statistic)
        long_.append(asclt_ks(x, 1.0).statistic)
    assert np.mean(long_) < np.mean(short)


def test_asclt_atoms_switch():
    x = np.random.default_rng(10).standard_normal(10 ** 4)
    a = asclt_ks(x, 1.0).statistic
    b = asclt_ks(x, 1.0, normalize_atoms=False).statistic
    assert 0 <= a <= 1 and 0 <= b <= 1 and a != b


def test_asclt_callable_sigma():
    x = np.random.default_rng(11).standard_normal(10 ** 4)
    assert asclt_ks(x, 2.0).statistic == pytest.approx(
        asclt_ks(x, lambda k: 2.0 * k).statistic, abs=1e-14)


def test_lil_zero_series():
    res = lil_running_stat(np.zeros(10 ** 4), 1.0)
    assert np.all(res.running_max == 0) and res.maximum == 0


def test_lil_short_series():
    with pytest.raises(InsufficientSamples):
        lil_running_stat(np.zeros(10), 1.0)


# --- blocks and budget -----------------------------------------------------

def test_block_schedule_examples():
    assert block_schedule(1.0, 5).tau.tolist() == [-1, 0, 1, 3, 6, 10]
    assert block_schedule(0.5, 6).tau.tolist() == [-1, 0, 1, 3, 5, 7, 10]


@settings(max_examples=60, deadline=None)
@given(eps=st.sampled_from([0.1, 0.25, 1 / 3, 0.5, 0.75, 1.0]),
       jmax=st.integers(2, 200))
def test_block_schedule_identity(eps, jmax):
    sched = block_schedule(eps, jmax)
    tau = sched.tau
    assert tau[0] == -1 and tau[1] == 0
    fe = Fraction(eps).limit_denominator(64)
    for j in range(2, jmax + 1):
        i = j - 1
        # exact ceil(i^eps) by integer search: c^q >= i^p > (c-1)^q
        c = tau[j] - tau[j - 1]
        p, q = fe.numerator, fe.denominator
        assert c ** q >= i ** p > (c - 1) ** q
    assert np.array_equal(sched.lengths(),
                          [_ceil_pow(j, eps) for j in range(1, jmax)])
    lo, hi = sched.block(1)
    assert (lo, hi) == (0, 1)


@settings(max_examples=200, deadline=None)
@given(i=st.integers(1, 10 ** 6), eps=st.sampled_from([0.5, 0.2, 0.75]),
       scale=st.sampled_from([1.0, 0.2]))
def test_ceil_pow_exact(i, eps, scale):
    c = _ceil_pow(i, eps, scale)
    fe, fs = Fraction(eps).limit_denominator(64), Fraction(scale).limit_denominator(64)
    p, q = fe.numerator, fe.denominator
    assert (Fraction(c) / fs) ** q >= i ** p
    assert (Fraction(c - 1) / fs) ** q < i ** p


def _budget_oracle(k2, kp, lam):
    g1 = lambda e: 2 * e * kp + 1 / (4 - e) - 2 * k2 * lam
    g2 = lambda e: e * kp / k2 - (4 * lam - 1)
    roots = [optimize.brentq(g, 0, 1) if g(1) > 0 else 1.0 for g in (g1, g2)]
    return min(roots)


def test_epsilon_budget_examples():
    a = epsilon_budget(0.5, 0.5, 0.45)
    assert a.eps == pytest.approx(0.186, abs=1e-3)
    assert a.supremum == pytest.approx(_budget_oracle(0.5, 0.5, 0.45), abs=1e-10)
    b = epsilon_budget(0.5, 1.0, 0.3)
    assert b.supremum == pytest.approx(_budget_oracle(0.5, 1.0, 0.3), abs=1e-10)
    assert b.eps == pytest.approx(0.0247, abs=1e-3)
    with pytest.raises(HypothesisError):
        epsilon_budget(0.5, 0.5, 0.2)


@settings(max_examples=200, deadline=None)
@given(k2=st.floats(0.26, 2.0), ratio=st.floats(1.0, 4.0),
       u=st.floats(0.001, 0.999))
def test_epsilon_budget_strict(k2, ratio, u):
    kp = k2 * ratio
    lo = max(0.25, 1 / (8 * k2))
    lam = lo + u * (0.5 - lo)
    assume(lo < lam < 0.5)
    res = epsilon_budget(k2, kp, lam)
    if res.feasible:
        a, b = res.constraints()
        assert a > 0 and b > 0
        assert res.eps == pytest.approx(0.99 * res.supremum)
    else:
        assert res.eps is None


def test_block_diagnostic_constant(table):
    const = lambda s, r, p: np.full_like(p, 2.0)
    diag = block_approximation_diagnostic(const, table, [4, 16, 64], 0.5,
                                          N=20_000, rng=np.random.default_rng(0))
    assert np.all(diag.sup_gaps == 0)
    assert diag.depths.tolist() == [1, 1, 2]
