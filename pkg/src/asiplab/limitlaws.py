"""Ensemble simulation of ``X_k = f_k o T^k`` and the limit-law test battery.

Every orbit ``i`` of an ensemble draws its initial condition from its own
stream ``orbit_rng(master_seed, i)``, and all reductions run in orbit-index
order, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator

from ._validation import check_grid, check_series, geometric_grid, orbit_rng
from .dynamics import (BilliardTable, CatMap, billiard_trajectory,
                       cat_trajectory)
from .errors import (DegenerateVariance, HypothesisError, InsufficientSamples,
                     NonCentered, TruncatedOrbit)
from .measure import SRBMeasure, conditional_expectation_on_cells, cylinder_partition
from .observables import Observable, ShrinkingTargetFamily


# --- observable sequences --------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObservableSequence:
    """The sequence ``f_0, f_1, ...`` driving a process.

    ``stationary``: ``f_k = f``. ``targets``: ``f_k`` is the indicator of the
    ``k``-th target (optionally minus its mass). ``modulated``:
    ``f_k = (k + 1)^exponent * f``.
    """

    mode: str
    observable: Observable | None = None
    family: ShrinkingTargetFamily | None = None
    exponent: float = 0.0
    center: bool = False

    @classmethod
    def stationary(cls, f):
        return cls("stationary", observable=f)

    @classmethod
    def targets(cls, family, center=False):
        return cls("targets", family=family, center=center)

    @classmethod
    def modulated(cls, f, exponent):
        return cls("modulated", observable=f, exponent=float(exponent))

    @property
    def system(self):
        if self.mode == "targets":
            return "billiard"
        return self.observable.system

    def values(self, traj):
        n = traj.n_steps
        if self.mode == "targets":
            x = self.family.contains(np.arange(n), traj.phi[:n]).astype(float)
            if self.center:
                x -= self.family.masses(n)
            return x
        x = self.observable.along_orbit(traj)
        if self.mode == "modulated":
            x = x * np.arange(1, n + 1, dtype=float) ** self.exponent
        return x

    def spec(self):
        out = {"mode": self.mode}
        if self.observable is not None:
            out["observable"] = self.observable.spec()
        if self.family is not None:
            out["family"] = self.family.spec()
            out["center"] = self.center
        if self.mode == "modulated":
            out["exponent"] = self.exponent
        return out


def as_sequence(obs_or_seq):
    if isinstance(obs_or_seq, ObservableSequence):
        return obs_or_seq
    if isinstance(obs_or_seq, Observable):
        return ObservableSequence.stationary(obs_or_seq)
    if isinstance(obs_or_seq, ShrinkingTargetFamily):
        return ObservableSequence.targets(obs_or_seq)
    raise TypeError(f"cannot build a sequence from {type(obs_or_seq).__name__}")


# --- ensembles -------------------------------------------------------------

@dataclass(eq=False)
class SeriesEnsemble:
    """Partial sums ``S_t = sum_{k<t} X_k`` of ``E`` orbits at the recorded
    times.

    Attributes
    ----------
    times : ndarray of int
        Strictly increasing recorded times in ``[1, n_max]``.
    partial_sums : ndarray, shape (n_kept, len(times))
    series : ndarray or None
        Full series ``X_0 .. X_{n_max-1}`` when requested.
    orbit_index : ndarray
        Original index of every kept orbit.
    n_truncated : int
        Orbits dropped because they hit a tangential collision.
    """

    system: str
    sequence: dict
    n_max: int
    E: int
    master_seed: int
    times: np.ndarray
    partial_sums: np.ndarray
    orbit_index: np.ndarray
    n_truncated: int = 0
    series: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_orbits(self) -> int:
        return self.partial_sums.shape[0]

    @property
    def exclusion_fraction(self) -> float:
        return self.n_truncated / self.E if self.E else 0.0

    @property
    def flagged(self) -> bool:
        return self.exclusion_fraction >= 0.01

    def sums_at(self, n):
        """Column ``S_n`` over the ensemble; ``n = 0`` gives zeros."""
        n = int(n)
        if n == 0:
            return np.zeros(self.n_orbits)
        j = np.searchsorted(self.times, n)
        if j >= len(self.times) or self.times[j] != n:
            raise KeyError(f"time {n} was not recorded")
        return self.partial_sums[:, j]

    @classmethod
    def from_series(cls, X, times=None, *, system="synthetic", seed=0,
                    keep_series=True):
        """Wrap injected series of shape ``(E, n)``."""
        X = check_series(X)
        E, n = X.shape
        times = (np.arange(1, n + 1) if times is None
                 else check_grid(times, n))
        S = np.cumsum(X, axis=1)[:, times - 1]
        return cls(system, {"mode": "injected"}, n, E, seed, times, S,
                   np.arange(E), 0, X if keep_series else None)


def resolve_workers(workers=None):
    """``workers`` if given, else ``$ASIPLAB_WORKERS``, else 1."""
    if workers is None:
        workers = os.environ.get("ASIPLAB_WORKERS", 1)
    workers = int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def moment_times(grid, n_max, offsets=(0, 1, 2, 4)):
    """Times needed to form ``S_{m+n} - S_m`` for ``m in {0, n, 2n, 4n}``."""
    grid = np.asarray(grid, dtype=np.int64)
    t = set()
    for n in grid:
        for a in offsets:
            if a * n + n <= n_max:
                t.add(int(a * n + n))
                if a:
                    t.add(int(a * n))
    return np.array(sorted(t), dtype=np.int64)


def _initial_condition(system, rng, measure):
    if isinstance(system, CatMap):
        X, Y = rng.integers(0, 2 ** 64, size=2, dtype=np.uint64,
                            endpoint=False)
        return X, Y
    s, r, phi = measure.sample(rng, 1)
    return int(s[0]), float(r[0]), float(phi[0])


def _one_orbit(system, seq, n, warmup, rng, measure):
    start = _initial_condition(system, rng, measure)
    if isinstance(system, CatMap):
        traj = cat_trajectory(start[0], start[1], n)
    else:
        traj = billiard_trajectory(system, start, n, warmup=warmup)
    return seq.values(traj)


def simulate_process(system, observable_seq, n_max, E, master_seed, *,
                     times=None, keep_series=False, warmup=50, workers=None):
    """Simulate ``E`` independent SRB-started orbits of length ``n_max``.

    Parameters
    ----------
    system : BilliardTable or CatMap
    observable_seq : Observable, ShrinkingTargetFamily or ObservableSequence
    times : array_like of int, optional
        Times at which partial sums are kept. Defaults to a 40-point
        geometric grid plus ``n_max``.
    keep_series : bool
        Keep every ``X_k`` (memory ``E * n_max`` doubles).
    warmup : int
        Billiard only: collisions run before ``x_0`` while a cone vector
        settles onto the unstable direction. ``x_0`` remains SRB-distributed
        by invariance.
    workers : int, optional
        Thread count (``$ASIPLAB_WORKERS`` or 1 if unset). The compiled
        orbit kernels release the GIL.

    Orbits that hit a tangential collision are excluded and counted in
    ``n_truncated``; the ensemble is flagged when they exceed 1%.
    """
    seq = as_sequence(observable_seq)
    if isinstance(system, CatMap):
        tag, measure = "catmap", None
    elif isinstance(system, BilliardTable):
        tag, measure = "billiard", SRBMeasure(system)
    else:
        raise TypeError("system must be a BilliardTable or CatMap")
    if seq.system != tag:
        raise TypeError(f"observable is defined on the {seq.system}, not the {tag}")
    n_max, E = int(n_max), int(E)
    if n_max < 1 or E < 1:
        raise ValueError("need n_max >= 1 and E >= 1")
    if times is None:
        times = np.union1d(geometric_grid(1, n_max, 40), [n_max])
    times = check_grid(times, n_max)
    sums = np.zeros((E, len(times)))
    series = np.zeros((E, n_max)) if keep_series else None
    ok = np.ones(E, dtype=bool)

    def work(i):
        rng = orbit_rng(master_seed, i)
        try:
            x = _one_orbit(system, seq, n_max, warmup, rng, measure)
        except TruncatedOrbit:
            ok[i] = False
            return
        c = np.cumsum(x)
        sums[i] = c[times - 1]
        if keep_series:
            series[i] = x

    workers = resolve_workers(workers)
    if workers == 1:
        for i in range(E):
            work(i)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, range(E), chunksize=max(1, E // (8 * workers))))
    idx = np.flatnonzero(ok)
    ens = SeriesEnsemble(tag, seq.spec(), n_max, E, int(master_seed), times,
                         sums[idx], idx, int(E - len(idx)),
                         series[idx] if keep_series else None)
    ens.metadata["warmup"] = warmup if tag == "billiard" else 0
    return ens


def long_orbit(system, observable, n, seed, *, warmup=50):
    """A single SRB-started orbit of length ``n`` (orbit index 0 of
    ``seed``), retried on the next index if it grazes."""
    seq = as_sequence(observable)
    measure = None if isinstance(system, CatMap) else SRBMeasure(system)
    for i in range(1000):
        try:
            return _one_orbit(system, seq, int(n), warmup,
                              orbit_rng(seed, i), measure)
        except TruncatedOrbit:
            continue
    raise TruncatedOrbit("every attempted long orbit grazed")


# --- variance curves -------------------------------------------------------

@dataclass(frozen=True)
class VarianceCurve:
    grid: np.ndarray
    variance: np.ndarray
    stderr: np.ndarray
    n_orbits: int


def _var_and_se(S):
    """Unbiased variance per column and its standard error from the fourth
    central moment."""
    E = S.shape[0]
    if E < 4:
        raise InsufficientSamples("need at least 4 orbits for a variance")
    d = S - S.mean(axis=0)
    v = (d * d).sum(axis=0) / (E - 1)
    m4 = (d ** 4).mean(axis=0)
    se2 = (m4 - (E - 3) / (E - 1) * v * v) / E
    return v, np.sqrt(np.maximum(se2, 0.0))


def variance_curve(ens: SeriesEnsemble, grid=None) -> VarianceCurve:
    """Ensemble variance of ``S_n`` on ``grid`` (defaults to all recorded
    times)."""
    grid = ens.times if grid is None else check_grid(grid, ens.n_max)
    S = np.column_stack([ens.sums_at(n) for n in grid])
    v, se = _var_and_se(S)
    return VarianceCurve(np.asarray(grid), v, se, ens.n_orbits)


# --- Green-Kubo ------------------------------------------------------------

@dataclass(frozen=True)
class GKEstimate:
    autocov: np.ndarray
    autocov_stderr: np.ndarray
    sigma2: float
    sigma2_stderr: float
    lag: int
    first_moment: float
    mean: float
    mean_stderr: float
    sample_size: int


class GreenKubo(BaseEstimator):
    """Green-Kubo variance ``C(0) + 2 sum_{k=1}^L C(k)`` of a centred series.

    Autocovariances are raw lagged products (the observable is assumed
    centred; a mean more than ``mean_tol`` standard errors from zero raises
    :class:`NonCentered`). Standard errors come from ``n_batches`` batch
    means. With ``lag=None`` the truncation lag is the first ``k`` such that
    ``|C(j)| < 2 SE(j)`` for ``j = k, k+1, k+2``, searched up to
    ``max_lag``.
    """

    def __init__(self, lag=None, max_lag=200, n_batches=50, consecutive=3,
                 mean_tol=3.0, check_centered=True):
        self.lag = lag
        self.max_lag = max_lag
        self.n_batches = n_batches
        self.consecutive = consecutive
        self.mean_tol = mean_tol
        self.check_centered = check_centered

    def _batched(self, v):
        B = self.n_batches
        m = len(v) // B
        return v[:m * B].reshape(B, m).mean(axis=1)

    def fit(self, X):
        X = check_series(X)
        B = self.n_batches
        if X.shape[1] < B * (self.max_lag + 2):
            raise InsufficientSamples("series too short for the batch layout")
        if not np.any(X):
            L = 0 if self.lag is None else int(self.lag)
            z = np.zeros(L + 1)
            self.estimate_ = GKEstimate(z, z, 0.0, 0.0, L, 0.0, 0.0, 0.0,
                                        X.size)
            return self
        bm = np.mean([self._batched(x) for x in X], axis=0)
        mean = float(bm.mean())
        mean_se = float(bm.std(ddof=1) / math.sqrt(B))
        if self.check_centered and abs(mean) > self.mean_tol * mean_se:
            raise NonCentered(f"series mean {mean:.3g} is {abs(mean) / mean_se:.1f}"
                              f" standard errors from zero")
        top = self.max_lag if self.lag is None else int(self.lag)
        batches = np.empty((top + 1, B))
        for k in range(top + 1):
            batches[k] = np.mean([self._batched(x[:len(x) - k] * x[k:])
                                  for x in X], axis=0)
        C = batches.mean(axis=1)
        Cse = batches.std(axis=1, ddof=1) / math.sqrt(B)
        if self.lag is None:
            L = self._auto_lag(C, Cse)
        else:
            L = int(self.lag)
        per_batch = batches[0] + 2.0 * batches[1:L + 1].sum(axis=0)
        sigma2 = float(C[0] + 2.0 * C[1:L + 1].sum())
        k = np.arange(1, L + 1)
        self.estimate_ = GKEstimate(
            C[:L + 1], Cse[:L + 1], sigma2,
            float(per_batch.std(ddof=1) / math.sqrt(B)), L,
            float(np.sum(k * np.abs(C[1:L + 1]))), mean, mean_se, X.size)
        return self

    def _auto_lag(self, C, Cse):
        quiet = np.abs(C) < 2.0 * Cse
        c = self.consecutive
        for k in range(1, len(C) - c + 1):
            if quiet[k:k + c].all():
                return k
        return len(C) - 1


def green_kubo(data, L=None, **kwargs) -> GKEstimate:
    """Green-Kubo estimate from a long orbit (1-D) or an ensemble with
    stored series."""
    if isinstance(data, SeriesEnsemble):
        if data.series is None:
            raise ValueError("ensemble was simulated without keep_series")
        data = data.series
    return GreenKubo(lag=L, **kwargs).fit(data).estimate_


# --- moment scaling --------------------------------------------------------

@dataclass(frozen=True)
class Fit:
    slope: float
    stderr: float
    intercept: float
    n_points: int

    def upper(self, level=0.95):
        """One-sided upper confidence bound on the slope."""
        if self.n_points <= 2:
            return float("nan")
        t = stats.t.ppf(level, self.n_points - 2)
        return self.slope + t * self.stderr


def loglog_fit(x, y) -> Fit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    good = (x > 0) & (y > 0)
    if good.sum() < 2:
        raise InsufficientSamples("need two positive points for a fit")
    r = stats.linregress(np.log(x[good]), np.log(y[good]))
    return Fit(float(r.slope), float(r.stderr), float(r.intercept),
               int(good.sum()))


@dataclass(frozen=True)
class MomentScaling:
    kappa2: float
    kappa2_stderr: float
    kappa_p: float
    kappa_p_stderr: float
    p: float
    grid: np.ndarray
    l2_norms: np.ndarray
    lp_norms: np.ndarray


def moment_scaling_fit(ens: SeriesEnsemble, grid, p=4.0, *,
                       center=True) -> MomentScaling:
    """Log-log slopes of ``||S_n||_2`` and ``max_m ||S_{m+n} - S_m||_p``.

    ``m`` runs over ``{0, n, 2n, 4n}`` where recorded (see
    :func:`moment_times`). With ``center`` the ensemble mean of each sum is
    removed first, which turns the ``L^2`` norm into the standard deviation
    and makes non-centred sequences (raw target indicators) usable.
    """
    if p > 8:
        raise ValueError("moments above 8 are too noisy to fit")
    grid = check_grid(grid, ens.n_max)
    recorded = set(ens.times.tolist())
    l2 = np.empty(len(grid))
    lp = np.empty(len(grid))
    for i, n in enumerate(grid):
        S = ens.sums_at(n)
        if center:
            S = S - S.mean()
        l2[i] = math.sqrt(np.mean(S * S))
        best = 0.0
        for a in (0, 1, 2, 4):
            m = a * n
            if m + n > ens.n_max or (m and m not in recorded) \
                    or (m + n) not in recorded:
                continue
            D = ens.sums_at(m + n) - ens.sums_at(m)
            if center:
                D = D - D.mean()
            best = max(best, float(np.mean(np.abs(D) ** p) ** (1.0 / p)))
        lp[i] = best
    f2 = loglog_fit(grid, l2)
    fp = loglog_fit(grid, lp)
    return MomentScaling(f2.slope, f2.stderr, fp.slope, fp.stderr, float(p),
                         grid, l2, lp)


# --- distributional tests --------------------------------------------------

@dataclass(frozen=True)
class KSResult:
    statistic: float
    sample_size: int
    law: str = "N(0,1)"
    n: int | None = None
    scale: float | None = None
    lattice_step: float | None = None


def _ks_continuous(z, weights=None):
    """Sup distance between the (weighted) empirical law of ``z`` and
    N(0, 1)."""
    order = np.argsort(z, kind="stable")
    z = z[order]
    if weights is None:
        w = np.full(len(z), 1.0 / len(z))
    else:
        w = weights[order] / weights.sum()
    hi = np.cumsum(w)
    lo = hi - w
    cdf = stats.norm.cdf(z)
    return float(min(1.0, max(np.max(np.abs(hi - cdf)),
                              np.max(np.abs(lo - cdf)))))


def _ks_lattice(S, loc, scale, h):
    """Sup distance between the empirical law of lattice-valued ``S`` and
    N(loc, scale^2) rounded to the same lattice (continuity correction)."""
    S = np.asarray(S, dtype=float)
    base = S.min()
    k = np.rint((S - base) / h).astype(np.int64)
    counts = np.bincount(k)
    F = np.cumsum(counts) / len(S)
    pts = base + h * np.arange(len(counts))
    G = stats.norm.cdf((pts + h / 2 - loc) / scale)
    below = stats.norm.cdf((base - h / 2 - loc) / scale)
    d = max(np.max(np.abs(F - G)), below)
    return float(min(1.0, d))


def clt_ks(ens: SeriesEnsemble, n, *, center=None, lattice_step=None) -> KSResult:
    """KS distance of ``(S_n - c) / sigma_n`` over the ensemble to N(0, 1).

    ``sigma_n`` is the ensemble standard deviation of ``S_n``. ``center`` is
    subtracted first (``None`` for none, ``"ensemble"`` for the sample mean,
    or a number such as an analytic mean). For integer-valued sums pass
    ``lattice_step`` (e.g. 1 for hit counts): the reference law is then the
    normal rounded to the lattice, which removes the ``O(h / sigma)`` floor a
    discrete law has against any continuous one.
    """
    S = ens.sums_at(n).astype(float)
    if center is None:
        c = 0.0
    elif center == "ensemble":
        c = float(S.mean())
    else:
        c = float(center)
    sd = float(np.std(S, ddof=1))
    if not sd > 0:
        raise DegenerateVariance(f"S_{n} has zero variance over the ensemble")
    if lattice_step:
        D = _ks_lattice(S, c, sd, float(lattice_step))
    else:
        D = _ks_continuous((S - c) / sd)
    return KSResult(D, len(S), n=int(n), scale=sd, lattice_step=lattice_step)


@dataclass(frozen=True)
class WIPCheck:
    times: np.ndarray
    covariance: np.ndarray
    expected: np.ndarray
    max_abs_error: float
    n: int
    n_orbits: int


def wip_covariance_check(ens: SeriesEnsemble, times=(0.25, 0.5, 1.0), n=None):
    """Covariance matrix of ``S_{floor(n t)} / sigma_n`` against
    ``min(s, t)``. The needed times must have been recorded."""
    n = ens.n_max if n is None else int(n)
    ts = np.asarray(times, dtype=float)
    if np.any((ts <= 0) | (ts > 1)):
        raise ValueError("times must lie in (0, 1]")
    sd = float(np.std(ens.sums_at(n), ddof=1))
    if not sd > 0:
        raise DegenerateVariance("S_n has zero variance")
    Z = np.column_stack([ens.sums_at(int(math.floor(n * t))) for t in ts]) / sd
    C = np.atleast_2d(np.cov(Z, rowvar=False))
    expected = np.minimum.outer(ts, ts)
    return WIPCheck(ts, C, expected, float(np.max(np.abs(C - expected))), n,
                    ens.n_orbits)


def _sigma2_curve(sigma2, k):
    if callable(sigma2):
        return np.asarray(sigma2(k), dtype=float)
    return float(sigma2) * k


def asclt_ks(series, sigma2, n_max=None, *, normalize_atoms=True) -> KSResult:
    """KS distance of the logarithmic empirical law of a single orbit.

    The measure is ``sum_{k<=n} sigma_k^-2 delta_{S_k / sigma_k}`` with the
    weights rescaled to total mass one (the ``1 / log sigma_n^2`` prefactor
    only gets the mass right asymptotically and only when
    ``sigma_k^2 = k``). ``sigma2`` is ``sigma_f^2`` (stationary model
    ``sigma_k^2 = k sigma_f^2``) or a callable ``k -> sigma_k^2``. With
    ``normalize_atoms=False`` atoms sit at the raw ``S_k``.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = len(x) if n_max is None else int(n_max)
    x = x[:n]
    k = np.arange(1, n + 1, dtype=float)
    s2 = _sigma2_curve(sigma2, k)
    if not np.all(s2 > 0):
        raise DegenerateVariance("sigma_k^2 must be positive")
    S = np.cumsum(x)
    z = S / np.sqrt(s2) if normalize_atoms else S
    D = _ks_continuous(z, 1.0 / s2)
    return KSResult(D, n, law="N(0,1)", n=n)


@dataclass(frozen=True)
class LILResult:
    n: np.ndarray
    running_max: np.ndarray
    maximum: float
    band: tuple
    in_band: bool


def lil_running_stat(series, sigma2, n_min=1000, band=(0.5, 1.3),
                     points=200) -> LILResult:
    """Running maximum of ``S_n / sqrt(2 sigma_n^2 log log sigma_n^2)`` over
    ``n in [n_min, len(series)]``, sampled at ``points`` geometric times.

    Times where ``log log sigma_n^2`` is not positive are skipped.
    """
    x = np.asarray(series, dtype=float).ravel()
    N = len(x)
    if N < n_min:
        raise InsufficientSamples(f"series shorter than n_min = {n_min}")
    k = np.arange(n_min, N + 1, dtype=float)
    S = np.cumsum(x)[n_min - 1:]
    s2 = _sigma2_curve(sigma2, k)
    with np.errstate(invalid="ignore", divide="ignore"):
        ll = np.log(np.log(s2))
        stat = np.where(ll > 0, S / np.sqrt(2.0 * s2 * ll), -np.inf)
    if not np.any(np.isfinite(stat)):
        stat = np.zeros_like(stat)
    run = np.maximum.accumulate(stat)
    run = np.where(np.isfinite(run), run, 0.0)
    idx = np.unique(np.round(np.geomspace(1, len(k), points)).astype(int)) - 1
    m = float(run[-1])
    return LILResult(k[idx].astype(np.int64), run[idx], m, tuple(band),
                     bool(band[0] <= m <= band[1]))


# --- block machinery -------------------------------------------------------

def _ceil_pow(i, eps, scale=1):
    """Exact ``ceil(scale * i ** eps)`` for integer ``i >= 0``.

    When ``eps`` and ``scale`` are simple fractions the float guess is
    corrected with integer arithmetic: ``scale * i^(p/q) <= c`` iff
    ``i^p <= (c / scale)^q``.
    """
    if i == 0:
        return 0
    c = math.ceil(scale * i ** eps)
    fe = Fraction(eps).limit_denominator(64)
    fs = Fraction(scale).limit_denominator(64)
    if float(fe) == eps and float(fs) == scale:
        p, q = fe.numerator, fe.denominator
        while c > 1 and (Fraction(c - 1) / fs) ** q >= i ** p:
            c -= 1
        while (Fraction(c) / fs) ** q < i ** p:
            c += 1
    return c


@dataclass(frozen=True)
class BlockSchedule:
    """``tau[j]`` for ``j = 0 .. j_max`` with ``tau[0] = -1`` and
    ``tau[j] = sum_{i<j} ceil(i^eps)``; block ``j >= 1`` is
    ``[tau[j], tau[j+1])`` of length ``ceil(j^eps)``."""

    eps: float
    tau: np.ndarray

    @property
    def j_max(self):
        return len(self.tau) - 1

    def block(self, j):
        if not 1 <= j < self.j_max:
            raise IndexError(f"block {j} needs tau[{j + 1}]")
        return int(self.tau[j]), int(self.tau[j + 1])

    def lengths(self):
        return np.diff(self.tau[1:])


def block_schedule(eps, j_max) -> BlockSchedule:
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    tau = np.empty(j_max + 1, dtype=np.int64)
    tau[0] = -1
    acc = 0
    for j in range(1, j_max + 1):
        tau[j] = acc
        acc += _ceil_pow(j, eps)
    return BlockSchedule(float(eps), tau)


@dataclass(frozen=True)
class EpsilonBudget:
    kappa2: float
    kappa_p: float
    lam: float
    eps: float | None
    supremum: float | None
    feasible: bool

    def constraints(self, eps=None):
        """Slack of both inequalities at ``eps`` (positive means satisfied)."""
        e = self.eps if eps is None else eps
        a = 2 * self.kappa2 * self.lam - (2 * e * self.kappa_p + 1 / (4 - e))
        b = (4 * self.lam - 1) - e * self.kappa_p / self.kappa2
        return a, b


def _bisect_increasing(g, hi, tol=1e-15):
    """Root of an increasing ``g`` with ``g(0) < 0`` on ``[0, hi]``; ``hi``
    if ``g(hi) < 0``."""
    if g(hi) < 0:
        return hi
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return lo


def epsilon_budget(kappa2, kappa_p, lam, *, safety=0.99,
                   eps_max=1.0) -> EpsilonBudget:
    """Largest ``eps`` with ``2 eps kp + 1/(4 - eps) < 2 k2 lam`` and
    ``eps kp / k2 < 4 lam - 1``, shrunk by ``safety``.

    Both left-hand sides increase in ``eps``, so the feasible set is an
    interval ``(0, eps_sup)`` found by bisection.
    """
    if not kappa_p >= kappa2 > 0.25:
        raise HypothesisError("need kappa_p >= kappa_2 > 1/4")
    lo = max(0.25, 1.0 / (8.0 * kappa2))
    if not lo < lam < 0.5:
        raise HypothesisError(f"lambda must lie in ({lo:g}, 1/2), got {lam}")
    g1 = lambda e: 2 * e * kappa_p + 1 / (4 - e) - 2 * kappa2 * lam
    g2 = lambda e: e * kappa_p / kappa2 - (4 * lam - 1)
    if not (g1(0.0) < 0 and g2(0.0) < 0):
        return EpsilonBudget(kappa2, kappa_p, lam, None, None, False)
    sup = min(_bisect_increasing(g1, eps_max), _bisect_increasing(g2, eps_max))
    if sup <= 0:
        return EpsilonBudget(kappa2, kappa_p, lam, None, None, False)
    return EpsilonBudget(kappa2, kappa_p, lam, safety * sup, sup, True)


@dataclass(frozen=True)
class BlockDiagnostic:
    js: np.ndarray
    depths: np.ndarray
    sup_gaps: np.ndarray
    slope: float
    slope_stderr: float
    slope_upper95: float


def block_approximation_diagnostic(f, table, js, eps, *, N=400_000, rng=None,
                                   min_occupancy=20, cells="chart",
                                   partitions=None) -> BlockDiagnostic:
    """Sup gap ``|f - E(f | cells of depth ceil(0.2 j^eps))|`` for each ``j``.

    Partitions are built once per distinct depth and shared by every ``j``
    that maps to it. The log gap is regressed on ``j^eps``.
    """
    js = np.asarray(js, dtype=np.int64)
    depths = np.array([_ceil_pow(int(j), eps, 0.2) for j in js])
    measure = SRBMeasure(table)
    parts = {} if partitions is None else dict(partitions)
    gaps = np.empty(len(js))
    for i, m in enumerate(depths):
        if m not in parts:
            parts[m] = cylinder_partition(table, measure, int(m), N, rng,
                                          min_occupancy, cells)
        gaps[i] = conditional_expectation_on_cells(f, parts[m]).sup_gap
    x = js.astype(float) ** eps
    if np.all(gaps > 0) and len(np.unique(x)) >= 2:
        r = stats.linregress(x, np.log(gaps))
        fit = Fit(float(r.slope), float(r.stderr), float(r.intercept), len(x))
        up = fit.upper()
    else:
        fit = Fit(float("nan"), float("nan"), float("nan"), len(x))
        up = float("nan")
    return BlockDiagnostic(js, depths, gaps, fit.slope, fit.stderr, up)


# --- shrinking targets -----------------------------------------------------

@dataclass(frozen=True)
class TargetReport:
    grid: np.ndarray
    mean: np.ndarray
    mean_stderr: np.ndarray
    analytic_mean: np.ndarray
    mean_z: np.ndarray
    variance: VarianceCurve
    variance_slope: Fit
    ks: KSResult
    min_final_count: float
    borel_cantelli: bool


def shrinking_target_report(ens: SeriesEnsemble, family: ShrinkingTargetFamily,
                            grid=None, n=None) -> TargetReport:
    """Summaries of a targets-mode ensemble (partial sums are ``N_n``)."""
    grid = ens.times if grid is None else check_grid(grid, ens.n_max)
    n = ens.n_max if n is None else int(n)
    curve = family.mean_curve(ens.n_max)
    S = np.column_stack([ens.sums_at(t) for t in grid])
    mean = S.mean(axis=0)
    se = S.std(axis=0, ddof=1) / math.sqrt(ens.n_orbits)
    expected = curve[grid - 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (mean - expected) / se, 0.0)
    vc = variance_curve(ens, grid)
    slope = loglog_fit(grid, vc.variance)
    ks = clt_ks(ens, n, center=float(curve[n - 1]), lattice_step=1.0)
    final = float(ens.sums_at(ens.n_max).min())
    return TargetReport(np.asarray(grid), mean, se, expected, z, vc, slope,
                        ks, final, final >= 1)
