"""Observables on the billiard and the cat map, shrinking targets and hit counts.

An :class:`Observable` evaluates on coordinate arrays: ``(sids, r, phi)`` for
the billiard and float ``(x, y)`` for the cat map. Along simulated orbits it
evaluates through :meth:`Observable.along_orbit`, which also sees the next
point (needed by coboundaries) and the carried unstable vector (needed by the
unstable Jacobian).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels as K
from .dynamics import (GOLDEN_LOG, BilliardTable, BilliardTrajectory, CatMap,
                       CatMapState, CatTrajectory, PhasePoint, billiard_next,
                       unstable_log_expansion)
from ._validation import as_rng
from .errors import GammaRangeError, InsufficientPairs, SpecError
from .measure import separation_times

BILLIARD = "billiard"
CATMAP = "catmap"


def _lattice_frac(v):
    return (v >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


class Observable:
    """Base class. Subclasses implement ``_raw`` (and ``_raw_orbit`` when the
    value needs more than the current point).

    Parameters
    ----------
    center : bool
        Subtract ``mean`` on evaluation. Requires a known mean.
    mean : float, optional
        Overrides the analytic mean (e.g. with a quadrature value).
    """

    kind = "Observable"
    system = BILLIARD
    analytic_mean = None

    def __init__(self, *, center=False, mean=None):
        self.mean = self.analytic_mean if mean is None else float(mean)
        if center and self.mean is None:
            raise SpecError(f"{self.kind}: centering needs a known mean")
        self.center = bool(center)
        self.metadata = {}

    @property
    def offset(self):
        return self.mean if self.center else 0.0

    def _raw(self, *coords):
        raise NotImplementedError

    def __call__(self, *coords):
        return np.asarray(self._raw(*coords), dtype=float) - self.offset

    def evaluate(self, point):
        if isinstance(point, PhasePoint):
            self._need(BILLIARD)
            v = self(np.array([point.scatterer_id]), np.array([point.r]),
                     np.array([point.phi]))
        elif isinstance(point, CatMapState):
            self._need(CATMAP)
            v = self(np.array([point.x]), np.array([point.y]))
        else:
            raise TypeError(f"cannot evaluate on {type(point).__name__}")
        return float(v[0])

    def along_orbit(self, traj):
        """Values at ``x_0 .. x_{n-1}`` of a simulated trajectory."""
        if isinstance(traj, BilliardTrajectory):
            self._need(BILLIARD)
        elif isinstance(traj, CatTrajectory):
            self._need(CATMAP)
        else:
            raise TypeError(f"unknown trajectory type {type(traj).__name__}")
        return np.asarray(self._raw_orbit(traj), dtype=float) - self.offset

    def _raw_orbit(self, traj):
        n = traj.n_steps
        if isinstance(traj, BilliardTrajectory):
            return self._raw(traj.sids[:n], traj.r[:n], traj.phi[:n])
        x, y = traj.as_float()
        return self._raw_lattice(traj.X[:n], traj.Y[:n], x[:n], y[:n])

    def _raw_lattice(self, X, Y, x, y):
        return self._raw(x, y)

    def _need(self, system):
        if self.system not in (system, "any"):
            raise SpecError(f"{self.kind} is not defined on the {system}")

    def spec(self) -> dict:
        out = {"kind": self.kind, "center": self.center}
        out.update(self._params())
        return out

    def _params(self):
        return {}

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.spec().items()
                           if k != "kind")
        return f"{self.kind}({params})"


class NegLogCosPhi(Observable):
    """``-log cos(phi)``: unbounded near grazing, in every ``L^p``."""

    kind = "NegLogCosPhi"
    analytic_mean = 1.0 - math.log(2.0)

    def __init__(self, *, center=False, mean=None):
        super().__init__(center=center, mean=mean)
        self.metadata.update(bounded=False, lp_finite="all p < inf")

    def _raw(self, sids, r, phi):
        with np.errstate(divide="ignore"):
            return -np.log(np.cos(phi))


class TrigBoundary(Observable):
    """``cos(2 pi k s / |boundary|)`` of the global arc position ``s``."""

    kind = "TrigBoundary"
    analytic_mean = 0.0

    def __init__(self, table: BilliardTable, frequency=1, *, center=False,
                 mean=None):
        if not isinstance(table, BilliardTable):
            raise SpecError("TrigBoundary needs a billiard table")
        if int(frequency) != frequency or frequency < 1:
            raise SpecError(f"frequency must be a positive integer, got "
                            f"{frequency!r}")
        super().__init__(center=center, mean=mean)
        self.table = table
        self.frequency = int(frequency)
        self._off = table.arc_offsets
        self._scale = 2.0 * np.pi * self.frequency / table.boundary_length
        self.metadata.update(bounded=True)

    def _raw(self, sids, r, phi):
        sids = np.asarray(sids, dtype=np.int64)
        return np.cos(self._scale * (self._off[sids] + np.asarray(r)))

    def _params(self):
        return {"frequency": self.frequency}


class LogUnstableJacobian(Observable):
    """``log |D^u_x T|``, the one-step expansion along the unstable direction.

    Pointwise, the unstable direction at ``x`` is approximated by pulling a
    cone vector forward from ``T^{-warmup} x``. Along simulated orbits the
    carried vector of the trajectory is used instead, which is the same
    quantity without recomputing the past. On the cat map it is the constant
    ``log((3 + sqrt 5) / 2)``.
    """

    kind = "LogUnstableJacobian"

    def __init__(self, system, warmup=50, *, center=False, mean=None):
        if int(warmup) != warmup or warmup < 1:
            raise SpecError(f"warmup must be a positive integer, got {warmup!r}")
        self.system = CATMAP if isinstance(system, CatMap) else BILLIARD
        if self.system == CATMAP:
            self.analytic_mean = GOLDEN_LOG
        elif not isinstance(system, BilliardTable):
            raise SpecError("LogUnstableJacobian needs a table or the cat map")
        super().__init__(center=center, mean=mean)
        self.table = system if self.system == BILLIARD else None
        self.warmup = int(warmup)
        self.metadata.update(bounded=False)

    def _raw(self, *coords):
        if self.system == CATMAP:
            return np.full(len(coords[0]), GOLDEN_LOG)
        sids, r, phi = (np.ascontiguousarray(c) for c in coords)
        out = np.empty(len(sids))
        status = np.empty(len(sids), dtype=np.int64)
        t = self.table
        K.unstable_log_jacobian_many(*t._args(), sids.astype(np.int64),
                                     r.astype(float), phi.astype(float),
                                     self.warmup, t.guard, t.max_ring, out,
                                     status)
        # points whose past or next step grazes sit on the singular set
        out[status != K.OK] = np.nan
        return out

    def _raw_orbit(self, traj):
        if isinstance(traj, BilliardTrajectory):
            return traj.log_expansion
        return np.full(traj.n_steps, GOLDEN_LOG)

    def _params(self):
        return {"warmup": self.warmup}


class TargetIndicator(Observable):
    """Indicator of the target ``A_n = {|sin phi| >= 1 - mu_n}``."""

    kind = "TargetIndicator"

    def __init__(self, family: "ShrinkingTargetFamily", n, *, center=False,
                 mean=None):
        if int(n) != n or n < 0:
            raise SpecError(f"target index must be a non-negative integer, "
                            f"got {n!r}")
        self.family = family
        self.n = int(n)
        self.analytic_mean = float(family.mass(self.n))
        super().__init__(center=center, mean=mean)
        self.metadata.update(bounded=True)

    def _raw(self, sids, r, phi):
        return self.family.contains(self.n, phi).astype(float)

    def _params(self):
        return {"family": self.family.spec(), "n": self.n}


class Coboundary(Observable):
    """``g(x) - g(Tx)`` for a base observable ``g``; its Birkhoff sums
    telescope, so the partial-sum variance stays bounded."""

    kind = "Coboundary"
    analytic_mean = 0.0

    def __init__(self, base: Observable, table=None, *, center=False,
                 mean=None):
        if not isinstance(base, Observable):
            raise SpecError("Coboundary needs a base observable")
        if base.system == BILLIARD and not isinstance(table, BilliardTable):
            raise SpecError("a billiard coboundary needs the table")
        self.system = base.system
        super().__init__(center=center, mean=mean)
        self.base = base
        self.table = table
        self.metadata.update(bounded=base.metadata.get("bounded"))

    def _raw(self, *coords):
        g0 = self.base._raw(*coords)
        if self.system == CATMAP:
            x, y = (np.asarray(c, dtype=float) for c in coords)
            g1 = self.base._raw((2 * x + y) % 1.0, (x + y) % 1.0)
            return g0 - g1
        s1, r1, p1, st = billiard_next(self.table, *coords)
        out = g0 - self.base._raw(s1, r1, p1)
        out[st != K.OK] = np.nan
        return out

    def _raw_orbit(self, traj):
        n = traj.n_steps
        if isinstance(traj, BilliardTrajectory):
            g = np.asarray(self.base._raw(traj.sids, traj.r, traj.phi),
                           dtype=float)
        else:
            x, y = traj.as_float()
            g = np.asarray(self.base._raw_lattice(traj.X, traj.Y, x, y),
                           dtype=float)
        return g[:n] - g[1:n + 1]

    def _params(self):
        return {"base": self.base.spec()}


class CatCharacter(Observable):
    """``cos(2 pi (k1 x + k2 y))`` on the torus.

    On lattice orbits the phase ``k1 X + k2 Y`` is formed exactly in uint64
    arithmetic before conversion, so no rounding enters the argument.
    """

    kind = "CatCharacter"
    system = CATMAP

    def __init__(self, k=(1, 0), *, center=False, mean=None):
        try:
            k = tuple(int(v) for v in k)
        except (TypeError, ValueError):
            raise SpecError(f"k must be a pair of integers, got {k!r}") from None
        if len(k) != 2:
            raise SpecError(f"k must be a pair of integers, got {k!r}")
        self.k = k
        self.analytic_mean = 1.0 if k == (0, 0) else 0.0
        super().__init__(center=center, mean=mean)
        self.metadata.update(bounded=True)

    def _raw(self, x, y):
        return np.cos(2.0 * np.pi * (self.k[0] * np.asarray(x)
                                     + self.k[1] * np.asarray(y)))

    def _raw_lattice(self, X, Y, x, y):
        k1 = np.uint64(self.k[0] % 2 ** 64)
        k2 = np.uint64(self.k[1] % 2 ** 64)
        with np.errstate(over="ignore"):
            phase = k1 * X + k2 * Y
        return np.cos(2.0 * np.pi * _lattice_frac(phase))

    def _params(self):
        return {"k": list(self.k)}


_KINDS = ("NegLogCosPhi", "TrigBoundary", "LogUnstableJacobian",
          "TargetIndicator", "Coboundary", "CatCharacter")


def make_observable(spec, table=None) -> Observable:
    """Build an observable from a declarative spec.

    ``spec`` is a kind name or a mapping with ``kind`` plus parameters, e.g.
    ``{"kind": "TrigBoundary", "frequency": 1}`` or
    ``{"kind": "Coboundary", "base": {"kind": "TrigBoundary"}}``. ``table``
    is a :class:`BilliardTable` or :class:`CatMap` and is required by the
    kinds that depend on geometry.
    """
    if isinstance(spec, Observable):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise SpecError(f"observable spec needs a 'kind', got {spec!r}")
    spec = dict(spec)
    kind = spec.pop("kind")
    center = bool(spec.pop("center", False))
    mean = spec.pop("mean", None)
    try:
        if kind == "NegLogCosPhi":
            obs = NegLogCosPhi(center=center, mean=mean)
        elif kind == "TrigBoundary":
            obs = TrigBoundary(table, spec.pop("frequency", 1), center=center,
                               mean=mean)
        elif kind == "LogUnstableJacobian":
            obs = LogUnstableJacobian(table, spec.pop("warmup", 50),
                                      center=center, mean=mean)
        elif kind == "TargetIndicator":
            fam = spec.pop("family")
            if isinstance(fam, dict):
                fam = shrinking_targets(**fam)
            obs = TargetIndicator(fam, spec.pop("n"), center=center, mean=mean)
        elif kind == "Coboundary":
            base = make_observable(spec.pop("base"), table)
            obs = Coboundary(base, table if base.system == BILLIARD else None,
                             center=center, mean=mean)
        elif kind == "CatCharacter":
            obs = CatCharacter(spec.pop("k", (1, 0)), center=center, mean=mean)
        else:
            raise SpecError(f"unknown observable kind {kind!r}; expected one "
                            f"of {', '.join(_KINDS)}")
    except KeyError as exc:
        raise SpecError(f"{kind}: missing parameter {exc.args[0]!r}") from None
    except TypeError as exc:
        raise SpecError(f"{kind}: {exc}") from None
    if spec:
        raise SpecError(f"{kind}: unknown parameters {sorted(spec)}")
    return obs


def log_unstable_jacobian(system, x, warmup=50) -> float:
    """One-step log unstable expansion at ``T^warmup x``.

    The cone vector is pushed forward from ``x`` for ``warmup`` steps and the
    expansion of the next step is returned.
    """
    return float(unstable_log_expansion(system, x, 1, warmup=warmup)[0])


# --- shrinking targets -----------------------------------------------------

@dataclass(frozen=True)
class ShrinkingTargetFamily:
    """Nested phi-bands ``A_n = {|sin phi| >= 1 - mu_n}``.

    Since ``sin phi`` is uniform on ``[-1, 1]`` under the SRB measure, the
    band has mass exactly ``mu_n = min(mu0, c (n + 1)^-gamma)``.
    """

    gamma: float
    c: float
    mu0: float = 0.5
    n_max: int = 10_000
    constant: float | None = None
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    @classmethod
    def constant_family(cls, mass, n_max=10_000):
        """Degenerate family with ``mu_n = mass`` for every ``n`` (no range
        checks, for testing the extremes ``mass = 0`` and ``mass = 1``)."""
        if not 0.0 <= mass <= 1.0:
            raise ValueError("mass must lie in [0, 1]")
        return cls(gamma=0.0, c=float(mass), mu0=float(mass), n_max=n_max,
                   constant=float(mass))

    def mass(self, n):
        n = np.asarray(n, dtype=float)
        if self.constant is not None:
            return np.full(n.shape, self.constant) if n.ndim else self.constant
        m = np.minimum(self.mu0, self.c * (n + 1.0) ** (-self.gamma))
        return m if n.ndim else float(m)

    def masses(self, n=None):
        """``mu_0 .. mu_{n-1}`` (defaults to ``n_max``)."""
        return self.mass(np.arange(self.n_max if n is None else n))

    def mean_curve(self, n=None):
        """``E N_n = sum_{k<n} mu_k`` for ``n = 1 .. n_max``."""
        return np.cumsum(self.masses(n))

    def contains(self, n, phi):
        thresh = 1.0 - self.mass(n)
        return np.abs(np.sin(np.asarray(phi))) >= thresh

    def indicator(self, n) -> TargetIndicator:
        return TargetIndicator(self, n)

    def spec(self):
        if self.constant is not None:
            return {"constant": self.constant, "n_max": self.n_max}
        return {"gamma": self.gamma, "c": self.c, "mu0": self.mu0,
                "n_max": self.n_max}


def shrinking_targets(gamma, c, mu0=0.5, n_max=10_000) -> ShrinkingTargetFamily:
    if not 0.0 < gamma < 0.75:
        raise GammaRangeError(f"gamma must lie in (0, 3/4), got {gamma}")
    if not c > 0:
        raise SpecError(f"c must be positive, got {c}")
    if not 0.0 < mu0 <= 0.5:
        raise SpecError(f"mu0 must lie in (0, 1/2], got {mu0}")
    if int(n_max) != n_max or n_max < 1:
        raise SpecError(f"n_max must be a positive integer, got {n_max}")
    fam = ShrinkingTargetFamily(float(gamma), float(c), float(mu0), int(n_max))
    ends = np.array([0, fam.n_max - 1])
    fam.metadata["mass_log_endpoints"] = (fam.mass(ends)
                                          * np.log(ends + 2.0)).tolist()
    return fam


@dataclass(frozen=True, eq=False)
class HitCountSeries:
    """``counts[n-1] = N_n = #{k < n : T^k x in A_k}`` for ``n = 1 .. n_max``."""

    counts: np.ndarray
    mean_curve: np.ndarray

    @property
    def n_max(self):
        return len(self.counts)


def hit_count_series(orbit, family: ShrinkingTargetFamily, n_max=None):
    """Running hit counts of an orbit against a shrinking-target family.

    ``orbit`` is a :class:`BilliardTrajectory`, anything with a ``phi``
    attribute, or an array of the angles ``phi_0, phi_1, ...``.
    """
    phi = np.asarray(getattr(orbit, "phi", orbit), dtype=float)
    n = len(phi) if n_max is None else int(n_max)
    if len(phi) < n:
        raise ValueError(f"orbit has {len(phi)} points, need {n}")
    hits = family.contains(np.arange(n), phi[:n])
    return HitCountSeries(np.cumsum(hits, dtype=np.int64),
                          family.mean_curve(n))


# --- dynamically Hölder seminorm growth -----------------------------------

@dataclass(frozen=True, eq=False)
class PairSample:
    """Pairs ``(x_i, y_i)`` with their forward separation times."""

    x: tuple
    y: tuple
    separation: np.ndarray
    n_max: int

    def __len__(self):
        return len(self.separation)


def sample_unstable_pairs(table, measure, size, rng, *, scales=(1e-9, 1e-2),
                          n_max=60, cells="chart"):
    """Nearby pairs displaced along the unstable cone.

    ``y`` is ``x`` moved by a log-uniform distance in ``scales`` along the
    direction ``(1, 1/R)`` in ``(r, phi)``, so both points lie on a short
    curve with positive slope. Pairs that leave the scatterer or the
    collision space are discarded.
    """
    rng = as_rng(rng)
    s, r, phi = measure.sample(rng, size)
    R = table.radii[s]
    d = np.exp(rng.uniform(np.log(scales[0]), np.log(scales[1]), size))
    v = np.hypot(1.0, 1.0 / R)
    r2 = r + d / v
    p2 = phi + d / (R * v)
    ok = (r2 < table.perimeters[s]) & (np.abs(p2) < np.pi / 2 - 1e-9)
    x = (s[ok], r[ok], phi[ok])
    y = (s[ok], r2[ok], p2[ok])
    sep = separation_times(table, x, y, n_max, cells=cells)
    return PairSample(x, y, sep, n_max)


@dataclass(frozen=True)
class SeminormProbe:
    ns: np.ndarray
    quotients: np.ndarray
    beta: float
    stderr: float
    theta: float
    n_pairs: int


def seminorm_growth_probe(f_seq, pairs: PairSample, ns, theta=0.5,
                          min_pairs=10) -> SeminormProbe:
    """Empirical growth exponent of the dynamically Hölder seminorm.

    For each ``n`` the quotient ``max |f_n(x) - f_n(y)| / theta^s(x, y)`` is
    taken over the sampled pairs, and ``beta`` is the least-squares slope of
    its logarithm against ``log n``. ``f_seq(n)`` returns a callable on
    ``(sids, r, phi)`` arrays. When every quotient vanishes (constant
    observables) ``beta`` is NaN.
    """
    if len(pairs) < min_pairs:
        raise InsufficientPairs(f"{len(pairs)} pairs, need {min_pairs}")
    ns = np.asarray(ns, dtype=np.int64)
    w = float(theta) ** (-pairs.separation.astype(float))
    q = np.empty(len(ns))
    for i, n in enumerate(ns):
        f = f_seq(int(n))
        diff = np.abs(np.asarray(f(*pairs.x), dtype=float)
                      - np.asarray(f(*pairs.y), dtype=float))
        diff = np.where(np.isfinite(diff), diff, 0.0)
        q[i] = float(np.max(diff * w))
    good = q > 0
    if good.sum() >= 2:
        fit = stats.linregress(np.log(ns[good]), np.log(q[good]))
        beta, se = float(fit.slope), float(fit.stderr)
    else:
        beta, se = float("nan"), float("nan")
    return SeminormProbe(ns, q, beta, se, float(theta), len(pairs))

