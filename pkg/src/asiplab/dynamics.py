"""Dispersing billiards on the unit torus and the hyperbolic toral automorphism.

Collision-space coordinates follow the usual convention: ``r`` is arc length
on the scatterer (counterclockwise from the positive x axis) and ``phi`` is the
angle between the outgoing velocity and the outward normal, positive towards
increasing ``r``. With this convention the tangent map has the classical form

    dT = -1/cos(phi1) * [[tau K + cos phi,                       tau            ],
                         [tau K K1 + K cos phi1 + K1 cos phi,    tau K1 + cos phi1]]

and vectors with positive slope ``dphi/dr`` form an invariant unstable cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .errors import (DegenerateError, GrazingError, HorizonError,
                     OverlapError, SingularityStraddle, TruncatedOrbit)

DEFAULT_GUARD = 1e-12
GOLDEN_LOG = math.log((3.0 + math.sqrt(5.0)) / 2.0)
CAT_MATRIX = np.array([[2.0, 1.0], [1.0, 1.0]])


@dataclass(frozen=True, eq=False)
class BilliardTable:
    """Disk scatterers on the unit torus.

    Build instances with :func:`build_table`; the constructor does no
    validation.
    """

    centers: np.ndarray
    radii: np.ndarray
    clearance: float
    boundary_length: float
    tau_min: float
    guard: float = DEFAULT_GUARD
    max_ring: int = 8
    metadata: dict = field(default_factory=dict)

    @property
    def n_scatterers(self) -> int:
        return len(self.radii)

    @property
    def perimeters(self) -> np.ndarray:
        return 2.0 * np.pi * self.radii

    @property
    def arc_offsets(self) -> np.ndarray:
        """Global arc position of ``r = 0`` on each scatterer."""
        return np.concatenate([[0.0], np.cumsum(self.perimeters)[:-1]])

    def spec(self) -> list:
        return [((float(c[0]), float(c[1])), float(R))
                for c, R in zip(self.centers, self.radii)]

    def _args(self):
        return (self.centers[:, 0], self.centers[:, 1], self.radii)


@dataclass(frozen=True)
class PhasePoint:
    scatterer_id: int
    r: float
    phi: float

    def __post_init__(self):
        if not abs(self.phi) <= math.pi / 2:
            raise ValueError(f"|phi| must be <= pi/2, got {self.phi}")


@dataclass(frozen=True, eq=False)
class CollisionResult:
    next: PhasePoint
    tau: float
    dT: np.ndarray
    grazing_margin: float


@dataclass(frozen=True)
class CatMapState:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x < 1.0 and 0.0 <= self.y < 1.0):
            raise ValueError("cat map coordinates must lie in [0, 1)")


class CatMap:
    """The automorphism ``(x, y) -> (2x + y, x + y) mod 1``."""

    matrix = CAT_MATRIX
    expansion = (3.0 + math.sqrt(5.0)) / 2.0

    @property
    def unstable_direction(self) -> np.ndarray:
        v = np.array([1.0, (math.sqrt(5.0) - 1.0) / 2.0])
        return v / np.linalg.norm(v)


class OrbitResult(NamedTuple):
    """Arrays hold the ``n`` successive collisions ``T p0, ..., T^n p0``
    (fewer when truncated)."""

    scatterer_ids: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    dT: np.ndarray
    min_grazing_margin: float
    truncated: bool

    @property
    def itinerary(self) -> list:
        return self.scatterer_ids.tolist()

    @property
    def points(self) -> list:
        return [PhasePoint(int(s), float(r), float(p))
                for s, r, p in zip(self.scatterer_ids, self.r, self.phi)]


def build_table(spec, clearance=1e-3, *, guard=DEFAULT_GUARD, max_ring=8,
                n_rays=10_000):
    """Validate a list of ``((cx, cy), radius)`` and build a table.

    ``tau_min`` is the smallest gap between any two scatterer copies, which
    is the exact minimal free path for disks. A ray-cast estimate from
    ``n_rays`` normal-incidence shots is kept in ``metadata``.
    """
    spec = list(spec)
    if not spec:
        raise DegenerateError("table needs at least one scatterer")
    if clearance <= 0:
        raise DegenerateError("clearance must be positive")
    centers = np.array([[float(c[0]), float(c[1])] for c, _ in spec])
    radii = np.array([float(R) for _, R in spec])
    if np.any(radii <= 0):
        raise DegenerateError("scatterer radii must be positive")
    centers = centers - np.floor(centers)

    gap = np.inf
    k = len(radii)
    for i in range(k):
        for j in range(i, k):
            for a in range(-2, 3):
                for b in range(-2, 3):
                    if i == j and a == 0 and b == 0:
                        continue
                    d = math.hypot(centers[j, 0] + a - centers[i, 0],
                                   centers[j, 1] + b - centers[i, 1])
                    g = d - radii[i] - radii[j]
                    if g < clearance:
                        raise OverlapError(
                            f"scatterers {i} and {j} (offset {a},{b}) are "
                            f"{g:.6g} apart, below clearance {clearance}")
                    gap = min(gap, g)

    table = BilliardTable(centers=centers, radii=radii, clearance=clearance,
                          boundary_length=float(np.sum(2 * np.pi * radii)),
                          tau_min=float(gap), guard=guard, max_ring=max_ring)
    table.metadata["tau_min_raycast"] = _raycast_tau_min(table, n_rays)
    return table


def _raycast_tau_min(table, n_rays):
    cx, cy, rad = table._args()
    per = max(1, n_rays // table.n_scatterers)
    best = np.inf
    for s in range(table.n_scatterers):
        for r in np.linspace(0.0, 2 * np.pi * rad[s], per, endpoint=False):
            out = K.collide(cx, cy, rad, s, r, 0.0, table.guard, table.max_ring)
            if out[0] == K.OK:
                best = min(best, out[4])
    return float(best)


def _raise_status(status, where=""):
    if status in (K.GRAZING, K.GRAZING_INPUT):
        raise GrazingError(f"tangential collision{where}")
    if status == K.HORIZON:
        raise HorizonError(f"no scatterer inside the search window{where}")


def next_collision(table: BilliardTable, p: PhasePoint) -> CollisionResult:
    R = table.radii[p.scatterer_id]
    if not 0.0 <= p.r < 2 * np.pi * R + 1e-12:
        raise ValueError("r outside the scatterer circumference")
    out = K.collide(*table._args(), p.scatterer_id, p.r, p.phi,
                    table.guard, table.max_ring)
    st, s1, r1, p1, tau, a, b, c, d, _, _ = out
    _raise_status(st)
    nxt = PhasePoint(int(s1), r1, p1)
    return CollisionResult(next=nxt, tau=tau,
                           dT=np.array([[a, b], [c, d]]),
                           grazing_margin=min(math.cos(p.phi), math.cos(p1)))


def _wrap(d, period):
    return (d + period / 2) % period - period / 2


def tangent_map_fd_oracle(system, p, h=1e-7):
    """Central finite-difference Jacobian of one step of the map."""
    if isinstance(system, CatMap):
        cols = []
        for dx, dy in ((h, 0.0), (0.0, h)):
            a = cat_step(CatMapState((p.x + dx) % 1.0, (p.y + dy) % 1.0))
            b = cat_step(CatMapState((p.x - dx) % 1.0, (p.y - dy) % 1.0))
            cols.append([_wrap(a.x - b.x, 1.0) / (2 * h),
                         _wrap(a.y - b.y, 1.0) / (2 * h)])
        return np.array(cols).T

    table = system
    base = next_collision(table, p)
    per = 2 * np.pi * table.radii[p.scatterer_id]
    per1 = 2 * np.pi * table.radii[base.next.scatterer_id]
    cols = []
    for dr, dp in ((h, 0.0), (0.0, h)):
        a = next_collision(table, PhasePoint(p.scatterer_id,
                                             (p.r + dr) % per, p.phi + dp))
        b = next_collision(table, PhasePoint(p.scatterer_id,
                                             (p.r - dr) % per, p.phi - dp))
        if a.next.scatterer_id != base.next.scatterer_id or \
                b.next.scatterer_id != base.next.scatterer_id:
            raise SingularityStraddle("perturbed points hit different scatterers")
        cols.append([_wrap(a.next.r - b.next.r, per1) / (2 * h),
                     (a.next.phi - b.next.phi) / (2 * h)])
    return np.array(cols).T


def orbit(table: BilliardTable, p0: PhasePoint, n: int) -> OrbitResult:
    """``n`` successive collisions from ``p0``; stops early on grazing."""
    if n < 1:
        raise ValueError("n must be >= 1")
    sids = np.empty(n + 1, dtype=np.int64)
    rs = np.empty(n + 1)
    phis = np.empty(n + 1)
    taus = np.empty(n)
    mats = np.empty((n, 2, 2))
    done, status = K.run_orbit(*table._args(), p0.scatterer_id, p0.r, p0.phi,
                               n, table.guard, table.max_ring,
                               sids, rs, phis, taus, mats)
    if status == K.HORIZON:
        _raise_status(status)
    margin = float(np.min(np.cos(phis[:done + 1])))
    return OrbitResult(sids[1:done + 1], rs[1:done + 1], phis[1:done + 1],
                       taus[:done], mats[:done], margin, done < n)


def unstable_log_expansion(system, p0, n, warmup=50):
    """Per-step log expansion factors of a tangent vector in the unstable cone.

    The vector starts with slope equal to the curvature of the first scatterer
    (for the cat map: the exact unstable eigenvector), is transported through
    ``warmup`` collisions, and then ``n`` factors ``log |v_{k+1}| / |v_k|``
    are recorded.
    """
    if isinstance(system, CatMap):
        v = system.unstable_direction
        out = np.empty(n)
        for _ in range(warmup):
            w = CAT_MATRIX @ v
            v = w / np.linalg.norm(w)
        for k in range(n):
            w = CAT_MATRIX @ v
            nrm = np.linalg.norm(w)
            out[k] = math.log(nrm)
            v = w / nrm
        return out

    table = system
    out = np.empty(n)
    sids = np.empty(n, dtype=np.int64)
    rs = np.empty(n)
    phis = np.empty(n)
    st, _ = K.log_expansion(*table._args(), p0.scatterer_id, p0.r, p0.phi,
                            1.0 / table.radii[p0.scatterer_id], warmup, n,
                            table.guard, table.max_ring, out, sids, rs, phis)
    if st != K.OK:
        raise TruncatedOrbit(f"orbit hit a singularity (status {st})")
    return out


def cat_step(s: CatMapState) -> CatMapState:
    return CatMapState((2.0 * s.x + s.y) % 1.0, (s.x + s.y) % 1.0)


def cat_states_to_float(X, Y):
    """Map uint64 lattice coordinates to floats in [0, 1)."""
    # keep the top 53 bits so the result is exact and strictly below 1
    scale = 2.0 ** -53
    return ((X >> np.uint64(11)).astype(np.float64) * scale,
            (Y >> np.uint64(11)).astype(np.float64) * scale)


# Finite-horizon three-disk table used throughout the tests and the CLI
# defaults: the two large disks block the axis corridors and the small one
# blocks the diagonal corridor left open between them.
THREE_DISK_SPEC = [((0.0, 0.0), 0.3), ((0.5, 0.5), 0.3), ((0.5, 0.0), 0.15)]


def standard_table(**kwargs) -> BilliardTable:
    return build_table(THREE_DISK_SPEC, clearance=kwargs.pop("clearance", 0.01),
                       **kwargs)


# --- orbit segments used by the simulators ---------------------------------

class BilliardTrajectory(NamedTuple):
    """Points ``x_0 .. x_n`` (length ``n + 1``) and the ``n`` one-step log
    unstable expansions at ``x_0 .. x_{n-1}``."""

    sids: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    log_expansion: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.log_expansion)


class CatTrajectory(NamedTuple):
    """Lattice points ``X_0 .. X_n`` of the cat map as uint64 pairs."""

    X: np.ndarray
    Y: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.X) - 1

    def as_float(self):
        return cat_states_to_float(self.X, self.Y)


def billiard_trajectory(table, start, n, warmup=50):
    """Run ``warmup`` collisions from ``start = (sid, r, phi)`` and record the
    following ``n`` steps.

    Raises :class:`TruncatedOrbit` on a grazing collision; the exception
    carries ``steps_done`` (negative when it happened in the warmup).
    """
    sids = np.empty(n + 1, dtype=np.int64)
    rs = np.empty(n + 1)
    phis = np.empty(n + 1)
    logexp = np.empty(n)
    done, st = K.trajectory(*table._args(), int(start[0]), float(start[1]),
                            float(start[2]), warmup, n, table.guard,
                            table.max_ring, sids, rs, phis, logexp)
    if st == K.HORIZON:
        _raise_status(st)
    if st != K.OK:
        err = TruncatedOrbit(f"grazing collision after {done} steps")
        err.steps_done = done
        raise err
    return BilliardTrajectory(sids, rs, phis, logexp)


def cat_trajectory(X0, Y0, n):
    xs = np.empty(n + 1, dtype=np.uint64)
    ys = np.empty(n + 1, dtype=np.uint64)
    K.cat_orbit(np.uint64(X0), np.uint64(Y0), n + 1, xs, ys)
    return CatTrajectory(xs, ys)


def billiard_next(table, sids, r, phi):
    """Vectorised collision map; returns ``(sids1, r1, phi1, status)``."""
    sids = np.ascontiguousarray(sids, dtype=np.int64)
    r = np.ascontiguousarray(r, dtype=float)
    phi = np.ascontiguousarray(phi, dtype=float)
    n = len(sids)
    s1 = np.empty(n, dtype=np.int64)
    r1 = np.empty(n)
    p1 = np.empty(n)
    st = np.empty(n, dtype=np.int64)
    K.next_points(*table._args(), sids, r, phi, table.guard, table.max_ring,
                  s1, r1, p1, st)
    return s1, r1, p1, st
