"""Compiled inner loops for the billiard collision map and the cat map.

Everything here works on plain arrays so that the kernels can run without the
GIL. Status codes returned by the billiard kernels:

    0  ok
    1  grazing at the next collision
    2  no intersection inside the search window (infinite-horizon direction)
    3  grazing input point
"""

import math

import numpy as np
from numba import njit

OK = 0
GRAZING = 1
HORIZON = 2
GRAZING_INPUT = 3

TWO_PI = 2.0 * math.pi


@njit(cache=True, nogil=True)
def collide(cx, cy, rad, sid, r, phi, guard, max_ring):
    """One step of the collision map with its derivative.

    Returns ``(status, sid1, r1, phi1, tau, d11, d12, d21, d22, da, db)``
    where ``(da, db)`` is the lattice displacement of the scatterer copy that
    is hit, relative to the copy the point starts on.
    """
    R = rad[sid]
    cphi = math.cos(phi)
    if cphi <= guard:
        return GRAZING_INPUT, -1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0
    sphi = math.sin(phi)
    th = r / R
    nx = math.cos(th)
    ny = math.sin(th)
    # r increases counterclockwise; phi is measured from the outward normal
    # towards the direction of increasing r
    vx = cphi * nx - sphi * ny
    vy = cphi * ny + sphi * nx
    px = cx[sid] + R * nx
    py = cy[sid] + R * ny
    fx = math.floor(px)
    fy = math.floor(py)
    px -= fx
    py -= fy

    ns = rad.shape[0]
    rmax = 0.0
    for j in range(ns):
        if rad[j] > rmax:
            rmax = rad[j]

    best = np.inf
    bj = -1
    bcx = 0.0
    bcy = 0.0
    ba = 0
    bb_ = 0
    certified = False
    for k in range(max_ring + 1):
        for a in range(-k, k + 1):
            for b in range(-k, k + 1):
                if max(abs(a), abs(b)) != k:
                    continue
                for j in range(ns):
                    ccx = cx[j] + a
                    ccy = cy[j] + b
                    dx = px - ccx
                    dy = py - ccy
                    bb = dx * vx + dy * vy
                    if bb >= 0.0:
                        continue
                    Rj = rad[j]
                    cc = dx * dx + dy * dy - Rj * Rj
                    if j == sid and abs(cc) < 1e-9 * Rj:
                        continue
                    disc = bb * bb - cc
                    if disc <= 0.0:
                        continue
                    t = cc / (-bb + math.sqrt(disc))
                    if t > 1e-14 and t < best:
                        best = t
                        bj = j
                        bcx = ccx
                        bcy = ccy
                        ba = a
                        bb_ = b
        if best <= k - rmax:
            certified = True
            break
    if not certified:
        return HORIZON, -1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0

    R1 = rad[bj]
    qx = px + best * vx
    qy = py + best * vy
    n1x = (qx - bcx) / R1
    n1y = (qy - bcy) / R1
    nn = math.sqrt(n1x * n1x + n1y * n1y)
    n1x /= nn
    n1y /= nn
    cphi1 = -(vx * n1x + vy * n1y)
    # tangential component of the velocity is unchanged by reflection
    sphi1 = -(vx * n1y - vy * n1x)
    phi1 = math.atan2(sphi1, cphi1)
    th1 = math.atan2(n1y, n1x)
    if th1 < 0.0:
        th1 += TWO_PI
    r1 = R1 * th1
    if r1 >= TWO_PI * R1:
        r1 = 0.0
    da = ba + int(fx)
    db = bb_ + int(fy)
    if cphi1 <= guard:
        return GRAZING, bj, r1, phi1, best, 0.0, 0.0, 0.0, 0.0, da, db

    K = 1.0 / R
    K1 = 1.0 / R1
    tau = best
    inv = -1.0 / cphi1
    d11 = inv * (tau * K + cphi)
    d12 = inv * tau
    d21 = inv * (tau * K * K1 + K * cphi1 + K1 * cphi)
    d22 = inv * (tau * K1 + cphi1)
    return OK, bj, r1, phi1, tau, d11, d12, d21, d22, da, db


@njit(cache=True, nogil=True)
def reverse_step(cx, cy, rad, sid, r, phi, guard, max_ring):
    """Inverse collision map via time reversal ``(r, phi) -> (r, -phi)``.

    The returned displacement points from the previous copy to the current
    one, i.e. it is the forward displacement of the preimage.
    """
    out = collide(cx, cy, rad, sid, r, -phi, guard, max_ring)
    return out[0], out[1], out[2], -out[3], out[4], -out[9], -out[10]


@njit(cache=True, nogil=True)
def run_orbit(cx, cy, rad, sid, r, phi, n, guard, max_ring,
              sids, rs, phis, taus, mats):
    """Fill ``x_0 .. x_n`` into the output arrays.

    ``mats[k]`` holds the derivative at ``x_k`` (so ``mats[n]`` is unused).
    Returns ``(steps_done, status)``.
    """
    sids[0] = sid
    rs[0] = r
    phis[0] = phi
    for k in range(n):
        st, s1, r1, p1, tau, a, b, c, d, da, db = collide(
            cx, cy, rad, sids[k], rs[k], phis[k], guard, max_ring)
        if st != OK:
            return k, st
        sids[k + 1] = s1
        rs[k + 1] = r1
        phis[k + 1] = p1
        taus[k] = tau
        mats[k, 0, 0] = a
        mats[k, 0, 1] = b
        mats[k, 1, 0] = c
        mats[k, 1, 1] = d
    return n, OK


@njit(cache=True, nogil=True)
def log_expansion(cx, cy, rad, sid, r, phi, slope0, warmup, n, guard,
                  max_ring, out, sids, rs, phis):
    """Push ``(1, slope0)`` through ``warmup`` steps, then record ``n`` log
    expansion factors into ``out``. Visited points ``x_0 .. x_{n-1}`` after
    the warmup are stored in ``sids``/``rs``/``phis``.

    Returns ``(status, last_slope)``.
    """
    vr = 1.0
    vp = slope0
    nrm = math.sqrt(vr * vr + vp * vp)
    vr /= nrm
    vp /= nrm
    s = sid
    x = r
    p = phi
    for k in range(warmup + n):
        if k >= warmup:
            sids[k - warmup] = s
            rs[k - warmup] = x
            phis[k - warmup] = p
        st, s1, r1, p1, tau, a, b, c, d, da, db = collide(
            cx, cy, rad, s, x, p, guard, max_ring)
        if st != OK:
            return st, 0.0
        wr = a * vr + b * vp
        wp = c * vr + d * vp
        nrm = math.sqrt(wr * wr + wp * wp)
        if k >= warmup:
            out[k - warmup] = math.log(nrm)
        vr = wr / nrm
        vp = wp / nrm
        s = s1
        x = r1
        p = p1
    return OK, vp / vr


@njit(cache=True, nogil=True)
def trajectory(cx, cy, rad, sid, r, phi, warmup, n, guard, max_ring,
               sids, rs, phis, logexp):
    """Orbit segment ``x_0 .. x_n`` with ``x_0 = T^warmup(start)``.

    A cone vector is carried along from the start, so ``logexp[k]`` is the
    one-step log expansion at ``x_k`` in the (approximately) unstable
    direction. Returns ``(steps_done, status)``; ``steps_done < n`` means the
    orbit grazed.
    """
    vr = 1.0
    vp = 1.0 / rad[sid]
    nrm = math.sqrt(vr * vr + vp * vp)
    vr /= nrm
    vp /= nrm
    s = sid
    x = r
    p = phi
    for k in range(warmup + n):
        if k >= warmup:
            sids[k - warmup] = s
            rs[k - warmup] = x
            phis[k - warmup] = p
        st, s1, r1, p1, tau, a, b, c, d, da, db = collide(
            cx, cy, rad, s, x, p, guard, max_ring)
        if st != OK:
            return k - warmup, st
        wr = a * vr + b * vp
        wp = c * vr + d * vp
        nrm = math.sqrt(wr * wr + wp * wp)
        if k >= warmup:
            logexp[k - warmup] = math.log(nrm)
        vr = wr / nrm
        vp = wp / nrm
        s = s1
        x = r1
        p = p1
    sids[n] = s
    rs[n] = x
    phis[n] = p
    return n, OK


@njit(cache=True, nogil=True)
def next_points(cx, cy, rad, sids, rs, phis, guard, max_ring, out_s, out_r,
                out_p, status):
    for i in range(sids.shape[0]):
        st, s1, r1, p1, tau, a, b, c, d, da, db = collide(
            cx, cy, rad, sids[i], rs[i], phis[i], guard, max_ring)
        status[i] = st
        out_s[i] = s1
        out_r[i] = r1
        out_p[i] = p1


@njit(cache=True, nogil=True)
def unstable_log_jacobian_at(cx, cy, rad, sid, r, phi, warmup, guard,
                             max_ring):
    """One-step log expansion at ``x`` along a cone vector that has been
    transported from ``T^{-warmup} x``.

    Returns ``(status, value)``.
    """
    bs = np.empty(warmup + 1, dtype=np.int64)
    br = np.empty(warmup + 1)
    bp = np.empty(warmup + 1)
    bs[0] = sid
    br[0] = r
    bp[0] = phi
    for k in range(warmup):
        st, s1, r1, p1, tau, da, db = reverse_step(
            cx, cy, rad, bs[k], br[k], bp[k], guard, max_ring)
        if st != OK:
            return st, 0.0
        bs[k + 1] = s1
        br[k + 1] = r1
        bp[k + 1] = p1
    vr = 1.0
    vp = 1.0 / rad[bs[warmup]]
    nrm = math.sqrt(vr * vr + vp * vp)
    vr /= nrm
    vp /= nrm
    for k in range(warmup, 0, -1):
        st, s1, r1, p1, tau, a, b, c, d, da, db = collide(
            cx, cy, rad, bs[k], br[k], bp[k], guard, max_ring)
        if st != OK:
            return st, 0.0
        wr = a * vr + b * vp
        wp = c * vr + d * vp
        nrm = math.sqrt(wr * wr + wp * wp)
        vr = wr / nrm
        vp = wp / nrm
    st, s1, r1, p1, tau, a, b, c, d, da, db = collide(
        cx, cy, rad, sid, r, phi, guard, max_ring)
    if st != OK:
        return st, 0.0
    wr = a * vr + b * vp
    wp = c * vr + d * vp
    return OK, 0.5 * math.log(wr * wr + wp * wp)


@njit(cache=True, nogil=True)
def unstable_log_jacobian_many(cx, cy, rad, sids, rs, phis, warmup, guard,
                               max_ring, out, status):
    for i in range(sids.shape[0]):
        st, val = unstable_log_jacobian_at(
            cx, cy, rad, sids[i], rs[i], phis[i], warmup, guard, max_ring)
        status[i] = st
        out[i] = val


# Cell resolution used by the itinerary kernels.
CELLS_IDS = 0      # scatterer ids only
CELLS_COPIES = 1   # ids plus the lattice copy of the next scatterer
CELLS_CHART = 2    # copies plus the side of the r = 0 chart seam


@njit(cache=True, nogil=True)
def _seam_side(theta, dx, dy):
    """Which side of ``theta = 0`` an angle lies on, cutting the circle at
    the point facing away from direction ``(dx, dy)``.

    Points of a disk that a straight segment can connect to another disk
    copy never include the point facing directly away from it, so within one
    transition the seam splits the reachable arc into exactly two pieces.
    """
    cut = math.atan2(dy, dx) + math.pi
    w = (theta - cut) % TWO_PI
    w0 = (-cut) % TWO_PI
    return 1 if w > w0 else 0


@njit(cache=True, nogil=True)
def step_code(cx, cy, rad, sid, r, sid1, r1, da, db, max_ring, mode):
    """Encode the transition ``x_k -> x_{k+1}`` as one integer.

    ``code % n_scatterers`` is always the scatterer id of ``x_k``.
    """
    ns = rad.shape[0]
    if mode == CELLS_IDS:
        return sid
    w = max_ring + 1
    disp = (da + w) * (2 * w + 1) + (db + w)
    if mode == CELLS_COPIES:
        return sid + ns * disp
    ox = cx[sid1] + da - cx[sid]
    oy = cy[sid1] + db - cy[sid]
    dep = _seam_side(r / rad[sid], ox, oy)
    land = _seam_side(r1 / rad[sid1], -ox, -oy)
    nd = (2 * w + 1) * (2 * w + 1)
    return sid + ns * (disp + nd * (2 * dep + land))


@njit(cache=True, nogil=True)
def itineraries(cx, cy, rad, sids, rs, phis, depth, guard, max_ring, mode,
                words, ok):
    """Centred itinerary words of length ``2 * depth + 1``.

    Column ``j < 2 * depth`` holds the transition code of collision
    ``j - depth``; the last column holds the scatterer id at time ``depth``.
    For ``depth == 0`` the word is just the scatterer id.
    """
    m = depth
    for i in range(sids.shape[0]):
        ok[i] = True
        s = sids[i]
        x = rs[i]
        p = phis[i]
        for k in range(m):
            st, s1, x1, p, tau, a, b, c, d, da, db = collide(
                cx, cy, rad, s, x, p, guard, max_ring)
            if st != OK:
                ok[i] = False
                break
            words[i, m + k] = step_code(cx, cy, rad, s, x, s1, x1, da, db,
                                        max_ring, mode)
            s = s1
            x = x1
        if not ok[i]:
            continue
        words[i, 2 * m] = s
        s = sids[i]
        x = rs[i]
        p = phis[i]
        for k in range(1, m + 1):
            st, s0, x0, p, tau, da, db = reverse_step(
                cx, cy, rad, s, x, p, guard, max_ring)
            if st != OK:
                ok[i] = False
                break
            words[i, m - k] = step_code(cx, cy, rad, s0, x0, s, x, da, db,
                                        max_ring, mode)
            s = s0
            x = x0


@njit(cache=True, nogil=True)
def symbol_orbit(cx, cy, rad, sid, r, phi, n, guard, max_ring, mode, out):
    """Transition codes of ``x_0 .. x_{n-1}``; returns ``(steps, status)``."""
    s = sid
    x = r
    p = phi
    for k in range(n):
        st, s1, x1, p, tau, a, b, c, d, da, db = collide(
            cx, cy, rad, s, x, p, guard, max_ring)
        if st != OK:
            return k, st
        out[k] = step_code(cx, cy, rad, s, x, s1, x1, da, db, max_ring, mode)
        s = s1
        x = x1
    return n, OK


@njit(cache=True, nogil=True)
def separation(cx, cy, rad, s1, r1, p1, s2, r2, p2, n_max, guard, max_ring,
               mode):
    """First ``n`` at which the two points lie in different itinerary cells
    of ``M minus S_n``; ``-1`` if none up to ``n_max``."""
    if s1 != s2:
        return 0
    for n in range(n_max):
        st1, t1, q1, p1, tau, a, b, c, d, da1, db1 = collide(
            cx, cy, rad, s1, r1, p1, guard, max_ring)
        st2, t2, q2, p2, tau, a, b, c, d, da2, db2 = collide(
            cx, cy, rad, s2, r2, p2, guard, max_ring)
        bad1 = st1 != OK
        bad2 = st2 != OK
        if bad1 != bad2:
            return n + 1
        if bad1 and bad2:
            return -1
        if t1 != t2:
            return n + 1
        c1 = step_code(cx, cy, rad, s1, r1, t1, q1, da1, db1, max_ring, mode)
        c2 = step_code(cx, cy, rad, s2, r2, t2, q2, da2, db2, max_ring, mode)
        if c1 != c2:
            return n + 1
        s1, r1 = t1, q1
        s2, r2 = t2, q2
    return -1


@njit(cache=True, nogil=True)
def cat_orbit(X, Y, n, xs, ys):
    """Cat map on the lattice ``(2^-64 Z / Z)^2`` with exact uint64 wrap."""
    for k in range(n):
        xs[k] = X
        ys[k] = Y
        X, Y = X + X + Y, X + Y
    return X, Y
