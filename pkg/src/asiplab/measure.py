"""SRB measure of the billiard map, itinerary partitions and alpha-mixing.

The invariant measure of the collision map has density ``c cos(phi)`` with
``c = 1 / (2 |boundary|)``. Substituting ``u = sin(phi)`` makes it flat, so
sampling is uniform in ``(r, u)`` and quadrature uses a tanh-sinh rule in
``u`` to absorb the logarithmic endpoint singularities of observables such as
``-log cos(phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _kernels as K
from ._validation import as_rng, check_symbols
from .dynamics import BilliardTable, PhasePoint
from .errors import InsufficientSamples, MissingCell, QuadratureDivergence


@dataclass(frozen=True, eq=False)
class SRBMeasure:
    table: BilliardTable

    @property
    def normalizer(self) -> float:
        return 1.0 / (2.0 * self.table.boundary_length)

    def sample(self, rng, size):
        """``size`` independent points as arrays ``(sids, r, phi)``."""
        rng = as_rng(rng)
        t = self.table
        p = t.perimeters / t.boundary_length
        sids = rng.choice(t.n_scatterers, size=size, p=p)
        r = rng.random(size) * t.perimeters[sids]
        phi = np.arcsin(rng.uniform(-1.0, 1.0, size))
        return sids.astype(np.int64), r, phi


def srb_sample(measure: SRBMeasure, rng) -> PhasePoint:
    s, r, phi = measure.sample(rng, 1)
    return PhasePoint(int(s[0]), float(r[0]), float(phi[0]))


# --- quadrature ------------------------------------------------------------

_T_CUT = 3.6  # sech(pi/2 sinh 3.6) ~ 1e-13


def _tanh_sinh(h, offset=0.0):
    """Nodes ``u``, ``cos(asin(u))`` and weights on [-1, 1]."""
    k = np.arange(math.floor((-_T_CUT - offset) / h),
                  math.ceil((_T_CUT - offset) / h) + 1)
    t = offset + k * h
    t = t[np.abs(t) <= _T_CUT]
    z = 0.5 * np.pi * np.sinh(t)
    u = np.tanh(z)
    c = 1.0 / np.cosh(z)
    w = h * 0.5 * np.pi * np.cosh(t) * c * c
    return u, c, w


def _grid(table, resolution, r_nodes, shift=None):
    if shift is None:
        u, c, wu = _tanh_sinh(1.0 / resolution)
        x, wx = np.polynomial.legendre.leggauss(r_nodes)
        x = 0.5 * (x + 1.0)
        wx = 0.5 * wx
    else:
        su, sr = shift
        u, c, wu = _tanh_sinh(1.0 / resolution, su / resolution)
        x = (np.arange(r_nodes) + sr) / r_nodes
        wx = np.full(r_nodes, 1.0 / r_nodes)
    phi = np.arctan2(u, c)
    sids, rs, phis, ws = [], [], [], []
    for s in range(table.n_scatterers):
        per = table.perimeters[s]
        R, P = np.meshgrid(x * per, phi, indexing="ij")
        W = np.outer(wx * per, wu)
        sids.append(np.full(R.size, s, dtype=np.int64))
        rs.append(R.ravel())
        phis.append(P.ravel())
        ws.append(W.ravel())
    w = np.concatenate(ws) / (2.0 * table.boundary_length)
    return np.concatenate(sids), np.concatenate(rs), np.concatenate(phis), w


def _integrate(measure, f, resolution, r_nodes, shift=None):
    s, r, phi, w = _grid(measure.table, resolution, r_nodes, shift)
    vals = np.asarray(f(s, r, phi), dtype=float)
    good = np.isfinite(vals)
    return float(np.sum(vals[good] * w[good]))


def srb_expectation(measure, f, resolution=16, r_nodes=32, *, tol=1e-6,
                    shifts=0, rng=None, return_error=False):
    """Integral of ``f(sids, r, phi)`` against the SRB measure.

    With ``shifts == 0`` a deterministic Gauss-Legendre x tanh-sinh product
    rule is used and compared with the half-resolution rule; a difference
    above ``tol`` raises :class:`QuadratureDivergence`. With ``shifts > 0``
    the rule is an equal-weight grid in ``r`` randomly shifted ``shifts``
    times, and the error is the standard error over shifts (useful for
    discontinuous integrands).
    """
    if shifts:
        rng = as_rng(rng)
        vals = np.array([
            _integrate(measure, f, resolution, r_nodes,
                       shift=(rng.random(), rng.random()))
            for _ in range(shifts)])
        est = float(vals.mean())
        err = float(vals.std(ddof=1) / math.sqrt(shifts)) if shifts > 1 else np.nan
    else:
        est = _integrate(measure, f, resolution, r_nodes)
        coarse = _integrate(measure, f, max(1, resolution // 2),
                            max(1, r_nodes // 2))
        err = abs(est - coarse)
        if tol is not None and err > tol * max(1.0, abs(est)):
            raise QuadratureDivergence(
                f"halving the resolution moved the estimate by {err:.3g}")
    return (est, err) if return_error else est


def lp_norm(measure, f, p, **kwargs):
    if p < 1:
        raise ValueError("p must be >= 1")
    val = srb_expectation(measure, lambda s, r, phi: np.abs(f(s, r, phi)) ** p,
                          **kwargs)
    return val ** (1.0 / p)


# --- itinerary cells -------------------------------------------------------

CELL_MODES = {"ids": K.CELLS_IDS, "copies": K.CELLS_COPIES,
              "chart": K.CELLS_CHART}


def _cell_mode(cells):
    try:
        return CELL_MODES[cells]
    except KeyError:
        raise ValueError(f"cells must be one of {sorted(CELL_MODES)}, "
                         f"got {cells!r}") from None


# --- separation times ------------------------------------------------------

@dataclass(frozen=True)
class SeparationResult:
    n: int
    saturated: bool = False


def separation_time(table, x: PhasePoint, y: PhasePoint, n_max: int, *,
                    cells="chart"):
    """First ``n`` at which the orbits of ``x`` and ``y`` fall in different
    itinerary cells, or exactly one of them grazes.

    ``cells`` selects what a cell remembers about each transition; see
    :func:`itinerary_words`.
    """
    n = K.separation(*table._args(), x.scatterer_id, x.r, x.phi,
                     y.scatterer_id, y.r, y.phi, n_max, table.guard,
                     table.max_ring, _cell_mode(cells))
    if n < 0:
        return SeparationResult(n_max, saturated=True)
    return SeparationResult(int(n))


def separation_times(table, xs, ys, n_max, *, cells="chart"):
    """Vectorised separation times; saturated pairs get ``n_max``."""
    out = np.empty(len(xs[0]), dtype=np.int64)
    args = table._args()
    mode = _cell_mode(cells)
    for i in range(len(out)):
        n = K.separation(*args, xs[0][i], xs[1][i], xs[2][i],
                         ys[0][i], ys[1][i], ys[2][i], n_max, table.guard,
                         table.max_ring, mode)
        out[i] = n_max if n < 0 else n
    return out


# --- cylinder partitions ---------------------------------------------------

def itinerary_words(table, sids, r, phi, depth, cells="chart"):
    """Centred itinerary words of length ``2 * depth + 1``.

    Entry ``j < 2 * depth`` codes the transition out of collision
    ``j - depth``; the last entry is the scatterer at time ``depth``. What a
    transition code remembers depends on ``cells``:

    ``"ids"``
        the scatterer id only. On the torus these words do not shrink: two
        points can share every id and still fly to different copies of the
        same disk.
    ``"copies"``
        the id and the lattice copy of the next scatterer, so cells are the
        connected pieces cut out by tangential collisions.
    ``"chart"``
        additionally the side of the ``r = 0`` seam on which both endpoints
        lie. This treats each scatterer as the rectangle
        ``[0, 2 pi R) x [-pi/2, pi/2]`` whose edge ``r = 0`` belongs to the
        boundary, which is what makes functions of the global arc position
        (discontinuous at the seam) piecewise smooth on cells.

    Rows with a grazing event are flagged ``False`` in the returned mask.
    """
    n = len(sids)
    words = np.zeros((n, 2 * depth + 1), dtype=np.int32)
    ok = np.zeros(n, dtype=np.bool_)
    K.itineraries(*table._args(), np.asarray(sids, dtype=np.int64),
                  np.asarray(r, dtype=float), np.asarray(phi, dtype=float),
                  depth, table.guard, table.max_ring, _cell_mode(cells),
                  words, ok)
    return words, ok


@dataclass(eq=False)
class CylinderPartition:
    depth: int
    words: np.ndarray          # unique words, one row per cell
    weights: np.ndarray        # empirical cell weights
    counts: np.ndarray
    labels: np.ndarray         # cell index of every retained sample
    sids: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    min_occupancy: int = 50
    n_dropped: int = 0
    cells: str = "chart"
    index: dict = field(default_factory=dict, repr=False)

    @property
    def n_cells(self) -> int:
        return len(self.weights)

    @property
    def low_confidence(self) -> np.ndarray:
        return self.counts < self.min_occupancy

    def lookup(self, words):
        """Cell index for each word, ``-1`` when unseen."""
        return np.array([self.index.get(w.tobytes(), -1) for w in words],
                        dtype=np.int64)


def cylinder_partition(table, measure, m, N, rng, min_occupancy=50,
                       cells="chart"):
    """Key ``N`` SRB samples by their centred depth-``m`` itinerary words."""
    if m < 0 or N < 1:
        raise ValueError("need m >= 0 and N >= 1")
    sids, r, phi = measure.sample(rng, N)
    words, ok = itinerary_words(table, sids, r, phi, m, cells)
    words, sids, r, phi = words[ok], sids[ok], r[ok], phi[ok]
    uniq, labels, counts = np.unique(words, axis=0, return_inverse=True,
                                     return_counts=True)
    labels = labels.ravel()
    index = {w.tobytes(): i for i, w in enumerate(uniq)}
    return CylinderPartition(depth=m, words=uniq,
                             weights=counts / counts.sum(), counts=counts,
                             labels=labels, sids=sids, r=r, phi=phi,
                             min_occupancy=min_occupancy,
                             n_dropped=int(N - ok.sum()), index=index,
                             cells=cells)


class CellConditionalExpectation(TransformerMixin, BaseEstimator):
    """Piecewise-constant conditional expectation on a finite partition.

    ``fit(labels, values)`` stores the average of ``values`` in each cell;
    ``transform(labels)`` returns the cell average for each label. Labels of
    ``-1`` (unseen cells) are either skipped (NaN, counted in ``n_missing_``)
    or raise, depending on ``on_missing``.
    """

    def __init__(self, on_missing="skip"):
        self.on_missing = on_missing

    def fit(self, labels, values):
        labels = np.asarray(labels, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=float).ravel()
        n_cells = int(labels.max()) + 1 if labels.size else 0
        sums = np.bincount(labels, weights=values, minlength=n_cells)
        counts = np.bincount(labels, minlength=n_cells)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.cell_means_ = np.where(counts > 0, sums / counts, np.nan)
        self.cell_counts_ = counts
        return self

    def transform(self, labels):
        check_is_fitted(self, "cell_means_")
        labels = np.asarray(labels, dtype=np.int64).ravel()
        unseen = (labels < 0) | (labels >= len(self.cell_means_))
        if unseen.any() and self.on_missing == "raise":
            raise MissingCell(f"{int(unseen.sum())} points fall in unseen cells")
        out = np.full(labels.shape, np.nan)
        out[~unseen] = self.cell_means_[labels[~unseen]]
        self.n_missing_ = int(unseen.sum())
        return out


@dataclass(frozen=True, eq=False)
class ConditionalApproximation:
    estimator: CellConditionalExpectation
    g: np.ndarray       # cell average at every sample point
    sup_gap: float
    n_missing: int

    def __call__(self, labels):
        return self.estimator.transform(labels)


def conditional_expectation_on_cells(f, partition: CylinderPartition,
                                     min_occupancy=None):
    """Cell averages of ``f`` and the sampled sup of ``|f - g|``.

    The sup runs over samples in cells with at least ``min_occupancy`` points
    (defaults to the partition's threshold); sparsely filled cells say little
    about the oscillation of ``f``.
    """
    vals = np.asarray(f(partition.sids, partition.r, partition.phi), dtype=float)
    est = CellConditionalExpectation().fit(partition.labels, vals)
    g = est.transform(partition.labels)
    thresh = partition.min_occupancy if min_occupancy is None else min_occupancy
    dense = partition.counts[partition.labels] >= thresh
    gap = np.abs(vals - g)[dense]
    sup = float(gap.max()) if gap.size else 0.0
    return ConditionalApproximation(est, g, sup, est.n_missing_)


# --- alpha mixing ----------------------------------------------------------

@dataclass(frozen=True)
class MixingEstimate:
    gap: int
    depth: int
    alpha: float
    sample_size: int
    stderr: float
    n_pairs: int = 0


class AlphaMixing(BaseEstimator):
    """Empirical alpha-mixing coefficient of the itinerary partition.

    ``fit(symbols)`` takes one long symbolic orbit of step codes. A
    depth-``m`` word at time ``k`` is ``symbols[k - m : k + m]`` followed by
    ``symbols[k + m] % n_scatterers`` (the final position only keeps the
    scatterer; leave ``n_scatterers=None`` to keep the full code). For every gap the
    estimate is the largest ``|P(A and B) - P(A) P(B)|`` over pairs of
    centred depth-``depth`` cylinders ``A`` (at time k) and ``B`` (at time
    ``k + gap``), restricted to cells with at least ``min_occupancy`` visits.
    The standard error is the one of the maximising pair under independence.
    """

    def __init__(self, depth=1, gaps=(1,), min_occupancy=50, min_pairs=1,
                 n_scatterers=None):
        self.n_scatterers = n_scatterers
        self.depth = depth
        self.gaps = gaps
        self.min_occupancy = min_occupancy
        self.min_pairs = min_pairs

    def fit(self, symbols):
        symbols = check_symbols(symbols)
        m = self.depth
        gaps = np.atleast_1d(np.asarray(self.gaps, dtype=np.int64))
        L = 2 * m + 1
        n_words = len(symbols) - L + 1
        N = n_words - int(gaps.max())
        if N < 1:
            raise InsufficientSamples("orbit shorter than the largest gap")
        windows = np.lib.stride_tricks.sliding_window_view(symbols, L)
        if self.n_scatterers is not None:
            windows = windows.copy()
            windows[:, -1] %= self.n_scatterers
        _, codes = np.unique(windows, axis=0, return_inverse=True)
        codes = codes.ravel()
        alphas, errs, pairs, details = [], [], [], []
        for n in gaps:
            a = codes[:N]
            b = codes[n:n + N]
            res = self._alpha(a, b, N)
            alphas.append(res[0])
            errs.append(res[1])
            pairs.append(res[2])
            details.append(res[3])
        self.alpha_ = np.array(alphas)
        self.stderr_ = np.array(errs)
        self.n_pairs_ = np.array(pairs)
        self.covariances_ = details
        self.sample_size_ = N
        return self

    def _alpha(self, a, b, N):
        k = int(max(a.max(), b.max())) + 1
        ca = np.bincount(a, minlength=k)
        cb = np.bincount(b, minlength=k)
        va = np.flatnonzero(ca >= self.min_occupancy)
        vb = np.flatnonzero(cb >= self.min_occupancy)
        if len(va) * len(vb) < self.min_pairs:
            raise InsufficientSamples("too few cells above minimum occupancy")
        ia = np.full(k, -1)
        ia[va] = np.arange(len(va))
        ib = np.full(k, -1)
        ib[vb] = np.arange(len(vb))
        keep = (ia[a] >= 0) & (ib[b] >= 0)
        joint = np.zeros((len(va), len(vb)))
        np.add.at(joint, (ia[a[keep]], ib[b[keep]]), 1.0)
        pab = joint / N
        pa = ca[va] / N
        pb = cb[vb] / N
        cov = pab - np.outer(pa, pb)
        i, j = np.unravel_index(np.argmax(np.abs(cov)), cov.shape)
        alpha = float(min(1.0, abs(cov[i, j])))
        q = pa[i] * pb[j]
        return alpha, math.sqrt(max(q * (1 - q), 0.0) / N), cov.size, cov

    def estimate(self, gap):
        check_is_fitted(self, "alpha_")
        i = list(np.atleast_1d(self.gaps)).index(gap)
        return MixingEstimate(gap=int(gap), depth=self.depth,
                              alpha=float(self.alpha_[i]),
                              sample_size=self.sample_size_,
                              stderr=float(self.stderr_[i]),
                              n_pairs=int(self.n_pairs_[i]))


def symbolic_orbit(table, measure, N, rng, burn_in=1000, cells="chart"):
    """Step codes of one SRB-started orbit after discarding ``burn_in``.

    Codes are the transition codes of :func:`itinerary_words`;
    ``code % n_scatterers`` is the scatterer id.

    A grazing event restarts the orbit from a fresh sample.
    """
    rng = as_rng(rng)
    mode = _cell_mode(cells)
    out = np.empty(burn_in + N, dtype=np.int64)
    filled = 0
    while filled < len(out):
        s, r, phi = measure.sample(rng, 1)
        buf = np.empty(len(out) - filled, dtype=np.int64)
        done, _ = K.symbol_orbit(*table._args(), s[0], r[0], phi[0], len(buf),
                                 table.guard, table.max_ring, mode, buf)
        out[filled:filled + done] = buf[:done]
        filled += done
    return out[burn_in:]


def alpha_mixing_estimate(table, measure, m, n, N, rng, *, burn_in=1000,
                          min_occupancy=50, symbols=None, cells="chart"):
    if m < 0 or n < 0:
        raise ValueError("need m >= 0 and n >= 0")
    if symbols is None:
        symbols = symbolic_orbit(table, measure, N + n + 2 * m, rng, burn_in,
                                 cells)
    est = AlphaMixing(depth=m, gaps=(n,), min_occupancy=min_occupancy,
                      n_scatterers=table.n_scatterers)
    return est.fit(symbols).estimate(n)
