"""
Finite point measures and their generalized fractal dimensions.

Three independent routes estimate the q-generalized dimensions D^-(q) and
D^+(q) of a finite point measure, for 0 < q < 1:

* ball scaling: the partition sum ``S(q, eps) = sum_j mu(B(x_j, eps))^(q-1) m_j``,
* mean-q: the exact integral ``eps^-1 int mu(B(x, eps))^q dx``,
* dynamical: the exponentially smoothed correlation integral
  ``C(q, t) = t int (sum_j m_j exp(-t|x - x_j|))^q dx`` evaluated at ``t = 1/eps``.

A finite measure has trivial dimensions in the eps -> 0 limit, so every
estimate is a finite-scale surrogate: liminf and limsup are replaced by the
minimum and maximum of least-squares slopes over sliding sub-windows of a
geometric scale grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateWindow, DomainError, NumericalError

MERGE_TOL = 1e-12
MASS_FLOOR = 1e-16
GRID_RATIO = 2.0 ** 0.25
SUB_WINDOW = 6
# balls holding at most this many atoms are summed directly, larger ones via prefix sums
_DIRECT_SUM_MAX = 16


@dataclass(frozen=True)
class PointMeasure:
    """Finite positive measure made of atoms ``(position, mass)``.

    Positions are strictly increasing and masses nonnegative with positive,
    finite total.  Use :meth:`from_atoms` to build one from unsorted data.
    """

    positions: np.ndarray
    masses: np.ndarray
    total_mass: float = field(init=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1)
        m = np.array(self.masses, dtype=float).reshape(-1)
        if pos.shape != m.shape or pos.size == 0:
            raise ValueError("positions and masses must be nonempty and of equal length")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(m))):
            raise ValueError("atoms must be finite")
        if np.any(np.diff(pos) <= 0):
            raise ValueError("positions must be strictly increasing")
        if np.any(m < 0):
            raise ValueError("masses must be nonnegative")
        total = float(np.sum(m))
        if not total > 0:
            raise ValueError("total mass must be positive")
        pos.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "total_mass", total)

    @classmethod
    def from_atoms(cls, positions, masses, merge_tol: float = MERGE_TOL,
                   drop_zero: bool = True) -> "PointMeasure":
        """Sort atoms, merge those closer than ``merge_tol * diameter``, drop zero masses."""
        pos = np.asarray(positions, dtype=float).reshape(-1)
        m = np.asarray(masses, dtype=float).reshape(-1)
        if pos.shape != m.shape:
            raise ValueError("positions and masses must have equal length")
        order = np.argsort(pos, kind="stable")
        pos, m = pos[order], m[order]
        if pos.size > 1:
            tol = merge_tol * (pos[-1] - pos[0])
            starts = np.concatenate(([True], np.diff(pos) > tol))
            group = np.cumsum(starts) - 1
            gm = np.bincount(group, weights=m)
            first = pos[starts]
            wsum = np.bincount(group, weights=m * (pos - first[group]))
            with np.errstate(invalid="ignore", divide="ignore"):
                shift = np.where(gm > 0, wsum / gm, 0.0)
            pos, m = first + shift, gm
        if drop_zero:
            keep = m > 0
            pos, m = pos[keep], m[keep]
        return cls(pos, m)

    @property
    def size(self) -> int:
        return int(self.positions.size)

    @property
    def diameter(self) -> float:
        return float(self.positions[-1] - self.positions[0])

    @property
    def radius(self) -> float:
        """Smallest r with support inside [-r, r]."""
        return float(np.max(np.abs(self.positions)))

    def min_gap(self) -> Optional[float]:
        if self.size < 2:
            return None
        return float(np.min(np.diff(self.positions)))

    def floored(self, rel: float = MASS_FLOOR) -> "PointMeasure":
        """Drop atoms lighter than ``rel * total_mass``."""
        keep = self.masses >= rel * self.total_mass
        if np.all(keep):
            return self
        return PointMeasure(self.positions[keep], self.masses[keep])

    def normalized(self) -> "PointMeasure":
        return PointMeasure(self.positions, self.masses / self.total_mass)

    # -- serialization -------------------------------------------------------

    def to_text(self, header: Sequence[str] = ()) -> str:
        lines = [f"# {h}" for h in header]
        lines.append("# position mass")
        lines += [f"{x!r} {w!r}" for x, w in zip(self.positions.tolist(), self.masses.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PointMeasure":
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            x, w = line.split()[:2]
            rows.append((float(x), float(w)))
        if not rows:
            raise ValueError("no atoms found")
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1])

    def to_json(self) -> str:
        atoms = [[x, w] for x, w in zip(self.positions.tolist(), self.masses.tolist())]
        return json.dumps({"atoms": atoms, "total_mass": self.total_mass})

    @classmethod
    def from_json(cls, text: str) -> "PointMeasure":
        arr = np.array(json.loads(text)["atoms"], dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Legendre panel order, relative tolerance and refinement cap."""

    order: int = 10
    tolerance: float = 1e-10
    max_refinements: int = 40


@dataclass(frozen=True)
class ScalingFit:
    """Finite-data surrogate for a liminf/limsup of a log-log ratio.

    ``abscissae`` hold ln(scale) (ln eps, or ln t on the dynamical route) in
    ascending order; ``ordinates`` are normalized so that their slope against
    the abscissae is the dimension estimate.  ``window`` is the half-open
    index range actually fitted.
    """

    abscissae: np.ndarray
    ordinates: np.ndarray
    window: Tuple[int, int]
    lower_slope: float
    upper_slope: float
    residual: float
    local_slopes: np.ndarray
    global_slope: float

    @property
    def quotients(self) -> np.ndarray:
        """Per-scale ratios ordinate/abscissa over the window (the un-limited quotient)."""
        i0, i1 = self.window
        return self.ordinates[i0:i1] / self.abscissae[i0:i1]

    def to_dict(self) -> dict:
        return {
            "abscissae": self.abscissae.tolist(),
            "ordinates": self.ordinates.tolist(),
            "window": list(self.window),
            "lower_slope": self.lower_slope,
            "upper_slope": self.upper_slope,
            "global_slope": self.global_slope,
            "residual": self.residual,
        }


# -- elementary quantities ---------------------------------------------------

def _ball_masses(mu: PointMeasure, x: np.ndarray, eps: float) -> np.ndarray:
    pos, m = mu.positions, mu.masses
    lo = np.searchsorted(pos, x - eps, side="right")
    hi = np.searchsorted(pos, x + eps, side="left")
    count = hi - lo
    out = np.empty(x.shape, dtype=float)
    small = count <= _DIRECT_SUM_MAX
    if np.any(small):
        idx = lo[small, None] + np.arange(_DIRECT_SUM_MAX)
        valid = idx < hi[small, None]
        idx = np.minimum(idx, pos.size - 1)
        out[small] = np.sum(np.where(valid, m[idx], 0.0), axis=1)
    if not np.all(small):
        cum = np.concatenate(([0.0], np.cumsum(m.astype(np.longdouble))))
        big = ~small
        out[big] = (cum[hi[big]] - cum[lo[big]]).astype(float)
    return out


def ball_mass(mu: PointMeasure, x, eps: float):
    """Mass of the open interval ``(x - eps, x + eps)``; ``x`` may be an array."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    xa = np.asarray(x, dtype=float)
    out = _ball_masses(mu, xa.reshape(-1), float(eps)).reshape(xa.shape)
    return float(out) if out.ndim == 0 else out


def _check_q(q):
    if not 0 < q < 1:
        raise DomainError(f"q must lie in (0, 1), got {q}")


def partition_sum(mu: PointMeasure, q: float, eps: float) -> float:
    """``sum_j mu(B(x_j, eps))^(q-1) m_j`` over the atoms of ``mu``."""
    _check_q(q)
    if not eps > 0:
        raise DomainError("eps must be positive")
    if np.any(mu.masses <= 0):
        raise ValueError("zero-mass atoms must be filtered before computing partition sums")
    b = _ball_masses(mu, mu.positions, float(eps))
    return float(np.sum(mu.masses * b ** (q - 1.0)))


def mean_q_integral(mu: PointMeasure, q: float, eps: float) -> float:
    """Exact ``eps^-1 int mu(B(x, eps))^q dx`` by a breakpoint sweep.

    ``x -> mu(B(x, eps))`` is piecewise constant with jumps only at
    ``x_j -+ eps``; each constant piece is evaluated at its midpoint.
    """
    _check_q(q)
    if not eps > 0:
        raise DomainError("eps must be positive")
    br = np.sort(np.concatenate((mu.positions - eps, mu.positions + eps)))
    lengths = np.diff(br)
    mids = 0.5 * (br[:-1] + br[1:])
    vals = _ball_masses(mu, mids, float(eps))
    return float(np.sum(lengths * vals ** q) / eps)


# -- correlation integral ----------------------------------------------------

def _gauss_legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _two_exp_integral(a, b, xl, wl, xr, wr, q, t, nodes, weights):
    """GL estimate of int_a^b (wl e^{-t(x-xl)} + wr e^{-t(xr-x)})^q dx per panel."""
    half = 0.5 * (b - a)
    x = 0.5 * (a + b)[:, None] + half[:, None] * nodes[None, :]
    f = (wl[:, None] * np.exp(-t * (x - xl[:, None]))
         + wr[:, None] * np.exp(-t * (xr[:, None] - x))) ** q
    return half * (f @ weights)


def correlation_integral(mu: PointMeasure, q: float, t: float,
                         quad: QuadratureSpec = QuadratureSpec()) -> float:
    """``C(q, t) = t int_{-r-1}^{r+1} (int e^{-t|x-y|} dmu(y))^q dx``.

    The inner integral is an exact sum of exponentials evaluated in O(1) per
    point through left/right recursions over the sorted atoms.  The outer
    integral is split at every atom (the integrand has kinks there); the two
    outermost pieces hold a single exponential and are integrated in closed
    form, the interior panels by adaptive Gauss-Legendre bisection.
    """
    _check_q(q)
    if not t > 0:
        raise DomainError("t must be positive")
    pos, m = mu.positions, mu.masses
    r = mu.radius
    lo_end, hi_end = -r - 1.0, r + 1.0
    k = pos.size
    gaps = np.diff(pos)
    decay = np.exp(-t * gaps)
    left = np.empty(k)
    right = np.empty(k)
    left[0] = m[0]
    for i in range(1, k):
        left[i] = m[i] + left[i - 1] * decay[i - 1]
    right[-1] = m[-1]
    for i in range(k - 2, -1, -1):
        right[i] = m[i] + right[i + 1] * decay[i]

    # outer pieces: (w e^{-t u})^q over u in [0, L] integrates to w^q (1 - e^{-q t L}) / (q t)
    len_l, len_r = pos[0] - lo_end, hi_end - pos[-1]
    outer = (right[0] ** q * -np.expm1(-q * t * len_l)
             + left[-1] ** q * -np.expm1(-q * t * len_r)) / (q * t)
    if k == 1:
        return float(t * outer)

    nodes, weights = _gauss_legendre(quad.order)
    a, b = pos[:-1].copy(), pos[1:].copy()
    xl, wl, xr, wr = pos[:-1].copy(), left[:-1].copy(), pos[1:].copy(), right[1:].copy()
    coarse = _two_exp_integral(a, b, xl, wl, xr, wr, q, t, nodes, weights)
    scale = outer + float(np.sum(coarse))
    total = outer
    err_total = 0.0
    span = hi_end - lo_end
    for _ in range(quad.max_refinements):
        mid = 0.5 * (a + b)
        fl = _two_exp_integral(a, mid, xl, wl, xr, wr, q, t, nodes, weights)
        fr = _two_exp_integral(mid, b, xl, wl, xr, wr, q, t, nodes, weights)
        fine = fl + fr
        diff = np.abs(fine - coarse)
        ok = diff <= quad.tolerance * np.maximum(np.abs(fine), scale * (b - a) / span)
        total += float(np.sum(fine[ok]))
        err_total += float(np.sum(diff[ok]))
        if np.all(ok):
            break
        bad = ~ok
        a = np.concatenate((a[bad], mid[bad]))
        b = np.concatenate((mid[bad], b[bad]))
        xl, wl = np.tile(xl[bad], 2), np.tile(wl[bad], 2)
        xr, wr = np.tile(xr[bad], 2), np.tile(wr[bad], 2)
        coarse = np.concatenate((fl[bad], fr[bad]))
    else:
        err_total += float(np.sum(np.abs(coarse)))
        total += float(np.sum(coarse))
        if err_total > quad.tolerance * abs(total):
            raise NumericalError(
                f"correlation integral did not converge in {quad.max_refinements} refinements",
                achieved=err_total / abs(total))
    return float(t * total)


# -- scaling fits ------------------------------------------------------------

def _ls_slope(x, y):
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def sliding_slopes(x, y, width: int = SUB_WINDOW) -> np.ndarray:
    """Least-squares slopes of ``y`` on ``x`` over every run of ``width`` consecutive points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < width:
        return np.array([_ls_slope(x, y)])
    return np.array([_ls_slope(x[i:i + width], y[i:i + width])
                     for i in range(x.size - width + 1)])


def fit_scaling(x, y, window: Tuple[int, int], width: int = SUB_WINDOW) -> ScalingFit:
    """Build a :class:`ScalingFit` from ascending ``x`` over ``window`` (half-open)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    i0, i1 = window
    if i1 - i0 < 4:
        raise DegenerateWindow(f"only {i1 - i0} points in window, need at least 4")
    xs, ys = x[i0:i1], y[i0:i1]
    local = sliding_slopes(xs, ys, width)
    g = _ls_slope(xs, ys)
    intercept = ys.mean() - g * xs.mean()
    resid = float(np.sqrt(np.mean((ys - (g * xs + intercept)) ** 2)))
    return ScalingFit(x, y, (i0, i1), float(local.min()), float(local.max()), resid, local, g)


def scale_grid(lo: float, hi: float, ratio: float = GRID_RATIO,
               min_points: int = 8, min_decades: float = 2.0) -> np.ndarray:
    """Ascending geometric grid ``hi * ratio^-k`` reaching below ``lo``.

    The grid is extended downward when needed so that it has at least
    ``min_points`` points and spans ``min_decades`` decades.
    """
    if not (0 < lo <= hi):
        raise ValueError("need 0 < lo <= hi")
    lo_eff = min(lo, hi * 10.0 ** -min_decades)
    n = int(np.ceil(np.log(hi / lo_eff) / np.log(ratio) * (1 - 1e-12))) + 1
    n = max(n, min_points)
    return hi * ratio ** -np.arange(n)[::-1]


def _window_indices(grid, window):
    lo, hi = window
    sel = np.nonzero((grid >= lo * (1 - 1e-9)) & (grid <= hi * (1 + 1e-9)))[0]
    if sel.size < 4:
        raise DegenerateWindow(f"only {sel.size} grid points inside window {window}")
    return int(sel[0]), int(sel[-1]) + 1


def estimate_dimensions(values_fn: Callable[[float], float], q: float, grid,
                        window: Optional[Tuple[float, float]] = None, *,
                        dynamical: bool = False, width: int = SUB_WINDOW) -> ScalingFit:
    """Fit the scaling of ``values_fn`` over a scale grid.

    For energy scales ``eps`` the ordinate is ``ln V(eps) / (q - 1)``; on the
    dynamical route the grid holds times ``t`` and the ordinate is
    ``-ln C(t) / (q - 1)``, so in both cases the slope against ln(scale) is the
    dimension estimate.  ``lower_slope``/``upper_slope`` are the min/max of the
    sliding sub-window slopes inside ``window``.
    """
    _check_q(q)
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size < 8 or np.log10(grid[-1] / grid[0]) < 2 - 1e-9:
        raise ValueError("scale grid needs at least 8 points spanning 2 decades")
    i0, i1 = (0, grid.size) if window is None else _window_indices(grid, window)
    vals = np.full(grid.size, np.nan)
    for i in range(i0, i1):
        vals[i] = values_fn(grid[i])
    v = vals[i0:i1]
    if not np.all(np.isfinite(v) & (v > 0)):
        raise NumericalError("scaling values must be finite and positive")
    x = np.log(grid)
    y = np.log(vals) / (q - 1.0)
    if dynamical:
        y = -y
    return fit_scaling(x, y, (i0, i1), width)


def default_window(mu: PointMeasure) -> Tuple[float, float]:
    """Energy window ``[2 * min gap, 0.25 * diameter]``.

    Falls back to three decades below ``0.25 * diameter`` when the measure
    is too sparse for that window to span two decades.  A single atom gets
    ``[1e-5, 1e-2]``, which keeps ``t = 1/eps`` large enough on the
    dynamical route for the ``exp(-q t)`` support-edge term to vanish.
    """
    gap = mu.min_gap()
    if gap is not None:
        lo, hi = 2.0 * gap, 0.25 * mu.diameter
        if lo * 100.0 <= hi:
            return lo, hi
    hi = 0.25 * mu.diameter if mu.size > 1 else 0.01
    return hi * 1e-3, hi


def shared_window(mu: PointMeasure) -> Tuple[float, float]:
    """Window on which all three routes probe the same scaling regime.

    ``[8 * median gap, 0.02 * diameter]``: the exponential kernel of the
    correlation integral carries O(1/(t * diameter)) support-edge corrections
    that the hard-ball routes do not, so the top of the window sits well
    below the diameter.
    """
    if mu.size < 2:
        return default_window(mu)
    lo = 8.0 * float(np.median(np.diff(mu.positions)))
    hi = 0.02 * mu.diameter
    if lo * 4.0 > hi:
        return default_window(mu)
    return lo, hi


ROUTES = ("ball", "mean_q", "correlation")


def dimension_fit(mu: PointMeasure, q: float, route: str = "ball",
                  window: Optional[Tuple[float, float]] = None,
                  grid=None, quad: QuadratureSpec = QuadratureSpec(),
                  width: int = SUB_WINDOW) -> ScalingFit:
    """Dimension estimate of ``mu`` at ``q`` by one of :data:`ROUTES`.

    ``window`` and ``grid`` are energy scales for every route; the
    correlation route probes ``t = 1/eps``.
    """
    mu = mu.floored()
    if window is None:
        window = default_window(mu)
    if grid is None:
        grid = scale_grid(*window)
    grid = np.asarray(grid, dtype=float)
    if route == "ball":
        return estimate_dimensions(lambda e: partition_sum(mu, q, e), q, grid, window, width=width)
    if route == "mean_q":
        return estimate_dimensions(lambda e: mean_q_integral(mu, q, e), q, grid, window, width=width)
    if route == "correlation":
        twin = (1.0 / window[1], 1.0 / window[0])
        return estimate_dimensions(lambda t: correlation_integral(mu, q, t, quad), q,
                                   1.0 / grid, twin, dynamical=True, width=width)
    raise ValueError(f"unknown route {route!r}; expected one of {ROUTES}")


# -- pointwise exponents and packing dimension -------------------------------

def pointwise_upper_exponent(mu: PointMeasure, x: float, grid=None,
                             width: int = SUB_WINDOW) -> float:
    """Surrogate for ``limsup_{eps->0} ln mu(B(x,eps)) / ln eps``.

    Slope of ln ball mass against ln eps over the ``width`` finest scales of
    ``grid``.  The default grid descends past a quarter of the distance from
    ``x`` to its nearest other atom, which is the eps -> 0 regime of a finite
    measure.  Returns ``inf`` if a probed ball is empty.
    """
    if grid is None:
        others = mu.positions[np.abs(mu.positions - x) > 0]
        near = float(np.min(np.abs(others - x))) if others.size else 1.0
        far = max(mu.diameter, near)
        grid = scale_grid(0.25 * near, 0.25 * far)
    grid = np.sort(np.asarray(grid, dtype=float))[:width]
    b = np.array([ball_mass(mu, x, e) for e in grid])
    if np.any(b <= 0):
        return float("inf")
    return _ls_slope(np.log(grid), np.log(b))


def packing_dimension_estimate(mu: PointMeasure, width: int = SUB_WINDOW) -> float:
    """Max of pointwise upper exponents over atoms of positive mass.

    Every atom of a finite measure carries its own mass in arbitrarily small
    balls, so the finest-scale slopes all vanish.
    """
    gap = mu.min_gap()
    base = 0.5 * gap if gap is not None else 0.1
    grid = base * GRID_RATIO ** -np.arange(width)[::-1]
    pts = mu.positions[mu.masses > 0]
    logs = np.array([np.log(_ball_masses(mu, pts, e)) for e in grid])
    lx = np.log(grid)
    xc = lx - lx.mean()
    slopes = xc @ (logs - logs.mean(axis=0)) / np.dot(xc, xc)
    return float(np.max(slopes))
