"""
Time evolution, time-averaged position moments and transport exponents.

The time-averaged p-moment of a state xi in an orthonormal basis
``{xi_n}`` labelled by integers is

    M_p(t) = (1/t) int_0^t sum_n |n|^p |<exp(-isT) xi, xi_n>|^2 ds.

Writing xi in the eigenbasis, ``c_j = <e_j, xi>``, the time average
collapses onto the kernel ``K_t(D) = (1 - exp(-itD)) / (itD)``:

    M_p(t) = Re sum_{j,k} c_j conj(c_k) G_p[j,k] K_t(lambda_j - lambda_k),
    G_p[j,k] = sum_n |n|^p B[n,j] conj(B[n,k]),   B[n,j] = <xi_n, e_j>.

``G_p`` costs one O(N^3) product per p; each time then costs O(N^2).  For
large N a sampled path averages ``|exp(-isT) xi|^2`` over stratified random
times inside each log-spaced segment of the time grid.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateWindow, NumericalError
from .measure import PointMeasure, ScalingFit, dimension_fit, default_window, fit_scaling, \
    packing_dimension_estimate
from .models import EigenSystem, ModelSpec, TridiagonalMatrix

N_KERNEL = 512
SAMPLES = 64
POINTS_PER_DECADE = 16
# eigen-components with |c_j|^2 below this fraction of ||c||^2 are roundoff residue
_COEFF_FLOOR = 1e-28


@dataclass(frozen=True)
class IndexMap:
    """Integer labels for an orthonormal basis of the working space.

    ``vectors`` holds the basis vectors as columns; ``None`` means the
    canonical (site) basis, in which case ``labels[i]`` labels site i.
    """

    labels: np.ndarray
    vectors: Optional[np.ndarray] = None
    tag: str = "canonical"

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if np.unique(lab).size != lab.size:
            raise ValueError("basis labels must be distinct")
        object.__setattr__(self, "labels", lab)

    @classmethod
    def canonical(cls, size: int, origin: Optional[int] = None) -> "IndexMap":
        origin = (size - 1) // 2 if origin is None else origin
        return cls(np.arange(size) - origin)

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> "IndexMap":
        return cls(spec.labels())

    def weights(self, p: float) -> np.ndarray:
        """``|n|^p`` with the n = 0 weight exactly 0."""
        a = np.abs(self.labels).astype(float)
        return np.where(a > 0, a ** p, 0.0)

    def amplitudes(self, eig: EigenSystem) -> np.ndarray:
        """``B[n, j] = <xi_n, e_j>``."""
        v = eig.eigenvectors
        if v is None:
            v = np.eye(eig.size)
        if self.vectors is None:
            return v
        return self.vectors.conj().T @ v


@dataclass(frozen=True)
class MomentSeries:
    """``moments[i, k]`` is M_{p_k}(t_i); ``path`` is ``exact`` or ``sampled``."""

    times: np.ndarray
    p_values: np.ndarray
    moments: np.ndarray
    path: str
    stderr: Optional[np.ndarray] = None
    basis_tag: str = "canonical"

    def column(self, p: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.p_values - p)))
        if abs(self.p_values[k] - p) > 1e-12:
            raise KeyError(f"p = {p} not in series")
        return self.moments[:, k]

    def to_csv(self, header: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for h in header:
            buf.write(f"# {h}\n")
        buf.write(f"# basis: {self.basis_tag}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "p", "moment", "path", "stderr"])
        for i, t in enumerate(self.times):
            for k, p in enumerate(self.p_values):
                se = 0.0 if self.stderr is None else self.stderr[i, k]
                w.writerow([repr(float(t)), repr(float(p)), repr(float(self.moments[i, k])),
                            self.path, repr(float(se))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MomentSeries":
        tag = "canonical"
        rows = []
        for line in text.splitlines():
            if line.startswith("# basis:"):
                tag = line.split(":", 1)[1].strip()
            elif line and not line.startswith("#") and not line.startswith("t,"):
                rows.append(line.split(","))
        times = sorted({float(r[0]) for r in rows})
        ps = sorted({float(r[1]) for r in rows})
        m = np.zeros((len(times), len(ps)))
        se = np.zeros_like(m)
        ti = {t: i for i, t in enumerate(times)}
        pi = {p: k for k, p in enumerate(ps)}
        for r in rows:
            i, k = ti[float(r[0])], pi[float(r[1])]
            m[i, k] = float(r[2])
            se[i, k] = float(r[4])
        return cls(np.array(times), np.array(ps), m, rows[0][3], se, tag)


@dataclass(frozen=True)
class TransportEstimate:
    p: float
    alpha_plus: float
    fit: ScalingFit

    @property
    def time_window(self) -> Tuple[float, float]:
        i0, i1 = self.fit.window
        return float(np.exp(self.fit.abscissae[i0])), float(np.exp(self.fit.abscissae[i1 - 1]))

    def to_dict(self) -> dict:
        return {"p": self.p, "alpha_plus": self.alpha_plus,
                "time_window": list(self.time_window), "fit": self.fit.to_dict()}


# -- evolution and kernels ---------------------------------------------------

def evolve(eig: EigenSystem, xi, t: float) -> np.ndarray:
    """``exp(-itT) xi``."""
    c = eig.coefficients(np.asarray(xi, dtype=complex))
    return eig.synthesize(np.exp(-1j * t * eig.eigenvalues) * c)


def average_kernel(t: float, delta) -> np.ndarray:
    """``(1/t) int_0^t exp(-is delta) ds``, equal to 1 at delta = 0."""
    x = t * np.asarray(delta, dtype=float)
    re = np.sinc(x / np.pi)
    with np.errstate(invalid="ignore", divide="ignore"):
        im = np.where(x != 0, -2.0 * np.sin(0.5 * x) ** 2 / np.where(x != 0, x, 1.0), 0.0)
    return re + 1j * im


def time_avg_site_prob(eig: EigenSystem, xi, t: float, n: int,
                       basis: Optional[IndexMap] = None) -> float:
    """``(1/t) int_0^t |<exp(-isT) xi, xi_n>|^2 ds`` in closed form.

    ``n`` indexes the basis vectors (a site index for the canonical basis).
    """
    if not t > 0:
        raise ValueError("t must be positive")
    b = eig.eigenvectors if basis is None else basis.amplitudes(eig)
    row = np.eye(eig.size)[n] if b is None else b[n]
    a = eig.coefficients(np.asarray(xi, dtype=complex)) * row
    lam = eig.eigenvalues
    k = average_kernel(t, lam[:, None] - lam[None, :])
    val = np.real(a @ (k @ a.conj()))
    return max(float(val), 0.0)


def time_grid(t_min: float, t_max: float, per_decade: int = POINTS_PER_DECADE) -> np.ndarray:
    """Log-spaced times ``10^(k/per_decade)`` inside ``[t_min, t_max]``."""
    k0 = int(np.ceil(np.log10(t_min) * per_decade - 1e-9))
    k1 = int(np.floor(np.log10(t_max) * per_decade + 1e-9))
    return 10.0 ** (np.arange(k0, k1 + 1) / per_decade)


def ballistic_time_cap(matrix: TridiagonalMatrix) -> float:
    """``N / (4 v)`` with velocity proxy ``v = 2 max|hopping|``: time before edge reflections."""
    v = 2.0 * float(np.max(np.abs(matrix.offdiagonal)))
    return matrix.size / (4.0 * v)


# -- moments -----------------------------------------------------------------

def _reduce(eig, xi, basis):
    c = eig.coefficients(np.asarray(xi))
    w2 = np.abs(c) ** 2
    keep = np.nonzero(w2 > _COEFF_FLOOR * np.sum(w2))[0]
    b = np.ascontiguousarray(basis.amplitudes(eig)[:, keep])
    return c[keep], eig.eigenvalues[keep], b


def _moments_exact(c, lam, b, weights, times):
    delta = lam[:, None] - lam[None, :]
    real_case = not (np.iscomplexobj(c) or np.iscomplexobj(b))
    cc = np.outer(c, c.conj())
    amps = []
    for w in weights:
        g = b.T @ (w[:, None] * b.conj())
        amps.append(cc * g)
    out = np.empty((len(times), len(weights)))
    for i, t in enumerate(times):
        if real_case:
            k = np.sinc(t * delta / np.pi)
            for j, a in enumerate(amps):
                out[i, j] = np.sum(a * k)
        else:
            k = average_kernel(t, delta)
            for j, a in enumerate(amps):
                out[i, j] = np.sum(a.real * k.real - a.imag * k.imag)
    return np.maximum(out, 0.0)


def _moments_sampled(c, lam, b, weights, times, samples, seed, chunk=256):
    if samples % 2:
        raise ValueError("samples per segment must be even")
    rng = np.random.Generator(np.random.Philox(key=seed))
    edges = np.concatenate(([0.0], times))
    wmat = np.stack(weights, axis=1)  # (basis, P)
    cum = np.zeros(len(weights))
    var = np.zeros(len(weights))
    out = np.empty((len(times), len(weights)))
    se = np.empty_like(out)
    b_real = not np.iscomplexobj(b)
    for i in range(len(times)):
        lo, hi = edges[i], edges[i + 1]
        h = (hi - lo) / samples
        s = lo + h * (np.arange(samples) + rng.random(samples))
        vals = np.empty((samples, len(weights)))
        for s0 in range(0, samples, chunk):
            ss = s[s0:s0 + chunk]
            e = c[:, None] * np.exp(-1j * lam[:, None] * ss[None, :])
            if b_real:
                prob = (b @ np.ascontiguousarray(e.real)) ** 2 + (b @ np.ascontiguousarray(e.imag)) ** 2
            else:
                prob = np.abs(b @ e) ** 2
            vals[s0:s0 + chunk] = prob.T @ wmat
        cum += h * vals.sum(axis=0)
        d = vals[0::2] - vals[1::2]
        var += h * h * np.sum(d * d, axis=0)
        out[i] = cum / hi
        se[i] = np.sqrt(var) / hi
    return out, se


def moments(eig: EigenSystem, xi, p_values, times, basis: Optional[IndexMap] = None,
            method: str = "auto", n_kernel: int = N_KERNEL, samples: int = SAMPLES,
            seed: int = 0) -> MomentSeries:
    """Time-averaged moments ``M_p(t)`` for every ``p`` in ``p_values`` and ``t`` in ``times``.

    ``method`` is ``exact`` (closed-form kernel), ``sampled`` (stratified
    time sampling) or ``auto`` (exact iff N <= ``n_kernel``).
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be positive and strictly increasing")
    p_values = np.asarray(p_values, dtype=float)
    if np.any(p_values <= 0):
        raise ValueError("p must be positive")
    if basis is None:
        basis = IndexMap.canonical(eig.size)
    if method == "auto":
        method = "exact" if eig.size <= n_kernel else "sampled"
    c, lam, b = _reduce(eig, xi, basis)
    weights = [basis.weights(p) for p in p_values]
    if method == "exact":
        m = _moments_exact(c, lam, b, weights, times)
        se = np.zeros_like(m)
    elif method == "sampled":
        m, se = _moments_sampled(c, lam, b, weights, times, samples, seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return MomentSeries(times, p_values, m, method, se, basis.tag)


# -- exponents ---------------------------------------------------------------

def transport_exponent(series: MomentSeries, p: float,
                       window: Optional[Tuple[float, float]] = None) -> TransportEstimate:
    """limsup surrogate: max sliding 6-point slope of ln M_p against ln t inside ``window``."""
    t = series.times
    sel = np.ones(t.size, dtype=bool)
    if window is not None:
        sel = (t >= window[0] * (1 - 1e-9)) & (t <= window[1] * (1 + 1e-9))
    idx = np.nonzero(sel)[0]
    if idx.size < 8:
        raise DegenerateWindow(f"only {idx.size} time points in window, need at least 8")
    m = series.column(p)
    if np.any(m[idx] <= 0):
        raise NumericalError("moments must be positive inside the fit window")
    with np.errstate(divide="ignore"):
        y = np.log(m)
    fit = fit_scaling(np.log(t), y, (int(idx[0]), int(idx[-1]) + 1))
    return TransportEstimate(float(p), fit.upper_slope, fit)


def classify_quasiballistic(estimates: Sequence[TransportEstimate], tol: float = 0.15,
                            p_grid: Optional[Sequence[float]] = None) -> bool:
    """True iff every estimate has ``|alpha_plus - p| <= tol`` and all of ``p_grid`` is covered."""
    if not estimates:
        return False
    if p_grid is not None:
        have = [e.p for e in estimates]
        if any(min(abs(p - h) for h in have) > 1e-12 for p in p_grid):
            raise ValueError("estimates do not cover the p grid")
    return all(abs(e.alpha_plus - e.p) <= tol for e in estimates)


def exponents_monotone(estimates: Sequence[TransportEstimate], tol: float = 0.05) -> bool:
    """alpha_plus nondecreasing in p, up to ``tol``."""
    est = sorted(estimates, key=lambda e: e.p)
    return all(b.alpha_plus >= a.alpha_plus - tol for a, b in zip(est, est[1:]))


@dataclass
class BoundReport:
    """Rows ``(p, alpha, D+(1/(1+p)) p, packing p, gap, passed)`` at a tolerance."""

    tolerance: float
    rows: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows)

    def to_json(self) -> str:
        return json.dumps({"tolerance": self.tolerance, "passed": self.passed,
                           "rows": self.rows}, indent=2)


def verify_bounds(transport: Sequence[TransportEstimate], mu: PointMeasure,
                  tolerance: float = 0.15, window: Optional[Tuple[float, float]] = None,
                  route: str = "ball") -> BoundReport:
    """Check ``alpha+(p) >= D+(1/(1+p)) p`` and ``alpha+(p) >= dim_P(mu) p``.

    D+ is estimated at the energy scales ``eps = 1/t`` matched to each
    transport fit window, unless ``window`` is given.  A row passes when
    alpha is no more than ``tolerance`` below either bound; ``gap`` records
    the slack ``alpha - D+ p``.
    """
    packing = packing_dimension_estimate(mu)
    report = BoundReport(tolerance)
    for est in transport:
        q = 1.0 / (1.0 + est.p)
        if window is None:
            t_lo, t_hi = est.time_window
            win = (1.0 / t_hi, 1.0 / t_lo)
        else:
            win = window
        try:
            fit = dimension_fit(mu, q, route, window=win)
        except DegenerateWindow:
            fit = dimension_fit(mu, q, route, window=default_window(mu.floored()))
        d_plus = fit.upper_slope
        bound = d_plus * est.p
        row = {
            "p": est.p,
            "q": q,
            "alpha_plus": est.alpha_plus,
            "dimension_upper": d_plus,
            "gfd_bound": bound,
            "packing_bound": packing * est.p,
            "gap": est.alpha_plus - bound,
            "passed": bool(est.alpha_plus >= bound - tolerance
                           and est.alpha_plus >= packing * est.p - tolerance),
        }
        report.rows.append(row)
    return report
