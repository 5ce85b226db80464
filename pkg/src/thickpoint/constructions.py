"""
Explicit vector families with controlled spectral-measure scaling.

* Low-dimensional vectors: a finite head plus a tail ``j^(-s/2)`` in the
  eigenbasis.  With ``s q > 1`` the partition sums stay bounded uniformly in
  epsilon, so D(q) = 0.
* High-dimensional vectors: a head plus a tail ``l^(-(1+1/n)/2)`` placed on
  the eigenvectors of a weakly-spaced eigenvalue subsequence.  At the scales
  ``eps_m = gap_m / 2`` the partition sums grow like ``m^(1-(1+1/n)q)``, which
  forces D+(q) >= t_{n,q}.
* Divergent-moment vectors: a head plus ``|n|^(-(p+1)/2)`` in a labelled
  basis, whose p-th moment partial sums grow like ``2 ln m``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.special

from .errors import DomainError, SummabilityViolated, WitnessTooShallow
from .measure import PointMeasure, ball_mass, partition_sum
from .models import EigenSystem, spectral_measure
from .spacing import SpacingWitness

KINDS = ("low_dim", "high_dim", "divergent")
MIN_TAIL = 8


def t_nq(n, q):
    """Predicted lower bound ``(1 - (1+1/n) q) / ((1-q)(1+1/n))`` on D+(q); needs n > q/(1-q)."""
    q = float(q)
    if not 0 < q < 1:
        raise DomainError("q must lie in (0, 1)")
    if not n > q / (1.0 - q):
        raise DomainError(f"n = {n} must exceed q/(1-q) = {q / (1 - q):.6g}")
    r = 1.0 + 1.0 / n
    return (1.0 - r * q) / ((1.0 - q) * r)


@dataclass(frozen=True)
class ConstructionSpec:
    """Parameters of one constructed vector.

    ``low_dim`` uses ``s`` and ``q``; ``high_dim`` uses ``n``, ``q`` and
    ``r_k`` (default k + 1); ``divergent`` uses ``p`` and ``j``.  ``k`` is the
    head length and ``size`` the ambient dimension.
    """

    kind: str
    size: int
    k: int = 0
    q: Optional[float] = None
    s: Optional[float] = None
    n: Optional[int] = None
    r_k: Optional[int] = None
    p: Optional[float] = None
    j: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.k < 0 or self.size < 1:
            raise ValueError("k must be >= 0 and size >= 1")
        if self.kind == "low_dim":
            if self.s is None or self.q is None:
                raise ValueError("low_dim needs s and q")
            if not self.s * self.q > 1:
                raise SummabilityViolated(f"s*q = {self.s * self.q} must exceed 1")
        elif self.kind == "high_dim":
            if self.n is None or self.q is None:
                raise ValueError("high_dim needs n and q")
            t_nq(self.n, self.q)
            if self.r_k is not None and self.r_k <= self.k:
                raise ValueError("r_k must exceed k")
        else:
            if self.p is None or self.j is None:
                raise ValueError("divergent needs p and j")
            if not self.p > 0:
                raise DomainError("p must be positive")
            if not 0 <= self.j < self.size // 2:
                raise ValueError("cutoff j must satisfy 0 <= j < size/2")

    @property
    def tail_start(self) -> int:
        return self.k + 1 if self.r_k is None else self.r_k

    def to_dict(self) -> dict:
        return asdict(self)


def _normalize(c: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(c)
    if nrm == 0:
        raise ValueError("constructed vector is zero")
    return c / nrm


def low_dim_coefficients(size: int, head: Sequence[complex], s: float, q: float) -> np.ndarray:
    """Unit eigen-coefficients: ``head`` on the first k eigenvectors, ``j^(-s/2)`` on j = k+1..N."""
    if not s * q > 1:
        raise SummabilityViolated(f"s*q = {s * q} must exceed 1 for a summable tail")
    head = np.asarray(head, dtype=complex if np.iscomplexobj(head) else float).reshape(-1)
    k = head.size
    if k > size:
        raise ValueError("head longer than the ambient dimension")
    c = np.zeros(size, dtype=head.dtype)
    c[:k] = head
    j = np.arange(k + 1, size + 1, dtype=float)
    c[k:] = j ** (-s / 2.0)
    return _normalize(c)


def build_low_dim_vector(eig: EigenSystem, head: Sequence[complex], tail_exponent: float,
                         q_target: float) -> np.ndarray:
    """Truncated, renormalized low-dimensional vector in the working basis."""
    c = low_dim_coefficients(eig.size, head, tail_exponent, q_target)
    return eig.synthesize(c)


def partition_bound(coefficients, q: float) -> float:
    """``sum_j |c_j|^(2q)``, an epsilon-uniform upper bound on the partition sum."""
    w = np.abs(np.asarray(coefficients)) ** 2
    w = w[w > 0]
    return float(np.sum(w ** q))


def high_dim_coefficients(size: int, witness: SpacingWitness, n: int, q: float,
                          head: Sequence[complex] = (), r_k: Optional[int] = None,
                          min_tail: int = MIN_TAIL) -> np.ndarray:
    """Unit eigen-coefficients: ``head`` on eigen-indices 0..k-1 and
    ``l^(-(1+1/n)/2)`` on eigen-index ``j_l`` for witness levels l >= r_k."""
    t_nq(n, q)
    if abs(witness.alpha - 1.0 / n) > 1e-12:
        raise ValueError(f"witness alpha {witness.alpha} does not match 1/n = {1.0 / n}")
    head = np.asarray(head).reshape(-1)
    k = head.size
    r_k = k + 1 if r_k is None else int(r_k)
    if r_k <= k:
        raise ValueError("r_k must exceed the head length")
    levels = witness.levels
    sel = levels >= r_k
    if np.count_nonzero(sel) < min_tail:
        raise WitnessTooShallow(
            f"witness has {np.count_nonzero(sel)} levels from r_k = {r_k}, need {min_tail}")
    idx = witness.indices[sel]
    if np.any(idx >= size):
        raise ValueError("witness index outside the eigenbasis")
    if np.any(idx < k):
        raise ValueError("witness indices overlap the head")
    c = np.zeros(size, dtype=complex if np.iscomplexobj(head) else float)
    c[:k] = head
    c[idx] = levels[sel].astype(float) ** (-(1.0 + 1.0 / n) / 2.0)
    return _normalize(c)


def build_high_dim_vector(eig: EigenSystem, witness: SpacingWitness, n: int, q: float,
                          head: Sequence[complex] = (), r_k: Optional[int] = None,
                          min_tail: int = MIN_TAIL) -> np.ndarray:
    """Truncated, renormalized high-dimensional vector in the working basis.

    The witness must index ``eig.eigenvalues`` and have ``alpha = 1/n``.
    """
    c = high_dim_coefficients(eig.size, witness, n, q, head, r_k, min_tail)
    return eig.synthesize(c)


def construction_scale_grid(witness: SpacingWitness, eigenvalues) -> np.ndarray:
    """``eps_m = |lambda_{j_m} - lambda_{j_{m+1}}| / 2`` for each witnessed gap, in level order."""
    lam = np.asarray(eigenvalues, dtype=float)
    v = lam[witness.indices]
    return 0.5 * np.abs(v[:-1] - v[1:])


def isolation_threshold(mu: PointMeasure, witness: SpacingWitness, eigenvalues,
                        r_k: int, rtol: float = 1e-12) -> Optional[int]:
    """Finite analogue of M(k): the smallest level m from which, for every later m' and
    every tail level l in [r_k, m'], the ball ``B(lambda_{j_l}, eps_m')`` carries only
    the atom at its centre.  ``None`` if the check never holds.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    eps = construction_scale_grid(witness, lam)
    levels = witness.levels[:-1]
    centres = lam[witness.indices]
    atom = {float(x): m for x, m in zip(mu.positions, mu.masses)}
    good = np.zeros(eps.size, dtype=bool)
    for i, (m, e) in enumerate(zip(levels, eps)):
        tail = (witness.levels >= r_k) & (witness.levels <= m)
        x = centres[tail]
        if x.size == 0:
            continue
        own = np.array([atom.get(float(v), 0.0) for v in x])
        got = ball_mass(mu, x, e)
        good[i] = bool(np.all(np.abs(got - own) <= rtol * mu.total_mass) and np.all(own > 0))
    if good.size == 0 or not good[-1]:
        return None
    bad = np.nonzero(~good)[0]
    return int(levels[0] if bad.size == 0 else levels[bad[-1] + 1])


def tail_completeness(levels, last_level: int, exponent: float) -> np.ndarray:
    """Fraction of the infinite tail ``sum_{l>m} l^-exponent`` retained when the tail stops at ``last_level``."""
    m = np.asarray(levels, dtype=float)
    return 1.0 - scipy.special.zeta(exponent, last_level + 1.0) / scipy.special.zeta(exponent, m + 1.0)


@dataclass
class HighDimReport:
    """Certification of a high-dimensional vector at the construction scales.

    ``slope`` is the regression over the certified levels; ``full_slope``
    uses every witnessed level from ``max(M_k, r_k, L0)`` on, truncated
    tail included.
    """

    n: int
    q: float
    t_nq: float
    M_k: Optional[int]
    levels: list
    eps: list
    partition_sums: list
    slope: float
    full_slope: float
    passed: bool
    tolerance: float = 0.1
    completeness: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)


def certify_high_dim(xi, eig: EigenSystem, witness: SpacingWitness, n: int, q: float,
                     r_k: Optional[int] = None, tolerance: float = 0.1,
                     completeness: float = 0.5, min_points: int = 8) -> HighDimReport:
    """Regression slope of ln S(q, eps_m) against (q-1) ln eps_m over the certified levels.

    A level m is certified when m >= max(M(k), r_k, L0) and the truncated
    tail beyond m keeps at least ``completeness`` of the mass the infinite
    tail ``l^-(1+1/n)`` would put there.  The slope is compared with
    ``t_nq(n, q) - tolerance``.
    """
    bound = t_nq(n, q)
    mu = spectral_measure(eig, xi)
    r_k = witness.first_level if r_k is None else r_k
    m_k = isolation_threshold(mu, witness, eig.eigenvalues, r_k)
    eps = construction_scale_grid(witness, eig.eigenvalues)
    levels = witness.levels[:-1]
    start = max(m_k if m_k is not None else levels[-1] + 1, r_k, witness.L0)
    base = levels >= start
    s_all = np.array([partition_sum(mu, q, e) if b else np.nan for e, b in zip(eps, base)])
    x_all = (q - 1.0) * np.log(eps)

    def _slope(sel):
        if np.count_nonzero(sel) < min_points:
            return float("nan")
        return float(np.polyfit(x_all[sel], np.log(s_all[sel]), 1)[0])

    full = _slope(base)
    sel = base & (tail_completeness(levels, int(witness.levels[-1]), 1.0 + 1.0 / n) >= completeness)
    slope = _slope(sel)
    return HighDimReport(n, q, bound, m_k, levels[sel].tolist(), eps[sel].tolist(),
                         s_all[sel].tolist(), slope, full, bool(slope >= bound - tolerance),
                         tolerance, completeness)


def build_divergent_moment_vector(size: int, p: float, j: int, head=None,
                                  origin: Optional[int] = None,
                                  normalize: bool = True) -> np.ndarray:
    """Basis coefficients: ``head`` on labels |n| <= j and ``|n|^(-(p+1)/2)`` on |n| > j.

    Labels are ``n = i - origin`` for basis position i, origin defaulting
    to ``(size - 1) // 2``.  ``head`` is a full-length vector (only its
    |n| <= j part is used); by default it is the basis vector at n = 0.
    """
    if not p > 0:
        raise DomainError("p must be positive")
    origin = (size - 1) // 2 if origin is None else origin
    if not 0 <= j < size // 2:
        raise ValueError("cutoff j must satisfy 0 <= j < size/2")
    labels = np.arange(size) - origin
    a = np.abs(labels).astype(float)
    if head is None:
        head = (labels == 0).astype(float)
    head = np.asarray(head)
    if head.shape != (size,):
        raise ValueError("head must be a full-length vector")
    out = np.where(a <= j, head, 0.0).astype(head.dtype if np.iscomplexobj(head) else float)
    tail = a > j
    out[tail] = a[tail] ** (-(p + 1.0) / 2.0)
    return _normalize(out) if normalize else out


def moment_partial_sums(xi, p: float, j: int, radii, origin: Optional[int] = None) -> np.ndarray:
    """``sum_{j < |n| <= m} |n|^p |xi_n|^2`` for each m in ``radii``."""
    xi = np.asarray(xi)
    origin = (xi.size - 1) // 2 if origin is None else origin
    a = np.abs(np.arange(xi.size) - origin)
    w = np.where(a > 0, a.astype(float) ** p, 0.0) * np.abs(xi) ** 2
    out = []
    for m in np.atleast_1d(radii):
        sel = (a > j) & (a <= m)
        out.append(float(np.sum(w[sel])))
    return np.array(out)


def harmonic_growth(xi, p: float, j: int, radii, origin: Optional[int] = None) -> float:
    """Least-squares ``c`` in ``partial_sum(m) ~ c ln m + b`` over ``radii``."""
    sums = moment_partial_sums(xi, p, j, radii, origin)
    return float(np.polyfit(np.log(np.asarray(radii, dtype=float)), sums, 1)[0])


# -- persistence -------------------------------------------------------------

def save_construction(stem, spec: ConstructionSpec, vector, report: Optional[dict] = None,
                      extra: Optional[dict] = None) -> Path:
    """Write ``<stem>.json`` (spec, report, blob checksum) and ``<stem>.npy`` (coefficients).

    ``extra`` entries are merged into the top level of the JSON document.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    blob = stem.with_suffix(".npy")
    np.save(blob, np.asarray(vector), allow_pickle=False)
    digest = hashlib.sha256(blob.read_bytes()).hexdigest()
    meta = dict(extra or {})
    meta.update({"spec": spec.to_dict(), "report": report or {}, "blob": blob.name,
                 "sha256": digest})
    path = stem.with_suffix(".json")
    path.write_text(json.dumps(meta, indent=2, default=float))
    return path


def load_construction(path):
    """Inverse of ``save_construction``; verifies the blob checksum."""
    path = Path(path)
    meta = json.loads(path.read_text())
    blob = path.parent / meta["blob"]
    if hashlib.sha256(blob.read_bytes()).hexdigest() != meta["sha256"]:
        raise ValueError(f"checksum mismatch for {blob}")
    vec = np.load(blob, allow_pickle=False)
    return ConstructionSpec(**meta["spec"]), vec, meta["report"]
