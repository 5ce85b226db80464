"""
Weakly-spaced subsequences.

A sequence is weakly spaced when, for every alpha > 0, it has a subsequence
whose consecutive gaps decrease monotonically to zero while staying above
``C_alpha / l^(1 + alpha)``.  ``select_weakly_spaced`` builds such a
subsequence from a finite, sufficiently dense point set by steering level l
into a narrow window just above the target ``b_l = a + l^-alpha``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DomainError, WindowEmpty


def ws1_margin(x, alpha):
    """``(x/(x-1))^alpha + (x/(x+1))^alpha - 2``, which is positive for x > 1, alpha > 0.

    Evaluated as ``2 (expm1(s) cosh(d) + 2 sinh(d/2)^2)`` with
    ``s = -alpha log1p(-1/x^2) / 2`` and ``d = alpha atanh(1/x)`` so that no
    cancellation occurs when the margin is tiny.
    """
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(x <= 1):
        raise DomainError("ws1_margin requires x > 1")
    if np.any(alpha <= 0):
        raise DomainError("ws1_margin requires alpha > 0")
    s = -0.5 * alpha * np.log1p(-1.0 / (x * x))
    d = alpha * np.arctanh(1.0 / x)
    out = 2.0 * (np.expm1(s) * np.cosh(d) + 2.0 * np.sinh(0.5 * d) ** 2)
    return out if out.ndim else float(out)


def second_difference(level, alpha):
    """``K_l = b_{l-1} - 2 b_l + b_{l+1}`` for ``b_l = a + l^-alpha`` (independent of a), l >= 2."""
    level = np.asarray(level, dtype=float)
    if np.any(level < 2):
        raise DomainError("second difference needs l >= 2")
    return level ** (-np.asarray(alpha, dtype=float)) * ws1_margin(level, alpha)


def window_width(level, alpha):
    """Half-open target window width ``min(K_l / 2, alpha / (4 l^(1+alpha)))``."""
    level = np.asarray(level, dtype=float)
    return np.minimum(0.5 * second_difference(level, alpha), alpha / (4.0 * level ** (1.0 + alpha)))


@dataclass(frozen=True)
class SpacingWitness:
    """A selected subsequence: ``indices[i]`` is the source index used at level ``first_level + i``.

    ``L0`` is the first level from which gap bounds and monotonicity are
    certified.  ``stopped_at`` is the level whose target window was empty,
    if selection ended that way.
    """

    alpha: float
    indices: np.ndarray
    values: np.ndarray
    first_level: int
    C_alpha: float
    L0: int
    stopped_at: Optional[int] = None

    @property
    def depth(self) -> int:
        return int(self.indices.size)

    @property
    def levels(self) -> np.ndarray:
        return self.first_level + np.arange(self.depth)

    @property
    def gaps(self) -> np.ndarray:
        """``g_l = a_{j_l} - a_{j_{l+1}}`` for levels ``first_level .. first_level + depth - 2``."""
        return self.values[:-1] - self.values[1:]

    def to_json(self) -> str:
        return json.dumps({
            "alpha": self.alpha,
            "C_alpha": self.C_alpha,
            "L0": self.L0,
            "first_level": self.first_level,
            "stopped_at": self.stopped_at,
            "indices": [int(i) for i in self.indices],
            "values": [float(v) for v in self.values],
            "gaps": [float(g) for g in self.gaps],
        })

    @classmethod
    def from_json(cls, text: str) -> "SpacingWitness":
        d = json.loads(text)
        return cls(d["alpha"], np.asarray(d["indices"], dtype=np.int64),
                   np.asarray(d["values"], dtype=float), d["first_level"], d["C_alpha"],
                   d["L0"], d.get("stopped_at"))


def _gap_bounds(levels, alpha):
    l = np.asarray(levels, dtype=float)
    return alpha / (2.0 * l ** (1.0 + alpha)), 2.0 * alpha / l ** (1.0 + alpha)


def certified_from(gaps: np.ndarray, first_level: int, alpha: float) -> int:
    """Smallest level L such that for every gap level l >= L the gap lies in
    ``[alpha / (2 l^(1+alpha)), 2 alpha / l^(1+alpha)]`` and gaps are nonincreasing."""
    if gaps.size == 0:
        return first_level
    levels = first_level + np.arange(gaps.size)
    lo, hi = _gap_bounds(levels, alpha)
    ok = (gaps >= lo) & (gaps <= hi) & (gaps > 0)
    ok[:-1] &= gaps[:-1] >= gaps[1:]
    bad = np.nonzero(~ok)[0]
    return int(first_level if bad.size == 0 else levels[bad[-1]] + 1)


def select_weakly_spaced(points, alpha: float, interval: Optional[Tuple[float, float]] = None,
                         min_levels: int = 2, max_levels: int = 10 ** 6,
                         strict: bool = False) -> SpacingWitness:
    """Pick one point per level l inside ``[b_l, b_l + window_width(l)]``.

    Levels start at the first l >= 2 with ``b_l = a + l^-alpha`` inside
    ``[a, b)``.  Inside a window the smallest point is taken, ties going to
    the smallest index.  Selection ends at the first empty window: with
    ``strict`` or fewer than ``min_levels`` levels found this raises
    ``WindowEmpty``, otherwise the level is recorded in ``stopped_at``.
    """
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1)
    if pts.size == 0:
        raise ValueError("no points given")
    a, b = (float(pts.min()), float(pts.max())) if interval is None else map(float, interval)
    if not b > a:
        raise ValueError("the interval [a, b] must have positive length")
    order = np.argsort(pts, kind="stable")
    vals = pts[order]

    level = max(2, int(np.floor((b - a) ** (-1.0 / alpha))) + 1)
    while level > 2 and a + (level - 1) ** -alpha < b:
        level -= 1
    while a + level ** -alpha >= b:
        level += 1
    first = level

    chosen = []
    stopped = None
    while len(chosen) < max_levels:
        target = a + level ** -alpha
        hi = target + float(window_width(level, alpha))
        i = int(np.searchsorted(vals, target, side="left"))
        if i >= vals.size or vals[i] > hi:
            if strict or len(chosen) < min_levels:
                raise WindowEmpty(level, (target, hi))
            stopped = level
            break
        chosen.append(i)
        level += 1

    idx = order[np.asarray(chosen, dtype=np.int64)]
    values = pts[idx]
    gaps = values[:-1] - values[1:]
    l0 = certified_from(gaps, first, alpha)
    return SpacingWitness(float(alpha), idx, values, first, alpha / 2.0, l0, stopped)


def verify_weakly_spaced(points, witness: SpacingWitness) -> bool:
    """Independent re-check of a witness against the source points.

    Checks that indices are valid and distinct, values match the points and
    strictly decrease, and that from ``L0`` on every gap satisfies
    ``C_alpha / l^(1+alpha) <= g_l <= 2 alpha / l^(1+alpha)`` with gaps
    nonincreasing.  The finite surrogate for ``g_l -> 0`` is that the last
    gap is below a tenth of the first.
    """
    pts = np.asarray(points, dtype=float).reshape(-1)
    idx = np.asarray(witness.indices)
    if idx.size < 2 or not witness.C_alpha > 0 or not witness.alpha > 0:
        return False
    if np.any(idx < 0) or np.any(idx >= pts.size) or np.unique(idx).size != idx.size:
        return False
    vals = pts[idx]
    if not np.array_equal(vals, np.asarray(witness.values, dtype=float)):
        return False
    gaps = vals[:-1] - vals[1:]
    if np.any(gaps <= 0):
        return False
    levels = witness.first_level + np.arange(gaps.size, dtype=float)
    if witness.L0 < witness.first_level:
        return False
    sel = levels >= witness.L0
    if not np.any(sel):
        return False
    g = gaps[sel]
    l = levels[sel]
    a = witness.alpha
    if np.any(g < witness.C_alpha / l ** (1.0 + a)) or np.any(g > 2.0 * a / l ** (1.0 + a)):
        return False
    if np.any(np.diff(g) > 0):
        return False
    return bool(gaps[-1] < gaps[0] / 10.0)


@dataclass(frozen=True)
class GapReport:
    min_gap: float
    mean_gap: float
    max_gap: float
    rank_exponent: float

    def to_dict(self) -> dict:
        return {"min_gap": self.min_gap, "mean_gap": self.mean_gap,
                "max_gap": self.max_gap, "rank_exponent": self.rank_exponent}


def gap_statistics(eigenvalues) -> GapReport:
    """Nearest-neighbour gap summary and the log-log slope of descending gaps against rank."""
    lam = np.sort(np.asarray(eigenvalues, dtype=float).reshape(-1))
    if lam.size < 3:
        raise ValueError("need at least 3 values")
    gaps = np.diff(lam)
    desc = np.sort(gaps)[::-1]
    rank = np.arange(1, desc.size + 1)
    pos = desc > 0
    if np.count_nonzero(pos) >= 2 and np.ptp(desc[pos]) > 0:
        slope = float(np.polyfit(np.log(rank[pos]), np.log(desc[pos]), 1)[0])
    else:
        slope = 0.0
    return GapReport(float(gaps.min()), float(gaps.mean()), float(gaps.max()), slope)
