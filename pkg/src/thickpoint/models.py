"""
Finite-volume one-dimensional lattice Hamiltonians and their spectral data.

Families: free chain, Anderson model, Stark (linear field) model and a
limit-periodic model.  All act on sites ``0..N-1`` with lattice labels
``n = site - index_origin`` and Dirichlet truncation at the edges.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from pathlib import Path
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .errors import ConvergenceFailure, EmptyProjection, NotNormalized
from .measure import MASS_FLOOR, PointMeasure

FAMILIES = ("free", "anderson", "stark", "limit_periodic")
# keeps counter blocks nonnegative for negative lattice labels
_COUNTER_OFFSET = 2 ** 40


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a lattice Hamiltonian.

    Parameters
    ----------
    family : str
        One of ``free``, ``anderson``, ``stark``, ``limit_periodic``.
    size : int
        Number of sites N (at least 2).
    coupling : float
        Anderson disorder half-width a; site energies are uniform on [-a, a].
    seed : int
        Anderson disorder seed (64-bit).
    field : float
        Stark field strength F; site energy F*n + v_n.
    background : list of float or dict, optional
        Stark background potential v_n.  A list gives v per site; a dict
        ``{"amplitude": A, "frequency": w, "phase": phi}`` gives
        ``A cos(2 pi w n + phi)``.
    hopping : float
        Off-diagonal coefficient; 1 except for the limit-periodic family.
    coefficients : list of float, optional
        Limit-periodic amplitudes c_1..c_M of ``sum_m c_m cos(2 pi n / 2^m)``;
        default ``c_m = 4^-m`` for m = 1..10.
    index_origin : int, optional
        0-based site carrying lattice label n = 0; default ``(N - 1) // 2``.
    """

    family: str = "free"
    size: int = 64
    coupling: float = 1.0
    seed: int = 0
    field: float = 0.0
    background: Optional[Union[Sequence[float], dict]] = None
    hopping: float = 1.0
    coefficients: Optional[Sequence[float]] = None
    index_origin: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if int(self.size) < 2:
            raise ValueError("size must be at least 2")
        if self.family == "anderson" and not self.coupling > 0:
            raise ValueError("Anderson coupling must be positive")
        if self.family == "limit_periodic" and not self.hopping > 0:
            raise ValueError("limit-periodic hopping must be positive")
        if not 0 <= self.origin < self.size:
            raise ValueError("index_origin must be a site of the lattice")
        if isinstance(self.background, (list, tuple)) and len(self.background) != self.size:
            raise ValueError("background list must have one value per site")

    @property
    def origin(self) -> int:
        return (self.size - 1) // 2 if self.index_origin is None else int(self.index_origin)

    def labels(self) -> np.ndarray:
        """Lattice labels n of sites 0..N-1."""
        return np.arange(self.size) - self.origin

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["background"], tuple):
            d["background"] = list(d["background"])
        if isinstance(d["coefficients"], tuple):
            d["coefficients"] = list(d["coefficients"])
        return d

    def key(self) -> str:
        """Stable SHA-256 hash of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class TridiagonalMatrix:
    diagonal: np.ndarray
    offdiagonal: np.ndarray

    def __post_init__(self):
        d = np.array(self.diagonal, dtype=float).reshape(-1)
        e = np.array(self.offdiagonal, dtype=float).reshape(-1)
        if e.size != d.size - 1:
            raise ValueError("offdiagonal must have N-1 entries")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ValueError("matrix entries must be finite")
        d.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "diagonal", d)
        object.__setattr__(self, "offdiagonal", e)

    @property
    def size(self) -> int:
        return self.diagonal.size

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """``T @ x`` for a vector or a matrix of column vectors."""
        x = np.asarray(x)
        d = self.diagonal.reshape((-1,) + (1,) * (x.ndim - 1))
        e = self.offdiagonal.reshape((-1,) + (1,) * (x.ndim - 1))
        y = d * x
        y[:-1] += e * x[1:]
        y[1:] += e * x[:-1]
        return y

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diagonal) + np.diag(self.offdiagonal, 1) + np.diag(self.offdiagonal, -1)

    def norm_bound(self) -> float:
        """Gershgorin bound on the spectral radius."""
        a = np.abs(self.offdiagonal)
        radius = np.zeros(self.size)
        radius[:-1] += a
        radius[1:] += a
        return float(np.max(np.abs(self.diagonal) + radius))


@dataclass(frozen=True)
class EigenSystem:
    """Ascending eigenvalues with orthonormal eigenvectors as columns.

    ``eigenvectors=None`` stands for the identity: the operator is diagonal
    in the working basis, which lets huge point spectra be handled without
    an N x N matrix.
    """

    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float).reshape(-1)
        if np.any(np.diff(lam) < 0):
            raise ValueError("eigenvalues must be sorted ascending")
        lam.flags.writeable = False
        object.__setattr__(self, "eigenvalues", lam)
        if self.eigenvectors is not None:
            v = np.asarray(self.eigenvectors)
            if v.shape != (lam.size, lam.size):
                raise ValueError("eigenvectors must be N x N")
            object.__setattr__(self, "eigenvectors", v)

    @classmethod
    def diagonal(cls, eigenvalues) -> "EigenSystem":
        lam = np.asarray(eigenvalues, dtype=float)
        if np.any(np.diff(lam) < 0):
            raise ValueError("eigenvalues must be sorted ascending")
        return cls(lam, None)

    @classmethod
    def from_matrix(cls, matrix) -> "EigenSystem":
        """Diagonalize a dense Hermitian matrix."""
        lam, v = np.linalg.eigh(np.asarray(matrix))
        return cls(lam, v)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def coefficients(self, xi) -> np.ndarray:
        """``c_j = <e_j, xi>``."""
        xi = np.asarray(xi)
        if xi.shape[0] != self.size:
            raise ValueError(f"vector of length {xi.shape[0]} does not match dimension {self.size}")
        if self.eigenvectors is None:
            return xi.copy()
        return self.eigenvectors.conj().T @ xi

    def synthesize(self, c) -> np.ndarray:
        """``sum_j c_j e_j``."""
        c = np.asarray(c)
        if self.eigenvectors is None:
            return c.copy()
        return self.eigenvectors @ c

    def residuals(self, matrix: TridiagonalMatrix, block: int = 512) -> np.ndarray:
        """``||T v_j - lambda_j v_j||_2`` per eigenpair."""
        if self.eigenvectors is None:
            raise ValueError("residuals need explicit eigenvectors")
        out = np.empty(self.size)
        for s in range(0, self.size, block):
            v = self.eigenvectors[:, s:s + block]
            r = matrix.matvec(v) - v * self.eigenvalues[s:s + block]
            out[s:s + block] = np.linalg.norm(r, axis=0)
        return out

    def orthogonality_error(self, block: int = 1024) -> float:
        """``max |V^T V - I|`` computed in column blocks."""
        if self.eigenvectors is None:
            return 0.0
        v = self.eigenvectors
        worst = 0.0
        for s in range(0, self.size, block):
            g = v.conj().T @ v[:, s:s + block]
            idx = np.arange(s, min(s + block, self.size))
            g[idx, idx - s] -= 1.0
            worst = max(worst, float(np.max(np.abs(g))))
        return worst


# -- construction ------------------------------------------------------------

def site_uniforms(seed: int, labels: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) draws keyed by ``(seed, label)`` via Philox counters.

    ``labels`` must be contiguous ascending integers; label n reads the first
    lane of counter block ``n + offset``, so a site keeps its value when the
    lattice is resized.
    """
    labels = np.asarray(labels)
    if labels.size and np.any(np.diff(labels) != 1):
        raise ValueError("labels must be contiguous ascending integers")
    bitgen = np.random.Philox(key=int(seed) % 2 ** 64)
    bitgen.advance(int(labels[0]) + _COUNTER_OFFSET)
    return np.random.Generator(bitgen).random(4 * labels.size)[::4]


def _background(spec: ModelSpec, n: np.ndarray) -> np.ndarray:
    bg = spec.background
    if bg is None:
        return np.zeros(n.size)
    if isinstance(bg, dict):
        return bg.get("amplitude", 0.0) * np.cos(
            2 * np.pi * bg.get("frequency", 0.0) * n + bg.get("phase", 0.0))
    return np.asarray(bg, dtype=float)


def limit_periodic_potential(n: np.ndarray, coefficients=None) -> np.ndarray:
    """``v_n = sum_m c_m cos(2 pi n / 2^m)``, default ``c_m = 4^-m`` for m <= 10."""
    if coefficients is None:
        coefficients = [4.0 ** -m for m in range(1, 11)]
    v = np.zeros(n.size)
    for m, c in enumerate(coefficients, start=1):
        v += c * np.cos(2 * np.pi * n / 2.0 ** m)
    return v


def build_hamiltonian(spec: ModelSpec) -> TridiagonalMatrix:
    n = spec.labels()
    off = np.ones(spec.size - 1)
    if spec.family == "free":
        diag = np.zeros(spec.size)
    elif spec.family == "anderson":
        a = spec.coupling
        diag = a * (2.0 * site_uniforms(spec.seed, n) - 1.0)
    elif spec.family == "stark":
        diag = spec.field * n + _background(spec, n)
    else:
        diag = limit_periodic_potential(n, spec.coefficients)
        off = spec.hopping * off
    return TridiagonalMatrix(diag, off)


RESIDUAL_TOL = 1e-10


def eigensolve(matrix: TridiagonalMatrix, check: bool = True) -> EigenSystem:
    """Full eigendecomposition of a symmetric tridiagonal matrix.

    Uses LAPACK's MRRR driver and falls back to implicit QL/QR (``stev``)
    when a residual ``||T v - lambda v||`` exceeds ``1e-10 (1 + |lambda|)``.
    """
    last = None
    for driver in ("stemr", "stev"):
        lam, v = scipy.linalg.eigh_tridiagonal(matrix.diagonal, matrix.offdiagonal,
                                               lapack_driver=driver)
        eig = EigenSystem(lam, np.ascontiguousarray(v))
        if not check:
            return eig
        res = eig.residuals(matrix)
        bad = np.nonzero(res > RESIDUAL_TOL * (1.0 + np.abs(lam)))[0]
        if bad.size == 0:
            return eig
        last = (int(bad[0]), float(res[bad[0]]))
    raise ConvergenceFailure(f"eigenpair {last[0]} residual {last[1]:.3e} above bound",
                             index=last[0], achieved=last[1])


def spectral_measure(eig: EigenSystem, xi, require_unit: bool = True,
                     floor: float = MASS_FLOOR) -> PointMeasure:
    """Atoms ``(lambda_j, |<e_j, xi>|^2)`` with degenerate eigenvalues merged.

    Atoms lighter than ``floor * ||xi||^2`` (roundoff residue) are dropped.
    """
    xi = np.asarray(xi)
    norm2 = float(np.vdot(xi, xi).real)
    if require_unit and abs(np.sqrt(norm2) - 1.0) > 1e-12:
        raise NotNormalized(f"||xi|| = {np.sqrt(norm2)!r}")
    w = np.abs(eig.coefficients(xi)) ** 2
    mu = PointMeasure.from_atoms(eig.eigenvalues, w)
    return mu.floored(floor) if floor else mu


def spectral_project(eig: EigenSystem, interval, xi) -> np.ndarray:
    """``P([a, b]) xi``: keep eigen-components with eigenvalue in the closed interval."""
    a, b = interval
    if not a < b:
        raise ValueError("interval needs a < b")
    c = eig.coefficients(xi)
    sel = (eig.eigenvalues >= a) & (eig.eigenvalues <= b)
    if not np.any(sel):
        warnings.warn(f"no eigenvalue in [{a}, {b}]", EmptyProjection, stacklevel=2)
    return eig.synthesize(np.where(sel, c, 0))


def _smooth_step(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        h0 = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        h1 = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return h0 / (h0 + h1)


@dataclass(frozen=True)
class SmoothBump:
    """C-infinity bump: 1 on ``[plateau_lo, plateau_hi]``, 0 outside ``(lo, hi)``."""

    lo: float
    plateau_lo: float
    plateau_hi: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.plateau_lo <= self.plateau_hi < self.hi:
            raise ValueError("need lo < plateau_lo <= plateau_hi < hi")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        rise = _smooth_step((x - self.lo) / (self.plateau_lo - self.lo))
        fall = _smooth_step((self.hi - x) / (self.hi - self.plateau_hi))
        return rise * fall


def apply_function(eig: EigenSystem, f: Callable, xi) -> np.ndarray:
    """``f(T) xi = sum_j f(lambda_j) <e_j, xi> e_j``; ``f`` is any vectorized callable or a constant."""
    vals = f(eig.eigenvalues) if callable(f) else np.full(eig.size, float(f))
    return eig.synthesize(np.asarray(vals) * eig.coefficients(xi))


def delta_state(spec_or_size, label: int = 0, origin: Optional[int] = None) -> np.ndarray:
    """Unit vector at lattice label ``label``."""
    if isinstance(spec_or_size, ModelSpec):
        size, origin = spec_or_size.size, spec_or_size.origin
    else:
        size = int(spec_or_size)
        origin = (size - 1) // 2 if origin is None else origin
    xi = np.zeros(size)
    xi[origin + label] = 1.0
    return xi


# -- on-disk cache -----------------------------------------------------------

_MAGIC = b"TPEIG001"


def save_eigensystem(path, eig: EigenSystem, key: str) -> None:
    """Little-endian float64 blob: magic, N, 32-byte key digest, eigenvalues, eigenvectors (C order)."""
    if eig.eigenvectors is None or np.iscomplexobj(eig.eigenvectors):
        raise ValueError("only real explicit eigenvectors can be cached")
    digest = bytes.fromhex(key)
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<Q", eig.size) + digest)
        fh.write(eig.eigenvalues.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(eig.eigenvectors, dtype="<f8").tobytes())


def load_eigensystem(path, key: Optional[str] = None) -> EigenSystem:
    with open(path, "rb") as fh:
        head = fh.read(8 + 8 + 32)
        if head[:8] != _MAGIC:
            raise ValueError("not an eigensystem cache file")
        (n,) = struct.unpack("<Q", head[8:16])
        if key is not None and head[16:48] != bytes.fromhex(key):
            raise ValueError("cache key mismatch")
        lam = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(float)
        v = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n).astype(float)
    return EigenSystem(lam, v)


def solve_model(spec: ModelSpec, cache_dir=None) -> EigenSystem:
    """Build and diagonalize ``spec``, reusing a cached blob when present."""
    key = spec.key()
    if cache_dir is not None:
        path = Path(cache_dir) / f"eig-{key[:16]}.bin"
        if path.exists():
            return load_eigensystem(path, key)
    eig = eigensolve(build_hamiltonian(spec))
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_eigensystem(path, eig, key)
    return eig
