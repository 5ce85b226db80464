"""
Experiment configuration: a sectioned TOML file parsed into typed records.

Example::

    [model]
    family = "anderson"
    size = 2048
    coupling = 2.0

    [initial_state]
    kind = "delta"
    site = 0

    [grids]
    q = [0.3, 0.5, 0.7]
    p = [1.0, 2.0]

    [time]
    t_min = 1.0
    t_max = 10000.0

    [run]
    seeds = [0, 1, 2]
    output_dir = "runs/anderson"

Every ``q`` must lie in (0, 1) and every ``p`` be positive.  ``1/(1+p)``
is added to the q grid for each p so the bound check has its dimension
estimate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Tuple

import tomli
import tomli_w

from .errors import ConfigError
from .measure import ROUTES
from .models import FAMILIES, ModelSpec

STATE_KINDS = ("delta", "eigenvector", "low_dim", "high_dim", "divergent", "file")
BALLISTIC = ("free", "limit_periodic")


@dataclass(frozen=True)
class StateSpec:
    kind: str = "delta"
    site: int = 0
    index: int = 0
    s: float = 4.0
    q: float = 0.5
    head: Tuple[float, ...] = ()
    n: int = 3
    interval: Optional[Tuple[float, float]] = None
    p: float = 2.0
    j: int = 10
    path: Optional[str] = None


@dataclass(frozen=True)
class TimeSpec:
    """Log time grid ``[t_min, t_max]`` and transport fit window; ``None`` means automatic."""

    t_min: float = 1.0
    t_max: Optional[float] = None
    points_per_decade: int = 16
    fit_window: Optional[Tuple[float, float]] = None
    method: str = "auto"
    samples: int = 64
    n_kernel: int = 512


@dataclass(frozen=True)
class ScaleSpec:
    routes: Tuple[str, ...] = ("ball",)
    window: Optional[Tuple[float, float]] = None
    tolerance: float = 0.15


@dataclass(frozen=True)
class SpacingSpec:
    enabled: bool = False
    alphas: Tuple[float, ...] = (1.0,)
    interval: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    initial_state: StateSpec = field(default_factory=StateSpec)
    q_grid: Tuple[float, ...] = (0.3, 0.5, 0.7)
    p_grid: Tuple[float, ...] = (1.0, 2.0)
    time: TimeSpec = field(default_factory=TimeSpec)
    scales: ScaleSpec = field(default_factory=ScaleSpec)
    spacing: SpacingSpec = field(default_factory=SpacingSpec)
    seeds: Tuple[int, ...] = (0,)
    output_dir: str = "runs/default"
    threads: int = 1

    def config_hash(self) -> str:
        """Hash of everything that affects results; output location and thread count excluded."""
        d = to_dict(self)
        d["run"] = {"seeds": d["run"]["seeds"]}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))

    def with_output(self, path: str) -> "ExperimentConfig":
        return replace(self, output_dir=str(path))

    def model_for_seed(self, seed: int) -> ModelSpec:
        return replace(self.model, seed=int(seed))

    def t_max(self) -> float:
        if self.time.t_max is not None:
            return self.time.t_max
        if self.model.family in BALLISTIC:
            return self.model.size / (4.0 * 2.0 * abs(self.model.hopping))
        return 1e4

    def fit_window(self) -> Tuple[float, float]:
        if self.time.fit_window is not None:
            return self.time.fit_window
        lo = 10.0 if self.model.family in BALLISTIC else 100.0
        return (lo, self.t_max())


# -- parsing -----------------------------------------------------------------

def _pair(value, path):
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(path, "expected a two-element list")
    lo, hi = (_num(v, path) for v in value)
    if not lo < hi:
        raise ConfigError(path, "lower end must be below upper end")
    return (lo, hi)


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    return float(v)


def _int(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    return v


def _take(section: dict, cls, path: str, conv: dict) -> dict:
    names = {f.name for f in fields(cls)}
    out = {}
    for key, value in section.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown field")
        fn = conv.get(key)
        out[key] = fn(value, f"{path}.{key}") if fn else value
    return out


def _model(section: dict) -> ModelSpec:
    conv = {
        "size": _int, "seed": _int, "index_origin": _int,
        "coupling": _num, "field": _num, "hopping": _num,
        "coefficients": lambda v, p: [_num(x, p) for x in v],
    }
    kw = _take(section, ModelSpec, "model", conv)
    if kw.get("family", "free") not in FAMILIES:
        raise ConfigError("model.family", f"must be one of {FAMILIES}")
    if isinstance(kw.get("background"), list):
        kw["background"] = [_num(x, "model.background") for x in kw["background"]]
    try:
        return ModelSpec(**kw)
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from exc


def _state(section: dict) -> StateSpec:
    conv = {
        "site": _int, "index": _int, "n": _int, "j": _int,
        "s": _num, "q": _num, "p": _num,
        "head": lambda v, p: tuple(_num(x, p) for x in v),
        "interval": _pair,
    }
    kw = _take(section, StateSpec, "initial_state", conv)
    st = StateSpec(**kw)
    if st.kind not in STATE_KINDS:
        raise ConfigError("initial_state.kind", f"must be one of {STATE_KINDS}")
    if st.kind in ("low_dim", "high_dim") and not 0 < st.q < 1:
        raise ConfigError("initial_state.q", "must lie in (0, 1)")
    if st.kind == "low_dim" and not st.s * st.q > 1:
        raise ConfigError("initial_state.s", "tail exponent must satisfy s*q > 1")
    if st.kind == "high_dim" and not st.n > st.q / (1 - st.q):
        raise ConfigError("initial_state.n", "must exceed q/(1-q)")
    if st.kind == "divergent" and not st.p > 0:
        raise ConfigError("initial_state.p", "must be positive")
    if st.kind == "file" and not st.path:
        raise ConfigError("initial_state.path", "required for kind 'file'")
    return st


def _time(section: dict) -> TimeSpec:
    conv = {"t_min": _num, "t_max": _num, "points_per_decade": _int, "samples": _int,
            "n_kernel": _int, "fit_window": _pair}
    ts = TimeSpec(**_take(section, TimeSpec, "time", conv))
    if not ts.t_min > 0:
        raise ConfigError("time.t_min", "must be positive")
    if ts.t_max is not None and not ts.t_max > ts.t_min:
        raise ConfigError("time.t_max", "must exceed t_min")
    if ts.method not in ("auto", "exact", "sampled"):
        raise ConfigError("time.method", "must be auto, exact or sampled")
    if ts.samples < 2 or ts.samples % 2:
        raise ConfigError("time.samples", "must be an even number >= 2")
    return ts


def _scales(section: dict) -> ScaleSpec:
    conv = {"window": _pair, "tolerance": _num,
            "routes": lambda v, p: tuple(str(x) for x in v)}
    sc = ScaleSpec(**_take(section, ScaleSpec, "scales", conv))
    for r in sc.routes:
        if r not in ROUTES:
            raise ConfigError("scales.routes", f"unknown route {r!r}")
    return sc


def _spacing(section: dict) -> SpacingSpec:
    conv = {"alphas": lambda v, p: tuple(_num(x, p) for x in v), "interval": _pair}
    sp = SpacingSpec(**_take(section, SpacingSpec, "spacing", conv))
    if any(a <= 0 for a in sp.alphas):
        raise ConfigError("spacing.alphas", "must be positive")
    return sp


def from_dict(data: dict) -> ExperimentConfig:
    known = {"model", "initial_state", "grids", "time", "scales", "spacing", "run"}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown section")
    grids = data.get("grids", {})
    q = [_num(v, "grids.q") for v in grids.get("q", [0.3, 0.5, 0.7])]
    p = [_num(v, "grids.p") for v in grids.get("p", [1.0, 2.0])]
    for i, v in enumerate(q):
        if not 0 < v < 1:
            raise ConfigError(f"grids.q[{i}]", f"{v} is outside (0, 1)")
    for i, v in enumerate(p):
        if not v > 0:
            raise ConfigError(f"grids.p[{i}]", f"{v} must be positive")
    for v in p:
        qp = 1.0 / (1.0 + v)
        if not any(abs(qp - x) <= 1e-12 for x in q):
            q.append(qp)
    run = data.get("run", {})
    for key in run:
        if key not in ("seeds", "output_dir", "threads"):
            raise ConfigError(f"run.{key}", "unknown field")
    seeds = tuple(_int(s, "run.seeds") for s in run.get("seeds", [0]))
    if not seeds:
        raise ConfigError("run.seeds", "at least one seed is required")
    threads = _int(run.get("threads", 1), "run.threads")
    if threads < 1:
        raise ConfigError("run.threads", "must be at least 1")
    return ExperimentConfig(
        model=_model(data.get("model", {})),
        initial_state=_state(data.get("initial_state", {})),
        q_grid=tuple(sorted(q)),
        p_grid=tuple(sorted(p)),
        time=_time(data.get("time", {})),
        scales=_scales(data.get("scales", {})),
        spacing=_spacing(data.get("spacing", {})),
        seeds=seeds,
        output_dir=str(run.get("output_dir", "runs/default")),
        threads=threads,
    )


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"invalid TOML: {exc}") from exc
    return from_dict(data)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_config(raw.decode("utf-8"))


def _clean(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if v is None:
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def to_dict(cfg: ExperimentConfig) -> dict:
    """TOML-ready nested dict; ``None`` fields are omitted."""
    return {
        "model": _clean(cfg.model.to_dict()),
        "initial_state": _clean(asdict(cfg.initial_state)),
        "grids": {"q": list(cfg.q_grid), "p": list(cfg.p_grid)},
        "time": _clean(asdict(cfg.time)),
        "scales": _clean(asdict(cfg.scales)),
        "spacing": _clean(asdict(cfg.spacing)),
        "run": {"seeds": list(cfg.seeds), "output_dir": cfg.output_dir, "threads": cfg.threads},
    }


def render_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))
