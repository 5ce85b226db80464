"""
Experiment orchestration: stage pipeline, per-run manifest and text reports.

Each seed runs the stages in fixed order and writes flat files into the
output directory, every one starting with a header that names the config
hash and the stage.  Seeds may run on a thread pool; results are gathered
in declaration order so the outputs do not depend on scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig, render_config
from .constructions import (ConstructionSpec, build_divergent_moment_vector,
                            build_high_dim_vector, build_low_dim_vector, certify_high_dim,
                            partition_bound, low_dim_coefficients, save_construction)
from .dynamics import (MomentSeries, classify_quasiballistic, exponents_monotone, moments,
                       time_grid, transport_exponent, verify_bounds)
from .errors import MissingStage, StageFailure, WindowEmpty
from .measure import PointMeasure, dimension_fit, packing_dimension_estimate
from .models import EigenSystem, delta_state, solve_model, spectral_measure
from .spacing import gap_statistics, select_weakly_spaced, verify_weakly_spaced

STAGES = ("model", "state", "measure", "dimensions", "moments", "exponents", "bounds", "spacing")
REQUIRES = {
    "model": (),
    "state": ("model",),
    "measure": ("state",),
    "dimensions": ("measure",),
    "moments": ("state",),
    "exponents": ("moments",),
    "bounds": ("exponents", "measure"),
    "spacing": ("model",),
}
REPORT_NEEDS = ("model", "dimensions", "moments", "exponents", "bounds")


@dataclass
class StageRecord:
    name: str
    seed: int
    files: List[str]
    wall_clock: float


@dataclass
class RunManifest:
    config_hash: str
    version: str
    timestamp: str
    output_dir: str
    stages: List[StageRecord] = field(default_factory=list)

    def stage_names(self) -> set:
        return {s.name for s in self.stages}

    def files(self) -> List[str]:
        return [f for s in self.stages for f in s.files]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        d["stages"] = [StageRecord(**s) for s in d["stages"]]
        return cls(**d)

    def save(self) -> Path:
        path = Path(self.output_dir) / "manifest.json"
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        if not path.exists():
            raise MissingStage(f"no run manifest at {path}")
        return cls.from_json(path.read_text())


def stage_closure(stages: Optional[Sequence[str]], cfg: ExperimentConfig) -> List[str]:
    """Requested stages plus prerequisites, in pipeline order."""
    if stages is None:
        stages = [s for s in STAGES if s != "spacing" or cfg.spacing.enabled]
    want = set()

    def add(s):
        if s not in REQUIRES:
            raise ValueError(f"unknown stage {s!r}")
        if s not in want:
            want.add(s)
            for r in REQUIRES[s]:
                add(r)

    for s in stages:
        add(s)
    return [s for s in STAGES if s in want]


# -- file writers ------------------------------------------------------------

def _header(chash: str, stage: str, columns: Sequence[str] = (), units: str = "") -> List[str]:
    lines = [f"config_hash: {chash}", f"stage: {stage}"]
    if columns:
        lines.append("columns: " + ",".join(columns))
    if units:
        lines.append(f"units: {units}")
    return lines


def _write_csv(path: Path, chash: str, stage: str, columns, rows, units: str = "") -> None:
    buf = io.StringIO()
    for h in _header(chash, stage, columns, units):
        buf.write(f"# {h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    path.write_text(buf.getvalue())


def _write_json(path: Path, chash: str, stage: str, payload: dict) -> None:
    doc = {"config_hash": chash, "stage": stage}
    doc.update(payload)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"cannot serialize {type(x)}")


# -- stages ------------------------------------------------------------------

def _build_state(cfg: ExperimentConfig, spec, eig: EigenSystem, out: Path, chash: str, seed: int):
    st = cfg.initial_state
    report = {}
    cspec = None
    if st.kind == "delta":
        xi = delta_state(spec, st.site)
    elif st.kind == "eigenvector":
        c = np.zeros(eig.size)
        c[st.index] = 1.0
        xi = eig.synthesize(c)
    elif st.kind == "low_dim":
        cspec = ConstructionSpec("low_dim", eig.size, k=len(st.head), q=st.q, s=st.s)
        xi = build_low_dim_vector(eig, st.head, st.s, st.q)
        report["partition_bound"] = partition_bound(
            low_dim_coefficients(eig.size, st.head, st.s, st.q), st.q)
    elif st.kind == "high_dim":
        cspec = ConstructionSpec("high_dim", eig.size, k=len(st.head), q=st.q, n=st.n)
        witness = select_weakly_spaced(eig.eigenvalues, 1.0 / st.n, interval=st.interval)
        xi = build_high_dim_vector(eig, witness, st.n, st.q, head=st.head)
        cert = certify_high_dim(xi, eig, witness, st.n, st.q, r_k=max(len(st.head) + 1,
                                                                     witness.first_level))
        report.update(cert.to_dict())
        report["witness"] = json.loads(witness.to_json())
    elif st.kind == "divergent":
        cspec = ConstructionSpec("divergent", eig.size, p=st.p, j=st.j)
        xi = build_divergent_moment_vector(eig.size, st.p, st.j, origin=spec.origin)
    else:
        path = Path(st.path)
        xi = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, comments="#")
    fname = f"seed{seed}-state.json"
    if cspec is None:
        cspec_dict = {"kind": st.kind, "site": st.site, "index": st.index, "path": st.path}
        np.save(out / f"seed{seed}-state.npy", np.asarray(xi), allow_pickle=False)
        _write_json(out / fname, chash, "state",
                    {"state": cspec_dict, "blob": f"seed{seed}-state.npy",
                     "norm": float(np.linalg.norm(xi))})
    else:
        save_construction(out / f"seed{seed}-state", cspec, xi, report,
                          extra={"config_hash": chash, "stage": "state",
                                 "norm": float(np.linalg.norm(xi))})
    return np.asarray(xi), [fname]


def _run_seed(cfg: ExperimentConfig, seed: int, stages: Sequence[str], out: Path,
              chash: str) -> List[StageRecord]:
    records: List[StageRecord] = []
    ctx: Dict[str, object] = {}
    spec = cfg.model_for_seed(seed)
    tag = f"seed{seed}"

    for stage in stages:
        t0 = time.perf_counter()
        files: List[str] = []
        try:
            if stage == "model":
                eig = solve_model(spec, out / "cache")
                ctx["eig"] = eig
                name = f"{tag}-model.json"
                _write_json(out / name, chash, "model", {
                    "spec": spec.to_dict(), "key": spec.key(), "size": eig.size,
                    "eigenvalue_min": float(eig.eigenvalues[0]),
                    "eigenvalue_max": float(eig.eigenvalues[-1]),
                })
                files.append(name)
                name = f"{tag}-eigenvalues.csv"
                _write_csv(out / name, chash, "model", ["index", "eigenvalue"],
                           [(i, float(v)) for i, v in enumerate(eig.eigenvalues)], "energy")
                files.append(name)
            elif stage == "state":
                xi, names = _build_state(cfg, spec, ctx["eig"], out, chash, seed)
                ctx["xi"] = xi
                files += names
            elif stage == "measure":
                mu = spectral_measure(ctx["eig"], ctx["xi"])
                ctx["mu"] = mu
                name = f"{tag}-measure.txt"
                (out / name).write_text(mu.to_text(_header(chash, "measure", units="energy, mass")))
                files.append(name)
            elif stage == "dimensions":
                mu = ctx["mu"]
                rows, part = [], []
                for q in cfg.q_grid:
                    for route in cfg.scales.routes:
                        fit = dimension_fit(mu, q, route, window=cfg.scales.window)
                        i0, i1 = fit.window
                        ab = fit.abscissae
                        if route == "correlation":
                            lo, hi = float(np.exp(-ab[i1 - 1])), float(np.exp(-ab[i0]))
                        else:
                            lo, hi = float(np.exp(ab[i0])), float(np.exp(ab[i1 - 1]))
                        rows.append((q, route, fit.lower_slope, fit.upper_slope,
                                     fit.global_slope, lo, hi))
                        if route == cfg.scales.routes[0]:
                            for x, y in zip(ab[i0:i1], fit.ordinates[i0:i1]):
                                part.append((q, route, float(x), float(y * (q - 1.0))))
                packing = packing_dimension_estimate(mu)
                name = f"{tag}-dims.csv"
                _write_csv(out / name, chash, "dimensions",
                           ["q", "route", "lower", "upper", "global", "scale_lo", "scale_hi"],
                           rows, "dimensionless; scales in energy (ball, mean_q) or energy "
                                 "equivalent 1/t (correlation)")
                files.append(name)
                name = f"{tag}-partition.csv"
                _write_csv(out / name, chash, "dimensions", ["q", "route", "ln_scale", "ln_S"],
                           part, "natural logs")
                files.append(name)
                name = f"{tag}-packing.json"
                _write_json(out / name, chash, "dimensions", {"packing_estimate": packing})
                files.append(name)
            elif stage == "moments":
                ts = cfg.time
                times = time_grid(ts.t_min, cfg.t_max(), ts.points_per_decade)
                series = moments(ctx["eig"], ctx["xi"], cfg.p_grid, times, method=ts.method,
                                 n_kernel=ts.n_kernel, samples=ts.samples, seed=seed)
                ctx["series"] = series
                name = f"{tag}-moments.csv"
                (out / name).write_text(series.to_csv(
                    _header(chash, "moments", units="time in inverse hopping units")))
                files.append(name)
            elif stage == "exponents":
                series = ctx["series"]
                ests = [transport_exponent(series, p, cfg.fit_window()) for p in cfg.p_grid]
                ctx["ests"] = ests
                name = f"{tag}-transport.json"
                _write_json(out / name, chash, "exponents", {
                    "estimates": [e.to_dict() for e in ests],
                    "quasiballistic": classify_quasiballistic(ests, cfg.scales.tolerance,
                                                              cfg.p_grid),
                    "monotone_in_p": exponents_monotone(ests),
                    "below_ballistic": all(e.alpha_plus <= e.p + 0.1 for e in ests),
                })
                files.append(name)
            elif stage == "bounds":
                rep = verify_bounds(ctx["ests"], ctx["mu"], cfg.scales.tolerance)
                ctx["bounds"] = rep
                name = f"{tag}-bounds.json"
                _write_json(out / name, chash, "bounds", json.loads(rep.to_json()))
                files.append(name)
            elif stage == "spacing":
                lam = ctx["eig"].eigenvalues
                items = []
                for a in cfg.spacing.alphas:
                    try:
                        w = select_weakly_spaced(lam, a, interval=cfg.spacing.interval)
                    except WindowEmpty as exc:
                        # the spectrum is too sparse at this scale; keep the evidence
                        items.append({"alpha": a, "depth": 0, "L0": None, "C_alpha": None,
                                      "verified": False, "empty_level": exc.level,
                                      "empty_window": list(exc.window or ())})
                        continue
                    d = json.loads(w.to_json())
                    d["verified"] = verify_weakly_spaced(lam, w)
                    d["depth"] = w.depth
                    items.append(d)
                name = f"{tag}-spacing.json"
                _write_json(out / name, chash, "spacing", {
                    "gap_statistics": gap_statistics(lam).to_dict(), "witnesses": items})
                files.append(name)
        except Exception as exc:  # noqa: BLE001 - re-raised with stage context
            records.append(StageRecord(stage, seed, files, time.perf_counter() - t0))
            raise StageFailure(stage, exc, records) from exc
        records.append(StageRecord(stage, seed, files, time.perf_counter() - t0))
    return records


def run_experiment(cfg: ExperimentConfig, stages: Optional[Sequence[str]] = None) -> RunManifest:
    """Run the requested stages (default: all) for every seed and write the manifest."""
    order = stage_closure(stages, cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    manifest = RunManifest(chash, __version__, datetime.now(timezone.utc).isoformat(), str(out))
    (out / "config.toml").write_text(f"# config_hash: {chash}\n# stage: config\n"
                                     + render_config(cfg))
    manifest.stages.append(StageRecord("config", -1, ["config.toml"], 0.0))

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        futures = [pool.submit(_run_seed, cfg, s, order, out, chash) for s in cfg.seeds]
        failure = None
        for fut in futures:
            try:
                manifest.stages.extend(fut.result())
            except StageFailure as exc:
                manifest.stages.extend(exc.manifest or [])
                failure = failure or exc
    manifest.save()
    if failure is not None:
        raise StageFailure(failure.stage, failure.cause, manifest) from failure.cause
    return manifest


# -- report ------------------------------------------------------------------

def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Aligned text table; floats rendered with 4 decimals."""
    def cell(x):
        if x is None:
            return "-"
        if isinstance(x, bool):
            return "pass" if x else "fail"
        if isinstance(x, float):
            return f"{x:.4f}"
        return str(x)

    body = [[cell(x) for x in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)


def _read_csv(path: Path) -> List[dict]:
    lines = [l for l in path.read_text().splitlines() if l and not l.startswith("#")]
    return list(csv.DictReader(lines))


def report(manifest: RunManifest) -> Dict[str, object]:
    """Summary tables and plot-data files for a completed run."""
    have = manifest.stage_names()
    missing = [s for s in REPORT_NEEDS if s not in have]
    if missing:
        raise MissingStage(f"manifest lacks stages: {', '.join(missing)}")
    out = Path(manifest.output_dir)
    chash = manifest.config_hash
    seeds = sorted({s.seed for s in manifest.stages if s.seed >= 0})
    bound_rows, dim_rows, flag_rows, spacing_rows = [], [], [], []
    files: List[str] = []
    for seed in seeds:
        tag = f"seed{seed}"
        b = json.loads((out / f"{tag}-bounds.json").read_text())
        for r in b["rows"]:
            bound_rows.append((seed, r["p"], r["alpha_plus"], r["gfd_bound"], r["packing_bound"],
                               r["gap"], bool(r["passed"])))
        for r in _read_csv(out / f"{tag}-dims.csv"):
            dim_rows.append((seed, float(r["q"]), r["route"], float(r["lower"]),
                             float(r["upper"])))
        tr = json.loads((out / f"{tag}-transport.json").read_text())
        flag_rows.append((seed, bool(tr["quasiballistic"]), bool(tr["monotone_in_p"]),
                          bool(tr["below_ballistic"])))
        sp = out / f"{tag}-spacing.json"
        if sp.exists():
            for w in json.loads(sp.read_text())["witnesses"]:
                spacing_rows.append((seed, w["alpha"], w["depth"], w["L0"], w["C_alpha"],
                                     bool(w["verified"])))
        series = MomentSeries.from_csv((out / f"{tag}-moments.csv").read_text())
        for k, p in enumerate(series.p_values):
            name = f"{tag}-plot-lnt-lnM-p{p:g}.dat"
            m = series.moments[:, k]
            ok = m > 0
            _write_plot(out / name, chash, "ln t", "ln M", np.log(series.times[ok]), np.log(m[ok]))
            files.append(name)
        part = _read_csv(out / f"{tag}-partition.csv")
        for q in sorted({float(r["q"]) for r in part}):
            sel = [r for r in part if float(r["q"]) == q]
            name = f"{tag}-plot-lneps-lnS-q{q:.4g}.dat"
            _write_plot(out / name, chash, "ln eps", "ln S",
                        [float(r["ln_scale"]) for r in sel], [float(r["ln_S"]) for r in sel])
            files.append(name)

    parts = [f"config hash {chash}  version {manifest.version}", "",
             "Transport exponent against dimension bound",
             format_table(["seed", "p", "alpha+", "D+(q)p", "packing p", "gap", "result"],
                          bound_rows), "",
             "Generalized dimension estimates",
             format_table(["seed", "q", "route", "D-", "D+"], dim_rows), "",
             "Transport flags",
             format_table(["seed", "quasiballistic", "monotone in p", "alpha+ <= p+0.1"],
                          [(s, "yes" if a else "no", "yes" if b else "no", "yes" if c else "no")
                           for s, a, b, c in flag_rows])]
    if spacing_rows:
        parts += ["", "Spacing witnesses",
                  format_table(["seed", "alpha", "depth", "L0", "C_alpha", "verified"],
                               spacing_rows)]
    text = "\n".join(parts) + "\n"
    (out / "report.txt").write_text(f"# config_hash: {chash}\n# stage: report\n" + text)
    files.insert(0, "report.txt")
    manifest.stages.append(StageRecord("report", -1, files, 0.0))
    manifest.save()
    return {"text": text, "files": files, "bounds_passed": all(r[-1] for r in bound_rows),
            "quasiballistic": [r[1] for r in flag_rows]}


def _write_plot(path: Path, chash: str, xlabel: str, ylabel: str, x, y) -> None:
    lines = [f"# config_hash: {chash}", "# stage: report", f"# columns: {xlabel}, {ylabel}"]
    lines += [f"{float(a)!r} {float(b)!r}" for a, b in zip(x, y)]
    path.write_text("\n".join(lines) + "\n")
