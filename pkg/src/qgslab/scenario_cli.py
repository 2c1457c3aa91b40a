"""Scenario files, run orchestration, manifests, reports and the ``qg`` command.

A scenario is a flat ``key = value`` file (``#`` starts a comment).  Only
``name`` is required; every other key has a documented default (see
``SCHEMA``) and unknown keys are rejected.

A run writes into ``<output root>/<name>/``:

* ``budget.csv``: the energy budget at every step;
* ``snapshots/``: theta, surface drift ``u1``/``u2`` and forcing at the
  diagnostic cadence, plus pv at the first and last step;
* one CSV per selected diagnostic, ``verdicts.csv`` and ``summary.txt``;
* ``manifest.json``: byte sizes and SHA-256 digests of every artifact, the
  verdict summary and a digest over all of it.

Wall-clock times go to ``timing.json``, which the manifest does not cover, so
two executions of one scenario give byte-identical manifests.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import shutil
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis_norms import (
    InequalityVerdict,
    NormReport,
    besov_norm_bands,
    bmo_norm,
    holder_norm,
    log_lipschitz_modulus,
    sobolev_seminorm,
)
from .calibration import load_calibration
from .degiorgi_lab import TruncationLadder, cascade, truncation_energy, verify_recurrence, window_scale
from .duhamel_bootstrap import additive_regularity_probe, besov_forcing_bound, velocity_regularity_transfer
from .qg_dynamics import (
    BUDGET_COLUMNS,
    BudgetSeries,
    CFLError,
    EnergyBudget,
    QGSolver,
    RunConfig,
    SliceBounds,
    SolverAbort,
    audit_apriori,
    growth_report,
    initial_state,
    integrate,
    psi2_slice_norms,
    sobolev_norms,
)
from .spectral_core import (
    BoundaryField,
    FieldSeries,
    SlabField,
    fractional_laplacian,
    gradient,
    read_snapshot,
    write_snapshot,
)

DIAGNOSTICS = ("apriori", "degiorgi", "bootstrap", "norms")
MANIFEST_FORMAT = "qgslab-manifest-1"


class ScenarioError(ValueError):
    """Invalid scenario file; the message names the key and line."""


class ManifestError(ValueError):
    """Manifest does not match the files it describes."""


# --------------------------------------------------------------------------
# scenario schema

_REQUIRED = object()


def _int(v: str) -> int:
    return int(v, 10)


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _names(v: str) -> tuple[str, ...]:
    items = tuple(x.strip() for x in v.split(",") if x.strip())
    bad = [x for x in items if x not in DIAGNOSTICS]
    if bad:
        raise ValueError(f"unknown diagnostics {bad}; choose from {list(DIAGNOSTICS)}")
    return tuple(x for x in DIAGNOSTICS if x in items)


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _optional_float(v: str):
    return None if v.lower() in ("", "none", "end") else float(v)


# key -> (parser, default, check, description)
SCHEMA: dict[str, tuple] = {
    "name": (str, _REQUIRED, lambda v: bool(v) and "/" not in v, "run name, also the output subdirectory"),
    "n1": (_int, 64, lambda v: v >= 8 and v % 2 == 0, "grid points in x1 (even, >= 8)"),
    "n2": (_int, 64, lambda v: v >= 8 and v % 2 == 0, "grid points in x2 (even, >= 8)"),
    "nz": (_int, 16, lambda v: v >= 8, "vertical nodes (>= 8)"),
    "z_max": (float, 2 * math.pi, lambda v: v > 0, "slab height"),
    "dt": (float, 2e-3, lambda v: v > 0, "time step"),
    "t_end": (float, 1.0, lambda v: v >= 0, "final time"),
    "dealias": (float, 2.0 / 3.0, lambda v: 0 < v <= 1, "retained fraction of each wavenumber axis"),
    "init": (str, "random", lambda v: v in ("random", "zero") or v.startswith("modes:"), "random | zero | modes:<list>"),
    "theta_amp": (float, 1.0, lambda v: v >= 0, "sup of the initial trace"),
    "pv_amp": (float, 1.0, lambda v: v >= 0, "sup of the initial pv"),
    "k_max": (_int, 6, lambda v: v >= 1, "horizontal bandwidth of random data"),
    "mz_max": (_int, 3, lambda v: v >= 0, "vertical cosine modes of random pv"),
    "cadence": (_int, 10, lambda v: v >= 1, "steps between snapshots"),
    "seed": (_int, 0, lambda v: v >= 0, "random seed"),
    "forcing": (_bool, True, lambda v: True, "include the pv forcing of the trace equation"),
    "advection": (_bool, True, lambda v: True, "include advection"),
    "diagnostics": (_names, ("apriori",), lambda v: True, "comma list of apriori, degiorgi, bootstrap, norms"),
    "output_dir": (str, "qg_output", lambda v: bool(v), "output root (QG_OUTPUT_DIR overrides)"),
    "checkpoint": (_int, 100, lambda v: v >= 0, "steps between checkpoints (0 disables)"),
    "apriori_tol": (float, 0.02, lambda v: 0 <= v < 1, "relative tolerance of the conservation audits"),
    "slice_stride": (_int, 4, lambda v: v >= 1, "audit every n-th z-node for slice norms"),
    "sobolev_s": (_ints, (2, 3), lambda v: bool(v) and all(s in (2, 3) for s in v), "Sobolev orders, subset of 2,3"),
    "degiorgi_t0": (_optional_float, None, lambda v: v is None or v > 0, "window end (default t_end)"),
    "degiorgi_L_factor": (float, 2.0, lambda v: v > 0, "ladder top as a multiple of sup|theta|"),
    "degiorgi_k_max": (_int, 10, lambda v: v >= 1, "truncation rungs"),
    "cascade_K": (float, 0.5, lambda v: 0 < v < 1, "cascade dilation factor"),
    "cascade_depth": (_int, 6, lambda v: v >= 1, "cascade levels"),
    "cascade_min_cells": (float, 0.125, lambda v: v > 0, "smallest ball radius in grid cells"),
    "bootstrap_alpha1": (float, 0.25, lambda v: 0 < v < 1, "Hoelder exponent assumed for theta"),
    "bootstrap_alpha2": (float, 0.25, lambda v: 0 < v < 1, "Hoelder exponent assumed for the drift"),
}

_RUN_KEYS = ("n1", "n2", "nz", "z_max", "dt", "t_end", "dealias", "init", "theta_amp", "pv_amp",
             "k_max", "mz_max", "cadence", "seed", "forcing", "advection")


@dataclass(frozen=True)
class Scenario:
    name: str
    config: RunConfig
    diagnostics: tuple[str, ...]
    output_dir: str
    seed: int
    params: dict = field(default_factory=dict)
    source: bytes = b""

    @property
    def digest(self) -> str:
        """SHA-256 over the config bytes, the seed and the package version."""
        h = hashlib.sha256()
        h.update(self.source)
        h.update(f"\0seed={self.seed}\0version={__version__}".encode())
        return h.hexdigest()

    def output_root(self) -> Path:
        return Path(os.environ.get("QG_OUTPUT_DIR") or self.output_dir)

    def run_dir(self) -> Path:
        return self.output_root() / self.name


def parse_scenario(text: str, source: bytes | None = None) -> Scenario:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ScenarioError(f"line {lineno}: unknown key '{key}'")
        if key in values:
            raise ScenarioError(f"line {lineno}: key '{key}' given twice")
        parser, _, check, desc = SCHEMA[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: key '{key}': cannot parse {value!r} ({exc})") from None
        if not check(parsed):
            raise ScenarioError(f"line {lineno}: key '{key}': value {value!r} out of range ({desc})")
        values[key] = parsed
    for key, (_, default, _, _) in SCHEMA.items():
        if key not in values:
            if default is _REQUIRED:
                raise ScenarioError(f"missing required key '{key}'")
            values[key] = default
    try:
        config = RunConfig(**{k: values[k] for k in _RUN_KEYS})
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    params = {k: v for k, v in values.items() if k not in _RUN_KEYS and k not in ("name", "diagnostics", "output_dir")}
    return Scenario(
        name=values["name"],
        config=config,
        diagnostics=values["diagnostics"],
        output_dir=values["output_dir"],
        seed=values["seed"],
        params=params,
        source=text.encode("utf-8") if source is None else source,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file {path} does not exist")
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ScenarioError(f"scenario file {path} is not UTF-8: {exc}") from None
    return parse_scenario(text, raw)


# --------------------------------------------------------------------------
# manifest


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def verdict_row(v: InequalityVerdict) -> dict:
    return {"name": v.name, "lhs": float(v.lhs), "rhs": float(v.rhs), "constant": float(v.constant), "satisfied": bool(v.satisfied)}


def counts_toward_pass(name: str) -> bool:
    return not name.endswith("_info")


@dataclass
class RunManifest:
    scenario: str
    scenario_hash: str
    version: str
    status: str
    steps: int
    t: float
    artifacts: list[dict]
    verdicts: list[dict]
    abort: dict | None = None
    started: float | None = None
    ended: float | None = None
    path: Path | None = None

    @property
    def passed(self) -> bool:
        return self.status == "complete" and all(v["satisfied"] for v in self.verdicts if counts_toward_pass(v["name"]))

    def body(self) -> dict:
        failed = [v["name"] for v in self.verdicts if counts_toward_pass(v["name"]) and not v["satisfied"]]
        return {
            "format": MANIFEST_FORMAT,
            "scenario": self.scenario,
            "scenario_hash": self.scenario_hash,
            "version": self.version,
            "status": self.status,
            "steps": self.steps,
            "t": self.t,
            "abort": self.abort,
            "artifacts": self.artifacts,
            "verdicts": self.verdicts,
            "summary": {"total": len(self.verdicts), "failed": failed, "pass": self.passed},
        }

    @staticmethod
    def _digest(body: dict) -> str:
        return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    @property
    def digest(self) -> str:
        return self._digest(self.body())

    def to_json(self) -> str:
        body = self.body()
        body["digest"] = self._digest(body)
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def write(self, run_dir: Path) -> Path:
        path = run_dir / "manifest.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(self.to_json())
        tmp.replace(path)
        self.path = path
        return path

    @classmethod
    def load(cls, path, verify: bool = True) -> "RunManifest":
        """Read a manifest; with ``verify`` the digest and every artifact are checked."""
        path = Path(path)
        try:
            body = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from None
        if not isinstance(body, dict) or body.get("format") != MANIFEST_FORMAT:
            raise ManifestError(f"{path} is not a {MANIFEST_FORMAT} manifest")
        try:
            m = cls(
                body["scenario"], body["scenario_hash"], body["version"], body["status"], int(body["steps"]),
                float(body["t"]), list(body["artifacts"]), list(body["verdicts"]), body.get("abort"), path=path,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"manifest {path} is malformed: missing or bad field {exc}") from None
        if verify:
            recorded = body.get("digest")
            stripped = {k: v for k, v in body.items() if k != "digest"}
            computed = cls._digest(stripped)
            if recorded != computed:
                raise ManifestError(f"digest mismatch in {path}: recorded {recorded}, computed {computed}")
            if cls._digest(m.body()) != computed:
                raise ManifestError(f"digest mismatch in {path}: summary block inconsistent with verdicts")
            m.verify_artifacts()
        return m

    def verify_artifacts(self):
        root = self.path.parent
        for a in self.artifacts:
            p = root / a["path"]
            if not p.is_file():
                raise ManifestError(f"artifact {a['path']} listed in manifest is missing")
            size = p.stat().st_size
            if size != a["bytes"]:
                raise ManifestError(f"artifact {a['path']}: size {size} != recorded {a['bytes']}")
            digest = _sha256(p)
            if digest != a["sha256"]:
                raise ManifestError(f"digest mismatch for artifact {a['path']}: recorded {a['sha256']}, file {digest}")


def _artifact_list(run_dir: Path) -> list[dict]:
    skip = {"manifest.json", "manifest.json.tmp", "timing.json"}
    out = []
    for p in sorted(run_dir.rglob("*")):
        rel = p.relative_to(run_dir).as_posix()
        if not p.is_file() or rel in skip or rel.startswith("checkpoint/") or rel.startswith("report."):
            continue
        out.append({"path": rel, "bytes": p.stat().st_size, "sha256": _sha256(p)})
    return out


# --------------------------------------------------------------------------
# run state persistence

_SNAP_FIELDS = ("theta", "u1", "u2", "forcing")


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(f"{x:.17g}" if isinstance(x, float) else str(x) for x in r))
    return "\n".join(lines) + "\n"


def _read_csv(path: Path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return list(csv.reader(fh))[1:]


class _Recorder:
    """Collects per-snapshot rows and files for one run, and restores them on resume."""

    def __init__(self, scenario: Scenario, run_dir: Path):
        self.s = scenario
        self.dir = run_dir
        self.snap = run_dir / "snapshots"
        self.index: list[tuple[int, float]] = []
        self.slices: list[SliceBounds] = []
        self.sobolev: list[list[float]] = []
        self.budget = BudgetSeries()

    @property
    def want_slices(self) -> bool:
        return "apriori" in self.s.diagnostics

    @property
    def want_sobolev(self) -> bool:
        return "norms" in self.s.diagnostics

    def sobolev_names(self) -> list[str]:
        out = []
        for s in self.s.params["sobolev_s"]:
            out += [f"flat_s{s}", f"full_s{s}"]
        return out

    def observe(self, step: int, t: float, theta_h, pv_h, solver: QGSolver, final: bool = False):
        self.snap.mkdir(parents=True, exist_ok=True)
        fields = solver.surface_fields(theta_h, pv_h)
        fields["theta"] = BoundaryField(solver.torus, values=solver.inv(theta_h))
        for name in _SNAP_FIELDS:
            write_snapshot(self.snap / f"{name}_{step:06d}.qgf", fields[name])
        if step == 0 or final:
            write_snapshot(self.snap / f"pv_{step:06d}.qgf", SlabField(solver.slab, solver.inv(pv_h)))
        self.index.append((step, t))
        if self.want_slices or self.want_sobolev:
            state = solver.to_state(t, theta_h, pv_h)
            if self.want_slices:
                self.slices.append(psi2_slice_norms(state, heights=state.grid.z[:: self.s.params["slice_stride"]]))
            if self.want_sobolev:
                row = [t]
                for s in self.s.params["sobolev_s"]:
                    row += list(sobolev_norms(state, s))
                self.sobolev.append(row)

    def flush(self):
        self.snap.mkdir(parents=True, exist_ok=True)
        (self.dir / "budget.csv").write_text(self.budget.to_csv())
        for name in _SNAP_FIELDS:
            (self.snap / f"{name}_index.csv").write_text(_csv_text(["step", "t"], [(i, float(t)) for i, t in self.index]))
        if self.want_slices:
            rows = [(s.t, s.besov1, s.l4, s.linf, s.surface_34) for s in self.slices]
            (self.dir / "slices.csv").write_text(_csv_text(["t", "besov1", "l4", "linf", "surface_h32"], rows))
        if self.want_sobolev:
            (self.dir / "sobolev.csv").write_text(_csv_text(["t"] + self.sobolev_names(), self.sobolev))

    def restore(self, step: int, t: float):
        """Reload rows written up to checkpoint ``step`` (time ``t``)."""
        tol = 1e-12 * max(1.0, abs(t))
        self.budget = BudgetSeries(b for b in BudgetSeries.from_csv(self.dir / "budget.csv") if b.t <= t + tol)
        self.index = [(int(a), float(b)) for a, b in _read_csv(self.snap / "theta_index.csv") if int(a) <= step]
        if self.want_slices:
            self.slices = [SliceBounds(*map(float, r)) for r in _read_csv(self.dir / "slices.csv") if float(r[0]) <= t + tol]
        if self.want_sobolev:
            self.sobolev = [list(map(float, r)) for r in _read_csv(self.dir / "sobolev.csv") if float(r[0]) <= t + tol]

    def series(self, name: str) -> FieldSeries:
        return FieldSeries([t for _, t in self.index], [read_snapshot(self.snap / f"{name}_{i:06d}.qgf") for i, _ in self.index])


def _save_checkpoint(run_dir: Path, step: int, theta_h, pv_h, dissipation: float):
    ck = run_dir / "checkpoint"
    ck.mkdir(exist_ok=True)
    tmp = ck / "state.tmp.npz"
    np.savez(tmp, theta_h=theta_h, pv_h=pv_h, step=step, dissipation=dissipation)
    tmp.replace(ck / "state.npz")


def _load_checkpoint(run_dir: Path):
    p = run_dir / "checkpoint" / "state.npz"
    if not p.is_file():
        return None
    with np.load(p) as z:
        return int(z["step"]), z["theta_h"].copy(), z["pv_h"].copy(), float(z["dissipation"])


def _prepare_dir(run_dir: Path, scenario: Scenario, restart: bool):
    """Return a checkpoint to resume from, or None after making ``run_dir`` fresh."""
    manifest = run_dir / "manifest.json"
    if run_dir.exists():
        if not manifest.exists() and any(run_dir.iterdir()):
            raise ScenarioError(f"refusing to overwrite {run_dir}: not a run directory (no manifest.json)")
        if manifest.exists() and not restart:
            try:
                old = json.loads(manifest.read_text())
            except (OSError, json.JSONDecodeError):
                old = {}
            if old.get("status") in ("running", "aborted") and old.get("scenario_hash") == scenario.digest:
                ck = _load_checkpoint(run_dir)
                if ck is not None:
                    return ck
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    return None


# --------------------------------------------------------------------------
# diagnostics


def _zero_series(series: FieldSeries) -> bool:
    return all(f.sup() == 0.0 for f in series.fields)


def degiorgi_diagnostics(theta: FieldSeries, u: tuple[FieldSeries, FieldSeries], forcing: FieldSeries, params: dict):
    """Rows ``(k, E_k, osc_k, fitC, r_estimate)`` and the recurrence/cascade verdicts."""
    t0 = params.get("degiorgi_t0") or float(theta.times[-1])
    K0 = window_scale(t0)
    k_max = params["degiorgi_k_max"]
    a = t0 - 2 * K0
    window = [f for t, f in theta if a - 1e-12 <= t <= t0 + 1e-12]
    sup = max((f.sup() for f in window), default=0.0)
    if sup == 0.0:
        rows = [(k, 0.0, 0.0, 0.0, math.nan) for k in range(k_max + 1)]
        v = InequalityVerdict("degiorgi_recurrence", 0.0, 1.0, math.inf, True)
        return rows, [v]
    verdicts = []
    ladders = ((params["degiorgi_L_factor"], "degiorgi_recurrence"), (1.0, "degiorgi_recurrence_L1_info"))
    for factor, name in ladders:
        L = factor * sup
        E = truncation_energy(theta, TruncationLadder(L, k_max, t0))
        rec = verify_recurrence(E, L)
        ok = rec.satisfied and (rec.decays or rec.forced_decay)
        verdicts.append(InequalityVerdict(name, rec.lhs, rec.rhs, rec.constant, ok))
        if name == "degiorgi_recurrence":
            E_main, fitC = E.E, rec.lhs
    trace = cascade(theta, u, forcing, params["cascade_K"], params["cascade_depth"], t0=t0,
                    min_radius_cells=params["cascade_min_cells"])
    r = trace.r_estimate
    verdicts.append(InequalityVerdict("cascade_r_positive", float(r), 0.0, 0.0, bool(r > 0)))
    rows = []
    for k in range(max(k_max + 1, len(trace.osc))):
        e = float(E_main[k]) if k < len(E_main) else math.nan
        o = float(trace.osc_renormalised[k]) if k < len(trace.osc) else math.nan
        rows.append((k, e, o, float(fitC), float(r)))
    return rows, verdicts


def bootstrap_diagnostics(theta: FieldSeries, u: tuple[FieldSeries, FieldSeries], forcing: FieldSeries, params: dict,
                          calibration: dict):
    """Rows ``(probe, alpha, quotient, const_fit)`` and verdicts against frozen constants."""
    t0 = float(theta.times[-1])
    K0 = window_scale(t0) if t0 > 0 else 0.0
    keep = [i for i, t in enumerate(theta.times) if t >= t0 - 2 * K0 - 1e-12]
    sub = lambda s: FieldSeries(s.times[keep], [s.fields[i] for i in keep])  # noqa: E731
    ineq = calibration.get("inequalities", {})
    rows, verdicts = [], []
    a1, a2 = params["bootstrap_alpha1"], params["bootstrap_alpha2"]
    if len(keep) >= 2:
        rep = additive_regularity_probe(sub(theta), (sub(u[0]), sub(u[1])), t0, a1, a2)
        rows.append(("additive_regularity", a1 + a2, rep.value, rep.const_fit))
        verdicts.append(InequalityVerdict("additive_regularity", rep.value, 1.0, math.inf, bool(math.isfinite(rep.value))))
        omega = [gradient(fractional_laplacian(f, -1.0)) for f in sub(forcing).fields]
        om = (FieldSeries(sub(forcing).times, [w[0] for w in omega]), FieldSeries(sub(forcing).times, [w[1] for w in omega]))
        v = besov_forcing_bound(om, constant=ineq.get("besov_forcing"))
        rows.append(("besov_forcing", 1.0, v.lhs, v.fitted))
        verdicts.append(v)
    tr = velocity_regularity_transfer(theta.fields[-1], constant=ineq.get("velocity_b1"))
    rows.append(("velocity_b1", 1.0, tr.value, tr.const_fit))
    verdicts.append(InequalityVerdict("velocity_b1", tr.value, tr.theta_b1, ineq.get("velocity_b1", math.nan), tr.satisfied))
    return rows, verdicts


def sobolev_verdicts(report) -> list[InequalityVerdict]:
    out = []
    for name, fit in report.fits.items():
        if not name.startswith("full_"):
            continue
        ok = bool(fit.envelope_r2 >= 0.9 and not fit.super_exponential)
        out.append(InequalityVerdict(f"sobolev_{name}", 0.9, fit.envelope_r2, 1.0, ok))
    return out


# --------------------------------------------------------------------------
# orchestration


def run_scenario(s: Scenario, restart: bool = False, calibration: dict | None = None) -> RunManifest:
    """Execute the scenario and write its artifacts and manifest.

    A run whose directory holds a ``running``/``aborted`` manifest with the
    same scenario digest and a checkpoint resumes from that checkpoint unless
    ``restart`` is set.  Solver aborts are recorded in the manifest (status
    ``aborted`` with a pointer to the last valid state) and re-raised.
    """
    calibration = load_calibration() if calibration is None else calibration
    run_dir = s.run_dir()
    started = time.time()
    ck = _prepare_dir(run_dir, s, restart)
    cfg = s.config
    solver = QGSolver(cfg)
    rec = _Recorder(s, run_dir)
    n = cfg.n_steps
    manifest = RunManifest(s.name, s.digest, __version__, "running", 0, 0.0, [], [], started=started)
    if ck is None:
        state = initial_state(cfg)
        theta_h, pv_h = solver.to_spectral(state)
        first, diss = 1, 0.0
        rec.budget.append(solver.budget(0.0, theta_h, pv_h, 0.0))
        rec.observe(0, 0.0, theta_h, pv_h, solver, final=n == 0)
        rec.flush()
    else:
        step, theta_h, pv_h, diss = ck
        rec.restore(step, step * cfg.dt)
        first = step + 1
        manifest.steps, manifest.t = step, step * cfg.dt
    manifest.write(run_dir)
    step, t = first - 1, (first - 1) * cfg.dt
    try:
        for step, t, theta_h, pv_h, b in integrate(solver, theta_h, pv_h, 0.0, n, first, diss):
            rec.budget.append(b)
            if step % cfg.cadence == 0 or step == n:
                rec.observe(step, t, theta_h, pv_h, solver, final=step == n)
            if s.params["checkpoint"] and step % s.params["checkpoint"] == 0 and step < n:
                rec.flush()
                _save_checkpoint(run_dir, step, theta_h, pv_h, b.boundary_dissipation)
                manifest.steps, manifest.t = step, t
                manifest.artifacts = _artifact_list(run_dir)
                manifest.write(run_dir)
    except (SolverAbort, CFLError) as exc:
        rec.flush()
        last = run_dir / "last_valid"
        last.mkdir(exist_ok=True)
        st = exc.last_state if isinstance(exc, SolverAbort) else solver.to_state(t, theta_h, pv_h)
        write_snapshot(last / "theta.qgf", st.theta)
        write_snapshot(last / "pv.qgf", st.pv)
        manifest.status = "aborted"
        manifest.steps, manifest.t = step, float(st.t)
        manifest.abort = {"reason": str(exc), "t": float(st.t), "last_valid_state": ["last_valid/theta.qgf", "last_valid/pv.qgf"]}
        manifest.artifacts = _artifact_list(run_dir)
        manifest.ended = time.time()
        manifest.write(run_dir)
        _write_timing(run_dir, manifest)
        raise
    rec.flush()
    verdicts = _diagnostics(s, rec, calibration)
    _write_verdicts(run_dir, verdicts)
    shutil.rmtree(run_dir / "checkpoint", ignore_errors=True)
    manifest.status = "complete"
    manifest.steps, manifest.t = n, n * cfg.dt
    manifest.verdicts = [verdict_row(v) for v in verdicts]
    (run_dir / "summary.txt").write_text(_summary_text(s, manifest))
    manifest.artifacts = _artifact_list(run_dir)
    manifest.ended = time.time()
    manifest.write(run_dir)
    _write_timing(run_dir, manifest)
    return manifest


def _write_timing(run_dir: Path, m: RunManifest):
    (run_dir / "timing.json").write_text(json.dumps({"started": m.started, "ended": m.ended}, indent=2) + "\n")


def _diagnostics(s: Scenario, rec: _Recorder, calibration: dict) -> list[InequalityVerdict]:
    verdicts: list[InequalityVerdict] = []
    p = s.params
    run_dir = rec.dir
    if "apriori" in s.diagnostics:
        v = audit_apriori(rec.budget, slices=rec.slices, tol=p["apriori_tol"], constants=calibration.get("apriori", {}))
        (run_dir / "apriori.csv").write_text(_verdict_csv(v))
        verdicts += v
    if "norms" in s.diagnostics:
        names = rec.sobolev_names()
        rows = np.array(rec.sobolev, dtype=float).reshape(len(rec.sobolev), len(names) + 1)
        report = growth_report(rows[:, 0], {n: rows[:, i + 1] for i, n in enumerate(names)})
        fit_rows = [(n, f.rate, f.doubling_time, f.envelope_rate, f.envelope_r2, str(f.super_exponential).lower(),
                     ";".join(f"{d:.6g}" for d in f.doublings)) for n, f in report.fits.items()]
        (run_dir / "sobolev_fit.csv").write_text(_csv_text(
            ["norm", "rate", "doubling_time", "envelope_rate", "envelope_r2", "super_exponential", "doublings"], fit_rows))
        verdicts += sobolev_verdicts(report)
    if "degiorgi" in s.diagnostics or "bootstrap" in s.diagnostics:
        theta = rec.series("theta")
        u = (rec.series("u1"), rec.series("u2"))
        forcing = rec.series("forcing")
        if "degiorgi" in s.diagnostics:
            if s.config.t_end <= 0:
                raise ScenarioError("key 'diagnostics': degiorgi needs t_end > 0")
            rows, v = degiorgi_diagnostics(theta, u, forcing, p)
            (run_dir / "degiorgi.csv").write_text(_csv_text(["k", "E_k", "osc_k", "fitC", "r_estimate"], rows))
            verdicts += v
        if "bootstrap" in s.diagnostics:
            rows, v = bootstrap_diagnostics(theta, u, forcing, p, calibration)
            (run_dir / "bootstrap.csv").write_text(_csv_text(["probe", "alpha", "quotient", "const_fit"], rows))
            verdicts += v
    return verdicts


def _verdict_csv(verdicts) -> str:
    return "name,lhs,rhs,constant,satisfied\n" + "".join(v.csv_row() + "\n" for v in verdicts)


def _write_verdicts(run_dir: Path, verdicts):
    (run_dir / "verdicts.csv").write_text(_verdict_csv(verdicts))


def _summary_text(s: Scenario, m: RunManifest) -> str:
    lines = [f"scenario {s.name} ({s.digest[:16]})", f"steps {m.steps}, t = {m.t:g}", ""]
    for v in m.verdicts:
        tag = "PASS" if v["satisfied"] else "FAIL"
        if not counts_toward_pass(v["name"]):
            tag += " (info)"
        lines.append(f"{tag:12s} {v['name']:32s} lhs={v['lhs']:.6g} rhs={v['rhs']:.6g} C={v['constant']:.6g}")
    lines += ["", "overall: " + ("PASS" if m.passed else "FAIL")]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# reports

REPORT_HEADER = ["kind", "name", "t", "lhs", "rhs", "constant", "value", "status"]


def _report_rows(m: RunManifest, calibration: dict) -> list[list]:
    rows = []
    for v in m.verdicts:
        status = "PASS" if v["satisfied"] else "FAIL"
        if not counts_toward_pass(v["name"]):
            status = "INFO"
        rows.append(["verdict", v["name"], "", v["lhs"], v["rhs"], v["constant"], "", status])
    root = m.path.parent
    listed = {a["path"] for a in m.artifacts}
    if "slices.csv" in listed:
        frozen = calibration.get("apriori", {})
        keys = {"besov1": "slice_besov1", "l4": "slice_l4", "linf": "slice_linf", "surface_h32": "surface_psi2_h32"}
        with open(root / "slices.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                for col, key in keys.items():
                    rows.append(["norm", key, float(r["t"]), "", "", frozen.get(key, ""), float(r[col]), "-"])
    if "sobolev.csv" in listed:
        with open(root / "sobolev.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                t = float(r.pop("t"))
                for name, val in r.items():
                    rows.append(["norm", name, t, "", "", "", float(val), "-"])
    return rows


def emit_report(manifest, format: str = "text", out=None, calibration: dict | None = None) -> Path:
    """Write a consolidated report of every verdict and norm series next to the manifest."""
    if format not in ("csv", "text"):
        raise ValueError("format must be 'csv' or 'text'")
    m = manifest if isinstance(manifest, RunManifest) else RunManifest.load(manifest)
    if m.path is None:
        raise ManifestError("manifest has no location on disk")
    calibration = load_calibration() if calibration is None else calibration
    rows = _report_rows(m, calibration)
    fmt = lambda x: f"{x:.10g}" if isinstance(x, float) else str(x)  # noqa: E731
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow([fmt(x) for x in r])
        text = buf.getvalue()
    else:
        cells = [REPORT_HEADER] + [[fmt(x) for x in r] for r in rows]
        widths = [max(len(c[i]) for c in cells) for i in range(len(REPORT_HEADER))]
        text = "\n".join("  ".join(c[i].ljust(widths[i]) for i in range(len(c))).rstrip() for c in cells) + "\n"
        if m.verdicts:
            text += f"\noverall: {'PASS' if m.passed else 'FAIL'} (status {m.status})\n"
    path = Path(out) if out is not None else m.path.parent / f"report.{'csv' if format == 'csv' else 'txt'}"
    path.write_text(text)
    return path


# --------------------------------------------------------------------------
# command line


def _run_series(run_dir: Path):
    snap = Path(run_dir) / "snapshots"
    if not (snap / "theta_index.csv").is_file():
        raise ScenarioError(f"{run_dir} has no snapshots/theta_index.csv")
    load = lambda n: FieldSeries.load(snap, n)  # noqa: E731
    return load("theta"), (load("u1"), load("u2")), load("forcing")


def _print_csv(header, rows):
    sys.stdout.write(_csv_text(header, rows))


def _cmd_run(args) -> int:
    s = load_scenario(args.config)
    if args.output:
        s = replace(s, output_dir=args.output)
    m = run_scenario(s, restart=args.restart)
    sys.stdout.write((m.path.parent / "summary.txt").read_text())
    print(f"manifest: {m.path}")
    return 0 if m.passed else 1


def _cmd_audit(args) -> int:
    series = BudgetSeries.from_csv(args.series)
    cal = load_calibration(args.calibration)
    verdicts = audit_apriori(series, tol=args.tol, constants=cal.get("apriori", {}))
    sys.stdout.write(_verdict_csv(verdicts))
    return 0 if all(v.satisfied for v in verdicts) else 1


def _cmd_norms(args) -> int:
    f = read_snapshot(args.snapshot)
    s = float(args.s)
    rows = []
    if isinstance(f, BoundaryField):
        reports = [
            NormReport("sobolev", sobolev_seminorm(f, s), s=s, p=2.0, q=2.0),
            besov_norm_bands(f, s),
            bmo_norm(f),
            log_lipschitz_modulus(f),
            NormReport("l2", f.l2(), p=2.0),
            NormReport("linf", f.sup(), p=math.inf),
        ]
        if 0 < s < 1:
            reports.append(holder_norm(f, s))
        rows = [(r.name, "", r.value, r.s) for r in reports]
    else:
        for j, z in enumerate(f.grid.z):
            lev = f.level(j)
            rows.append(("sobolev", float(z), sobolev_seminorm(lev, s), s))
        rows.append(("l2_slab", "", math.sqrt(f.integral_sq()), 0.0))
    _print_csv(["name", "z", "value", "s"], rows)
    return 0


def _cmd_degiorgi(args) -> int:
    theta, u, forcing = _run_series(args.run)
    params = {"degiorgi_t0": args.t0, "degiorgi_L_factor": args.L_factor, "degiorgi_k_max": args.k_max,
              "cascade_K": args.K, "cascade_depth": args.depth, "cascade_min_cells": args.min_cells}
    rows, verdicts = degiorgi_diagnostics(theta, u, forcing, params)
    _print_csv(["k", "E_k", "osc_k", "fitC", "r_estimate"], rows)
    for v in verdicts:
        print("# " + v.csv_row(), file=sys.stderr)
    return 0 if all(v.satisfied for v in verdicts if counts_toward_pass(v.name)) else 1


def _cmd_bootstrap(args) -> int:
    theta, u, forcing = _run_series(args.run)
    params = {"bootstrap_alpha1": args.alpha1, "bootstrap_alpha2": args.alpha2}
    rows, verdicts = bootstrap_diagnostics(theta, u, forcing, params, load_calibration(args.calibration))
    _print_csv(["probe", "alpha", "quotient", "const_fit"], rows)
    return 0 if all(v.satisfied for v in verdicts) else 1


def _cmd_report(args) -> int:
    m = RunManifest.load(args.manifest)
    path = emit_report(m, args.format, args.out)
    print(path)
    return 0 if m.passed or not m.verdicts and m.status == "complete" else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qg", description="Quasi-geostrophic slab runs and estimate audits.")
    sub = ap.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="output root (overridden by QG_OUTPUT_DIR)")
    p.add_argument("--restart", action="store_true", help="discard any checkpoint and start clean")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("audit", help="a priori audit of an energy budget CSV")
    p.add_argument("--series", required=True)
    p.add_argument("--tol", type=float, default=0.02)
    p.add_argument("--calibration")
    p.set_defaults(func=_cmd_audit)
    p = sub.add_parser("norms", help="norms of a snapshot file")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--s", type=float, required=True)
    p.set_defaults(func=_cmd_norms)
    p = sub.add_parser("degiorgi", help="truncation energies and cascade on a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--t0", type=float)
    p.add_argument("--L-factor", dest="L_factor", type=float, default=2.0)
    p.add_argument("--k-max", dest="k_max", type=int, default=10)
    p.add_argument("--K", type=float, default=0.5)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--min-cells", dest="min_cells", type=float, default=0.125)
    p.set_defaults(func=_cmd_degiorgi)
    p = sub.add_parser("bootstrap", help="Duhamel probes on a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--alpha1", type=float, default=0.25)
    p.add_argument("--alpha2", type=float, default=0.25)
    p.add_argument("--calibration")
    p.set_defaults(func=_cmd_bootstrap)
    p = sub.add_parser("report", help="consolidated report from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--format", choices=("csv", "text"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # any execution error maps to exit code 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
