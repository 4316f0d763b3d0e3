"""Experiment configuration, orchestration, persistence and reporting.

Configs are INI documents with the sections ``[experiment]``, ``[model]``,
``[params]``, ``[lattice]`` and ``[run]``.  Every run writes its CSVs, a
JSON manifest and a matplotlib plot script into its own output directory.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .catalysts import CatalystModel, Kind
from .lattice import LatticeSpec, green_function, green_star
from .lyapunov import (
    dichotomy_check,
    estimate_lambda,
    intermittency_gap,
    kappa_sweep,
    write_sweep_csv,
)
from .moments import (
    annealed_moments,
    closed_form_lambda0,
    exact_moment_small,
    isrw_lambda0_series,
    torus_size,
)
from .polaron import solve_variational
from .reactant import ModelParams

__all__ = [
    "KINDS",
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "serialize_config",
    "run_experiment",
    "RunFailed",
    "emit_report",
]

KINDS = ("green", "lambda0", "moments", "sweep", "dichotomy", "polaron", "oracle-check")
ESTIMATORS = ("pde-ensemble", "fk-dual")
GAP_LABEL = "strict increase of p -> lam_p at kappa = 0"


class ConfigError(ValueError):
    """All violations found in a config document."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class RunFailed(RuntimeError):
    def __init__(self, stage: str, manifest: dict, cause: BaseException):
        self.stage = stage
        self.manifest = manifest
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    d: int
    L: int | None = None
    catalyst: str = "ISRW"
    rho: float = 0.5
    start: str = "product"
    burn_in: float | None = None
    kappa: float = 0.0
    gamma: float = 0.2
    delta: float = 0.0
    p_values: tuple = (1,)
    t_grid: tuple = tuple(float(t) for t in range(1, 11))
    kappa_list: tuple = ()
    n_reps: int = 100
    seed: int = 0
    out: str = "results"
    estimator: str = "pde-ensemble"
    fit_burn_in: float | None = None
    h_max: float | None = None
    N: int = 400
    r_max: float = 20.0

    @property
    def model(self) -> CatalystModel:
        return CatalystModel(self.catalyst, self.rho, start=self.start, burn_in=self.burn_in)

    def params(self, p: int | None = None, kappa: float | None = None) -> ModelParams:
        return ModelParams(
            kappa=self.kappa if kappa is None else kappa,
            gamma=self.gamma,
            rho=self.rho,
            delta=self.delta,
            p=p or self.p_values[0],
        )

    @property
    def lattice(self) -> LatticeSpec:
        L = self.L or torus_size(self.d, max((self.kappa, *self.kappa_list)), max(self.t_grid))
        return LatticeSpec(self.d, L)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


# (section, key) -> (field name, parser)
def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _ints(s):
    return tuple(int(x) for x in s.replace(",", " ").split())


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


def _opt_int(s):
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


SCHEMA = {
    "experiment": {"kind": ("kind", str), "seed": ("seed", int), "out": ("out", str), "estimator": ("estimator", str)},
    "model": {"catalyst": ("catalyst", str.upper), "start": ("start", str), "burn_in": ("burn_in", _opt_float)},
    "params": {
        "kappa": ("kappa", float),
        "gamma": ("gamma", float),
        "rho": ("rho", float),
        "delta": ("delta", float),
        "p": ("p_values", _ints),
    },
    "lattice": {"d": ("d", int), "L": ("L", _opt_int)},
    "run": {
        "t_grid": ("t_grid", _floats),
        "kappa_list": ("kappa_list", _floats),
        "n_reps": ("n_reps", int),
        "fit_burn_in": ("fit_burn_in", _opt_float),
        "h_max": ("h_max", _opt_float),
        "N": ("N", int),
        "r_max": ("r_max", float),
    },
}


def _validate(cfg: dict) -> list[str]:
    bad = []
    kind = cfg.get("kind")
    if kind not in KINDS:
        bad.append(f"experiment.kind must be one of {', '.join(KINDS)}, got {kind!r}")
    d = cfg.get("d")
    if not isinstance(d, int) or d < 1:
        bad.append("lattice.d must be an integer >= 1")
        d = None
    L = cfg.get("L")
    if L is not None and L < 2:
        bad.append("lattice.L must be >= 2")
    cat = cfg.get("catalyst")
    if cat not in {k.value for k in Kind}:
        bad.append(f"model.catalyst must be ISRW, SEP or SVM, got {cat!r}")
    else:
        try:
            CatalystModel(cat, cfg["rho"], start=cfg["start"], burn_in=cfg["burn_in"])
        except ValueError as exc:
            bad.append(str(exc))
    if cfg.get("burn_in") is not None and not cfg["burn_in"] >= 0:
        bad.append("model.burn_in must be >= 0")
    for name in ("kappa", "gamma", "delta"):
        v = cfg[name]
        if not (math.isfinite(v) and v >= 0):
            bad.append(f"params.{name} must be finite and >= 0")
    ps = cfg["p_values"]
    if not ps or any(p < 1 for p in ps):
        bad.append("params.p must list integers >= 1")
    t = np.asarray(cfg["t_grid"], dtype=float)
    if t.size == 0 or np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(np.diff(t) < 0):
        bad.append("run.t_grid must be a non-empty, non-decreasing list of times >= 0")
    if any(not (math.isfinite(k) and k >= 0) for k in cfg["kappa_list"]):
        bad.append("run.kappa_list entries must be finite and >= 0")
    if cfg["n_reps"] < 2:
        bad.append("run.n_reps must be >= 2")
    if not 0 <= cfg["seed"] < 2**64:
        bad.append("experiment.seed must be an unsigned 64-bit integer")
    if cfg["estimator"] not in ESTIMATORS:
        bad.append(f"experiment.estimator must be one of {', '.join(ESTIMATORS)}")
    for name in ("fit_burn_in", "h_max"):
        v = cfg[name]
        if v is not None and not (math.isfinite(v) and v > 0 if name == "h_max" else v >= 0):
            bad.append(f"run.{name} out of range")
    if not cfg["out"].strip():
        bad.append("experiment.out must be a non-empty path")
    if kind == "polaron":
        if d not in (None, 3, 5):
            bad.append("polaron requires d in {3, 5}")
        if cfg["N"] < 200:
            bad.append("run.N >= 200 required for polaron")
        if cfg["r_max"] < 20:
            bad.append("run.r_max >= 20 required for polaron")
    if kind == "lambda0":
        if cat != "ISRW":
            bad.append("lambda0 requires catalyst = ISRW")
        if cfg["kappa"] != 0:
            bad.append("lambda0 requires kappa = 0")
    if kind in ("moments", "sweep", "dichotomy") and t.size and np.all(np.isfinite(t)):
        cutoff = cfg["fit_burn_in"]
        if cutoff is None:
            cutoff = 1.0 / cfg["gamma"] if cfg["gamma"] > 0 else 0.0
        usable = int(np.sum((t >= cutoff) & (t > 0)))
        if usable < 6:
            bad.append(f"run.t_grid needs at least 6 positive times >= fit burn-in {cutoff:g}, has {usable}")
    if kind == "sweep" and not cfg["kappa_list"]:
        bad.append("sweep requires a non-empty run.kappa_list")
    if kind == "oracle-check" and cat == "SVM":
        bad.append("oracle-check supports ISRW and SEP only")
    return bad


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse and validate a config document; raise ConfigError listing every violation."""
    parser = configparser.RawConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    violations = []
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed document: {exc}"]) from None
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            violations.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                violations.append(f"unknown key {section}.{key}")
                continue
            name, conv = SCHEMA[section][key]
            try:
                values[name] = conv(raw)
            except (TypeError, ValueError):
                violations.append(f"{section}.{key}: cannot parse {raw!r}")
    for name in ("kind", "d"):
        if name not in values and not any(f".{name}" in v for v in violations):
            violations.append(f"missing required key {'experiment' if name == 'kind' else 'lattice'}.{name}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    if violations:
        raise ConfigError(violations)
    defaults = {f.name: f.default for f in dataclasses.fields(ExperimentConfig) if f.default is not dataclasses.MISSING}
    merged = {**defaults, **values}
    violations = _validate(merged)
    if violations:
        raise ConfigError(violations)
    return ExperimentConfig(**merged)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical document; floats use shortest round-trip repr."""
    out = io.StringIO()
    for section, keys in SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, (name, _) in keys.items():
            out.write(f"{key} = {_fmt(getattr(cfg, name))}\n")
        out.write("\n")
    return out.getvalue()


def _config_hash(cfg: ExperimentConfig, *, ignore=("out",)) -> str:
    doc = serialize_config(cfg.replace(**{k: ExperimentConfig.__dataclass_fields__[k].default for k in ignore}))
    return hashlib.sha256(doc.encode()).hexdigest()


# ---------------------------------------------------------------------------
# stages


def _g(x) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return f"{x:.10g}"


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _stage_green(cfg, out, log):
    g = green_function(cfg.d)
    rows = [[cfg.d, _g(g.value), g.method, _g(g.tolerance)]]
    _write_rows(out / "green.csv", ["d", "G_d", "method", "tolerance"], rows)
    if cfg.d >= 5:
        gs = green_star(cfg.d)
        _write_rows(out / "green_star.csv", ["d", "G_d_star", "method", "tolerance"], [[cfg.d, _g(gs.value), gs.method, _g(gs.tolerance)]])


def _stage_lambda0(cfg, out, log):
    lattice = cfg.lattice
    G = green_function(cfg.d)
    t = np.asarray(cfg.t_grid, dtype=float)
    rows = []
    for p in cfg.p_values:
        params = cfg.params(p)
        closed = closed_form_lambda0(params, G)
        logm = isrw_lambda0_series(params, lattice, t)
        for ti, m in zip(t, logm):
            lam_t = m / (p * ti) if ti > 0 else float("nan")
            rows.append([p, _g(ti), _g(m), _g(lam_t), _g(closed.value)])
    _write_rows(out / "lambda0.csv", ["p", "t", "log_moment", "Lambda_t", "lambda_closed_form"], rows)


def _moment_estimates(cfg, series_by_p, kappa, lattice, log, out, tag=""):
    ests = []
    for p, s in series_by_p.items():
        with open(out / f"moments{tag}_p{p}.csv", "w", newline="") as fh:
            s.to_csv(fh)
        if cfg.catalyst != "ISRW":
            lam = s.lyapunov_function()
            if np.any(lam[s.t > 0] > cfg.gamma + 1e-9):
                log["violations"].append(f"pathwise bound exceeded (p={p}, kappa={kappa})")
        e = estimate_lambda(s, burn_in=cfg.fit_burn_in)
        e.info.update(model=cfg.catalyst, d=cfg.d, L=lattice.L, gamma=cfg.gamma)
        if e.drift_flag:
            log["violations"].append(f"drift flag raised (p={p}, kappa={kappa})")
        ests.append(e)
    return ests


def _stage_moments(cfg, out, log):
    lattice = cfg.lattice
    series = annealed_moments(
        cfg.model, cfg.params(), lattice, cfg.t_grid, cfg.n_reps, cfg.estimator, cfg.seed, list(cfg.p_values), h_max=cfg.h_max
    )
    ests = _moment_estimates(cfg, series, cfg.kappa, lattice, log, out)
    with open(out / "lyapunov.csv", "w", newline="") as fh:
        write_sweep_csv(ests, fh)


def _stage_sweep(cfg, out, log):
    lattice = cfg.lattice
    ests = kappa_sweep(
        cfg.model,
        cfg.params(),
        lattice,
        cfg.kappa_list,
        cfg.t_grid,
        cfg.n_reps,
        cfg.seed,
        estimator=cfg.estimator,
        p_values=list(cfg.p_values),
        burn_in=cfg.fit_burn_in,
        h_max=cfg.h_max,
    )
    for e in ests:
        if e.drift_flag:
            log["violations"].append(f"drift flag raised (p={e.p}, kappa={e.kappa})")
    with open(out / "sweep.csv", "w", newline="") as fh:
        write_sweep_csv(ests, fh)


def _stage_dichotomy(cfg, out, log):
    lattice = cfg.lattice
    rows, gaps = [], []
    for i, kappa in enumerate(cfg.kappa_list or (cfg.kappa,)):
        series = annealed_moments(
            cfg.model, cfg.params(kappa=kappa), lattice, cfg.t_grid, cfg.n_reps, cfg.estimator, cfg.seed, list(cfg.p_values), h_max=cfg.h_max
        )
        ests = _moment_estimates(cfg, series, kappa, lattice, log, out, tag=f"_k{i}")
        for r in dichotomy_check(cfg.model, cfg.d, None, ests, gamma=cfg.gamma):
            rows.append([r.model, r.d, r.p, _g(r.kappa), _g(r.lam), _g(r.stderr), r.predicted, r.observed, r.consistent, r.theorem])
            if not r.consistent:
                log["violations"].append(f"dichotomy mismatch (p={r.p}, kappa={kappa}): predicted {r.predicted}, observed {r.observed}")
        by_p = sorted(ests, key=lambda e: e.p)
        for prev, cur in zip(by_p, by_p[1:]):
            gap = intermittency_gap(cur, prev)
            gaps.append([cur.p, _g(kappa), _g(gap.gap), _g(gap.stderr), gap.verdict])
    _write_rows(
        out / "dichotomy.csv",
        ["model", "d", "p", "kappa", "lambda_hat", "stderr", "predicted", "observed", "consistent", "theorem"],
        rows,
    )
    _write_rows(out / "gaps.csv", ["p", "kappa", "gap", "stderr", "verdict"], gaps)


def _stage_polaron(cfg, out, log):
    res = solve_variational(cfg.d, cfg.N, cfg.r_max)
    if not res.converged:
        log["violations"].append(f"polaron solver did not converge after {res.sweeps} sweeps")
    _write_rows(
        out / "polaron.csv",
        ["d", "P_d", "N", "r_max", "sweeps", "converged"],
        [[cfg.d, _g(res.value), cfg.N, _g(cfg.r_max), res.sweeps, res.converged]],
    )
    with open(out / f"profile_d{cfg.d}.csv", "w", newline="") as fh:
        res.profile.to_csv(fh)
    log["diagnostics"] = {"sweeps": res.sweeps, "projections": res.projections, "converged": res.converged}


def _stage_oracle_check(cfg, out, log):
    lattice = cfg.lattice
    series = annealed_moments(
        cfg.model, cfg.params(), lattice, cfg.t_grid, cfg.n_reps, cfg.estimator, cfg.seed, list(cfg.p_values), h_max=cfg.h_max
    )
    rows = []
    for p, s in series.items():
        for t, m, se in zip(s.t, s.log_moment, s.stderr):
            if t == 0:
                continue
            exact = exact_moment_small(cfg.model, cfg.params(p), lattice, float(t))
            z = (m - exact) / se if se > 0 else (0.0 if m == exact else math.inf)
            ok = abs(z) <= 3
            if not ok:
                log["violations"].append(f"oracle mismatch (p={p}, t={t}): z = {z:.3g}")
            rows.append([p, _g(t), _g(exact), _g(m), _g(se), _g(z), ok])
    _write_rows(out / "oracle_check.csv", ["p", "t", "exact", "estimate", "stderr", "z", "within_3sigma"], rows)


STAGES = {
    "green": _stage_green,
    "lambda0": _stage_lambda0,
    "moments": _stage_moments,
    "sweep": _stage_sweep,
    "dichotomy": _stage_dichotomy,
    "polaron": _stage_polaron,
    "oracle-check": _stage_oracle_check,
}

PLOT_SCRIPT = '''"""Plot the CSVs in this directory (needs matplotlib)."""
import csv
import glob
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def rows(name):
    with open(os.path.join(here, name)) as fh:
        return list(csv.DictReader(fh))


def curves(name, title):
    data = rows(name)
    fig, ax = plt.subplots()
    for p in sorted({r["p"] for r in data}, key=int):
        sub = [r for r in data if r["p"] == p and r["lambda_hat"] != "inf"]
        k = [float(r["kappa"]) for r in sub]
        lam = [float(r["lambda_hat"]) for r in sub]
        err = [2 * float(r["stderr"]) for r in sub]
        ax.errorbar(k, lam, yerr=err, marker="o", capsize=3, label=f"p = {p}")
    ax.set_xlabel("kappa")
    ax.set_ylabel("lambda_p(kappa)")
    ax.set_title(title)
    ax.legend()
    fig.savefig(os.path.join(here, name.replace(".csv", ".png")), dpi=150)


for name in ("sweep.csv", "lyapunov.csv"):
    if os.path.exists(os.path.join(here, name)):
        curves(name, "annealed Lyapunov exponents")

for path in sorted(glob.glob(os.path.join(here, "moments*_p*.csv"))):
    data = rows(os.path.basename(path))
    p = int(path.rsplit("_p", 1)[1].split(".")[0])
    t = [float(r["t"]) for r in data if float(r["t"]) > 0]
    lam = [float(r["log_moment"]) / (p * float(r["t"])) for r in data if float(r["t"]) > 0]
    fig, ax = plt.subplots()
    ax.plot(t, lam, marker=".")
    ax.set_xlabel("t")
    ax.set_ylabel("(1/pt) log E[u(0,t)^p]")
    fig.savefig(path.replace(".csv", ".png"), dpi=150)

for path in sorted(glob.glob(os.path.join(here, "profile_d*.csv"))):
    data = rows(os.path.basename(path))
    fig, ax = plt.subplots()
    ax.plot([float(r["r"]) for r in data], [float(r["f"]) for r in data])
    ax.set_xlabel("r")
    ax.set_ylabel("f(r)")
    fig.savefig(path.replace(".csv", ".png"), dpi=150)
'''


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(cfg, out, started, log, status, stage=None, error=None) -> dict:
    files = sorted(p for p in out.iterdir() if p.suffix == ".csv")
    return {
        "kind": cfg.kind,
        "config": serialize_config(cfg),
        "config_hash": _config_hash(cfg),
        "config_hash_without_seed": _config_hash(cfg, ignore=("out", "seed")),
        "code_version": __version__,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "stage_seeds": {cfg.kind: cfg.seed},
        "status": status,
        "failed_stage": stage,
        "error": error,
        "files": [{"name": p.name, "sha256": _digest(p)} for p in files],
        "violations": log["violations"],
        "diagnostics": log.get("diagnostics", {}),
    }


def run_experiment(cfg: ExperimentConfig, out: str | os.PathLike | None = None) -> dict:
    """Run ``cfg`` and write CSVs, ``manifest.json`` and ``plot.py`` into the output directory."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    log = {"violations": []}
    with open(out / "plot.py", "w") as fh:
        fh.write(PLOT_SCRIPT)
    try:
        STAGES[cfg.kind](cfg, out, log)
    except Exception as exc:
        manifest = _manifest(cfg, out, started, log, "failed", cfg.kind, f"{type(exc).__name__}: {exc}")
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        raise RunFailed(cfg.kind, manifest, exc) from exc
    manifest = _manifest(cfg, out, started, log, "complete")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    manifest["directory"] = str(out)
    return manifest


# ---------------------------------------------------------------------------
# report


def _load(m) -> tuple[dict, Path]:
    if isinstance(m, (str, os.PathLike)):
        p = Path(m)
        if p.is_dir():
            p = p / "manifest.json"
        return json.loads(p.read_text()), p.parent
    return m, Path(m.get("directory", "."))


def _keyed_rows(directory: Path, name: str):
    """(key, value, stderr) triples for the quantities a run reports."""
    with open(directory / name) as fh:
        data = list(csv.DictReader(fh))
    for r in data:
        if "lambda_hat" in r:
            yield (name, f"p={r['p']}", f"kappa={r['kappa']}"), r["lambda_hat"], r["stderr"]
        elif "log_moment" in r and "stderr" in r:
            yield (name, f"t={r['t']}"), r["log_moment"], r["stderr"]
        elif "estimate" in r:
            yield (name, f"p={r['p']}", f"t={r['t']}"), r["estimate"], r["stderr"]


def emit_report(manifests) -> str:
    """Merged table across runs, verdict summary and flagged violations."""
    lines = ["# Run report", "", "| run | kind | file | quantity | value | stderr |", "|---|---|---|---|---|---|"]
    verdicts, flags, missing = [], [], []
    by_group: dict[str, list] = {}
    for i, m in enumerate(manifests):
        try:
            man, directory = _load(m)
        except FileNotFoundError as exc:
            missing.append(f"run {i}: manifest {exc.filename}")
            continue
        quantities = {}
        for f in man.get("files", []):
            path = directory / f["name"]
            if not path.exists():
                missing.append(f"run {i}: {path}")
                continue
            if _digest(path) != f["sha256"]:
                flags.append(f"run {i}: digest mismatch for {f['name']}")
            for key, val, se in _keyed_rows(directory, f["name"]):
                quantities[key] = (val, se)
                lines.append(f"| {i} | {man['kind']} | {f['name']} | {' '.join(key[1:])} | {val} | {se} |")
            if f["name"] == "dichotomy.csv":
                with open(path) as fh:
                    for r in csv.DictReader(fh):
                        verdicts.append(
                            f"run {i}: {r['model']} d={r['d']} p={r['p']} kappa={r['kappa']}: predicted {r['predicted']}, "
                            f"observed {r['observed']} [{'consistent' if r['consistent'] == 'True' else 'INCONSISTENT'}] ({r['theorem']})"
                        )
            if f["name"] == "gaps.csv":
                with open(path) as fh:
                    for r in csv.DictReader(fh):
                        verdicts.append(f"run {i}: p={r['p']} kappa={r['kappa']}: gap {r['gap']} +- {r['stderr']}: {r['verdict']} ({GAP_LABEL})")
        for v in man.get("violations", []):
            flags.append(f"run {i}: {v}")
        if man.get("status") != "complete":
            flags.append(f"run {i}: status {man.get('status')} at stage {man.get('failed_stage')}")
        by_group.setdefault(man.get("config_hash_without_seed", f"run{i}"), []).append((i, quantities))
    lines += ["", "## Cross-seed agreement", ""]
    for runs in by_group.values():
        for (i, qa), (j, qb) in zip(runs, runs[1:]):
            for key in sorted(set(qa) & set(qb)):
                (va, sa), (vb, sb) = qa[key], qb[key]
                try:
                    va, sa, vb, sb = map(float, (va, sa, vb, sb))
                except ValueError:
                    continue
                s = math.hypot(sa, sb)
                if not (math.isfinite(va) and math.isfinite(vb)):
                    continue
                z = abs(va - vb) / s if s > 0 else (0.0 if va == vb else math.inf)
                lines.append(f"- runs {i}/{j} {' '.join(key)}: |diff| = {z:.2f} combined stderr ({'agree' if z <= 3 else 'DISAGREE'})")
    lines += ["", "## Verdicts", ""] + [f"- {v}" for v in verdicts]
    lines += ["", "## Flags", ""] + [f"- {f}" for f in flags]
    lines += ["", "## Missing files", ""] + [f"- {m}" for m in missing]
    return "\n".join(lines) + "\n"

