"""Batch experiments: configuration, replicate runs, trace files and the summary report.

Output layout under ``output_dir``::

    datasets/rep_000.json                one simulated dataset per replicate
    traces/<label>/rep_000.csv           iter,obj,theta_1..theta_p,locked_mask
    traces/<label>/rep_000.error         present only if the run failed
    series/<label>__theta_<j>.csv        replicate,iter,value for each true zero j
    report.json, report.csv

The report is always rebuilt from the files on disk, so ``estimate`` and
``report`` produce the same bytes.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np

from .model import estimate_mse
from .penalty import PenaltySpec
from .simulator import SimConfig, load_dataset, save_dataset, simulate
from .smoother import grid_for_profile
from .solvers import SolverError, SolverOptions, default_init, run_estimator

logger = logging.getLogger(__name__)

OBJECTIVE_NOTE = (
    "obj is log p(y|theta) for ml_em and log p(y|theta) + log p(theta) for map_em and ecm_cd; "
    "the prior sum runs over unlocked coordinates and uses weight tau^-q for every lq method, "
    "so ecm_cd is scored on the same MAP objective as map_em."
)


class ConfigError(ValueError):
    pass


def _schema(name: str) -> dict:
    return json.loads(resources.files("lqem").joinpath("schemas", name).read_text())


def default_config() -> dict:
    return json.loads(resources.files("lqem").joinpath("configs", "reference.json").read_text())


@dataclass(frozen=True)
class MethodSpec:
    label: str
    options: SolverOptions


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig
    methods: List[MethodSpec]
    replicates: int
    output_dir: Path
    profile: str = "standard"
    seed: int = 0
    raw: Optional[dict] = None


def load_config(path=None) -> dict:
    if path is None:
        return default_config()
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return doc


def parse_config(doc: dict, **overrides) -> ExperimentConfig:
    """Validate a config document; non-None ``overrides`` replace top-level scalar keys."""
    doc = copy.deepcopy(doc)
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    try:
        jsonschema.validate(doc, _schema("config.schema.json"))
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc

    sim_doc = dict(doc.get("sim", {}))
    if "theta_true" in sim_doc:
        sim_doc["theta_true"] = tuple(sim_doc["theta_true"])
        sim_doc.setdefault("p", len(sim_doc["theta_true"]))
    seed = doc.get("seed", 0)
    profile = doc.get("profile", "standard")
    try:
        sim = SimConfig(seed=seed, **sim_doc)
        grid = grid_for_profile(sim.latent(), profile)
        base_solver = doc.get("solver", {})
        methods = []
        for i, m in enumerate(doc["methods"]):
            pen = PenaltySpec(**m.get("penalty", {}))
            opts = SolverOptions(method=m["method"], penalty=pen, grid=grid,
                                 seed=seed, **{**base_solver, **m.get("solver", {})})
            methods.append(MethodSpec(m.get("label", f"{m['method']}_{i}"), opts))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    labels = [m.label for m in methods]
    if len(set(labels)) != len(labels):
        raise ConfigError("method labels must be unique")
    return ExperimentConfig(sim, methods, doc.get("replicates", 1),
                            Path(doc.get("output_dir", "lqem-out")), profile, seed, doc)


def replicate_sim(cfg: ExperimentConfig, i: int) -> SimConfig:
    return replace(cfg.sim, seed=cfg.seed + i)


def dataset_path(out: Path, i: int) -> Path:
    return out / "datasets" / f"rep_{i:03d}.json"


def trace_path(out: Path, label: str, i: int) -> Path:
    return out / "traces" / label / f"rep_{i:03d}.csv"


def write_datasets(cfg: ExperimentConfig) -> List[Path]:
    paths = []
    for i in range(cfg.replicates):
        path = dataset_path(cfg.output_dir, i)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(simulate(replicate_sim(cfg, i)), path)
        paths.append(path)
    return paths


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trace_to_csv(trace) -> str:
    p = trace.initial.p
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "obj"] + [f"theta_{j + 1}" for j in range(p)] + ["locked_mask"])
    for i, (est, obj) in enumerate(zip(trace.iterates, trace.objectives), start=1):
        w.writerow([i, _fmt(obj)] + [_fmt(t) for t in est.theta] + [est.locked_mask_string()])
    return buf.getvalue()


def read_trace_csv(path):
    """Parse a trace file into ``(iters, objectives, thetas, masks)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    p = len(header) - 3
    iters = np.array([int(r[0]) for r in body], dtype=int)
    objs = np.array([float(r[1]) for r in body])
    thetas = np.array([[float(v) for v in r[2:2 + p]] for r in body]).reshape(len(body), p)
    masks = [r[-1] for r in body]
    return iters, objs, thetas, masks


def _run_replicate(args):
    """Run every method on one replicate and write its trace files."""
    cfg, i = args
    out = cfg.output_dir
    path = dataset_path(out, i)
    ds = load_dataset(path) if path.exists() else simulate(replicate_sim(cfg, i))
    grid = cfg.methods[0].options.grid
    try:
        init = default_init(ds.spec, grid)
    except SolverError as exc:
        init, init_error = None, exc
    for m in cfg.methods:
        tpath = trace_path(out, m.label, i)
        tpath.parent.mkdir(parents=True, exist_ok=True)
        err = tpath.with_suffix(".error")
        try:
            if init is None:
                raise init_error
            trace = run_estimator(ds.spec, init, m.options)
            if err.exists():
                err.unlink()
        except SolverError as exc:
            trace = exc.trace
            err.write_text(f"{type(exc).__name__}: {exc}\n")
        tpath.write_text(trace_to_csv(trace) if trace is not None else "")
    return i


def run_replicates(cfg: ExperimentConfig, jobs: int = 1) -> None:
    tasks = [(cfg, i) for i in range(cfg.replicates)]
    if jobs <= 1:
        for t in tasks:
            _run_replicate(t)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        list(pool.map(_run_replicate, tasks))


def zero_exit(values: np.ndarray, eps: float) -> bool:
    """True when a series enters ``[-eps, eps]`` and later leaves it."""
    inside = np.abs(values) <= eps
    if not inside.any():
        return False
    first = int(np.argmax(inside))
    return bool((~inside[first:]).any())


def build_report(cfg: ExperimentConfig) -> dict:
    out = cfg.output_dir
    rows = []
    for m in cfg.methods:
        pen = m.options.penalty
        eps = pen.zero_lock_eps
        mses, recovered, iters, exits, failures = [], [], [], 0, []
        for i in range(cfg.replicates):
            theta_true = np.array(replicate_sim(cfg, i).theta_true)
            zeros = np.flatnonzero(theta_true == 0.0)
            tpath = trace_path(out, m.label, i)
            err = tpath.with_suffix(".error")
            if not tpath.exists():
                failures.append({"replicate": i, "error": "missing trace"})
                continue
            if err.exists():
                failures.append({"replicate": i, "error": err.read_text().strip()})
                continue
            _, _, thetas, _ = read_trace_csv(tpath)
            final = thetas[-1]
            mses.append(estimate_mse(final, theta_true))
            recovered.append(bool(np.all(np.abs(final[zeros]) <= eps)))
            iters.append(len(thetas))
            exits += any(zero_exit(thetas[:, j], eps) for j in zeros)
        ok = len(mses)
        rows.append({
            "label": m.label,
            "method": m.options.method,
            "family": pen.family,
            "q": pen.q if pen.family == "lq" else None,
            "tau": pen.tau if pen.active else None,
            "median_mse": float(np.median(mses)) if ok else None,
            "zero_recovery_rate": float(np.mean(recovered)) if ok else None,
            "mean_iterations": float(np.mean(iters)) if ok else None,
            "zero_exit_replicates": int(exits),
            "succeeded": ok,
            "failures": failures,
        })
    report = {"replicates": cfg.replicates, "profile": cfg.profile,
              "objective_note": OBJECTIVE_NOTE, "rows": rows}
    jsonschema.validate(report, _schema("report.schema.json"))
    return report


REPORT_COLUMNS = ["label", "method", "family", "q", "tau", "median_mse",
                  "zero_recovery_rate", "mean_iterations", "zero_exit_replicates",
                  "succeeded", "failed"]


def report_to_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in report["rows"]:
        vals = {**r, "failed": len(r["failures"])}
        w.writerow(["" if vals[c] is None else (_fmt(vals[c]) if isinstance(vals[c], float)
                                                 else vals[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def write_report(cfg: ExperimentConfig) -> dict:
    report = build_report(cfg)
    out = cfg.output_dir
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "report.csv").write_text(report_to_csv(report))
    return report


def write_series(cfg: ExperimentConfig) -> List[Path]:
    """Per-(method, true-zero coordinate) convergence series in tidy format."""
    out = cfg.output_dir
    zeros = np.flatnonzero(np.array(cfg.sim.theta_true) == 0.0)
    paths = []
    (out / "series").mkdir(parents=True, exist_ok=True)
    for m in cfg.methods:
        series = {j: [] for j in zeros}
        for i in range(cfg.replicates):
            tpath = trace_path(out, m.label, i)
            if not tpath.exists() or tpath.stat().st_size == 0:
                continue
            iters, _, thetas, _ = read_trace_csv(tpath)
            for j in zeros:
                series[j].extend((i, int(k), _fmt(v)) for k, v in zip(iters, thetas[:, j]))
        for j in zeros:
            path = out / "series" / f"{m.label}__theta_{j + 1}.csv"
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["replicate", "iter", "value"])
            w.writerows(series[j])
            path.write_text(buf.getvalue())
            paths.append(path)
    return paths


def write_svg(cfg: ExperimentConfig, replicate: int = 0) -> List[Path]:
    """Line charts of each true-zero coordinate per iteration, one line per method."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "lqem"
    out = cfg.output_dir
    zeros = np.flatnonzero(np.array(cfg.sim.theta_true) == 0.0)
    paths = []
    for j in zeros:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for m in cfg.methods:
            tpath = trace_path(out, m.label, replicate)
            if not tpath.exists() or tpath.stat().st_size == 0:
                continue
            iters, _, thetas, _ = read_trace_csv(tpath)
            ax.plot(iters, thetas[:, j], label=m.label)
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_xlabel("iteration")
        ax.set_ylabel(f"theta_{j + 1}")
        ax.legend(fontsize=8)
        path = out / "series" / f"theta_{j + 1}_rep{replicate:03d}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def all_failed_method(report: dict) -> Optional[str]:
    for r in report["rows"]:
        if r["succeeded"] == 0:
            return r["label"]
    return None
