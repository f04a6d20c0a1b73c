"""``rdctl``: command-line front end.

    rdctl <simulate|make-target|optimize|gradcheck|render|metrics>
          --config run.toml [--set key=value ...] [--deterministic | --fast]

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 check failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
import traceback
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import CostSpec, ReducedProblem, gradcheck
from .config import ConfigError, RunConfig, load_config
from .fieldio import FieldFormatError, read_rdf, write_json, write_rdf, write_trajectory_archive
from .forward import ControlField, TimeGrid, make_initial_condition, make_target, simulate
from .grid import GridMismatchError, SolverError, SpeciesState, set_deterministic
from .metrics import metrics_report, format_table
from .model import nodal_lefty_preset
from .optim import optimize
from .render import render_heatmap

log = logging.getLogger("rdctl")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4


class CheckFailed(Exception):
    pass


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects timings and artifacts; writes ``manifest.json`` at the end."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.t0 = time.time()
        self.timings: dict[str, float] = {}
        self.artifacts: dict[str, str] = {}
        self.result: dict = {}
        out.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def phase(self, name):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - t

    def artifact(self, path: Path) -> Path:
        self.artifacts[str(path.relative_to(self.out))] = sha256_file(path)
        return path

    def manifest(self, status: str, error: dict | None = None) -> dict:
        return {
            "command": self.command,
            "status": status,
            "error": error,
            "code_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "config": self.cfg.raw,
            "deterministic": self.cfg.deterministic,
            "started": self.t0,
            "wall_clock": time.time() - self.t0,
            "timings": self.timings,
            "artifacts": dict(sorted(self.artifacts.items())),
            "result": self.result,
        }

    def finish(self, status="ok", error=None):
        write_json(self.out / "manifest.json", self.manifest(status, error))


def _initial_state(cfg: RunConfig) -> SpeciesState:
    ini = cfg.initial
    if ini.get("file"):
        st = read_rdf(cfg.resolve(ini["file"]))
        if st.grid.shape != cfg.grid.shape:
            raise GridMismatchError("initial state file does not match the configured grid")
        return SpeciesState(cfg.grid, st.values, cfg.model.names, 0.0)
    st = make_initial_condition(cfg.grid, int(ini["seed"]), float(ini["low"]), float(ini["high"]),
                                float(ini["blob_scale"]), cfg.model.n, int(ini["passes"]), cfg.model.names)
    if ini.get("settle_T"):
        st = make_target(cfg.model, st, TimeGrid.fit(float(ini["settle_T"]), cfg.time_grid.dt),
                         cfg.checkpoint_stride).state
        st.time = 0.0
    return st


def _zero_control(cfg: RunConfig) -> ControlField:
    return ControlField.zeros(cfg.grid, cfg.model.n, cfg.time_grid, cfg.control_stride, cfg.lower, cfg.upper)


def _target_state(cfg: RunConfig) -> SpeciesState:
    if cfg.target_path is None:
        raise ConfigError("a target field file is required", "cost.target")
    path = cfg.resolve(cfg.target_path)
    if not path.exists():
        raise ConfigError(f"target file {path} does not exist", "cost.target")
    st = read_rdf(path)
    if st.values.shape != (cfg.model.n,) + cfg.grid.shape:
        raise GridMismatchError(f"target {path} has shape {st.values.shape}")
    return st


def cmd_simulate(cfg: RunConfig, run: Run) -> int:
    with run.phase("initial"):
        y0 = _initial_state(cfg)
    with run.phase("simulate"):
        traj = simulate(cfg.model, y0, _zero_control(cfg), cfg.time_grid, cfg.checkpoint_stride)
    with run.phase("write"):
        archive = write_trajectory_archive(run.out / "trajectory", traj, seed=cfg.initial.get("seed"))
        for f in archive["files"] + ["manifest.json"]:
            run.artifact(run.out / "trajectory" / f)
        write_rdf(run.out / "final.rdf", traj.final_state())
        run.artifact(run.out / "final.rdf")
    run.result = {"final_max": traj.final.reshape(cfg.model.n, -1).max(axis=1).tolist(),
                  "monitor_violations": len(traj.violations),
                  "clamped_cells": int(traj.clamp_count.sum()),
                  "trajectory_hash": hashlib.sha256(
                      b"".join(traj.checkpoints[k].tobytes() for k in sorted(traj.checkpoints))).hexdigest()}
    return EXIT_OK


def cmd_make_target(cfg: RunConfig, run: Run) -> int:
    t = cfg.target
    model = nodal_lefty_preset(float(t["alpha_n"]), float(t["alpha_l"])) \
        if cfg.raw["model"].get("preset") else cfg.model
    ini = dict(cfg.initial, seed=t["seed"], settle_T=0.0)
    y0 = make_initial_condition(cfg.grid, int(ini["seed"]), float(ini["low"]), float(ini["high"]),
                                float(ini["blob_scale"]), model.n, int(ini["passes"]), model.names)
    with run.phase("simulate"):
        res = make_target(model, y0, TimeGrid.fit(float(t["T_pattern"]), cfg.time_grid.dt),
                          cfg.checkpoint_stride)
    path = run.out / "target.rdf"
    write_rdf(path, res.state)
    run.artifact(path)
    vals = res.state.values
    cv = (vals.reshape(model.n, -1).std(axis=1) / np.maximum(vals.reshape(model.n, -1).mean(axis=1), 1e-300))
    run.result = {"alpha_n": t["alpha_n"], "alpha_l": t["alpha_l"], "seed": t["seed"],
                  "T_pattern": t["T_pattern"], "steadiness_residual": res.steadiness,
                  "cv": dict(zip(model.names, cv.tolist())),
                  "monitor_violations": len(res.trajectory.violations)}
    log.info("target written to %s (steadiness %.3e 1/h)", path, res.steadiness)
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, run: Run) -> int:
    target = _target_state(cfg)
    with run.phase("initial"):
        y0 = _initial_state(cfg)
    problem = ReducedProblem(cfg.model, cfg.grid, y0, cfg.time_grid, CostSpec(cfg.mu, cfg.lam, target),
                             cfg.checkpoint_stride)
    tel_path = run.out / "telemetry.jsonl"
    with run.phase("optimize"), open(tel_path, "w") as tel:
        res = optimize(problem, _zero_control(cfg), cfg.optim, telemetry=tel)
    run.artifact(tel_path)
    np.save(run.out / "control.npy", res.control.values)
    run.artifact(run.out / "control.npy")
    np.save(run.out / "gradient.npy", res.gradient)
    run.artifact(run.out / "gradient.npy")
    write_rdf(run.out / "final.rdf", res.final_state)
    run.artifact(run.out / "final.rdf")
    summary = res.summary()
    write_json(run.out / "result.json", {**summary, "J_history": res.J_history,
                                          "stat_history": res.stat_history})
    run.artifact(run.out / "result.json")
    run.result = summary
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, run: Run) -> int:
    gc = cfg.gradcheck
    rng = np.random.default_rng(int(gc["seed"]))
    y0 = _initial_state(cfg)
    if cfg.target_path is not None:
        target = _target_state(cfg).values
    else:
        target = rng.uniform(0.0, float(cfg.initial["high"]), y0.values.shape)
    problem = ReducedProblem(cfg.model, cfg.grid, y0, cfg.time_grid, CostSpec(cfg.mu, cfg.lam, target),
                             cfg.checkpoint_stride)
    u = _zero_control(cfg)
    lo, hi = np.broadcast_to(u.lower, u.values.shape), np.broadcast_to(u.upper, u.values.shape)
    u = u.with_values(lo + (hi - lo) * rng.uniform(0.1, 0.9, u.values.shape))
    with run.phase("gradcheck"):
        report = gradcheck(problem, u, int(gc["n_dirs"]), tuple(gc["eps"]), int(gc["seed"]) + 1,
                           float(gc["tol"]), float(gc["duality_tol"]))
    write_json(run.out / "gradcheck.json", report.to_dict())
    run.artifact(run.out / "gradcheck.json")
    run.result = {"passed": report.passed, "min_errors": report.min_errors, "duality": report.duality}
    if not report.passed:
        raise CheckFailed(f"gradcheck failed: min errors {report.min_errors}")
    return EXIT_OK


def cmd_render(cfg: RunConfig, run: Run) -> int:
    r = cfg.render
    if r.get("archive"):
        return _render_archive(cfg, run)
    if not r.get("field"):
        raise ConfigError("no field file given", "render.field")
    state = read_rdf(cfg.resolve(r["field"]))
    compare = read_rdf(cfg.resolve(r["compare"])) if r.get("compare") else None
    species = [r["species"]] if r.get("species") else list(state.names)
    for sp in species:
        name = r["out"] if (r.get("out") and len(species) == 1) else f"{Path(r['field']).stem}_{sp}.png"
        out = run.out / name
        render_heatmap(state, sp, out, int(r["upscale"]), compare)
        run.artifact(out)
    return EXIT_OK


def _render_archive(cfg: RunConfig, run: Run) -> int:
    """Render every ``snapshot_stride``-th stored step of a trajectory archive."""
    r = cfg.render
    src = cfg.resolve(r["archive"])
    stride = int(r.get("snapshot_stride") or 1)
    if stride < 1:
        raise ConfigError("must be a positive integer", "render.snapshot_stride")
    files = json.loads((src / "manifest.json").read_text())["files"]
    for fname in files:
        step = int(fname.split("_")[1].split(".")[0])
        if step % stride:
            continue
        state = read_rdf(src / fname)
        species = [r["species"]] if r.get("species") else list(state.names)
        for sp in species:
            out = run.out / f"{Path(fname).stem}_{sp}.png"
            render_heatmap(state, sp, out, int(r["upscale"]))
            run.artifact(out)
    return EXIT_OK


def cmd_metrics(cfg: RunConfig, run: Run) -> int:
    m = cfg.metrics
    if not m.get("achieved") or not m.get("target"):
        raise ConfigError("both metrics.achieved and metrics.target are required", "metrics")
    achieved = read_rdf(cfg.resolve(m["achieved"]))
    target = read_rdf(cfg.resolve(m["target"]))
    report = metrics_report(achieved, target)
    write_json(run.out / "metrics.json", report)
    run.artifact(run.out / "metrics.json")
    print(format_table(report))
    run.result = report
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "make-target": cmd_make_target,
    "optimize": cmd_optimize,
    "gradcheck": cmd_gradcheck,
    "render": cmd_render,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdctl", description="Optimal control of reaction-diffusion patterns")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", "-c", type=Path, help="TOML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set cost.lam=1e-6 (repeatable)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    mode.add_argument("--fast", dest="deterministic", action="store_false")
    p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"output.dir={json.dumps(str(args.out))}")
    if args.deterministic is not None:
        overrides.append(f"deterministic={'true' if args.deterministic else 'false'}")
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, FileNotFoundError, FieldFormatError, GridMismatchError) as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    set_deterministic(cfg.deterministic)
    out = cfg.output_dir
    run = Run(args.command, cfg, out)
    try:
        code = COMMANDS[args.command](cfg, run)
    except (ConfigError, FieldFormatError, GridMismatchError, FileNotFoundError, KeyError) as exc:
        return _fail(run, "config", exc, EXIT_CONFIG)
    except CheckFailed as exc:
        run.finish("failed", {"class": "check", "message": str(exc)})
        print(json.dumps({"error": "check", "message": str(exc)}), file=sys.stderr)
        return EXIT_CHECK
    except (SolverError, FloatingPointError, ArithmeticError, ValueError) as exc:
        return _fail(run, "solver", exc, EXIT_SOLVER)
    run.finish("ok")
    return code


def _fail(run: Run, cls: str, exc: Exception, code: int) -> int:
    err = {"class": cls, "type": type(exc).__name__, "message": str(exc),
           "traceback": traceback.format_exc(limit=5)}
    run.finish("failed", err)
    print(json.dumps({"error": cls, "message": str(exc)}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
