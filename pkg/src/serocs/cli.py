"""``serocs`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 domain or file errors, 2 usage errors.  Diagnostics
go to standard error at the level named by ``SEROCS_LOG``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .errors import InputDomainError, SerocsError

log = logging.getLogger("serocs")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}


# ---- overrides --------------------------------------------------------------------------

def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(base: dict, items, allowed: set | None = None) -> dict:
    """Apply ``dotted.key=value`` items to a nested dict; ``allowed`` restricts top-level keys."""
    out = json.loads(json.dumps(base, default=sio._jsonable))
    for item in items or ():
        if "=" not in item:
            raise InputDomainError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        top = allowed if allowed is not None else set(out)
        if parts[0] not in top:
            raise InputDomainError(f"unknown config key {parts[0]!r}; known: {sorted(top)}")
        node = out
        for p in parts[:-1]:
            if node.get(p) is None:
                node[p] = {}
            if not isinstance(node[p], dict):
                raise InputDomainError(f"config key {key!r}: {p!r} is not a section")
            node = node[p]
        node[parts[-1]] = parse_value(value)
    return out


def _dataclass_kw(cls, cfg: dict, what: str) -> dict:
    known = {f.name for f in fields(cls)}
    extra = set(cfg) - known
    if extra:
        raise InputDomainError(f"unknown {what} keys: {sorted(extra)}")
    return cfg


# ---- scenario helpers -------------------------------------------------------------------

def builtin_scenario(name: str):
    from .sim import delivery_scenario, idle_sweep_scenario

    parts = name.split(":")
    if parts[0] == "idle_sweep":
        return idle_sweep_scenario(parts[1] if len(parts) > 1 else "paper")
    if parts[0] == "delivery":
        return delivery_scenario(int(parts[1]) if len(parts) > 1 else 1, parts[2] if len(parts) > 2 else "fast")
    raise InputDomainError(f"unknown built-in scenario {name!r} (idle_sweep[:preset], delivery[:plan[:preset]])")


def load_scenario_arg(spec: str, overrides=()):
    """A scenario file path or ``builtin:<name>``, with ``--set`` overrides applied and validated."""
    from .sim.runtime import _planner_config, _safety_config
    from .sim.scenario import scenario_from_dict, scenario_to_dict

    if spec.startswith("builtin:"):
        cfg = builtin_scenario(spec[len("builtin:"):])
    else:
        cfg = sio.load_scenario(spec)
    if overrides:
        d = scenario_to_dict(cfg)
        d = apply_overrides(d, overrides, allowed=set(d) - {"version"})
        cfg = scenario_from_dict(d)
    try:
        _planner_config(cfg, _safety_config(cfg))
    except TypeError as exc:
        raise InputDomainError(f"scenario: {exc}") from None
    return cfg


def _check_inputs(*paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise InputDomainError(f"{p}: no such file")


def _emit(obj, out=None):
    text = sio.dumps(obj)
    if out:
        sio.write_text(out, text)
    else:
        sys.stdout.write(text)


# ---- subcommands --------------------------------------------------------------------------

def cmd_register(a):
    from .registration.cpd import CpdParams, cpd_register

    _check_inputs(a.source, a.target)
    params = CpdParams(**_dataclass_kw(CpdParams, apply_overrides({}, a.set, {f.name for f in fields(CpdParams)}),
                                       "registration"))
    tf = cpd_register(sio.load_point_cloud(a.source), sio.load_point_cloud(a.target), params)
    sio.save_transform(a.out, tf)
    log.info("registered in %d iterations, |W|_F = %.3g", tf.iterations, np.linalg.norm(tf.W))
    return 0


def cmd_select_target(a):
    from .registration.cpd import CpdParams
    from .registration.grasp import select_target

    _check_inputs(a.source, *a.candidates)
    params = CpdParams(**apply_overrides({}, a.set, {f.name for f in fields(CpdParams)}))
    clouds = [sio.load_point_cloud(p) for p in a.candidates]
    idx, scores = select_target(sio.load_point_cloud(a.source), clouds, params, max_workers=a.workers)
    _emit({"index": int(idx), "path": a.candidates[idx], "scores": [float(s) for s in scores]}, a.out)
    return 0


def cmd_transfer_grasp(a):
    from .registration.grasp import transfer_grasp

    _check_inputs(a.transform, a.grasp)
    g = transfer_grasp(sio.load_transform(a.transform), sio.load_grasp(a.grasp))
    sio.save_grasp(a.out, g)
    return 0


def _windows_from_file(path):
    from .prediction.encoding import TrajectoryWindow

    t, P, plan = sio.load_trajectory_csv(path)
    out = []
    for tt, PP, pid in sio.split_trajectories(t, P, plan):
        dt = float(np.median(np.diff(tt))) if len(tt) > 1 else 0.1
        out.append((TrajectoryWindow(PP, dt), pid))
    return out


def cmd_train_classifier(a):
    from .prediction.classifier import train_plan_classifier
    from .prediction.synthetic import two_plan_dataset

    cfg = apply_overrides({"S": 224, "reg": 1e-3, "pool": 7, "n_per_plan": 50}, a.set)
    if a.data:
        _check_inputs(a.data)
        data = _windows_from_file(a.data)
    else:
        data = two_plan_dataset(np.random.default_rng(a.seed), int(cfg["n_per_plan"]))
    clf = train_plan_classifier(data, S=int(cfg["S"]), reg=float(cfg["reg"]), pool=int(cfg["pool"]))
    sio.save_classifier(a.out, clf)
    return 0


def cmd_classify(a):
    from .prediction.classifier import classify_plan

    _check_inputs(a.model, a.trajectory)
    clf = sio.load_classifier(a.model)
    rows = []
    for i, (w, pid) in enumerate(_windows_from_file(a.trajectory)):
        label, conf = classify_plan(clf, w.prefix(a.prefix) if a.prefix < 1 else w)
        rows.append({"index": i, "plan": label, "confidence": conf, "file_plan_id": pid})
    _emit(rows, a.out)
    return 0


def cmd_train_predictor(a):
    from .prediction.motion import train_nn_offline
    from .prediction.synthetic import constant_velocity_dataset, windows_from_track

    cfg = apply_overrides({"N": 10, "n_h": 40, "epochs": 300, "lr": 5e-3, "batch_size": 128, "n_tracks": 300,
                           "t_s": 1.0 / 15.0}, a.set)
    N = int(cfg["N"])
    if a.data:
        _check_inputs(a.data)
        t, P, plan = sio.load_trajectory_csv(a.data)
        data, t_s = [], None
        for tt, PP, pid in sio.split_trajectories(t, P, plan):
            t_s = t_s or (float(np.median(np.diff(tt))) if len(tt) > 1 else float(cfg["t_s"]))
            data += windows_from_track(PP, N, pid, t_s)
        if not data:
            raise InputDomainError(f"{a.data}: no trajectory is longer than 2N = {2 * N} samples")
    else:
        t_s = float(cfg["t_s"])
        data = constant_velocity_dataset(np.random.default_rng(a.seed), int(cfg["n_tracks"]), N, t_s=t_s)
    model = train_nn_offline(data, n_h=int(cfg["n_h"]), lr=float(cfg["lr"]), epochs=int(cfg["epochs"]),
                             batch_size=int(cfg["batch_size"]), seed=a.seed, t_s=t_s)
    sio.save_predictor(a.out, model)
    return 0


def cmd_predict(a):
    from .prediction.baseline import constant_speed_predictor
    from .prediction.encoding import TrajectoryWindow
    from .prediction.motion import predict_with_uncertainty

    _check_inputs(a.trajectory, a.model)
    windows = _windows_from_file(a.trajectory)
    w, pid = windows[-1]
    if a.model:
        model = sio.load_predictor(a.model)
        if w.N < model.N:
            raise InputDomainError(f"{a.trajectory}: need at least {model.N} samples, got {w.N}")
        pred = predict_with_uncertainty(model, TrajectoryWindow(w.samples[-model.N:], model.t_s),
                                        a.plan if a.plan is not None else pid)
    else:
        pred = constant_speed_predictor(w, a.horizon, a.a_max)
    _emit(sio.prediction_to_dict(pred), a.out)
    return 0


def cmd_plan(a):
    from .planning.cfs import build_problem, cfs_solve
    from .sim.runtime import _planner_config, _safety_config

    cfg = load_scenario_arg(a.scenario, a.set)
    if not cfg.goals:
        raise InputDomainError("scenario has no goal waypoints to plan for")
    pcfg = _planner_config(cfg, _safety_config(cfg))
    pred = human_now = None
    if a.prediction:
        _check_inputs(a.prediction)
        pred = sio.prediction_from_dict(sio.read_json(a.prediction), a.prediction)
        human_now = pred.mean[0]
    plan = cfs_solve(build_problem(pcfg, cfg.start, pred, cfg.goals[0], human_now=human_now))
    sio.save_plan_csv(a.out, plan)
    if a.json:
        sio.save_plan_json(a.json, plan)
    if a.diagnostics:
        sio.save_plan_diagnostics(a.diagnostics, plan)
    log.info("plan cost %.6g after %d iterations", plan.cost, plan.iterations)
    return 0


def _simulate_one(job):
    """Run one scenario and write its log and metrics (batch worker)."""
    from .sim import metrics, run_scenario

    cfg, seed, out, metrics_out = job
    lg = run_scenario(cfg, seed=seed)
    sio.save_simlog(out, lg)
    report = metrics(lg)
    if metrics_out:
        sio.write_json(metrics_out, report)
    return report


def cmd_simulate(a):
    if (a.scenario is None) == (a.batch is None):
        raise _Usage("simulate needs exactly one of --scenario or --batch")
    if a.scenario:
        cfg = load_scenario_arg(a.scenario, a.set)
        if a.preset:
            cfg = cfg.with_preset(a.preset)
        report = _simulate_one((cfg, a.seed, a.out, a.metrics))
        log.info("min separation %.4f", report["min_separation"])
        return 0
    src = Path(a.batch)
    if not src.is_dir():
        raise InputDomainError(f"{src}: not a directory")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for p in sorted(src.glob("*.json")):
        cfg = load_scenario_arg(str(p), a.set)
        if a.preset:
            cfg = cfg.with_preset(a.preset)
        jobs.append((cfg, a.seed, out / f"{p.stem}.csv", out / f"{p.stem}.metrics.json"))
    if not jobs:
        raise InputDomainError(f"{src}: no scenario files")
    with ProcessPoolExecutor(max_workers=a.workers) as pool:
        for (cfg, *_), rep in zip(jobs, pool.map(_simulate_one, jobs)):
            log.info("%s: min separation %.4f", cfg.name, rep["min_separation"])
    return 0


def cmd_metrics(a):
    from .sim import metrics

    _check_inputs(a.log)
    lg = sio.load_simlog(a.log)
    if a.columns:
        lines = ["# t separation phi active u_norm"]
        un = np.linalg.norm(lg.u, axis=1)
        lines += [f"{float(lg.t[k])!r} {float(lg.separation[k])!r} {float(lg.phi[k])!r} {int(lg.active[k])} "
                  f"{float(un[k])!r}"
                  for k in range(len(lg))]
        text = "\n".join(lines) + "\n"
        if a.out:
            sio.write_text(a.out, text)
        else:
            sys.stdout.write(text)
        return 0
    _emit(metrics(lg), a.out)
    return 0


# ---- parser ----------------------------------------------------------------------------------

class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _Usage(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="serocs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"serocs {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        s = sub.add_parser(name, help=help_, description=help_)
        s.set_defaults(func=func)
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="config override (dotted key, JSON value)")
        return s

    s = add("register", cmd_register, "register a source point cloud onto a target (CSV in, JSON out)")
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--out", required=True)

    s = add("select-target", cmd_select_target, "pick the candidate cloud most similar to the source")
    s.add_argument("--source", required=True)
    s.add_argument("--candidates", required=True, nargs="+")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out")

    s = add("transfer-grasp", cmd_transfer_grasp, "carry a grasp pose through a registration transform")
    s.add_argument("--transform", required=True)
    s.add_argument("--grasp", required=True)
    s.add_argument("--out", required=True)

    s = add("train-classifier", cmd_train_classifier, "train the plan classifier (file data or synthetic)")
    s.add_argument("--data", help="trajectory CSV t,x,y,z,plan_id; synthetic two-plan data if omitted")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)

    s = add("classify", cmd_classify, "classify every trajectory in a CSV file")
    s.add_argument("--model", required=True)
    s.add_argument("--trajectory", required=True)
    s.add_argument("--prefix", type=float, default=1.0, help="classify only this leading fraction")
    s.add_argument("--out")

    s = add("train-predictor", cmd_train_predictor, "train the adaptive motion predictor offline")
    s.add_argument("--data", help="trajectory CSV; synthetic constant-velocity tracks if omitted")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)

    s = add("predict", cmd_predict, "predict future human positions from the last trajectory in a CSV")
    s.add_argument("--trajectory", required=True)
    s.add_argument("--model", help="predictor JSON; the constant-speed baseline if omitted")
    s.add_argument("--plan", type=int)
    s.add_argument("--horizon", type=int, default=10)
    s.add_argument("--a-max", type=float, default=0.5)
    s.add_argument("--out")

    s = add("plan", cmd_plan, "plan a trajectory to the first goal of a scenario")
    s.add_argument("--scenario", required=True, help="scenario JSON or builtin:<name>")
    s.add_argument("--prediction", help="prediction JSON for the human occupancy")
    s.add_argument("--out", required=True, help="plan CSV k,t,q...,dq...,u...")
    s.add_argument("--json")
    s.add_argument("--diagnostics")

    s = add("simulate", cmd_simulate, "run the closed loop and write the per-tick log")
    s.add_argument("--scenario", help="scenario JSON or builtin:<name>")
    s.add_argument("--batch", help="directory of scenario JSON files, run concurrently")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--preset", choices=["paper", "fast"])
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True, help="log CSV (or output directory with --batch)")
    s.add_argument("--metrics", help="metrics JSON")

    s = add("metrics", cmd_metrics, "summarize a simulation log")
    s.add_argument("--log", required=True)
    s.add_argument("--columns", action="store_true", help="gnuplot-ready columns instead of JSON")
    s.add_argument("--out")
    return p


def _configure_logging():
    """Route package logs to stderr; return the previous logger state for restoring."""
    level = os.environ.get("SEROCS_LOG", "warn").lower()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("serocs")
    saved = (list(root.handlers), root.level, root.propagate)
    root.handlers[:] = [handler]
    root.setLevel(LOG_LEVELS.get(level, logging.WARNING))
    root.propagate = False
    if level not in LOG_LEVELS:
        root.warning("SEROCS_LOG=%r not recognized; using warn", level)
    return saved


def main(argv=None) -> int:
    saved = _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except BrokenPipeError:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except _Usage as exc:
        print(f"serocs: usage error: {exc}", file=sys.stderr)
        return 2
    except (SerocsError, OSError) as exc:
        print(f"serocs: error: {exc}", file=sys.stderr)
        return 1
    finally:
        root = logging.getLogger("serocs")
        root.handlers[:], root.propagate = saved[0], saved[2]
        root.setLevel(saved[1])


if __name__ == "__main__":
    sys.exit(main())
