"""File formats: CSV for point clouds and time series, versioned JSON for structured artifacts.

Floats are written with ``repr`` so every artifact reloads bit-identically.
All writers are atomic (temporary file in the target directory, then rename).
"""
from __future__ import annotations

import contextlib
import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InputDomainError
from .planning.cfs import TrajectoryPlan
from .prediction.classifier import PlanClassifier
from .prediction.encoding import Bounds
from .prediction.motion import AdaptivePredictor
from .prediction.result import PredictionResult
from .registration.cpd import NonRigidTransform, PointCloud, gaussian_gram
from .registration.grasp import GraspPose
from .sim.runtime import SimLog
from .sim.scenario import ScenarioConfig, scenario_from_dict, scenario_to_dict

FORMAT_VERSION = 1


class FileFormatError(InputDomainError):
    """Malformed input file; the message carries ``path:line:column``."""

    def __init__(self, path, line, col, message):
        super().__init__(f"{path}:{line}:{col}: {message}")
        self.path, self.line, self.col = str(path), line, col


# ---- atomic output -------------------------------------------------------------------

@contextlib.contextmanager
def atomic_open(path, mode: str = "w", **kw):
    """Open a temporary sibling of ``path`` and rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    with atomic_open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, default=_jsonable, indent=1) + "\n"


def write_json(path, obj) -> None:
    write_text(path, dumps(obj))


def read_json(path) -> dict:
    path = Path(path)
    text = _read(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(path, exc.lineno, exc.colno, exc.msg) from None


def _read(path) -> str:
    path = Path(path)
    if not path.is_file():
        raise InputDomainError(f"{path}: no such file")
    try:
        return path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FileFormatError(path, 1, exc.start + 1, "not UTF-8") from None


def _versioned(d, path, kind: str, required: bool = True) -> dict:
    if not isinstance(d, dict):
        raise FileFormatError(path, 1, 1, "expected a JSON object")
    v = d.get("version")
    if v is None and not required:
        return d
    if v != FORMAT_VERSION:
        raise InputDomainError(f"{path}: unsupported {kind} version {v!r}")
    if d.get("kind", kind) != kind:
        raise InputDomainError(f"{path}: expected a {kind} file, got {d.get('kind')!r}")
    return d


def _field(d, key, path):
    try:
        return d[key]
    except KeyError:
        raise InputDomainError(f"{path}: missing field {key!r}") from None


# ---- CSV tables ------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def read_numeric_csv(path, min_cols: int = 1, max_cols: int | None = None, header: bool | None = None):
    """Numeric table with an optional header row; returns ``(header or None, rows)``."""
    path = Path(path)
    rows, names = [], None
    reader = csv.reader(io.StringIO(_read(path)))
    for line_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
            continue
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                if not rows and names is None and header is not False:
                    break
                raise FileFormatError(path, line_no, col, f"not a number: {cell!r}") from None
        else:
            if len(vals) < min_cols or (max_cols is not None and len(vals) > max_cols):
                raise FileFormatError(path, line_no, 1, f"expected {min_cols}"
                                      + (f"-{max_cols}" if max_cols and max_cols != min_cols else "")
                                      + f" columns, got {len(vals)}")
            if rows and len(vals) != len(rows[0]):
                raise FileFormatError(path, line_no, 1, "ragged row")
            rows.append(vals)
            continue
        names = [c.strip() for c in row]
    if not rows:
        raise FileFormatError(path, 1, 1, "no data rows")
    return names, np.array(rows)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    write_text(path, buf.getvalue())


# ---- point clouds and grasps -------------------------------------------------------------

def load_point_cloud(path) -> PointCloud:
    _, A = read_numeric_csv(path, 2, 3)
    return PointCloud(A, label=Path(path).stem)


def save_point_cloud(path, cloud) -> None:
    P = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    write_csv(path, ["x", "y", "z"][:P.shape[1]], P)


def grasp_to_dict(g: GraspPose) -> dict:
    return {"version": FORMAT_VERSION, "kind": "grasp", "t": g.t, "R": g.R}


def grasp_from_dict(d, path="<grasp>") -> GraspPose:
    d = _versioned(d, path, "grasp", required=False)
    return GraspPose(_field(d, "t", path), _field(d, "R", path))


def load_grasp(path) -> GraspPose:
    return grasp_from_dict(read_json(path), path)


def save_grasp(path, g: GraspPose) -> None:
    write_json(path, grasp_to_dict(g))


# ---- registration transforms ---------------------------------------------------------------

def transform_to_dict(tf: NonRigidTransform) -> dict:
    return {"version": FORMAT_VERSION, "kind": "transform", "dims": {"M": len(tf.source), "D": tf.dim},
            "source": tf.source.points, "beta": tf.beta, "W": tf.W, "sigma2": tf.sigma2,
            "objective_trace": list(tf.objective_trace), "converged": tf.converged, "iterations": tf.iterations}


def transform_from_dict(d, path="<transform>") -> NonRigidTransform:
    d = _versioned(d, path, "transform")
    src = PointCloud(_field(d, "source", path))
    W = np.asarray(_field(d, "W", path), float)
    if W.shape != src.points.shape:
        raise InputDomainError(f"{path}: W shape {W.shape} does not match the source {src.points.shape}")
    beta = float(_field(d, "beta", path))
    return NonRigidTransform(src, beta, W, gaussian_gram(src, beta), float(d.get("sigma2", 0.0)),
                             list(d.get("objective_trace", [])), bool(d.get("converged", True)),
                             int(d.get("iterations", 0)))


def load_transform(path) -> NonRigidTransform:
    return transform_from_dict(read_json(path), path)


def save_transform(path, tf: NonRigidTransform) -> None:
    write_json(path, transform_to_dict(tf))


# ---- trajectories ---------------------------------------------------------------------------

def load_trajectory_csv(path):
    """Rows ``t,x,y,z,plan_id``; returns ``(t, positions (n, 3), plan_ids)``."""
    _, A = read_numeric_csv(path, 5, 5)
    plan = A[:, 4]
    if np.any(plan != np.round(plan)):
        raise InputDomainError(f"{path}: plan_id must be an integer")
    return A[:, 0], A[:, 1:4], plan.astype(int)


def save_trajectory_csv(path, t, positions, plan_ids) -> None:
    t = np.asarray(t, float)
    P = np.asarray(positions, float).reshape(-1, 3)
    ids = np.broadcast_to(np.asarray(plan_ids, int), t.shape)
    write_csv(path, ["t", "x", "y", "z", "plan_id"], [[a, *p, int(i)] for a, p, i in zip(t, P, ids)])


def split_trajectories(t, P, plan):
    """Split a stacked trajectory table wherever time stops increasing or the plan id changes."""
    cuts = np.flatnonzero((np.diff(t) <= 0) | (np.diff(plan) != 0)) + 1
    return [(t[a:b], P[a:b], int(plan[a])) for a, b in zip(np.r_[0, cuts], np.r_[cuts, len(t)])]


# ---- learned models --------------------------------------------------------------------------

def _matrix_entry(X: np.ndarray):
    n = X.shape[0]
    s = float(X[0, 0]) if n else 0.0
    if X.shape == (n, n) and np.array_equal(X, s * np.eye(n)):
        return {"scaled_identity": s, "n": n}
    return X


def _matrix_from_entry(e) -> np.ndarray:
    if isinstance(e, dict):
        return float(e["scaled_identity"]) * np.eye(int(e["n"]))
    return np.asarray(e, float)


def predictor_to_dict(m: AdaptivePredictor) -> dict:
    return {"version": FORMAT_VERSION, "kind": "predictor", "dims": {"N": m.N, "n_h": m.n_h},
            "U": m.U, "theta_hat": m.theta_hat, "X_theta": _matrix_entry(m.X_theta), "var_w": m.var_w,
            "d_theta": m.d_theta, "rho": m.rho, "t_s": m.t_s, "loss_trace": list(m.loss_trace),
            "psd_clamps": m.psd_clamps}


def predictor_from_dict(d, path="<predictor>") -> AdaptivePredictor:
    d = _versioned(d, path, "predictor")
    U = np.asarray(_field(d, "U", path), float)
    dims = d.get("dims", {})
    N, n_h = (U.shape[0] - 2) // 3, U.shape[1]
    if dims and (dims.get("N") != N or dims.get("n_h") != n_h):
        raise InputDomainError(f"{path}: dims {dims} do not match U {U.shape}")
    P = 3 * N * n_h
    theta = np.asarray(_field(d, "theta_hat", path), float)
    X = _matrix_from_entry(_field(d, "X_theta", path))
    var_w = np.asarray(_field(d, "var_w", path), float)
    d_theta = np.asarray(d.get("d_theta", np.zeros(P)), float)
    if theta.shape != (P,) or X.shape != (P, P) or var_w.shape != (3 * N, 3 * N) or d_theta.shape != (P,):
        raise InputDomainError(f"{path}: predictor arrays have inconsistent shapes")
    return AdaptivePredictor(U, theta, X, var_w, d_theta, float(d.get("rho", 1e-6)), float(d.get("t_s", 0.1)),
                             list(d.get("loss_trace", [])), int(d.get("psd_clamps", 0)))


def load_predictor(path) -> AdaptivePredictor:
    return predictor_from_dict(read_json(path), path)


def save_predictor(path, m: AdaptivePredictor) -> None:
    write_json(path, predictor_to_dict(m))


def classifier_to_dict(c: PlanClassifier) -> dict:
    return {"version": FORMAT_VERSION, "kind": "classifier", "bounds": {"lo": c.bounds.lo, "hi": c.bounds.hi},
            "S": c.S, "pool": c.pool, "weights": c.weights, "bias": c.bias, "classes": c.classes,
            "reg": c.reg, "loss_trace": list(c.loss_trace)}


def classifier_from_dict(d, path="<classifier>") -> PlanClassifier:
    d = _versioned(d, path, "classifier")
    b = _field(d, "bounds", path)
    arr = (lambda k, t=float: None if d.get(k) is None else np.asarray(d[k], t))
    clf = PlanClassifier(Bounds(b["lo"], b["hi"]), int(d.get("S", 224)), int(d.get("pool", 7)),
                         arr("weights"), arr("bias"), arr("classes", int), float(d.get("reg", 1e-3)),
                         list(d.get("loss_trace", [])))
    if clf.trained and (clf.weights.shape[1] != clf.K or clf.bias.shape != (clf.K,)):
        raise InputDomainError(f"{path}: classifier weights do not match its classes")
    return clf


def load_classifier(path) -> PlanClassifier:
    return classifier_from_dict(read_json(path), path)


def save_classifier(path, c: PlanClassifier) -> None:
    write_json(path, classifier_to_dict(c))


def prediction_to_dict(p: PredictionResult) -> dict:
    return {"version": FORMAT_VERSION, "kind": "prediction", "mean": p.mean, "msee": p.msee,
            "semi_axes": p.semi_axes, "axes": p.axes, "radii": p.radii, "t_s": p.t_s, "n_sigma": p.n_sigma}


def prediction_from_dict(d, path="<prediction>") -> PredictionResult:
    d = _versioned(d, path, "prediction")
    g = lambda k: np.asarray(_field(d, k, path), float)  # noqa: E731
    return PredictionResult(g("mean"), g("msee"), g("semi_axes"), g("axes"), g("radii"), float(d["t_s"]),
                            float(d.get("n_sigma", 3.0)))


# ---- plans ----------------------------------------------------------------------------------

def plan_to_dict(p: TrajectoryPlan) -> dict:
    return {"version": FORMAT_VERSION, "kind": "plan", "t_s": p.t_s, "q": p.q, "dq": p.dq,
            "controls": p.controls, "cost": p.cost, "iterations": p.iterations, "converged": p.converged,
            "costs": list(p.costs), "diagnostics": [list(r) for r in p.diagnostics]}


def plan_from_dict(d, path="<plan>") -> TrajectoryPlan:
    d = _versioned(d, path, "plan")
    q, dq = np.asarray(_field(d, "q", path), float), np.asarray(_field(d, "dq", path), float)
    u = np.asarray(_field(d, "controls", path), float).reshape(-1, q.shape[1])
    if dq.shape != q.shape or u.shape[0] != q.shape[0] - 1:
        raise InputDomainError(f"{path}: plan arrays have inconsistent shapes")
    return TrajectoryPlan(q, dq, u, float(d["t_s"]), float(d.get("cost", np.nan)), int(d.get("iterations", 0)),
                          bool(d.get("converged", True)), list(d.get("costs", [])),
                          [tuple(r) for r in d.get("diagnostics", [])])


def save_plan_json(path, p: TrajectoryPlan) -> None:
    write_json(path, plan_to_dict(p))


def load_plan_json(path) -> TrajectoryPlan:
    return plan_from_dict(read_json(path), path)


def save_plan_csv(path, p: TrajectoryPlan) -> None:
    """Rows ``k,t,q...,dq...,u...``; the last sample has no control (empty cells)."""
    dof = p.q.shape[1]
    header = ["k", "t"] + [f"q{i}" for i in range(dof)] + [f"dq{i}" for i in range(dof)] + \
        [f"u{i}" for i in range(dof)]
    rows = []
    for k in range(p.N):
        u = list(p.controls[k]) if k < p.N - 1 else [""] * dof
        rows.append([k, k * p.t_s, *p.q[k], *p.dq[k], *u])
    write_csv(path, header, rows)


def save_plan_diagnostics(path, p: TrajectoryPlan) -> None:
    write_csv(path, ["iter", "cost", "step_norm", "active_constraints"], p.diagnostics)


# ---- scenarios ------------------------------------------------------------------------------

def load_scenario(path) -> ScenarioConfig:
    d = read_json(path)
    if not isinstance(d, dict):
        raise FileFormatError(path, 1, 1, "expected a JSON object")
    try:
        return scenario_from_dict(d)
    except TypeError as exc:
        raise InputDomainError(f"{path}: {exc}") from None


def save_scenario(path, cfg: ScenarioConfig) -> None:
    write_json(path, scenario_to_dict(cfg))


# ---- simulation logs ------------------------------------------------------------------------

def _log_header(dof: int):
    v = lambda name: [f"{name}{i}" for i in range(dof)]  # noqa: E731
    return ["t", *v("q"), *v("dq"), "hx", "hy", "hz", "phi", "active", *v("L"), "S", *v("u_o"),
            *v("u_star"), "status", "separation", "events"]


def save_simlog(path, lg: SimLog) -> None:
    """Per-tick CSV preceded by one ``# meta`` line (JSON) and the header row."""
    dof = lg.q.shape[1]
    buf = io.StringIO()
    buf.write("# meta " + json.dumps({"version": FORMAT_VERSION, **lg.meta, "replans": lg.replans},
                                     default=_jsonable, allow_nan=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_log_header(dof))
    for k in range(len(lg)):
        w.writerow([_fmt(x) for x in (lg.t[k], *lg.q[k], *lg.dq[k], *lg.human[k], lg.phi[k], bool(lg.active[k]),
                                      *lg.L[k], lg.S[k], *lg.u_o[k], *lg.u[k])]
                   + [lg.status[k], _fmt(lg.separation[k]), lg.events[k]])
    write_text(path, buf.getvalue())


def load_simlog(path) -> SimLog:
    path = Path(path)
    lines = _read(path).splitlines()
    meta = {}
    if lines and lines[0].startswith("# meta "):
        try:
            meta = json.loads(lines[0][len("# meta "):])
        except json.JSONDecodeError as exc:
            raise FileFormatError(path, 1, exc.colno + len("# meta "), exc.msg) from None
        lines = lines[1:]
        first = 2
    else:
        first = 1
    if meta.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise InputDomainError(f"{path}: unsupported log version {meta.get('version')!r}")
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise FileFormatError(path, first, 1, "missing header row") from None
    dof = sum(1 for h in header if h.startswith("q") and h[1:].isdigit())
    if header != _log_header(dof):
        raise FileFormatError(path, first, 1, "unexpected log columns")
    rows = list(reader)
    if not rows:
        raise FileFormatError(path, first + 1, 1, "no data rows")
    n_num = len(header) - 3
    num = np.empty((len(rows), n_num + 1))
    status, events = [], []
    for i, r in enumerate(rows):
        line = first + 1 + i
        if len(r) != len(header):
            raise FileFormatError(path, line, 1, f"expected {len(header)} columns, got {len(r)}")
        for j, cell in enumerate(r[:n_num] + [r[n_num + 1]]):
            try:
                num[i, j] = float(cell)
            except ValueError:
                col = j + 1 if j < n_num else n_num + 2
                raise FileFormatError(path, line, col, f"not a number: {cell!r}") from None
        status.append(r[n_num])
        events.append(r[n_num + 2])
    c = 0

    def take(k):
        nonlocal c
        out = num[:, c:c + k]
        c += k
        return out

    t = take(1)[:, 0]
    q, dq, hum = take(dof), take(dof), take(3)
    phi, active = take(1)[:, 0], take(1)[:, 0].astype(bool)
    L, S = take(dof), take(1)[:, 0]
    u_o, u = take(dof), take(dof)
    sep = take(1)[:, 0]
    replans = meta.pop("replans", [])
    meta.pop("version", None)
    return SimLog(t, q, dq, hum, phi, active, L, S, u_o, u, status, sep, events, replans, meta)
