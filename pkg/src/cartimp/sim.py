"""Closed-loop simulation of the impedance controller on the rigid-body model.

A scenario is a JSON document with top-level keys ``robot``, ``chain``,
``initial_state``, ``controller``, ``events`` and ``sim``; see
``docs/scenario.md`` for the schema. All quantities are SI, angles in radians,
quaternions ``(w, x, y, z)``.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .controller import (
    CartesianImpedanceController,
    ControllerTargets,
    ImpedanceGains,
    JointTrajectory,
    SafetyLimits,
    critical_damping,
    trajectory_target,
)
from .dynamics import DEFAULT_GRAVITY, JointState, forward_step, gravity_torques
from .errors import CartImpError, NonFiniteStateError, ScenarioError, WindowTooLongError
from .kinematics import CartesianPose, chain_frames, jacobian_from_frames
from .model import extract_chain, load_robot_description, parse_robot_description
from .spatial import quat_from_rotvec, quat_multiply

log = logging.getLogger(__name__)

EVENT_TYPES = ("pose", "nullspace", "wrench", "gains", "trajectory", "external_wrench")


def builtin_robot(name):
    """Text of a robot description shipped with the package (e.g. ``"panda_like"``)."""
    path = resources.files("cartimp") / "data" / "robots" / f"{name}.urdf"
    if not path.is_file():
        raise FileNotFoundError(f"no built-in robot named {name!r}")
    return path.read_text(encoding="utf-8")


def builtin_scenario_path(name):
    return str(resources.files("cartimp") / "data" / "scenarios" / f"{name}.json")


# --------------------------------------------------------------------------- scenario


@dataclass
class WrenchInterval:
    start: float
    end: float
    wrench: np.ndarray
    frame: str = "base"

    def active(self, t):
        return self.start <= t < self.end


@dataclass
class Wall:
    """One-sided planar spring-damper acting on the tip origin."""

    point: np.ndarray
    normal: np.ndarray
    stiffness: float
    damping: float = 0.0

    def force(self, p, v):
        depth = float(self.normal @ (self.point - p))
        if depth <= 0.0:
            return np.zeros(3)
        magnitude = self.stiffness * depth - self.damping * float(self.normal @ v)
        return max(magnitude, 0.0) * self.normal


@dataclass
class Event:
    t: float
    kind: str
    data: dict


@dataclass
class Scenario:
    robot: str
    chain: object
    q0: np.ndarray
    qdot0: np.ndarray
    controller: dict
    events: list
    wrenches: list
    walls: list
    duration: float
    dt: float
    gravity: np.ndarray
    document: dict = field(default_factory=dict, repr=False)
    base_dir: str = "."


def _num(value, where, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ScenarioError(f"{where} must be finite")
    if positive and value <= 0.0:
        raise ScenarioError(f"{where} must be positive, got {value}")
    return value


def _arr(value, size, where):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value] * size
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where} must be numeric, got {value!r}") from None
    if a.shape != (size,):
        raise ScenarioError(f"{where} must have {size} entries, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ScenarioError(f"{where} must be finite")
    return a


def _section(doc, key, required=True):
    value = doc.get(key)
    if value is None:
        if required:
            raise ScenarioError(f"scenario is missing section '{key}'")
        return {}
    if not isinstance(value, dict):
        raise ScenarioError(f"section '{key}' must be an object")
    return value


def _load_robot_text(spec, base_dir):
    if spec.startswith("builtin:"):
        try:
            return builtin_robot(spec[len("builtin:"):])
        except FileNotFoundError as exc:
            raise ScenarioError(str(exc)) from None
    path = spec if os.path.isabs(spec) else os.path.join(base_dir, spec)
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def load_scenario(source, base_dir=None):
    """Build a :class:`Scenario` from a JSON file path or an already-parsed dict.

    Raises:
        ScenarioError: schema violations.
        OSError: unreadable scenario or robot file.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ScenarioError(f"scenario is not valid JSON: {exc}") from None
        base_dir = base_dir or os.path.dirname(os.path.abspath(source))
    else:
        doc = copy.deepcopy(source)
        base_dir = base_dir or "."
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")

    robot = doc.get("robot")
    if isinstance(robot, dict):
        robot = robot.get("urdf")
    if not isinstance(robot, str):
        raise ScenarioError("'robot' must be a path or 'builtin:<name>'")
    model = parse_robot_description(_load_robot_text(robot, base_dir))
    chain_doc = _section(doc, "chain")
    base = chain_doc.get("base", model.root)
    tip = chain_doc.get("tip")
    if tip is None:
        leaves = model.leaves
        if len(leaves) != 1:
            raise ScenarioError(f"chain.tip is required when the model has several leaves {leaves}")
        tip = leaves[0]
    chain = extract_chain(model, base, tip)
    n = chain.n

    init = _section(doc, "initial_state", required=False)
    q0 = _arr(init.get("q", [0.0] * n), n, "initial_state.q")
    qdot0 = _arr(init.get("qdot", [0.0] * n), n, "initial_state.qdot")

    sim = _section(doc, "sim")
    duration = _num(sim.get("duration"), "sim.duration", positive=True)
    dt = _num(sim.get("dt", 1e-3), "sim.dt", positive=True)
    gravity = _arr(sim.get("gravity", list(DEFAULT_GRAVITY)), 3, "sim.gravity")
    walls = []
    for i, w in enumerate(sim.get("walls", [])):
        normal = _arr(w.get("normal"), 3, f"sim.walls[{i}].normal")
        if np.linalg.norm(normal) == 0.0:
            raise ScenarioError(f"sim.walls[{i}].normal must be non-zero")
        walls.append(Wall(
            _arr(w.get("point"), 3, f"sim.walls[{i}].point"),
            normal / np.linalg.norm(normal),
            _num(w.get("stiffness"), f"sim.walls[{i}].stiffness", positive=True),
            _num(w.get("damping", 0.0), f"sim.walls[{i}].damping"),
        ))

    controller = _section(doc, "controller")
    events, wrenches = [], []
    raw_events = doc.get("events", [])
    if not isinstance(raw_events, list):
        raise ScenarioError("'events' must be a list")
    for i, ev in enumerate(raw_events):
        where = f"events[{i}]"
        if not isinstance(ev, dict) or ev.get("type") not in EVENT_TYPES:
            raise ScenarioError(f"{where}.type must be one of {EVENT_TYPES}")
        if ev["type"] == "external_wrench":
            start = _num(ev.get("start", 0.0), f"{where}.start")
            end = _num(ev.get("end", duration), f"{where}.end")
            frame = ev.get("frame", "base")
            if frame not in ("base", "end_effector"):
                raise ScenarioError(f"{where}.frame must be 'base' or 'end_effector'")
            if not 0.0 <= start <= end:
                raise ScenarioError(f"{where} needs 0 <= start <= end")
            wrenches.append(WrenchInterval(start, end, _arr(ev.get("wrench"), 6, f"{where}.wrench"), frame))
            continue
        t = _num(ev.get("t", 0.0), f"{where}.t")
        if not 0.0 <= t <= duration:
            raise ScenarioError(f"{where}.t must lie in [0, duration]")
        events.append(Event(t, ev["type"], ev))
    events.sort(key=lambda e: e.t)  # stable: same-time events keep file order

    scenario = Scenario(robot, chain, q0, qdot0, controller, events, wrenches, walls,
                        duration, dt, gravity, doc, base_dir)
    # validate the controller block and event payloads up front
    build_controller(scenario)
    for ev in events:
        _event_update(scenario, ev)
    return scenario


# --------------------------------------------------------------------------- controller config


def _cartesian(value, where):
    if isinstance(value, dict):
        return np.concatenate([_arr(value.get("trans", 0.0), 3, f"{where}.trans"),
                               _arr(value.get("rot", 0.0), 3, f"{where}.rot")])
    return _arr(value, 6, where)


def _bounds(value, size, where, default):
    if value is None:
        return default
    if not isinstance(value, dict):
        raise ScenarioError(f"{where} must be an object with 'min' and/or 'max'")
    lo = _arr(value.get("min", default[0]), size, f"{where}.min") if "min" in value else default[0]
    hi = _arr(value.get("max", default[1]), size, f"{where}.max") if "max" in value else default[1]
    return (lo, hi)


def _gains_update(block, n, ratio, ns_ratio, where):
    """Gain matrices (as diagonals) from a ``gains``-style block; missing damping follows the ratio."""
    out = {}
    if "k_ca" in block:
        out["k_ca"] = _cartesian(block["k_ca"], f"{where}.k_ca")
        if "d_ca" not in block:
            out["d_ca"] = critical_damping(out["k_ca"], ratio)
    if "d_ca" in block:
        out["d_ca"] = _cartesian(block["d_ca"], f"{where}.d_ca")
    if "k_ns" in block:
        out["k_ns"] = _arr(block["k_ns"], n, f"{where}.k_ns")
        if "d_ns" not in block:
            out["d_ns"] = critical_damping(out["k_ns"], ns_ratio)
    if "d_ns" in block:
        out["d_ns"] = _arr(block["d_ns"], n, f"{where}.d_ns")
    return out


def _ratios(cfg):
    gains = cfg.get("gains", {})
    ratio = _num(gains.get("damping_ratio", 1.0), "controller.gains.damping_ratio")
    ns_ratio = _num(gains.get("nullspace_damping_ratio", ratio), "controller.gains.nullspace_damping_ratio")
    return ratio, ns_ratio


def _pose_from(block, reference, where):
    """Absolute (``translation``/``orientation``) or relative (``offset``/``rotvec_offset``) pose."""
    t = reference.translation
    q = reference.orientation
    if "translation" in block:
        t = _arr(block["translation"], 3, f"{where}.translation")
    if "orientation" in block:
        q = _arr(block["orientation"], 4, f"{where}.orientation")
    if "offset" in block:
        t = t + _arr(block["offset"], 3, f"{where}.offset")
    if "rotvec_offset" in block:
        q = quat_multiply(quat_from_rotvec(_arr(block["rotvec_offset"], 3, f"{where}.rotvec_offset")), q)
    try:
        return CartesianPose(t, q)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def build_controller(scenario):
    """Instantiate the controller described by ``scenario.controller``."""
    cfg = scenario.controller
    chain = scenario.chain
    n = chain.n
    ratio, ns_ratio = _ratios(cfg)
    gains_doc = cfg.get("gains", {})
    if not isinstance(gains_doc, dict):
        raise ScenarioError("controller.gains must be an object")
    g = {"k_ca": np.zeros(6), "k_ns": np.zeros(n)}
    g.update({k: v for k, v in _gains_update(
        {"k_ca": 0.0, "k_ns": 0.0, **gains_doc}, n, ratio, ns_ratio, "controller.gains").items()})
    gains = ImpedanceGains(np.diag(g["k_ca"]), np.diag(g["d_ca"]), np.diag(g["k_ns"]), np.diag(g["d_ns"]))

    hold = ControllerTargets.hold(chain, scenario.q0)
    tgt = cfg.get("targets", {})
    pose = _pose_from(tgt.get("pose", {}), hold.pose, "controller.targets.pose")
    q_ns = _arr(tgt.get("q_nullspace", hold.q_nullspace), n, "controller.targets.q_nullspace")
    wrench = _arr(tgt.get("wrench", [0.0] * 6), 6, "controller.targets.wrench")

    lim = cfg.get("limits", {})
    defaults = SafetyLimits()
    try:
        limits = SafetyLimits(
            k_ca=_bounds(lim.get("k_ca"), 6, "controller.limits.k_ca", defaults.k_ca),
            d_ca=_bounds(lim.get("d_ca"), 6, "controller.limits.d_ca", defaults.d_ca),
            k_ns=_bounds(lim.get("k_ns"), n, "controller.limits.k_ns", defaults.k_ns),
            d_ns=_bounds(lim.get("d_ns"), n, "controller.limits.d_ns", defaults.d_ns),
            wrench=_bounds(lim.get("wrench"), 6, "controller.limits.wrench", defaults.wrench),
            delta_tau_max=_num(lim.get("delta_tau_max", defaults.delta_tau_max), "controller.limits.delta_tau_max",
                               positive=True),
            clamp_effort=bool(lim.get("clamp_effort", True)),
        )
        filt = cfg.get("filter", {})
        frame = cfg.get("frame", "base")
        if frame not in ("base", "end_effector"):
            raise ScenarioError("controller.frame must be 'base' or 'end_effector'")
        ctrl = CartesianImpedanceController(
            chain, gains, ControllerTargets(pose, q_ns, wrench), limits, dt=scenario.dt,
            filter_fraction=_num(filt.get("p", 0.99), "controller.filter.p"),
            filter_time=_num(filt.get("T", 0.3), "controller.filter.T"),
            frame=frame,
            gravity_feedforward=bool(cfg.get("gravity_feedforward", False)),
            gravity=scenario.gravity,
        )
    except CartImpError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"controller: {exc}") from None
    return ctrl


def _event_update(scenario, ev):
    """Translate a scenario event into controller update keyword arguments."""
    d = ev.data
    where = f"event '{ev.kind}' at t={ev.t}"
    n = scenario.chain.n
    if ev.kind == "pose":
        ref = ControllerTargets.hold(scenario.chain, scenario.q0).pose
        base_pose = _pose_from(scenario.controller.get("targets", {}).get("pose", {}), ref, where)
        return "targets", {"pose": _pose_from(d, base_pose, where)}
    if ev.kind == "nullspace":
        return "targets", {"q_nullspace": _arr(d.get("q"), n, f"{where}.q")}
    if ev.kind == "wrench":
        return "targets", {"wrench": _arr(d.get("wrench"), 6, f"{where}.wrench")}
    if ev.kind == "gains":
        ratio, ns_ratio = _ratios(scenario.controller)
        ratio = _num(d.get("damping_ratio", ratio), f"{where}.damping_ratio")
        return "gains", _gains_update(d, n, ratio, ns_ratio, where)
    if ev.kind == "trajectory":
        wps = d.get("waypoints")
        if not isinstance(wps, list) or not wps:
            raise ScenarioError(f"{where} needs a non-empty 'waypoints' list")
        try:
            traj = JointTrajectory([_num(w.get("t"), f"{where}.t") for w in wps],
                                   [_arr(w.get("q"), n, f"{where}.q") for w in wps])
        except CartImpError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{where}: {exc}") from None
        return "trajectory", {"trajectory": traj}
    raise ScenarioError(f"unknown event type {ev.kind!r}")


# --------------------------------------------------------------------------- logging


@dataclass(frozen=True, eq=False)
class LogRecord:
    t: float
    q: np.ndarray
    qdot: np.ndarray
    pose: np.ndarray  # x, y, z, qw, qx, qy, qz
    pose_error: np.ndarray
    tau_ca: np.ndarray
    tau_ns: np.ndarray
    tau_ext: np.ndarray
    tau_c: np.ndarray
    f_ext: np.ndarray  # applied external wrench, base frame
    f_cmd: np.ndarray  # filtered commanded wrench
    k_ca: np.ndarray  # filtered gain diagonals
    d_ca: np.ndarray
    k_ns: np.ndarray
    d_ns: np.ndarray


_VECTOR_FIELDS = ("q", "qdot", "pose", "pose_error", "tau_ca", "tau_ns", "tau_ext", "tau_c",
                  "f_ext", "f_cmd", "k_ca", "d_ca", "k_ns", "d_ns")
_POSE_NAMES = ("x", "y", "z", "qw", "qx", "qy", "qz")
_SIX = ("x", "y", "z", "rx", "ry", "rz")


def _field_sizes(n):
    six = ("pose_error", "f_ext", "f_cmd", "k_ca", "d_ca")
    return {f: 7 if f == "pose" else 6 if f in six else n for f in _VECTOR_FIELDS}


def log_columns(n):
    cols = ["t"]
    for f, size in _field_sizes(n).items():
        if f == "pose":
            cols += [f"pose_{s}" for s in _POSE_NAMES]
        elif size == 6:
            cols += [f"{f}_{s}" for s in _SIX]
        else:
            cols += [f"{f}_{i}" for i in range(size)]
    return cols


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(records, path_or_file):
    """One header row, one row per record, floats at 17 significant digits."""
    if not records:
        raise ValueError("no records to write")
    n = records[0].q.shape[0]
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(log_columns(n))
        for r in records:
            row = [_fmt(r.t)]
            for f in _VECTOR_FIELDS:
                row += [_fmt(v) for v in getattr(r, f)]
            writer.writerow(row)
    finally:
        if own:
            fh.close()


def read_csv(path_or_file):
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, newline="", encoding="utf-8") if own else path_or_file
    try:
        reader = csv.reader(fh)
        header = next(reader)
        n = sum(1 for c in header if c.startswith("q_") and not c.startswith("qdot"))
        sizes = _field_sizes(n)
        records = []
        for row in reader:
            values = [float(v) for v in row]
            kw = {"t": values[0]}
            i = 1
            for f in _VECTOR_FIELDS:
                kw[f] = np.array(values[i:i + sizes[f]])
                i += sizes[f]
            records.append(LogRecord(**kw))
        return records
    finally:
        if own:
            fh.close()


def record_to_dict(r):
    out = {"t": r.t}
    for f in _VECTOR_FIELDS:
        out[f] = [float(v) for v in getattr(r, f)]
    return out


def write_ndjson(records, path_or_file):
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", encoding="utf-8") if own else path_or_file
    try:
        for r in records:
            fh.write(json.dumps(record_to_dict(r)) + "\n")
    finally:
        if own:
            fh.close()


def read_ndjson(path_or_file):
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, encoding="utf-8") if own else path_or_file
    try:
        records = []
        for line in fh:
            if line.strip():
                d = json.loads(line)
                records.append(LogRecord(t=d["t"], **{f: np.array(d[f], dtype=float) for f in _VECTOR_FIELDS}))
        return records
    finally:
        if own:
            fh.close()


# --------------------------------------------------------------------------- simulation


def _finite(*arrays):
    return all(np.all(np.isfinite(a)) for a in arrays)


def run_scenario(scenario, controller=None):
    """Run the fixed-step closed loop and return one :class:`LogRecord` per step.

    Each step: apply events due at ``t``, compute the command from the state at
    ``t``, add the external wrench ``J^T F``, integrate to ``t + dt``. The log
    is bit-for-bit reproducible for a given scenario.

    Raises:
        NonFiniteStateError: the state diverged; ``exc.record`` is the last
            finite record and ``exc.t`` its time.
    """
    chain = scenario.chain
    ctrl = controller if controller is not None else build_controller(scenario)
    state = JointState(scenario.q0, scenario.qdot0)
    if ctrl.gravity_feedforward:
        # the robot starts out holding itself, as if released from brakes
        ctrl.reset(gravity_torques(chain, state.q, ctrl.gravity))
    steps = int(round(scenario.duration / scenario.dt))
    updates = [(ev.t, _event_update(scenario, ev)) for ev in scenario.events]
    # overflow is reported through NonFiniteStateError, not numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _run(scenario, chain, ctrl, state, steps, updates)


def _run(scenario, chain, ctrl, state, steps, updates):
    dt = scenario.dt
    records = []
    next_event = 0
    trajectory = None
    for k in range(steps):
        t = k * dt
        try:
            while next_event < len(updates) and updates[next_event][0] <= t + 1e-9 * dt:
                ev_t, (kind, kwargs) = updates[next_event]
                if kind == "trajectory":
                    trajectory = (ev_t, kwargs["trajectory"])
                else:
                    ctrl.submit(kind, **kwargs)
                next_event += 1
            if trajectory is not None:
                q_d, pose_d = trajectory_target(trajectory[1], t - trajectory[0], chain)
                ctrl.submit("targets", pose=pose_d, q_nullspace=q_d)

            frames = chain_frames(chain, state.q)
            J = jacobian_from_frames(frames, chain.n)
            pose = CartesianPose.from_matrix(frames.tip_rotation, frames.tip_position)
            out = ctrl.step(state.q, state.qdot, J, pose)

            f_ext = np.zeros(6)
            for w in scenario.wrenches:
                if w.active(t):
                    if w.frame == "end_effector":
                        R = frames.tip_rotation
                        f_ext += np.concatenate([R @ w.wrench[:3], R @ w.wrench[3:]])
                    else:
                        f_ext += w.wrench
            if scenario.walls:
                v = J[:3] @ state.qdot
                for wall in scenario.walls:
                    f_ext[:3] += wall.force(frames.tip_position, v)
            tau_env = J.T @ f_ext

            gains = ctrl.gains
            record = LogRecord(
                t=t, q=state.q, qdot=state.qdot,
                pose=np.concatenate([pose.translation, pose.orientation]),
                pose_error=out.pose_error, tau_ca=out.tau_ca, tau_ns=out.tau_ns, tau_ext=out.tau_ext,
                tau_c=out.tau, f_ext=f_ext, f_cmd=ctrl.wrench.copy(),
                k_ca=np.diag(gains.k_ca).copy(), d_ca=np.diag(gains.d_ca).copy(),
                k_ns=np.diag(gains.k_ns).copy(), d_ns=np.diag(gains.d_ns).copy(),
            )
            records.append(record)
            state = forward_step(chain, state, out.tau, tau_env, scenario.gravity, dt)
        except CartImpError as exc:
            if exc.args and isinstance(exc.args[0], str):
                exc.args = (f"t={t:.6f} s: {exc.args[0]}",) + exc.args[1:]
            exc.t = t
            if isinstance(exc, NonFiniteStateError) and exc.record is None and records:
                exc.record = records[-1]
            raise
        if not _finite(state.q, state.qdot):
            last = records[-1] if records else None
            raise NonFiniteStateError(f"state became non-finite after t={t:.6f} s", t=t, record=last)
    log.debug("ran %d steps of %s", steps, scenario.robot)
    return records


# --------------------------------------------------------------------------- reports


@dataclass
class SteadyStateReport:
    window: float
    samples: int
    mean_pose_error: np.ndarray
    max_abs_pose_error: np.ndarray
    mean_tau: np.ndarray
    max_abs_tau: np.ndarray
    mean_f_ext: np.ndarray

    @property
    def translation_error(self):
        return float(np.linalg.norm(self.mean_pose_error[:3]))

    @property
    def rotation_error(self):
        return float(np.linalg.norm(self.mean_pose_error[3:]))

    def as_dict(self):
        return {
            "window": self.window,
            "samples": self.samples,
            "translation_error": self.translation_error,
            "rotation_error": self.rotation_error,
            "mean_pose_error": self.mean_pose_error.tolist(),
            "max_abs_pose_error": self.max_abs_pose_error.tolist(),
            "mean_tau": self.mean_tau.tolist(),
            "max_abs_tau": self.max_abs_tau.tolist(),
            "mean_f_ext": self.mean_f_ext.tolist(),
        }

    def format(self):
        e = self.mean_pose_error
        lines = [
            f"steady state over last {self.window:g} s ({self.samples} samples)",
            "  mean pose error  " + " ".join(f"{v: .6e}" for v in e),
            f"  |translation err| {self.translation_error:.6e} m",
            f"  |rotation err|    {self.rotation_error:.6e} rad",
            "  mean tau_c       " + " ".join(f"{v: .4f}" for v in self.mean_tau),
            "  max |tau_c|      " + " ".join(f"{v: .4f}" for v in self.max_abs_tau),
            "  mean f_ext       " + " ".join(f"{v: .4f}" for v in self.mean_f_ext),
        ]
        return "\n".join(lines)


def steady_state_report(records, window_s):
    """Mean and peak pose error and torque over the trailing ``window_s`` seconds."""
    if not records:
        raise WindowTooLongError("log is empty")
    dt = records[1].t - records[0].t if len(records) > 1 else 0.0
    span = records[-1].t - records[0].t + dt
    if window_s <= 0.0 or window_s > span * (1.0 + 1e-9):
        raise WindowTooLongError(f"window {window_s} s does not fit a log spanning {span} s")
    count = max(1, int(round(window_s / dt))) if dt > 0.0 else 1
    tail = records[-count:]
    err = np.array([r.pose_error for r in tail])
    tau = np.array([r.tau_c for r in tail])
    fext = np.array([r.f_ext for r in tail])
    return SteadyStateReport(
        window=float(window_s),
        samples=len(tail),
        mean_pose_error=err.mean(axis=0),
        max_abs_pose_error=np.abs(err).max(axis=0),
        mean_tau=tau.mean(axis=0),
        max_abs_tau=np.abs(tau).max(axis=0),
        mean_f_ext=fext.mean(axis=0),
    )


# --------------------------------------------------------------------------- dotted config keys


_VECTOR_BLOCKS = ("trans", "rot")


def _components(key):
    return {"x": 0, "y": 1, "z": 2}.get(key)


def flatten_keys(doc, prefix=""):
    """Dotted paths of every numeric leaf; 3-vectors also expose ``.x/.y/.z``."""
    keys = []
    if isinstance(doc, dict):
        for k, v in doc.items():
            keys += flatten_keys(v, f"{prefix}{k}.")
    elif isinstance(doc, list):
        if len(doc) == 3 and all(isinstance(v, (int, float)) for v in doc):
            keys += [f"{prefix}{c}" for c in "xyz"]
        for i, v in enumerate(doc):
            keys += flatten_keys(v, f"{prefix}{i}.")
    elif isinstance(doc, (int, float)) and not isinstance(doc, bool):
        keys.append(prefix[:-1])
    return keys


def set_dotted(doc, key, value):
    """Return a copy of ``doc`` with the numeric leaf at ``key`` replaced.

    A ``trans``/``rot`` scalar standing for a 3-vector (``"trans": 200``) is
    expanded when a component suffix is addressed. Raises ``KeyError`` for unknown paths.
    """
    doc = copy.deepcopy(doc)
    parts = key.split(".")
    node = doc
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(node, dict):
            if part not in node:
                raise KeyError(key)
            child = node[part]
            if last:
                if isinstance(child, (dict, list)) or isinstance(child, bool):
                    raise KeyError(key)
                node[part] = value
                return doc
            nxt = parts[i + 1]
            if part in _VECTOR_BLOCKS and isinstance(child, (int, float)) and not isinstance(child, bool) \
                    and _components(nxt) is not None and i + 1 == len(parts) - 1:
                child = [child] * 3
                node[part] = child
            node = child
        elif isinstance(node, list):
            idx = _components(part)
            if idx is None:
                try:
                    idx = int(part)
                except ValueError:
                    raise KeyError(key) from None
            if not 0 <= idx < len(node):
                raise KeyError(key)
            if last:
                if isinstance(node[idx], (dict, list)):
                    raise KeyError(key)
                node[idx] = value
                return doc
            node = node[idx]
        else:
            raise KeyError(key)
    raise KeyError(key)


def resolve_parameter(doc, key, value):
    """Apply ``key`` relative to the ``controller`` block first, then to the document root."""
    for candidate in (f"controller.{key}", key):
        try:
            return set_dotted(doc, candidate, value)
        except KeyError:
            continue
    raise KeyError(key)
