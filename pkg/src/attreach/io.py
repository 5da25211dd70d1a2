"""Run configuration parsing and result (de)serialization.

Matrices are written row-major.  JSON floats use Python's shortest
round-trip representation, so values read back bit-identical; CSV uses
``%.17g``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from . import __version__, so3
from .contraction import IntervalMatrix, SearchRegion
from .dynamics import H_MAX, AttitudeSystem, Trajectory, ZeroTorque, damping_law
from .metrics import MetricPair, RotationBall, State
from .reach import ReachConfig, ReachResult, ReachStep, product_ball

_num = {"type": "number"}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_mat9 = {"type": "array", "items": _num, "minItems": 9, "maxItems": 9}
_rotation = {
    "oneOf": [
        _mat9,
        _vec3,
        {
            "type": "object",
            "properties": {"axis_angle": _vec3},
            "required": ["axis_angle"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["inertia", "control_law", "initial", "horizon", "steps"],
    "additionalProperties": False,
    "properties": {
        "inertia": _mat9,
        "control_law": {"type": "string"},
        "initial": {
            "type": "object",
            "required": ["R0", "omega0", "r_rot", "r_omega"],
            "additionalProperties": False,
            "properties": {
                "R0": _rotation,
                "omega0": _vec3,
                "r_rot": {"type": "number", "minimum": 0},
                "r_omega": {"type": "number", "minimum": 0},
            },
        },
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "steps": {"type": "integer", "minimum": 1},
        "line_search": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "c_min": _num,
                "c_max": _num,
                "n_steps": {"type": "integer", "minimum": 1},
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"h_max": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.05}},
        },
        "montecarlo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 0}, "seed": {"type": "integer"}},
        },
        "ball_export": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_samples": {"type": "integer", "minimum": 0}},
        },
        "vertex_cap": {"type": "integer", "minimum": 1},
        "a_bound": {
            "type": "object",
            "required": ["lower", "upper"],
            "additionalProperties": False,
            "properties": {"lower": _mat9, "upper": _mat9},
        },
        "unsafe": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "omega_lo": _vec3,
                "omega_hi": _vec3,
                "rotation": {
                    "type": "object",
                    "required": ["center", "radius"],
                    "additionalProperties": False,
                    "properties": {"center": _rotation, "radius": {"type": "number", "minimum": 0}, "q": _mat9},
                },
            },
        },
    },
}


class ConfigError(ValueError):
    pass


# name -> factory(inertia) -> control law
LAWS: dict[str, Callable] = {
    "zero": lambda inertia: ZeroTorque(),
    "damping": damping_law,
    "paper_sec6": damping_law,
}


def register_law(name: str, factory: Callable) -> None:
    """Make ``factory(inertia)`` available as ``control_law: name`` in run configs."""
    LAWS[name] = factory


def parse_rotation(spec) -> np.ndarray:
    """Rotation from 9 row-major reals, a 3-vector axis-angle, or ``{"axis_angle": [...]}``."""
    if isinstance(spec, dict):
        spec = spec["axis_angle"]
    arr = np.asarray(spec, dtype=float).ravel()
    if arr.size == 3:
        return so3.exp_so3(arr)
    if arr.size == 9:
        # configs carry rounded matrices; snap anything close onto the group
        m = arr.reshape(3, 3)
        if not so3.is_rotation(m, 1e-6):
            raise ConfigError("matrix is not a rotation to within 1e-6")
        try:
            return so3.reorthonormalize(m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError("rotation must be 3 (axis-angle) or 9 (matrix) numbers")


@dataclass(frozen=True)
class RunSettings:
    reach: ReachConfig
    mc_n: int
    mc_seed: int
    ball_samples: int
    unsafe_omega: tuple | None
    unsafe_rotation: RotationBall | None


def _all_finite(obj) -> bool:
    if isinstance(obj, dict):
        return all(_all_finite(v) for v in obj.values())
    if isinstance(obj, list):
        return all(_all_finite(v) for v in obj)
    if isinstance(obj, float):
        return np.isfinite(obj)
    return True


def parse_config(raw: dict) -> RunSettings:
    """Validate a run configuration dict and build the objects it describes.

    Raises:
        ConfigError: on schema violations, non-finite numbers, or inconsistent values.
    """
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    if not _all_finite(raw):
        raise ConfigError("config contains non-finite numbers")
    law_name = raw["control_law"]
    if law_name not in LAWS:
        raise ConfigError(f"unknown control law {law_name!r}; known: {sorted(LAWS)}")
    try:
        inertia = np.asarray(raw["inertia"], dtype=float).reshape(3, 3)
        system = AttitudeSystem(inertia, LAWS[law_name](inertia))
        ini = raw["initial"]
        ball = product_ball(parse_rotation(ini["R0"]), ini["omega0"], ini["r_rot"], ini["r_omega"])
        ls = raw.get("line_search", {})
        c_max = float(ls.get("c_max", 1.0))
        # a lone c_max below the default floor pulls the floor down with it
        c_min = float(ls.get("c_min", min(0.0, c_max)))
        a_bound = None
        if "a_bound" in raw:
            a_bound = IntervalMatrix(raw["a_bound"]["lower"], raw["a_bound"]["upper"])
        cfg = ReachConfig(
            system=system,
            initial=ball,
            horizon=float(raw["horizon"]),
            steps=int(raw["steps"]),
            c_min=c_min,
            c_max=c_max,
            n_rates=int(ls.get("n_steps", 3)),
            h_max=float(raw.get("integrator", {}).get("h_max", H_MAX)),
            vertex_cap=int(raw.get("vertex_cap", 2**15)),
            a_bound=a_bound,
        )
        unsafe = raw.get("unsafe", {})
        u_omega = None
        if "omega_lo" in unsafe or "omega_hi" in unsafe:
            u_omega = (np.asarray(unsafe["omega_lo"], float), np.asarray(unsafe["omega_hi"], float))
        u_rot = None
        if "rotation" in unsafe:
            ur = unsafe["rotation"]
            q = np.asarray(ur.get("q", np.eye(3).ravel()), float).reshape(3, 3)
            u_rot = RotationBall(parse_rotation(ur["center"]), float(ur["radius"]), q)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    mc = raw.get("montecarlo", {})
    return RunSettings(
        cfg,
        int(mc.get("n", 1000)),
        int(mc.get("seed", 0)),
        int(raw.get("ball_export", {}).get("n_samples", 0)),
        u_omega,
        u_rot,
    )


def load_config(path) -> tuple[dict, RunSettings]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return raw, parse_config(raw)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()


# ---- atomic writes -------------------------------------------------------------


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_FLAT_LIST = re.compile(r"\[\s*([^\[\]{}]*?)\s*\]", re.S)


def dumps(obj) -> str:
    """Indented JSON with scalar lists kept on one line."""
    text = json.dumps(obj, indent=1, allow_nan=False)
    return _FLAT_LIST.sub(lambda m: "[" + re.sub(r"\s*\n\s*", " ", m.group(1)) + "]", text)


def write_json_atomic(path, obj) -> None:
    write_text_atomic(path, dumps(obj) + "\n")


def csv_text(header: list[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


# ---- results -------------------------------------------------------------------


def _flat(m) -> list[float]:
    return [float(x) for x in np.asarray(m, dtype=float).ravel()]


def reach_to_json(result: ReachResult, raw_config: dict) -> dict:
    return {
        "metadata": {
            "config_sha256": config_hash(raw_config),
            "version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        },
        "complete": result.complete,
        "error": result.error,
        "steps": [
            {
                "t": float(s.t),
                "R_center": _flat(s.center.r),
                "omega_center": _flat(s.center.omega),
                "Q": _flat(s.metric.q),
                "P": _flat(s.metric.p),
                "r": float(s.radius),
                "c": None if s.rate is None else float(s.rate),
            }
            for s in result.steps
        ],
    }


def regions_to_json(result: ReachResult) -> dict:
    return {
        "regions": [
            {
                "step": i,
                "t0": float(result.steps[i].t),
                "t1": float(result.steps[i + 1].t) if i + 1 < len(result.steps) else None,
                "omega_lo": _flat(reg.omega_lo),
                "omega_hi": _flat(reg.omega_hi),
                "A_lower": _flat(reg.a.lower),
                "A_upper": _flat(reg.a.upper),
                "B_lower": _flat(reg.b.lower),
                "B_upper": _flat(reg.b.upper),
            }
            for i, reg in enumerate(result.regions)
        ]
    }


NOMINAL_HEADER = ["t"] + [f"r{i}{j}" for i in range(1, 4) for j in range(1, 4)] + ["w1", "w2", "w3"]


def nominal_csv(traj: Trajectory) -> str:
    rows = (
        [t] + list(r.ravel()) + list(w)
        for t, r, w in zip(traj.times, traj.rotations, traj.omegas)
    )
    return csv_text(NOMINAL_HEADER, rows)


def read_nominal_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != NOMINAL_HEADER:
        raise ValueError("nominal.csv has an unexpected header")
    data = np.array([[float(x) for x in row] for row in rows[1:]], dtype=float).reshape(-1, 13)
    return Trajectory(data[:, 0], data[:, 1:10].reshape(-1, 3, 3), data[:, 10:13])


def reach_from_json(reach: dict, regions: dict, nominal: Trajectory) -> ReachResult:
    steps = []
    for s in reach["steps"]:
        steps.append(
            ReachStep(
                float(s["t"]),
                State(np.reshape(s["R_center"], (3, 3)), s["omega_center"]),
                MetricPair(np.reshape(s["Q"], (3, 3)), np.reshape(s["P"], (3, 3))),
                float(s["r"]),
                None if s["c"] is None else float(s["c"]),
            )
        )
    regs = [
        SearchRegion(
            r["omega_lo"],
            r["omega_hi"],
            IntervalMatrix(np.reshape(r["A_lower"], (3, 3)), np.reshape(r["A_upper"], (3, 3))),
            IntervalMatrix(np.reshape(r["B_lower"], (3, 3)), np.reshape(r["B_upper"], (3, 3))),
        )
        for r in regions["regions"]
    ]
    return ReachResult(steps, nominal, regs, reach.get("error"))


def load_results(results_dir) -> tuple[dict, RunSettings, ReachResult]:
    d = Path(results_dir)
    raw, settings = load_config(d / "config.json")
    try:
        reach = json.loads((d / "reach.json").read_text())
        regions = json.loads((d / "regions.json").read_text())
        nominal = read_nominal_csv(d / "nominal.csv")
        result = reach_from_json(reach, regions, nominal)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read results: {exc}") from exc
    return raw, settings, result
