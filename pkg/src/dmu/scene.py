"""Scenario description, the modeled/unmodeled state split and scene sampling.

A :class:`ScenarioSpec` lists parametric objects plus two ordered sets of
degrees of freedom: the modeled state ``x`` (what the filter estimates) and
the unmodeled parameters ``z`` (everything else that shapes the image).
Both vectors are plain float64 numpy arrays whose layout is given by the scenario.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import yaml

from .geometry import (
    Pose,
    quat_from_axis_angle,
    quat_from_euler,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    random_quaternion,
)

ROLES = ("target", "obstacle", "background")
SCALAR_PARAMS = ("tx", "ty", "tz", "rx", "ry", "rz", "dx", "dy", "dz", "ex", "ey", "angle")
QUAT_SUFFIXES = ("w", "x", "y", "z")


class ScenarioError(ValueError):
    """Invalid scenario description; ``problems`` lists every offending field."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class BindingError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    width: int = 64
    height: int = 32
    fx: float = 32.0
    fy: float = 32.0
    cx: float = 32.0
    cy: float = 16.0
    max_depth: float = 4.0

    def __post_init__(self):
        problems = []
        if self.width < 8 or self.height < 8:
            problems.append(f"camera: width/height must be >= 8, got {self.width}x{self.height}")
        if self.fx <= 0 or self.fy <= 0:
            problems.append("camera: fx, fy must be > 0")
        if self.max_depth <= 0:
            problems.append("camera: max_depth must be > 0")
        if problems:
            raise ScenarioError(problems)

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float = 90.0, max_depth: float = 4.0) -> Camera:
        """Square pixels, principal point at the image center."""
        f = float(0.5 * width / np.tan(np.radians(hfov_deg) / 2.0))
        return cls(width, height, f, f, width / 2.0, height / 2.0, max_depth)

    def with_resolution(self, width: int, height: int) -> Camera:
        sx, sy = width / self.width, height / self.height
        return Camera(width, height, self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, self.max_depth)

    def ray_directions(self) -> np.ndarray:
        """Camera-frame ray directions through pixel centers, shape (H, W, 3).

        The z component is 1, so the ray parameter of a hit equals its z-depth.
        """
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv, np.ones_like(uu)], axis=-1)


@dataclass(frozen=True)
class Plane:
    extent: tuple = (4.0, 4.0)


@dataclass(frozen=True)
class Box:
    dims: tuple = (0.11, 0.11, 0.06)


@dataclass(frozen=True)
class Articulated:
    """Two boxes joined by one revolute hinge, expressed in the base frame.

    At angle 0 the flap sits at ``flap_offset``; the hinge rotates it about
    ``hinge_axis`` through ``hinge_origin``.
    """

    base: tuple
    flap: tuple
    hinge_axis: tuple
    hinge_origin: tuple
    flap_offset: tuple
    angle_range: tuple = (0.0, np.pi)

    def flap_pose(self, angle: float) -> Pose:
        hinge = Pose(self.hinge_origin)
        turn = Pose(np.zeros(3), quat_from_axis_angle(self.hinge_axis, angle))
        rest = Pose(np.subtract(self.flap_offset, self.hinge_origin))
        return hinge.compose(turn).compose(rest)


Shape = Union[Plane, Box, Articulated]


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    role: str
    shape: Shape
    pose: Pose = field(default_factory=Pose)
    group: str | None = None


@dataclass(frozen=True)
class Dof:
    """One randomizable/modeled parameter of an object (or group, for counts)."""

    name: str
    object: str
    param: str
    range: tuple | None = None
    kind: str = "real"  # real | int | quat
    axis: tuple | None = None  # quat only: sample a rotation about this axis
    default: float | None = None

    @property
    def size(self) -> int:
        return 4 if self.kind == "quat" else 1

    @property
    def names(self) -> list[str]:
        if self.kind == "quat":
            return [self.name + s for s in QUAT_SUFFIXES]
        return [self.name]


@dataclass(frozen=True)
class Primitive:
    """A posed box or plane in the world frame."""

    object_id: str
    part: str
    role: str
    kind: str  # "box" | "plane"
    pose: Pose
    size: tuple


@dataclass(frozen=True)
class SceneInstance:
    camera: Camera
    camera_pose: Pose
    primitives: tuple

    @property
    def object_ids(self) -> set[str]:
        return {p.object_id for p in self.primitives}

    def only(self, object_ids) -> SceneInstance:
        keep = tuple(p for p in self.primitives if p.object_id in set(object_ids))
        return SceneInstance(self.camera, self.camera_pose, keep)

    def without(self, object_ids) -> SceneInstance:
        drop = set(object_ids)
        keep = tuple(p for p in self.primitives if p.object_id not in drop)
        return SceneInstance(self.camera, self.camera_pose, keep)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    camera: Camera
    objects: tuple
    state: tuple
    unmodeled: tuple
    camera_pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "state", tuple(self.state))
        object.__setattr__(self, "unmodeled", tuple(self.unmodeled))
        problems = validate_spec(self)
        if problems:
            raise ScenarioError(problems)

    @property
    def state_names(self) -> list[str]:
        return [n for d in self.state for n in d.names]

    @property
    def unmodeled_names(self) -> list[str]:
        return [n for d in self.unmodeled for n in d.names]

    @property
    def state_dim(self) -> int:
        return sum(d.size for d in self.state)

    @property
    def unmodeled_dim(self) -> int:
        return sum(d.size for d in self.unmodeled)

    @property
    def target_ids(self) -> set[str]:
        return {o.id for o in self.objects if o.role == "target"}

    def object(self, object_id: str) -> ObjectSpec:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(object_id)

    def state_offsets(self) -> dict[str, tuple[Dof, int]]:
        out, i = {}, 0
        for d in self.state:
            out[d.name] = (d, i)
            i += d.size
        return out

    def to_dict(self) -> dict:
        return scenario_to_dict(self)


def _shape_params(shape: Shape) -> dict:
    if isinstance(shape, Box):
        return dict(zip(("dx", "dy", "dz"), map(float, shape.dims)))
    if isinstance(shape, Plane):
        return {"ex": float(shape.extent[0]), "ey": float(shape.extent[1])}
    return {"angle": float(shape.angle_range[0])}


def validate_spec(spec: ScenarioSpec) -> list[str]:
    problems = []
    ids = [o.id for o in spec.objects]
    groups = {o.group for o in spec.objects if o.group}
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        problems.append(f"objects: duplicate id {dup!r}")
    for o in spec.objects:
        if o.role not in ROLES:
            problems.append(f"objects.{o.id}.role: {o.role!r} not in {ROLES}")
        if isinstance(o.shape, Box) and min(o.shape.dims) <= 0:
            problems.append(f"objects.{o.id}.shape.dims must be > 0")
        if isinstance(o.shape, Plane) and min(o.shape.extent) <= 0:
            problems.append(f"objects.{o.id}.shape.extent must be > 0")
        if isinstance(o.shape, Articulated):
            if min(o.shape.base) <= 0 or min(o.shape.flap) <= 0:
                problems.append(f"objects.{o.id}.shape: base/flap dims must be > 0")
            if abs(np.linalg.norm(o.shape.hinge_axis) - 1.0) > 1e-9:
                problems.append(f"objects.{o.id}.shape.hinge_axis must be unit-norm")
    seen: dict[tuple, str] = {}
    names = []
    for section, dofs in (("state", spec.state), ("unmodeled", spec.unmodeled)):
        for d in dofs:
            names.append(d.name)
            where = f"{section}.{d.name}"
            if d.kind not in ("real", "int", "quat"):
                problems.append(f"{where}.kind: unknown kind {d.kind!r}")
            if d.param == "count":
                if d.object not in groups:
                    problems.append(f"{where}.object: unknown group {d.object!r}")
            elif d.object not in ids:
                problems.append(f"{where}.object: unknown object {d.object!r}")
            elif d.kind == "quat" and d.param != "q":
                problems.append(f"{where}.param: quaternion DOFs must use param 'q'")
            elif d.kind != "quat" and d.param not in SCALAR_PARAMS:
                problems.append(f"{where}.param: unknown param {d.param!r}")
            if d.kind != "quat" and d.range is None:
                problems.append(f"{where}.range: required for {d.kind} DOFs")
            if d.range is not None and not d.range[0] <= d.range[1]:
                problems.append(f"{where}.range: lower bound above upper bound")
            key = (d.object, d.param)
            if key in seen:
                problems.append(f"{where}: {d.object}.{d.param} already bound by {seen[key]}")
            seen[key] = where
    for dup in sorted({n for n in names if names.count(n) > 1}):
        problems.append(f"dof name {dup!r} used more than once")
    return problems


# ---------------------------------------------------------------------------
# binding


def _nominal_params(spec: ScenarioSpec) -> tuple[dict, dict]:
    params = {}
    for o in spec.objects:
        p = {"tx": o.pose.translation[0], "ty": o.pose.translation[1], "tz": o.pose.translation[2],
             "q": np.array(o.pose.rotation), "rx": 0.0, "ry": 0.0, "rz": 0.0}
        p.update(_shape_params(o.shape))
        params[o.id] = p
    counts = {o.group: None for o in spec.objects if o.group}
    return params, counts


def _apply(dofs, values, params, counts, label):
    expected = sum(d.size for d in dofs)
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != expected:
        raise BindingError(f"{label}: expected {expected} values, got {values.size}")
    i = 0
    for d in dofs:
        if d.param == "count":
            counts[d.object] = int(round(values[i]))
        elif d.kind == "quat":
            params[d.object]["q"] = quat_normalize(values[i:i + 4])
        else:
            params[d.object][d.param] = float(values[i])
        i += d.size


def bind_state(spec: ScenarioSpec, x, z) -> SceneInstance:
    """Resolve every object of ``spec`` for modeled state ``x`` and unmodeled ``z``."""
    params, counts = _nominal_params(spec)
    _apply(spec.state, x, params, counts, "state")
    _apply(spec.unmodeled, z, params, counts, "unmodeled")

    seen_in_group: dict[str, int] = {}
    prims = []
    for o in spec.objects:
        if o.group:
            k = seen_in_group.get(o.group, 0)
            seen_in_group[o.group] = k + 1
            limit = counts[o.group]
            if limit is not None and k >= limit:
                continue
        p = params[o.id]
        q = quat_multiply(p["q"], quat_from_euler(p["rx"], p["ry"], p["rz"]))
        pose = Pose([p["tx"], p["ty"], p["tz"]], q)
        if isinstance(o.shape, Box):
            prims.append(Primitive(o.id, "body", o.role, "box", pose, (p["dx"], p["dy"], p["dz"])))
        elif isinstance(o.shape, Plane):
            prims.append(Primitive(o.id, "body", o.role, "plane", pose, (p["ex"], p["ey"])))
        else:
            shape = o.shape
            prims.append(Primitive(o.id, "base", o.role, "box", pose, tuple(shape.base)))
            flap = pose.compose(shape.flap_pose(p["angle"]))
            prims.append(Primitive(o.id, "flap", o.role, "box", flap, tuple(shape.flap)))
    return SceneInstance(spec.camera, spec.camera_pose, tuple(prims))


def target_pose(spec: ScenarioSpec, x, z=None) -> Pose:
    """World pose of the first target object under state ``x``."""
    z = default_unmodeled(spec) if z is None else z
    scene = bind_state(spec, x, z)
    for p in scene.primitives:
        if p.role == "target":
            return p.pose
    raise BindingError("scenario has no target object")


# ---------------------------------------------------------------------------
# sampling


def _nominal_value(spec: ScenarioSpec, d: Dof) -> np.ndarray:
    if d.default is not None:
        return np.array([d.default], dtype=np.float64)
    if d.param == "count":
        return np.zeros(1)
    params, _ = _nominal_params(spec)
    v = params[d.object]["q" if d.kind == "quat" else d.param]
    return np.atleast_1d(np.asarray(v, dtype=np.float64)).copy()


def default_state(spec: ScenarioSpec) -> np.ndarray:
    return np.concatenate([_nominal_value(spec, d) for d in spec.state]) if spec.state else np.zeros(0)


def default_unmodeled(spec: ScenarioSpec) -> np.ndarray:
    if not spec.unmodeled:
        return np.zeros(0)
    return np.concatenate([_nominal_value(spec, d) for d in spec.unmodeled])


def _sample_dofs(spec: ScenarioSpec, dofs, rng: np.random.Generator) -> np.ndarray:
    out = []
    for d in dofs:
        if d.kind == "quat":
            if d.axis is not None:
                lo, hi = d.range if d.range is not None else (-np.pi, np.pi)
                base = spec.object(d.object).pose.rotation
                out.append(quat_multiply(base, quat_from_axis_angle(d.axis, rng.uniform(lo, hi))))
            else:
                out.append(random_quaternion(rng))
        elif d.kind == "int":
            lo, hi = int(d.range[0]), int(d.range[1])
            out.append([float(rng.integers(lo, hi + 1))])
        else:
            out.append([rng.uniform(*d.range)])
    return np.concatenate(out) if out else np.zeros(0)


def sample_state(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    return _sample_dofs(spec, spec.state, rng)


def sample_unmodeled(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    return _sample_dofs(spec, spec.unmodeled, rng)


def sample_scene(spec: ScenarioSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(x, z)`` uniformly from the declared ranges; deterministic in ``seed``."""
    sx, sz = np.random.SeedSequence(seed).spawn(2)
    return sample_state(spec, np.random.default_rng(sx)), sample_unmodeled(spec, np.random.default_rng(sz))


# ---------------------------------------------------------------------------
# sweeps

FRAME_AXES = {"tx": 0, "ty": 1, "tz": 2, "rx": 0, "ry": 1, "rz": 2}


def _translation_block(spec: ScenarioSpec):
    """Offsets of tx/ty/tz and q for the first target whose translation is fully modeled."""
    offsets: dict[tuple, int] = {}
    i = 0
    for d in spec.state:
        offsets[(d.object, d.param)] = i
        i += d.size
    for o in spec.objects:
        if o.role != "target":
            continue
        idx = [offsets.get((o.id, p)) for p in ("tx", "ty", "tz")]
        if None not in idx:
            return o, idx, offsets.get((o.id, "q"))
    return None, None, None


def sweep_axis(spec: ScenarioSpec, x_gt, axis, half_range: float, steps: int) -> list[np.ndarray]:
    """States spaced evenly along one axis around ``x_gt``; the middle one is ``x_gt``.

    ``axis`` is a DOF index, a DOF name, or one of ``tx ty tz`` (translation
    along the target's own axes) / ``rx ry rz`` (rotation about them).
    """
    if steps < 3 or steps % 2 == 0:
        raise ValueError(f"steps must be odd and >= 3, got {steps}")
    x_gt = np.asarray(x_gt, dtype=np.float64)
    offsets = np.linspace(-half_range, half_range, steps)
    offsets[steps // 2] = 0.0
    names = spec.state_names

    if isinstance(axis, str) and axis in FRAME_AXES:
        obj, t_idx, q_idx = _translation_block(spec)
        if axis.startswith("t") and obj is not None:
            q = x_gt[q_idx:q_idx + 4] if q_idx is not None else obj.pose.rotation
            direction = quat_to_matrix(q)[:, FRAME_AXES[axis]]
            out = []
            for off in offsets:
                x = x_gt.copy()
                if off != 0.0:
                    x[t_idx] = x_gt[t_idx] + off * direction
                out.append(x)
            return out
        if axis.startswith("r") and obj is not None and q_idx is not None:
            e = np.zeros(3)
            e[FRAME_AXES[axis]] = 1.0
            out = []
            for off in offsets:
                x = x_gt.copy()
                if off != 0.0:
                    x[q_idx:q_idx + 4] = quat_normalize(quat_multiply(x_gt[q_idx:q_idx + 4], quat_from_axis_angle(e, off)))
                out.append(x)
            return out

    if isinstance(axis, (int, np.integer)) and not isinstance(axis, bool):
        index = int(axis)
        if not 0 <= index < len(names):
            raise ValueError(f"axis index {index} out of range for state of size {len(names)}")
    elif isinstance(axis, str) and axis in names:
        index = names.index(axis)
    else:
        raise ValueError(f"invalid sweep axis {axis!r}; state DOFs are {names}")
    out = []
    for off in offsets:
        x = x_gt.copy()
        x[index] = x_gt[index] + off
        out.append(x)
    return out


# ---------------------------------------------------------------------------
# config files


def _shape_to_dict(shape: Shape) -> dict:
    if isinstance(shape, Box):
        return {"type": "box", "dims": list(map(float, shape.dims))}
    if isinstance(shape, Plane):
        return {"type": "plane", "extent": list(map(float, shape.extent))}
    return {
        "type": "articulated",
        "base": list(map(float, shape.base)),
        "flap": list(map(float, shape.flap)),
        "hinge_axis": list(map(float, shape.hinge_axis)),
        "hinge_origin": list(map(float, shape.hinge_origin)),
        "flap_offset": list(map(float, shape.flap_offset)),
        "angle_range": list(map(float, shape.angle_range)),
    }


def _shape_from_dict(d: dict, where: str) -> Shape:
    kind = d.get("type")
    if kind == "box":
        return Box(tuple(d["dims"]))
    if kind == "plane":
        return Plane(tuple(d.get("extent", (4.0, 4.0))))
    if kind == "articulated":
        return Articulated(
            base=tuple(d["base"]),
            flap=tuple(d["flap"]),
            hinge_axis=tuple(d["hinge_axis"]),
            hinge_origin=tuple(d["hinge_origin"]),
            flap_offset=tuple(d["flap_offset"]),
            angle_range=tuple(d.get("angle_range", (0.0, np.pi))),
        )
    raise ScenarioError([f"{where}.type: unknown shape type {kind!r}"])


def _dof_to_dict(d: Dof) -> dict:
    out = {"name": d.name, "object": d.object, "param": d.param, "kind": d.kind}
    if d.range is not None:
        out["range"] = list(map(float, d.range))
    if d.axis is not None:
        out["axis"] = list(map(float, d.axis))
    if d.default is not None:
        out["default"] = float(d.default)
    return out


def _dof_from_dict(d: dict) -> Dof:
    return Dof(
        name=d["name"],
        object=d["object"],
        param=d["param"],
        range=tuple(d["range"]) if d.get("range") is not None else None,
        kind=d.get("kind", "real"),
        axis=tuple(d["axis"]) if d.get("axis") is not None else None,
        default=d.get("default"),
    )


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    c = spec.camera
    return {
        "name": spec.name,
        "camera": {"width": c.width, "height": c.height, "fx": c.fx, "fy": c.fy,
                   "cx": c.cx, "cy": c.cy, "max_depth": c.max_depth},
        "camera_pose": spec.camera_pose.to_dict(),
        "objects": [
            {"id": o.id, "role": o.role, "shape": _shape_to_dict(o.shape), "pose": o.pose.to_dict(),
             **({"group": o.group} if o.group else {})}
            for o in spec.objects
        ],
        "state": [_dof_to_dict(d) for d in spec.state],
        "unmodeled": [_dof_to_dict(d) for d in spec.unmodeled],
    }


def scenario_from_dict(d: dict) -> ScenarioSpec:
    problems = []
    for key in ("name", "camera", "objects"):
        if key not in d:
            problems.append(f"{key}: missing")
    if problems:
        raise ScenarioError(problems)
    try:
        camera = Camera(**d["camera"])
    except TypeError as exc:
        raise ScenarioError([f"camera: {exc}"]) from exc
    objects = []
    for i, o in enumerate(d["objects"]):
        where = f"objects[{i}]"
        missing = [k for k in ("id", "role", "shape") if k not in o]
        if missing:
            problems.extend(f"{where}.{k}: missing" for k in missing)
            continue
        try:
            shape = _shape_from_dict(o["shape"], f"{where}.shape")
        except ScenarioError as exc:
            problems.extend(exc.problems)
            continue
        objects.append(ObjectSpec(o["id"], o["role"], shape, Pose.from_dict(o.get("pose")), o.get("group")))
    dofs = {}
    for section in ("state", "unmodeled"):
        dofs[section] = []
        for i, e in enumerate(d.get(section, []) or []):
            missing = [k for k in ("name", "object", "param") if k not in e]
            if missing:
                problems.extend(f"{section}[{i}].{k}: missing" for k in missing)
                continue
            dofs[section].append(_dof_from_dict(e))
    if problems:
        raise ScenarioError(problems)
    return ScenarioSpec(d["name"], camera, tuple(objects), tuple(dofs["state"]), tuple(dofs["unmodeled"]),
                        Pose.from_dict(d.get("camera_pose")))


def save_scenario(spec: ScenarioSpec, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(spec), sort_keys=False))


def load_scenario(path) -> ScenarioSpec:
    data = yaml.safe_load(Path(path).read_text())
    if isinstance(data, dict) and "scenario" in data and "objects" not in data:
        data = data["scenario"]
    if not isinstance(data, dict):
        raise ScenarioError([f"{path}: expected a mapping at top level"])
    return scenario_from_dict(data)
