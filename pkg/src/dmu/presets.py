"""Built-in scenarios.

Distances, ranges and intrinsics here are desk-scale defaults chosen for this
package; they are documented constants, not measured values.
"""

from __future__ import annotations

import numpy as np

from .geometry import Pose, quat_from_axis_angle
from .scene import Articulated, Box, Camera, Dof, ObjectSpec, Plane, ScenarioSpec

BOX_DIMS = (0.11, 0.11, 0.06)

# box scenes: camera frame is the world frame, the table faces the camera
BOX_CAMERA = Camera(64, 32, 80.0, 80.0, 32.0, 16.0, 1.5)
N_OBSTACLES = 3


def _box_objects(with_obstacles: bool) -> list[ObjectSpec]:
    objs = [
        ObjectSpec("target", "target", Box(BOX_DIMS), Pose([0.0, 0.0, 1.0])),
        ObjectSpec("table", "background", Plane((4.0, 4.0)), Pose([0.0, 0.0, 1.03])),
    ]
    if with_obstacles:
        for i in range(N_OBSTACLES):
            objs.append(ObjectSpec(f"obstacle{i}", "obstacle", Box((0.08, 0.08, 0.1)),
                                   Pose([0.0, 0.0, 0.95]), group="obstacles"))
    return objs


def _table_dofs() -> list[Dof]:
    return [
        Dof("table_depth", "table", "tz", (1.03, 1.15)),
        Dof("table_rx", "table", "rx", (-0.15, 0.15)),
        Dof("table_ry", "table", "ry", (-0.15, 0.15)),
    ]


def _obstacle_dofs() -> list[Dof]:
    dofs = [Dof("n_obstacles", "obstacles", "count", (0, N_OBSTACLES), kind="int")]
    for i in range(N_OBSTACLES):
        o = f"obstacle{i}"
        dofs += [
            Dof(f"{o}_tx", o, "tx", (-0.25, 0.25)),
            Dof(f"{o}_ty", o, "ty", (-0.12, 0.12)),
            Dof(f"{o}_tz", o, "tz", (0.85, 1.0)),
            Dof(f"{o}_rz", o, "rz", (-np.pi, np.pi)),
            Dof(f"{o}_dx", o, "dx", (0.04, 0.15)),
            Dof(f"{o}_dy", o, "dy", (0.04, 0.15)),
            Dof(f"{o}_dz", o, "dz", (0.04, 0.15)),
        ]
    return dofs


def box() -> ScenarioSpec:
    """Full 6-DOF pose of the 11x11x6 cm box, table plus up to three obstacle boxes."""
    state = [
        Dof("tx", "target", "tx", (-0.2, 0.2)),
        Dof("ty", "target", "ty", (-0.08, 0.08)),
        Dof("tz", "target", "tz", (0.85, 1.0)),
        Dof("q", "target", "q", kind="quat"),
    ]
    return ScenarioSpec("box", BOX_CAMERA, _box_objects(True), state, _table_dofs() + _obstacle_dofs())


def box_translation() -> ScenarioSpec:
    """Translation-only box on a randomized table, no obstacles (desk training scenario)."""
    state = [
        Dof("tx", "target", "tx", (-0.2, 0.2)),
        Dof("ty", "target", "ty", (-0.08, 0.08)),
        Dof("tz", "target", "tz", (0.85, 0.97)),
    ]
    return ScenarioSpec("box_translation", BOX_CAMERA, _box_objects(False), state, _table_dofs())


LAPTOP = Articulated(
    base=(0.30, 0.22, 0.02),
    flap=(0.30, 0.22, 0.008),
    hinge_axis=(-1.0, 0.0, 0.0),
    hinge_origin=(0.0, 0.11, 0.01),
    flap_offset=(0.0, 0.0, 0.014),
    angle_range=(0.0, np.radians(150.0)),
)


def laptop() -> ScenarioSpec:
    """Opening angle of a laptop on a table; its placement is unmodeled."""
    camera = Camera.from_fov(64, 32, 70.0, max_depth=1.5)
    eye, look = (0.0, -0.55, 0.55), (0.0, 0.05, 0.0)
    objects = [
        ObjectSpec("table", "background", Plane((3.0, 3.0)), Pose([0.0, 0.0, 0.0])),
        ObjectSpec("laptop", "target", LAPTOP, Pose([0.0, 0.05, 0.01])),
    ]
    state = [Dof("alpha", "laptop", "angle", LAPTOP.angle_range)]
    unmodeled = [
        Dof("laptop_x", "laptop", "tx", (-0.12, 0.12)),
        Dof("laptop_y", "laptop", "ty", (-0.02, 0.12)),
        Dof("laptop_yaw", "laptop", "rz", (-0.6, 0.6)),
    ]
    return ScenarioSpec("laptop", camera, objects, state, unmodeled, Pose.look_at(eye, look))


CABINET = Articulated(
    base=(0.4, 0.6, 1.0),
    flap=(0.02, 0.6, 1.0),
    hinge_axis=(0.0, 0.0, 1.0),
    hinge_origin=(-0.2, -0.3, 0.0),
    flap_offset=(-0.21, 0.0, 0.0),
    angle_range=(0.0, np.pi),
)


def cabinet() -> ScenarioSpec:
    """Planar position, yaw and door angle of a cabinet in a gravity-aligned frame."""
    camera = Camera.from_fov(64, 32, 75.0, max_depth=4.0)
    eye, look = (0.0, 0.0, 1.0), (2.0, 0.0, 0.5)
    wall_q = quat_from_axis_angle([0.0, 1.0, 0.0], np.pi / 2)
    side_q = quat_from_axis_angle([1.0, 0.0, 0.0], -np.pi / 2)
    objects = [
        ObjectSpec("floor", "background", Plane((8.0, 8.0)), Pose([2.0, 0.0, 0.0])),
        ObjectSpec("back_wall", "background", Plane((6.0, 6.0)), Pose([3.0, 0.0, 1.0], wall_q)),
        ObjectSpec("side_wall", "background", Plane((6.0, 6.0)), Pose([2.0, 1.3, 1.0], side_q)),
        ObjectSpec("cabinet", "target", CABINET, Pose([2.0, 0.0, 0.5])),
    ]
    state = [
        Dof("px", "cabinet", "tx", (1.7, 2.3)),
        Dof("py", "cabinet", "ty", (-0.4, 0.4)),
        Dof("theta", "cabinet", "rz", (-0.5, 0.5)),
        Dof("alpha", "cabinet", "angle", CABINET.angle_range),
    ]
    unmodeled = [
        Dof("wall_x", "back_wall", "tx", (2.9, 3.5)),
        Dof("wall_tilt", "back_wall", "rx", (-0.2, 0.2)),
        Dof("side_y", "side_wall", "ty", (1.0, 1.6)),
    ]
    return ScenarioSpec("cabinet", camera, objects, state, unmodeled, Pose.look_at(eye, look))


# scripted occlusion scene for the particle filter demo
OCCLUSION_TRUTH = np.array([0.15, 0.18, 0.03])


def occlusion() -> ScenarioSpec:
    """Box position on a table behind two tall obstacles, seen at an oblique angle.

    Obstacle ``blocker_b`` (listed first in its group) hides the ground-truth
    position; lowering ``n_obstacles`` to 1 removes ``blocker_a`` only.
    """
    camera = Camera.from_fov(128, 64, 60.0, max_depth=2.0)
    eye, look = (0.0, -0.7, 0.6), (0.0, 0.15, 0.0)
    objects = [
        ObjectSpec("table", "background", Plane((3.0, 3.0)), Pose([0.0, 0.2, 0.0])),
        ObjectSpec("target", "target", Box(BOX_DIMS), Pose(OCCLUSION_TRUTH)),
        ObjectSpec("blocker_b", "obstacle", Box((0.22, 0.06, 0.3)), Pose([0.15, 0.0, 0.15]), group="obstacles"),
        ObjectSpec("blocker_a", "obstacle", Box((0.22, 0.06, 0.3)), Pose([-0.15, 0.0, 0.15]), group="obstacles"),
    ]
    state = [
        Dof("tx", "target", "tx", (-0.35, 0.35)),
        Dof("ty", "target", "ty", (-0.1, 0.4)),
        Dof("tz", "target", "tz", (0.03, 0.03)),
    ]
    unmodeled = [Dof("n_obstacles", "obstacles", "count", (0, 2), kind="int", default=2)]
    return ScenarioSpec("occlusion", camera, objects, state, unmodeled, Pose.look_at(eye, look))


PRESETS = {
    "box": box,
    "box_translation": box_translation,
    "laptop": laptop,
    "cabinet": cabinet,
    "occlusion": occlusion,
}


def get_preset(name: str) -> ScenarioSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
