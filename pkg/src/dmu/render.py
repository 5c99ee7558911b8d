"""Ray-casting depth renderer.

Depth images are float32 arrays of shape (H, W) holding z-depth in meters;
0 is reserved for invalid readings and rays that hit nothing read
``camera.max_depth``.  Segmentation masks are boolean arrays of the same shape.
"""

from __future__ import annotations

import numpy as np

from .scene import SceneInstance

HIT_EPS = 1e-9


def ray_box(origins: np.ndarray, dirs: np.ndarray, dims) -> np.ndarray:
    """Slab-method hit distances for rays in the box's local frame; ``inf`` on miss."""
    half = 0.5 * np.asarray(dims, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (-half - origins) * inv
        t2 = (half - origins) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    parallel = dirs == 0.0
    if parallel.any():
        inside = np.abs(origins) <= half
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    hit = (t_near <= t_far) & (t_near > HIT_EPS)
    return np.where(hit, t_near, np.inf)


def ray_plane(origins: np.ndarray, dirs: np.ndarray, extent) -> np.ndarray:
    """Hit distances against the finite rectangle z=0 in the plane's local frame."""
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origins[:, 2] / dz
    p = origins + t[:, None] * dirs
    hit = (dz != 0.0) & (t > HIT_EPS) & (np.abs(p[:, 0]) <= 0.5 * extent[0]) & (np.abs(p[:, 1]) <= 0.5 * extent[1])
    return np.where(hit, t, np.inf)


def cast_rays(scene: SceneInstance, origins, dirs) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit for camera-frame rays.

    Returns ``(t, index)`` where ``index`` points into ``scene.primitives``
    (-1 on miss) and ``t`` is the ray parameter (``inf`` on miss).
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(dirs), np.inf)
    index = np.full(len(dirs), -1, dtype=np.int64)
    world_to_cam = scene.camera_pose.inverse()
    for i, prim in enumerate(scene.primitives):
        pose = world_to_cam.compose(prim.pose)
        rot = pose.rotation_matrix
        o_local = (origins - pose.translation) @ rot
        d_local = dirs @ rot
        if prim.kind == "box":
            t = ray_box(o_local, d_local, prim.size)
        else:
            t = ray_plane(o_local, d_local, prim.size)
        closer = t < best
        best = np.where(closer, t, best)
        index = np.where(closer, i, index)
    return best, index


def _render(scene: SceneInstance) -> tuple[np.ndarray, np.ndarray]:
    cam = scene.camera
    dirs = cam.ray_directions().reshape(-1, 3)
    t, index = cast_rays(scene, np.zeros_like(dirs), dirs)
    beyond = t > cam.max_depth
    index = np.where(beyond, -1, index)
    depth = np.where(beyond, cam.max_depth, t)
    return depth.reshape(cam.height, cam.width).astype(np.float32), index.reshape(cam.height, cam.width)


def render_depth(scene: SceneInstance) -> np.ndarray:
    """Z-depth image of ``scene``; pixels without a hit read ``max_depth``."""
    return _render(scene)[0]


def render_with_ids(scene: SceneInstance) -> tuple[np.ndarray, np.ndarray]:
    """Depth image plus the per-pixel index of the nearest primitive (-1 for none)."""
    return _render(scene)


def render_segmentation(scene: SceneInstance, target_ids) -> np.ndarray:
    target_ids = set(target_ids)
    unknown = target_ids - scene.object_ids
    if unknown:
        raise KeyError(f"unknown object ids {sorted(unknown)}")
    _, index = _render(scene)
    is_target = np.array([p.object_id in target_ids for p in scene.primitives] + [False])
    return is_target[index]


def min_compose(y_input: np.ndarray, y_syn: np.ndarray) -> np.ndarray:
    """Pixel-wise minimum where invalid (0) pixels defer to the other image."""
    if y_input.shape != y_syn.shape:
        raise ValueError(f"dimension mismatch: {y_input.shape} vs {y_syn.shape}")
    both = np.minimum(y_input, y_syn)
    out = np.where(y_input == 0, y_syn, np.where(y_syn == 0, y_input, both))
    return out.astype(np.result_type(y_input, y_syn), copy=False)
