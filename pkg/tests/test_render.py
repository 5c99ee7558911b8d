from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmu.geometry import Pose
from dmu.imageio import read_pfm, read_pgm, write_pfm, write_pgm
from dmu.presets import get_preset
from dmu.render import cast_rays, min_compose, render_depth, render_segmentation, render_with_ids
from dmu.scene import (Box, Camera, ObjectSpec, Plane, ScenarioSpec, SceneInstance, bind_state, default_state,
                       default_unmodeled, sample_scene)

from oracles import scene_oracle

GOLDEN = Path(__file__).parent / "golden"


def aimed_rays(scene, object_ids, n, seed, spread=0.15):
    """Camera-frame rays through random points around the given objects, normalised to z = 1."""
    rng = np.random.default_rng(seed)
    to_cam = scene.camera_pose.inverse()
    centres = [to_cam.apply(p.pose.translation) for p in scene.primitives if p.object_id in object_ids]
    pts = np.array(centres)[rng.integers(len(centres), size=n)] + rng.uniform(-spread, spread, (n, 3))
    return pts / pts[:, 2:3]


def check_against_oracle(scene, object_ids, n=1200, seed=0, spread=0.15):
    dirs = aimed_rays(scene, object_ids, n, seed, spread)
    t, _ = cast_rays(scene, np.zeros_like(dirs), dirs)
    ref = scene_oracle(scene, dirs)
    hit = np.isfinite(ref)
    np.testing.assert_array_equal(np.isfinite(t), hit)
    np.testing.assert_allclose(t[hit], ref[hit], atol=1e-6, rtol=0)
    return hit.sum()


def _single(obj, camera=None, camera_pose=None):
    spec = ScenarioSpec("one", camera or Camera(), [obj], [], [], camera_pose or Pose())
    return bind_state(spec, [], [])


# -- closed-form cases -----------------------------------------------------------


def test_perpendicular_plane_exact_depth():
    scene = _single(ObjectSpec("wall", "background", Plane((10.0, 10.0)), Pose([0, 0, 2.0])))
    depth = render_depth(scene)
    assert depth.dtype == np.float32
    np.testing.assert_array_equal(depth, 2.0)


def test_empty_scene_reads_max_depth():
    spec = get_preset("box")
    scene = bind_state(spec, default_state(spec), default_unmodeled(spec)).only([])
    np.testing.assert_array_equal(render_depth(scene), spec.camera.max_depth)


def test_hits_beyond_max_depth_are_clamped():
    scene = _single(ObjectSpec("wall", "background", Plane((10.0, 10.0)), Pose([0, 0, 5.0])), Camera(max_depth=4.0))
    depth, ids = render_with_ids(scene)
    np.testing.assert_array_equal(depth, 4.0)
    np.testing.assert_array_equal(ids, -1)


def test_box_front_face_depth():
    scene = _single(ObjectSpec("b", "target", Box((0.4, 0.4, 0.2)), Pose([0, 0, 1.0])))
    depth = render_depth(scene)
    h, w = depth.shape
    assert depth[h // 2, w // 2] == pytest.approx(0.9, abs=1e-6)


# -- intersection oracle on >= 1000 rays per shape ---------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_box_against_triangle_oracle(seed):
    spec = get_preset("box")
    scene = bind_state(spec, *sample_scene(spec, seed)).only(["target"])
    assert check_against_oracle(scene, {"target"}, seed=seed, spread=0.07) > 300


@pytest.mark.parametrize("seed", range(3))
def test_plane_against_triangle_oracle(seed):
    spec = get_preset("box")
    scene = bind_state(spec, *sample_scene(spec, seed)).only(["table"])
    assert check_against_oracle(scene, {"table"}, seed=seed) > 200


@pytest.mark.parametrize("alpha", [0.0, 0.7, 1.6, 2.8])
def test_laptop_against_triangle_oracle(alpha):
    spec = get_preset("laptop")
    scene = bind_state(spec, [alpha], default_unmodeled(spec)).only(["laptop"])
    assert check_against_oracle(scene, {"laptop"}) > 200


@pytest.mark.parametrize("seed", range(3))
def test_cabinet_against_triangle_oracle(seed):
    spec = get_preset("cabinet")
    scene = bind_state(spec, *sample_scene(spec, seed))
    assert check_against_oracle(scene, {"cabinet"}, seed=seed, n=1500) > 200


@pytest.mark.parametrize("name", ["box", "occlusion"])
def test_full_scene_against_triangle_oracle(name):
    spec = get_preset(name)
    scene = bind_state(spec, *sample_scene(spec, 9))
    assert check_against_oracle(scene, scene.object_ids, seed=9) > 500


def test_image_matches_oracle_on_every_pixel():
    spec = get_preset("box")
    scene = bind_state(spec, *sample_scene(spec, 1))
    dirs = spec.camera.ray_directions().reshape(-1, 3)
    ref = np.minimum(scene_oracle(scene, dirs), spec.camera.max_depth).reshape(spec.camera.height, -1)
    np.testing.assert_allclose(render_depth(scene), ref, atol=1e-6)


# -- segmentation -----------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_segmentation_matches_hit_ids(seed):
    spec = get_preset("box")
    scene = bind_state(spec, *sample_scene(spec, seed))
    _, ids = render_with_ids(scene)
    seg = render_segmentation(scene, ["target"])
    expected = np.array([ids.flat[i] >= 0 and scene.primitives[ids.flat[i]].object_id == "target"
                         for i in range(ids.size)]).reshape(ids.shape)
    np.testing.assert_array_equal(seg, expected)


def test_segmentation_empty_when_fully_occluded():
    spec = get_preset("occlusion")
    scene = bind_state(spec, [0.15, 0.18, 0.03], [2])
    assert not render_segmentation(scene, ["target"]).any()
    assert render_segmentation(scene.without(["blocker_b"]), ["target"]).any()


def test_segmentation_without_target():
    spec = get_preset("box")
    scene = bind_state(spec, default_state(spec), default_unmodeled(spec))
    assert not render_segmentation(scene.without(["target"]), []).any()


def test_segmentation_unknown_id():
    spec = get_preset("box")
    scene = bind_state(spec, default_state(spec), default_unmodeled(spec))
    with pytest.raises(KeyError, match="teapot"):
        render_segmentation(scene, ["teapot"])


# -- composition -------------------------------------------------------------------


def test_min_compose_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(0, 2, (9, 7)), rng.uniform(0, 2, (9, 7))
    a[rng.random(a.shape) < 0.2] = 0
    b[rng.random(b.shape) < 0.2] = 0
    out = min_compose(a, b)
    for i, j in np.ndindex(a.shape):
        if a[i, j] == 0:
            assert out[i, j] == b[i, j]
        elif b[i, j] == 0:
            assert out[i, j] == a[i, j]
        else:
            assert out[i, j] == min(a[i, j], b[i, j])


def test_min_compose_shape_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        min_compose(np.ones((2, 2)), np.ones((2, 3)))


@given(seed=st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_min_compose_symmetric_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 1, (5, 5)), rng.uniform(0, 1, (5, 5))
    np.testing.assert_array_equal(min_compose(a, b), min_compose(b, a))
    np.testing.assert_array_equal(min_compose(a, a), a)


def test_adding_an_object_never_increases_depth():
    spec = get_preset("box")
    for seed in range(10):
        scene = bind_state(spec, *sample_scene(spec, seed))
        full = render_depth(scene)
        for oid in scene.object_ids:
            assert np.all(full <= render_depth(scene.without([oid])))


def test_mirror_symmetric_scene_renders_mirrored():
    spec = get_preset("box_translation")
    x = np.array([0.0, 0.0, 0.9])
    depth = render_depth(bind_state(spec, x, [1.08, 0.0, 0.0]))
    np.testing.assert_allclose(depth, depth[:, ::-1], atol=1e-6)
    np.testing.assert_allclose(depth, depth[::-1, :], atol=1e-6)


# -- golden images and file formats -----------------------------------------------


def golden_scenes():
    box, laptop, cabinet = get_preset("box"), get_preset("laptop"), get_preset("cabinet")
    return {
        "box": bind_state(box, *sample_scene(box, 123)),
        "laptop": bind_state(laptop, [0.0], default_unmodeled(laptop)),
        "cabinet": bind_state(cabinet, [0.1, 0.2, np.radians(30), np.radians(45)], default_unmodeled(cabinet)),
    }


@pytest.mark.parametrize("name", ["box", "laptop", "cabinet"])
def test_golden_depth(name):
    depth = render_depth(golden_scenes()[name])
    np.testing.assert_allclose(depth, read_pfm(GOLDEN / f"{name}.pfm"), atol=1e-6)


def test_pfm_roundtrip(tmp_path):
    img = np.random.default_rng(0).uniform(0, 3, (7, 11)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), img)
    assert (tmp_path / "a.pfm").read_bytes().startswith(b"Pf\n11 7\n-1.0\n")


def test_pfm_rejects_colour(tmp_path):
    (tmp_path / "c.pfm").write_bytes(b"PF\n1 1\n-1.0\n" + bytes(12))
    with pytest.raises(ValueError, match="single-channel"):
        read_pfm(tmp_path / "c.pfm")


def test_pgm_roundtrip(tmp_path):
    mask = np.random.default_rng(0).random((5, 9)) < 0.5
    write_pgm(tmp_path / "m.pgm", mask)
    np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm"), mask)


def test_scene_instance_filtering():
    spec = get_preset("box")
    scene = bind_state(spec, *sample_scene(spec, 0))
    assert isinstance(scene.only(["target"]), SceneInstance)
    assert scene.only(["target"]).object_ids == {"target"}
    assert "target" not in scene.without(["target"]).object_ids
