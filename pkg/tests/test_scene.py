import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dmu.geometry import (Pose, pose_compose, quat_from_axis_angle, quat_from_euler, quat_multiply, quat_to_matrix,
                          random_quaternion)
from dmu.presets import BOX_DIMS, CABINET, LAPTOP, PRESETS, get_preset
from dmu.scene import (BindingError, Box, Camera, Dof, ObjectSpec, Plane, ScenarioError, ScenarioSpec, bind_state,
                       default_state, default_unmodeled, load_scenario, sample_scene, save_scenario,
                       scenario_from_dict, scenario_to_dict, sweep_axis, target_pose)


def _rot(axis, angle):
    """Rodrigues formula, independent of the quaternion code."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx


def _hom(R, t):
    m = np.eye(4)
    m[:3, :3] = R
    m[:3, 3] = t
    return m


poses = st.builds(
    lambda seed, t: Pose(t, random_quaternion(np.random.default_rng(seed))),
    st.integers(0, 2**32 - 1),
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
)


# -- poses ---------------------------------------------------------------------


@given(p=poses)
def test_identity_compose(p):
    assert Pose.identity().compose(p).allclose(p, 1e-12)
    assert p.compose(Pose.identity()).allclose(p, 1e-12)


@given(p=poses)
def test_compose_with_inverse_is_identity(p):
    r = pose_compose(p, p.inverse())
    np.testing.assert_allclose(r.translation, 0.0, atol=1e-9)
    assert abs(abs(r.rotation[0]) - 1.0) < 1e-9


@given(a=poses, b=poses, c=poses)
@settings(max_examples=50)
def test_compose_associative_and_unit(a, b, c):
    left = (a @ b) @ c
    right = a @ (b @ c)
    assert left.allclose(right, 1e-9)
    assert abs(np.linalg.norm(left.rotation) - 1.0) < 1e-9


def test_two_quarter_turns_make_half_turn():
    q = Pose([0, 0, 0], quat_from_axis_angle([0, 0, 1], np.pi / 2))
    half = q @ q
    np.testing.assert_allclose(half.rotation_matrix, _rot([0, 0, 1], np.pi / 2) @ _rot([0, 0, 1], np.pi / 2),
                               atol=1e-12)
    np.testing.assert_allclose(half.rotation_matrix, np.diag([-1.0, -1.0, 1.0]), atol=1e-12)


@given(p=poses, q=poses)
@settings(max_examples=50)
def test_compose_matches_matrix_product(p, q):
    np.testing.assert_allclose((p @ q).matrix, p.matrix @ q.matrix, atol=1e-9)


def test_quaternion_matrix_against_rodrigues():
    rng = np.random.default_rng(0)
    for _ in range(20):
        axis, angle = rng.normal(size=3), rng.uniform(-np.pi, np.pi)
        np.testing.assert_allclose(quat_to_matrix(quat_from_axis_angle(axis, angle)), _rot(axis, angle), atol=1e-12)


def test_euler_order():
    rx, ry, rz = 0.3, -0.2, 1.1
    expected = _rot([0, 0, 1], rz) @ _rot([0, 1, 0], ry) @ _rot([1, 0, 0], rx)
    np.testing.assert_allclose(quat_to_matrix(quat_from_euler(rx, ry, rz)), expected, atol=1e-12)


def test_pose_is_normalized_and_frozen():
    p = Pose([1, 2, 3], [2.0, 0, 0, 0])
    np.testing.assert_array_equal(p.rotation, [1, 0, 0, 0])
    with pytest.raises(ValueError):
        p.translation[0] = 5.0


def test_pose_dict_roundtrip():
    p = Pose([0.1, 0.2, 0.3], quat_from_axis_angle([1, 1, 0], 0.4))
    assert Pose.from_dict(p.to_dict()).allclose(p, 1e-15)


def test_look_at_points_optical_axis_at_target():
    p = Pose.look_at([0, -1, 1], [0, 0, 0])
    forward = p.rotation_matrix[:, 2]
    np.testing.assert_allclose(forward, np.array([0, 1, -1]) / np.sqrt(2), atol=1e-12)


# -- binding -------------------------------------------------------------------


def test_box_canonical_placement():
    spec = get_preset("box")
    x = np.array([0, 0, 1.0, 1, 0, 0, 0])
    z = default_unmodeled(spec)
    scene = bind_state(spec, x, z)
    assert [p.object_id for p in scene.primitives] == ["target", "table"]  # no obstacles by default
    box, table = scene.primitives
    np.testing.assert_array_equal(box.pose.translation, [0, 0, 1.0])
    assert box.size == BOX_DIMS
    # box rests on the table plane
    assert table.pose.translation[2] == pytest.approx(1.0 + BOX_DIMS[2] / 2)


def test_box_default_dims_from_preset():
    spec = get_preset("box")
    assert spec.object("target").shape.dims == (0.11, 0.11, 0.06)


def test_laptop_closed_flap_is_coplanar():
    spec = get_preset("laptop")
    scene = bind_state(spec, [0.0], default_unmodeled(spec))
    base, flap = [p for p in scene.primitives if p.object_id == "laptop"]
    np.testing.assert_allclose(flap.pose.rotation_matrix, base.pose.rotation_matrix, atol=1e-12)
    # the lid lies flat on top of the base: offset only along the base normal
    local = base.pose.inverse().apply(flap.pose.translation)
    np.testing.assert_allclose(local[:2], 0.0, atol=1e-12)
    assert local[2] == pytest.approx(LAPTOP.base[2] / 2 + LAPTOP.flap[2] / 2)


def test_cabinet_forward_kinematics_oracle():
    spec = get_preset("cabinet")
    px, py, theta, alpha = 0.1, 0.2, np.radians(30), np.radians(45)
    scene = bind_state(spec, [px, py, theta, alpha], default_unmodeled(spec))
    flap = [p for p in scene.primitives if p.object_id == "cabinet" and p.part == "flap"][0]
    base_nominal = spec.object("cabinet").pose
    # chain: world <- base (translated, yawed) <- hinge <- rotation <- back to flap rest offset
    T_base = _hom(_rot([0, 0, 1], theta) @ base_nominal.rotation_matrix,
                  [px, py, base_nominal.translation[2]])
    h = np.asarray(CABINET.hinge_origin)
    T_flap = (T_base @ _hom(np.eye(3), h) @ _hom(_rot(CABINET.hinge_axis, alpha), np.zeros(3))
              @ _hom(np.eye(3), np.asarray(CABINET.flap_offset) - h))
    np.testing.assert_allclose(flap.pose.matrix, T_flap, atol=1e-9)


def test_bind_length_mismatch():
    spec = get_preset("box")
    with pytest.raises(BindingError, match="expected 7"):
        bind_state(spec, np.zeros(3), default_unmodeled(spec))
    with pytest.raises(BindingError, match="unmodeled"):
        bind_state(spec, default_state(spec), np.zeros(2))


def test_bind_is_pure():
    spec = get_preset("box")
    x, z = sample_scene(spec, 5)
    a, b = bind_state(spec, x, z), bind_state(spec, x, z)
    assert a == b


def test_obstacle_count_limits_group():
    spec = get_preset("box")
    x, z = sample_scene(spec, 2)
    for k in range(4):
        z[3] = k
        ids = [p.object_id for p in bind_state(spec, x, z).primitives]
        assert sum(i.startswith("obstacle") for i in ids) == k


def test_target_pose():
    spec = get_preset("box_translation")
    np.testing.assert_array_equal(target_pose(spec, [0.1, 0.0, 0.9]).translation, [0.1, 0.0, 0.9])


# -- sampling ---------------------------------------------------------------------


def test_sample_deterministic():
    spec = get_preset("box")
    a, b = sample_scene(spec, 42), sample_scene(spec, 42)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_sample_distinct_seeds_distinct_z():
    spec = get_preset("box")
    zs = {tuple(sample_scene(spec, s)[1]) for s in range(200)}
    assert len(zs) == 200


def test_sample_within_ranges():
    spec = get_preset("box")
    for s in range(50):
        x, z = sample_scene(spec, s)
        assert -0.2 <= x[0] <= 0.2 and 0.85 <= x[2] <= 1.0
        assert np.linalg.norm(x[3:7]) == pytest.approx(1.0)
        assert 1.03 <= z[0] <= 1.15


def test_obstacle_count_uniform_chi_square():
    spec = get_preset("box")
    counts = np.bincount([int(sample_scene(spec, s)[1][3]) for s in range(10_000)], minlength=4)
    assert stats.chisquare(counts).pvalue > 0.01


# -- sweeps ------------------------------------------------------------------------


def test_sweep_three_steps_linspace():
    spec = get_preset("box_translation")
    x = np.array([0.0, 0.0, 0.9])
    out = sweep_axis(spec, x, "tx", 0.1, 3)
    np.testing.assert_allclose([s[0] for s in out], [-0.1, 0.0, 0.1], atol=1e-15)


@pytest.mark.parametrize("axis", ["tx", "ty", "tz", "rx", "ry", "rz", 0, "q"])
def test_sweep_middle_is_ground_truth(axis):
    spec = get_preset("box")
    x, _ = sample_scene(spec, 3)
    out = sweep_axis(spec, x, axis if axis != "q" else 3, 0.3, 7)
    assert len(out) == 7
    assert sum(np.array_equal(s, x) for s in out) == 1
    np.testing.assert_array_equal(out[3], x)


def test_sweep_translation_follows_object_axes():
    spec = get_preset("box")
    x, _ = sample_scene(spec, 4)
    R = quat_to_matrix(x[3:7])
    out = sweep_axis(spec, x, "ty", 0.1, 3)
    np.testing.assert_allclose(out[2][:3] - x[:3], 0.1 * R[:, 1], atol=1e-12)


def test_rotation_sweep_axis_angle_oracle():
    spec = get_preset("box")
    x, _ = sample_scene(spec, 6)
    out = sweep_axis(spec, x, "rz", np.pi, 9)
    R0 = quat_to_matrix(x[3:7])
    for s, angle in zip(out, np.linspace(-np.pi, np.pi, 9)):
        np.testing.assert_allclose(quat_to_matrix(s[3:7]), R0 @ _rot([0, 0, 1], angle), atol=1e-9)
        np.testing.assert_array_equal(s[:3], x[:3])


@pytest.mark.parametrize("steps", [2, 4, 1])
def test_sweep_bad_steps(steps):
    with pytest.raises(ValueError):
        sweep_axis(get_preset("box"), default_state(get_preset("box")), "tx", 0.1, steps)


def test_sweep_bad_axis():
    spec = get_preset("laptop")
    with pytest.raises(ValueError):
        sweep_axis(spec, [0.5], "beta", 0.1, 3)
    with pytest.raises(ValueError):
        sweep_axis(spec, [0.5], 4, 0.1, 3)


# -- validation and config files -------------------------------------------------


def test_invalid_spec_lists_every_problem():
    cam = Camera()
    objects = [ObjectSpec("a", "target", Box()), ObjectSpec("a", "ghost", Plane())]
    state = [Dof("tx", "a", "tx", (1.0, 0.0)), Dof("tx", "nobody", "ty", (0, 1))]
    with pytest.raises(ScenarioError) as err:
        ScenarioSpec("bad", cam, objects, state, [])
    text = " ".join(err.value.problems)
    assert "duplicate" in text and "role" in text and "range" in text and "nobody" in text


def test_camera_validation():
    with pytest.raises(ScenarioError):
        Camera(width=2)
    assert Camera.from_fov(64, 32, 90.0).fx == pytest.approx(32.0)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_scenario_roundtrip(name, tmp_path):
    spec = get_preset(name)
    assert scenario_from_dict(scenario_to_dict(spec)) == spec
    save_scenario(spec, tmp_path / "s.yaml")
    assert load_scenario(tmp_path / "s.yaml") == spec


def test_unknown_preset():
    with pytest.raises(KeyError, match="unknown preset"):
        get_preset("teapot")


def test_quaternion_composition_in_binding():
    spec = get_preset("box")
    q = quat_from_axis_angle([0, 0, 1], 0.5)
    x = np.array([0, 0, 0.9, *q])
    prim = bind_state(spec, x, default_unmodeled(spec)).primitives[0]
    np.testing.assert_allclose(prim.pose.rotation_matrix, _rot([0, 0, 1], 0.5), atol=1e-12)
    np.testing.assert_allclose(quat_multiply(q, [1, 0, 0, 0]), q)
