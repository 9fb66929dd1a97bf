import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lumen.envmap import solid_angle_weights
from lumen.errors import InvalidArgumentError
from lumen.scenegen import (
    FACES,
    SceneParams,
    augment,
    derive_rng,
    extract_vpls,
    face_energy,
    face_mask,
    pose_from_uniforms,
    render_panorama,
    sample_camera_pose,
    sample_object_rotation,
    sample_scene,
    uniform_scene,
)


def _scenes_equal(a, b):
    return (
        np.array_equal(a.extents, b.extents)
        and all(np.array_equal(x, y) for x, y in zip(a.albedo, b.albedo))
        and all(np.array_equal(x, y) for x, y in zip(a.emission, b.emission))
        and a.ambient == b.ambient
    )


class TestSampleScene:
    def test_deterministic(self):
        assert _scenes_equal(sample_scene(7), sample_scene(7))
        assert not _scenes_equal(sample_scene(7), sample_scene(8))

    def test_zero_lights_rejected(self):
        with pytest.raises(InvalidArgumentError):
            sample_scene(0, SceneParams(lights=(0, 0)))

    @pytest.mark.parametrize("field, value", [("width", (5.0, 3.0)), ("intensity", (0.0, 1.0)), ("height", (-1.0, 2.0))])
    def test_empty_ranges_rejected(self, field, value):
        with pytest.raises(InvalidArgumentError):
            sample_scene(0, SceneParams(**{field: value}))

    def test_property_sweep(self):
        p = SceneParams(lights=(2, 3), texels=4)
        for seed in range(1000):
            s = sample_scene(seed, p)
            assert 2 <= len(s.lights) <= 3
            assert all(np.all(e >= 0) for e in s.emission)
            assert any(np.any(e > 0) for e in s.emission)
            assert all(np.all((a >= 0) & (a <= 1)) for a in s.albedo)
            assert np.all(s.extents > 0)

    def test_intensity_range(self):
        p = SceneParams()
        for seed in range(200):
            for light in sample_scene(seed, p).lights:
                top = light.color.max() / p.ambient
                assert p.intensity[0] * 0.8 <= top <= p.intensity[1]

    def test_albedo_varies_smoothly(self):
        s = sample_scene(3)
        a = s.albedo[0][..., 0]
        assert a.std() > 0
        # low-frequency noise: neighbouring texels differ far less than the overall spread
        assert np.abs(np.diff(a, axis=0)).mean() < 0.25 * (a.max() - a.min())

    def test_params_dict_round_trip(self):
        p = SceneParams(lights=(1, 2), ambient=0.1)
        assert SceneParams.from_dict(p.to_dict()) == p


class TestRenderPanorama:
    def test_uniform_box_from_center(self):
        s = uniform_scene([4.0, 4.0, 4.0], emission=1.0)
        e = render_panorama(s, s.center, 16, 32)
        np.testing.assert_array_equal(e, 1.0)

    def test_radiance_is_emission_plus_albedo_ambient(self):
        s = uniform_scene([3.0, 5.0, 2.5], emission=0.25, albedo=0.5, ambient=0.2)
        e = render_panorama(s, np.array([1.0, 1.0, 1.0]), 8, 16)
        np.testing.assert_allclose(e, 0.25 + 0.5 * 0.2)

    def test_deterministic(self):
        s = sample_scene(11)
        cam = sample_camera_pose(s, 2)
        assert np.array_equal(render_panorama(s, cam, 16, 32), render_panorama(s, cam, 16, 32))

    @pytest.mark.parametrize("cam", [[0.0, 1.0, 1.0], [1.0, 1.0, 2.0], [-1.0, 1.0, 1.0], [1.0, 9.0, 1.0]])
    def test_camera_outside_or_on_boundary(self, cam):
        s = uniform_scene([2.0, 2.0, 2.0])
        with pytest.raises(InvalidArgumentError):
            render_panorama(s, np.array(cam), 4, 8)

    def test_approaching_wall_enlarges_it(self):
        s = uniform_scene([4.0, 4.0, 3.0])
        w = solid_angle_weights(32, 64)
        x1 = FACES.index("x1")
        far = (w * face_mask(s, np.array([2.0, 2.0, 1.5]), 32, 64, x1)).sum()
        near = (w * face_mask(s, np.array([3.5, 2.0, 1.5]), 32, 64, x1)).sum()
        assert near > far

    def test_symmetric_scene_quarter_turn(self):
        s = uniform_scene([4.0, 4.0, 4.0], emission=0.0)
        for f, v in zip(range(6), (1.0, 1.0, 1.0, 1.0, 2.0, 3.0)):
            s.emission[f][:] = v
        e = render_panorama(s, s.center, 16, 32)
        np.testing.assert_array_equal(e, np.roll(e, 8, axis=1))

    def test_ceiling_is_up(self):
        s = uniform_scene([4.0, 4.0, 4.0], emission=0.0)
        s.emission[FACES.index("ceiling")][:] = 5.0
        e = render_panorama(s, s.center, 16, 32)
        assert e[0].min() == 5.0 and e[-1].max() == 0.0


class TestCameraPose:
    def test_inside_shrunk_box(self):
        s = sample_scene(5)
        lo, hi = 0.1 * s.extents, 0.9 * s.extents
        poses = np.array([sample_camera_pose(s, i) for i in range(10000)])
        assert np.all(poses > lo) and np.all(poses < hi)

    def test_same_seed_same_pose(self):
        s = sample_scene(5)
        assert np.array_equal(sample_camera_pose(s, 9), sample_camera_pose(s, 9))

    def test_mean_near_center(self):
        s = sample_scene(5)
        poses = np.array([sample_camera_pose(s, i) for i in range(4000)])
        sigma = 0.8 * s.extents / math.sqrt(12) / math.sqrt(len(poses))
        assert np.all(np.abs(poses.mean(axis=0) - s.center) < 3 * sigma)


class TestAugment:
    def test_center_pose_matches_render(self):
        s = sample_scene(4)
        maps, _ = augment(s, 1, 16, 32, seed=0, poses=[s.center])
        assert np.array_equal(maps[0], render_panorama(s, s.center, 16, 32))

    def test_distinct_views(self):
        s = sample_scene(4)
        maps, poses = augment(s, 8, 16, 32, seed=1)
        assert len(maps) == 8 and len(poses) == 8
        for i in range(8):
            for j in range(i + 1, 8):
                assert np.abs(maps[i] - maps[j]).max() > 0

    def test_pure_function_of_scene_and_seed(self):
        s = sample_scene(4)
        a, pa = augment(s, 3, 8, 16, seed=5)
        b, pb = augment(s, 3, 8, 16, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert all(np.array_equal(x, y) for x, y in zip(pa, pb))

    def test_bad_count(self):
        with pytest.raises(InvalidArgumentError):
            augment(sample_scene(0), 0, 8, 16, seed=0)

    def test_light_radiance_is_view_independent(self):
        # two ceiling lights; every view inside the box sees both at their exact emission
        s = uniform_scene([6.0, 6.0, 3.0], emission=0.0, albedo=0.0, texels=30)
        ceil = s.emission[FACES.index("ceiling")]
        ceil[3:7, 3:7] = 10.0
        ceil[22:26, 22:26] = 30.0
        maps, _ = augment(s, 6, 64, 128, seed=2)
        for e in maps:
            assert set(np.unique(e)) == {0.0, 10.0, 30.0}


    def test_light_energy_ranking_preserved(self):
        # solid-angle integrated energy falls off with distance, so the ranking
        # only survives when the brightness ratio dominates the distance ratio
        s = uniform_scene([6.0, 6.0, 3.0], emission=0.0, albedo=0.0, texels=30)
        ceil = s.emission[FACES.index("ceiling")]
        ceil[8:12, 8:12] = 1.0
        ceil[18:22, 18:22] = 100.0
        w = solid_angle_weights(64, 128)[..., None]
        maps, _ = augment(s, 40, 64, 128, seed=2)
        for e in maps:
            dim = (w * np.where(e == 1.0, e, 0)).sum()
            bright = (w * np.where(e == 100.0, e, 0)).sum()
            assert bright > dim


class TestVPLs:
    def test_unit_cube_res_one(self):
        s = uniform_scene([1.0, 1.0, 1.0], emission=1.0)
        vpls = extract_vpls(s, 1)
        assert len(vpls) == 6
        for v in vpls:
            assert np.linalg.norm(v.normal) == pytest.approx(1.0)
            # inward: pointing from the face position toward the center
            assert np.dot(v.normal, s.center - v.position) > 0

    def test_face_area_partition(self):
        s = sample_scene(2)
        res = 5
        vpls = extract_vpls(s, res)
        for f in range(6):
            su, sv = s.face_size(f)
            total = sum(v.scale for v in vpls[f * res * res:(f + 1) * res * res])
            assert total == pytest.approx(su * sv, rel=1e-9)

    def test_energy_refinement_consistency(self):
        s = uniform_scene([3.0, 4.0, 2.5], emission=2.0, albedo=0.3, ambient=0.1)
        energies = [sum(v.color * v.scale for v in extract_vpls(s, r)) for r in (1, 4, 16)]
        for e in energies[1:]:
            np.testing.assert_allclose(e, energies[0], rtol=1e-6)

    @pytest.mark.parametrize("res", [1, 3, 7, 32, 50])
    def test_energy_matches_face_integral(self, res):
        s = sample_scene(9)
        total = sum(v.color * v.scale for v in extract_vpls(s, res))
        np.testing.assert_allclose(total, face_energy(s), rtol=1e-6)

    def test_colors_nonnegative_scales_positive(self):
        for v in extract_vpls(sample_scene(1), 4):
            assert np.all(v.color >= 0) and v.scale > 0

    def test_bad_res(self):
        with pytest.raises(InvalidArgumentError):
            extract_vpls(sample_scene(0), 0)


class TestObjectRotation:
    def test_equator(self):
        assert pose_from_uniforms(0.3, 0.5).phi == pytest.approx(90.0)

    def test_endpoints(self):
        assert pose_from_uniforms(0.0, 0.0).phi == pytest.approx(180.0)
        assert pose_from_uniforms(0.0, 1.0 - 1e-12).phi < 1e-3
        assert pose_from_uniforms(0.0, 0.0).theta == -180.0

    @given(st.integers(0, 2**31))
    def test_ranges(self, seed):
        p = sample_object_rotation(seed)
        assert -180.0 <= p.theta < 180.0
        assert 0.0 <= p.phi <= 180.0
        R = p.rotation()
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)

    def test_axis_uniform_on_sphere(self):
        rng = derive_rng(0, 99)
        u = rng.uniform(size=(100000, 2))
        cos_phi = np.cos(np.radians([pose_from_uniforms(a, b).phi for a, b in u[:20000]]))
        # cos(phi) = 2x - 1 is uniform on [-1, 1]: mean 0, sd 1/sqrt(3)
        assert abs(cos_phi.mean()) < 3 / math.sqrt(3) / math.sqrt(len(cos_phi))
        assert cos_phi.var() == pytest.approx(1 / 3, rel=0.03)

    def test_rotation_maps_z_to_axis(self):
        p = pose_from_uniforms(0.75, 0.5)  # theta 90 deg, phi 90 deg
        np.testing.assert_allclose(p.rotation() @ [0, 0, 1], [0, 1, 0], atol=1e-12)


def test_derive_rng_streams_independent():
    a = derive_rng(1, 2).integers(1 << 30, size=4)
    b = derive_rng(1, 3).integers(1 << 30, size=4)
    c = derive_rng(1, 2).integers(1 << 30, size=4)
    assert not np.array_equal(a, b) and np.array_equal(a, c)
