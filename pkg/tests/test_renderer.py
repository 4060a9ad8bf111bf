"""Projection and ray-cast rendering against analytic/brute-force oracles."""

import math

import numpy as np
import pytest

from evrl.renderer import (GROUND_INTENSITY, SKY_INTENSITY, CameraModel,
                           SceneObject, project, render, vec3)

LOG_SKY = np.float32(math.log(SKY_INTENSITY))
LOG_GROUND = np.float32(math.log(GROUND_INTENSITY))


def pixel_center_ray(camera, px, py):
    """Unit ray direction through a pixel center, built from the basis."""
    forward, right, up = camera.basis()
    f = camera.focal_px
    a = (px + 0.5 - camera.width / 2.0) / f
    b = (camera.height / 2.0 - (py + 0.5)) / f
    d = forward + a * right + b * up
    return d / np.linalg.norm(d)


class TestProject:
    def test_optical_axis_hits_principal_pixel(self):
        cam = CameraModel()
        for depth in (0.1, 1.0, 7.3, 250.0):
            point = cam.eye + depth * cam.basis()[0]
            assert project(point, cam) == (cam.width // 2, cam.height // 2)

    def test_point_behind_camera_absent(self):
        cam = CameraModel()
        behind = cam.eye - 2.0 * cam.basis()[0]
        assert project(behind, cam) is None
        beside = cam.eye + cam.basis()[1]  # zero depth, on the camera plane
        assert project(beside, cam) is None

    def test_edge_of_frustum_lands_in_last_column(self):
        cam = CameraModel()
        forward, right, _ = cam.basis()
        offset = math.tan(cam.horizontal_fov / 2.0)
        point = cam.eye + forward + offset * right
        px, py = project(point, cam)
        assert px == cam.width - 1
        mirrored = cam.eye + forward - offset * right
        assert project(mirrored, cam)[0] == 0

    def test_outside_frustum_absent(self):
        cam = CameraModel()
        forward, right, _ = cam.basis()
        offset = 1.01 * math.tan(cam.horizontal_fov / 2.0)
        assert project(cam.eye + forward + offset * right, cam) is None

    def test_agrees_with_ray_sampler(self, rng):
        # brute force: the grid pixel whose center ray best aligns with
        # the direction to the point must sit within 1 px of the answer
        cam = CameraModel(width=64, height=48, yaw=0.3,
                          position=vec3(0.4, -0.2, 0.0))
        forward, right, up = cam.basis()
        f = cam.focal_px
        a = (np.arange(cam.width) + 0.5 - cam.width / 2.0) / f
        b = (cam.height / 2.0 - (np.arange(cam.height) + 0.5)) / f
        rays = (forward[None, None, :] + a[None, :, None] * right[None, None, :]
                + b[:, None, None] * up[None, None, :])
        rays = rays / np.linalg.norm(rays, axis=2, keepdims=True)
        tan_h = np.tan(cam.horizontal_fov / 2.0)
        tan_v = (cam.height / 2.0) / f
        checked = 0
        for _ in range(300):
            # sample directions inside the view cone at random depths
            da = float(rng.uniform(-0.95, 0.95)) * tan_h
            db = float(rng.uniform(-0.95, 0.95)) * tan_v
            depth = float(rng.uniform(0.2, 6.0))
            point = cam.eye + depth * (forward + da * right + db * up)
            hit = project(point, cam)
            if hit is None:
                continue
            checked += 1
            direction = point - cam.eye
            direction = direction / np.linalg.norm(direction)
            align = rays @ direction
            by, bx = np.unravel_index(int(np.argmax(align)), align.shape)
            assert abs(bx - hit[0]) <= 1 and abs(by - hit[1]) <= 1
        assert checked == 300

    def test_yawed_camera_keeps_axis_centered(self):
        cam = CameraModel(yaw=1.1, position=vec3(2.0, -1.0, 0.0))
        point = cam.eye + 3.0 * cam.basis()[0]
        assert project(point, cam) == (cam.width // 2, cam.height // 2)


class TestRender:
    def test_empty_scene_is_two_band_background(self):
        cam = CameraModel(width=32, height=24)
        frame = render([], cam)
        assert frame.dtype == np.float32 and frame.shape == (24, 32)
        assert set(np.unique(frame)) == {LOG_GROUND, LOG_SKY}
        # level camera: top half sky, bottom half ground
        assert (frame[: 12] == LOG_SKY).all()
        assert (frame[12:] == LOG_GROUND).all()

    def test_sphere_disk_radius_matches_analytic(self):
        cam = CameraModel()
        d, r = 2.0, 0.4
        center = cam.eye + d * cam.basis()[0]
        frame = render([SceneObject("sphere", center, r)], cam)
        obj = frame == np.float32(math.log(0.1))
        # chord widths of the rows adjacent to the horizontal midline
        expected = 2.0 * cam.focal_px * math.tan(math.asin(r / d))
        for row in (cam.height // 2 - 1, cam.height // 2):
            width = int(obj[row].sum())
            assert abs(width - expected) <= 2.0
        # silhouette is left-right symmetric about the principal column
        cols = np.flatnonzero(obj[cam.height // 2])
        assert cols[0] + cols[-1] == cam.width - 1

    def test_nearer_object_wins(self):
        cam = CameraModel(width=48, height=36)
        far = SceneObject("sphere", cam.eye + vec3(3.0, 0.0, 0.0), 0.8, intensity=0.2)
        near = SceneObject("sphere", cam.eye + vec3(1.5, 0.0, 0.0), 0.2, intensity=0.05)
        ab = render([far, near], cam)
        ba = render([near, far], cam)
        assert np.array_equal(ab, ba)
        assert ab[18, 24] == np.float32(math.log(0.05))
        # brute-force depth comparison on every contested pixel
        only_far = render([far], cam)
        only_near = render([near], cam)
        contested = (only_far == np.float32(math.log(0.2))) & \
                    (only_near == np.float32(math.log(0.05)))
        assert contested.any()
        assert (ab[contested] == np.float32(math.log(0.05))).all()

    def test_box_visible_and_behind_camera_invisible(self):
        cam = CameraModel(width=32, height=24)
        front = render([SceneObject("box", vec3(2.0, 0.0, 0.2), 0.2)], cam)
        assert (front == np.float32(math.log(0.1))).any()
        behind = render([SceneObject("box", vec3(-2.0, 0.0, 0.2), 0.2)], cam)
        assert not (behind == np.float32(math.log(0.1))).any()

    def test_deterministic(self):
        cam = CameraModel(width=40, height=30, yaw=0.2)
        scene = [SceneObject("sphere", vec3(1.5, 0.3, 0.3), 0.3),
                 SceneObject("box", vec3(2.0, -0.5, 0.25), 0.25)]
        assert np.array_equal(render(scene, cam), render(scene, cam))

    def test_translation_consistency_bit_exact(self):
        # dyadic horizontal offsets are exactly representable, so the
        # relative geometry (and thus the frame) is bit-identical
        offset = vec3(1.5, -0.25, 0.0)
        scene = [SceneObject("sphere", vec3(1.2, 0.1, 0.3), 0.3),
                 SceneObject("box", vec3(2.0, -0.6, 0.2), 0.2)]
        moved = [SceneObject(o.shape, o.center + offset, o.radius_or_half_extent,
                             o.intensity) for o in scene]
        cam = CameraModel(width=64, height=48, yaw=0.7)
        cam_moved = CameraModel(width=64, height=48, yaw=0.7,
                                position=cam.position + offset)
        assert np.array_equal(render(scene, cam), render(moved, cam_moved))

    def test_all_values_finite_and_nonpositive(self, rng):
        cam = CameraModel(width=32, height=24, yaw=float(rng.uniform(-3, 3)))
        scene = [SceneObject("sphere", vec3(*rng.uniform(-3, 3, 3)), 0.4),
                 SceneObject("box", vec3(*rng.uniform(-3, 3, 3)), 0.3)]
        frame = render(scene, cam)
        assert np.isfinite(frame).all() and (frame <= 0.0).all()

    def test_camera_inside_sphere_sees_it_everywhere(self):
        # radius below mount height: the shell stays above the ground,
        # so every ray exits through the sphere surface first
        cam = CameraModel(width=16, height=12)
        frame = render([SceneObject("sphere", cam.eye, 0.1)], cam)
        assert (frame == np.float32(math.log(0.1))).all()


class TestValidation:
    def test_camera_fov_bounds(self):
        with pytest.raises(ValueError):
            CameraModel(horizontal_fov=0.0)
        with pytest.raises(ValueError):
            CameraModel(horizontal_fov=math.pi)

    def test_scene_object_validation(self):
        with pytest.raises(ValueError):
            SceneObject("cone", vec3(1, 0, 0), 0.5)
        with pytest.raises(ValueError):
            SceneObject("sphere", vec3(1, 0, 0), 0.0)
        with pytest.raises(ValueError):
            SceneObject("sphere", vec3(1, 0, 0), 0.5, intensity=0.0)
