"""Smoke test for the dept extension module. Run after `maturin develop`."""

import math
import struct
from pathlib import Path

import dept

CALIB = Path(__file__).resolve().parents[2] / "core" / "tests" / "fixtures" / "calib_000007.txt"


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    cam = dept.CameraModel(707.0493, 707.0493, 604.0814, 180.5066, 1242, 375)
    u, v, d = cam.project(1.5, -0.3, 12.0)
    x, y, z = cam.backproject(u, v, d)
    assert close(x, 1.5) and close(y, -0.3) and close(z, 12.0)
    assert dept.project_point(cam, 1.5, -0.3, 12.0) == (u, v, d)
    assert cam.grid_dims(4) == (311, 94)
    try:
        cam.project(0.0, 0.0, -1.0)
    except dept.DeptError:
        pass
    else:
        raise AssertionError("point behind the camera projected")

    calib = dept.KittiCalib(CALIB.read_text())
    assert calib.camera.fx == 707.0493
    w, h, cells = calib.sparse_depth([(10.0, 0.0, 0.0, 0.5), (12.0, 0.0, 0.0, 0.5), (-5.0, 0.0, 0.0, 0.1)])
    filled = [c for c in cells if c is not None]
    assert (w, h) == (311, 94) and len(filled) <= 2 and min(filled) < 10.0

    loss, dz, ds = dept.laplace_depth_loss(11.0, math.log(math.sqrt(2.0)), 10.0)
    assert close(loss, 1.0 + 0.5 * math.log(2.0))
    loss, grad, positives = dept.focal_heatmap_loss([0.5], [1.0], 1, 1, 1)
    assert close(loss, -0.25 * math.log(0.5)) and positives == 1 and len(grad) == 1

    car, bicycle = dept.class_weights([513462, 11154])
    assert car == 1.0 and abs(bicycle - 6.7853) < 1e-3

    assert close(dept.gaussian_sigma(1.0, 1.0), 2.0 / 3.0)
    assert dept.overlap_radius(40.0, 30.0) > 0.0
    hm = dept.corner_heatmaps([(8.0, 12.0, 40.0, 36.0)], 16, 16)
    assert len(hm) == 4 * 16 * 16 and max(hm) == 1.0 and min(hm) >= 0.0

    depth = [None] * 121
    depth[60] = 12.0
    for sigma, n in [(0.2, 25), (0.5, 9), (0.9, 1)]:
        out = dept.propagate(depth, [sigma] * 121, 11, 11)
        assert sum(c is not None for c in out) == n
    assert dept.propagate(depth, [0.2] * 121, 11, 11)[60] == (12.0, "original", 60)

    pts = dept.read_velodyne_bin(struct.pack("<8f", 1.0, 2.0, 3.0, 0.5, -1.5, 0.25, 7.0, 0.0))
    assert pts == [(1.0, 2.0, 3.0, 0.5), (-1.5, 0.25, 7.0, 0.0)]

    passed, report = dept.gradcheck(0)
    assert passed, report

    print(f"dept {dept.__version__}: python smoke test passed")


if __name__ == "__main__":
    main()
