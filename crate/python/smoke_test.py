"""Smoke test for the streetloc extension: geometry helpers plus a tiny run
of the whole pipeline on a short synthetic street."""

import json
import math
import sys
import tempfile
from pathlib import Path

import streetloc


def check_geometry():
    pose = streetloc.Pose.from_quaternion([0.9, 0.1, -0.2, 0.3], [1.0, 2.0, 3.0])
    x = pose.transform([0.5, -1.0, 4.0])
    y = pose.inverse().transform(x)
    assert max(abs(a - b) for a, b in zip(y, [0.5, -1.0, 4.0])) < 1e-12

    cam = streetloc.Camera(500.0, 500.0, 319.5, 239.5, 640, 480)
    assert cam.project([0.0, 0.0, -1.0]) is None
    u, v = cam.project([0.2, -0.1, 2.0])
    ray = cam.unproject((u, v))
    assert abs(ray[0] - 0.1) < 1e-12 and abs(ray[1] + 0.05) < 1e-12

    x, y = streetloc.wgs84_to_lambert(48.801631, 2.131509)
    lat, lon = streetloc.lambert_to_wgs84(x, y)
    assert abs(lat - 48.801631) < 1e-9 and abs(lon - 2.131509) < 1e-9

    assert streetloc.tukey_rho(0.0, 4.0) == 0.0
    assert abs(streetloc.tukey_rho(10.0, 4.0) - 16.0 / 6.0) < 1e-12

    # PnP on exact correspondences recovers the pose.
    truth = streetloc.Pose.from_quaternion([1.0, 0.05, 0.1, -0.02], [0.3, -0.2, 0.5])
    points, pixels = [], []
    for i in range(40):
        p = [math.sin(i) * 3.0, math.cos(1.7 * i) * 2.0, 8.0 + (i % 7)]
        c = truth.transform(p)
        points.append(p)
        pixels.append(cam.project(c))
    est, inliers = streetloc.solve_pnp(points, pixels, cam, threshold=2.0, seed=1)
    assert len(inliers) == 40
    assert est.rotation_distance(truth) < 1e-6 and est.translation_distance(truth) < 1e-6

    try:
        streetloc.Config('{"no_such_key": 1}')
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key accepted")


def check_pipeline():
    config = streetloc.Config(
        json.dumps({"synthetic": {"street_length": 20.0, "query": {"count": 2, "start": 6.0}}})
    )
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        panos, frames = streetloc.synth(root / "ds", config, seed=8)
        assert (panos, frames) == (3, 2), (panos, frames)
        prep = streetloc.prepare(root / "ds", root / "store", config)
        assert prep["views"] == 24, prep
        streetloc.build(root / "store", root / "db", config)
        records = streetloc.localize(root / "ds", root / "store", root / "db", root / "run", config)
        assert len(records) == 2
        report = streetloc.evaluate(root / "run" / "records.jsonl", root / "ds", root / "eval", config)
        print(f"localized {report['localized']}/{report['frames']}, median error {report['median_error_m']}")
        assert report["localized"] >= 1


def main():
    check_geometry()
    check_pipeline()
    print("smoke test ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
