#!/usr/bin/env python3
"""Generate the synthetic 3-frame KITTI-format fixture used by the tests.

Scenes are built in the velodyne frame: a noisy ground disc plus box-shaped
objects whose sensor-facing surfaces are sampled. Returns hidden behind a
nearer object are removed, so occluded objects come out incomplete. Labels are
written in KITTI camera coordinates through the calibration below, and points
are sampled inside the box reconstructed from the rounded label text, so the
label files and the clouds agree exactly.

    python3 tools/make_kitti_fixture.py tests/fixtures/kitti
"""

import math
import sys
from pathlib import Path

import numpy as np

TR_VELO_TO_CAM = [
    7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03,
    1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02,
    9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01,
]
R0_RECT = [
    9.999239e-01, 9.837760e-03, -7.445048e-03,
    -9.869795e-03, 9.999421e-01, -4.278459e-03,
    7.402527e-03, 4.351614e-03, 9.999631e-01,
]
P2 = [
    7.215377e02, 0.0, 6.095593e02, 4.485728e01,
    0.0, 7.215377e02, 1.728540e02, 2.163791e-01,
    0.0, 0.0, 1.0, 2.745884e-03,
]
P3 = [
    7.215377e02, 0.0, 6.095593e02, -3.395242e02,
    0.0, 7.215377e02, 1.728540e02, 2.199936e00,
    0.0, 0.0, 1.0, 2.729905e-03,
]
P0 = [
    7.215377e02, 0.0, 6.095593e02, 0.0,
    0.0, 7.215377e02, 1.728540e02, 0.0,
    0.0, 0.0, 1.0, 0.0,
]
TR_IMU_TO_VELO = [
    9.999976e-01, 7.553071e-04, -2.035826e-03, -8.086759e-01,
    -7.854027e-04, 9.998898e-01, -1.482298e-02, 3.195559e-01,
    2.024406e-03, 1.482454e-02, 9.998881e-01, -7.997231e-01,
]

GROUND_Z = -1.73

# (kitti type, velo center x, y, length, width, height, yaw)
SCENES = {
    "000000": [
        ("Car", 12.0, 0.3, 4.1, 1.7, 1.5, 0.05),
        ("Pedestrian", 7.0, 0.2, 0.8, 0.7, 1.75, 0.3),
        ("Car", 18.0, -5.5, 4.3, 1.8, 1.6, 1.45),
        ("Van", 22.0, 6.0, 5.2, 2.0, 2.2, -0.1),
        ("Cyclist", 9.5, 4.5, 1.8, 0.6, 1.7, 1.2),
        ("Car", 30.0, 1.0, 4.0, 1.7, 1.5, 3.05),
        ("DontCare", 40.0, -12.0, 3.0, 3.0, 2.0, 0.0),
    ],
    "000001": [
        ("Truck", 16.0, -3.0, 8.5, 2.6, 3.2, 0.02),
        ("Car", 27.0, -4.5, 4.2, 1.7, 1.5, 0.0),
        ("Tram", 25.0, 9.0, 14.0, 2.7, 3.4, 0.08),
        ("Misc", 8.0, -6.0, 1.2, 1.0, 1.0, 0.7),
        ("Person_sitting", 6.5, 3.5, 0.6, 0.6, 1.1, -0.4),
        ("Pedestrian", 11.0, 2.0, 0.7, 0.6, 1.7, 2.0),
        ("Pedestrian", 14.0, 2.6, 0.7, 0.6, 1.65, 1.8),
        ("Car", 10.0, -12.0, 4.0, 1.7, 1.45, -1.5),
        ("DontCare", 35.0, 0.0, 2.0, 2.0, 2.0, 0.0),
    ],
    "000002": [
        ("Car", 9.0, -2.5, 4.0, 1.7, 1.5, 0.1),
        ("Car", 15.0, -2.0, 4.2, 1.8, 1.55, 0.05),
        ("Car", 21.0, -1.6, 4.4, 1.7, 1.5, 0.0),
        ("Van", 13.0, 5.5, 5.0, 2.0, 2.1, 0.02),
        ("Pedestrian", 5.5, 1.5, 0.7, 0.6, 1.8, 0.0),
        ("Cyclist", 19.0, 8.5, 1.7, 0.6, 1.75, -0.2),
        ("Car", -12.0, -3.0, 4.1, 1.7, 1.5, 3.1),
        ("Misc", 90.0, -40.0, 2.0, 1.5, 1.2, 0.0),
    ],
}


def mat34(v):
    m = np.eye(4)
    m[:3, :4] = np.asarray(v).reshape(3, 4)
    return m


def velo_to_rect():
    r0 = np.eye(4)
    r0[:3, :3] = np.asarray(R0_RECT).reshape(3, 3)
    return r0 @ mat34(TR_VELO_TO_CAM)


def label_for(obj, v2r):
    kind, cx, cy, length, width, height, yaw = obj
    center = np.array([cx, cy, GROUND_Z + height / 2.0, 1.0])
    rect_center = (v2r @ center)[:3]
    down = np.array([0.0, height / 2.0, 0.0])
    loc = rect_center + down
    heading = v2r[:3, :3] @ np.array([math.cos(yaw), math.sin(yaw), 0.0])
    ry = math.atan2(-heading[2], heading[0])
    alpha = ry - math.atan2(loc[0], loc[2])
    alpha = math.atan2(math.sin(alpha), math.cos(alpha))
    p2 = np.asarray(P2).reshape(3, 4)
    corners = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                c = np.array([cx, cy, GROUND_Z + height / 2.0])
                c += np.array([math.cos(yaw), math.sin(yaw), 0.0]) * sx * length / 2
                c += np.array([-math.sin(yaw), math.cos(yaw), 0.0]) * sy * width / 2
                c += np.array([0.0, 0.0, 1.0]) * sz * height / 2
                corners.append((v2r @ np.append(c, 1.0))[:3])
    corners = np.array(corners)
    if np.all(corners[:, 2] > 0.5):
        uvw = (p2 @ np.hstack([corners, np.ones((8, 1))]).T).T
        uv = uvw[:, :2] / uvw[:, 2:3]
        x1, y1 = np.clip(uv.min(axis=0), 0, [1241, 374])
        x2, y2 = np.clip(uv.max(axis=0), 0, [1241, 374])
    else:
        x1 = y1 = x2 = y2 = 0.0
    trunc = 0.0
    occ = 0
    fields = [kind, f"{trunc:.2f}", str(occ), f"{alpha:.2f}",
              f"{x1:.2f}", f"{y1:.2f}", f"{x2:.2f}", f"{y2:.2f}",
              f"{height:.2f}", f"{width:.2f}", f"{length:.2f}",
              f"{loc[0]:.2f}", f"{loc[1]:.2f}", f"{loc[2]:.2f}", f"{ry:.2f}"]
    return " ".join(fields)


def box_from_label(line, r2v):
    t = line.split()
    h, w, l = float(t[8]), float(t[9]), float(t[10])
    loc = np.array([float(t[11]), float(t[12]), float(t[13])])
    ry = float(t[14])
    center = (r2v @ np.append(loc - np.array([0.0, h / 2.0, 0.0]), 1.0))[:3]
    heading = r2v[:3, :3] @ np.array([math.cos(ry), 0.0, -math.sin(ry)])
    yaw = math.atan2(heading[1], heading[0])
    return center, np.array([l, w, h]), yaw


def to_local(points, center, yaw):
    d = points - center
    c, s = math.cos(yaw), math.sin(yaw)
    return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1)


def segment_hits_box(points, center, dims, yaw):
    """True where the open segment origin->point passes through the box."""
    local_o = to_local(np.zeros((1, 3)), center, yaw)[0]
    local_p = to_local(points, center, yaw)
    d = local_p - local_o
    half = dims / 2.0
    t0 = np.zeros(len(points))
    t1 = np.full(len(points), 0.98)
    for a in range(3):
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (-half[a] - local_o[a]) / d[:, a]
            tb = (half[a] - local_o[a]) / d[:, a]
        lo = np.minimum(ta, tb)
        hi = np.maximum(ta, tb)
        parallel = np.abs(d[:, a]) < 1e-12
        inside = np.abs(local_o[a]) <= half[a]
        lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
        t0 = np.maximum(t0, lo)
        t1 = np.minimum(t1, hi)
    return t0 <= t1


def sample_box_surface(rng, center, dims, yaw, inset=0.08):
    half = dims / 2.0 - inset
    dist = max(np.linalg.norm(center[:2]), 1.0)
    out = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            normal_local = np.zeros(3)
            normal_local[axis] = sign
            c, s = math.cos(yaw), math.sin(yaw)
            normal = np.array([c * normal_local[0] - s * normal_local[1],
                               s * normal_local[0] + c * normal_local[1], normal_local[2]])
            face_center = center + normal * (dims[axis] / 2.0)
            if np.dot(normal, face_center) >= 0.0:
                continue
            other = [a for a in range(3) if a != axis]
            area = dims[other[0]] * dims[other[1]]
            n = int(np.clip(area * 900.0 / (dist / 5.0) ** 2, 12, 900))
            local = np.zeros((n, 3))
            local[:, axis] = sign * half[axis]
            for a in other:
                local[:, a] = rng.uniform(-half[a], half[a], n)
            world = np.stack([c * local[:, 0] - s * local[:, 1] + center[0],
                              s * local[:, 0] + c * local[:, 1] + center[1],
                              local[:, 2] + center[2]], axis=1)
            out.append(world)
    return np.concatenate(out) if out else np.zeros((0, 3))


def build_frame(frame_id, objects, rng, v2r):
    r2v = np.linalg.inv(v2r)
    labels = [label_for(o, v2r) for o in objects]
    boxes = [box_from_label(line, r2v) for line in labels]

    n_ground = 7000
    radius = 35.0 * np.sqrt(rng.uniform(0.02, 1.0, n_ground))
    theta = rng.uniform(-math.pi, math.pi, n_ground)
    ground = np.stack([radius * np.cos(theta), radius * np.sin(theta),
                       GROUND_Z + rng.normal(0.0, 0.02, n_ground)], axis=1)

    clouds = [ground]
    for (kind, *_), (center, dims, yaw) in zip(objects, boxes):
        if kind == "DontCare":
            continue
        clouds.append(sample_box_surface(rng, center, dims, yaw))
    points = np.concatenate(clouds)

    # Drop returns hidden behind any labeled box, and ground under boxes.
    keep = np.ones(len(points), dtype=bool)
    for (kind, *_), (center, dims, yaw) in zip(objects, boxes):
        if kind == "DontCare":
            continue
        keep &= ~segment_hits_box(points, center, dims, yaw)
        local = to_local(points, center, yaw)
        under = np.all(np.abs(local[:, :2]) <= dims[:2] / 2.0, axis=1) & (points[:, 2] < center[2] - dims[2] / 2.0 + 0.1)
        keep &= ~under
    points = points[keep]
    reflectance = rng.uniform(0.0, 1.0, len(points))
    cloud = np.concatenate([points, reflectance[:, None]], axis=1).astype("<f4")
    return cloud, labels


def calib_text():
    def row(key, values):
        return key + ": " + " ".join(f"{v:.12e}" for v in values)

    return "\n".join([
        row("P0", P0), row("P1", P0), row("P2", P2), row("P3", P3),
        row("R0_rect", R0_RECT), row("Tr_velo_to_cam", TR_VELO_TO_CAM),
        row("Tr_imu_to_velo", TR_IMU_TO_VELO),
    ]) + "\n"


def main():
    root = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/kitti")
    for sub in ("velodyne", "label_2", "calib"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20190415)
    v2r = velo_to_rect()
    for frame_id, objects in SCENES.items():
        cloud, labels = build_frame(frame_id, objects, rng, v2r)
        cloud.tofile(root / "velodyne" / f"{frame_id}.bin")
        (root / "label_2" / f"{frame_id}.txt").write_text("\n".join(labels) + "\n")
        (root / "calib" / f"{frame_id}.txt").write_text(calib_text())
        print(frame_id, len(cloud), "points,", len(labels), "labels")


if __name__ == "__main__":
    main()
