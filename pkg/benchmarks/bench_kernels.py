"""Compare the compiled and pure-Python kernel backends on realistic workloads.

    python benchmarks/bench_kernels.py [--repeat N]

Each workload runs through the public API with ``kernels._impl`` switched to
one backend, and the outputs of both backends are checked for agreement.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from vicsfm import kernels
from vicsfm.features import detect_sift
from vicsfm.imaging import RgbImage
from vicsfm.mesh import mesh_from_points, texture_mesh
from vicsfm.sfm import CameraIntrinsics, Pose, Reconstruction
from vicsfm.synthlab import make_scene, render_view


def sift_workload():
    img = render_view(make_scene(500, 2, seed=0), 0)

    def run():
        fs = detect_sift(img)
        return np.hstack([fs.keypoints, fs.descriptors.astype(np.float64)])

    return f"detect_sift {img.width}x{img.height}", run


def occlusion_workload():
    d = np.random.default_rng(0).normal(size=(4000, 3))
    mesh = mesh_from_points(d / np.linalg.norm(d, axis=1, keepdims=True), 0.08)
    pose = Pose.look_at([0.3, -0.2, -3.0], [0.0, 0.0, 0.0], up=(0.0, 1.0, 0.0))
    recon = Reconstruction(CameraIntrinsics(120.0, 100.0, 100.0, 0.0), {0: pose})
    img = RgbImage(np.random.default_rng(1).integers(0, 256, (201, 201, 3)).astype(np.uint8))

    def run():
        return texture_mesh(mesh, recon, {0: img}).colors

    return f"texture_mesh {len(mesh.vertices)} vertices / {len(mesh.faces)} faces", run


def best_time(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels are not built; only the Python backend is available")
    original = kernels._impl
    print(f"{'workload':<48}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    try:
        for make in (sift_workload, occlusion_workload):
            name, fn = make()
            times, outputs = [], []
            for b in backends:
                kernels._impl = kernels.get_backend(b)
                t, out = best_time(fn, args.repeat)
                times.append(t)
                outputs.append(out)
            line = f"{name:<48}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times)
            if len(backends) > 1:
                agree = np.allclose(outputs[0], outputs[1], atol=1e-9)
                line += f"{times[1] / times[0]:>11.1f}x" + ("" if agree else "  (outputs differ!)")
            print(line)
    finally:
        kernels._impl = original


if __name__ == "__main__":
    main()
