"""Compare the numba and numpy rasterizer backends on the standard benchmark.

Usage:
    python3 benchmarks/benchmark_backends.py [--repeats N] [--resolution R]

Renders the seeded 600-Gaussian scene from a ring camera with both backends,
times forward and backward passes, and verifies that the two backends agree
(forward images bitwise, gradients to floating-point rounding).
"""

import argparse
import time

import numpy as np

from freqsplat import synth
from freqsplat.render import (RenderOptions, render_backward,
                              render_level_with_state)


def time_backend(scene, camera, backend, repeats):
    opts = RenderOptions(backend=backend)
    k = scene.num_levels
    # warm-up (includes numba JIT compilation on first call)
    img, state = render_level_with_state(scene, camera, k, opts)
    grad = np.full_like(img, 1.0 / img.size)
    grads = render_backward(state, grad, scene)

    fwd = []
    bwd = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        img, state = render_level_with_state(scene, camera, k, opts)
        t1 = time.perf_counter()
        render_backward(state, grad, scene)
        t2 = time.perf_counter()
        fwd.append(t1 - t0)
        bwd.append(t2 - t1)
    return img, grads, min(fwd), min(bwd)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--resolution", type=int, default=128)
    args = parser.parse_args()

    scene = synth.make_scene(42, [300, 200, 100], 3)
    camera = synth.make_rig(42, 24, 3.0, resolution=args.resolution)[0]
    print(f"scene: {scene.count} Gaussians, 3 levels; "
          f"image {args.resolution}x{args.resolution}; "
          f"best of {args.repeats} runs\n")

    results = {}
    for backend in ("numba", "numpy"):
        try:
            results[backend] = time_backend(scene, camera, backend,
                                            args.repeats)
        except ImportError as exc:
            print(f"{backend:6s}  unavailable ({exc})")

    print(f"{'backend':8s}{'forward':>12s}{'backward':>12s}")
    for backend, (_, _, fwd, bwd) in results.items():
        print(f"{backend:8s}{fwd * 1e3:10.1f}ms{bwd * 1e3:10.1f}ms")

    if len(results) == 2:
        img_a, g_a, *_ = results["numba"]
        img_b, g_b, *_ = results["numpy"]
        print("\nforward images bitwise equal:",
              bool(np.array_equal(img_a, img_b)))
        rel = max(
            np.max(np.abs(x - y)) / max(np.max(np.abs(y)), 1e-30)
            for x, y in ((g_a.d_positions, g_b.d_positions),
                         (g_a.d_sh, g_b.d_sh),
                         (g_a.d_opacity_logits, g_b.d_opacity_logits)))
        print(f"max relative gradient difference: {rel:.2e} "
              "(accumulation-order rounding only)")


if __name__ == "__main__":
    main()
