"""Time the compiled kernels against the numpy fallback.

The kernel flavour is fixed at import time by TRAJRECON_NUMBA, so each
flavour runs in its own subprocess. Every case runs once untimed first so
JIT compilation is not counted.

    python benchmarks/bench_kernels.py --repeat 3
"""
import argparse
import json
import os
import subprocess
import sys
import time


def _cases(size):
    import numpy as np

    from trajrecon import _kernels
    from trajrecon.association import ncc_online, solve_batch
    from trajrecon.benchgen import synthetic_stream
    from trajrecon.costs import CostModelParams
    from trajrecon.evaluation import match_frames
    from trajrecon.rectify import RectificationProblem, RectifierConfig, solve_axis

    params = CostModelParams()
    small = synthetic_stream(60 * size, seed=1, hz=5.0)
    stream = synthetic_stream(400 * size, seed=2, hz=5.0)

    rng = np.random.default_rng(0)
    n = 750 * size
    t = np.arange(n) * 0.04
    z = 60 * t + rng.normal(0, 1, n)
    prob = RectificationProblem.from_config(z, np.arange(n), n, RectifierConfig(), direction=1)

    m = 400
    boxes = [rng.uniform(0, 500, m), None, rng.uniform(0, 48, m), None]
    boxes[1] = boxes[0] + 15.0
    boxes[3] = boxes[2] + 6.0
    other = [b + rng.normal(0, 2, m) for b in boxes]

    def online():
        st = ncc_online(stream, params, horizon=30.0)
        st.flush()

    return {
        "batch association (Bellman-Ford)": lambda: solve_batch(small, params),
        "online association (Dijkstra)": online,
        f"rectification QP, n={n}": lambda: solve_axis(prob),
        f"IOU matrix {m}x{m}": lambda: _kernels.iou_matrix(*boxes, *other),
        "frame matching": lambda: match_frames(small, small),
    }


def _child(size, repeat):
    from trajrecon import _kernels

    out = {"numba": _kernels.USE_NUMBA, "times": {}}
    for name, fn in _cases(size).items():
        fn()  # warm-up / compile
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out["times"][name] = best
    print(json.dumps(out))


def _run(flag, size, repeat):
    env = dict(os.environ, TRAJRECON_NUMBA=flag)
    cmd = [sys.executable, __file__, "--child", "--size", str(size), "--repeat", str(repeat)]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=1, help="problem size multiplier")
    ap.add_argument("--repeat", type=int, default=3, help="timed runs per case (best is reported)")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.child:
        _child(args.size, args.repeat)
        return 0
    fast = _run("1", args.size, args.repeat)
    slow = _run("0", args.size, args.repeat)
    if not fast["numba"]:
        print("numba is not installed; both columns use the numpy path")
    print(f"{'case':<36}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for name, tf in fast["times"].items():
        ts = slow["times"][name]
        print(f"{name:<36}{tf:>12.4f}{ts:>12.4f}{ts / tf:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
