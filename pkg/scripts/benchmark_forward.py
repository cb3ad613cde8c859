"""Time the reference backbone and detector on one 224x224 frame.

    python scripts/benchmark_forward.py --repeat 10
"""

import argparse
import time

import numpy as np

from thermoguard.engine import fold_network, forward
from thermoguard.netfile import reference_model
from thermoguard.yolo import DecodeConfig


def timed(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), float(np.median(times))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    model = reference_model(seed=args.seed)
    folded = fold_network(model.net)
    x = np.random.default_rng(args.seed).random((3, 224, 224)).astype(np.float32)
    cfg = DecodeConfig(0.5, 0.5)
    rows = [("backbone", lambda: forward(model.net, x)),
            ("backbone, BN folded", lambda: forward(folded, x)),
            ("backbone + head + decode + nms", lambda: model.detect(x, cfg))]
    for name, fn in rows:
        best, median = timed(fn, args.repeat)
        print(f"{name:32s} best {best * 1000:7.1f} ms   median {median * 1000:7.1f} ms")


if __name__ == "__main__":
    main()
