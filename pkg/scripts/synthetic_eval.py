"""AP and miss rate on perturbed ground truth, swept over perturbation strength.

Shows how the metrics respond to dropped, jittered and spurious boxes.  There is
no trained detector here; this only exercises the scoring protocol.

    python scripts/synthetic_eval.py --frames 50 --seeds 5
"""

import argparse

import numpy as np

from thermoguard.evaluation import evaluate, make_synthetic_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--frames", type=int, default=50)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--iou", type=float, default=0.5)
    parser.add_argument("--score-threshold", type=float, default=0.5)
    args = parser.parse_args()

    print(f"{'drop':>5} {'jitter':>6} {'spur':>5}   {'AP':>13}   {'miss rate':>13}")
    for drop, jitter, spurious in [(0.0, 0.0, 0.0), (0.1, 0.05, 0.1), (0.1, 0.2, 0.1),
                                   (0.3, 0.05, 0.3), (0.5, 0.1, 0.5)]:
        aps, misses = [], []
        for seed in range(args.seeds):
            data = make_synthetic_dataset(args.frames, seed, drop, jitter, spurious)
            summary, _ = evaluate([(d, g) for _, d, g in data], args.iou, args.score_threshold)
            aps.append(summary.average_precision)
            misses.append(summary.miss_rate)
        print(f"{drop:5.2f} {jitter:6.2f} {spurious:5.2f}   "
              f"{np.mean(aps):.3f} ± {np.std(aps):.3f}   {np.mean(misses):.3f} ± {np.std(misses):.3f}")


if __name__ == "__main__":
    main()
