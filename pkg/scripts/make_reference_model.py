"""Write the seeded reference detector (untrained) as a weights + layout pair.

    python scripts/make_reference_model.py --out models/ --seed 0
"""

import argparse
from pathlib import Path

from thermoguard.netfile import reference_model, save_model


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="models", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--head-scale", type=float, default=0.05,
                        help="std-dev of the random 1x1 head weights")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = reference_model(seed=args.seed, head_scale=args.head_scale)
    weights, layout = out / "reference.tgw", out / "reference.layout"
    save_model(model, weights, layout)
    n_params = sum(layer.weights.size + layer.bias.size
                   for _, layer in model.net.layers if hasattr(layer, "weights"))
    print(f"wrote {weights} and {layout}: {len(model.net.layers)} layers, "
          f"{n_params} conv parameters, feature {model.net.feature_shape}")


if __name__ == "__main__":
    main()
