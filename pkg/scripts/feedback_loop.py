"""Monte Carlo comparison of adaptive and naive placement on a stacked wall.

Usage: python3 scripts/feedback_loop.py [--layers 18] [--seeds 100] [--sigma-mm 0.5]
"""
import argparse
import math

import numpy as np

from lamina.fabsim import ToleranceModel, run_fabrication
from lamina.inventory import Inventory, InventoryBin, allocate
from lamina.layout import all_elements
from lamina.synthetic import row_stack


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--layers", type=int, default=18)
    p.add_argument("--per-layer", type=int, default=3)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--sigma-mm", type=float, default=0.5, help="board thickness sigma")
    p.add_argument("--sensor-mm", type=float, default=0.2, help="scanner noise sigma")
    args = p.parse_args()

    layers = row_stack([1.2] * (args.layers * args.per_layer), args.per_layer)
    inv = Inventory([InventoryBin("n2438", 2.438, 2.438, math.inf, "new")])
    plan = allocate(all_elements(layers), inv)
    tol = ToleranceModel.gaussian(args.sigma_mm / 1000, 0.0, args.sensor_mm / 1000)
    adaptive, naive = [], []
    for seed in range(args.seeds):
        adaptive.append(run_fabrication(layers, inv, tol, plan, mode="adaptive", seed=seed).summary.final_layer_height_error)
        naive.append(run_fabrication(layers, inv, tol, plan, mode="naive", seed=seed).summary.final_layer_height_error)
    a, n = np.array(adaptive) * 1000, np.array(naive) * 1000
    print(f"{args.layers} layers, {args.seeds} paired seeds, thickness sigma {args.sigma_mm} mm")
    print(f"final-layer height error (mm)   mean    p95     max")
    print(f"  adaptive                     {a.mean():6.3f} {np.percentile(a, 95):6.3f} {a.max():6.3f}")
    print(f"  naive                        {n.mean():6.3f} {np.percentile(n, 95):6.3f} {n.max():6.3f}")
    print(f"adaptive better in {int((a < n).sum())}/{args.seeds} runs")


if __name__ == "__main__":
    main()
