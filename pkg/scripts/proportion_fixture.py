"""Manual versus robotic cut split on a fixture with a fixed share of short elements.

Usage: python3 scripts/proportion_fixture.py [--elements 1000] [--short 89]
"""
import argparse

from lamina.fabsim import ToleranceModel, run_fabrication
from lamina.inventory import allocate
from lamina.layout import all_elements
from lamina.synthetic import default_inventory, proportion_fixture


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--elements", type=int, default=1000)
    p.add_argument("--short", type=int, default=89, help="elements below the 0.35 m manual threshold")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    layers = proportion_fixture(args.elements, args.short, seed=args.seed)
    inv = default_inventory()
    plan = allocate(all_elements(layers), inv)
    log = run_fabrication(layers, inv, ToleranceModel.gaussian(length_sigma=0.0005), plan, seed=args.seed)
    s = log.summary
    print(f"elements {s.element_count}: robotic {s.robotic_cut_count} ({s.robotic_fraction:.1%}), "
          f"manual {s.manual_cut_count} ({s.manual_fraction:.1%})")
    print(f"reclaimed boards planned {plan.reclaimed_count}, new {plan.new_count}")
    print(f"stock consumed {s.consumed_stock_m:.3f} m, waste {s.waste_m:.3f} m, returned {s.returned_m:.3f} m, "
          f"conservation residual {s.conservation_residual():.1e} m")
    if s.aborted:
        print(f"aborted: {s.abort_reason}")


if __name__ == "__main__":
    main()
