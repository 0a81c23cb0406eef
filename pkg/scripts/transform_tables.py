#!/usr/bin/env python3
"""Build the scale transform for a chosen scenario and dump its tables.

Usage: python scripts/transform_tables.py [--name SCENARIO] [--out OUT]
"""
import argparse
import json
import os

from sdelab import ScenarioSpec, check_hypotheses
from sdelab.scenarios import build_bundle, scenario_names


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--name", default="weierstrass_drift", choices=scenario_names())
    ap.add_argument("--out", default="out")
    args = ap.parse_args()

    bundle = build_bundle(ScenarioSpec(name=args.name))
    rep = check_hypotheses(bundle.coeffs.potential)
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"coefficients_{args.name}.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,sigma_value,h,hprime\n")
        for row in bundle.coeffs.table():
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"tables -> {path}")


if __name__ == "__main__":
    main()
