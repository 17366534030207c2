#!/usr/bin/env python3
"""Reproduce the model-cost table: params and GFLOPs before/after merging.

Usage: python scripts/cost_table.py [--classes 309] [--shape 512x128]
"""

import argparse

from audiorepnext.metrics import flops, param_count, resnet50_reference_cost
from audiorepnext.model import ablation_config, b0_config, b1_config, build
from audiorepnext.reparam import reparameterize


def row(name, cfg, shape, classes):
    train = build(cfg, seed=0)
    inf = reparameterize(train)
    return (name,
            param_count(train) / 1e6, param_count(inf) / 1e6,
            flops(train, (1, 1, *shape)) / 1e9, flops(inf, (1, 1, *shape)) / 1e9)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--classes", type=int, default=309)
    ap.add_argument("--shape", default="512x128")
    ap.add_argument("--ablations", action="store_true", help="include structures s1..s9")
    args = ap.parse_args()
    shape = tuple(int(v) for v in args.shape.split("x"))

    rows = [
        row("b0", b0_config(args.classes), shape, args.classes),
        row("b1", b1_config(args.classes), shape, args.classes),
        row("b1 (2d)", b1_config(args.classes, use_2d_branches=True), shape, args.classes),
    ]
    if args.ablations:
        for sid in (f"s{i}" for i in range(1, 10)):
            rows.append(row(sid, ablation_config(sid, args.classes), shape, args.classes))

    print(f"{'model':<10} {'params M (train/inf)':>22} {'GFLOPs @' + args.shape + ' (train/inf)':>30}")
    for name, pt, pi, ft, fi in rows:
        print(f"{name:<10} {pt:>10.2f} / {pi:<9.2f} {ft:>14.3f} / {fi:<10.3f}")

    ref = resnet50_reference_cost(shape, num_classes=args.classes)
    print(f"\nresnet50-shape reference: {ref.params / 1e6:.2f}M params, "
          f"{ref.flops / 1e9:.3f} GFLOPs (MAC=FLOP convention anchor)")


if __name__ == "__main__":
    main()
