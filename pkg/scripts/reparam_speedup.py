#!/usr/bin/env python3
"""Paired throughput run: the same network before and after kernel merging.

Usage: python scripts/reparam_speedup.py [--variant b1] [--shape 128x64]
       [--batch 8] [--threads 1] [--warmup 5] [--timed 10]
"""

import argparse

from audiorepnext.metrics import bench
from audiorepnext.model import variant_config, build
from audiorepnext.reparam import reparameterize


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--variant", choices=("b0", "b1"), default="b1")
    ap.add_argument("--classes", type=int, default=309)
    ap.add_argument("--shape", default="128x64")
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--warmup", type=int, default=5)
    ap.add_argument("--timed", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    h, w = (int(v) for v in args.shape.split("x"))
    train = build(variant_config(args.variant, args.classes), seed=args.seed)
    inf = reparameterize(train)

    kw = dict(input_shape=(1, 1, h, w), batch=args.batch, warmup=args.warmup,
              timed=args.timed, threads=args.threads, seed=args.seed)
    before = bench(train, **kw)
    after = bench(inf, **kw)

    print(f"{args.variant} @ {args.shape}, batch {args.batch}, {args.threads} thread(s)")
    print(f"  train form:     {before.samples_per_sec:9.2f} samples/s")
    print(f"  inference form: {after.samples_per_sec:9.2f} samples/s")
    print(f"  speedup:        {after.samples_per_sec / before.samples_per_sec:9.3f}x")


if __name__ == "__main__":
    main()
