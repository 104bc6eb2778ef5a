#!/usr/bin/env python3
"""Write the synthetic dataset to disk as PGM files (one directory per
class), so the `--data-dir` ingestion path can be exercised end to end."""

import argparse
from pathlib import Path

from kpff.data import generate_synthetic, write_pnm


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--per-class", type=int, default=25)
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = generate_synthetic(per_class=args.per_class, size=args.size, seed=args.seed)
    counters = {}
    for img, label in ds.samples:
        name = ds.class_names[label]
        d = args.out / name
        d.mkdir(parents=True, exist_ok=True)
        k = counters.get(name, 0)
        counters[name] = k + 1
        write_pnm(d / f"{name}_{k:03d}.pgm", img)
    print(f"wrote {len(ds)} images under {args.out}")


if __name__ == "__main__":
    main()
