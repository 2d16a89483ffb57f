#!/usr/bin/env python3
"""Generate a directory of synthetic mosaic-texture PNGs with a manifest.

The textures are cell-aligned so the toy codec round-trips them exactly,
which keeps restoration metrics about the pipeline rather than codec loss.
"""

import argparse

from birad.textures import write_dataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", help="destination directory (created if absent)")
    ap.add_argument("--count", type=int, default=120, help="number of images")
    ap.add_argument("--size", type=int, default=64, help="image side in pixels")
    ap.add_argument("--cell", type=int, default=8, help="mosaic cell side in pixels")
    ap.add_argument("--seed", type=int, default=0, help="base seed")
    ap.add_argument(
        "--levels", type=int, default=None,
        help="per-channel palette levels (omit for continuous colors)",
    )
    args = ap.parse_args()
    paths = write_dataset(
        args.out_dir, args.count,
        size=args.size, cell=args.cell, seed=args.seed, levels=args.levels,
    )
    print(f"wrote {len(paths)} images under {args.out_dir}")


if __name__ == "__main__":
    main()
