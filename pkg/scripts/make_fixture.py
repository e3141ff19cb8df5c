#!/usr/bin/env python3
"""Generate the bundled synthetic survey fixture.

Usage: python scripts/make_fixture.py --out fixtures/city200 [--images 200] [--seed 0]
"""

import argparse

from streetpulse.simulate import build_fixture


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--images", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    paths = build_fixture(args.out, n_images=args.images, seed=args.seed)
    for name, path in sorted(paths.items()):
        print(f"{name:>14}: {path}")


if __name__ == "__main__":
    main()
