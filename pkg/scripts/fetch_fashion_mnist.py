#!/usr/bin/env python3
"""Build FashionMNIST IDX files from the ``fashion-mnist`` npm package.

The npm tarball ships the 70k images as per-class JSON arrays of raw uint8
pixels with no train/test marker.  This script writes the four standard
IDX files.  Within each class the package stores 1000 test images
followed by 6000 training images (class 0 also carries two empty
separator rows, which are dropped); the split follows that order.

    python scripts/fetch_fashion_mnist.py --out data/fashion-mnist
    python scripts/fetch_fashion_mnist.py --tarball fashion-mnist-1.1.0.tgz --out data/fashion-mnist
"""

import argparse
import io
import json
import sys
import tarfile
import urllib.request
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from spikelab.data import FASHION_FILES, write_idx  # noqa: E402

NPM_URL = "https://registry.npmjs.org/fashion-mnist/-/fashion-mnist-1.1.0.tgz"
TRAIN_PER_CLASS = 6000
TEST_PER_CLASS = 1000


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--tarball", help="local copy of the npm tarball (downloaded if omitted)")
    ap.add_argument("--out", required=True, help="output directory for the IDX files")
    args = ap.parse_args(argv)

    if args.tarball:
        blob = Path(args.tarball).read_bytes()
    else:
        print(f"downloading {NPM_URL}", file=sys.stderr)
        with urllib.request.urlopen(NPM_URL) as resp:
            blob = resp.read()

    train_x, train_y, test_x, test_y = [], [], [], []
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        for c in range(10):
            member = tar.extractfile(f"package/src/clothes/{c}.json")
            data = [r for r in json.load(member)["data"] if len(r) == 28 * 28]
            rows = np.asarray(data, dtype=np.uint8).reshape(-1, 28, 28)
            if rows.shape[0] != TRAIN_PER_CLASS + TEST_PER_CLASS:
                raise SystemExit(f"class {c}: found {rows.shape[0]} images")
            test_x.append(rows[:TEST_PER_CLASS])
            train_x.append(rows[TEST_PER_CLASS:])
            train_y.append(np.full(TRAIN_PER_CLASS, c, dtype=np.uint8))
            test_y.append(np.full(TEST_PER_CLASS, c, dtype=np.uint8))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, xs, ys in (("train", train_x, train_y), ("test", test_x, test_y)):
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        # interleave classes so that prefixes are balanced
        order = np.argsort(np.tile(np.arange(len(y) // 10), 10) * 10 + y, kind="stable")
        write_idx(out / (FASHION_FILES[f"{split}_images"] + ".gz"), x[order] / 255.0, labels=False)
        write_idx(out / (FASHION_FILES[f"{split}_labels"] + ".gz"), y[order], labels=True)
        print(f"{split}: {len(y)} images -> {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
