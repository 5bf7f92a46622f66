#!/usr/bin/env python
"""Download the MNIST IDX files into data/mnist/ (requires network access).

Usage: python scripts/fetch_mnist.py [dest_dir]
"""

import gzip
import sys
import urllib.request
from pathlib import Path

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]
FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]


def main():
    dest = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/mnist")
    dest.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        target = dest / name
        if target.exists():
            print(f"{target} already present")
            continue
        for mirror in MIRRORS:
            url = mirror + name + ".gz"
            try:
                print(f"fetching {url}")
                with urllib.request.urlopen(url, timeout=60) as resp:
                    target.write_bytes(gzip.decompress(resp.read()))
                break
            except OSError as err:
                print(f"  failed: {err}")
        else:
            sys.exit(f"could not download {name} from any mirror")
    print(f"MNIST IDX files ready in {dest}")


if __name__ == "__main__":
    main()
