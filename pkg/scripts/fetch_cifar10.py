"""Download and unpack the CIFAR-10 python batches into ``$DATA_ROOT`` (default ``data``).

    python scripts/fetch_cifar10.py [--root DIR]
"""

import argparse
import hashlib
import os
import tarfile
import urllib.request
from pathlib import Path

URL = "https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz"
MD5 = "c58f30108f718f92721af3b95e74349a"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default=os.environ.get("DATA_ROOT", "data"))
    ap.add_argument("--url", default=URL)
    args = ap.parse_args()
    root = Path(args.root)
    if (root / "cifar-10-batches-py" / "test_batch").is_file():
        print(f"already present under {root}")
        return
    root.mkdir(parents=True, exist_ok=True)
    tgz = root / "cifar-10-python.tar.gz"
    if not tgz.is_file():
        print(f"downloading {args.url}")
        urllib.request.urlretrieve(args.url, tgz)
    digest = hashlib.md5(tgz.read_bytes()).hexdigest()
    if digest != MD5:
        raise SystemExit(f"checksum mismatch for {tgz}: {digest}")
    with tarfile.open(tgz) as tar:
        tar.extractall(root, filter="data")
    print(f"unpacked to {root / 'cifar-10-batches-py'}")


if __name__ == "__main__":
    main()
