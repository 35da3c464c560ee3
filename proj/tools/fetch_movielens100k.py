#!/usr/bin/env python3
"""Write MovieLens-100k as an implicit-feedback TSV (user, item, rating, timestamp).

The ratings are taken from the copy bundled with the pytorch-widedeep wheel,
which pip can fetch from any package index. Ratings below --min-rating are
dropped.

    python3 tools/fetch_movielens100k.py --out data/ml-100k.tsv
"""

import argparse
import glob
import io
import os
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"


def find_wheel(workdir, wheel):
    if wheel:
        return wheel
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary", ":all:",
         "pytorch-widedeep==1.7.0", "-d", workdir],
        check=True,
    )
    found = glob.glob(os.path.join(workdir, "pytorch_widedeep-*.whl"))
    if not found:
        sys.exit("wheel download failed")
    return found[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/ml-100k.tsv")
    ap.add_argument("--min-rating", type=int, default=4)
    ap.add_argument("--wheel", help="use an already downloaded pytorch-widedeep wheel")
    args = ap.parse_args()

    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        wheel = find_wheel(tmp, args.wheel)
        with zipfile.ZipFile(wheel) as zf:
            frame = pd.read_parquet(io.BytesIO(zf.read(MEMBER)))

    frame = frame[frame["rating"] >= args.min_rating]
    frame = frame.sort_values(["user_id", "timestamp", "movie_id"], kind="stable")
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    frame[["user_id", "movie_id", "rating", "timestamp"]].to_csv(args.out, sep="\t", header=False, index=False)
    print(f"{args.out}: {frame['user_id'].nunique()} users, {frame['movie_id'].nunique()} items, "
          f"{len(frame)} interactions")


if __name__ == "__main__":
    main()
