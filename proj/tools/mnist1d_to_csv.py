#!/usr/bin/env python3
"""Export MNIST1D to the toolkit's CSV layout.

One file with header `split,label,x0,...,x39`: 4000 train rows then 1000
test rows. Uses the upstream generator (`pip install mnist1d`) with its
default arguments, or the published pickle when --pickle is given.
"""
import argparse
import csv
import pickle

import numpy as np


def load(pickle_path):
    if pickle_path:
        with open(pickle_path, "rb") as f:
            return pickle.load(f)
    from mnist1d.data import get_dataset_args, make_dataset
    return make_dataset(get_dataset_args())


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="output CSV path")
    ap.add_argument("--pickle", help="use an existing mnist1d_data.pkl instead of regenerating")
    args = ap.parse_args()

    data = load(args.pickle)
    dim = data["x"].shape[1]
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["split", "label"] + [f"x{i}" for i in range(dim)])
        for split, xs, ys in (("train", data["x"], data["y"]), ("test", data["x_test"], data["y_test"])):
            for x, y in zip(np.asarray(xs, dtype=np.float64), ys):
                w.writerow([split, int(y)] + [repr(float(v)) for v in x])


if __name__ == "__main__":
    main()
