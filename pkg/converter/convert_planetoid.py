#!/usr/bin/env python3
"""Convert a raw Planetoid citation-dataset distribution into the portable
directory layout (meta.json, edges.tsv, features.csv, labels.csv,
splits.json) understood by the graph-perceiver loaders.

The raw distribution is eight files per dataset:

    ind.<name>.x           pickled sparse features of the training nodes
    ind.<name>.tx          pickled sparse features of the test nodes
    ind.<name>.allx        pickled sparse features of all non-test nodes
    ind.<name>.y / ty / ally   one-hot label arrays matching the above
    ind.<name>.graph       pickled {node: [neighbors]} adjacency dict
    ind.<name>.test.index  text file of test node ids, one per line

Test rows arrive shuffled and (for citeseer) with gaps for isolated papers;
this script restores canonical node order, patches gap rows with zeros, and
emits each undirected edge exactly once. Output counts are validated against
the published dataset statistics before the tool exits successfully.
"""

import argparse
import hashlib
import json
import os
import pickle
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# name -> (nodes, features, classes, undirected edges, train, val, test)
EXPECTED = {
    "cora": (2708, 1433, 7, 5278, 140, 500, 1000),
    "citeseer": (3327, 3703, 6, 4552, 120, 500, 1000),
    "pubmed": (19717, 500, 3, 44324, 60, 500, 1000),
}

RAW_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


class ConversionError(Exception):
    pass


@dataclass
class ConversionReport:
    name: str
    num_nodes: int
    num_edges: int
    num_features: int
    num_classes: int
    split_sizes: dict
    checksums: dict = field(default_factory=dict)

    def print(self, out=None):
        out = out if out is not None else sys.stdout
        print(f"dataset: {self.name}", file=out)
        print(f"nodes={self.num_nodes} edges={self.num_edges} "
              f"features={self.num_features} classes={self.num_classes}", file=out)
        print("split: " + " ".join(f"{k}={v}" for k, v in self.split_sizes.items()),
              file=out)
        for fname in sorted(self.checksums):
            print(f"sha256 {self.checksums[fname]}  {fname}", file=out)


def _load_raw(raw_dir, name):
    parts = {}
    for part in RAW_PARTS:
        path = os.path.join(raw_dir, f"ind.{name}.{part}")
        if not os.path.exists(path):
            raise ConversionError(f"missing raw file: {path}")
        with open(path, "rb") as f:
            # upstream pickles were written by python 2
            parts[part] = pickle.load(f, encoding="latin1")
    idx_path = os.path.join(raw_dir, f"ind.{name}.test.index")
    if not os.path.exists(idx_path):
        raise ConversionError(f"missing raw file: {idx_path}")
    with open(idx_path) as f:
        parts["test.index"] = np.array([int(line) for line in f if line.strip()])
    return parts


def _assemble(parts):
    """Stitch non-test and test blocks back into canonical node order."""
    test_idx = parts["test.index"]
    test_sorted = np.sort(test_idx)
    n_non_test = parts["allx"].shape[0]

    # citeseer leaves holes in the test range for papers with no content;
    # give those rows zero features and zero one-hot labels
    full_range = np.arange(test_sorted.min(), test_sorted.max() + 1)
    n_test_full = len(full_range)

    tx = sp.csr_matrix(parts["tx"])
    tx_full = sp.lil_matrix((n_test_full, tx.shape[1]))
    ty_full = np.zeros((n_test_full, parts["ty"].shape[1]))
    pos = test_idx - test_sorted.min()
    tx_full[pos] = tx
    ty_full[pos] = parts["ty"]

    features = sp.vstack([sp.csr_matrix(parts["allx"]), tx_full.tocsr()]).toarray()
    onehot = np.vstack([parts["ally"], ty_full])
    labels = onehot.argmax(axis=1)

    num_nodes = n_non_test + n_test_full
    edges = set()
    for u, neighbors in parts["graph"].items():
        for v in neighbors:
            if u == v:
                continue
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise ConversionError(f"edge ({u}, {v}) outside node range")
            edges.add((min(u, v), max(u, v)))
    edges = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)

    splits = {"train": list(range(len(parts["y"]))),
              "val": list(range(len(parts["y"]), len(parts["y"]) + 500)),
              "test": [int(i) for i in test_sorted]}
    return features, labels, edges, splits


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_portable(out_dir, name, features, labels, edges, splits):
    os.makedirs(out_dir, exist_ok=True)
    meta = {"name": name, "num_nodes": int(features.shape[0]),
            "num_features": int(features.shape[1]),
            "num_classes": int(labels.max()) + 1, "task": "node"}
    with open(os.path.join(out_dir, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, "edges.tsv"), "w", newline="\n") as f:
        f.writelines(f"{u}\t{v}\n" for u, v in edges)
    with open(os.path.join(out_dir, "features.csv"), "w", newline="\n") as f:
        f.writelines(",".join(format(v, ".17g") for v in row) + "\n"
                     for row in features)
    with open(os.path.join(out_dir, "labels.csv"), "w", newline="\n") as f:
        f.writelines(f"{int(l)}\n" for l in labels)
    with open(os.path.join(out_dir, "splits.json"), "w") as f:
        json.dump({"fixed": splits}, f, sort_keys=True)
        f.write("\n")
    return meta


def convert(raw_dir, name, out_dir):
    if name not in EXPECTED:
        raise ConversionError(
            f"unknown dataset {name!r}; expected one of {sorted(EXPECTED)}")
    parts = _load_raw(raw_dir, name)
    features, labels, edges, splits = _assemble(parts)
    meta = _write_portable(out_dir, name, features, labels, edges, splits)

    expect = EXPECTED[name]
    actual = (meta["num_nodes"], meta["num_features"], meta["num_classes"],
              len(edges), len(splits["train"]), len(splits["val"]),
              len(splits["test"]))
    if actual != expect:
        fields = ("nodes", "features", "classes", "edges", "train", "val", "test")
        diffs = [f"{f}: expected {e}, got {a}"
                 for f, e, a in zip(fields, expect, actual) if e != a]
        raise ConversionError(f"{name} count mismatch: " + "; ".join(diffs))

    report = ConversionReport(
        name=name, num_nodes=meta["num_nodes"], num_edges=len(edges),
        num_features=meta["num_features"], num_classes=meta["num_classes"],
        split_sizes={k: len(v) for k, v in splits.items()})
    for fname in ("meta.json", "edges.tsv", "features.csv", "labels.csv",
                  "splits.json"):
        report.checksums[fname] = _sha256(os.path.join(out_dir, fname))
    return report


def main(argv=None):
    p = argparse.ArgumentParser(
        description="convert raw Planetoid files to a portable dataset directory")
    p.add_argument("--raw", required=True, help="directory with the ind.* files")
    p.add_argument("--name", required=True, choices=sorted(EXPECTED))
    p.add_argument("--out", required=True, help="output dataset directory")
    args = p.parse_args(argv)
    try:
        report = convert(args.raw, args.name, args.out)
    except ConversionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    report.print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
