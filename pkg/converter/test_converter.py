import os
import pickle
import sys

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, os.path.dirname(__file__))

from convert_planetoid import (EXPECTED, ConversionError, convert, main)
from graph_perceiver.graphs import load_portable


def make_raw(raw_dir, name, rng, n_gaps=0, override=None):
    """Fabricate a raw distribution whose counts match the published table.

    ``n_gaps`` leaves holes in the test index range (isolated papers with
    no feature rows), as in the citeseer distribution. ``override`` patches
    the count tuple to build deliberately broken fixtures.
    """
    nodes, feats, classes, edges, n_train, n_val, n_test = \
        override or EXPECTED[name]
    os.makedirs(raw_dir, exist_ok=True)

    n_test_full = n_test + n_gaps
    n_non_test = nodes - n_test_full
    test_range = np.arange(n_non_test, nodes)
    keep = np.sort(rng.choice(n_test_full, size=n_test, replace=False))
    test_idx = test_range[keep]

    density = min(0.004, 50.0 / feats)
    x_all = sp.random(nodes, feats, density=density, random_state=42,
                      format="csr")
    if name != "pubmed":
        x_all.data[:] = 1.0
    labels = rng.integers(0, classes, size=nodes)
    onehot = np.zeros((nodes, classes))
    onehot[np.arange(nodes), labels] = 1.0

    pairs = set()
    while len(pairs) < edges:
        u, v = rng.integers(0, nodes, size=2)
        if u != v:
            pairs.add((min(int(u), int(v)), max(int(u), int(v))))
    graph = {i: [] for i in range(nodes)}
    for u, v in pairs:
        graph[u].append(v)
        graph[v].append(u)

    parts = {"x": x_all[:n_train], "y": onehot[:n_train],
             "allx": x_all[:n_non_test], "ally": onehot[:n_non_test],
             "tx": x_all[test_idx], "ty": onehot[test_idx],
             "graph": graph}
    for part, payload in parts.items():
        with open(os.path.join(raw_dir, f"ind.{name}.{part}"), "wb") as f:
            pickle.dump(payload, f)
    shuffled = rng.permutation(test_idx)
    with open(os.path.join(raw_dir, f"ind.{name}.test.index"), "w") as f:
        f.writelines(f"{i}\n" for i in shuffled)
    return str(raw_dir)


@pytest.mark.parametrize("name,n_gaps", [("cora", 0), ("citeseer", 15)])
def test_fidelity_and_round_trip(tmp_path, name, n_gaps):
    rng = np.random.default_rng(0)
    raw = make_raw(tmp_path / "raw", name, rng, n_gaps=n_gaps)
    out = str(tmp_path / "out")
    report = convert(raw, name, out)

    nodes, feats, classes, edges, n_train, n_val, n_test = EXPECTED[name]
    assert report.num_nodes == nodes
    assert report.num_features == feats
    assert report.num_classes == classes
    assert report.num_edges == edges
    assert report.split_sizes == {"train": n_train, "val": n_val,
                                  "test": n_test}

    ds = load_portable(out)
    assert ds.graph.num_nodes == nodes
    assert ds.graph.num_edges == edges
    assert ds.graph.features.shape == (nodes, feats)
    assert len(ds.fixed_split.train) == n_train
    assert len(ds.fixed_split.val) == n_val
    assert len(ds.fixed_split.test) == n_test
    print(f"\nACCEPTANCE PASS: {name} conversion matches published counts "
          "and round-trips through load_portable")


@pytest.mark.slow
def test_pubmed_fidelity(tmp_path):
    rng = np.random.default_rng(1)
    raw = make_raw(tmp_path / "raw", "pubmed", rng)
    out = str(tmp_path / "out")
    report = convert(raw, "pubmed", out)
    assert (report.num_nodes, report.num_features, report.num_classes,
            report.num_edges) == (19717, 500, 3, 44324)
    ds = load_portable(out)
    assert ds.graph.num_nodes == 19717 and ds.graph.num_edges == 44324
    print("\nACCEPTANCE PASS: pubmed conversion matches published counts "
          "and round-trips through load_portable")


def test_double_conversion_is_checksum_identical(tmp_path):
    rng = np.random.default_rng(2)
    raw = make_raw(tmp_path / "raw", "cora", rng)
    a = convert(raw, "cora", str(tmp_path / "a"))
    b = convert(raw, "cora", str(tmp_path / "b"))
    assert a.checksums == b.checksums
    print("\nACCEPTANCE PASS: double conversion is checksum-identical")


def test_gap_rows_are_zero(tmp_path):
    rng = np.random.default_rng(3)
    raw = make_raw(tmp_path / "raw", "citeseer", rng, n_gaps=15)
    out = str(tmp_path / "out")
    convert(raw, "citeseer", out)
    ds = load_portable(out)
    # gap nodes sit in the test range but not in the test split
    nodes = ds.graph.num_nodes
    in_range = set(range(nodes - 1015, nodes))
    gaps = sorted(in_range - set(int(i) for i in ds.fixed_split.test))
    assert len(gaps) == 15
    assert (ds.graph.features[gaps] == 0).all()


def test_count_mismatch_rejected(tmp_path):
    rng = np.random.default_rng(4)
    wrong = (2700, 1433, 7, 5278, 140, 500, 1000)  # eight nodes short
    raw = make_raw(tmp_path / "raw", "cora", rng, override=wrong)
    with pytest.raises(ConversionError, match="expected 2708, got 2700"):
        convert(raw, "cora", str(tmp_path / "out"))


def test_missing_file_rejected(tmp_path):
    rng = np.random.default_rng(5)
    raw = make_raw(tmp_path / "raw", "cora", rng)
    os.remove(os.path.join(raw, "ind.cora.graph"))
    with pytest.raises(ConversionError, match="ind.cora.graph"):
        convert(raw, "cora", str(tmp_path / "out"))


def test_cli_exit_codes(tmp_path, capsys):
    rng = np.random.default_rng(6)
    raw = make_raw(tmp_path / "raw", "cora", rng)
    assert main(["--raw", raw, "--name", "cora",
                 "--out", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "nodes=2708 edges=5278" in out
    assert out.count("sha256") == 5
    assert main(["--raw", str(tmp_path / "empty"), "--name", "cora",
                 "--out", str(tmp_path / "o2")]) == 1
