"""Command-line entry point: experiment dispatch and artifact export.

Subcommands: train, encode, export-attention, export-embeddings,
convert-check. Configs are strict JSON; scalar hyperparameters may be given
as lists, which enumerates the full grid with one run per combination.
Exit codes: 0 ok, 2 config error, 3 dataset error, 4 numerical divergence.
"""

import argparse
import hashlib
import itertools
import json
import os
import sys
import time

import numpy as np

from .encodings import (SmoothingConfig, build_input_array, build_output_query,
                        compute_rwpe, smooth)
from .graphs import DatasetError, load_portable, load_tu, make_edge_split, \
    make_fold_plan, make_node_split
from .model import ModelConfig, forward, load_checkpoint, save_checkpoint
from .training import (DivergenceError, TrainSchedule, train_graph, train_link,
                       train_node)

EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_DIVERGED = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config schema

_MODEL_KEYS = {"latent_length", "latent_dim", "mhca_heads", "mhca_head_dim",
               "mhsa_heads", "mhsa_head_dim", "depth", "decoder_out_dim",
               "use_first_layer_norm"}
_SCHEDULE_KEYS = {"max_epochs", "patience", "eval_every", "learning_rate",
                  "weight_decay", "batch_size"}
_ENCODING_KEYS = {"pe", "t", "smoothing"}
_SMOOTHING_KEYS = {"method", "L", "alpha"}
_DATASET_KEYS = {"path", "format", "name"}
_SPLIT_KEYS = {"mode", "val_frac", "test_frac", "folds"}
_EXPORT_KEYS = {"attention", "embeddings"}
_TOP_KEYS = {"task", "dataset", "encoding", "model", "schedule", "split",
             "seeds", "out_dir", "export"}

# Defaults by (task, dataset name); single values picked from the published
# hyperparameter grids, with attention widths capped for CPU-scale runs.
_NAMED_DEFAULTS = {
    ("node", "cora"): {"encoding": {"pe": "none", "t": 4,
                                    "smoothing": {"method": "appnp", "L": 10, "alpha": 0.1}},
                       "model": {"latent_length": 32, "latent_dim": 64},
                       "schedule": {"learning_rate": 1e-3, "weight_decay": 1e-2}},
    ("node", "citeseer"): {"encoding": {"pe": "none", "t": 4,
                                        "smoothing": {"method": "appnp", "L": 10, "alpha": 0.1}},
                           "model": {"latent_length": 4, "latent_dim": 64},
                           "schedule": {"learning_rate": 1e-3, "weight_decay": 5e-2}},
    ("node", "pubmed"): {"encoding": {"pe": "none", "t": 4,
                                      "smoothing": {"method": "appnp", "L": 10, "alpha": 0.1}},
                         "model": {"latent_length": 4, "latent_dim": 32,
                                   "mhca_heads": 1, "mhsa_heads": 1},
                         "schedule": {"learning_rate": 5e-3, "weight_decay": 5e-2}},
    ("link", "cora"): {"encoding": {"pe": "rwpe", "t": 4,
                                    "smoothing": {"method": "sgc", "L": 1}},
                       "model": {"latent_length": 16, "latent_dim": 32},
                       "schedule": {"learning_rate": 5e-4, "weight_decay": 5e-4}},
    ("link", "citeseer"): {"encoding": {"pe": "rwpe", "t": 4,
                                        "smoothing": {"method": "sgc", "L": 2}},
                           "model": {"latent_length": 32, "latent_dim": 64},
                           "schedule": {"learning_rate": 5e-4, "weight_decay": 5e-3}},
    ("link", "pubmed"): {"encoding": {"pe": "rwpe", "t": 4,
                                      "smoothing": {"method": "sgc", "L": 1}},
                         "model": {"latent_length": 32, "latent_dim": 32},
                         "schedule": {"learning_rate": 5e-4, "weight_decay": 5e-4}},
    ("graph", "mutag"): {"model": {"latent_length": 8, "latent_dim": 32},
                         "schedule": {"learning_rate": 5e-3, "weight_decay": 5e-4}},
    ("graph", "proteins"): {"model": {"latent_length": 16, "latent_dim": 32},
                            "schedule": {"learning_rate": 5e-3, "weight_decay": 5e-4}},
    ("graph", "imdb-binary"): {"model": {"latent_length": 32, "latent_dim": 32},
                               "schedule": {"learning_rate": 5e-3, "weight_decay": 5e-4}},
}

_TASK_DEFAULTS = {
    "node": {"encoding": {"pe": "none", "t": 4,
                          "smoothing": {"method": "appnp", "L": 10, "alpha": 0.1}},
             "model": {"latent_length": 16, "latent_dim": 64, "mhca_heads": 8,
                       "mhca_head_dim": 32, "mhsa_heads": 8, "mhsa_head_dim": 32,
                       "depth": 1, "decoder_out_dim": 0, "use_first_layer_norm": True},
             "schedule": {"max_epochs": 200, "patience": 100, "eval_every": 1,
                          "learning_rate": 1e-3, "weight_decay": 1e-2,
                          "batch_size": 128},
             "split": {"mode": "fixed"}},
    "link": {"encoding": {"pe": "rwpe", "t": 4,
                          "smoothing": {"method": "sgc", "L": 1}},
             "model": {"latent_length": 16, "latent_dim": 32, "mhca_heads": 8,
                       "mhca_head_dim": 32, "mhsa_heads": 8, "mhsa_head_dim": 32,
                       "depth": 1, "decoder_out_dim": 0, "use_first_layer_norm": True},
             "schedule": {"max_epochs": 400, "patience": 100, "eval_every": 1,
                          "learning_rate": 5e-4, "weight_decay": 5e-4,
                          "batch_size": 128},
             "split": {"val_frac": 0.05, "test_frac": 0.10}},
    "graph": {"encoding": {"pe": "rwpe", "t": 64,
                           "smoothing": {"method": "none", "L": 0}},
              "model": {"latent_length": 8, "latent_dim": 32, "mhca_heads": 1,
                        "mhca_head_dim": 4, "mhsa_heads": 1, "mhsa_head_dim": 4,
                        "depth": 1, "decoder_out_dim": 0, "use_first_layer_norm": True},
              "schedule": {"max_epochs": 100, "patience": 25, "eval_every": 1,
                           "learning_rate": 5e-3, "weight_decay": 5e-4,
                           "batch_size": 128},
              "split": {"folds": 10}},
}


def _reject_unknown(section, keys, allowed):
    for k in keys:
        if k not in allowed:
            raise ConfigError(f"unknown key '{k}' in {section}")


def _merge(base, override):
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(raw):
    """Validate a raw config dict and fill defaults; returns the full config."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown("config", raw, _TOP_KEYS)
    task = raw.get("task")
    if task not in ("node", "link", "graph"):
        raise ConfigError(f"task must be node|link|graph, got {task!r}")
    if "dataset" not in raw:
        raise ConfigError("config needs a 'dataset' section")
    _reject_unknown("dataset", raw["dataset"], _DATASET_KEYS)
    if "path" not in raw["dataset"]:
        raise ConfigError("dataset.path is required")
    for section, allowed in (("encoding", _ENCODING_KEYS), ("model", _MODEL_KEYS),
                             ("schedule", _SCHEDULE_KEYS), ("split", _SPLIT_KEYS),
                             ("export", _EXPORT_KEYS)):
        if section in raw:
            _reject_unknown(section, raw[section], allowed)
    if "smoothing" in raw.get("encoding", {}):
        _reject_unknown("encoding.smoothing", raw["encoding"]["smoothing"],
                        _SMOOTHING_KEYS)

    name = raw["dataset"].get("name",
                              os.path.basename(raw["dataset"]["path"].rstrip("/"))).lower()
    cfg = dict(_TASK_DEFAULTS[task])
    cfg = _merge(cfg, _NAMED_DEFAULTS.get((task, name), {}))
    cfg = _merge(cfg, {k: v for k, v in raw.items() if k not in ("task", "seeds")})
    cfg["task"] = task
    cfg["seeds"] = raw.get("seeds", [2025])
    cfg.setdefault("out_dir", "runs")
    cfg.setdefault("export", {"attention": False, "embeddings": False})
    cfg["dataset"].setdefault("format", "portable")
    cfg["dataset"].setdefault("name", name)
    return cfg


def _grid_points(cfg):
    """Expand list-valued scalar fields into one config per combination."""
    paths, choices = [], []
    for section in ("encoding", "model", "schedule"):
        for key, val in cfg[section].items():
            if key == "smoothing":
                for sk, sv in val.items():
                    if isinstance(sv, list):
                        paths.append((section, "smoothing", sk))
                        choices.append(sv)
            elif isinstance(val, list):
                paths.append((section, key))
                choices.append(val)
    if not paths:
        return [cfg]
    out = []
    for combo in itertools.product(*choices):
        c = json.loads(json.dumps(cfg))
        for path, v in zip(paths, combo):
            node = c
            for p in path[:-1]:
                node = node[p]
            node[path[-1]] = v
        out.append(c)
    return out


def _config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:10]


def resolve_dataset_path(path):
    if os.path.exists(path):
        return path
    root = os.environ.get("GPIO_DATA_DIR")
    if root:
        candidate = os.path.join(root, path)
        if os.path.exists(candidate):
            return candidate
    raise DatasetError(f"dataset path not found: {path}")


def _smoothing_config(d):
    return SmoothingConfig(method=d.get("method", "none"), L=int(d.get("L", 0)),
                           alpha=d.get("alpha"))


def _build_model_cfg(cfg, input_dim, query_dim, num_classes):
    m = cfg["model"]
    return ModelConfig(
        task=cfg["task"], input_dim=input_dim, query_dim=query_dim,
        num_classes=num_classes,
        latent_length=int(m["latent_length"]), latent_dim=int(m["latent_dim"]),
        mhca_heads=int(m["mhca_heads"]), mhca_head_dim=int(m["mhca_head_dim"]),
        mhsa_heads=int(m["mhsa_heads"]), mhsa_head_dim=int(m["mhsa_head_dim"]),
        depth=int(m["depth"]), decoder_out_dim=int(m["decoder_out_dim"]),
        use_first_layer_norm=bool(m["use_first_layer_norm"]))


def _schedule(cfg, seed):
    s = cfg["schedule"]
    return TrainSchedule(max_epochs=int(s["max_epochs"]), patience=int(s["patience"]),
                         eval_every=int(s["eval_every"]), seed=int(seed),
                         learning_rate=float(s["learning_rate"]),
                         weight_decay=float(s["weight_decay"]),
                         batch_size=int(s["batch_size"]))


def _input_dims(cfg, graph):
    c = graph.features.shape[1] if graph.features is not None else 0
    t = int(cfg["encoding"]["t"]) if cfg["encoding"]["pe"] != "none" else 0
    return c + t, c


def _run_single(cfg, seed, run_dir):
    """One (config, seed) training run; writes artifacts into run_dir."""
    os.makedirs(run_dir, exist_ok=True)
    task = cfg["task"]
    path = resolve_dataset_path(cfg["dataset"]["path"])
    enc = {"pe": cfg["encoding"]["pe"], "t": int(cfg["encoding"]["t"]),
           "smoothing": _smoothing_config(cfg["encoding"]["smoothing"])}

    if task == "graph":
        tu_name = _resolve_tu_name(path, cfg["dataset"]["name"])
        graphs = load_tu(path, tu_name)
        folds = make_fold_plan(graphs, k=int(cfg["split"].get("folds", 10)), seed=seed)
        num_classes = int(max(g.graph_label for g in graphs)) + 1
        in_dim, _ = _input_dims(cfg, graphs[0])
        model_cfg = _build_model_cfg(cfg, in_dim, num_classes, num_classes)
        result = train_graph(graphs, folds, model_cfg, enc, _schedule(cfg, seed))
    else:
        ds = load_portable(path)
        g = ds.graph
        in_dim, c = _input_dims(cfg, g)
        model_cfg = _build_model_cfg(cfg, in_dim, c, int(ds.meta.get("num_classes", 0)))
        if task == "node":
            split = make_node_split(g, cfg["split"].get("mode", "fixed"), seed=seed,
                                    fixed=ds.fixed_split)
            result = train_node(g, split, model_cfg, enc, _schedule(cfg, seed))
        else:
            es = make_edge_split(g, seed=seed,
                                 val_frac=float(cfg["split"].get("val_frac", 0.05)),
                                 test_frac=float(cfg["split"].get("test_frac", 0.10)))
            result = train_link(g, es, model_cfg, enc, _schedule(cfg, seed))
        save_checkpoint(os.path.join(run_dir, "checkpoint.npz"), model_cfg,
                        result.trained_params,
                        extra={"encoding": cfg["encoding"],
                               "dataset": cfg["dataset"], "seed": seed})

    result.config = {"config": cfg, "seed": seed}
    metrics = result.to_dict()
    metrics.pop("train_loss_curve")
    metrics.pop("val_metric_curve")
    metrics["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(os.path.join(run_dir, "metrics.json"), "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
    with open(os.path.join(run_dir, "curves.csv"), "w") as f:
        f.write("epoch,train_loss,val_metric\n")
        for i, l in enumerate(result.train_loss_curve):
            v = result.val_metric_curve[i] if i < len(result.val_metric_curve) else ""
            f.write(f"{i},{l:.17g},{v if v == '' else format(v, '.17g')}\n")
    return result, model_cfg


def _resolve_tu_name(path, name):
    for candidate in (name, name.upper(), name.capitalize()):
        if os.path.exists(os.path.join(path, f"{candidate}_A.txt")):
            return candidate
    raise DatasetError(f"no TU files for '{name}' under {path}")


def cmd_train(args):
    with open(args.config) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}:{e.lineno}: {e.msg}")
    for ov in args.override:
        if "=" not in ov:
            raise ConfigError(f"override must be key=value, got {ov!r}")
        key, val = ov.split("=", 1)
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = json.loads(val) if _is_json(val) else val
    cfg = resolve_config(raw)
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    if args.out is not None:
        cfg["out_dir"] = args.out

    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    name = cfg["dataset"]["name"]
    all_results = []
    for point in _grid_points(cfg):
        for seed in point["seeds"]:
            run_dir = os.path.join(
                out_dir, f"{name}-{point['task']}-{seed}-{_config_hash(point)}")
            result, model_cfg = _run_single(point, int(seed), run_dir)
            all_results.append((point, seed, result, model_cfg, run_dir))

    # aggregate over seeds for the primary metric of each grid point
    agg = {}
    key0 = None
    for point, seed, result, _, run_dir in all_results:
        key = _config_hash(point)
        key0 = key0 or key
        agg.setdefault(key, {"config": point, "runs": []})
        agg[key]["runs"].append({"seed": seed, **result.test_metrics,
                                 "best_val": result.best_val_metric,
                                 "run_dir": os.path.basename(run_dir)})
    summary = {"grid": []}
    for key, entry in agg.items():
        metrics_keys = [k for k in entry["runs"][0]
                        if k not in ("seed", "run_dir", "per_fold")]
        stats = {f"test_{k}_mean": float(np.mean([r[k] for r in entry["runs"]]))
                 for k in metrics_keys if k != "best_val"}
        stats.update({f"test_{k}_std": float(np.std([r[k] for r in entry["runs"]]))
                      for k in metrics_keys if k != "best_val"})
        summary["grid"].append({"config_hash": key, **stats, "runs": entry["runs"],
                                "config": entry["config"]})
    summary["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(os.path.join(out_dir, "metrics.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    print(f"wrote {os.path.join(out_dir, 'metrics.json')}")

    if cfg["export"].get("attention") or cfg["export"].get("embeddings"):
        _export_from_last_run(cfg, all_results[-1])
    return 0


def _export_from_last_run(cfg, last):
    point, seed, result, model_cfg, run_dir = last
    if point["task"] == "graph":
        return
    ckpt = os.path.join(run_dir, "checkpoint.npz")
    path = resolve_dataset_path(point["dataset"]["path"])
    if cfg["export"].get("attention"):
        export_attention(ckpt, path, os.path.join(run_dir, "attention"))
    if cfg["export"].get("embeddings"):
        export_embeddings(ckpt, path, os.path.join(run_dir, "embeddings.tsv"))


def cmd_encode(args):
    path = resolve_dataset_path(args.dataset)
    ds = load_portable(path)
    g = ds.graph
    os.makedirs(args.out, exist_ok=True)
    wrote = []
    if args.pe == "rwpe":
        rwpe = compute_rwpe(g, args.t)
        out = os.path.join(args.out, "rwpe.csv")
        np.savetxt(out, rwpe, delimiter=",", fmt="%.17g")
        wrote.append(out)
    if args.smoothing != "none":
        if g.features is None:
            raise DatasetError("smoothing requested but dataset has no features")
        cfg = SmoothingConfig(method=args.smoothing, L=args.L,
                              alpha=args.alpha if args.smoothing == "appnp" else None)
        out = os.path.join(args.out, "smoothed.csv")
        np.savetxt(out, smooth(g.features, g, cfg), delimiter=",", fmt="%.17g")
        wrote.append(out)
    for w in wrote:
        print(f"wrote {w}")
    return 0


def _rebuild_inputs(ckpt_path, dataset_path):
    cfg, params, extra = load_checkpoint(ckpt_path, with_extra=True)
    ds = load_portable(dataset_path)
    g = ds.graph
    enc = extra.get("encoding", {})
    x = build_input_array(g, pe=enc.get("pe", "none"), t=int(enc.get("t", 4)))
    if x.shape[1] != cfg.input_dim:
        raise DatasetError(
            f"checkpoint expects input width {cfg.input_dim}, dataset gives {x.shape[1]}")
    query = None
    if cfg.task != "graph":
        query = build_output_query(cfg.task, g,
                                   _smoothing_config(enc.get("smoothing", {})),
                                   cfg.query_dim).values
    return cfg, params, g, x, query


def export_attention(checkpoint, dataset, out_dir):
    """Head-averaged encoder cross-attention (N x M) plus node classes."""
    cfg, params, g, x, query = _rebuild_inputs(checkpoint, dataset)
    out = forward(params, cfg, x, output_query=query, capture_attention=True)
    att = out.attention_maps[0][0]  # (N, M)
    os.makedirs(out_dir, exist_ok=True)
    np.savetxt(os.path.join(out_dir, "attention.csv"), att, delimiter=",", fmt="%.17g")
    if g.node_labels is not None:
        np.savetxt(os.path.join(out_dir, "node_classes.csv"),
                   g.node_labels, fmt="%d")
    print(f"wrote {out_dir}/attention.csv ({att.shape[0]} x {att.shape[1]})")
    return 0


def export_embeddings(checkpoint, dataset, out_path):
    """Decoded M x decoder_out_dim features as TSV with a label column."""
    cfg, params, g, x, query = _rebuild_inputs(checkpoint, dataset)
    out = forward(params, cfg, x, output_query=query)
    decoded = out.decoded.data
    labels = g.node_labels if g.node_labels is not None \
        else np.zeros(g.num_nodes, dtype=np.int64)
    with open(out_path, "w") as f:
        for row, lab in zip(decoded, labels):
            f.write("\t".join(f"{v:.17g}" for v in row) + f"\t{int(lab)}\n")
    print(f"wrote {out_path} ({decoded.shape[0]} rows)")
    return 0


def cmd_convert_check(args):
    ds = load_portable(resolve_dataset_path(args.dataset))
    g = ds.graph
    print(f"name={ds.meta.get('name')} nodes={g.num_nodes} edges={g.num_edges} "
          f"features={0 if g.features is None else g.features.shape[1]} "
          f"classes={ds.meta.get('num_classes')}")
    if ds.fixed_split is not None:
        print(f"fixed split: train={len(ds.fixed_split.train)} "
              f"val={len(ds.fixed_split.val)} test={len(ds.fixed_split.test)}")
    return 0


def _is_json(s):
    try:
        json.loads(s)
        return True
    except json.JSONDecodeError:
        return False


def build_parser():
    p = argparse.ArgumentParser(prog="graph-perceiver")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run experiments from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--override", action="append", default=[],
                   metavar="key=value")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("encode", help="emit RWPE / smoothed feature CSVs")
    e.add_argument("--dataset", required=True)
    e.add_argument("--pe", choices=["rwpe", "none"], default="rwpe")
    e.add_argument("--t", type=int, default=4)
    e.add_argument("--smoothing", choices=["sgc", "appnp", "none"], default="none")
    e.add_argument("--L", type=int, default=0)
    e.add_argument("--alpha", type=float, default=0.1)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_encode)

    a = sub.add_parser("export-attention", help="export encoder attention weights")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--dataset", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=lambda args: export_attention(
        args.checkpoint, resolve_dataset_path(args.dataset), args.out))

    m = sub.add_parser("export-embeddings", help="export decoded node features")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--dataset", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(fn=lambda args: export_embeddings(
        args.checkpoint, resolve_dataset_path(args.dataset), args.out))

    c = sub.add_parser("convert-check", help="validate a portable dataset directory")
    c.add_argument("--dataset", required=True)
    c.set_defaults(fn=cmd_convert_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_DATASET
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_DATASET


if __name__ == "__main__":
    sys.exit(main())
