"""Command-line experiment runner.

Every subcommand reads one JSON config, writes its artifacts and CSV files
into ``--out`` and is idempotent for a fixed config and seed. All randomness
descends from the config's master seed through named child streams.

    adare train-oracle --config exp.json --out runs/a
    adare fit-nulls --config exp.json --out runs/a
    adare simulate-re --config exp.json --out runs/a
    adare evaluate-detection --config exp.json --out runs/a
    adare noise-probe --config exp.json --out runs/a
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adastat import AdaConfig, estimate_confusion_matrix, lawa_maxkl
from .batchdetect import BatchScoreConfig, roc_auc, score_sampled_batches
from .dataio import Dataset, SyntheticSpec, child_rng, child_seed, gen_synthetic, load_artifact, load_idx, save_artifact, split
from .netcore import TrainConfig, init_net, predict, train
from .nullmodel import EmConfig, fit_null_models
from .reattack import Oracle, REConfig, evaluate_attack, run_re_attack

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {
        "source": "synthetic",
        "synthetic": {"n_classes": 4, "dim": 36, "spread": 0.05, "mean_range": [0.45, 0.55],
                      "samples_per_class": 300},
        "idx": {"images": None, "labels": None, "n_classes": None},
        "split": [0.6, 0.2, 0.2],
    },
    "oracle": {"hidden": [16, 8], "activation": "relu",
               "train": {"epochs": 400, "learning_rate": 0.05, "batch_size": 16, "init_scale": 1.0}},
    "re_attack": {"lam": 0.1, "n_stages": 4, "s0_per_class": 10, "hidden": [16, 8], "activation": "sigmoid",
                  "train": {"epochs": 300, "learning_rate": 1.0, "batch_size": 16, "init_scale": 1.0}},
    "fgsm_eps": 0.03,
    "em": {"components": [1, 2, 3], "max_iter": 200, "tol": 1e-6, "restarts": 2, "log_eps": 1e-3},
    "nulls": {"layers": [1, 2], "mode": "pairwise", "pair_cap": 1000, "confusion_alpha": 1.0,
              "min_per_class": 20},
    "ada": {"variant": "lawa-maxkl", "confusion_floor": 1e-4},
    "detection": {"stages": [2, 3, 4], "batch_sizes": [1, 5, 10, 20, 50], "schemes": ["mean", "union"],
                  "mb_size": 5, "inner": "mean", "n_batches": 400, "noise_pool_size": 500},
}

RE_HEADER = ["stage", "n_new_queries", "substitute_agreement", "fgsm_transfer_rate"]
ROC_HEADER = ["stage", "batch_size", "scheme", "mb_size", "inner", "auc", "n_pos", "n_neg", "seed"]


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def load_config(path, seed: int | None = None) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    data = cfg["data"]
    if data["source"] == "idx":
        for key in ("images", "labels"):
            if not data["idx"][key]:
                raise ConfigError(f"missing data path: data.idx.{key}")
            if not Path(data["idx"][key]).exists():
                raise ConfigError(f"data.idx.{key}: file not found: {data['idx'][key]}")
    elif data["source"] != "synthetic":
        raise ConfigError(f"data.source must be 'synthetic' or 'idx', got {data['source']!r}")
    sizes = cfg["detection"]["batch_sizes"]
    if list(sizes) != sorted(sizes) or not sizes:
        raise ConfigError("detection.batch_sizes must be a nonempty ascending list")
    if not cfg["nulls"]["layers"]:
        raise ConfigError("nulls.layers must be nonempty")
    for stage in cfg["detection"]["stages"]:
        if not 0 <= stage <= cfg["re_attack"]["n_stages"]:
            raise ConfigError(f"detection.stages entry {stage} outside 0..{cfg['re_attack']['n_stages']}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Splits:
    train: Dataset
    heldout: Dataset
    test: Dataset


def load_splits(cfg: dict) -> Splits:
    seed = cfg["seed"]
    d = cfg["data"]
    if d["source"] == "idx":
        data = load_idx(d["idx"]["images"], d["idx"]["labels"], d["idx"]["n_classes"])
    else:
        s = d["synthetic"]
        data = gen_synthetic(SyntheticSpec(n_classes=s["n_classes"], dim=s["dim"], spread=s["spread"],
                                           samples_per_class=s["samples_per_class"],
                                           mean_range=tuple(s["mean_range"]), means=s.get("means"),
                                           seed=child_seed(seed, "data")))
    return Splits(*split(data, d["split"], child_seed(seed, "split")))


def _train_cfg(section: dict, seed: int) -> TrainConfig:
    return TrainConfig(epochs=section["epochs"], learning_rate=section["learning_rate"],
                       batch_size=section["batch_size"], seed=seed, init_scale=section["init_scale"])


def _em_cfg(cfg: dict) -> EmConfig:
    e = cfg["em"]
    return EmConfig(components=tuple(e["components"]), max_iter=e["max_iter"], tol=e["tol"],
                    restarts=e["restarts"], log_eps=e["log_eps"], seed=child_seed(cfg["seed"], "em"))


def _ada_cfg(cfg: dict) -> AdaConfig:
    return AdaConfig(layers=tuple(cfg["nulls"]["layers"]), variant=cfg["ada"]["variant"],
                     confusion_floor=cfg["ada"]["confusion_floor"])


def _re_cfg(cfg: dict) -> REConfig:
    r = cfg["re_attack"]
    return REConfig(lam=r["lam"], n_stages=r["n_stages"], s0_per_class=r["s0_per_class"],
                    hidden=tuple(r["hidden"]), activation=r["activation"],
                    train=_train_cfg(r["train"], 0), seed=child_seed(cfg["seed"], "re-attack"))


def _write_csv(path: Path, header, rows, cfg: dict) -> None:
    buf = io.StringIO()
    buf.write(f"# config_sha256={config_hash(cfg)} seed={cfg['seed']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing {what} artifact {path}; run the earlier pipeline step first")
    return path


# -- commands ----------------------------------------------------------------

def cmd_train_oracle(cfg: dict, out: Path) -> dict:
    sp = load_splits(cfg)
    o = cfg["oracle"]
    dims = [sp.train.dim, *o["hidden"], sp.train.n_classes]
    net = init_net(dims, o["activation"], o["train"]["init_scale"], child_seed(cfg["seed"], "oracle-init"))
    net = train(net, sp.train, _train_cfg(o["train"], child_seed(cfg["seed"], "oracle-train")))
    acc = float(np.mean(predict(net, sp.test.X) == sp.test.y))
    save_artifact(out / "oracle.json", "net", net)
    report = {"test_accuracy": acc, "n_train": len(sp.train), "n_test": len(sp.test)}
    save_artifact(out / "oracle_report.json", "experiment", report)
    return report


def cmd_fit_nulls(cfg: dict, out: Path) -> dict:
    net = load_artifact(_require(out / "oracle.json", "oracle"), "net")
    sp = load_splits(cfg)
    n = cfg["nulls"]
    nulls = fit_null_models(net, sp.train, n["layers"], n["mode"], n["pair_cap"], _em_cfg(cfg), n["min_per_class"])
    conf = estimate_confusion_matrix(net, sp.heldout, n["confusion_alpha"])
    save_artifact(out / "nulls.json", "nulls", nulls)
    save_artifact(out / "confusion.json", "confusion", conf)
    return {"n_models": len(nulls.models), "pairs_per_layer": {l: len(p) for l, p in nulls.pairs.items()}}


def cmd_simulate_re(cfg: dict, out: Path) -> list:
    net = load_artifact(_require(out / "oracle.json", "oracle"), "net")
    sp = load_splits(cfg)
    oracle = Oracle(net)
    stages = run_re_attack(oracle, sp.train, _re_cfg(cfg))
    metrics = evaluate_attack(net, stages, sp.test, cfg["fgsm_eps"])
    save_artifact(out / "stages.json", "stages", stages)
    rows = [[st.k, st.n_new_queries, agree, transfer] for st, (agree, transfer) in zip(stages, metrics)]
    _write_csv(out / "re_stages.csv", RE_HEADER, rows, cfg)
    return rows


def _detector(out: Path):
    net = load_artifact(_require(out / "oracle.json", "oracle"), "net")
    nulls = load_artifact(_require(out / "nulls.json", "null-model"), "nulls")
    conf = load_artifact(_require(out / "confusion.json", "confusion"), "confusion")
    return net, nulls, conf


def _auc_rows(cfg, label, query_stats, clean_stats, stream: str):
    det = cfg["detection"]
    rows = []
    for bs in det["batch_sizes"]:
        for scheme in det["schemes"]:
            mb = min(det["mb_size"], bs)
            bcfg = BatchScoreConfig(bs, scheme, mb, det["inner"], det["n_batches"])
            # the same sampled batches are scored under every scheme
            rng = child_rng(cfg["seed"], f"{stream}/{label}/{bs}")
            pos = score_sampled_batches(query_stats, bcfg, rng)
            neg = score_sampled_batches(clean_stats, bcfg, rng)
            rows.append([label, bs, scheme, mb, det["inner"], roc_auc(pos, neg), len(pos), len(neg), cfg["seed"]])
    return rows


def cmd_evaluate_detection(cfg: dict, out: Path) -> list:
    net, nulls, conf = _detector(out)
    stages = load_artifact(_require(out / "stages.json", "stage transcript"), "stages")
    sp = load_splits(cfg)
    ada = _ada_cfg(cfg)
    clean = lawa_maxkl(net, nulls, conf, sp.test.X, ada)
    rows = []
    by_k = {st.k: st for st in stages}
    for k in cfg["detection"]["stages"]:
        if k not in by_k:
            raise ValueError(f"stage {k} not present in the stage transcript")
        query = lawa_maxkl(net, nulls, conf, by_k[k].new_queries, ada)
        rows += _auc_rows(cfg, k, query, clean, "batch-sampling")
    _write_csv(out / "detection_auc.csv", ROC_HEADER, rows, cfg)
    save_artifact(out / "detection_result.json", "experiment",
                  {"header": ROC_HEADER, "rows": rows, "config_sha256": config_hash(cfg)})
    return rows


def cmd_noise_probe(cfg: dict, out: Path) -> list:
    net, nulls, conf = _detector(out)
    sp = load_splits(cfg)
    if sp.test.dim != net.input_dim:
        raise ValueError(f"data dimension {sp.test.dim} does not match detector input {net.input_dim}")
    ada = _ada_cfg(cfg)
    rng = child_rng(cfg["seed"], "noise-queries")
    noise = rng.uniform(0.0, 1.0, size=(cfg["detection"]["noise_pool_size"], net.input_dim))
    clean = lawa_maxkl(net, nulls, conf, sp.test.X, ada)
    query = lawa_maxkl(net, nulls, conf, noise, ada)
    rows = _auc_rows(cfg, "noise", query, clean, "noise-sampling")
    _write_csv(out / "noise_probe.csv", ROC_HEADER, rows, cfg)
    return rows


COMMANDS = {
    "train-oracle": cmd_train_oracle,
    "fit-nulls": cmd_fit_nulls,
    "simulate-re": cmd_simulate_re,
    "evaluate-detection": cmd_evaluate_detection,
    "noise-probe": cmd_noise_probe,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adare", description="Simulate and detect staged RE query attacks.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="experiment config (JSON)")
        s.add_argument("--out", required=True, help="output directory for artifacts and CSV files")
        s.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"adare {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
