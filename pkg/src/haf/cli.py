"""Command-line entry point: ``haf gen-data | train | eval | gradcheck``.

Every command accepts ``--config FILE`` (JSON); explicit flags override
values from the file. Exit codes: 0 success, 1 usage error, 2 data or
validation error, 3 numeric failure (divergence, failed gradient check).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import gradcheck
from .crm import crm_rerank, rank_by_probability
from .data import SyntheticConfig, default_tree, generate, read_dataset, write_dataset
from .errors import DataError, HafError, NumericError
from .losses import LOSS_TERMS
from .metrics import evaluate
from .model import check_against_tree, stack_from_json, stack_to_json
from .taxonomy import cifar100_taxonomy, load_taxonomy, serialize_taxonomy
from .trainer import TrainConfig, predict_fine, train

log = logging.getLogger("haf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "taxonomy": None,
    "input_dim": 16,
    "samples_per_class": 200,
    "level_spread": [6.0, 3.0, 1.5],
    "noise_sigma": 3.0,
    "seed": 0,
    "train": None,
    "val": None,
    "test": None,
    "checkpoint": "checkpoint.json",
    "log": "train_log.jsonl",
    "out": ".",
    "ks": [1, 5],
    **{k: v for k, v in TrainConfig().to_dict().items() if k != "seed"},
}


class UsageError(HafError):
    pass


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _csv_list(cast):
    def parse(text):
        return [cast(v) for v in text.split(",") if v.strip()]
    return parse


def resolve_config(args, keys):
    """Defaults, then the JSON config file, then explicitly given flags."""
    cfg = {k: DEFAULTS.get(k) for k in keys}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {args.config} is not valid JSON: {exc}") from None
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k: v for k, v in file_cfg.items() if k in keys})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _load_tree(spec):
    if spec in (None, "default"):
        return default_tree()
    if spec == "cifar100":
        return cifar100_taxonomy()
    try:
        return load_taxonomy(spec)
    except FileNotFoundError:
        raise DataError(f"taxonomy file not found: {spec}") from None


def _read(path, what):
    if path is None:
        raise UsageError(f"no {what} file given")
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"{what} file not found: {path}") from None


def _write(path, text):
    path = Path(path)
    if not path.parent.is_dir():
        raise DataError(f"output directory does not exist: {path.parent}")
    path.write_text(text, encoding="utf-8")


def _sha256(text):
    return hashlib.sha256(text.encode()).hexdigest()


def _dump(doc):
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


# commands -------------------------------------------------------------------

GEN_KEYS = ["taxonomy", "input_dim", "samples_per_class", "level_spread", "noise_sigma",
            "seed", "out"]


def cmd_gen_data(args):
    cfg = resolve_config(args, GEN_KEYS)
    out = Path(cfg["out"])
    if not out.is_dir():
        raise DataError(f"output directory does not exist: {out}")
    tree = _load_tree(cfg["taxonomy"])
    syn = SyntheticConfig(tree, cfg["input_dim"], cfg["samples_per_class"],
                          tuple(cfg["level_spread"]), cfg["noise_sigma"], cfg["seed"])
    train_ds, test_ds = generate(syn)
    n_total = len(train_ds) + len(test_ds)
    _write(out / "taxonomy.txt", serialize_taxonomy(tree))
    _write(out / "train.csv", write_dataset(train_ds))
    _write(out / "test.csv", write_dataset(test_ds))
    # record content, not locations, so reruns elsewhere produce the same manifest
    recorded = {k: v for k, v in cfg.items() if k not in ("out", "taxonomy")}
    recorded["taxonomy_sha256"] = _sha256(serialize_taxonomy(tree))
    manifest = {
        "config": recorded, "config_hash": config_hash(recorded), "seed": cfg["seed"],
        "num_samples": n_total, "num_train": len(train_ds), "num_test": len(test_ds),
        "num_classes": tree.num_fine, "num_levels": tree.num_levels,
    }
    _write(out / "manifest.json", _dump(manifest))
    print(f"N={n_total} ({cfg['samples_per_class']} per class x {tree.num_fine} leaves), "
          f"train={len(train_ds)} test={len(test_ds)}, H={tree.num_levels} -> {out}")
    return EXIT_OK


TRAIN_KEYS = ["taxonomy", "train", "val", "checkpoint", "log", "seed"] + [
    k for k in TrainConfig().to_dict() if k != "seed"
]


def _train_config(cfg):
    fields = TrainConfig().to_dict()
    kw = {k: cfg[k] for k in fields if k in cfg and cfg[k] is not None}
    kw["enabled_losses"] = tuple(kw.get("enabled_losses", LOSS_TERMS))
    kw["hidden"] = tuple(kw.get("hidden", (64, 64)))
    return TrainConfig(**kw)


def cmd_train(args):
    cfg = resolve_config(args, TRAIN_KEYS)
    tree = _load_tree(cfg["taxonomy"])
    train_ds = read_dataset(_read(cfg["train"], "training data"), tree)
    val_ds = read_dataset(_read(cfg["val"], "validation data"), tree) if cfg["val"] else None
    tc = _train_config(cfg)
    stack, tlog = train(tree, train_ds, val_ds, tc)
    _write(cfg["checkpoint"], stack_to_json(stack))
    _write(cfg["log"], tlog.to_jsonl())
    last = tlog.epochs[-1]["loss"] if tlog.epochs else {}
    print(f"trained {tc.epochs} epochs with losses {','.join(tc.enabled_losses)}; "
          f"final mean loss {json.dumps(last, sort_keys=True)}; checkpoint -> {cfg['checkpoint']}")
    return EXIT_OK


EVAL_KEYS = ["taxonomy", "test", "checkpoint", "out", "ks", "seed"]


def _eval_threads():
    n = int(os.environ.get("HAF_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def _predict(stack, X, threads):
    chunks = np.array_split(np.arange(len(X)), max(1, min(threads, len(X))))
    if threads <= 1 or len(chunks) == 1:
        return predict_fine(stack, X)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(lambda idx: predict_fine(stack, X[idx]), chunks))
    return np.concatenate(parts)


def cmd_eval(args):
    cfg = resolve_config(args, EVAL_KEYS)
    tree = _load_tree(cfg["taxonomy"])
    ckpt_text = _read(cfg["checkpoint"], "checkpoint")
    stack = stack_from_json(ckpt_text)
    check_against_tree(stack, tree)
    data_text = _read(cfg["test"], "evaluation data")
    ds = read_dataset(data_text, tree)
    out = Path(cfg["out"])
    if not out.is_dir():
        raise DataError(f"output directory does not exist: {out}")

    probs = _predict(stack, ds.features, _eval_threads())
    lca = tree.lca_matrix
    plain = rank_by_probability(probs)
    crm = crm_rerank(lca, probs).order
    # hash what the run depends on (file contents, not where the files live)
    hashed = {k: v for k, v in cfg.items() if k not in ("out", "taxonomy", "test", "checkpoint")}
    hashed.update(taxonomy_sha256=_sha256(serialize_taxonomy(tree)),
                  data_sha256=_sha256(data_text), checkpoint_sha256=_sha256(ckpt_text))
    chash = config_hash(hashed)
    for name, ranked in (("plain", plain), ("crm", crm)):
        rep = evaluate(tree, lca, ranked, ds.fine_labels, cfg["ks"])
        rep.extra = {"mode": name, "seed": cfg["seed"], "config_hash": chash}
        _write(out / f"report_{name}.json", _dump(rep.to_dict()))
        if args.csv:
            _write(out / f"report_{name}.csv", rep.to_csv())
        ms = rep.mistake_severity
        print(f"{name:>5}: top1_error={rep.top1_error:.4f} mistake_severity={ms:.4f} "
              + " ".join(f"hdist@{k}={v:.4f}" for k, v in sorted(rep.hier_dist_at.items())))
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradcheck.run(trials=args.trials, seed=args.seed, corrupt=args.corrupt)
    print(gradcheck.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


# parser ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="haf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic hierarchical dataset")
    g.add_argument("--config")
    g.add_argument("--taxonomy", help="taxonomy file, 'default' (18 leaves) or 'cifar100'")
    g.add_argument("--input-dim", dest="input_dim", type=int)
    g.add_argument("--samples-per-class", dest="samples_per_class", type=int)
    g.add_argument("--level-spread", dest="level_spread", type=_csv_list(float))
    g.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="existing output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a classifier stack")
    t.add_argument("--config")
    t.add_argument("--taxonomy")
    t.add_argument("--train")
    t.add_argument("--val")
    t.add_argument("--checkpoint")
    t.add_argument("--log")
    t.add_argument("--losses", dest="enabled_losses", type=_csv_list(str),
                   help=f"comma list from {','.join(LOSS_TERMS)} (or 'hxe' alone)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr-backbone", dest="lr_backbone", type=float)
    t.add_argument("--lr-heads", dest="lr_heads", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--margin", type=float)
    t.add_argument("--pairs-per-batch", dest="pairs_per_batch", type=int)
    t.add_argument("--margin-level-start", dest="margin_level_start", type=int)
    t.add_argument("--hidden", type=_csv_list(int))
    t.add_argument("--hxe-alpha", dest="hxe_alpha", type=float)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate with and without CRM reranking")
    e.add_argument("--config")
    e.add_argument("--taxonomy")
    e.add_argument("--test", "--data", dest="test")
    e.add_argument("--checkpoint")
    e.add_argument("--out", help="existing output directory for the reports")
    e.add_argument("--ks", type=_csv_list(int))
    e.add_argument("--seed", type=int)
    e.add_argument("--csv", action="store_true", help="also write CSV reports")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="verify analytic gradients by finite differences")
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--corrupt", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
