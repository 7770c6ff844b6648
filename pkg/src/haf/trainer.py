"""Mini-batch SGD training with dissimilar-pair sampling and unit-norm heads."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .crm import rank_by_probability
from .errors import DivergedLoss, InvalidConfig, NumericError
from .losses import LOSS_TERMS, hxe_batch, total_loss
from .metrics import evaluate
from .model import backward, forward, init_stack, max_head_norm_deviation, project_unit_norm
from .numcore import make_rng

log = logging.getLogger(__name__)

PAIR_ATTEMPTS_FACTOR = 50


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr_backbone: float = 0.01
    lr_heads: float = 0.1
    momentum: float = 0.9
    margin: float = 3.0
    pairs_per_batch: int = 256
    margin_level_start: int = 1
    enabled_losses: tuple = LOSS_TERMS
    hidden: tuple = (64, 64)
    hxe_alpha: float = 0.1
    seed: int = 0

    def validate(self, tree):
        unknown = set(self.enabled_losses) - set(LOSS_TERMS) - {"hxe"}
        if unknown:
            raise InvalidConfig(f"unknown loss terms {sorted(unknown)}")
        if not self.enabled_losses:
            raise InvalidConfig("at least one loss term must be enabled")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidConfig("epochs must be >= 0 and batch_size >= 1")
        if "margin" in self.enabled_losses:
            if self.batch_size < 2:
                raise InvalidConfig("margin loss needs batch_size >= 2")
            if not 1 <= self.margin_level_start <= tree.num_levels - 1:
                raise InvalidConfig(
                    f"margin_level_start must lie in [1, {tree.num_levels - 1}]"
                )
            if not self.margin > 0:
                raise InvalidConfig("margin must be positive")
        if "hxe" in self.enabled_losses and len(self.enabled_losses) > 1:
            raise InvalidConfig("hxe is a standalone baseline; enable it on its own")

    def to_dict(self):
        d = asdict(self)
        d["enabled_losses"] = list(self.enabled_losses)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    batches: list = field(default_factory=list)

    def to_jsonl(self):
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)


def sample_pairs(rng, labels, tree, k, n_pairs):
    """Up to ``n_pairs`` index pairs per level in ``[k, H-1]`` whose level labels differ.

    Pairs are drawn uniformly by rejection with at most
    ``PAIR_ATTEMPTS_FACTOR * n_pairs`` draws per level and stored as
    ``(min, max)``. Levels without any dissimilar pair get an empty array.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    out = {}
    for h in range(k, tree.num_levels):
        lab = tree.coarse_labels(labels, h)
        found = []
        got = 0
        if n >= 2 and np.any(lab != lab[0]):
            for _ in range(PAIR_ATTEMPTS_FACTOR):
                i = rng.integers(0, n, n_pairs)
                j = rng.integers(0, n, n_pairs)
                keep = lab[i] != lab[j]
                pair = np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1)[keep]
                found.append(pair[: n_pairs - got])
                got += len(found[-1])
                if got >= n_pairs:
                    break
        if got < n_pairs:
            log.debug("level %d: sampled %d of %d dissimilar pairs", h, got, n_pairs)
        out[h] = np.concatenate(found) if found else np.empty((0, 2), dtype=np.int64)
    return out


def predict_fine(stack, X):
    _, preds = forward(stack, X)
    return preds.probs[-1]


def _hxe_step(tree, stack, X, y, alpha):
    _, preds = forward(stack, X)
    value, dfine = hxe_batch(tree, preds, y, alpha)
    dlogits = [np.zeros_like(z) for z in preds.logits]
    dlogits[-1] = dfine
    return value, backward(stack, X, dlogits)


def _batch_step(tree, stack, X, y, config, rng, hxe_only, use_pairs):
    if hxe_only:
        value, grads = _hxe_step(tree, stack, X, y, config.hxe_alpha)
        return value, grads, {"total": value, "hxe": value}
    pairs = (
        sample_pairs(rng, y, tree, config.margin_level_start, config.pairs_per_batch)
        if use_pairs else None
    )
    br = total_loss(tree, stack, X, y, pairs, config.enabled_losses, config.margin)
    return br.total, br.grads, br.values()


def train(tree, train_ds, val_ds, config, init=None):
    """Train a stack; returns ``(stack, TrainLog)``.

    Per batch: enabled loss terms, one momentum-SGD step (separate learning
    rates for MLP and heads), then projection of head rows to unit norm.
    """
    config.validate(tree)
    rng = make_rng(config.seed)
    stack = init if init is not None else init_stack(
        tree.level_sizes, train_ds.input_dim, hidden=config.hidden, rng=rng
    )
    stack = project_unit_norm(stack.copy())
    n_mlp = 2 * len(stack.layers)
    params = stack.parameters()
    lrs = [config.lr_backbone] * n_mlp + [config.lr_heads] * len(stack.heads)
    velocity = [np.zeros_like(p) for p in params]
    hxe_only = tuple(config.enabled_losses) == ("hxe",)
    use_pairs = "margin" in config.enabled_losses

    tlog = TrainLog()
    N = len(train_ds)
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(N)
        sums = dict.fromkeys(LOSS_TERMS + ("total",), 0.0)
        n_batches = 0
        max_dev = 0.0
        for start in range(0, N, config.batch_size):
            idx = order[start:start + config.batch_size]
            X, y = train_ds.features[idx], train_ds.fine_labels[idx]
            try:
                value, grads, record = _batch_step(tree, stack, X, y, config, rng, hxe_only, use_pairs)
            except NumericError as exc:
                # a numeric failure mid-run (e.g. heads blown apart by a huge step) is divergence
                raise DivergedLoss(f"numeric failure at epoch {epoch} batch {step}: {exc}", step) from exc
            if not hxe_only:
                for key in sums:
                    sums[key] += record[key]
            if not np.isfinite(value):
                raise DivergedLoss(f"non-finite loss at epoch {epoch} batch {step}", step)

            params = stack.parameters()
            new = []
            for p, g, v, lr in zip(params, grads.as_list(), velocity, lrs):
                v *= config.momentum
                v += g
                new.append(p - lr * v)
            if not all(np.isfinite(p).all() for p in new):
                raise DivergedLoss(f"non-finite parameters after epoch {epoch} batch {step}", step)
            stack = project_unit_norm(stack.with_parameters(new))
            dev = max_head_norm_deviation(stack)
            max_dev = max(max_dev, dev)
            record.update(epoch=epoch, step=step, enabled=list(config.enabled_losses),
                          norm_deviation=dev)
            tlog.batches.append(record)
            step += 1
            n_batches += 1

        entry = {
            "epoch": epoch,
            "loss": {k: v / max(n_batches, 1) for k, v in sums.items()},
            "max_norm_deviation": max_dev,
            "wall_time": time.perf_counter() - t0,
        }
        if hxe_only:
            entry["loss"] = {"hxe": sum(b["hxe"] for b in tlog.batches[-n_batches:]) / n_batches}
        if val_ds is not None and len(val_ds):
            ranked = rank_by_probability(predict_fine(stack, val_ds.features))[:, :1]
            rep = evaluate(tree, tree.lca_matrix, ranked, val_ds.fine_labels, ks=(1,))
            entry["val"] = rep.to_dict()
        tlog.epochs.append(entry)
        log.info("epoch %d loss %.4f", epoch, entry["loss"].get("total", entry["loss"].get("hxe")))
    return stack, tlog
