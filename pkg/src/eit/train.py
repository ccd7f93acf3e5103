"""Toy-scale training: cross-entropy, SGD with momentum, cosine learning
rate, seeded shuffling and optional horizontal flip. Small by design; it
exists to exercise gradients end to end and to produce checkpoints the
probes can read."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, ContractError, DivergenceError
from .model import ModelConfig, Tensor, forward, init_params
from . import checkpoint


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    base_lr: float = 1e-3
    min_lr: float = 1e-5
    momentum: float = 0.9
    seed: int = 0
    schedule: str = "cosine"
    hflip: bool = False

    def __post_init__(self):
        if not 0 < self.min_lr <= self.base_lr:
            raise ConfigError(f"need 0 < min_lr <= base_lr, got "
                              f"{self.min_lr} / {self.base_lr}")
        if self.schedule != "cosine":
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


def train_config_from_dict(doc: dict) -> TrainConfig:
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown train-config keys: {sorted(unknown)}")
    return TrainConfig(**doc)


def load_train_config(path) -> TrainConfig:
    with open(path) as f:
        try:
            doc = json.load(f)
        except ValueError as e:
            raise ConfigError(f"{path}: not valid JSON: {e}") from e
    return train_config_from_dict(doc)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean -log softmax(logits)[label] over the batch."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels do not index {k} classes for batch {n}")
    shift = Tensor(logits.data.max(axis=-1, keepdims=True))  # constant
    z = logits - shift
    lse = z.exp().sum(axis=-1).log()
    picked = z[np.arange(n), labels]
    return (lse - picked).mean()


def cosine_lr(step: int, total_steps: int, base: float, minimum: float) -> float:
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    return minimum + 0.5 * (base - minimum) * (1.0 + math.cos(math.pi * step / total_steps))


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
             lr: float, momentum: float,
             state: dict[str, np.ndarray]) -> None:
    """Classic momentum: v <- mu*v + g; theta <- theta - lr*v. In place."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != param {p.shape} "
                                f"for {name}")
        v = state.get(name)
        v = g.copy() if v is None or momentum == 0.0 else momentum * v + g
        state[name] = v
        if lr != 0.0:
            p.data = p.data - lr * v


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=-1) == labels).mean())


def evaluate(params, config: ModelConfig, dataset: Dataset,
             batch_size: int = 64) -> tuple[float, float]:
    losses, hits, total = 0.0, 0.0, 0
    for lo in range(0, len(dataset), batch_size):
        images = dataset.images[lo:lo + batch_size]
        labels = dataset.labels[lo:lo + batch_size]
        logits = forward(images, params, config)
        losses += cross_entropy(logits, labels).item() * len(labels)
        hits += accuracy(logits.data, labels) * len(labels)
        total += len(labels)
    return losses / total, hits / total


def train(model_config: ModelConfig, train_config: TrainConfig,
          dataset: Dataset, out_dir: str | None = None,
          eval_dataset: Dataset | None = None):
    """Run the loop; returns (params, metrics rows). With out_dir set,
    writes model.ckpt and metrics.csv there."""
    if dataset.classes > model_config.classes:
        raise ConfigError(f"dataset has {dataset.classes} classes, model "
                          f"only {model_config.classes}")
    h, w, _ = model_config.image
    if dataset.images.shape[2:] != (h, w):
        raise ConfigError(f"dataset images {dataset.images.shape[2:]} do not "
                          f"match model image size {(h, w)}")
    params = init_params(model_config, train_config.seed)
    rng = np.random.default_rng(train_config.seed + 1)
    state: dict[str, np.ndarray] = {}
    n = len(dataset)
    bs = train_config.batch_size
    batches_per_epoch = (n + bs - 1) // bs
    total_steps = train_config.epochs * batches_per_epoch
    eval_set = eval_dataset if eval_dataset is not None else dataset

    metrics = []
    step = 0
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        ep_loss, ep_hits = 0.0, 0.0
        for lo in range(0, n, bs):
            idx = order[lo:lo + bs]
            images = dataset.images[idx]
            labels = dataset.labels[idx]
            if train_config.hflip:
                flip = rng.random(len(idx)) < 0.5
                images = images.copy()
                images[flip] = images[flip, :, :, ::-1]
            lr = cosine_lr(step, total_steps, train_config.base_lr,
                           train_config.min_lr)
            try:
                logits = forward(images, params, model_config, train=True,
                                 rng=rng)
                loss = cross_entropy(logits, labels)
            except ContractError as exc:
                # inside the loop a violated numeric contract (e.g. overflow
                # feeding the attention softmax) means optimization blew up
                raise DivergenceError(
                    f"numeric blow-up at step {step}: {exc}") from exc
            if not np.isfinite(loss.item()):
                raise DivergenceError(f"non-finite loss at step {step}")
            for p in params.values():
                p.zero_grad()
            loss.backward()
            grads = {name: p.grad for name, p in params.items()
                     if p.grad is not None}
            sgd_step(params, grads, lr, train_config.momentum, state)
            ep_loss += loss.item() * len(idx)
            ep_hits += accuracy(logits.data, labels) * len(idx)
            step += 1
        try:
            eval_loss, eval_acc = evaluate(params, model_config, eval_set)
        except ContractError as exc:
            raise DivergenceError(
                f"numeric blow-up evaluating after epoch {epoch}: {exc}"
            ) from exc
        metrics.append({"epoch": epoch, "step": step,
                        "lr": cosine_lr(step, total_steps, train_config.base_lr,
                                        train_config.min_lr),
                        "train_loss": ep_loss / n, "train_acc": ep_hits / n,
                        "eval_loss": eval_loss, "eval_acc": eval_acc})

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint.save(os.path.join(out_dir, "model.ckpt"), params, model_config)
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), metrics)
    return params, metrics


def write_metrics_csv(path, metrics: list[dict]):
    cols = ["epoch", "step", "lr", "train_loss", "train_acc",
            "eval_loss", "eval_acc"]
    with open(path, "w", newline="") as f:
        out = csv.writer(f)
        out.writerow(cols)
        for row in metrics:
            out.writerow([row["epoch"], row["step"]] +
                         [repr(float(row[c])) for c in cols[2:]])
