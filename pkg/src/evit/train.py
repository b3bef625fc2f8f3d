"""Toy training: AdamW-style optimizer, cross-entropy loop, CSV metrics.

Training is deterministic for a fixed config: the build seed, the batch
sampler and the data generator all derive from ``train.seed``, and parameter
updates happen in place between steps (single-writer; nothing else mutates
tensors). Metrics are written as ``step,loss,accuracy`` rows, one per step,
and the final model is saved as a checkpoint.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .backbone import ModuleGraph, build
from .checkpoint import save_checkpoint
from .config import (
    RunConfig,
    ffn_from_string,
    pattern_from_string,
    spec_from_model_config,
)
from .data import ToyDataset, load_image_dir, synthetic_shapes
from .errors import ConfigError
from .tensor import Tensor


class AdamW:
    """Adam with decoupled weight decay.

    Decay applies only to matrix- and conv-shaped tensors; biases, norm
    parameters and gates (all 1-d) are left undecayed.
    """

    def __init__(
        self,
        learning_rate: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(
        self,
        named_params: list[tuple[str, Tensor]],
        grads: dict[str, np.ndarray],
        lr_scale: float = 1.0,
    ) -> None:
        self.step_count += 1
        t = self.step_count
        lr = self.learning_rate * lr_scale
        correction1 = 1.0 - self.beta1**t
        correction2 = 1.0 - self.beta2**t
        for name, p in named_params:
            g = grads[name]
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            if self.weight_decay and p.data.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data -= lr * update


def cosine_scale(step: int, total_steps: int) -> float:
    """Cosine decay from 1 to ~0 over the run; ``step`` is 1-based."""
    return 0.5 * (1.0 + math.cos(math.pi * (step - 1) / max(total_steps, 1)))


@dataclass
class TrainResult:
    steps: int
    final_loss: float
    final_accuracy: float
    metrics_path: Path
    checkpoint_path: Path
    history: list[tuple[int, float, float]] = field(default_factory=list)


def load_dataset(config: RunConfig) -> ToyDataset:
    data_cfg, model_cfg = config.data, config.model
    if data_cfg.source == "synthetic":
        dataset = synthetic_shapes(
            data_cfg.count, model_cfg.input_size, config.train.seed, data_cfg.noise
        )
    else:
        dataset = load_image_dir(data_cfg.source)
    if dataset.image_size != model_cfg.input_size:
        raise ConfigError(
            f"dataset images are {dataset.image_size}px but the model expects "
            f"{model_cfg.input_size}px"
        )
    if dataset.num_classes != model_cfg.num_classes:
        raise ConfigError(
            f"dataset has {dataset.num_classes} classes but the model head has "
            f"{model_cfg.num_classes}"
        )
    return dataset


def evaluate(graph: ModuleGraph, dataset: ToyDataset, batch_size: int = 32) -> float:
    """Accuracy of argmax predictions over a whole dataset."""
    hits = 0
    for start in range(0, len(dataset), batch_size):
        images = dataset.images[start : start + batch_size]
        labels = dataset.labels[start : start + batch_size]
        logits = graph.forward(images)
        hits += int((logits.data.argmax(axis=1) == labels).sum())
    return hits / len(dataset)


def run_training(config: RunConfig, out_dir: str | os.PathLike) -> TrainResult:
    """Train per ``config``, writing metrics.csv and model.ckpt into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    spec = spec_from_model_config(config.model)
    graph = build(
        spec,
        seed=config.train.seed,
        pattern=pattern_from_string(config.model.pattern),
        ffn_kind=ffn_from_string(config.model.ffn),
        zero_classifier=config.model.zero_classifier,
        input_size=config.model.input_size,
    )
    dataset = load_dataset(config)

    named = graph.named_parameters()
    optimizer = AdamW(config.train.learning_rate, config.train.weight_decay)
    sampler = np.random.default_rng(config.train.seed)

    history: list[tuple[int, float, float]] = []
    for step in range(1, config.train.steps + 1):
        idx = sampler.integers(0, len(dataset), config.train.batch_size)
        images = dataset.images[idx]
        labels = dataset.labels[idx]

        logits = graph.forward(images)
        loss = T.cross_entropy(logits, labels)
        grads = graph.gradients(loss)

        accuracy = float((logits.data.argmax(axis=1) == labels).mean())
        history.append((step, loss.item(), accuracy))

        scale = cosine_scale(step, config.train.steps) if config.train.cosine else 1.0
        optimizer.step(named, grads, scale)

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w") as fh:
        fh.write("step,loss,accuracy\n")
        for step, loss_value, accuracy in history:
            fh.write(f"{step},{loss_value!r},{accuracy!r}\n")

    checkpoint_path = out_dir / "model.ckpt"
    save_checkpoint(graph, checkpoint_path)

    return TrainResult(
        steps=config.train.steps,
        final_loss=history[-1][1] if history else float("nan"),
        final_accuracy=evaluate(graph, dataset),
        metrics_path=metrics_path,
        checkpoint_path=checkpoint_path,
        history=history,
    )
