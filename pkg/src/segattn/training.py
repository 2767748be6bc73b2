"""SGD-with-momentum training loop, checkpointing, and evaluation.

Training is single-threaded and fully determined by the run seed: the
same seed drives initialization, batch sampling, and data generation,
so repeated runs produce byte-identical checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, params
from .errors import DivergenceError
from .network import (AttentionSegNet, LossWeights, cross_entropy_loss,
                      downsample_labels, net_forward, poly_lr, total_loss)
from .tape import Tape
from .tensor import Tensor


@dataclass
class SgdOptimizer:
    """SGD with momentum and decoupled-from-nothing weight decay:
    v = momentum*v + grad + wd*param; param -= lr*v."""
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, named: list[tuple[str, Tensor]], grads: list[np.ndarray], lr: float) -> None:
        for (name, p), g in zip(named, grads):
            v = self.velocities.get(name)
            update = g + self.weight_decay * p.data
            v = update if v is None else self.momentum * v + update
            self.velocities[name] = v
            p.data -= lr * v


def train_step(net: AttentionSegNet, optimizer: SgdOptimizer,
               images: Tensor, labels: np.ndarray, lr: float,
               weights: LossWeights | None = None,
               zero_caa: bool = False, zero_rsa: bool = False) -> dict[str, float]:
    """One forward/backward/update; returns the pre-step loss values.

    Raises DivergenceError if the total loss is not finite.
    """
    weights = weights or LossWeights()
    tape = Tape()
    out = net_forward(images, net, training=True, tape=tape,
                      zero_caa=zero_caa, zero_rsa=zero_rsa)
    main = cross_entropy_loss(out.logits, labels, tape)
    cls = cross_entropy_loss(out.class_attention.logits, downsample_labels(labels), tape)
    aux = cross_entropy_loss(out.aux_logits, labels, tape)
    loss = total_loss(main, cls, aux, weights, tape)
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError(
            f"non-finite loss {value} (main={main.item()}, cls={cls.item()}, aux={aux.item()})")
    if lr != 0.0:
        named = params.named_parameters(net)
        grads = tape.backward(loss, [p for _, p in named])
        optimizer.step(named, grads, lr)
    return {"total": value, "main": main.item(), "cls": cls.item(), "aux": aux.item()}


@dataclass
class TrainResult:
    history: list[dict[str, float]]
    initial_loss: float
    final_loss: float


def train(net: AttentionSegNet, images: list[Tensor], labels: list[np.ndarray],
          iterations: int, batch_size: int = 4, base_lr: float = 0.01,
          momentum: float = 0.9, weight_decay: float = 5e-4, power: float = 0.9,
          weights: LossWeights | None = None, seed: int = 0,
          zero_attention: bool = False, log_every: int = 50) -> TrainResult:
    """Poly-schedule SGD over a fixed scene list with seeded batch sampling."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5a]))
    optimizer = SgdOptimizer(momentum=momentum, weight_decay=weight_decay)
    history = []
    n = len(images)
    dtype = images[0].data.dtype
    for it in range(iterations):
        idx = rng.integers(0, n, size=batch_size)
        batch = Tensor(np.stack([images[i].data for i in idx]).astype(dtype, copy=False),
                       images[0].dtype)
        lab = np.stack([labels[i] for i in idx])
        lr = poly_lr(it, iterations, base_lr, power)
        losses = train_step(net, optimizer, batch, lab, lr, weights,
                            zero_caa=zero_attention, zero_rsa=zero_attention)
        if it % log_every == 0 or it == iterations - 1:
            history.append({"iteration": float(it), "lr": lr, **losses})
    return TrainResult(history=history,
                       initial_loss=history[0]["total"],
                       final_loss=history[-1]["total"])


def predict(net: AttentionSegNet, image: Tensor,
            zero_attention: bool = False) -> np.ndarray:
    """Argmax class map for one [3,H,W] scene; ties go to the lowest id."""
    batch = Tensor(image.data[None], image.dtype)
    out = net_forward(batch, net, training=False,
                      zero_caa=zero_attention, zero_rsa=zero_attention)
    return np.argmax(out.logits.data[0], axis=0).astype(np.uint8)


def evaluate_model(net: AttentionSegNet, images: list[Tensor],
                   labels: list[np.ndarray],
                   zero_attention: bool = False) -> metrics.MetricSummary:
    """Confusion-matrix metrics over a held-out scene list."""
    if not images:
        raise ValueError("evaluation needs a nonempty dataset")
    cm = metrics.ConfusionMatrix(net.num_classes)
    for img, lab in zip(images, labels):
        cm.accumulate(predict(net, img, zero_attention), lab)
    return metrics.summarize(cm)


def save_checkpoint(directory: str | Path, net: AttentionSegNet,
                    iteration: int, seed: int, config_echo: str) -> None:
    directory = Path(directory)
    params.save_params(directory, net)
    meta = [f"iteration = {iteration}", f"seed = {seed}", "", config_echo]
    (directory / "checkpoint.txt").write_text("\n".join(meta) + "\n")


def load_checkpoint(directory: str | Path, net: AttentionSegNet) -> None:
    params.load_params(directory, net)
