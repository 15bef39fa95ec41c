"""Training loop: binary cross-entropy loss, SGD/Adam updates, epoch
scheduling, and per-epoch curve logging.

Gradients are accumulated one sample at a time on a fresh tape, averaged
over the batch, then applied. All shuffling and dropout masking draws from
seeds derived off ``TrainConfig.seed``; dropout masks are keyed per sample
(not per epoch), so a fully frozen model repeats its losses exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLossError, ShapeError
from .model import ModelGraph
from .seeding import derive_seed
from .tensor import GradTape, Tensor, backward, record_op

BCE_EPS = 1e-7


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-4
    optimizer: str = "adam"  # sgd|adam
    loss: str = "bce"
    seed: int = 0
    freeze_policy: tuple[str, ...] = ()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "bce":
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class TrainingCurves:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def rows(self):
        """(epoch, train_loss, train_acc, val_loss, val_acc) tuples, 1-based."""
        for i in range(len(self)):
            yield i + 1, self.train_loss[i], self.train_acc[i], self.val_loss[i], self.val_acc[i]

    def as_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
        }


def bce_value(p: float, y: int) -> float:
    """-[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps]."""
    pc = min(max(float(p), BCE_EPS), 1.0 - BCE_EPS)
    return -(y * math.log(pc) + (1 - y) * math.log(1.0 - pc))


def bce_loss(p: Tensor, y: int) -> Tensor:
    """Binary cross-entropy of a single predicted probability, on the tape.

    The probability is clamped to [eps, 1-eps] before the logs; the gradient
    is evaluated at the clamped value so it stays finite at the extremes.
    """
    if p.size != 1:
        raise ShapeError(f"bce_loss expects a single probability, got shape {p.shape}")
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    pc = np.clip(p.data.astype(np.float64), BCE_EPS, 1.0 - BCE_EPS)
    value = -(y * np.log(pc) + (1 - y) * np.log(1.0 - pc))
    out = Tensor([1], value.reshape(1).astype(np.float32))

    def bwd(g):
        dp = -(y / pc - (1 - y) / (1.0 - pc))
        return (g.reshape(p.shape) * dp.reshape(p.shape).astype(np.float32),)

    return record_op((p,), out, bwd)


class SGD:
    """Plain gradient descent: w <- w - lr * g."""

    def __init__(self, learning_rate: float):
        self.lr = np.float32(learning_rate)

    def step(self, params: list[Tensor]) -> None:
        for t in params:
            if t.grad is None:
                continue
            if t.grad.shape != t.data.shape:
                raise ShapeError(f"gradient shape {t.grad.shape} != param shape {t.data.shape}")
            t.data -= self.lr * t.grad


class Adam:
    """Adam with bias correction: beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, params: list[Tensor]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for t in params:
            if t.grad is None:
                continue
            if t.grad.shape != t.data.shape:
                raise ShapeError(f"gradient shape {t.grad.shape} != param shape {t.data.shape}")
            g = t.grad
            m = self._m.get(t.tid)
            if m is None:
                m = self._m[t.tid] = np.zeros_like(t.data)
            v = self._v.get(t.tid)
            if v is None:
                v = self._v[t.tid] = np.zeros_like(t.data)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            mhat = m / np.float32(bias1)
            vhat = v / np.float32(bias2)
            t.data -= np.float32(self.lr) * mhat / (np.sqrt(vhat) + np.float32(self.eps))


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(config.learning_rate)


def fit(model: ModelGraph, train_data, val_data, config: TrainConfig) -> TrainingCurves:
    """Train for ``config.epochs`` epochs, returning per-epoch curves.

    ``train_data`` and ``val_data`` are indexable collections of
    (image, label) pairs with labels in {0, 1}. Sample order is reshuffled
    each epoch by a seeded RNG; the whole run is deterministic in
    ``config.seed``.
    """
    if len(train_data) == 0:
        raise ValueError("training split is empty")
    if len(val_data) == 0:
        raise ValueError("validation split is empty")
    model.set_trainable(config.freeze_policy)
    params = model.trainable_parameters()
    optimizer = make_optimizer(config)
    curves = TrainingCurves()

    for epoch in range(config.epochs):
        rng = np.random.default_rng(derive_seed(config.seed, "order", epoch))
        order = rng.permutation(len(train_data))
        losses: list[float] = []
        correct = 0
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            batch = order[start:start + config.batch_size]
            for t in params:
                t.zero_grad()
            for idx in batch:
                image, label = train_data[int(idx)]
                step_seed = derive_seed(config.seed, "dropout", int(idx))
                with GradTape() as tape:
                    prob = model.forward(image, training=True, step_seed=step_seed)
                    loss = bce_loss(prob, int(label))
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteLossError(
                        f"non-finite loss {value} at epoch {epoch + 1}, batch {batch_no + 1}",
                        epoch=epoch + 1,
                        batch=batch_no + 1,
                    )
                losses.append(value)
                correct += int((prob.item() >= 0.5) == bool(label))
                if params:
                    backward(loss, tape)
            if params:
                inv = np.float32(1.0 / len(batch))
                for t in params:
                    if t.grad is not None:
                        t.grad *= inv
                optimizer.step(params)

        val_losses = []
        val_correct = 0
        for i in range(len(val_data)):
            image, label = val_data[i]
            p = model.predict_proba(image)
            val_losses.append(bce_value(p, int(label)))
            val_correct += int((p >= 0.5) == bool(label))

        curves.train_loss.append(float(np.mean(losses)))
        curves.train_acc.append(correct / len(order))
        curves.val_loss.append(float(np.mean(val_losses)))
        curves.val_acc.append(val_correct / len(val_data))
    return curves
