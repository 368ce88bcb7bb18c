"""Model training for the three comparison regimes.

All regimes share the same optimizer (plain SGD with momentum on
mini-batches, fixed learning rate): "ce" is vanilla cross-entropy, "wd"
adds an L2 penalty on weight matrices (biases stay unpenalized), and "at"
trains on adversarial batches produced by a short PGD inner maximization
around each mini-batch. A divergence guard aborts with context instead of
silently writing out a NaN model.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import data_io
from .network import Network, build_network
from .robustness import pgd_ascent

REGIMES = ("ce", "wd", "at")

_LOSS_BLOWUP = 1e6


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite or explodes mid-training."""


DEFAULT_WEIGHT_DECAY = 5e-4
DEFAULT_AT_EPS = 0.1
DEFAULT_AT_STEPS = 7
DEFAULT_AT_WARMUP_EPOCHS = 2


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one (architecture, regime) training run.

    Regime-specific knobs exist only under their regime: ``weight_decay``
    is set (default 5e-4) exactly when regime is "wd", and the AT inner
    attack settings exactly when regime is "at" (defaults: eps 0.1, 7
    steps, step size 2.5*eps/steps, 2 warmup epochs). Passing a knob
    under the wrong regime is an error rather than a silent ignore.

    During the first ``at_warmup_epochs`` epochs of an AT run the attack
    budget is ramped linearly (epoch e of W warmup epochs uses
    eps * e/(W+1), with the step size scaled to match); a cold start at
    the full budget reliably kills every ReLU in a small first layer and
    leaves the model at the uniform predictor for good.
    """

    arch: str
    regime: str = "ce"
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: Optional[float] = None
    at_eps: Optional[float] = None
    at_steps: Optional[int] = None
    at_step_size: Optional[float] = None
    at_warmup_epochs: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}, want one of {REGIMES}")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.regime == "wd":
            if self.weight_decay is None:
                object.__setattr__(self, "weight_decay", DEFAULT_WEIGHT_DECAY)
            if self.weight_decay <= 0:
                raise ValueError("wd regime requires positive weight_decay")
        elif self.weight_decay is not None:
            raise ValueError(f"weight_decay is a wd-only setting (regime {self.regime!r})")
        if self.regime == "at":
            if self.at_eps is None:
                object.__setattr__(self, "at_eps", DEFAULT_AT_EPS)
            if self.at_steps is None:
                object.__setattr__(self, "at_steps", DEFAULT_AT_STEPS)
            if self.at_eps <= 0:
                raise ValueError("at_eps must be positive")
            if self.at_steps <= 0:
                raise ValueError("at_steps must be positive")
            if self.at_step_size is None:
                object.__setattr__(
                    self, "at_step_size", 2.5 * self.at_eps / self.at_steps
                )
            if self.at_step_size <= 0:
                raise ValueError("at_step_size must be positive")
            if self.at_warmup_epochs is None:
                object.__setattr__(
                    self, "at_warmup_epochs", DEFAULT_AT_WARMUP_EPOCHS
                )
            if self.at_warmup_epochs < 0:
                raise ValueError("at_warmup_epochs must be >= 0")
        else:
            for name in ("at_eps", "at_steps", "at_step_size", "at_warmup_epochs"):
                if getattr(self, name) is not None:
                    raise ValueError(
                        f"{name} is an at-only setting (regime {self.regime!r})"
                    )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        allowed = set(TrainConfig.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return TrainConfig(**d)


def train(images: np.ndarray, labels: np.ndarray, config: TrainConfig,
          log_path=None) -> Tuple[Network, List[Tuple[int, float, float, float]]]:
    """Train a fresh network on (images, labels).

    Returns ``(network, history)`` where history rows are (epoch, mean
    data loss over batches, accuracy on the training split, elapsed
    seconds since start). When ``log_path`` is given the history is also
    written there as CSV. The returned network's ``meta`` records the
    regime, seed, and full config.
    """
    if images.shape[0] == 0:
        raise ValueError("empty training set")
    net = build_network(config.arch, config.seed)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(1,))
    )
    attack_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(2,))
    )

    params = net.parameter_arrays()
    kinds = net.parameter_kinds()
    velocity = [np.zeros_like(p) for p in params]

    n = images.shape[0]
    history: List[Tuple[int, float, float, float]] = []
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        n_batches = 0
        for lo in range(0, n, config.batch_size):
            sel = perm[lo : lo + config.batch_size]
            xb = images[sel]
            yb = labels[sel]
            if config.regime == "at":
                ramp = min(1.0, epoch / (config.at_warmup_epochs + 1.0))
                xb = pgd_ascent(net, xb, yb, config.at_eps * ramp,
                                config.at_steps, config.at_step_size * ramp,
                                attack_rng)
            loss, grads = net.loss_and_parameter_gradients(xb, yb)
            if not np.isfinite(loss) or loss > _LOSS_BLOWUP:
                raise TrainingDiverged(
                    f"loss {loss} at epoch {epoch}, batch {n_batches} "
                    f"(arch={config.arch}, regime={config.regime})"
                )
            if config.regime == "wd":
                for p, g, kind in zip(params, grads, kinds):
                    if kind == "weight":
                        g += 2.0 * config.weight_decay * p
            for p, g, v in zip(params, grads, velocity):
                v *= config.momentum
                v += g
                p -= config.lr * v
            loss_sum += loss
            n_batches += 1
        acc = evaluate_accuracy(net, images, labels)
        history.append(
            (epoch, loss_sum / n_batches, acc, time.perf_counter() - t0)
        )

    net.meta = {
        "regime": config.regime,
        "seed": config.seed,
        "train_config": config.to_dict(),
    }
    if log_path is not None:
        data_io.write_csv(log_path, ["epoch", "loss", "accuracy", "seconds"], history)
    return net, history


def evaluate_accuracy(net: Network, images: np.ndarray, labels: np.ndarray,
                      batch_size: int = 512) -> float:
    """Plain classification accuracy, batched."""
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty evaluation set")
    hits = 0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        hits += int((net.predict(images[lo:hi]) == labels[lo:hi]).sum())
    return hits / n
