"""Architecture-parameter and weight regularizers, plus coefficient schedules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

ALPHA_VARIANTS = ("none", "l2_adam_emulated", "weight_decay", "beta_decay", "beta_global", "beta_zero")
LOSS_VARIANTS = ("beta_decay", "beta_global", "beta_zero")
STEP_VARIANTS = ("l2_adam_emulated", "weight_decay")
WEIGHT_VARIANTS = ("l2", "larger_l2", "random_smoothing", "flooding")
SCHEDULE_KINDS = ("constant", "linear_increase", "linear_decay")


@dataclass(frozen=True)
class LambdaSchedule:
    kind: str = "constant"
    start: float = 0.0
    end: float = 0.0
    epochs: int = 1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        if self.start < 0 or self.end < 0:
            raise ValueError("schedule values must be >= 0")
        if self.epochs < 1:
            raise ValueError("schedule needs at least one epoch")
        if self.kind == "constant" and self.end != self.start:
            raise ValueError("constant schedule needs start == end")
        if self.kind == "linear_increase" and self.end < self.start:
            raise ValueError("linear_increase needs end >= start")
        if self.kind == "linear_decay" and self.end > self.start:
            raise ValueError("linear_decay needs end <= start")

    def __call__(self, epoch: float) -> float:
        return self.start + (self.end - self.start) * epoch / self.epochs


@dataclass(frozen=True)
class AlphaRegularizer:
    variant: str = "none"
    schedule: LambdaSchedule = LambdaSchedule()

    def __post_init__(self):
        if self.variant not in ALPHA_VARIANTS:
            raise ValueError(f"alpha regularizer must be one of {ALPHA_VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class WeightRegularizer:
    variant: str = "l2"
    coefficient: float = 3e-4

    def __post_init__(self):
        if self.variant not in WEIGHT_VARIANTS:
            raise ValueError(f"weight regularizer must be one of {WEIGHT_VARIANTS}, got {self.variant!r}")
        if not self.coefficient >= 0:
            raise ValueError("weight regularizer coefficient must be >= 0")


# ---------------------------------------------------------------- beta losses


def beta_decay_loss(alpha: Tensor) -> Tensor:
    """Mean over edges of the row-wise logsumexp of alpha."""
    return dc.mean(dc.logsumexp(alpha))


def beta_global_loss(alpha: Tensor) -> Tensor:
    """logsumexp over every entry of alpha jointly."""
    return dc.logsumexp(dc.logsumexp(alpha))


def beta_zero_loss(alpha: Tensor) -> Tensor:
    """Per-entry softplus (smoothmax against 0), summed, averaged over edges."""
    return dc.scale(1.0 / alpha.shape[0], dc.total(dc.softplus(alpha)))


_BETA_LOSSES = {
    "beta_decay": beta_decay_loss,
    "beta_global": beta_global_loss,
    "beta_zero": beta_zero_loss,
}


def alpha_loss(alpha: Tensor, variant: str) -> Tensor | None:
    """The differentiable regularization term for loss-style variants, else None."""
    fn = _BETA_LOSSES.get(variant)
    return None if fn is None else fn(alpha)


# ---------------------------------------------------------------- update-rule form


def normalized(alpha: np.ndarray) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    return a / (np.sum(np.abs(a), axis=-1, keepdims=True) + 1e-12)


def _softmax(a: np.ndarray) -> np.ndarray:
    z = a - np.max(a, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def penalty_map(alpha: np.ndarray, variant: str) -> np.ndarray:
    """F(alpha) in the unified update ``alpha - eta*grad - eta*lam*F(alpha)``."""
    a = np.asarray(alpha, dtype=np.float64)
    if variant == "none":
        return np.zeros_like(a)
    if variant == "l2_adam_emulated":
        return normalized(a)
    if variant == "weight_decay":
        return a.copy()
    if variant == "beta_decay":
        return _softmax(a)
    raise ValueError(f"no update-rule form for variant {variant!r}")


def alpha_penalty_step(alpha, variant: str, lam: float, eta: float, data_grad=None) -> np.ndarray:
    if lam < 0 or eta < 0:
        raise ValueError("lambda and eta must be >= 0")
    a = np.asarray(alpha, dtype=np.float64)
    g = np.zeros_like(a) if data_grad is None else np.asarray(data_grad, dtype=np.float64)
    return a - eta * g - eta * lam * penalty_map(a, variant)


# ---------------------------------------------------------------- weights


def weight_regularized_loss(train_loss: Tensor, reg: WeightRegularizer, params: dict[str, Tensor]) -> Tensor:
    """Effective training objective for the w step."""
    if reg.variant in ("l2", "larger_l2"):
        if reg.coefficient == 0:
            return train_loss
        acc = train_loss
        for name in sorted(params):
            acc = dc.scale_add(1.0, acc, reg.coefficient, dc.sum_squares(params[name]))
        return acc
    if reg.variant == "flooding":
        b = reg.coefficient
        return dc.scale_add(1.0, dc.absolute(dc.scale_add(1.0, train_loss, 1.0, dc.constant(-b))), 1.0,
                            dc.constant(b))
    return train_loss


def smoothing_perturbation(alpha: np.ndarray, reg: WeightRegularizer, rng: np.random.Generator) -> np.ndarray:
    """alpha + delta with delta ~ U[-eps, eps] for random smoothing; alpha otherwise."""
    if reg.variant != "random_smoothing":
        return alpha
    eps = reg.coefficient
    delta = rng.uniform(-1.0, 1.0, size=alpha.shape) * eps
    return alpha + delta

