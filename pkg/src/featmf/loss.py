"""Pointwise losses, curvature bounds, the elastic-net penalty and its prox step."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "LossKind",
    "Hyperparameters",
    "loss_value",
    "loss_gradient",
    "curvature_bound",
    "threshold",
    "elastic_net_penalty",
    "DegenerateCurvatureError",
]

SQUARE = 0
LOGISTIC = 1


class LossKind(str, enum.Enum):
    SQUARE = "square"
    LOGISTIC = "logistic"

    @property
    def code(self) -> int:
        return SQUARE if self is LossKind.SQUARE else LOGISTIC


@dataclass(frozen=True)
class Hyperparameters:
    """Elastic-net weights and latent dimension.

    ``alpha`` weighs the l1 term and ``lam`` the (halved) squared l2 term.
    """

    alpha: float = 0.1
    lam: float = 1.0
    dim: int = 64

    def __post_init__(self):
        for name in ("alpha", "lam"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")


class DegenerateCurvatureError(ArithmeticError):
    pass


@njit(cache=True)
def _softplus(z):
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _loss(kind, yhat, y):
    if kind == SQUARE:
        r = yhat - y
        return r * r
    return y * _softplus(-yhat) + (1.0 - y) * _softplus(yhat)


@njit(cache=True)
def _grad(kind, yhat, y):
    if kind == SQUARE:
        return 2.0 * (yhat - y)
    return _sigmoid(yhat) - y


@njit(cache=True)
def _threshold(x, y, w, alpha, lam):
    """Minimiser of x*d + y/2*d^2 + alpha*|w+d| + lam/2*(w+d)^2 over d."""
    denom = y + lam
    if denom <= 0.0:
        # y == 0 forces x == 0 for every caller: only the l1 term is left
        return -w if alpha > 0.0 else 0.0
    b = x + lam * w
    if w - b / denom >= 0.0:
        return max(-(b + alpha) / denom, -w)
    return min(-(b - alpha) / denom, -w)


@njit(cache=True)
def _loss_sum(kind, yhat, y):
    total = 0.0
    for p in range(yhat.shape[0]):
        total += _loss(kind, yhat[p], y[p])
    return total


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input {v}")


def loss_value(kind, y_hat: float, y: float) -> float:
    """Pointwise loss; logistic uses the overflow-safe softplus form."""
    kind = LossKind(kind)
    _check_finite(y_hat, y)
    return float(_loss(kind.code, float(y_hat), float(y)))


def loss_gradient(kind, y_hat: float, y: float) -> float:
    """Derivative of :func:`loss_value` with respect to the prediction."""
    kind = LossKind(kind)
    _check_finite(y_hat, y)
    return float(_grad(kind.code, float(y_hat), float(y)))


def curvature_bound(kind) -> float:
    """Supremum of the second derivative of the loss in the prediction."""
    return 2.0 if LossKind(kind) is LossKind.SQUARE else 0.25


def threshold(x: float, y: float, w: float, alpha: float, lam: float) -> float:
    """Elastic-net coordinate step.

    Returns the ``delta`` minimising
    ``x*delta + y/2*delta**2 + alpha*|w+delta| + lam/2*(w+delta)**2``.
    """
    _check_finite(x, y, w, alpha, lam)
    if y < 0.0 or alpha < 0.0 or lam < 0.0:
        raise ValueError("curvature and regularization weights must be non-negative")
    if y + lam == 0.0:
        raise DegenerateCurvatureError("threshold needs y + lambda > 0")
    return float(_threshold(float(x), float(y), float(w), float(alpha), float(lam)))


def elastic_net_penalty(M, alpha: float, lam: float) -> float:
    M = np.asarray(M, dtype=np.float64)
    return float(alpha * np.abs(M).sum() + 0.5 * lam * np.square(M).sum())
