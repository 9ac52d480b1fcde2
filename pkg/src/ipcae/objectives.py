"""Task losses, the GJSD diversity term and evaluation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .tensor import DimensionError, check_same_shape

# floor applied inside log(mixture) only
LOG_FLOOR = 1e-12

TASKS = ("reconstruction", "classification")


@dataclass(frozen=True)
class LossConfig:
    task: str = "reconstruction"
    lam: float = 0.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


def mse(pred, target) -> Var:
    pred, target = ad.const(pred), ad.const(target)
    check_same_shape(pred.value, target.value, "mse operands")
    diff = ad.sub(pred, target)
    return ad.mean(ad.mul(diff, diff))


def _one_hot(labels, C: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.shape[0], C))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(logits, labels) -> Var:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = ad.const(logits)
    if logits.value.ndim != 2 or logits.shape[0] != len(labels):
        raise DimensionError(f"logits {logits.shape} do not match {len(labels)} labels")
    picked = ad.sum(ad.mul(logits, _one_hot(labels, logits.shape[1])), axis=1)
    return ad.mean(ad.sub(ad.logsumexp(logits, axis=1), picked))


def task_loss(task: str, pred, target) -> Var:
    if task == "reconstruction":
        return mse(pred, target)
    if task == "classification":
        return cross_entropy(pred, target)
    raise ValueError(f"unknown task {task!r}")


def gjsd(logits) -> Var:
    """Equal-weight generalized Jensen-Shannon divergence of softmax(logits) rows.

    Computed as H(mean_i p_i) - mean_i H(p_i).
    """
    logits = ad.const(logits)
    log_p = ad.log_softmax(logits, axis=1)
    p = ad.exp(log_p)
    mix = ad.mean(p, axis=0)
    h_mix = ad.scale(ad.sum(ad.mul(mix, ad.log(ad.clamp_min(mix, LOG_FLOOR)))), -1.0)
    h_rows = ad.scale(ad.sum(ad.mul(p, log_p)), -1.0 / logits.shape[0])
    return ad.sub(h_mix, h_rows)


def gjsd_kl(logits) -> Var:
    """Same quantity as :func:`gjsd`, written as (1/K) sum_i KL(p_i || mixture)."""
    logits = ad.const(logits)
    K = logits.shape[0]
    log_p = ad.log_softmax(logits, axis=1)
    p = ad.exp(log_p)
    log_mix = ad.log(ad.clamp_min(ad.mean(p, axis=0), LOG_FLOOR))
    kl_rows = ad.sum(ad.mul(p, ad.sub(log_p, log_mix)), axis=1)
    return ad.scale(ad.sum(kl_rows), 1.0 / K)


def regularized_loss(task_loss_value: Var, logits, lam: float) -> Var:
    """task loss - lam * GJSD: diversity is maximised."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return task_loss_value
    return ad.sub(task_loss_value, ad.scale(gjsd(logits), lam))


def normalized_frobenius(X, X_hat, D: int | None = None) -> float:
    """||X - X_hat||_F / D with D the number of features."""
    X = np.asarray(X, dtype=float)
    X_hat = np.asarray(X_hat, dtype=float)
    check_same_shape(X, X_hat, "reconstruction metric operands")
    D = X.shape[1] if D is None else D
    return float(math.sqrt(float(np.sum((X - X_hat) ** 2))) / D)


def top1_accuracy(logits, labels) -> float:
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(f"logits {logits.shape} do not match {labels.shape[0]} labels")
    return float(100.0 * np.mean(np.argmax(logits, axis=1) == labels))
