"""Shared builders for tests."""
import numpy as np

from ipcae import autodiff as ad
from ipcae import concrete, objectives
from ipcae.concrete import VARIANTS
from ipcae.model import build_model
from ipcae.tensor import Rng


def random_grad_case(rng: np.random.Generator):
    """One small model, batch and frozen noise; returns (loss closure, params, description)."""
    variant = VARIANTS[rng.integers(len(VARIANTS))]
    task = ("reconstruction", "classification")[rng.integers(2)]
    K = int(rng.integers(1, 5))
    D = int(rng.integers(max(K, 2), 13))
    hidden = int(rng.integers(1, 17))
    P = int(rng.integers(1, 13)) if variant == "full" else None
    bias = bool(variant == "full" and rng.integers(2))
    C = int(rng.integers(2, 5))
    out = D if task == "reconstruction" else C
    model = build_model(task, variant, K, D, out, [hidden], P, seed=int(rng.integers(1000)), bias=bias)
    x = rng.normal(size=(6, D))
    target = x if task == "reconstruction" else rng.integers(0, C, size=6)
    noise = concrete.gumbel_from_uniform(rng.uniform(0.01, 0.99, size=(K, D)))
    T = float(rng.uniform(0.5, 5.0))
    lam = float(rng.uniform(0.01, 0.1))

    def loss():
        pred = model.forward(x, T, noise=noise, mode="train")
        return objectives.regularized_loss(objectives.task_loss(task, pred, target),
                                           concrete.logits(model.selector), lam)

    desc = dict(variant=variant, task=task, K=K, D=D, hidden=hidden, P=P, bias=bias)
    return loss, model.parameters(), desc


def stream(seed=11):
    return Rng(seed, "test")


def probs(logits):
    z = np.asarray(logits, dtype=float)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


__all__ = ["random_grad_case", "stream", "probs", "ad"]
