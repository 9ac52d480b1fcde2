"""Decoder network, optimizers and the composed selector + decoder model."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import concrete
from .autodiff import Var
from .concrete import ConfigError, SelectorParams
from .tensor import DTYPE, DimensionError, Rng

LEAKY_SLOPE = 0.2


class Mlp:
    """Fully connected network with LeakyReLU(0.2) hidden activations and a linear head."""

    def __init__(self, sizes: list[int], rng: Rng | None = None, zero: bool = False):
        if len(sizes) < 2:
            raise ConfigError(f"an MLP needs at least input and output sizes, got {sizes}")
        self.sizes = list(sizes)
        self.layers: list[tuple[Var, Var]] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if zero:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = 1.0 / math.sqrt(fan_in)
                w = rng.uniform_range(-bound, bound, (fan_in, fan_out))
            self.layers.append((ad.param(w), ad.param(np.zeros(fan_out))))

    def __call__(self, x) -> Var:
        h = ad.const(x)
        if h.shape[-1] != self.sizes[0]:
            raise DimensionError(f"decoder expects {self.sizes[0]} inputs, got {h.shape}")
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.leaky_relu(h, LEAKY_SLOPE)
        return h

    def parameters(self) -> list[Var]:
        return [p for layer in self.layers for p in layer]

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"decoder.{i}.weight"] = w.value
            out[f"decoder.{i}.bias"] = b.value
        return out


class Sgd:
    kind = "sgd"

    def __init__(self, params: list[Var], lr: float = 1e-3):
        self.params = list(params)
        self.lr = lr

    def step(self, lr: float | None = None) -> None:
        sgd_step(self.params, [p.grad for p in self.params], self.lr if lr is None else lr)


def sgd_step(params: list[Var], grads: list[np.ndarray | None], lr: float) -> None:
    """p <- p - lr * g for all parameters; every gradient is read before any write."""
    updates = [None if g is None else lr * g for g in grads]
    for p, u in zip(params, updates):
        if u is not None:
            p.value = p.value - u


class Adam:
    """Bias-corrected Adam with optional decoupled weight decay."""

    kind = "adam"

    def __init__(self, params: list[Var], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, bias_correction: bool = True):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.bias_correction = bias_correction
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t if self.bias_correction else 1.0
        c2 = 1.0 - b2**self.t if self.bias_correction else 1.0
        new_values = []
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            value = p.value - lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                value = value - lr * self.weight_decay * p.value
            new_values.append(value)
        for p, value in zip(self.params, new_values):
            p.value = value


def lr_schedule(epoch: int, base_lr: float = 1e-3, warmup_epochs: int = 0, start_lr: float = 1e-6) -> float:
    """Linear warmup from ``start_lr`` to ``base_lr`` over ``warmup_epochs``, then constant."""
    if warmup_epochs <= 0 or epoch >= warmup_epochs:
        return base_lr
    return start_lr + (base_lr - start_lr) * epoch / warmup_epochs


def make_optimizer(kind: str, params: list[Var], lr: float, weight_decay: float = 0.0):
    if kind == "adam":
        return Adam(params, lr=lr, weight_decay=weight_decay)
    if kind == "sgd":
        if weight_decay:
            raise ConfigError("weight decay is only supported with adam")
        return Sgd(params, lr=lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


@dataclass
class CaeModel:
    """Concrete selector followed by a decoder (or predictor) network."""

    selector: SelectorParams
    decoder: Mlp
    task: str = "reconstruction"
    config: dict = field(default_factory=dict)

    @property
    def D(self) -> int:
        return self.selector.D

    def parameters(self) -> list[Var]:
        return self.selector.parameters() + self.decoder.parameters()

    def forward(self, x, T: float | None = None, rng: Rng | None = None, mode: str = "train",
                noise: np.ndarray | None = None) -> Var:
        x = np.asarray(x, dtype=DTYPE) if not isinstance(x, Var) else x
        width = x.shape[1]
        if width != self.D:
            raise DimensionError(f"model expects {self.D} features, got batch of shape {x.shape}")
        if mode == "train":
            M = concrete.sample_selection(self.selector, T, rng=rng, noise=noise)
        elif mode == "eval":
            M = concrete.one_hot_selection(concrete.discrete_selection(self.selector), self.D)
        else:
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        return self.decoder(concrete.select_features(x, M))

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {**self.selector.named_tensors(), **self.decoder.named_tensors()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_tensors().items()}

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        targets = {"selector.psi": self.selector.psi}
        if self.selector.weight is not None:
            targets["selector.weight"] = self.selector.weight
        if self.selector.bias is not None:
            targets["selector.bias"] = self.selector.bias
        for i, (w, b) in enumerate(self.decoder.layers):
            targets[f"decoder.{i}.weight"] = w
            targets[f"decoder.{i}.bias"] = b
        if set(targets) != set(tensors):
            raise ConfigError(f"checkpoint tensors {sorted(tensors)} do not match model {sorted(targets)}")
        for key, var in targets.items():
            if var.shape != tensors[key].shape:
                raise DimensionError(f"{key}: checkpoint shape {tensors[key].shape} vs model {var.shape}")
            var.value = np.array(tensors[key], dtype=DTYPE)


def build_model(task: str, variant: str, K: int, D: int, out_dim: int, hidden: list[int],
                P: int | None, seed: int, bias: bool = False, freeze_identity_weight: bool = False,
                config: dict | None = None) -> CaeModel:
    selector = concrete.init_selector(
        variant, K, D, P, Rng(seed, "selector-init"), bias=bias,
        identity_weight=freeze_identity_weight, freeze_weight=freeze_identity_weight)
    decoder = Mlp([K, *hidden, out_dim], Rng(seed, "decoder-init"))
    return CaeModel(selector, decoder, task=task, config=dict(config or {}))


# ---------------------------------------------------------------- checkpoints
#
# A checkpoint is an uncompressed .npz archive: one little-endian float64 array
# per parameter ("selector.psi", "selector.weight", "selector.bias",
# "decoder.<i>.weight", "decoder.<i>.bias") plus "__config__", a 0-d unicode
# array holding the run configuration and preprocessing statistics as JSON.

def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    arrays = {k: np.asarray(v, dtype="<f8") for k, v in tensors.items()}
    arrays["__config__"] = np.array(json.dumps(meta, sort_keys=True))
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__config__"]))
        tensors = {k: np.array(data[k], dtype=DTYPE) for k in data.files if k != "__config__"}
    return tensors, meta
