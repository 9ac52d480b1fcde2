"""Concrete (Gumbel-Softmax) selector layer.

The layer holds K stochastic nodes over D input features.  Their logits
``log_alpha`` (K x D) are produced by one of four parametrizations:

* ``direct``   -- logits are the learnable array psi itself (P = D).
* ``scalar``   -- logits = w * psi with one learnable scalar w (P = D).
* ``diagonal`` -- logits = psi * w with w in R^D, i.e. diag(w) psi_i per node (P = D).
* ``full``     -- logits_i = W psi_i (+ b), W in R^{D x P} shared by all nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .tensor import DTYPE, Rng

VARIANTS = ("direct", "scalar", "diagonal", "full")


class ConfigError(ValueError):
    """Inconsistent configuration."""


@dataclass
class SelectorParams:
    variant: str
    psi: Var
    weight: Var | None = None
    bias: Var | None = None
    freeze_weight: bool = False

    @property
    def K(self) -> int:
        return self.psi.shape[0]

    @property
    def P(self) -> int:
        return self.psi.shape[1]

    @property
    def D(self) -> int:
        if self.variant == "full":
            return self.weight.shape[0]
        return self.P

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown selector variant {self.variant!r}; expected one of {VARIANTS}")
        if self.psi.value.ndim != 2:
            raise ConfigError(f"psi must be K x P, got shape {self.psi.shape}")
        if self.variant == "direct":
            if self.weight is not None or self.bias is not None:
                raise ConfigError("direct selector takes no weight or bias")
        elif self.variant == "scalar":
            if self.weight is None or self.weight.value.ndim != 0:
                raise ConfigError("scalar selector needs a 0-d weight")
        elif self.variant == "diagonal":
            if self.weight is None or self.weight.shape != (self.P,):
                raise ConfigError(f"diagonal selector needs a weight of shape ({self.P},)")
        else:
            if self.weight is None or self.weight.value.ndim != 2 or self.weight.shape[1] != self.P:
                raise ConfigError(f"full selector needs W of shape (D, {self.P})")
        if self.bias is not None:
            if self.variant != "full":
                raise ConfigError("bias is only defined for the full selector")
            if self.bias.shape != (self.D,):
                raise ConfigError(f"bias must have shape ({self.D},), got {self.bias.shape}")

    def parameters(self) -> list[Var]:
        """Learnable tensors, in a fixed order."""
        out = [self.psi]
        if self.weight is not None and not self.freeze_weight:
            out.append(self.weight)
        if self.bias is not None:
            out.append(self.bias)
        return out

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {"selector.psi": self.psi.value}
        if self.weight is not None:
            out["selector.weight"] = self.weight.value
        if self.bias is not None:
            out["selector.bias"] = self.bias.value
        return out


def init_selector(variant: str, K: int, D: int, P: int | None, rng: Rng,
                  bias: bool = False, identity_weight: bool = False,
                  freeze_weight: bool = False) -> SelectorParams:
    """Fresh selector parameters.

    psi and a full W are drawn from U(-1/sqrt(P), 1/sqrt(P)).  Scalar and
    diagonal weights start at one.  ``identity_weight`` sets W = I (full,
    P = D only) without drawing from ``rng``.
    """
    P = D if P is None else P
    if variant not in VARIANTS:
        raise ConfigError(f"unknown selector variant {variant!r}; expected one of {VARIANTS}")
    if variant != "full" and P != D:
        raise ConfigError(f"{variant} selector requires P == D ({P} != {D})")
    if K < 1 or P < 1:
        raise ConfigError(f"K and P must be positive (K={K}, P={P})")
    bound = 1.0 / math.sqrt(P)
    psi = ad.param(rng.uniform_range(-bound, bound, (K, P)))
    weight = b = None
    if variant == "scalar":
        weight = ad.param(np.array(1.0))
    elif variant == "diagonal":
        weight = ad.param(np.ones(D))
    elif variant == "full":
        if identity_weight:
            if P != D:
                raise ConfigError("identity W needs P == D")
            weight = ad.param(np.eye(D))
        else:
            weight = ad.param(rng.uniform_range(-bound, bound, (D, P)))
        if bias:
            b = ad.param(np.zeros(D))
    elif bias:
        raise ConfigError("bias is only defined for the full selector")
    if freeze_weight and weight is not None:
        weight.requires_grad = False
    params = SelectorParams(variant, psi, weight, b, freeze_weight=freeze_weight)
    params.validate()
    return params


def logits(params: SelectorParams) -> Var:
    """log alpha as a K x D Var, differentiable in every parameter present."""
    v = params.variant
    if v == "direct":
        return params.psi
    if v == "scalar":
        return ad.mul(params.weight, params.psi)
    if v == "diagonal":
        return ad.mul(params.psi, params.weight)
    if v == "full":
        out = ad.matmul(params.psi, ad.transpose(params.weight))
        if params.bias is not None:
            out = ad.add(out, params.bias)
        return out
    raise ConfigError(f"unknown selector variant {v!r}")


@dataclass(frozen=True)
class TemperatureSchedule:
    T0: float = 10.0
    TB: float = 0.01
    B: int = 200

    def __post_init__(self):
        if not (self.T0 > self.TB > 0):
            raise ConfigError(f"need T0 > TB > 0, got T0={self.T0}, TB={self.TB}")
        if self.B < 1:
            raise ConfigError(f"need B >= 1, got {self.B}")

    def __call__(self, b: int) -> float:
        return temperature(self, b)


def temperature(sched: TemperatureSchedule, b: int) -> float:
    """Exponential annealing T0 * (TB / T0) ** (b / B)."""
    if not 0 <= b <= sched.B:
        raise ValueError(f"epoch {b} outside [0, {sched.B}]")
    if b == 0:
        return float(sched.T0)
    if b == sched.B:
        return float(sched.TB)
    return float(sched.T0 * (sched.TB / sched.T0) ** (b / sched.B))


def gumbel_sample(rng: Rng, shape) -> np.ndarray:
    return gumbel_from_uniform(rng.uniform(shape))


def gumbel_from_uniform(u) -> np.ndarray:
    u = np.asarray(u, dtype=DTYPE)
    return -np.log(-np.log(u))


def sample_selection(params: SelectorParams, T: float, rng: Rng | None = None,
                     noise: np.ndarray | None = None) -> Var:
    """Gumbel-Softmax selection matrix M (K x D), one sample per call.

    Noise is a constant leaf, so gradients are pathwise through the logits.
    Pass ``noise`` to freeze it (e.g. for gradient checks).
    """
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    log_alpha = logits(params)
    if noise is None:
        noise = gumbel_sample(rng, log_alpha.shape)
    return ad.softmax(ad.scale(ad.add(log_alpha, noise), 1.0 / T), axis=1)


def select_features(x, M) -> Var:
    """x_S = x M^T for a batch x (batch x D)."""
    return ad.matmul(x, ad.transpose(M))


def discrete_selection(params_or_logits) -> list[int]:
    """Row-wise argmax of the logits; ties go to the lowest index."""
    if isinstance(params_or_logits, SelectorParams):
        values = logits(params_or_logits).value
    elif isinstance(params_or_logits, Var):
        values = params_or_logits.value
    else:
        values = np.asarray(params_or_logits, dtype=DTYPE)
    return [int(i) for i in np.argmax(values, axis=1)]


def one_hot_selection(indices: list[int], D: int) -> np.ndarray:
    M = np.zeros((len(indices), D), dtype=DTYPE)
    M[np.arange(len(indices)), indices] = 1.0
    return M


def unique_percentage(params_or_logits) -> float:
    idx = discrete_selection(params_or_logits)
    return 100.0 * len(set(idx)) / len(idx)
