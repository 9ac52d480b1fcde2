"""One-step SGD update rules for log alpha under each parametrization.

The closed forms hold for a single row i of the logits when the loss depends
on the logits only through that row, which is how the autodiff comparison in
:func:`autodiff_update` sets things up (a linear probe loss c^T log alpha_i).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import concrete
from .concrete import SelectorParams
from .model import sgd_step
from .tensor import DimensionError, Rng


def cae_update_oracle(psi_i, grad, eta: float) -> np.ndarray:
    psi_i = np.asarray(psi_i, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if psi_i.shape != grad.shape:
        raise DimensionError(f"psi_i {psi_i.shape} and gradient {grad.shape} differ")
    return psi_i - eta * grad


def full_ip_transform(W, psi_i, grad, eta: float) -> np.ndarray:
    """T_i = W W^T + psi_i^T (psi_i - eta W^T grad) I."""
    W = np.asarray(W, dtype=float)
    psi_i = np.asarray(psi_i, dtype=float)
    grad = np.asarray(grad, dtype=float)
    psi_next = psi_i - eta * (W.T @ grad)
    return W @ W.T + float(psi_i @ psi_next) * np.eye(W.shape[0])


def full_ip_update_oracle(W, psi_i, grad, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Next logits row W psi_i - eta T_i grad, and T_i."""
    W = np.asarray(W, dtype=float)
    psi_i = np.asarray(psi_i, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if W.ndim != 2 or W.shape[1] != psi_i.shape[0] or W.shape[0] != grad.shape[0]:
        raise DimensionError(f"W {W.shape}, psi_i {psi_i.shape}, gradient {grad.shape} are incompatible")
    T = full_ip_transform(W, psi_i, grad, eta)
    return W @ psi_i - eta * (T @ grad), T


def scalar_ip_update_oracle(w: float, psi_i, grad, eta: float) -> np.ndarray:
    """w psi_i - eta (w w' grad + (grad . psi_i) psi_i) with w' = w - eta grad . psi_i."""
    psi_i = np.asarray(psi_i, dtype=float)
    grad = np.asarray(grad, dtype=float)
    grad_w = float(grad @ psi_i)
    w_next = w - eta * grad_w
    return w * psi_i - eta * (w * w_next * grad + grad_w * psi_i)


def autodiff_update(params: SelectorParams, row: int, probe, eta: float) -> np.ndarray:
    """Take one simultaneous SGD step on L = probe . log_alpha[row] and return the new row.

    The gradient of L with respect to log_alpha[row] is exactly ``probe``.
    ``params`` is updated in place.
    """
    leaves = params.parameters()
    ad.zero_grad(leaves)
    loss = ad.sum(ad.mul(ad.row(concrete.logits(params), row), np.asarray(probe, dtype=float)))
    ad.backward(loss)
    sgd_step(leaves, [p.grad for p in leaves], eta)
    ad.zero_grad(leaves)
    return concrete.logits(params).value[row].copy()


def _random_instance(variant: str, rng: Rng, dims, etas):
    D = int(dims[int(rng.integers(0, len(dims)))])
    eta = float(etas[int(rng.integers(0, len(etas)))])
    K = int(rng.integers(1, 4))
    row = int(rng.integers(0, K))
    psi = rng.normal((K, D))
    weight = None
    if variant == "full":
        weight = ad.param(rng.normal((D, D)))
    elif variant == "scalar":
        weight = ad.param(np.array(rng.normal(()) + 1.5))
    params = SelectorParams(variant, ad.param(psi), weight)
    params.validate()
    probe = rng.normal((D,))
    return params, row, probe, eta


def oracle_deviation(variant: str, trials: int = 100, dims=range(2, 11), etas=(1e-3, 1e-1),
                     seed: int = 0, corrupt: float = 0.0) -> float:
    """Max absolute per-component gap between a closed-form update and autodiff SGD.

    ``corrupt`` adds a constant to the oracle output; it exists to exercise
    the failure path of the CLI check.
    """
    rng = Rng(seed, f"oracle-{variant}")
    worst = 0.0
    for _ in range(trials):
        params, row, probe, eta = _random_instance(variant, rng, list(dims), list(etas))
        psi_i = params.psi.value[row].copy()
        if variant == "direct":
            expected = cae_update_oracle(psi_i, probe, eta)
        elif variant == "full":
            expected, _ = full_ip_update_oracle(params.weight.value.copy(), psi_i, probe, eta)
        elif variant == "scalar":
            expected = scalar_ip_update_oracle(float(params.weight.value), psi_i, probe, eta)
        else:
            raise ValueError(f"no closed-form oracle for variant {variant!r}")
        got = autodiff_update(params, row, probe, eta)
        worst = max(worst, float(np.max(np.abs(got - (expected + corrupt)))))
    return worst


# ---------------------------------------------------------------- tracing

@dataclass
class TraceRecord:
    step: int
    epoch: int
    alpha_norm: float
    psi_norm: float
    w_norm: float | None
    psi_dot: list[float]
    transform_norm: list[float] | None

    def row(self) -> dict:
        return {
            "step": self.step,
            "epoch": self.epoch,
            "alpha_norm": self.alpha_norm,
            "psi_norm": self.psi_norm,
            "w_norm": self.w_norm,
            "psi_dot_mean": float(np.mean(self.psi_dot)),
            "transform_norm_mean": None if self.transform_norm is None else float(np.mean(self.transform_norm)),
        }


@dataclass
class UpdateTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)


def param_norms(params: SelectorParams) -> tuple[float, float, float | None]:
    alpha = float(np.linalg.norm(concrete.logits(params).value))
    psi = float(np.linalg.norm(params.psi.value))
    w = None if params.weight is None else float(np.linalg.norm(params.weight.value))
    return alpha, psi, w


def trace_record(step: int, epoch: int, before: dict[str, np.ndarray], params: SelectorParams) -> TraceRecord:
    """Record update components for the step that moved ``before`` to ``params``.

    Norms describe the pre-step parameters.  ``psi_dot[i]`` is psi_i(t) . psi_i(t+1);
    for the full variant ``transform_norm[i]`` is ||W W^T + psi_dot[i] I||_F with the
    pre-step W.
    """
    psi_old = before["psi"]
    psi_new = params.psi.value
    psi_dot = [float(a @ b) for a, b in zip(psi_old, psi_new)]
    w_old = before.get("weight")
    alpha_old = before["alpha"]
    transform = None
    if params.variant == "full":
        gram = w_old @ w_old.T
        eye = np.eye(gram.shape[0])
        transform = [float(np.linalg.norm(gram + s * eye)) for s in psi_dot]
    return TraceRecord(
        step=step,
        epoch=epoch,
        alpha_norm=float(np.linalg.norm(alpha_old)),
        psi_norm=float(np.linalg.norm(psi_old)),
        w_norm=None if w_old is None else float(np.linalg.norm(w_old)),
        psi_dot=psi_dot,
        transform_norm=transform,
    )


def capture(params: SelectorParams) -> dict[str, np.ndarray]:
    out = {"psi": params.psi.value.copy(), "alpha": concrete.logits(params).value.copy()}
    if params.weight is not None:
        out["weight"] = params.weight.value.copy()
    return out
