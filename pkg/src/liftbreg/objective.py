"""The lifted Bregman training objective.

For a batch of ``s`` samples with inputs ``x_0``, auxiliary activations
``x_1 .. x_{L-1}`` and targets ``x_L`` the objective is::

    E = (1/s) sum_i [ sum_{l<L} lam_l B_l(x_l^i, f_l(x_{l-1}^i))
                      + B_L(y^i, f_L(x_{L-1}^i)) + alpha ||x_c^i||_1 ]

where ``f_l(x) = W_l^T x + b_l`` and ``B_l`` is the Bregman penalty of layer
``l``'s potential. It splits into a smooth part ``H`` (everything involving the
affine maps) and a prox-friendly part ``G`` (``0.5||x_l||^2 + Psi_l(x_l)`` and
the code penalty), and this module provides the partial gradients of ``H`` and
the proximal map of ``G``.

The auxiliary variables are passed as a list ``aux = [x_1, ..., x_{L-1}]`` of
row-sample arrays; indices ``l`` and ``j`` below are 1-based like the layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .bregman import bregman_eval
from .network import Network, affine
from .prox import prox, prox_scaled, star_eval

__all__ = [
    "Task",
    "ObjectiveSpec",
    "chain",
    "objective_E",
    "smooth_H",
    "grad_H_theta",
    "grad_H_x",
    "prox_G_x",
    "consistency_residual",
]


class Task(str, Enum):
    CLASSIFICATION = "classification"
    AUTOENCODER = "autoencoder"
    DENOISING = "denoising"


@dataclass(frozen=True)
class ObjectiveSpec:
    """Weights of the lifted objective.

    ``lam`` holds the penalty weights of layers ``1..L-1`` (``None`` means all
    ones); the data term always has weight one. ``code_layer`` is the 1-based
    index of the auxiliary variable carrying the ``alpha * ||.||_1`` penalty.
    """

    lam: tuple[float, ...] | None = None
    alpha: float = 0.0
    code_layer: int | None = None
    task: Task = Task.CLASSIFICATION

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.lam is not None:
            lam = tuple(float(v) for v in self.lam)
            if any(not v > 0 for v in lam):
                raise ValueError("penalty weights must be positive")
            object.__setattr__(self, "lam", lam)
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.alpha > 0 and self.code_layer is None:
            raise ValueError("alpha > 0 needs a code layer")

    def weights(self, L: int) -> np.ndarray:
        """Weights of all ``L`` terms, index ``l - 1``; the last one is 1."""
        lam = np.ones(L - 1) if self.lam is None else np.asarray(self.lam, dtype=float)
        if lam.size != L - 1:
            raise ValueError(f"expected {L - 1} penalty weights, got {lam.size}")
        return np.append(lam, 1.0)

    def check(self, net: Network):
        self.weights(len(net))
        if self.code_layer is not None and not 1 <= self.code_layer <= len(net) - 1:
            raise ValueError(f"code layer {self.code_layer} is not a hidden layer")

    def code_weight(self, j: int) -> float:
        return self.alpha if self.code_layer == j else 0.0


def chain(net: Network, aux: Sequence[np.ndarray], x0, target) -> list[np.ndarray]:
    """``[x_0, x_1, ..., x_{L-1}, x_L]`` after validating every shape."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if len(aux) != len(net) - 1:
        raise ValueError(f"expected {len(net) - 1} auxiliary blocks, got {len(aux)}")
    xs = [x0] + [np.atleast_2d(a) for a in aux] + [target]
    widths = net.widths
    for l, x in enumerate(xs):
        if x.shape != (x0.shape[0], widths[l]):
            raise ValueError(f"block {l} has shape {x.shape}, expected {(x0.shape[0], widths[l])}")
    return xs


def _per_sample(spec: ObjectiveSpec, net: Network, xs):
    w = spec.weights(len(net))
    total = np.zeros(xs[0].shape[0])
    for l, la in enumerate(net.layers, start=1):
        total = total + w[l - 1] * bregman_eval(la.act, xs[l], affine(la, xs[l - 1]))
    if spec.alpha > 0:
        total = total + spec.alpha * np.abs(xs[spec.code_layer]).sum(axis=1)
    return total


def objective_E(spec: ObjectiveSpec, net: Network, aux, x0, target) -> float:
    """Batch mean of the lifted objective; ``+inf`` if any x leaves its domain."""
    spec.check(net)
    xs = chain(net, aux, x0, target)
    return float(np.mean(_per_sample(spec, net, xs)))


def smooth_H(spec: ObjectiveSpec, net: Network, aux, x0, target) -> float:
    """Batch mean of the smooth part ``sum_l w_l (F_l^*(z_l) - <x_l, z_l>)``."""
    spec.check(net)
    xs = chain(net, aux, x0, target)
    w = spec.weights(len(net))
    total = np.zeros(xs[0].shape[0])
    for l, la in enumerate(net.layers, start=1):
        z = affine(la, xs[l - 1])
        total = total + w[l - 1] * (star_eval(la.act, z) - np.sum(xs[l] * z, axis=1))
    return float(np.mean(total))


def grad_H_theta(spec: ObjectiveSpec, net: Network, aux, x0, target, l: int):
    """``(dW, db)`` of the batch-mean ``H`` with respect to layer ``l``.

    ``dW = lam_l X_{l-1}^T (sigma(Z_l) - X_l) / s`` and ``db`` the matching
    column mean; only the activation itself is evaluated.
    """
    xs = chain(net, aux, x0, target)
    if not 1 <= l <= len(net):
        raise IndexError(f"layer {l} out of range")
    la = net.layers[l - 1]
    w = spec.weights(len(net))[l - 1]
    r = prox(la.act, affine(la, xs[l - 1])) - xs[l]
    s = xs[0].shape[0]
    return w * (xs[l - 1].T @ r) / s, w * r.sum(axis=0) / s


def grad_H_x(spec: ObjectiveSpec, net: Network, aux, x0, target, j: int) -> np.ndarray:
    """Per-sample gradient of ``H`` with respect to ``x_j`` (rows are samples).

    ``lam_{j+1} (sigma(f_{j+1}(x_j)) - x_{j+1}) W_{j+1}^T - lam_j f_j(x_{j-1})``;
    these are gradients of the per-sample sum, not of the batch mean.
    """
    if not 1 <= j <= len(net) - 1:
        raise IndexError(f"auxiliary index {j} out of range 1..{len(net) - 1}")
    xs = chain(net, aux, x0, target)
    w = spec.weights(len(net))
    nxt = net.layers[j]
    r = prox(nxt.act, affine(nxt, xs[j])) - xs[j + 1]
    return w[j] * r @ nxt.W.T - w[j - 1] * affine(net.layers[j - 1], xs[j - 1])


def prox_G_x(spec: ObjectiveSpec, net: Network, j: int, v, tau: float) -> np.ndarray:
    """Prox of ``tau * lam_j (0.5||.||^2 + Psi_j) + tau * alpha ||.||_1 [j = code]``.

    With unit weight this is ``prox_{tau/(1+tau) (Psi_j + R)}(v / (1 + tau))``.
    A general weight ``lam_j`` rescales ``tau`` on the quadratic and potential
    terms while the code penalty keeps its own weight.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    lam = spec.weights(len(net))[j - 1]
    t = tau * lam
    a = spec.code_weight(j) / lam
    return prox_scaled(net.layers[j - 1].act, np.asarray(v, dtype=float) / (1 + t),
                       t / (1 + t), l1=a)


def consistency_residual(net: Network, aux, x0) -> float:
    """``max_l ||sigma_l(f_l(x_{l-1})) - x_l||_inf`` over the hidden layers."""
    xs = [np.atleast_2d(np.asarray(x0, dtype=float))] + [np.atleast_2d(a) for a in aux]
    res = 0.0
    for l in range(1, len(xs)):
        la = net.layers[l - 1]
        res = max(res, float(np.max(np.abs(prox(la.act, affine(la, xs[l - 1])) - xs[l]))))
    return res
