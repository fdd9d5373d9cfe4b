"""Classical back-propagation training used as the comparison arms.

``backprop`` runs the usual forward/backward recursion with
``delta_L = sigma'(z_L) * grad loss`` and ``delta_l = sigma'(z_l) * W_{l+1} delta_{l+1}``.
Activation derivatives at kinks (ReLU at 0, soft-threshold at +-alpha) take a
fixed value, zero by default. The trainers implement full-batch gradient
descent, mini-batch SGD and implicit SGD whose per-batch proximal problem is
solved by a few inner gradient steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import batches
from .network import Layer, Network, preactivations
from .prox import Kind, ProxSpec, prox

__all__ = [
    "activation_vjp",
    "backprop",
    "bp_objective",
    "BPConfig",
    "train_gd",
    "train_sgd",
    "train_isgd",
]


def activation_vjp(spec: ProxSpec, z, g, kink: float = 0.0) -> np.ndarray:
    """``J_sigma(z)^T g``; ``kink`` is the derivative used at non-smooth points."""
    z = np.asarray(z, dtype=float)
    g = np.asarray(g, dtype=float)
    k = spec.kind
    if k is Kind.RELU:
        d = np.where(z > 0, 1.0, np.where(z == 0, kink, 0.0))
        return d * g
    if k is Kind.L1:
        a = np.abs(z)
        d = np.where(a > spec.alpha, 1.0, np.where(a == spec.alpha, kink, 0.0))
        return d * g
    if k is Kind.TANH:
        return (1.0 - np.tanh(z) ** 2) * g
    if k is Kind.SOFTMAX:
        p = prox(spec, z)
        return p * (g - np.sum(p * g, axis=-1, keepdims=True))
    return g.copy()


def _loss_and_grad(out, z_last, y, loss_spec):
    if loss_spec is None:
        diff = out - y
        return 0.5 * np.sum(diff**2, axis=1), diff, True
    from .bregman import bregman_eval

    return bregman_eval(loss_spec, y, z_last), prox(loss_spec, z_last) - y, False


def backprop(net: Network, x0, y, loss_spec: ProxSpec | None = None, alpha: float = 0.0,
             code_layer: int | None = None, kink: float = 0.0):
    """Gradients of the batch-mean loss with respect to every ``(W_l, b_l)``.

    ``loss_spec=None`` is the squared error ``0.5 ||y - x_L||^2`` on the
    network output. Passing a potential uses the Bregman loss
    ``B(y, z_L)`` on the last pre-activation instead, whose gradient in
    ``z_L`` is ``sigma(z_L) - y``. ``alpha > 0`` adds ``alpha ||x_c||_1`` for
    the hidden layer ``code_layer`` with subgradient ``alpha * sign(x_c)``.

    Returns ``(grads, value)`` with ``grads`` a list of ``(dW, db)``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    zs, xs = preactivations(net, x0)
    if xs[-1].shape != y.shape:
        raise ValueError(f"target shape {y.shape} does not match output {xs[-1].shape}")
    s = x0.shape[0]
    per_sample, g_out, through_act = _loss_and_grad(xs[-1], zs[-1], y, loss_spec)
    value = float(np.mean(per_sample))
    if alpha > 0:
        value += alpha * float(np.mean(np.abs(xs[code_layer - 1]).sum(axis=1)))
    L = len(net)
    delta = activation_vjp(net[L - 1].act, zs[-1], g_out, kink) if through_act else g_out
    grads = [None] * L
    inputs = [x0] + xs[:-1]
    for l in range(L, 0, -1):
        grads[l - 1] = (inputs[l - 1].T @ delta / s, delta.mean(axis=0))
        if l == 1:
            break
        g = delta @ net[l - 1].W.T
        if alpha > 0 and code_layer == l - 1:
            g = g + alpha * np.sign(xs[l - 2])
        delta = activation_vjp(net[l - 2].act, zs[l - 2], g, kink)
    return grads, value


def bp_objective(net: Network, x0, y, alpha: float = 0.0, code_layer: int | None = None,
                 loss_spec: ProxSpec | None = None) -> float:
    """Batch-mean training objective: loss plus ``alpha`` times the code norm."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    zs, xs = preactivations(net, x0)
    per_sample = _loss_and_grad(xs[-1], zs[-1], np.atleast_2d(y), loss_spec)[0]
    val = float(np.mean(per_sample))
    if alpha > 0:
        val += alpha * float(np.mean(np.abs(xs[code_layer - 1]).sum(axis=1)))
    return val


@dataclass
class BPConfig:
    lr: float = 1e-3
    epochs: int = 1
    batch_size: int | None = None
    seed: int = 0
    alpha: float = 0.0
    code_layer: int | None = None
    loss_spec: ProxSpec | None = None
    kink: float = 0.0
    tau_k: float = 1.0
    n_inner: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.tau_k <= 0:
            raise ValueError("tau_k must be positive")
        if self.n_inner < 1:
            raise ValueError("need at least one inner iteration")


def _apply(net: Network, grads, lr: float, anchor: Network | None = None,
           tau_k: float = np.inf):
    # the anchor term (1 / 2 tau_k)||Theta - anchor||^2 is applied exactly
    layers = []
    for la, (dW, db), a in zip(net.layers, grads, anchor.layers if anchor else [None] * len(net)):
        if a is None or np.isinf(tau_k):
            layers.append(Layer(la.W - lr * dW, la.b - lr * db, la.act))
        else:
            c = lr / tau_k
            layers.append(Layer((la.W - lr * dW + c * a.W) / (1 + c),
                                (la.b - lr * db + c * a.b) / (1 + c), la.act))
    return Network(layers)


def _train(net, x0, y, cfg: BPConfig, callback, implicit: bool):
    from .lifted import TrainState

    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    state = TrainState(net=net, seed=cfg.seed)
    state.record(callback)
    s = x0.shape[0]
    bs = cfg.batch_size or s
    for _ in range(cfg.epochs):
        for idx in batches(s, bs, cfg.seed, state.epoch):
            xb, yb = x0[idx], y[idx]
            if implicit:
                anchor = state.net
                cur = anchor
                for _ in range(cfg.n_inner):
                    grads, _ = backprop(cur, xb, yb, cfg.loss_spec, cfg.alpha, cfg.code_layer,
                                        cfg.kink)
                    cur = _apply(cur, grads, cfg.lr, anchor, cfg.tau_k)
                state.net = cur
            else:
                grads, _ = backprop(state.net, xb, yb, cfg.loss_spec, cfg.alpha, cfg.code_layer,
                                    cfg.kink)
                state.net = _apply(state.net, grads, cfg.lr)
        state.epoch += 1
        state.record(callback)
    return state


def train_gd(net: Network, x0, y, cfg: BPConfig, callback: Callable | None = None):
    """Full-batch gradient descent (``cfg.batch_size`` is ignored)."""
    full = BPConfig(**{**cfg.__dict__, "batch_size": None})
    return _train(net, x0, y, full, callback, implicit=False)


def train_sgd(net: Network, x0, y, cfg: BPConfig, callback: Callable | None = None):
    """Mini-batch SGD over a seeded reshuffle of the samples every epoch."""
    return _train(net, x0, y, cfg, callback, implicit=False)


def train_isgd(net: Network, x0, y, cfg: BPConfig, callback: Callable | None = None):
    """Implicit SGD: per batch, ``cfg.n_inner`` gradient steps on the batch
    loss plus ``1/(2 tau_k) ||Theta - Theta_batch_start||^2``, the proximal
    term applied exactly. Large ``tau_k`` approaches plain SGD."""
    return _train(net, x0, y, cfg, callback, implicit=True)
