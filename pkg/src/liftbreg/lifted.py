"""Proximal-gradient solvers for the lifted objective.

The building block is a forward-backward sweep: an explicit gradient step on
the affine parameters, whose gradient is ``X_{l-1}^T (sigma(Z_l) - X_l)``, and
a proximal step on the auxiliary variables. :func:`train_lbn` wraps the sweep
in an implicit stochastic scheme: every mini-batch solves a small sub-problem
anchored to the parameters before the batch, with auxiliary variables
initialised by a forward pass.

No derivative of an activation function is evaluated anywhere in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import batches
from .bregman import bregman_eval
from .network import Layer, Network, affine, init_aux
from .objective import ObjectiveSpec, chain, grad_H_theta, grad_H_x, objective_E, prox_G_x
from .prox import prox, soft_threshold

__all__ = [
    "power_iteration",
    "spectral_norm",
    "spectral_stepsize",
    "StepSizes",
    "LBNConfig",
    "TrainState",
    "NormCache",
    "LinearizedBregman",
    "prox_grad_step",
    "relu_prox_grad_step",
    "lbn_batch",
    "train_lbn",
    "model_average",
    "train_parallel",
    "train_constrained",
    "layer_penalties",
]

SAFETY = 1.99


def power_iteration(A, tol: float = 1e-6, max_iter: int = 300, v0=None, seed: int = 0,
                    exact_below: int = 128):
    """Largest singular value of ``A`` and the matching right singular vector.

    Works on the smaller Gram matrix ``A^T A`` or ``A A^T`` (returning a left
    vector in the second case). Gram matrices of size at most ``exact_below``
    are solved exactly with a symmetric eigensolver. Larger ones use power
    iteration, warm-started from ``v0``, until the eigen-residual
    ``||G v - rho v||`` drops below ``tol * rho``.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0, None
    tall = A.shape[0] >= A.shape[1]
    n = A.shape[1] if tall else A.shape[0]
    if n <= exact_below:
        G = A.T @ A if tall else A @ A.T
        vals, vecs = np.linalg.eigh(G)
        return math.sqrt(max(float(vals[-1]), 0.0)), vecs[:, -1]
    if v0 is None or v0.shape != (n,) or not np.any(v0):
        v = np.random.default_rng(seed).standard_normal(n)
    else:
        v = v0.copy()
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v) if tall else A @ (A.T @ v)
        rho = float(v @ w)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0, v
        if np.linalg.norm(w - rho * v) <= tol * norm:
            break
        v = w / norm
    return math.sqrt(max(rho, 0.0)), v


def spectral_norm(A, tol: float = 1e-6, max_iter: int = 300, seed: int = 0) -> float:
    return power_iteration(A, tol, max_iter, seed=seed)[0]


def spectral_stepsize(X, tau_k: float = 0.0, scale: float = 1.0, lam: float = 1.0,
                      cap: float = 1.0, norm: float | None = None) -> float:
    """``1.99 * scale / (lam ||X||_2^2 + tau_k / 2)``.

    ``scale`` is 1 for the classification rule and the batch size for the
    autoencoder rule. A zero matrix falls back to ``1.99 scale / (tau_k / 2)``
    and, when ``tau_k = 0`` as well, to ``cap``.
    """
    if norm is None:
        X = np.asarray(X, dtype=float)
        if X.size == 0:
            raise ValueError("empty activation matrix")
        norm = spectral_norm(X)
    denom = lam * norm**2 + 0.5 * tau_k
    if denom <= 0:
        return cap
    return SAFETY * scale / denom


@dataclass
class StepSizes:
    """Step sizes of the inner sweeps.

    Any of ``tau_w``, ``tau_b``, ``tau_x`` left as ``None`` is recomputed every
    inner iteration from the spectral rule::

        tau_w = 1.99 c / (lam_l ||X_{l-1}||^2 + tau_k / 2)
        tau_b = 1.99 / (1 + tau_k / 2)        (c = 1)
        tau_b = 1.99                          (c = batch size)
        tau_x = 1.99 / (lam_{j+1} ||W_{j+1}||^2)

    with ``c = batch size`` when ``batch_scaled`` is set.
    """

    tau_w: float | None = None
    tau_b: float | None = None
    tau_x: float | None = None
    tau_k: float = 0.0
    n_inner: int = 15
    batch_scaled: bool = False
    cap: float = 1.0

    def __post_init__(self):
        for name in ("tau_w", "tau_b", "tau_x"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tau_k < 0:
            raise ValueError("tau_k must be nonnegative")
        if self.n_inner < 1:
            raise ValueError("need at least one inner iteration")


class NormCache:
    """Warm starts for repeated power iterations on slowly changing matrices."""

    def __init__(self, tol: float = 1e-3, max_iter: int = 100):
        self.tol = tol
        self.max_iter = max_iter
        self.vectors: dict = {}

    def norm(self, key, A) -> float:
        val, v = power_iteration(A, self.tol, self.max_iter, v0=self.vectors.get(key))
        if v is not None:
            self.vectors[key] = v
        return val


class LinearizedBregman:
    """Linearised Bregman iteration on the parameters with ``R = beta ||.||_1``.

    A dual variable ``v = Theta + p`` with ``p`` a subgradient of ``R`` takes
    the gradient steps, and the parameters are recovered as
    ``Theta = prox_R(v)``. With ``beta = 0`` this is the plain update.
    """

    def __init__(self, beta: float):
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        self.beta = float(beta)
        self.v: dict = {}

    def dual(self, key, theta):
        if key not in self.v:
            self.v[key] = theta + self.beta * np.sign(theta)
        return self.v[key]

    def primal(self, v):
        return soft_threshold(v, self.beta) if self.beta > 0 else v.copy()


@dataclass
class LBNConfig:
    epochs: int = 1
    batch_size: int | None = None
    steps: StepSizes = field(default_factory=StepSizes)
    seed: int = 0
    param_reg: float = 0.0
    anchor: str = "implicit"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.anchor not in ("implicit", "explicit"):
            raise ValueError("anchor must be 'implicit' or 'explicit'")


@dataclass
class TrainState:
    net: Network
    epoch: int = 0
    seed: int = 0
    history: list = field(default_factory=list)
    aux: list | None = None
    penalties: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def record(self, callback):
        row = callback(self) if callback is not None else None
        if row is not None:
            self.history.append(row)


# --------------------------------------------------------------------------
# single sweeps


def prox_grad_step(spec: ObjectiveSpec, net: Network, aux, x0, target,
                   tau_w: float, tau_b: float, tau_x: float):
    """One simultaneous forward-backward step on all parameters and auxiliaries.

    Every update reads the iterate before the step. Parameter gradients are of
    the batch mean, while ``tau_x`` applies to each sample's own objective.
    Returns new ``(net, aux)``; the inputs are not modified.
    """
    spec.check(net)
    xs = chain(net, aux, x0, target)
    new_layers = []
    for l, la in enumerate(net.layers, start=1):
        gW, gb = grad_H_theta(spec, net, aux, x0, target, l)
        new_layers.append(Layer(la.W - tau_w * gW, la.b - tau_b * gb, la.act))
    new_aux = []
    for j in range(1, len(net)):
        if tau_x == 0:
            new_aux.append(xs[j].copy())
            continue
        g = grad_H_x(spec, net, aux, x0, target, j)
        new_aux.append(prox_G_x(spec, net, j, xs[j] - tau_x * g, tau_x))
    return Network(new_layers), new_aux


def relu_prox_grad_step(net: Network, aux, x0, target, tau_w: float, tau_b: float,
                        tau_x: float):
    """The same step written out for all-ReLU affine networks with unit weights.

    Independent closed-form path used to cross-check :func:`prox_grad_step`.
    """
    x0 = np.atleast_2d(x0)
    xs = [x0] + [np.atleast_2d(a) for a in aux] + [np.atleast_2d(target)]
    s = x0.shape[0]
    L = len(net)
    new_layers = []
    for l in range(1, L + 1):
        W, b = net[l - 1].W, net[l - 1].b
        r = np.maximum(xs[l - 1] @ W + b, 0) - xs[l]
        new_layers.append(Layer(W - tau_w * xs[l - 1].T @ r / s, b - tau_b * r.mean(axis=0),
                                net[l - 1].act))
    new_aux = []
    for j in range(1, L):
        Wn, bn = net[j].W, net[j].b
        W, b = net[j - 1].W, net[j - 1].b
        back = (np.maximum(xs[j] @ Wn + bn, 0) - xs[j + 1]) @ Wn.T
        new_aux.append(np.maximum((xs[j] - tau_x * (back - (xs[j - 1] @ W + b))) / (1 + tau_x), 0))
    return Network(new_layers), new_aux


# --------------------------------------------------------------------------
# anchored mini-batch sub-problem


def _anchored_objective(spec, net, aux, x0, target, anchor, tau_k):
    val = objective_E(spec, net, aux, x0, target)
    if tau_k > 0 and anchor is not None:
        d = sum(np.sum((a.W - b.W) ** 2) + np.sum((a.b - b.b) ** 2)
                for a, b in zip(net.layers, anchor.layers))
        val += 0.5 * tau_k * d
    return val


def lbn_batch(spec: ObjectiveSpec, net: Network, x0, target, steps: StepSizes,
              anchor: Network | None = None, cache: NormCache | None = None,
              reg: LinearizedBregman | None = None, anchor_mode: str = "implicit",
              trace: bool = False):
    """Solve one mini-batch sub-problem with ``steps.n_inner`` sweeps.

    Minimises the batch objective plus ``tau_k/2 ||Theta - anchor||^2``
    starting from ``net`` (modified in place) and auxiliaries initialised by
    a forward pass. Each sweep updates ``W_l`` then ``b_l`` for ``l = L..1``
    followed by ``x_j`` for ``j = L-1..1``, always using the newest values.

    With ``anchor_mode="implicit"`` the proximal-point term is applied through
    its exact prox, ``theta <- (theta - tau g + tau tau_k a) / (1 + tau tau_k)``;
    ``"explicit"`` adds ``tau_k (theta - a)`` to the gradient instead.

    Returns ``(net, aux, values)`` where ``values`` lists the anchored
    objective before the first and after every sweep when ``trace`` is set.
    """
    spec.check(net)
    cache = cache if cache is not None else NormCache()
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    s = x0.shape[0]
    L = len(net)
    w = spec.weights(L)
    tau_k = steps.tau_k
    if tau_k > 0 and anchor is None:
        anchor = net.copy()
    scale = float(s) if steps.batch_scaled else 1.0
    aux = init_aux(net, x0)
    xs = [x0] + aux + [target]
    if reg is not None:
        duals = {}
        for l, la in enumerate(net.layers, start=1):
            duals[(l, "W")] = reg.dual((l, "W"), la.W)
            duals[(l, "b")] = reg.dual((l, "b"), la.b)
        anchor_duals = {k: v.copy() for k, v in duals.items()} if tau_k > 0 else None
    values = [_anchored_objective(spec, net, aux, x0, target, anchor, tau_k)] if trace else []

    def update(theta, grad, tau, anchor_theta, key):
        if reg is not None:
            v = duals[key]
            a = anchor_duals[key] if anchor_duals is not None else None
            v_new = _anchor_step(v, grad, tau, tau_k, a, anchor_mode)
            reg.v[key] = duals[key] = v_new
            return reg.primal(v_new)
        return _anchor_step(theta, grad, tau, tau_k, anchor_theta, anchor_mode)

    for _ in range(steps.n_inner):
        for l in range(L, 0, -1):
            la = net.layers[l - 1]
            X_in = xs[l - 1]
            if steps.tau_w is None:
                tau_w = spectral_stepsize(None, tau_k, scale, w[l - 1], steps.cap,
                                          norm=cache.norm(("X", l, s), X_in))
            else:
                tau_w = steps.tau_w
            if steps.tau_b is None:
                tau_b = SAFETY if steps.batch_scaled else SAFETY / (1 + 0.5 * tau_k)
            else:
                tau_b = steps.tau_b
            a = anchor.layers[l - 1] if anchor is not None else None
            r = prox(la.act, affine(la, X_in)) - xs[l]
            gW = X_in.T @ r
            gW *= w[l - 1] / s
            la.W = update(la.W, gW, tau_w, a.W if a is not None else None, (l, "W"))
            r = prox(la.act, affine(la, X_in)) - xs[l]
            gb = w[l - 1] * r.mean(axis=0)
            la.b = update(la.b, gb, tau_b, a.b if a is not None else None, (l, "b"))
        for j in range(L - 1, 0, -1):
            nxt = net.layers[j]
            if steps.tau_x is None:
                nrm = cache.norm(("W", j + 1), nxt.W)
                tau_x = SAFETY / (w[j] * nrm**2) if nrm > 0 else steps.cap
            else:
                tau_x = steps.tau_x
            if tau_x == 0:
                continue
            r = prox(nxt.act, affine(nxt, xs[j])) - xs[j + 1]
            g = w[j] * r @ nxt.W.T - w[j - 1] * affine(net.layers[j - 1], xs[j - 1])
            xs[j] = prox_G_x(spec, net, j, xs[j] - tau_x * g, tau_x)
        if trace:
            values.append(_anchored_objective(spec, net, xs[1:-1], x0, target, anchor, tau_k))
    return net, xs[1:-1], values


def _anchor_step(theta, grad, tau, tau_k, anchor_theta, mode):
    # ``grad`` is a scratch array owned by the caller and is overwritten; working
    # in place avoids fresh large allocations in the inner loop
    out = np.multiply(grad, -tau, out=grad)
    if tau_k == 0 or anchor_theta is None:
        out += theta
        return out
    if mode == "explicit":
        out -= (tau * tau_k) * (theta - anchor_theta)
        out += theta
        return out
    c = tau * tau_k
    out += theta
    out += c * anchor_theta
    out /= 1 + c
    return out


def layer_penalties(spec: ObjectiveSpec, net: Network, aux, x0, target) -> np.ndarray:
    """Per-layer sums over the batch of ``B_l(x_l, f_l(x_{l-1}))``, l = 1..L."""
    xs = chain(net, aux, x0, target)
    return np.array([float(np.sum(bregman_eval(la.act, xs[l], affine(la, xs[l - 1]))))
                     for l, la in enumerate(net.layers, start=1)])


# --------------------------------------------------------------------------
# trainers


def train_lbn(spec: ObjectiveSpec, net: Network, x0, target, config: LBNConfig,
              callback: Callable | None = None, state: TrainState | None = None) -> TrainState:
    """Implicit stochastic lifted Bregman training.

    Every epoch visits a seeded random partition of the samples; each batch
    solves :func:`lbn_batch` anchored at the parameters before that batch.
    ``callback(state)`` runs after every epoch (and once before the first)
    and its returned dict is appended to ``state.history``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    spec.check(net)
    if state is None:
        state = TrainState(net=net, seed=config.seed)
        state.extra["cache"] = NormCache()
        if config.param_reg > 0:
            state.extra["reg"] = LinearizedBregman(config.param_reg)
        state.record(callback)
    s = x0.shape[0]
    bs = config.batch_size or s
    cache = state.extra.setdefault("cache", NormCache())
    reg = state.extra.get("reg")
    for _ in range(config.epochs):
        pen = np.zeros(len(state.net))
        for idx in batches(s, bs, config.seed, state.epoch):
            anchor = state.net.copy() if config.steps.tau_k > 0 else None
            _, aux, _ = lbn_batch(spec, state.net, x0[idx], target[idx], config.steps,
                                  anchor=anchor, cache=cache, reg=reg,
                                  anchor_mode=config.anchor)
            state.aux = aux
            state.extra["last_batch"] = idx
            pen += layer_penalties(spec, state.net, aux, x0[idx], target[idx])
        state.penalties = pen / s
        state.epoch += 1
        state.record(callback)
    return state


def model_average(nets: list[Network]) -> Network:
    """Elementwise mean of parameters of identically shaped networks."""
    if not nets:
        raise ValueError("need at least one network")
    first = nets[0]
    for other in nets[1:]:
        if not first.same_shape(other):
            raise ValueError("networks differ in shape")
    layers = []
    for l, la in enumerate(first.layers):
        W = np.mean(np.stack([n.layers[l].W for n in nets]), axis=0)
        b = np.mean(np.stack([n.layers[l].b for n in nets]), axis=0)
        layers.append(Layer(W, b, la.act))
    return Network(layers)


def train_parallel(spec: ObjectiveSpec, net: Network, x0, target, m: int, config: LBNConfig,
                   callback: Callable | None = None) -> TrainState:
    """Model averaging: per epoch, ``m`` batches each solve their anchored
    sub-problem starting from the current average, then the results are
    averaged. Workers are processed sequentially in a fixed order."""
    if m < 1:
        raise ValueError("need at least one worker")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    spec.check(net)
    state = TrainState(net=net, seed=config.seed)
    cache = NormCache()
    state.record(callback)
    s = x0.shape[0]
    bs = math.ceil(s / m)
    for _ in range(config.epochs):
        center = state.net
        results = []
        pen = np.zeros(len(center))
        for idx in batches(s, bs, config.seed, state.epoch):
            worker = center.copy()
            anchor = center.copy() if config.steps.tau_k > 0 else None
            _, aux, _ = lbn_batch(spec, worker, x0[idx], target[idx], config.steps,
                                  anchor=anchor, cache=cache, anchor_mode=config.anchor)
            pen += layer_penalties(spec, worker, aux, x0[idx], target[idx])
            results.append(worker)
            state.aux = aux
        state.net = model_average(results)
        state.penalties = pen / s
        state.epoch += 1
        state.record(callback)
    return state


def train_constrained(spec: ObjectiveSpec, net: Network, x0, target, tau_dual: float,
                      config: LBNConfig, outer_iters: int,
                      callback: Callable | None = None) -> TrainState:
    """Penalty weights as multipliers of the constraints ``B_l <= 0``.

    Alternates ``config.epochs`` epochs of :func:`train_lbn` with the current
    weights and the ascent ``lam_l <- max(0, lam_l + tau_dual * B_l)``, where
    ``B_l`` is the mean penalty of layer ``l`` at the end of the inner solve.
    The weight history is kept in ``state.extra["lam"]``.
    """
    if tau_dual <= 0:
        raise ValueError("tau_dual must be positive")
    L = len(net)
    lam = np.array(spec.weights(L)[:-1])
    lam_hist = [lam.copy()]
    state = None
    for _ in range(outer_iters):
        inner = ObjectiveSpec(lam=tuple(lam), alpha=spec.alpha, code_layer=spec.code_layer,
                              task=spec.task)
        state = train_lbn(inner, net if state is None else state.net, x0, target, config,
                          callback=callback, state=state)
        pen = state.penalties[:-1] if state.penalties is not None else np.zeros(L - 1)
        lam = np.maximum(0.0, lam + tau_dual * pen)
        lam_hist.append(lam.copy())
    if state is None:
        state = TrainState(net=net, seed=config.seed)
    state.extra["lam"] = lam_hist
    return state
