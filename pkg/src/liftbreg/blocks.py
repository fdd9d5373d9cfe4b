"""Block-wise solvers for the lifted objective.

With all other variables fixed the lifted objective is convex in each
parameter block ``Theta_l`` and in each auxiliary block ``x_j``. Odd and even
auxiliary indices only couple through their neighbours, which gives a
three-block schedule: all parameters, then all odd ``x_j``, then all even
``x_j``. Each block can be solved by proximal gradient iterations or by ADMM.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .bregman import bregman_eval
from .network import Network, affine, init_aux
from .objective import ObjectiveSpec, chain, objective_E, prox_G_x
from .prox import prox, prox_energy_conjugate, prox_scaled
from .lifted import TrainState, power_iteration

__all__ = [
    "BlockSolver",
    "solve_theta_block",
    "solve_x_block",
    "coordinate_descent_epoch",
    "AdmmResult",
    "admm_theta_block",
    "admm_x_block",
    "train_cd",
    "train_admm",
]


@dataclass
class BlockSolver:
    """Inner solver settings: iteration caps and the stopping tolerance on
    the largest change of an iterate."""

    theta_iters: int = 5000
    x_iters: int = 1000
    tol: float = 1e-12


def _augmented_norm2(X) -> float:
    # ||[X, 1]||_2^2, exact for the small matrices used here
    A = np.hstack([X, np.ones((X.shape[0], 1))])
    if min(A.shape) <= 512:
        return float(np.linalg.norm(A, 2) ** 2)
    return power_iteration(A, tol=1e-10, max_iter=1000)[0] ** 2 * (1 + 1e-6)


def solve_theta_block(spec: ObjectiveSpec, net: Network, xs, l: int, solver: BlockSolver):
    """Minimise ``mean_i B_l(x_l^i, W^T x_{l-1}^i + b)`` over ``(W, b)``.

    Gradient descent with step ``s / ||[X_{l-1}, 1]||^2``, the inverse
    Lipschitz constant of the joint gradient; modifies ``net`` in place.
    """
    la = net.layers[l - 1]
    X, T = xs[l - 1], xs[l]
    s = X.shape[0]
    tau = s / max(_augmented_norm2(X), 1e-300)
    for _ in range(solver.theta_iters):
        r = prox(la.act, affine(la, X)) - T
        dW = tau * (X.T @ r) / s
        db = tau * r.mean(axis=0)
        la.W = la.W - dW
        la.b = la.b - db
        if max(np.abs(dW).max(initial=0), np.abs(db).max(initial=0)) <= solver.tol:
            break


def solve_x_block(spec: ObjectiveSpec, net: Network, xs, j: int, solver: BlockSolver):
    """Minimise the per-sample terms of ``x_j`` by proximal gradient steps
    with step ``1 / (lam_{j+1} ||W_{j+1}||^2)``; updates ``xs[j]`` in place."""
    w = spec.weights(len(net))
    nxt, cur = net.layers[j], net.layers[j - 1]
    nrm = np.linalg.norm(nxt.W, 2) if min(nxt.W.shape) <= 1024 else power_iteration(nxt.W)[0]
    tau = 1.0 / (w[j] * nrm**2) if nrm > 0 else 1.0
    f_in = affine(cur, xs[j - 1])
    x = xs[j]
    for _ in range(solver.x_iters):
        r = prox(nxt.act, affine(nxt, x)) - xs[j + 1]
        g = w[j] * r @ nxt.W.T - w[j - 1] * f_in
        new = prox_G_x(spec, net, j, x - tau * g, tau)
        delta = np.abs(new - x).max(initial=0)
        x = new
        if delta <= solver.tol:
            break
    xs[j] = x


def coordinate_descent_epoch(spec: ObjectiveSpec, net: Network, aux, x0, target,
                             solver: BlockSolver | None = None, trace: bool = False):
    """One pass of the three-block schedule.

    Returns ``(net, aux)`` (the network is modified in place) and, with
    ``trace``, also the objective before and after each block.
    """
    solver = solver or BlockSolver()
    spec.check(net)
    xs = chain(net, aux, x0, target)
    xs = [x.copy() for x in xs]
    values = [objective_E(spec, net, xs[1:-1], x0, target)] if trace else []
    for l in range(1, len(net) + 1):
        solve_theta_block(spec, net, xs, l, solver)
    if trace:
        values.append(objective_E(spec, net, xs[1:-1], x0, target))
    for parity in (1, 0):
        for j in range(1, len(net)):
            if j % 2 == parity:
                solve_x_block(spec, net, xs, j, solver)
        if trace:
            values.append(objective_E(spec, net, xs[1:-1], x0, target))
    if trace:
        return net, xs[1:-1], values
    return net, xs[1:-1]


# --------------------------------------------------------------------------
# ADMM


@dataclass
class AdmmResult:
    x: np.ndarray | None = None
    W: np.ndarray | None = None
    b: np.ndarray | None = None
    z: np.ndarray | None = None
    mu: tuple | np.ndarray | None = None
    residuals: list = field(default_factory=list)
    objectives: list = field(default_factory=list)


def admm_theta_block(net: Network, l: int, x_prev, x_cur, delta: float = 1.0,
                     ridge: float | None = None, iters: int = 200, init=None) -> AdmmResult:
    """ADMM for ``min_Theta sum_i F^*(f(x_{l-1}^i)) - <x_l^i, f(x_{l-1}^i)>``.

    Splits ``z = f(x_{l-1}, Theta)`` with multiplier ``mu`` and runs, for
    ``iters`` cycles, the weight solve (with a ridge ``ridge/2 ||W - W^j||^2``
    added to the augmented Lagrangian), the bias update, the ``z`` update
    through the prox of the scaled conjugate, and the multiplier ascent.
    ``ridge=None`` uses ``1e-6 * trace(X^T X)``; ``ridge=0`` needs a
    nonsingular ``X^T X``.
    """
    la = net.layers[l - 1]
    X = np.atleast_2d(np.asarray(x_prev, dtype=float))
    Xl = np.atleast_2d(np.asarray(x_cur, dtype=float))
    G = X.T @ X
    if ridge is None:
        ridge = 1e-6 * float(np.trace(G))
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    try:
        factor = linalg.cho_factor(G + (ridge / delta) * np.eye(G.shape[0]))
    except linalg.LinAlgError:
        raise ValueError("weight system is singular; use a ridge > 0") from None
    W, b = la.W.copy(), la.b.copy()
    if init is None:
        z = X @ W + b
        mu = np.zeros_like(z)
    else:
        z, mu = init
    out = AdmmResult()
    for _ in range(iters):
        T = z + mu / delta
        W = linalg.cho_solve(factor, X.T @ (T - b) + (ridge / delta) * W)
        b = np.mean(T - X @ W, axis=0)
        f = X @ W + b
        r = Xl - mu + delta * f
        z = prox_energy_conjugate(la.act, r / delta, 1.0 / delta)
        mu = mu + delta * (z - f)
        out.residuals.append(float(np.linalg.norm(z - f)))
    out.W, out.b, out.z, out.mu = W, b, z, mu
    return out


def admm_x_block(spec: ObjectiveSpec, net: Network, j: int, x_prev, x_cur, x_next,
                 delta: float = 1.0, iters: int = 200, track: bool = False) -> AdmmResult:
    """ADMM for the sub-problem of one auxiliary block ``x_j``.

    Variables ``x``, a copy ``v = x`` and ``z = f_{j+1}(v)``. The cycle is
    the ``x`` update through ``prox`` of the scaled potential, a linear solve
    for ``v``, the ``z`` update through the prox of the scaled conjugate of
    ``0.5||.||^2 + Psi_{j+1}`` and ascent on both multipliers.
    """
    L = len(net)
    if not 1 <= j <= L - 1:
        raise IndexError(f"auxiliary index {j} out of range")
    w = spec.weights(L)
    lam, lam_n = w[j - 1], w[j]
    cur, nxt = net.layers[j - 1], net.layers[j]
    f_in = affine(cur, np.atleast_2d(x_prev))
    Xn = np.atleast_2d(np.asarray(x_next, dtype=float))
    W, b = nxt.W, nxt.b
    M = W @ W.T + np.eye(W.shape[0])
    try:
        factor = linalg.cho_factor(M)
    except linalg.LinAlgError:
        factor = linalg.cho_factor(M + 1e-10 * np.trace(M) * np.eye(M.shape[0]))
    x = np.atleast_2d(np.asarray(x_cur, dtype=float)).copy()
    v = x.copy()
    z = v @ W + b
    mu1 = np.zeros_like(z)
    mu2 = np.zeros_like(x)
    a = spec.code_weight(j) / lam
    out = AdmmResult()
    for _ in range(iters):
        x = prox_scaled(cur.act, (lam * f_in + mu2 + delta * v) / (lam + delta),
                        lam / (lam + delta), l1=a)
        rhs = (z - b + mu1 / delta) @ W.T + x - mu2 / delta
        v = linalg.cho_solve(factor, rhs.T).T
        fv = v @ W + b
        z = prox_energy_conjugate(nxt.act, fv + (lam_n * Xn - mu1) / delta, lam_n / delta)
        mu1 = mu1 + delta * (z - fv)
        mu2 = mu2 + delta * (v - x)
        out.residuals.append(float(np.sqrt(np.sum((z - fv) ** 2) + np.sum((v - x) ** 2))))
        if track:
            out.objectives.append(_x_block_objective(spec, net, j, x, f_in, Xn))
    out.x, out.z, out.mu = x, z, (mu1, mu2)
    return out


def _x_block_objective(spec, net, j, x, f_in, Xn):
    w = spec.weights(len(net))
    cur, nxt = net.layers[j - 1], net.layers[j]
    val = w[j - 1] * bregman_eval(cur.act, x, f_in) + w[j] * bregman_eval(nxt.act, Xn, affine(nxt, x))
    val = val + spec.code_weight(j) * np.abs(x).sum(axis=1)
    return float(np.sum(val))


# --------------------------------------------------------------------------
# trainers on the full data set


@dataclass
class BlockConfig:
    epochs: int = 1
    solver: BlockSolver = field(default_factory=BlockSolver)
    delta: float = 1.0
    admm_iters: int = 50
    ridge: float | None = None


def train_cd(spec: ObjectiveSpec, net: Network, x0, target, config: BlockConfig,
             callback: Callable | None = None) -> TrainState:
    """Deterministic three-block coordinate descent on all samples; the
    auxiliary variables persist across epochs."""
    state = TrainState(net=net)
    state.aux = init_aux(net, x0)
    state.record(callback)
    for _ in range(config.epochs):
        _, state.aux = coordinate_descent_epoch(spec, state.net, state.aux, x0, target,
                                                config.solver)
        state.epoch += 1
        state.record(callback)
    return state


def train_admm(spec: ObjectiveSpec, net: Network, x0, target, config: BlockConfig,
               callback: Callable | None = None) -> TrainState:
    """The three-block schedule with every block solved by ADMM."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    state = TrainState(net=net)
    state.aux = init_aux(net, x0)
    state.record(callback)
    L = len(net)
    for _ in range(config.epochs):
        xs = chain(state.net, state.aux, x0, target)
        for l in range(1, L + 1):
            res = admm_theta_block(state.net, l, xs[l - 1], xs[l], config.delta,
                                   config.ridge, config.admm_iters)
            state.net.layers[l - 1].W, state.net.layers[l - 1].b = res.W, res.b
        for parity in (1, 0):
            for j in range(1, L):
                if j % 2 == parity:
                    xs[j] = admm_x_block(spec, state.net, j, xs[j - 1], xs[j], xs[j + 1],
                                         config.delta, config.admm_iters).x
        state.aux = xs[1:-1]
        state.epoch += 1
        state.record(callback)
    return state
