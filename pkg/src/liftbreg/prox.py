"""Proximal activation functions.

Every activation used by the networks in this package is the proximal map of
a convex potential ``Psi``::

    sigma(z) = argmin_u  0.5 * ||u - z||^2 + Psi(u)

This module evaluates the potentials, their (scaled) proximal maps, the
Moreau envelope ``M(z) = 0.5 ||sigma(z) - z||^2 + Psi(sigma(z))`` and the
convex conjugate ``(0.5 ||.||^2 + Psi)^*(z) = 0.5 ||z||^2 - M(z)``.

All functions accept arrays of shape ``(..., n)``. Vector-valued results keep
the input shape; scalar-valued results reduce over the last axis, so a batch
of row vectors gives one value per row.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import optimize, special

__all__ = [
    "Kind",
    "ProxSpec",
    "psi_eval",
    "in_domain",
    "prox",
    "prox_scaled",
    "moreau_env",
    "star_eval",
    "prox_conjugate",
    "prox_energy_conjugate",
    "soft_threshold",
]

SIMPLEX_SUM_TOL = 1e-9
SIMPLEX_NEG_TOL = 1e-12
SOLVER_TOL = 1e-12
SOLVER_MAX_ITER = 100


class Kind(str, Enum):
    """Potential families; the value doubles as the serialisation tag."""

    RELU = "relu"
    L1 = "l1"
    TANH = "tanh"
    SOFTMAX = "softmax"
    ZERO = "zero"


@dataclass(frozen=True)
class ProxSpec:
    """Which potential a layer uses.

    ``relu`` is the indicator of the non-negative orthant, ``l1`` is
    ``alpha * ||u||_1`` (soft-thresholding), ``tanh`` and ``softmax`` are the
    entropy-like potentials whose proximal maps are tanh and softmax, and
    ``zero`` gives the identity activation.
    """

    kind: Kind
    alpha: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.L1:
            if self.alpha is None or not np.isfinite(self.alpha) or self.alpha <= 0:
                raise ValueError("l1 potential needs a positive finite alpha")
            object.__setattr__(self, "alpha", float(self.alpha))
        elif self.alpha is not None:
            raise ValueError(f"{self.kind.value} potential takes no alpha")

    @classmethod
    def relu(cls) -> "ProxSpec":
        return cls(Kind.RELU)

    @classmethod
    def l1(cls, alpha: float) -> "ProxSpec":
        return cls(Kind.L1, alpha)

    @classmethod
    def tanh(cls) -> "ProxSpec":
        return cls(Kind.TANH)

    @classmethod
    def softmax(cls) -> "ProxSpec":
        return cls(Kind.SOFTMAX)

    @classmethod
    def zero(cls) -> "ProxSpec":
        return cls(Kind.ZERO)

    @classmethod
    def parse(cls, tag: str) -> "ProxSpec":
        """Inverse of ``str(spec)``, e.g. ``"relu"`` or ``"l1:0.09"``."""
        name, _, arg = tag.strip().partition(":")
        kind = Kind(name.lower())
        return cls(kind, float(arg)) if kind is Kind.L1 else cls(kind)

    @property
    def componentwise(self) -> bool:
        return self.kind is not Kind.SOFTMAX

    def __str__(self) -> str:
        if self.kind is Kind.L1:
            return f"l1:{self.alpha!r}"
        return self.kind.value


def soft_threshold(z, thresh):
    """Componentwise ``sign(z) * max(|z| - thresh, 0)``."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)


def _as_float(u):
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = u.reshape(1)
    return u


def _tanh_psi_finite(u):
    # u*artanh(u) + 0.5*(log(1-u^2) - u^2) rewritten with xlogy so that the
    # boundary |u| = 1 evaluates to its finite limit log(2) - 1/2.
    return 0.5 * (special.xlogy(1 + u, 1 + u) + special.xlogy(1 - u, 1 - u)) - 0.5 * u**2


def _softmax_psi_finite(u):
    return np.sum(special.xlogy(u, u) - 0.5 * u**2, axis=-1)


def in_domain(spec: ProxSpec, u) -> np.ndarray:
    """Boolean per vector (reduced over the last axis): is ``u`` in dom(Psi)?"""
    u = _as_float(u)
    if spec.kind is Kind.RELU:
        return np.all(u >= 0, axis=-1)
    if spec.kind is Kind.TANH:
        return np.all(np.abs(u) < 1, axis=-1)
    if spec.kind is Kind.SOFTMAX:
        return (np.abs(u.sum(axis=-1) - 1) <= SIMPLEX_SUM_TOL) & np.all(
            u >= -SIMPLEX_NEG_TOL, axis=-1
        )
    return np.ones(u.shape[:-1], dtype=bool)


def psi_eval(spec: ProxSpec, u):
    """Potential value, ``+inf`` outside the domain.

    For tanh the domain is the open interval (-1, 1); the finite limit at the
    boundary is not attained. Small negative round-off on the simplex is
    clamped to zero before evaluating the entropy.
    """
    u = _as_float(u)
    ok = in_domain(spec, u)
    if spec.kind is Kind.RELU:
        val = np.zeros(u.shape[:-1])
    elif spec.kind is Kind.L1:
        val = spec.alpha * np.sum(np.abs(u), axis=-1)
    elif spec.kind is Kind.TANH:
        inside = np.clip(u, -1.0, 1.0)
        val = np.sum(_tanh_psi_finite(inside), axis=-1)
    elif spec.kind is Kind.SOFTMAX:
        val = _softmax_psi_finite(np.maximum(u, 0.0))
    else:
        val = np.zeros(u.shape[:-1])
    return np.where(ok, val, np.inf)


def prox(spec: ProxSpec, z):
    """The activation ``sigma = prox_Psi`` in closed form."""
    z = _as_float(z)
    if spec.kind is Kind.RELU:
        return np.maximum(z, 0.0)
    if spec.kind is Kind.L1:
        return soft_threshold(z, spec.alpha)
    if spec.kind is Kind.TANH:
        return np.tanh(z)
    if spec.kind is Kind.SOFTMAX:
        return special.softmax(z, axis=-1)
    return z.copy()


def _tanh_prox_scaled(v, t):
    """Componentwise prox of ``t * Psi_tanh``.

    Stationarity reads ``(1 - t) u + t artanh(u) = v``. Substituting
    ``u = tanh(y)`` gives ``g(y) = (1 - t) tanh(y) + t y - v = 0`` with
    ``g' >= min(1, t) > 0`` and the explicit bracket
    ``y in [(v - |1 - t|) / t, (v + |1 - t|) / t]``; Newton steps are kept
    inside a shrinking bisection bracket. Working in ``y`` keeps full
    precision where ``u`` is close to +-1.
    """
    v = np.asarray(v, dtype=float)
    lo = (v - abs(1 - t)) / t
    hi = (v + abs(1 - t)) / t
    y = v.copy()
    y = np.clip(y, lo, hi)
    for _ in range(SOLVER_MAX_ITER):
        th = np.tanh(y)
        g = (1 - t) * th + t * y - v
        lo = np.where(g < 0, y, lo)
        hi = np.where(g > 0, y, hi)
        step = y - g / ((1 - t) * (1 - th**2) + t)
        new = np.where((step < lo) | (step > hi), 0.5 * (lo + hi), step)
        done = np.abs(new - y) <= SOLVER_TOL * (1 + np.abs(y))
        y = new
        if np.all(done):
            break
    return np.tanh(y)


def _softmax_prox_scaled_row(v, t):
    """Exact prox of ``t * Psi_softmax`` for one vector.

    Stationarity gives ``(1 - t) u_j + t log u_j = v_j - t - nu`` for a shared
    multiplier ``nu``. With ``u_j = exp(w_j)`` and ``w_j <= 0`` the left side
    ``phi(w) = (1 - t) e^w + t w`` is strictly increasing, so each component
    is a bracketed scalar solve and ``nu`` follows from ``sum(u) = 1`` by
    Brent's method.
    """
    n = v.size

    def phi(w):
        return (1 - t) * np.exp(w) + t * w

    def log_u(c):
        # phi(w) lies between t*w and t*w + (1 - t) on w <= 0
        c = np.minimum(c, phi(0.0))
        lo = np.minimum(c / t, (c - 1 + t) / t)
        hi = np.minimum(np.maximum(c / t, (c - 1 + t) / t), 0.0)
        w = 0.5 * (lo + hi)
        for _ in range(SOLVER_MAX_ITER):
            g = phi(w) - c
            lo = np.where(g < 0, w, lo)
            hi = np.where(g > 0, w, hi)
            step = w - g / ((1 - t) * np.exp(w) + t)
            new = np.where((step <= lo) | (step >= hi), 0.5 * (lo + hi), step)
            if np.all(np.abs(new - w) <= 1e-15 * (1 + np.abs(w))):
                return new
            w = new
        return w

    def excess(nu):
        return np.sum(np.exp(log_u(v - t - nu))) - 1.0

    vmax = v.max()
    lo = vmax - t - phi(0.0)  # largest component is 1: excess >= 0
    hi = vmax - t - phi(-np.log(n))  # every component <= 1/n: excess <= 0
    if excess(lo) <= 0:
        nu = lo
    elif excess(hi) >= 0:
        nu = hi
    else:
        nu = optimize.brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                             maxiter=500)
    u = np.exp(log_u(v - t - nu))
    return u / u.sum()


def prox_scaled(spec: ProxSpec, z, t: float, l1: float = 0.0):
    """``prox_{t (Psi + l1 * ||.||_1)}(z)``.

    For the componentwise potentials the extra ``l1`` term is applied as a
    soft-threshold at ``t * l1`` before the potential's own prox, which is
    exact because both terms are separable with a common minimiser ordering.
    On the simplex the one-norm is constant, so ``l1`` has no effect there.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    z = _as_float(z)
    if l1 < 0:
        raise ValueError("l1 weight must be nonnegative")
    if l1 > 0 and spec.kind is not Kind.SOFTMAX:
        z = soft_threshold(z, t * l1)
    if spec.kind is Kind.RELU:
        return np.maximum(z, 0.0)
    if spec.kind is Kind.L1:
        return soft_threshold(z, t * spec.alpha)
    if spec.kind is Kind.ZERO:
        return z.copy()
    if t == 1.0:
        return prox(spec, z)
    if spec.kind is Kind.TANH:
        return _tanh_prox_scaled(z, t)
    rows = z.reshape(-1, z.shape[-1])
    out = np.stack([_softmax_prox_scaled_row(r, float(t)) for r in rows])
    return out.reshape(z.shape)


def moreau_env(spec: ProxSpec, z):
    """``M(z) = 0.5 ||sigma(z) - z||^2 + Psi(sigma(z))``.

    The tanh and softmax potentials are evaluated through their continuous
    extension so that saturated activations (tanh rounding to +-1) stay finite.
    """
    z = _as_float(z)
    s = prox(spec, z)
    quad = 0.5 * np.sum((s - z) ** 2, axis=-1)
    if spec.kind is Kind.TANH:
        pot = np.sum(_tanh_psi_finite(s), axis=-1)
    elif spec.kind is Kind.SOFTMAX:
        pot = _softmax_psi_finite(s)
    elif spec.kind is Kind.L1:
        pot = spec.alpha * np.sum(np.abs(s), axis=-1)
    else:
        pot = np.zeros(z.shape[:-1])
    return quad + pot


def star_eval(spec: ProxSpec, z):
    """Convex conjugate ``(0.5 ||.||^2 + Psi)^*(z) = 0.5 ||z||^2 - M(z)``."""
    z = _as_float(z)
    return 0.5 * np.sum(z**2, axis=-1) - moreau_env(spec, z)


def prox_conjugate(spec: ProxSpec, z, t: float = 1.0):
    """``prox_{t Psi^*}(z) = z - t prox_{Psi / t}(z / t)`` (Moreau decomposition)."""
    z = _as_float(z)
    return z - t * prox_scaled(spec, z / t, 1.0 / t)


def prox_energy_conjugate(spec: ProxSpec, y, c: float):
    """``prox_{c F^*}(y)`` for ``F = 0.5 ||.||^2 + Psi``.

    Uses the extended Moreau decomposition
    ``prox_{cF^*}(y) = y - c prox_{F/c}(y/c)`` together with
    ``prox_{F/c}(v) = prox_{Psi/(1+c)}(c v / (1 + c))``.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    y = _as_float(y)
    return y - c * prox_scaled(spec, y / (1.0 + c), 1.0 / (1.0 + c))
