"""Bregman penalty between an activation variable and a pre-activation.

For a potential ``Psi`` with proximal map ``sigma`` the penalty is::

    B(x, z) = 0.5 ||x||^2 + Psi(x) + F^*(z) - <x, z>,   F = 0.5 ||.||^2 + Psi

It is a (generalised) Bregman distance of ``F`` between ``x`` and
``sigma(z)``, it vanishes exactly when ``x = sigma(z)`` and its gradient in
``z`` is ``sigma(z) - x``, so training with it never differentiates the
activation function.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .prox import (Kind, ProxSpec, _as_float, _tanh_psi_finite, in_domain, moreau_env, prox,
                   psi_eval, star_eval)

__all__ = [
    "Mode",
    "BregmanLoss",
    "bregman_eval",
    "bregman_grad_z",
    "energy_form",
    "distance_form",
    "split_form",
    "lower_bound",
]


class Mode(str, Enum):
    GENERIC = "generic"
    CLOSED_FORM = "closed_form"


@dataclass(frozen=True)
class BregmanLoss:
    spec: ProxSpec
    mode: Mode = Mode.GENERIC

    def __call__(self, x, z):
        return bregman_eval(self, x, z)

    def grad_z(self, x, z):
        return bregman_grad_z(self, x, z)


def _loss(loss) -> BregmanLoss:
    return loss if isinstance(loss, BregmanLoss) else BregmanLoss(loss)


def _pair(x, z):
    x, z = _as_float(x), _as_float(z)
    if x.shape != z.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs z {z.shape}")
    return x, z


def _closed_form(spec: ProxSpec, x, z):
    """Per-potential closed forms, written out independently of star_eval."""
    k = spec.kind
    if k is Kind.ZERO:
        return 0.5 * np.sum((x - z) ** 2, axis=-1)
    if k is Kind.RELU:
        return 0.5 * np.sum((x - np.maximum(z, 0)) ** 2, axis=-1) + np.sum(
            x * np.maximum(-z, 0), axis=-1
        )
    if k is Kind.L1:
        a = spec.alpha
        # scalar formula for z > a, z < -a, |z| <= a with its dropped
        # branch-dependent constants restored
        base = np.where(z > a, 0.5 * z**2 - z * (a + x),
                        np.where(z < -a, 0.5 * z**2 + z * (a - x), -x * z))
        corr = 0.5 * x**2 + a * np.abs(x) + np.where(np.abs(z) > a, 0.5 * a**2, 0.0)
        return np.sum(base + corr, axis=-1)
    if k is Kind.TANH:
        logcosh = np.abs(z) + np.log1p(np.exp(-2 * np.abs(z))) - np.log(2.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = 0.5 * np.log1p(-x**2) + logcosh + x * (np.arctanh(x) - z)
        return np.sum(val, axis=-1)
    xs = np.maximum(x, 0.0)
    return (np.sum(special.xlogy(xs, xs) - xs * z, axis=-1)
            + special.logsumexp(z, axis=-1))


def bregman_eval(loss, x, z):
    """Penalty value per vector (last axis reduced); ``+inf`` off the domain."""
    loss = _loss(loss)
    x, z = _pair(x, z)
    spec = loss.spec
    ok = in_domain(spec, x)
    xs = np.where(ok[..., None], x, 0.0) if spec.kind is not Kind.SOFTMAX else x
    if loss.mode is Mode.CLOSED_FORM:
        with np.errstate(divide="ignore", invalid="ignore"):
            val = _closed_form(spec, xs, z)
    else:
        with np.errstate(invalid="ignore"):
            val = (0.5 * np.sum(xs**2, axis=-1) + psi_eval(spec, xs) + star_eval(spec, z)
                   - np.sum(xs * z, axis=-1))
    return np.where(ok, val, np.inf)


def bregman_grad_z(loss, x, z):
    """``sigma(z) - x``; raises if ``x`` lies outside dom(Psi)."""
    loss = _loss(loss)
    x, z = _pair(x, z)
    if not np.all(in_domain(loss.spec, x)):
        raise ValueError("x lies outside the potential's domain; the loss is +inf there")
    return prox(loss.spec, z) - x


def energy_form(spec: ProxSpec, x, z):
    """``E_z(x) - E_z(sigma(z))`` with ``E_z(u) = 0.5 ||u - z||^2 + Psi(u)``."""
    x, z = _pair(x, z)
    return 0.5 * np.sum((x - z) ** 2, axis=-1) + psi_eval(spec, x) - moreau_env(spec, z)


def _potential_finite(spec, u):
    # Psi on the closure of its domain, used where sigma(z) may round onto
    # the boundary (saturated tanh)
    if spec.kind is Kind.TANH:
        return np.sum(_tanh_psi_finite(np.clip(u, -1, 1)), axis=-1)
    return psi_eval(spec, u)


def distance_form(spec: ProxSpec, x, z):
    """Bregman distance of ``F = 0.5||.||^2 + Psi`` between x and sigma(z),
    taken with the subgradient ``z`` of F at ``sigma(z)``."""
    x, z = _pair(x, z)
    s = prox(spec, z)
    F = lambda u: 0.5 * np.sum(u**2, axis=-1)  # noqa: E731
    return (F(x) + psi_eval(spec, x) - F(s) - _potential_finite(spec, s)
            - np.sum(z * (x - s), axis=-1))


def split_form(spec: ProxSpec, x, z):
    """``0.5 ||x - sigma(z)||^2 + D_Psi(x, sigma(z))`` with subgradient
    ``z - sigma(z)`` of Psi at sigma(z)."""
    x, z = _pair(x, z)
    s = prox(spec, z)
    d_psi = psi_eval(spec, x) - _potential_finite(spec, s) - np.sum((z - s) * (x - s), axis=-1)
    return 0.5 * np.sum((x - s) ** 2, axis=-1) + d_psi


def lower_bound(spec: ProxSpec, x, z):
    """``0.5 ||x - sigma(z)||^2``, a lower bound of the penalty."""
    x, z = _pair(x, z)
    return 0.5 * np.sum((x - prox(spec, z)) ** 2, axis=-1)
