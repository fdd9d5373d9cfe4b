"""Feed-forward networks built from affine maps and proximal activations.

Samples are stored as rows. A layer maps ``x`` (shape ``(s, m_in)`` or
``(m_in,)``) to ``x @ W + b`` with ``W`` of shape ``(m_in, m_out)``, i.e. the
column-vector map ``W^T x + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .prox import Kind, ProxSpec, prox

__all__ = [
    "Layer",
    "Network",
    "affine",
    "forward",
    "preactivations",
    "init_glorot",
    "init_aux",
    "linear_activation_rate",
    "sparsity_rate",
    "ZERO_TOL",
]

ZERO_TOL = 1e-12


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    act: ProxSpec

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"bad layer shapes W {self.W.shape}, b {self.b.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer parameters must be finite")

    @property
    def shape(self):
        return self.W.shape

    def copy(self) -> "Layer":
        return Layer(self.W.copy(), self.b.copy(), self.act)


@dataclass
class Network:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise ValueError(f"layer widths do not chain: {a.W.shape} -> {b.W.shape}")

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, l):
        return self.layers[l]

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].W.shape[0]] + [la.W.shape[1] for la in self.layers]

    @property
    def acts(self) -> list[ProxSpec]:
        return [la.act for la in self.layers]

    def copy(self) -> "Network":
        return Network([la.copy() for la in self.layers])

    def params(self) -> list[np.ndarray]:
        out = []
        for la in self.layers:
            out += [la.W, la.b]
        return out

    def same_shape(self, other: "Network") -> bool:
        return len(self) == len(other) and all(
            a.W.shape == b.W.shape for a, b in zip(self.layers, other.layers)
        )


def affine(layer: Layer, x) -> np.ndarray:
    """``W^T x + b`` for one sample or a row batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.W.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match layer input {layer.W.shape[0]}")
    return x @ layer.W + layer.b


def preactivations(net: Network, x0):
    """Forward pass returning ``(zs, xs)`` with ``xs[l] = sigma_l(zs[l])``."""
    zs, xs = [], []
    x = np.asarray(x0, dtype=float)
    for la in net.layers:
        z = affine(la, x)
        x = prox(la.act, z)
        zs.append(z)
        xs.append(x)
    return zs, xs


def forward(net: Network, x0) -> list[np.ndarray]:
    """Activations ``[x_1, ..., x_L]``; the last entry is the prediction."""
    return preactivations(net, x0)[1]


def init_glorot(widths: Sequence[int], acts: Sequence[ProxSpec], seed) -> Network:
    """Glorot-uniform weights on ``+-sqrt(6 / (m_in + m_out))``, zero biases."""
    if len(acts) != len(widths) - 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for m_in, m_out, act in zip(widths[:-1], widths[1:], acts):
        bound = np.sqrt(6.0 / (m_in + m_out))
        layers.append(Layer(rng.uniform(-bound, bound, size=(m_in, m_out)), np.zeros(m_out), act))
    return Network(layers)


def init_aux(net: Network, x0) -> list[np.ndarray]:
    """Auxiliary variables ``[x_1, ..., x_{L-1}]`` set to the forward pass."""
    return [x.copy() for x in forward(net, x0)[:-1]]


def linear_activation_rate(net: Network, x0) -> list[float | None]:
    """Per hidden layer, the fraction of (unit, sample) pairs whose
    pre-activation is nonnegative; ``None`` for non-ReLU layers."""
    zs, _ = preactivations(net, x0)
    rates = []
    for la, z in zip(net.layers[:-1], zs[:-1]):
        rates.append(float(np.mean(z >= 0)) if la.act.kind is Kind.RELU else None)
    return rates


def sparsity_rate(codes) -> float:
    """Fraction of entries with magnitude at most ``ZERO_TOL``."""
    codes = np.asarray(codes, dtype=float)
    return float(np.mean(np.abs(codes) <= ZERO_TOL))
