"""Layers, initialisation and optimizers built on :mod:`mmeda.autodiff`."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ShapeError

__all__ = [
    "make_rng",
    "Module",
    "Linear",
    "Conv2d",
    "init_linear",
    "forward_linear",
    "glorot_uniform",
    "OptimizerState",
    "sgd_step",
    "adam_step",
    "Optimizer",
]


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator seeded with ``seed``; the stream is platform independent."""
    return np.random.Generator(np.random.PCG64(seed))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class Module:
    """Anything holding parameter nodes, directly or via child modules.

    Parameter names follow attribute insertion order, so they are stable
    between constructions with the same configuration.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Node]]:
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(val, Node):
                if val.requires_grad:
                    yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Node) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Node]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        ad.zero_grad(self.parameters())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        if in_features < 1 or out_features < 1:
            raise ValueError(
                f"linear dimensions must be positive, got in={in_features}, out={out_features}"
            )
        self.weight = ad.parameter(
            glorot_uniform(rng, in_features, out_features, (out_features, in_features))
        )
        self.bias = ad.parameter(np.zeros(out_features))

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Node) -> Node:
        return forward_linear(self, x)


def init_linear(in_features: int, out_features: int, rng: np.random.Generator) -> Linear:
    """Glorot-uniform weight ``[out×in]``, zero bias."""
    return Linear(in_features, out_features, rng)


def forward_linear(layer: Linear, x: Node) -> Node:
    if x.value.ndim != 2 or x.shape[1] != layer.in_features:
        raise ShapeError(
            f"linear layer expects N×{layer.in_features} input, got {x.shape}"
        )
    return ad.add(ad.matmul(x, ad.transpose2d(layer.weight)), layer.bias)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ):
        if min(in_channels, out_channels, kernel_size) < 1:
            raise ValueError("conv extents must be positive")
        if stride < 1:
            raise ValueError(f"stride must be positive, got {stride}")
        k = kernel_size
        self.weight = ad.parameter(
            glorot_uniform(
                rng, in_channels * k * k, out_channels * k * k, (out_channels, in_channels, k, k)
            )
        )
        self.bias = ad.parameter(np.zeros(out_channels))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Node) -> Node:
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)


@dataclass
class OptimizerState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def _check_pairs(params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {i}: shape {p.shape} but gradient {g.shape}")


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState):
    """In-place ``p -= lr * g``."""
    if state.kind != "sgd":
        raise ValueError(f"sgd_step called with {state.kind!r} state")
    _check_pairs(params, grads)
    for p, g in zip(params, grads):
        p -= state.lr * g
    state.step += 1


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState):
    """In-place Adam update with bias-corrected moments."""
    if state.kind != "adam":
        raise ValueError(f"adam_step called with {state.kind!r} state")
    _check_pairs(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for i, (p, m) in enumerate(zip(params, state.m)):
        if m.shape != p.shape:
            raise ShapeError(f"moment {i} has shape {m.shape}, parameter {p.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Optimizer:
    """Binds parameter nodes to an :class:`OptimizerState`."""

    def __init__(self, params: Sequence[Node], kind: str = "adam", lr: float = 1e-4, **kw):
        self.params = list(params)
        self.state = OptimizerState(kind, lr, **kw)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)

    def step(self) -> None:
        values = [p.value for p in self.params]
        grads = [p.grad for p in self.params]
        if self.state.kind == "sgd":
            sgd_step(values, grads, self.state)
        else:
            adam_step(values, grads, self.state)
