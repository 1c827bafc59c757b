"""Parameterized building blocks for the fusion networks.

Parameters live flat in a WeightStore under slash-separated names; a spec
lists every (name, shape) a network declares, so stores can be validated
before binding. During training parameters are bound as tape Nodes, during
inference as plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .fileio import WeightStore
from .tape import Node

PRELU_INIT = 0.25


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    kind: str  # "conv_weight" | "bias" | "slope"
    init_scale: float = 1.0


def conv_specs(name: str, c_in: int, c_out: int, k: int = 3,
               init_scale: float = 1.0) -> list[ParamSpec]:
    return [ParamSpec(f"{name}/weight", (c_out, c_in, k, k), "conv_weight", init_scale),
            ParamSpec(f"{name}/bias", (c_out,), "bias")]


def prelu_spec(name: str, channels: int) -> list[ParamSpec]:
    return [ParamSpec(f"{name}/slope", (channels,), "slope")]


def init_params(specs: list[ParamSpec], rng: np.random.Generator,
                dtype=np.float64) -> WeightStore:
    """He-normal conv weights, zero biases, 0.25 activation slopes."""
    store = WeightStore()
    for spec in specs:
        if spec.kind == "conv_weight":
            c_out, c_in, kh, kw = spec.shape
            std = np.sqrt(2.0 / (c_in * kh * kw)) * spec.init_scale
            arr = rng.normal(0.0, std, size=spec.shape)
        elif spec.kind == "bias":
            arr = np.zeros(spec.shape)
        elif spec.kind == "slope":
            arr = np.full(spec.shape, PRELU_INIT)
        else:
            raise ValueError(f"unknown param kind {spec.kind}")
        store[spec.name] = arr.astype(dtype)
    return store


def validate_store(store: WeightStore, specs: list[ParamSpec], prefix: str = "") -> None:
    for spec in specs:
        if spec.name not in store:
            raise KeyError(f"missing weight {spec.name!r}{prefix}")
        got = store[spec.name].shape
        if tuple(got) != tuple(spec.shape):
            raise ValueError(
                f"weight {spec.name!r} has shape {got}, declared {tuple(spec.shape)}")


def bind(store: WeightStore, specs: list[ParamSpec], trainable: bool = False) -> dict:
    """Extract declared parameters from a store, optionally as tape Nodes."""
    validate_store(store, specs)
    out = {}
    for spec in specs:
        arr = store[spec.name]
        out[spec.name] = Node(arr) if trainable else arr
    return out


def conv(params: dict, name: str, x, stride: int = 1):
    return ops.conv2d(x, params[f"{name}/weight"], params[f"{name}/bias"], stride)


def conv_prelu(params: dict, name: str, x, stride: int = 1):
    return ops.prelu(conv(params, name, x, stride), params[f"{name}/slope"])
