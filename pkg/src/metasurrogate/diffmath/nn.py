"""Dense multilayer perceptrons built from the differentiable primitives."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from metasurrogate.diffmath import tensor as T
from metasurrogate.errors import DimensionError

ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh}


def init_mlp(prefix: str, layer_sizes: Sequence[int], rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He/Glorot-style initial weights for ``mlp_apply``.

    ``layer_sizes`` lists every width including input and output,
    e.g. ``[3, 128, 128, 2]``.
    """
    if len(layer_sizes) < 2 or any(int(s) <= 0 for s in layer_sizes):
        raise DimensionError(f"{prefix}: layer sizes must be >= 2 positive ints, got {list(layer_sizes)}")
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        params[f"{prefix}.w{i}"] = rng.normal(0.0, scale, size=(fan_in, fan_out))
        params[f"{prefix}.b{i}"] = np.zeros(fan_out)
    return params


def mlp_apply(
    params: Mapping[str, object],
    x,
    layer_sizes: Sequence[int],
    activation: str = "relu",
    prefix: str = "mlp",
):
    """Forward pass ``x @ W0 + b0 -> act -> ... -> x @ Wk + bk``.

    ``x`` is a batch of rows (or a single row vector). The final layer is linear.
    """
    act = ACTIVATIONS[activation]
    single = T._val(x).ndim == 1
    h = T.reshape(x, (1, -1)) if single else x
    n_layers = len(layer_sizes) - 1
    for i in range(n_layers):
        name = f"{prefix}.w{i}"
        if name not in params or f"{prefix}.b{i}" not in params:
            raise DimensionError(f"layer {prefix}[{i}]: missing weight or bias")
        w, b = params[name], params[f"{prefix}.b{i}"]
        expected = (layer_sizes[i], layer_sizes[i + 1])
        if tuple(T._val(w).shape) != expected:
            raise DimensionError(f"layer {prefix}[{i}]: weight shape {T._val(w).shape}, expected {expected}")
        width = T._val(h).shape[-1]
        if width != layer_sizes[i]:
            raise DimensionError(f"layer {prefix}[{i}]: input width {width}, expected {layer_sizes[i]}")
        h = T.add(T.matmul(h, w), b)
        if i < n_layers - 1:
            h = act(h)
    return T.reshape(h, (-1,)) if single else h
