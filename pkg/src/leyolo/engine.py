"""Bind a weight store to a spec and run inference layer by layer."""
from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .archspec import INPUT_ID, ArchitectureSpec, release_schedule, weight_shapes
from .blocks import conv_bn_silu, inverted_bottleneck
from .errors import BindError, ConfigError, PreconditionError
from .tensor_ops import ConvWeights, Tensor, as_tensor, concat_channels, conv2d, upsample_nearest2x

STRIDE_MULTIPLE = 32


def _conv_weights(store: Mapping[str, np.ndarray], prefix: str) -> ConvWeights:
    if f"{prefix}.bias" in store:
        return ConvWeights(kernel=store[f"{prefix}.weight"], bias=store[f"{prefix}.bias"])
    return ConvWeights(
        kernel=store[f"{prefix}.weight"],
        bn_gamma=store[f"{prefix}.bn.gamma"],
        bn_beta=store[f"{prefix}.bn.beta"],
        bn_mean=store[f"{prefix}.bn.mean"],
        bn_var=store[f"{prefix}.bn.var"],
    )


@dataclass(frozen=True)
class Model:
    """A spec with every parameter resolved. Read-only; safe to share across threads."""

    spec: ArchitectureSpec
    weights: Mapping[str, np.ndarray]
    resolved: Mapping[str, object]


def bind(spec: ArchitectureSpec, store: Mapping[str, np.ndarray]) -> Model:
    """Resolve every parameter of ``spec`` from ``store``.

    Raises :class:`BindError` listing all missing tensors and all shape
    mismatches at once. Extra tensors in the store are ignored.
    """
    expected = weight_shapes(spec)
    missing, mismatched = [], []
    for name, shape in expected.items():
        if name not in store:
            missing.append(name)
        elif tuple(np.shape(store[name])) != tuple(shape):
            mismatched.append((name, tuple(shape), tuple(np.shape(store[name]))))
    if missing or mismatched:
        raise BindError(missing, mismatched)

    weights = {name: np.asarray(store[name], dtype=np.float32) for name in expected}
    for arr in weights.values():
        arr.setflags(write=False)
    resolved: Dict[str, object] = {}
    for layer in spec.layers:
        cfg = layer.config
        if layer.kind == "conv_bn_silu":
            resolved[layer.id] = _conv_weights(weights, layer.id)
        elif layer.kind == "inverted_bottleneck":
            parts = layer.bottleneck().param_shapes()
            resolved[layer.id] = MappingProxyType({p: _conv_weights(weights, f"{layer.id}.{p}") for p in parts})
        elif layer.kind == "head_branch":
            prefix = cfg.get("shared") or layer.id
            tower = tuple(
                (_conv_weights(weights, f"{prefix}.tower.{i}.dw"), _conv_weights(weights, f"{prefix}.tower.{i}.pw"))
                for i in range(cfg["tower_depth"])
            )
            resolved[layer.id] = (tower, _conv_weights(weights, f"{prefix}.box"), _conv_weights(weights, f"{prefix}.cls"))
    return Model(spec, MappingProxyType(weights), MappingProxyType(resolved))


def _head_branch(x, params, name, trace):
    tower, box_w, cls_w = params
    h = x
    for i, (dw, pw) in enumerate(tower):
        h = conv_bn_silu(h, dw, groups=h.shape[1], name=f"{name}.tower.{i}.dw", trace=trace)
        h = conv_bn_silu(h, pw, name=f"{name}.tower.{i}.pw", trace=trace)
    box = conv2d(h, box_w, name=f"{name}.box")
    cls = conv2d(h, cls_w, name=f"{name}.cls")
    if trace is not None:
        trace.extend([f"{name}.box", f"{name}.cls"])
    return concat_channels(box, cls, name=name)


def forward(
    model: Model,
    x: Tensor,
    trace: Optional[List[str]] = None,
    shapes: Optional[Dict[str, Tuple[int, ...]]] = None,
) -> Tuple[Tensor, ...]:
    """Raw head outputs at strides 8, 16, 32, each ``(B, 4 + num_classes, H/s, W/s)``.

    ``x`` must be ``(B, 3, H, W)`` with H and W multiples of 32. ``trace``
    collects the name of every convolution executed, ``shapes`` the output
    shape of every layer. Intermediates are dropped after their last use.
    """
    spec = model.spec
    x = as_tensor(x, INPUT_ID)
    if x.shape[1] != spec.input_channels:
        raise PreconditionError(f"input must have {spec.input_channels} channels, got {x.shape[1]}")
    if x.shape[2] % STRIDE_MULTIPLE or x.shape[3] % STRIDE_MULTIPLE:
        raise PreconditionError(
            f"input size {x.shape[2]}x{x.shape[3]} is not a multiple of {STRIDE_MULTIPLE}; letterbox it first"
        )

    schedule = release_schedule(spec)
    live: Dict[str, Tensor] = {INPUT_ID: x}
    for layer in spec.layers:
        args = [live[src] for src in layer.inputs]
        params = model.resolved.get(layer.id)
        cfg = layer.config
        if layer.kind == "conv_bn_silu":
            y = conv_bn_silu(args[0], params, stride=cfg["stride"], groups=cfg.get("groups", 1),
                             name=layer.id, trace=trace)
        elif layer.kind == "inverted_bottleneck":
            y = inverted_bottleneck(args[0], layer.bottleneck(), params, name=layer.id, trace=trace)
        elif layer.kind == "upsample2x":
            y = upsample_nearest2x(args[0])
        elif layer.kind == "concat":
            y = concat_channels(args[0], args[1], name=layer.id)
        elif layer.kind == "head_branch":
            y = _head_branch(args[0], params, layer.id, trace)
        else:
            raise ConfigError(f"unknown layer kind {layer.kind!r} at {layer.id}")
        live[layer.id] = y
        if shapes is not None:
            shapes[layer.id] = tuple(y.shape)
        for gone in schedule[layer.id]:
            live.pop(gone, None)
    return tuple(live[o] for o in spec.outputs)
