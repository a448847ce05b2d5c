"""Composite layers: conv-BN-SiLU and the three-case inverted bottleneck.

The bottleneck computes::

    d != C                 : project(silu(dw(silu(expand(x)))))
    d == C, expand present : project(silu(dw(silu(expand(x)))))
    d == C, expand absent  : project(silu(dw(x)))

where ``C`` is the block's input width and ``d`` its expanded width. The
projection carries batch-norm but no activation. Stride is applied by the
depthwise convolution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_ops import ConvWeights, Tensor, add_residual, batchnorm_infer, conv2d, silu

MAX_EXPANSION_RATIO = 6


@dataclass(frozen=True)
class BottleneckConfig:
    in_ch: int
    expand_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    use_first_pw: bool = True
    residual: bool = False

    def violations(self) -> List[Tuple[str, str]]:
        """Broken invariants as ``(rule, message)`` pairs; empty when valid."""
        problems = []
        if min(self.in_ch, self.expand_ch, self.out_ch) < 1:
            problems.append(("channels", "channel counts must be >= 1"))
        if self.kernel < 1 or self.kernel % 2 == 0:
            problems.append(("kernel", f"kernel must be a positive odd number, got {self.kernel}"))
        if self.stride not in (1, 2):
            problems.append(("stride", f"stride must be 1 or 2, got {self.stride}"))
        if self.expand_ch < self.in_ch:
            problems.append(("expansion", f"expanded width {self.expand_ch} is below input width {self.in_ch}"))
        limit = MAX_EXPANSION_RATIO * max(self.in_ch, self.out_ch)
        if self.expand_ch > limit:
            problems.append((
                "ratio-6",
                f"expanded width {self.expand_ch} exceeds 6 x max(in={self.in_ch}, out={self.out_ch}) = {limit}",
            ))
        if not self.use_first_pw and self.expand_ch != self.in_ch:
            problems.append((
                "pw-free",
                f"pointwise-free block needs expanded width == input width ({self.expand_ch} != {self.in_ch})",
            ))
        if self.residual and (self.stride != 1 or self.in_ch != self.out_ch):
            problems.append(("residual", "residual requires stride 1 and in_ch == out_ch"))
        return problems

    def check(self) -> None:
        problems = self.violations()
        if problems:
            raise ConfigError("; ".join(f"{rule}: {msg}" for rule, msg in problems))

    @property
    def case(self) -> str:
        """Which branch of the block formula applies: 'a', 'b' or 'c'."""
        if self.expand_ch != self.in_ch:
            return "a"
        return "b" if self.use_first_pw else "c"

    def param_shapes(self) -> dict:
        """Kernel shape for each convolution part, in execution order."""
        shapes = {}
        if self.use_first_pw:
            shapes["expand"] = (self.expand_ch, self.in_ch, 1, 1)
        shapes["dw"] = (self.expand_ch, 1, self.kernel, self.kernel)
        shapes["project"] = (self.out_ch, self.expand_ch, 1, 1)
        return shapes


def conv_bn_silu(
    x: Tensor,
    weights: ConvWeights,
    stride: int = 1,
    groups: int = 1,
    activation: bool = True,
    name: Optional[str] = None,
    trace: Optional[list] = None,
) -> Tensor:
    """conv2d -> batchnorm_infer -> silu (the activation can be switched off)."""
    y = conv2d(x, weights, stride=stride, groups=groups, name=name)
    if trace is not None:
        trace.append(name or "conv")
    if weights.has_bn:
        y = batchnorm_infer(y, weights)
    return silu(y) if activation else y


def inverted_bottleneck(
    x: Tensor,
    cfg: BottleneckConfig,
    weights: Mapping[str, ConvWeights],
    name: Optional[str] = None,
    trace: Optional[list] = None,
) -> Tensor:
    """Run one inverted bottleneck. ``weights`` maps part name to ConvWeights."""
    cfg.check()
    if x.shape[1] != cfg.in_ch:
        raise ShapeError(f"block expects {cfg.in_ch} input channels, got {x.shape[1]}", layer=name)
    prefix = f"{name}." if name else ""
    for part, shape in cfg.param_shapes().items():
        w = weights.get(part)
        if w is None:
            raise ConfigError(f"{prefix}{part}: missing weights")
        if w.kernel.shape != shape:
            raise ShapeError(f"{part} kernel is {w.kernel.shape}, expected {shape}", layer=name)

    h = x
    if cfg.use_first_pw:
        h = conv_bn_silu(h, weights["expand"], name=prefix + "expand", trace=trace)
    h = conv_bn_silu(h, weights["dw"], stride=cfg.stride, groups=cfg.expand_ch, name=prefix + "dw", trace=trace)
    h = conv_bn_silu(h, weights["project"], activation=False, name=prefix + "project", trace=trace)
    if cfg.residual:
        h = add_residual(h, np.asarray(x, dtype=np.float32), name=name)
    return h
