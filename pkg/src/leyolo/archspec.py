"""Declarative architecture graphs for the LeYOLO family.

A spec is a topologically ordered list of :class:`LayerSpec` nodes. Specs are
always produced by :func:`build_spec` from three knobs: a
:class:`VariantConfig` (width/depth scaling), an :class:`AblationConfig`
(kernel sizes, downsampling kernels, optional pointwise layers, neck
expansion) and the class count. Transforms such as :func:`apply_variant`
rebuild from those knobs rather than editing layers in place.

Layer kinds
-----------
``conv_bn_silu``
    config ``in_ch, out_ch, kernel, stride, groups``.
``inverted_bottleneck``
    config mirrors :class:`~leyolo.blocks.BottleneckConfig`.
``upsample2x``, ``concat``
    no parameters; ``concat`` takes exactly two inputs.
``head_branch``
    shared depthwise-separable tower followed by the box (4 channels) and
    class (``num_classes`` channels) 1x1 predictors; output is the two
    predictions stacked as ``4 + num_classes`` channels. Branches that name
    the same ``shared`` group reuse one set of weights.

The first layer reads the pseudo-id ``"input"``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .blocks import BottleneckConfig
from .errors import ConfigError

INPUT_ID = "input"
KINDS = ("conv_bn_silu", "inverted_bottleneck", "upsample2x", "concat", "head_branch")
SPEC_FORMAT = "leyolo-archspec"
SPEC_VERSION = 1
OUTPUT_LEVELS = (3, 4, 5)
HEAD_TOWER_DEPTH = 2
HEAD_MAX_CLASS_WIDTH = 100


@dataclass(frozen=True)
class VariantConfig:
    name: str
    channel_ratio: float
    layer_ratio: float
    train_size: int

    def channels(self, c: int) -> int:
        """Scale a channel count, rounding to the nearest multiple of 8 (minimum 8)."""
        if self.channel_ratio == 1.0:
            return c
        return max(8, int(c * self.channel_ratio / 8 + 0.5) * 8)

    def depth(self, n: int) -> int:
        """Scale a stride-1 repetition count, rounding up."""
        if self.layer_ratio == 1.0:
            return n
        return math.ceil(n * self.layer_ratio - 1e-9)


VARIANTS: Dict[str, VariantConfig] = {
    "nano": VariantConfig("nano", 1.0, 1.0, 640),
    "small": VariantConfig("small", 1.33, 1.0, 640),
    "medium": VariantConfig("medium", 1.33, 1.33, 640),
    "large": VariantConfig("large", 1.33, 1.33, 768),
}


def get_variant(v) -> VariantConfig:
    if isinstance(v, VariantConfig):
        return v
    try:
        return VARIANTS[v]
    except KeyError:
        raise ConfigError(f"unknown variant {v!r}; choose from {sorted(VARIANTS)}") from None


KERNEL_MODES = ("after_p4", "3x3", "5x5")


@dataclass(frozen=True)
class AblationConfig:
    """Architecture knobs explored by the ablation study.

    The defaults describe the final nano design: 5x5 depthwise kernels from
    the P3->P4 downsampling onward (3x3 before it), 3x3 strided convs in
    the neck, no first pointwise conv where the block width allows it, and a
    neck expansion ratio of 2.
    """

    kernels: str = "after_p4"
    downsample_3x3: bool = True
    no_pw: bool = True
    neck_expansion: int = 2

    def check(self) -> None:
        if self.kernels not in KERNEL_MODES:
            raise ConfigError(f"kernels must be one of {KERNEL_MODES}, got {self.kernels!r}")
        if self.neck_expansion not in (2, 3):
            raise ConfigError(f"neck_expansion must be 2 or 3, got {self.neck_expansion}")

    def bottleneck_kernel(self, after_p4: bool) -> int:
        if self.kernels == "3x3":
            return 3
        if self.kernels == "5x5":
            return 5
        return 5 if after_p4 else 3

    @property
    def downsample_kernel(self) -> int:
        return 3 if self.downsample_3x3 else 5


# The ablation study is a chain: starting from 3x3/5x5 kernel trials with
# 5x5 downsampling, full pointwise layers and expansion 3, each step adds one
# improvement until the final design is reached.
ABLATION_STEPS: Dict[str, AblationConfig] = {
    "base": AblationConfig(),
    "kernels_3x3_only": AblationConfig("3x3", downsample_3x3=False, no_pw=False, neck_expansion=3),
    "kernels_5x5_only": AblationConfig("5x5", downsample_3x3=False, no_pw=False, neck_expansion=3),
    "k5_after_p4_only": AblationConfig("after_p4", downsample_3x3=False, no_pw=False, neck_expansion=3),
    "downsample_3x3_only": AblationConfig("after_p4", downsample_3x3=True, no_pw=False, neck_expansion=3),
    "no_pw_backbone_and_neck": AblationConfig("after_p4", downsample_3x3=True, no_pw=True, neck_expansion=3),
    "neck_expansion_2": AblationConfig(),
}


def parse_ablation(tokens: Sequence[str], start: Optional[AblationConfig] = None) -> AblationConfig:
    """Fold ``--ablate`` tokens into a config.

    A token is either a step name from :data:`ABLATION_STEPS` (replaces the
    whole config) or ``key=value`` overriding one field, e.g.
    ``neck_expansion=3`` or ``no_pw=false``.
    """
    cfg = start or AblationConfig()
    for tok in tokens:
        if "=" not in tok:
            if tok not in ABLATION_STEPS:
                raise ConfigError(f"unknown ablation {tok!r}; choose from {list(ABLATION_STEPS)} or key=value")
            cfg = ABLATION_STEPS[tok]
            continue
        key, value = (s.strip() for s in tok.split("=", 1))
        if key == "kernels":
            cfg = replace(cfg, kernels=value)
        elif key in ("downsample_3x3", "no_pw"):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{key} expects a boolean, got {value!r}")
            cfg = replace(cfg, **{key: value.lower() in ("true", "1", "yes")})
        elif key == "neck_expansion":
            try:
                cfg = replace(cfg, neck_expansion=int(value))
            except ValueError:
                raise ConfigError(f"neck_expansion expects an integer, got {value!r}") from None
        else:
            raise ConfigError(f"unknown ablation field {key!r}")
    cfg.check()
    return cfg


@dataclass(frozen=True, eq=False)
class LayerSpec:
    id: str
    kind: str
    inputs: Tuple[str, ...]
    config: Mapping = field(default_factory=dict)
    pyramid_level: int = 0  # resolution of the layer's output: input_size / 2**level

    @property
    def section(self) -> str:
        return self.id.split(".", 1)[0]

    def bottleneck(self) -> BottleneckConfig:
        if self.kind != "inverted_bottleneck":
            raise ConfigError(f"{self.id} is not a bottleneck")
        return BottleneckConfig(**self.config)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "inputs": list(self.inputs),
            "config": dict(self.config),
            "pyramid_level": f"P{self.pyramid_level}",
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerSpec":
        level = d.get("pyramid_level", "P0")
        if isinstance(level, str):
            level = int(level.lstrip("Pp"))
        return cls(d["id"], d["kind"], tuple(d["inputs"]), dict(d.get("config", {})), int(level))


@dataclass(frozen=True, eq=False)
class ArchitectureSpec:
    layers: Tuple[LayerSpec, ...]
    outputs: Tuple[str, ...]
    num_classes: int
    input_channels: int = 3
    variant: VariantConfig = VARIANTS["nano"]
    ablation: AblationConfig = AblationConfig()

    def __post_init__(self):
        object.__setattr__(self, "_index", {layer.id: i for i, layer in enumerate(self.layers)})

    def layer(self, layer_id: str) -> LayerSpec:
        return self.layers[self._index[layer_id]]

    def __contains__(self, layer_id: str) -> bool:
        return layer_id in self._index

    def section(self, name: str) -> List[LayerSpec]:
        return [layer for layer in self.layers if layer.section == name]

    def to_dict(self) -> dict:
        return {
            "format": SPEC_FORMAT,
            "version": SPEC_VERSION,
            "variant": asdict(self.variant),
            "ablation": asdict(self.ablation),
            "num_classes": self.num_classes,
            "input_channels": self.input_channels,
            "outputs": list(self.outputs),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ArchitectureSpec":
        if d.get("format") != SPEC_FORMAT:
            raise ConfigError(f"not an architecture spec (format={d.get('format')!r})")
        if d.get("version") != SPEC_VERSION:
            raise ConfigError(f"unsupported spec version {d.get('version')!r}")
        return cls(
            layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
            outputs=tuple(d["outputs"]),
            num_classes=int(d["num_classes"]),
            input_channels=int(d.get("input_channels", 3)),
            variant=VariantConfig(**d["variant"]),
            ablation=AblationConfig(**d["ablation"]),
        )


def dump_spec(spec: ArchitectureSpec, path=None) -> str:
    text = json.dumps(spec.to_dict(), indent=2)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def load_spec(path) -> ArchitectureSpec:
    with open(path, encoding="utf-8") as fh:
        return ArchitectureSpec.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------


@dataclass
class PartialSpec:
    """Layers built so far, the named pyramid outputs and every layer's width."""

    layers: List[LayerSpec]
    outputs: Dict[int, str]
    channels: Dict[str, int]

    def add(self, layer_id: str, kind: str, inputs, config: Optional[dict] = None, level: int = 0,
            out_ch: Optional[int] = None) -> str:
        inputs = tuple(inputs)
        if out_ch is None:
            if kind == "concat":
                out_ch = sum(self.channels[i] for i in inputs)
            elif kind == "upsample2x":
                out_ch = self.channels[inputs[0]]
            else:
                out_ch = config["out_ch"]
        self.layers.append(LayerSpec(layer_id, kind, inputs, dict(config or {}), level))
        self.channels[layer_id] = out_ch
        return layer_id


def _conv(part: PartialSpec, layer_id, src, out_ch, kernel, stride, level, groups=1):
    cfg = dict(in_ch=part.channels[src], out_ch=out_ch, kernel=kernel, stride=stride, groups=groups)
    return part.add(layer_id, "conv_bn_silu", [src], cfg, level)


def _bneck(part: PartialSpec, layer_id, src, expand_ch, out_ch, kernel, stride, level, use_first_pw=True):
    in_ch = part.channels[src]
    cfg = BottleneckConfig(
        in_ch=in_ch, expand_ch=expand_ch, out_ch=out_ch, kernel=kernel, stride=stride,
        use_first_pw=use_first_pw, residual=(stride == 1 and in_ch == out_ch),
    )
    return part.add(layer_id, "inverted_bottleneck", [src], asdict(cfg), level)


def build_backbone(variant="nano", ablation: Optional[AblationConfig] = None) -> PartialSpec:
    """Backbone with taps at P3, P4 and P5 (32/64/96 channels for nano).

    Layout (nano): 3x3/2 stem to 16, 1x1 16->16, pointwise-free 3x3/2
    bottleneck, then bottleneck stages 16->32 (P3, expansion 96),
    32->64 (P4, expansion 192, 4 repeats) and 64->96 (P5, expansion 576,
    4 repeats). Stride-1 repeats scale with the variant's layer ratio.
    """
    v = get_variant(variant)
    ab = ablation or AblationConfig()
    ab.check()
    c = v.channels
    part = PartialSpec([], {}, {INPUT_ID: 3})
    n = iter(range(1000))

    def nid():
        return f"backbone.{next(n)}"

    x = _conv(part, nid(), INPUT_ID, c(16), 3, 2, level=1)
    x = _conv(part, nid(), x, c(16), 1, 1, level=1)
    x = _bneck(part, nid(), x, c(16), c(16), ab.bottleneck_kernel(False), 2, level=2, use_first_pw=not ab.no_pw)
    x = _bneck(part, nid(), x, c(96), c(32), ab.bottleneck_kernel(False), 2, level=3)
    for _ in range(v.depth(1)):
        x = _bneck(part, nid(), x, c(96), c(32), ab.bottleneck_kernel(False), 1, level=3)
    part.outputs[3] = x
    x = _bneck(part, nid(), x, c(96), c(64), ab.bottleneck_kernel(True), 2, level=4)
    for _ in range(v.depth(4)):
        x = _bneck(part, nid(), x, c(192), c(64), ab.bottleneck_kernel(True), 1, level=4)
    part.outputs[4] = x
    x = _bneck(part, nid(), x, c(576), c(96), ab.bottleneck_kernel(True), 2, level=5)
    for _ in range(v.depth(4)):
        x = _bneck(part, nid(), x, c(576), c(96), ab.bottleneck_kernel(True), 1, level=5)
    part.outputs[5] = x
    return part


def build_leneck(backbone: PartialSpec, variant="nano", ablation: Optional[AblationConfig] = None) -> PartialSpec:
    """Append the P4-centred neck; returns P3'/P4'/P5' as ``outputs``.

    Top-down: reduce P5 to the P4 width, upsample, concat with the P4 tap,
    run ``l`` bottlenecks; reduce to the P3 width, upsample, concat with the
    P3 tap, run ``l`` bottlenecks -> P3'. Bottom-up: 3x3/2 conv, concat with
    the top-down P4 result, ``l`` bottlenecks -> P4'; 3x3/2 conv, concat
    with the P5 tap, ``l`` bottlenecks -> P5'.

    Every stage's first bottleneck consumes the concat directly (no first
    pointwise conv) when the concat width equals its expanded width.
    """
    v = get_variant(variant)
    ab = ablation or AblationConfig()
    ab.check()
    part = PartialSpec(list(backbone.layers), {}, dict(backbone.channels))
    p3, p4, p5 = (backbone.outputs[k] for k in OUTPUT_LEVELS)
    c3, c4, c5 = (part.channels[t] for t in (p3, p4, p5))
    reps = v.depth(3)
    k = ab.bottleneck_kernel(True)
    r = ab.neck_expansion

    def stage(name, src, width, level):
        cat_w = part.channels[src]
        if ab.no_pw:
            x = _bneck(part, f"{name}.0", src, cat_w, width, k, 1, level, use_first_pw=False)
        else:
            x = _bneck(part, f"{name}.0", src, max(r * width, cat_w), width, k, 1, level)
        for i in range(1, reps):
            x = _bneck(part, f"{name}.{i}", x, r * width, width, k, 1, level)
        return x

    x = _conv(part, "neck.reduce5", p5, c4, 1, 1, level=5)
    x = part.add("neck.up4", "upsample2x", [x], level=4)
    x = part.add("neck.cat4", "concat", [x, p4], level=4)
    td4 = stage("neck.td4", x, c4, 4)
    x = _conv(part, "neck.reduce4", td4, c3, 1, 1, level=4)
    x = part.add("neck.up3", "upsample2x", [x], level=3)
    x = part.add("neck.cat3", "concat", [x, p3], level=3)
    out3 = stage("neck.out3", x, c3, 3)
    x = _conv(part, "neck.down4", out3, c4, ab.downsample_kernel, 2, level=4)
    x = part.add("neck.cat4b", "concat", [x, td4], level=4)
    out4 = stage("neck.out4", x, c4, 4)
    x = _conv(part, "neck.down5", out4, c5, ab.downsample_kernel, 2, level=5)
    x = part.add("neck.cat5", "concat", [x, p5], level=5)
    out5 = stage("neck.out5", x, c5, 5)
    part.outputs = {3: out3, 4: out4, 5: out5}
    return part


def head_width(p3_channels: int, num_classes: int) -> int:
    return max(p3_channels, min(num_classes, HEAD_MAX_CLASS_WIDTH))


def build_head(neck: PartialSpec, num_classes: int, variant="nano",
               ablation: Optional[AblationConfig] = None) -> ArchitectureSpec:
    """Anchor-free decoupled head on P3'/P4'/P5'.

    Per level: depthwise 3x3 + pointwise conv-BN-SiLU stem lifting the level
    to a common width, then a ``head_branch`` whose tower and predictors are
    shared by all three levels.
    """
    if num_classes < 1:
        raise ConfigError("num_classes must be >= 1")
    part = PartialSpec(list(neck.layers), {}, dict(neck.channels))
    width = head_width(part.channels[neck.outputs[3]], num_classes)
    outputs = []
    for level in OUTPUT_LEVELS:
        src = neck.outputs[level]
        ch = part.channels[src]
        x = _conv(part, f"head.p{level}.dw", src, ch, 3, 1, level, groups=ch)
        x = _conv(part, f"head.p{level}.pw", x, width, 1, 1, level)
        cfg = dict(in_ch=width, num_classes=num_classes, tower_depth=HEAD_TOWER_DEPTH, kernel=3,
                   shared="head.shared")
        outputs.append(part.add(f"head.p{level}.out", "head_branch", [x], cfg, level, out_ch=4 + num_classes))
    return ArchitectureSpec(
        layers=tuple(part.layers),
        outputs=tuple(outputs),
        num_classes=num_classes,
        variant=get_variant(variant),
        ablation=ablation or AblationConfig(),
    )


def build_spec(variant="nano", ablation: Optional[AblationConfig] = None, num_classes: int = 80) -> ArchitectureSpec:
    """Full backbone + neck + head graph."""
    v = get_variant(variant)
    ab = ablation or AblationConfig()
    backbone = build_backbone(v, ab)
    neck = build_leneck(backbone, v, ab)
    return build_head(neck, num_classes, v, ab)


def apply_variant(spec: ArchitectureSpec, variant) -> ArchitectureSpec:
    """Scale a base (unscaled) spec to ``variant``.

    Always scale from the base: scaling an already scaled spec would
    compound ratios, so that is rejected.
    """
    v = get_variant(variant)
    if spec.variant.channel_ratio != 1.0 or spec.variant.layer_ratio != 1.0:
        raise ConfigError(f"apply_variant needs an unscaled base spec, got variant {spec.variant.name!r}")
    return build_spec(v, spec.ablation, spec.num_classes)


def apply_ablation(spec: ArchitectureSpec, ablation: AblationConfig) -> ArchitectureSpec:
    """Rebuild ``spec`` with different ablation knobs; invalid results raise ConfigError."""
    ablation.check()
    out = build_spec(spec.variant, ablation, spec.num_classes)
    problems = validate(out)
    if problems:
        raise ConfigError("ablation produces an invalid architecture: " + "; ".join(map(str, problems)))
    return out


# --------------------------------------------------------------------------
# shapes and validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    layer: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.layer}: [{self.rule}] {self.message}"


def layer_out_channels(layer: LayerSpec, in_channels: Sequence[int]) -> int:
    if layer.kind == "concat":
        return sum(in_channels)
    if layer.kind == "upsample2x":
        return in_channels[0]
    if layer.kind == "head_branch":
        return 4 + int(layer.config["num_classes"])
    return int(layer.config["out_ch"])


def layer_stride(layer: LayerSpec) -> int:
    if layer.kind in ("conv_bn_silu", "inverted_bottleneck"):
        return int(layer.config["stride"])
    return 1


def infer_shapes(spec: ArchitectureSpec, input_size) -> Dict[str, Tuple[int, int, int]]:
    """Static (C, H, W) of every layer output for a square or (H, W) input."""
    h, w = (input_size, input_size) if isinstance(input_size, int) else input_size
    shapes = {INPUT_ID: (spec.input_channels, int(h), int(w))}
    for layer in spec.layers:
        ins = [shapes[i] for i in layer.inputs]
        c = layer_out_channels(layer, [s[0] for s in ins])
        _, hh, ww = ins[0]
        if layer.kind == "upsample2x":
            hh, ww = 2 * hh, 2 * ww
        elif layer.kind in ("conv_bn_silu", "inverted_bottleneck"):
            k = int(layer.config["kernel"])
            s = int(layer.config["stride"])
            hh = (hh + 2 * (k // 2) - k) // s + 1
            ww = (ww + 2 * (k // 2) - k) // s + 1
        shapes[layer.id] = (c, hh, ww)
    del shapes[INPUT_ID]
    return shapes


def validate(spec: ArchitectureSpec) -> List[Violation]:
    """Every broken graph, channel or block invariant; empty when the spec is sound."""
    out: List[Violation] = []
    seen = {INPUT_ID: (spec.input_channels, 0)}  # id -> (channels, level)
    shared: Dict[str, tuple] = {}
    for layer in spec.layers:
        lid = layer.id
        if lid in seen:
            out.append(Violation(lid, "graph", "duplicate layer id"))
            continue
        if layer.kind not in KINDS:
            out.append(Violation(lid, "graph", f"unknown kind {layer.kind!r}"))
            continue
        missing = [i for i in layer.inputs if i not in seen]
        if missing:
            out.append(Violation(lid, "graph", f"inputs {missing} are not earlier layers"))
            continue
        want = 2 if layer.kind == "concat" else 1
        if len(layer.inputs) != want:
            out.append(Violation(lid, "graph", f"{layer.kind} takes {want} input(s), got {len(layer.inputs)}"))
            continue
        in_ch = [seen[i][0] for i in layer.inputs]
        in_lv = [seen[i][1] for i in layer.inputs]
        level = in_lv[0]
        if layer.kind == "concat" and in_lv[0] != in_lv[1]:
            out.append(Violation(lid, "graph", f"concat of mismatched resolutions P{in_lv[0]} and P{in_lv[1]}"))
        if layer.kind == "upsample2x":
            level -= 1
        elif layer.kind in ("conv_bn_silu", "inverted_bottleneck"):
            stride = int(layer.config.get("stride", 1))
            if stride not in (1, 2):
                out.append(Violation(lid, "stride", f"stride must be 1 or 2, got {stride}"))
            level += 1 if stride == 2 else 0
        if layer.pyramid_level != level:
            out.append(Violation(lid, "graph", f"declared P{layer.pyramid_level} but resolution is P{level}"))

        if layer.kind == "conv_bn_silu":
            cfg = layer.config
            if cfg["in_ch"] != in_ch[0]:
                out.append(Violation(lid, "channels", f"expects {cfg['in_ch']} input channels, gets {in_ch[0]}"))
            g = cfg.get("groups", 1)
            if g < 1 or cfg["in_ch"] % g or cfg["out_ch"] % g:
                out.append(Violation(lid, "groups", f"groups={g} must divide {cfg['in_ch']} and {cfg['out_ch']}"))
            if cfg["kernel"] < 1 or cfg["kernel"] % 2 == 0:
                out.append(Violation(lid, "kernel", f"kernel must be odd, got {cfg['kernel']}"))
        elif layer.kind == "inverted_bottleneck":
            try:
                bcfg = layer.bottleneck()
            except TypeError as exc:
                out.append(Violation(lid, "config", str(exc)))
                continue
            if bcfg.in_ch != in_ch[0]:
                out.append(Violation(lid, "channels", f"expects {bcfg.in_ch} input channels, gets {in_ch[0]}"))
            out.extend(Violation(lid, rule, msg) for rule, msg in bcfg.violations())
        elif layer.kind == "head_branch":
            cfg = layer.config
            if cfg["in_ch"] != in_ch[0]:
                out.append(Violation(lid, "channels", f"expects {cfg['in_ch']} input channels, gets {in_ch[0]}"))
            group = cfg.get("shared")
            sig = (cfg["in_ch"], cfg["num_classes"], cfg["tower_depth"], cfg["kernel"])
            if group and shared.setdefault(group, sig) != sig:
                out.append(Violation(lid, "shared", f"shared group {group!r} used with a different configuration"))
        seen[lid] = (layer_out_channels(layer, in_ch), level)

    if len(spec.outputs) != 3:
        out.append(Violation("<spec>", "outputs", f"expected 3 detection outputs, got {len(spec.outputs)}"))
    else:
        for oid, lv in zip(spec.outputs, OUTPUT_LEVELS):
            if oid not in seen:
                out.append(Violation(oid, "outputs", "output is not a layer"))
            elif seen[oid][1] != lv:
                out.append(Violation(oid, "outputs", f"output must be at stride {2 ** lv}, is at P{seen[oid][1]}"))

    widths = [int(layer.config["out_ch"]) for layer in spec.section("backbone") if "out_ch" in layer.config]
    if widths and max(widths) > 6 * min(widths):
        out.append(Violation("backbone", "backbone-span",
                             f"channel span {max(widths)}/{min(widths)} exceeds a ratio of 6"))
    return out


def weight_shapes(spec: ArchitectureSpec) -> Dict[str, Tuple[int, ...]]:
    """Every tensor a spec needs, in execution order; shared groups appear once.

    Convolutions followed by batch-norm store ``.weight`` plus
    ``.bn.gamma/.bn.beta/.bn.mean/.bn.var``; predictors store ``.weight`` and
    ``.bias``.
    """
    shapes: Dict[str, Tuple[int, ...]] = {}

    def conv_bn(prefix, kernel_shape):
        shapes[f"{prefix}.weight"] = tuple(kernel_shape)
        for stat in ("gamma", "beta", "mean", "var"):
            shapes[f"{prefix}.bn.{stat}"] = (kernel_shape[0],)

    for layer in spec.layers:
        cfg = layer.config
        if layer.kind == "conv_bn_silu":
            g = cfg.get("groups", 1)
            conv_bn(layer.id, (cfg["out_ch"], cfg["in_ch"] // g, cfg["kernel"], cfg["kernel"]))
        elif layer.kind == "inverted_bottleneck":
            for part_name, shape in layer.bottleneck().param_shapes().items():
                conv_bn(f"{layer.id}.{part_name}", shape)
        elif layer.kind == "head_branch":
            prefix = cfg.get("shared") or layer.id
            if f"{prefix}.cls.weight" in shapes:
                continue
            ch, k = cfg["in_ch"], cfg["kernel"]
            for i in range(cfg["tower_depth"]):
                conv_bn(f"{prefix}.tower.{i}.dw", (ch, 1, k, k))
                conv_bn(f"{prefix}.tower.{i}.pw", (ch, ch, 1, 1))
            shapes[f"{prefix}.box.weight"] = (4, ch, 1, 1)
            shapes[f"{prefix}.box.bias"] = (4,)
            shapes[f"{prefix}.cls.weight"] = (cfg["num_classes"], ch, 1, 1)
            shapes[f"{prefix}.cls.bias"] = (cfg["num_classes"],)
    return shapes


def release_schedule(spec: ArchitectureSpec) -> Dict[str, List[str]]:
    """For each layer, the tensors whose last consumer it is (safe to free afterwards).

    Spec outputs are never released.
    """
    last_use: Dict[str, str] = {}
    for layer in spec.layers:
        for src in layer.inputs:
            last_use[src] = layer.id
    schedule: Dict[str, List[str]] = {layer.id: [] for layer in spec.layers}
    keep = set(spec.outputs)
    for src, user in last_use.items():
        if src not in keep:
            schedule[user].append(src)
    return schedule
