"""Static cost accounting: parameters, multiply-accumulates, FLOPs, activation memory.

Conventions
-----------
* A convolution costs ``k*k*(in_ch/groups)*out_ch*H_out*W_out`` MACs.
* One FLOP is counted per multiply and per add, so ``flops = 2 * maccs``.
* Upsampling, concatenation, residual additions, batch-norm and activations
  cost nothing.
* Parameters are kernel weights plus the batch-norm scale and shift
  (running statistics are buffers, not parameters); prediction layers count
  their bias instead. Weights shared between head branches count once.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from .archspec import (
    INPUT_ID,
    ArchitectureSpec,
    Violation,
    build_spec,
    get_variant,
    infer_shapes,
    release_schedule,
    validate,
)

BYTES_PER_FLOAT = 4
SECTIONS = ("backbone", "neck", "head")

# (variant, input size) -> (GFLOP, M params) reference figures for the family.
REFERENCE_POINTS: Dict[Tuple[str, int], Tuple[float, float]] = {
    ("nano", 320): (0.66, 1.1),
    ("nano", 480): (1.47, 1.1),
    ("nano", 640): (2.64, 1.1),
    ("small", 320): (1.126, 1.9),
    ("small", 480): (2.53, 1.9),
    ("small", 640): (4.5, 1.9),
    ("medium", 480): (3.27, 2.4),
    ("medium", 640): (5.8, 2.4),
    ("large", 768): (8.4, 2.4),
}

# Nano @640 GFLOP for each ablation step.
REFERENCE_ABLATION_GFLOPS: Dict[str, float] = {
    "base": 2.64,
    "kernels_3x3_only": 2.877,
    "kernels_5x5_only": 3.946,
    "k5_after_p4_only": 3.19,
    "downsample_3x3_only": 3.011,
    "no_pw_backbone_and_neck": 2.823,
    "neck_expansion_2": 2.64,
}


@dataclass
class LayerCost:
    id: str
    kind: str
    params: int
    maccs: int
    out_shape: Tuple[int, int, int]
    parts: Dict[str, int] = field(default_factory=dict)

    @property
    def section(self) -> str:
        return self.id.split(".", 1)[0]

    @property
    def flops(self) -> int:
        return 2 * self.maccs


@dataclass
class FlopParamReport:
    variant: str
    input_size: int
    per_layer: List[LayerCost]
    peak_activation_bytes: int

    def section_totals(self, section: str) -> Dict[str, int]:
        rows = [r for r in self.per_layer if r.section == section]
        maccs = sum(r.maccs for r in rows)
        return {"params": sum(r.params for r in rows), "maccs": maccs, "flops": 2 * maccs}

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.per_layer)

    @property
    def total_maccs(self) -> int:
        return sum(r.maccs for r in self.per_layer)

    @property
    def total_flops(self) -> int:
        return 2 * self.total_maccs

    @property
    def gflops(self) -> float:
        return self.total_flops / 1e9

    @property
    def mparams(self) -> float:
        return self.total_params / 1e6

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "input_size": self.input_size,
            "layers": [
                {"id": r.id, "kind": r.kind, "params": r.params, "maccs": r.maccs, "flops": r.flops,
                 "out_shape": list(r.out_shape)}
                for r in self.per_layer
            ],
            "sections": {s: self.section_totals(s) for s in SECTIONS},
            "total": {"params": self.total_params, "maccs": self.total_maccs, "flops": self.total_flops,
                      "gflops": round(self.gflops, 4), "mparams": round(self.mparams, 4)},
            "peak_activation_bytes": self.peak_activation_bytes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "section", "kind", "params", "maccs", "flops", "out_c", "out_h", "out_w"])
        for r in self.per_layer:
            w.writerow([r.id, r.section, r.kind, r.params, r.maccs, r.flops, *r.out_shape])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'layer':<22}{'kind':<21}{'out (C,H,W)':<18}{'params':>10}{'MFLOP':>11}"]
        for r in self.per_layer:
            shape = "x".join(map(str, r.out_shape))
            lines.append(f"{r.id:<22}{r.kind:<21}{shape:<18}{r.params:>10}{r.flops / 1e6:>11.2f}")
        lines.append("-" * 82)
        for s in SECTIONS:
            t = self.section_totals(s)
            lines.append(f"{s:<61}{t['params']:>10}{t['flops'] / 1e6:>11.2f}")
        lines.append(f"{'total':<61}{self.total_params:>10}{self.total_flops / 1e6:>11.2f}")
        lines.append(
            f"{self.variant} @{self.input_size}: {self.gflops:.3f} GFLOP, {self.mparams:.3f} M params, "
            f"peak activations {self.peak_activation_bytes / 2**20:.2f} MiB"
        )
        return "\n".join(lines)


def _conv_cost(in_ch, out_ch, k, groups, hw_out, bias=False):
    weights = k * k * (in_ch // groups) * out_ch
    return weights + (out_ch if bias else 2 * out_ch), weights * hw_out


def _scratch_elems(layer, in_shape, out_shape) -> int:
    """Largest block-internal temporary, in elements."""
    _, hi, wi = in_shape
    _, ho, wo = out_shape
    cfg = layer.config
    if layer.kind == "inverted_bottleneck":
        d = cfg["expand_ch"]
        return (d * hi * wi if cfg["use_first_pw"] else 0) + d * ho * wo
    if layer.kind == "head_branch":
        return 2 * cfg["in_ch"] * ho * wo
    return 0


def count(spec: ArchitectureSpec, input_size: int) -> FlopParamReport:
    """Per-layer and total cost of ``spec`` at a square ``input_size`` (batch 1)."""
    shapes = infer_shapes(spec, input_size)
    shapes_in = dict(shapes)
    shapes_in[INPUT_ID] = (spec.input_channels, input_size, input_size)
    rows: List[LayerCost] = []
    counted_groups = set()
    for layer in spec.layers:
        cfg = layer.config
        out_shape = shapes[layer.id]
        hw = out_shape[1] * out_shape[2]
        params = maccs = 0
        parts: Dict[str, int] = {}
        if layer.kind == "conv_bn_silu":
            params, maccs = _conv_cost(cfg["in_ch"], cfg["out_ch"], cfg["kernel"], cfg.get("groups", 1), hw)
            parts["conv"] = maccs
        elif layer.kind == "inverted_bottleneck":
            b = layer.bottleneck()
            _, hi, wi = shapes_in[layer.inputs[0]]
            pieces = []
            if b.use_first_pw:
                pieces.append(("expand", _conv_cost(b.in_ch, b.expand_ch, 1, 1, hi * wi)))
            pieces.append(("dw", _conv_cost(b.expand_ch, b.expand_ch, b.kernel, b.expand_ch, hw)))
            pieces.append(("project", _conv_cost(b.expand_ch, b.out_ch, 1, 1, hw)))
            for name, (p, m) in pieces:
                parts[name] = m
                params += p
                maccs += m
        elif layer.kind == "head_branch":
            ch, k, nc = cfg["in_ch"], cfg["kernel"], cfg["num_classes"]
            pieces = []
            for i in range(cfg["tower_depth"]):
                pieces.append((f"tower.{i}.dw", _conv_cost(ch, ch, k, ch, hw)))
                pieces.append((f"tower.{i}.pw", _conv_cost(ch, ch, 1, 1, hw)))
            pieces.append(("box", _conv_cost(ch, 4, 1, 1, hw, bias=True)))
            pieces.append(("cls", _conv_cost(ch, nc, 1, 1, hw, bias=True)))
            group = cfg.get("shared") or layer.id
            first = group not in counted_groups
            counted_groups.add(group)
            for name, (p, m) in pieces:
                parts[name] = m
                maccs += m
                if first:
                    params += p
        rows.append(LayerCost(layer.id, layer.kind, params, maccs, out_shape, parts))

    return FlopParamReport(spec.variant.name, input_size, rows, _peak_activation_bytes(spec, shapes_in))


def _peak_activation_bytes(spec, shapes_in) -> int:
    def elems(s):
        return s[0] * s[1] * s[2]

    live = {INPUT_ID: elems(shapes_in[INPUT_ID])}
    schedule = release_schedule(spec)
    peak = live[INPUT_ID]
    for layer in spec.layers:
        out = elems(shapes_in[layer.id])
        scratch = _scratch_elems(layer, shapes_in[layer.inputs[0]], shapes_in[layer.id])
        peak = max(peak, sum(live.values()) + out + scratch)
        live[layer.id] = out
        for gone in schedule[layer.id]:
            live.pop(gone, None)
    return peak * BYTES_PER_FLOAT


def compare_variants(num_classes: int = 80) -> List[dict]:
    """Computed vs reference cost for every (variant, size) reference point."""
    rows = []
    specs = {}
    for (name, size), (ref_g, ref_p) in REFERENCE_POINTS.items():
        spec = specs.setdefault(name, build_spec(name, num_classes=num_classes))
        rep = count(spec, size)
        rows.append({
            "variant": name, "size": size,
            "gflops": rep.gflops, "mparams": rep.mparams,
            "ref_gflops": ref_g, "ref_mparams": ref_p,
            "gflops_rel_err": rep.gflops / ref_g - 1.0,
            "mparams_rel_err": rep.mparams / ref_p - 1.0,
        })
    return rows


def format_comparison(rows: List[dict]) -> str:
    lines = [f"{'variant':<8}{'size':>6}{'GFLOP':>9}{'ref':>8}{'err':>8}{'Mparams':>10}{'ref':>7}{'err':>8}"]
    for r in rows:
        lines.append(
            f"{r['variant']:<8}{r['size']:>6}{r['gflops']:>9.3f}{r['ref_gflops']:>8.3f}{r['gflops_rel_err']:>+8.1%}"
            f"{r['mparams']:>10.3f}{r['ref_mparams']:>7.2f}{r['mparams_rel_err']:>+8.1%}"
        )
    return "\n".join(lines)


@dataclass
class ConstraintReport:
    violations: List[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "all constraints satisfied"
        return "\n".join(map(str, self.violations))


def verify_constraints(spec: ArchitectureSpec) -> ConstraintReport:
    """Graph/block validation plus design-level checks on the built network.

    Beyond :func:`~leyolo.archspec.validate`: pointwise-free blocks carry no
    expansion cost, neck bottlenecks expand by exactly 2, the widest neck
    expansion is twice the P5 width (192 for nano), the neck has exactly two
    strided standard convolutions and the backbone exactly one strided
    standard conv plus one pointwise conv.
    """
    found = list(validate(spec))
    report = count(spec, 32 * 4)
    costs = {r.id: r for r in report.per_layer}
    v = get_variant(spec.variant)

    for layer in spec.layers:
        if layer.kind != "inverted_bottleneck":
            continue
        b = layer.bottleneck()
        c = costs[layer.id]
        if not b.use_first_pw and ("expand" in c.parts or c.maccs != c.parts["dw"] + c.parts["project"]):
            found.append(Violation(layer.id, "pw-saving", "pointwise-free block still pays for an expansion"))
        if layer.section == "neck" and b.expand_ch != 2 * b.out_ch:
            found.append(Violation(layer.id, "neck-expansion",
                                   f"expanded width {b.expand_ch} is not 2 x {b.out_ch}"))

    neck_d = [layer.config["expand_ch"] for layer in spec.section("neck") if layer.kind == "inverted_bottleneck"]
    want = v.channels(192)
    if neck_d and max(neck_d) != want:
        found.append(Violation("neck", "neck-width", f"widest neck expansion is {max(neck_d)}, expected {want}"))

    neck_strided = [l for l in spec.section("neck") if l.kind == "conv_bn_silu" and l.config["stride"] == 2]
    if len(neck_strided) != 2:
        found.append(Violation("neck", "neck-downsampling",
                               f"expected 2 strided standard convs, found {len(neck_strided)}"))
    bb_convs = [l for l in spec.section("backbone") if l.kind == "conv_bn_silu"]
    strided = [l for l in bb_convs if l.config["stride"] == 2]
    pointwise = [l for l in bb_convs if l.config["kernel"] == 1]
    if len(strided) != 1 or len(pointwise) != 1:
        found.append(Violation("backbone", "backbone-convs",
                               f"expected 1 strided stem conv and 1 pointwise conv, found {len(strided)}/{len(pointwise)}"))
    return ConstraintReport(found)
