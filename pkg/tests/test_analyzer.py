import csv
import io
import json

import numpy as np
import pytest

from leyolo.analyzer import compare_variants, count, verify_constraints
from leyolo.archspec import ABLATION_STEPS, AblationConfig, build_spec, weight_shapes


def test_nano_totals_frozen():
    rep = count(build_spec("nano"), 640)
    assert rep.total_params == 1118260
    assert rep.total_maccs == 1263078400
    assert rep.total_flops == 2 * rep.total_maccs
    assert rep.section_totals("backbone")["params"] == 766816


def test_head_params_closed_form():
    # per-level dw3x3 + pw to width 80, then the shared tower and predictors, counted once
    width, chans = 80, (32, 64, 96)
    stems = sum(9 * c + 2 * c + c * width + 2 * width for c in chans)
    tower = 2 * (9 * width + 2 * width + width * width + 2 * width)
    preds = (4 * width + 4) + (80 * width + 80)
    assert count(build_spec("nano"), 640).section_totals("head")["params"] == stems + tower + preds


@pytest.mark.parametrize("variant", ["nano", "medium"])
def test_params_agree_with_stored_tensors(variant):
    spec = build_spec(variant)
    stored = sum(int(np.prod(s)) for n, s in weight_shapes(spec).items() if not n.endswith((".bn.mean", ".bn.var")))
    assert count(spec, 320).total_params == stored


def test_conv_flops_scale_with_area():
    spec = build_spec("small")
    assert count(spec, 640).total_flops == 4 * count(spec, 320).total_flops
    assert count(spec, 640).total_params == count(spec, 320).total_params


def test_pointwise_removal_saves_exactly_the_expand_cost():
    with_pw = count(build_spec("nano", AblationConfig(no_pw=False)), 640)
    without = count(build_spec("nano", AblationConfig(no_pw=True)), 640)
    removed = {r.id for r in without.per_layer if r.kind == "inverted_bottleneck" and "expand" not in r.parts}
    saved = sum(r.parts["expand"] for r in with_pw.per_layer if r.id in removed)
    assert len(removed) == 5
    assert with_pw.total_maccs - without.total_maccs == saved


def test_layer_breakdown_example():
    rep = count(build_spec("nano"), 640)
    stem = rep.per_layer[0]
    assert stem.maccs == 27 * 16 * 320 * 320 and stem.params == 27 * 16 + 32
    assert all(r.maccs == 0 for r in rep.per_layer if r.kind in ("concat", "upsample2x"))
    shared = [r for r in rep.per_layer if r.kind == "head_branch"]
    assert shared[0].params > 0 and shared[1].params == shared[2].params == 0


def test_peak_activation_bounds():
    rep = count(build_spec("nano"), 640)
    largest = max(np.prod(r.out_shape) for r in rep.per_layer) * 4
    everything = sum(np.prod(r.out_shape) for r in rep.per_layer) * 4
    assert largest < rep.peak_activation_bytes < everything


def test_ablation_kernel_ordering():
    g = {k: count(build_spec("nano", v), 640).gflops for k, v in ABLATION_STEPS.items()}
    assert g["kernels_3x3_only"] < g["k5_after_p4_only"] < g["kernels_5x5_only"]
    assert g["downsample_3x3_only"] < g["k5_after_p4_only"]
    assert g["base"] == g["neck_expansion_2"]


def test_compare_variants_rows():
    rows = compare_variants()
    assert len(rows) == 9
    assert {(r["variant"], r["size"]) for r in rows} >= {("nano", 640), ("large", 768)}
    assert all(abs(r["gflops_rel_err"]) < 0.12 for r in rows)


def test_verify_constraints_flags_bad_designs():
    assert verify_constraints(build_spec("large")).ok
    rules = {v.rule for v in verify_constraints(build_spec("nano", AblationConfig(neck_expansion=3))).violations}
    assert "neck-expansion" in rules and "neck-width" in rules


def test_report_formats():
    rep = count(build_spec("nano"), 320)
    data = json.loads(rep.to_json())
    assert data["total"]["flops"] == rep.total_flops
    assert set(data["sections"]) == {"backbone", "neck", "head"}
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert len(rows) == len(rep.per_layer) and rows[0]["id"] == "backbone.0"
    assert "GFLOP" in rep.to_table()
