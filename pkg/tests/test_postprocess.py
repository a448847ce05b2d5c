import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leyolo.errors import PreconditionError
from leyolo.postprocess import (
    PAD_VALUE,
    Detection,
    clip_boxes,
    decode,
    decode_arrays,
    detections_to_json,
    letterbox,
    letterbox_boxes,
    nms,
    nms_indices,
    postprocess,
    unletterbox_boxes,
)

from oracles import brute_force_nms


def heads(size=64, nc=2, fill=-40.0):
    return [np.full((1, 4 + nc, size // s, size // s), fill, np.float32) for s in (8, 16, 32)]


def test_letterbox_identity():
    img = np.random.default_rng(0).random((1, 3, 64, 64), dtype=np.float32)
    out, meta = letterbox(img, 64)
    assert (meta.scale, meta.pad_x, meta.pad_y) == (1.0, 0, 0)
    np.testing.assert_array_equal(out, img)


def test_letterbox_wide_image():
    img = np.ones((1, 3, 640, 1280), np.float32)
    out, meta = letterbox(img, 640)
    assert (meta.scale, meta.pad_x, meta.pad_y) == (0.5, 0, 160)
    assert np.all(out[:, :, :160] == np.float32(PAD_VALUE)) and np.all(out[:, :, 480:] == np.float32(PAD_VALUE))
    np.testing.assert_allclose(out[:, :, 160:480], 1.0, rtol=1e-6)


def test_letterbox_rejects_bad_input():
    with pytest.raises(PreconditionError):
        letterbox(np.ones((1, 3, 10, 10), np.float32), 100)
    with pytest.raises(PreconditionError):
        letterbox(np.ones((1, 3, 0, 10), np.float32), 64)


@settings(max_examples=50, deadline=None)
@given(h=st.integers(1, 300), w=st.integers(1, 300), target=st.sampled_from([32, 320, 640]))
def test_letterbox_box_mapping_inverts(h, w, target):
    _, meta = letterbox(np.zeros((1, 3, h, w), np.float32), target)
    boxes = np.array([[0, 0, w, h], [w * 0.25, h * 0.1, w * 0.5, h * 0.9]])
    np.testing.assert_allclose(unletterbox_boxes(letterbox_boxes(boxes, meta), meta), boxes, atol=1e-4)
    mapped = letterbox_boxes(np.array([[0, 0, w, h]]), meta)[0]
    assert mapped[0] >= 0 and mapped[1] >= 0 and mapped[2] <= target + 1 and mapped[3] <= target + 1


def test_decode_nothing_when_logits_very_negative():
    assert decode(heads(), 0.01) == []


def test_decode_single_cell():
    h = heads()
    h[0][0, :4, 0, 0] = 1.0
    h[0][0, 4 + 1, 0, 0] = 3.0
    dets = decode(h, 0.5)
    assert len(dets) == 1
    d = dets[0]
    assert d.box == (-4.0, -4.0, 12.0, 12.0) and d.class_id == 1
    assert d.score == pytest.approx(1 / (1 + np.exp(-3.0)), rel=1e-6)


def test_decode_clamps_negative_distances_and_drops_empty_boxes():
    h = heads(fill=0.0)
    h[1][0, :4] = -1.0
    h[2][0, :4] = np.array([2.0, -5.0, 0.0, 1.0]).reshape(4, 1, 1)
    boxes, scores, classes = decode_arrays(h, 0.25)
    # level 1 boxes have zero area; level 0 boxes too (all distances 0)
    assert len(boxes) == 2 * 2 * 2
    assert np.allclose(boxes[:, 2] - boxes[:, 0], 64) and np.allclose(boxes[:, 3] - boxes[:, 1], 32)


def test_candidate_count_bounded_by_grid():
    h = heads(size=64, nc=3, fill=0.0)
    for lvl in h:
        lvl[0, :4] = 1.0
    assert len(decode(h, 0.1)) == 3 * (8 * 8 + 4 * 4 + 2 * 2)


def test_nms_examples():
    a = Detection((0.0, 0.0, 10.0, 10.0), 0.9, 0)
    b = Detection((0.0, 0.0, 10.0, 10.0), 0.8, 0)
    c = Detection((0.0, 0.0, 10.0, 10.0), 0.7, 1)
    d = Detection((50.0, 50.0, 60.0, 60.0), 0.6, 0)
    assert nms([b, a], 0.5) == [a]
    assert nms([a, b, c, d], 0.5) == [a, c, d]
    assert nms([d, c, a], 0.5, max_det=2) == [a, c]
    assert nms([]) == []


def test_nms_tie_break_is_deterministic():
    x = [Detection((float(i), 0.0, i + 5.0, 5.0), 0.5, i % 2) for i in range(6)]
    out = nms(list(reversed(x)), 0.99)
    assert [(d.class_id, d.box[0]) for d in out] == [(0, 0.0), (0, 2.0), (0, 4.0), (1, 1.0), (1, 3.0), (1, 5.0)]


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(1, 12), st.integers(1, 12),
                  st.integers(1, 10), st.integers(0, 2)),
        max_size=40,
    ),
    st.floats(0.1, 0.9),
    st.integers(1, 50),
)
def test_nms_matches_oracle_and_is_idempotent(raw, thr, max_det):
    boxes = [(x, y, x + w, y + h) for x, y, w, h, _, _ in raw]
    scores = [s / 10 for *_, s, _ in raw]
    classes = [c for *_, c in raw]
    got = nms_indices(boxes, scores, classes, thr, max_det).tolist()
    assert got == brute_force_nms(boxes, scores, classes, thr, max_det)
    dets = [Detection(tuple(map(float, b)), s, c) for b, s, c in zip(boxes, scores, classes)]
    once = nms(dets, thr, max_det)
    assert nms(once, thr, max_det) == once
    assert all(any(d is e for e in dets) for d in once)


def test_clip_and_postprocess_stay_inside_image():
    assert clip_boxes([[-5, -5, 700, 30]], 640, 480).tolist() == [[0, 0, 640, 30]]
    h = heads(size=64, nc=1, fill=0.0)
    for lvl in h:
        lvl[0, :4] = 3.0
    _, meta = letterbox(np.zeros((1, 3, 32, 64), np.float32), 64)
    dets = postprocess(h, meta, (32, 64), 0.25, 0.65, 300)
    assert dets
    for d in dets:
        x1, y1, x2, y2 = d.box
        assert 0 <= x1 < x2 <= 64 and 0 <= y1 < y2 <= 32


def test_detection_invariants_and_json():
    with pytest.raises(ValueError):
        Detection((1.0, 1.0, 1.0, 2.0), 0.5, 0)
    with pytest.raises(ValueError):
        Detection((0.0, 0.0, 1.0, 1.0), 1.5, 0)
    text = detections_to_json([Detection((0.0, 1.0, 2.0, 3.0), 0.5, 7)])
    assert json.loads(text) == [{"box": [0.0, 1.0, 2.0, 3.0], "score": 0.5, "class": 7}]
