"""Letterboxing, anchor-free box decoding and class-wise NMS.

Head tensors carry ``4 + num_classes`` channels per cell: distances
(left, top, right, bottom) in stride units, then raw class logits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import PreconditionError
from .tensor_ops import sigmoid

PAD_VALUE = 114.0 / 255.0
DEFAULT_CONF = 0.25
DEFAULT_IOU = 0.65
DEFAULT_MAX_DET = 300
STRIDES = (8, 16, 32)


@dataclass(frozen=True)
class Detection:
    box: Tuple[float, float, float, float]
    score: float
    class_id: int

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate box {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"box": [float(v) for v in self.box], "score": float(self.score), "class": int(self.class_id)}


@dataclass(frozen=True)
class LetterboxMeta:
    scale: float
    pad_x: int
    pad_y: int

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an (N, C, H, W) array."""
    _, _, h, w = image.shape

    def axis(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo).astype(np.float32)

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    img = image.astype(np.float32, copy=False)
    top = img[:, :, y0] * (1 - fy)[:, None] + img[:, :, y1] * fy[:, None]
    return top[..., x0] * (1 - fx) + top[..., x1] * fx


def letterbox(image: np.ndarray, target: int) -> Tuple[np.ndarray, LetterboxMeta]:
    """Fit ``image`` (1, C, H, W) into a ``target`` square, keeping aspect, padding with gray."""
    if target % 32 or target < 32:
        raise PreconditionError(f"letterbox target must be a positive multiple of 32, got {target}")
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 4 or min(image.shape) < 1:
        raise PreconditionError(f"expected a non-empty (1, C, H, W) image, got {image.shape}")
    _, c, h, w = image.shape
    scale = min(target / h, target / w)
    new_h = max(1, int(round(h * scale)))
    new_w = max(1, int(round(w * scale)))
    resized = image if (new_h, new_w) == (h, w) else resize_bilinear(image, new_h, new_w)
    pad_y = (target - new_h) // 2
    pad_x = (target - new_w) // 2
    out = np.full((image.shape[0], c, target, target), PAD_VALUE, dtype=np.float32)
    out[:, :, pad_y:pad_y + new_h, pad_x:pad_x + new_w] = resized
    return out, LetterboxMeta(scale, pad_x, pad_y)


def letterbox_boxes(boxes: np.ndarray, meta: LetterboxMeta) -> np.ndarray:
    """Original-image corner boxes -> network-input coordinates."""
    b = np.asarray(boxes, dtype=np.float64)
    offset = np.array([meta.pad_x, meta.pad_y, meta.pad_x, meta.pad_y], dtype=np.float64)
    return b * meta.scale + offset


def unletterbox_boxes(boxes: np.ndarray, meta: LetterboxMeta) -> np.ndarray:
    """Network-input corner boxes -> original-image coordinates."""
    b = np.asarray(boxes, dtype=np.float64)
    offset = np.array([meta.pad_x, meta.pad_y, meta.pad_x, meta.pad_y], dtype=np.float64)
    return (b - offset) / meta.scale


def decode_arrays(head_outputs: Sequence[np.ndarray], conf_threshold: float = DEFAULT_CONF,
                  strides: Sequence[int] = STRIDES, batch_index: int = 0):
    """Candidates as ``(boxes (N, 4), scores (N,), class_ids (N,))`` in input pixels.

    One candidate per (cell, class) whose sigmoid score exceeds the threshold.
    Boxes with zero width or height (all relevant distances clamped to 0)
    are dropped.
    """
    if len(head_outputs) != len(strides):
        raise PreconditionError(f"expected {len(strides)} head levels, got {len(head_outputs)}")
    sizes = {out.shape[2] * s for out, s in zip(head_outputs, strides)}
    if len(sizes) != 1:
        raise PreconditionError("head levels do not share one input size at strides " + str(tuple(strides)))
    all_boxes, all_scores, all_cls = [], [], []
    for out, s in zip(head_outputs, strides):
        out = np.asarray(out, dtype=np.float32)[batch_index]
        _, h, w = out.shape
        dist = np.maximum(out[:4], 0.0).astype(np.float64) * s
        cy, cx = np.meshgrid((np.arange(h) + 0.5) * s, (np.arange(w) + 0.5) * s, indexing="ij")
        boxes = np.stack([cx - dist[0], cy - dist[1], cx + dist[2], cy + dist[3]], axis=-1)
        scores = sigmoid(out[4:])
        cls, iy, ix = np.nonzero(scores > conf_threshold)
        b = boxes[iy, ix]
        keep = (b[:, 2] > b[:, 0]) & (b[:, 3] > b[:, 1])
        all_boxes.append(b[keep])
        all_scores.append(scores[cls, iy, ix][keep].astype(np.float64))
        all_cls.append(cls[keep])
    return np.concatenate(all_boxes), np.concatenate(all_scores), np.concatenate(all_cls)


def _to_detections(boxes, scores, classes) -> List[Detection]:
    return [Detection(tuple(map(float, b)), float(s), int(c)) for b, s, c in zip(boxes, scores, classes)]


def decode(head_outputs: Sequence[np.ndarray], conf_threshold: float = DEFAULT_CONF,
           strides: Sequence[int] = STRIDES, batch_index: int = 0) -> List[Detection]:
    """Raw candidate detections in network-input pixel space (not clipped)."""
    return _to_detections(*decode_arrays(head_outputs, conf_threshold, strides, batch_index))


def iou_one_to_many(box: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    iw = np.clip(np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0]), 0, None)
    ih = np.clip(np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1]), 0, None)
    inter = iw * ih
    area = (box[2] - box[0]) * (box[3] - box[1])
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = area + areas - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def nms_indices(boxes, scores, classes, iou_threshold: float = DEFAULT_IOU,
                max_det: int = DEFAULT_MAX_DET) -> np.ndarray:
    """Indices kept by greedy class-wise NMS, best first.

    Candidates are visited by descending score, ties broken by lower class id
    then lower x1, y1, x2, y2. A candidate is suppressed when its IoU with an
    already kept box of the same class exceeds ``iou_threshold``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64)
    if len(scores) == 0 or max_det <= 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], classes, -scores))
    # A candidate's fate only depends on better-ranked ones, so a single pass in
    # rank order can stop as soon as max_det boxes are kept.
    kept: List[int] = []
    kept_boxes = {}
    for i in order:
        prev = kept_boxes.get(classes[i])
        if prev is not None and np.any(iou_one_to_many(boxes[i], np.asarray(prev)) > iou_threshold):
            continue
        kept.append(int(i))
        kept_boxes.setdefault(classes[i], []).append(boxes[i])
        if len(kept) == max_det:
            break
    return np.asarray(kept, dtype=np.int64)


def nms(dets: Sequence[Detection], iou_threshold: float = DEFAULT_IOU,
        max_det: int = DEFAULT_MAX_DET) -> List[Detection]:
    """Class-wise greedy NMS; returns the surviving input objects unchanged, best first."""
    if not dets:
        return []
    boxes = np.array([d.box for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    classes = np.array([d.class_id for d in dets], dtype=np.int64)
    return [dets[i] for i in nms_indices(boxes, scores, classes, iou_threshold, max_det)]


def clip_boxes(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    b = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    b[:, [0, 2]] = np.clip(b[:, [0, 2]], 0, width)
    b[:, [1, 3]] = np.clip(b[:, [1, 3]], 0, height)
    return b


def postprocess(head_outputs, meta: LetterboxMeta, image_size: Tuple[int, int],
                conf_threshold: float = DEFAULT_CONF, iou_threshold: float = DEFAULT_IOU,
                max_det: int = DEFAULT_MAX_DET) -> List[Detection]:
    """decode -> nms -> map back to the original image -> clip.

    ``image_size`` is the original ``(height, width)``. Boxes that collapse
    to zero area when clipped are dropped.
    """
    boxes, scores, classes = decode_arrays(head_outputs, conf_threshold)
    keep = nms_indices(boxes, scores, classes, iou_threshold, max_det)
    h, w = image_size
    out = clip_boxes(unletterbox_boxes(boxes[keep], meta), w, h)
    ok = (out[:, 2] > out[:, 0]) & (out[:, 3] > out[:, 1])
    return _to_detections(out[ok], scores[keep][ok], classes[keep][ok])


def detections_to_json(dets: Sequence[Detection]) -> str:
    return json.dumps([d.to_dict() for d in dets], indent=1)
