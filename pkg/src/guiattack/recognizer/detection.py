"""Crop classification and multi-scale sliding-window detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imagecore import Rect, resize_matrix
from ..sprites import BACKGROUND_CLASS, CLASS_NAMES
from .network import NetworkParams, forward, predict_batch
from .training import WINDOW_SIDES

NMS_IOU = 0.3
NESTED_FRACTION = 0.7  # a window this much inside a stronger one is the same object
DEFAULT_THRESHOLD = 0.5
_CHUNK = 512


@dataclass(frozen=True)
class Detection:
    icon_class: int
    confidence: float
    bbox: Rect

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.icon_class] if self.icon_class < len(CLASS_NAMES) else "background"


def classify_crop(params: NetworkParams, crop: np.ndarray) -> tuple[int, float]:
    """Arg-max class and its probability; ties go to the lowest class id."""
    probs = forward(params, crop[..., :3])
    k = int(np.argmax(probs))
    return k, float(probs[k])


def class_probability(params: NetworkParams, crop: np.ndarray, icon_class: int) -> float:
    return float(forward(params, crop[..., :3])[icon_class])


def nms(
    boxes: np.ndarray,
    scores: np.ndarray,
    iou_threshold: float = NMS_IOU,
    nested_fraction: float | None = None,
    centre_inside: bool = False,
) -> list[int]:
    """Greedy non-maximum suppression over ``[x0, y0, x1, y1]`` rows.

    Equal scores keep the earlier index first.  With ``nested_fraction`` a box
    is also suppressed when that fraction of the smaller of the pair lies in
    the intersection, which IoU alone misses for windows of different scales.
    With ``centre_inside`` a box whose centre lies strictly inside a kept box
    is suppressed too, which catches same-scale windows one stride apart.
    """
    if len(boxes) == 0:
        return []
    x1, y1, x2, y2 = (boxes[:, i].astype(np.float64) for i in range(4))
    areas = (x2 - x1) * (y2 - y1)
    order = np.lexsort((np.arange(len(scores)), -scores))
    keep = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        iw = np.maximum(0.0, np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]))
        ih = np.maximum(0.0, np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]))
        inter = iw * ih
        iou = inter / (areas[i] + areas[rest] - inter)
        survive = iou <= iou_threshold
        if nested_fraction is not None:
            survive &= inter < nested_fraction * np.minimum(areas[i], areas[rest])
        if centre_inside:
            cx, cy = (x1[rest] + x2[rest]) / 2, (y1[rest] + y2[rest]) / 2
            survive &= ~((x1[i] < cx) & (cx < x2[i]) & (y1[i] < cy) & (cy < y2[i]))
        order = rest[survive]
    return keep


def window_probabilities(params: NetworkParams, scene: np.ndarray, side: int, stride: int):
    """Class probabilities for every ``side`` window at ``stride``.

    Each window is resampled with the same separable map as
    :func:`classify_crop`, applied to all windows of a scale at once.
    """
    rgb = scene[..., :3]
    h, w = rgb.shape[:2]
    ys = np.arange(0, h - side + 1, stride)
    xs = np.arange(0, w - side + 1, stride)
    n_in = params.spec.input_side
    r = resize_matrix(side, n_in).astype(params.dtype)
    img = np.ascontiguousarray(rgb, dtype=params.dtype)
    views = np.lib.stride_tricks.sliding_window_view(img, (side, side), axis=(0, 1))[ys][:, xs]
    # views: ny, nx, C, side, side
    origins = [(int(x), int(y)) for y in ys for x in xs]
    flat = views.reshape(len(origins), 3, side, side)
    probs = np.empty((len(origins), params.spec.n_classes), dtype=np.float64)
    for start in range(0, len(origins), _CHUNK):
        chunk = flat[start : start + _CHUNK]
        if side != n_in:
            chunk = np.matmul(np.matmul(r, chunk), r.T)
        x = chunk.transpose(0, 2, 3, 1) - params.dtype.type(0.5)
        probs[start : start + _CHUNK] = predict_batch(params, x)
    return origins, probs


def detect(
    params: NetworkParams,
    scene: np.ndarray,
    stride: int = 4,
    threshold: float = DEFAULT_THRESHOLD,
    sides: tuple[int, ...] = WINDOW_SIDES,
    offset: tuple[int, int] = (0, 0),
) -> list[Detection]:
    """Sliding-window detection followed by class-agnostic NMS at IoU 0.3.

    NMS also merges a window nested inside a stronger one of another scale,
    or one whose centre falls inside a stronger window.

    ``offset`` is added to every bbox so callers can scan a sub-region and
    report scene coordinates.
    """
    h, w = scene.shape[:2]
    usable = [s for s in sides if s <= h and s <= w]
    if not usable:
        raise ValueError(f"scene {w}x{h} smaller than the smallest window {min(sides)}")
    boxes, scores, classes = [], [], []
    for side in usable:
        origins, probs = window_probabilities(params, scene, side, stride)
        labels = probs.argmax(axis=1)
        conf = probs[np.arange(len(labels)), labels]
        for i in np.nonzero((labels != BACKGROUND_CLASS) & (conf >= threshold))[0]:
            x, y = origins[i]
            boxes.append((x, y, x + side, y + side))
            scores.append(conf[i])
            classes.append(int(labels[i]))
    if not boxes:
        return []
    boxes_arr = np.array(boxes)
    scores_arr = np.array(scores)
    dx, dy = offset
    return [
        Detection(classes[i], float(scores_arr[i]), Rect(*boxes[i]).translate(dx, dy))
        for i in nms(boxes_arr, scores_arr, NMS_IOU, NESTED_FRACTION, centre_inside=True)
    ]
