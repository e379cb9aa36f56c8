"""Box and pose geometry shared by every stage of the pipeline.

Boxes use the corner convention (x1, y1, x2, y2) in continuous image
coordinates; area is (x2 - x1) * (y2 - y1) with no pixel "+1". Poses are
the 17 COCO keypoints in the standard order (see KEYPOINT_NAMES).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

KEYPOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

KEYPOINT_COUNT = len(KEYPOINT_NAMES)  # 17


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, corners (x1, y1) top-left and (x2, y2) bottom-right.

    Construction enforces the invariants x2 > x1, y2 > y1 and finite
    coordinates, so every Box has strictly positive area.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise ValueError(f"degenerate box {coords}: requires x2 > x1 and y2 > y1")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def contains(self, other: "Box") -> bool:
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and self.x2 >= other.x2
            and self.y2 >= other.y2
        )


@dataclass(frozen=True)
class Pose:
    """One person's 2-D keypoints: exactly 17 joints in COCO order.

    ``confidence`` is optional and carried through untouched; nothing in the
    default pipeline gates on it.
    """

    joints: np.ndarray  # (17, 2) float64, (x, y) pixels
    confidence: Optional[np.ndarray] = None  # (17,) in [0, 1]

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.shape != (KEYPOINT_COUNT, 2):
            raise ValueError(f"pose must have shape ({KEYPOINT_COUNT}, 2), got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValueError("pose joints must be finite")
        object.__setattr__(self, "joints", joints)
        if self.confidence is not None:
            conf = np.asarray(self.confidence, dtype=np.float64)
            if conf.shape != (KEYPOINT_COUNT,):
                raise ValueError(f"pose confidence must have shape ({KEYPOINT_COUNT},)")
            if np.any(conf < 0) or np.any(conf > 1):
                raise ValueError("pose confidence values must lie in [0, 1]")
            object.__setattr__(self, "confidence", conf)

    def joint(self, name: str) -> np.ndarray:
        return self.joints[KEYPOINT_NAMES.index(name)]

    def translated(self, dx: float, dy: float) -> "Pose":
        return Pose(self.joints + np.array([dx, dy]), self.confidence)


@dataclass(frozen=True)
class HOIProposal:
    """A candidate human-object pair: the unit the relation classifier scores."""

    human: Box
    object: Box
    object_class: int
    s_h: float  # human detection score
    s_o: float  # object detection score
    pose: Pose

    def __post_init__(self):
        if not (0.0 <= self.s_h <= 1.0 and 0.0 <= self.s_o <= 1.0):
            raise ValueError(f"detection scores must lie in [0, 1], got {self.s_h}, {self.s_o}")
        if self.object_class < 0:
            raise ValueError(f"object_class must be a nonnegative id, got {self.object_class}")


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when disjoint, 1 when equal."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_xyxy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (n, 4) and (m, 4) corner-format arrays -> (n, m)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[:, :, 0] * wh[:, :, 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def union_box(a: Box, b: Box) -> Box:
    """Smallest box containing both inputs."""
    return Box(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def part_boxes(
    pose: Pose,
    human: Box,
    gamma: float,
    image_size: Optional[tuple[float, float]] = None,
) -> list[Box]:
    """Square regions around each keypoint, side ``gamma`` times the human box height.

    With ``image_size = (width, height)`` the boxes are clipped to the image;
    a box that falls entirely outside is replaced by a 1-pixel box at the
    nearest border so that feature pooling always receives a valid region.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    side = gamma * human.height
    half = 0.5 * side
    boxes = []
    for x, y in pose.joints:
        x1, y1, x2, y2 = x - half, y - half, x + half, y + half
        if image_size is not None:
            w, h = image_size
            cx1, cy1 = max(x1, 0.0), max(y1, 0.0)
            cx2, cy2 = min(x2, w), min(y2, h)
            if cx2 - cx1 <= 0.0 or cy2 - cy1 <= 0.0:
                # fully outside: fall back to a 1-pixel box at the closest border
                cx = min(max(x, 0.5), w - 0.5)
                cy = min(max(y, 0.5), h - 0.5)
                cx1, cy1, cx2, cy2 = cx - 0.5, cy - 0.5, cx + 0.5, cy + 0.5
            x1, y1, x2, y2 = cx1, cy1, cx2, cy2
        boxes.append(Box(x1, y1, x2, y2))
    return boxes


def match_boxes(
    human: Box,
    obj: Box,
    gts: Sequence[tuple[Box, Box]],
    thr: float = 0.5,
    exclude: Sequence[int] = (),
) -> Optional[int]:
    """Index of the best ground-truth pair for a predicted pair, or None.

    A ground truth qualifies when both the human IoU and the object IoU reach
    ``thr``; among qualifying candidates the one maximizing
    min(human IoU, object IoU) wins. Indices in ``exclude`` are skipped, which
    lets a caller enforce one-match-per-ground-truth across a ranked list.
    """
    if not (0.0 < thr <= 1.0):
        raise ValueError(f"threshold must lie in (0, 1], got {thr}")
    excluded = set(exclude)
    best_idx = None
    best_quality = -1.0
    for i, (gh, go) in enumerate(gts):
        if i in excluded:
            continue
        ih = iou(human, gh)
        if ih < thr:
            continue
        io = iou(obj, go)
        if io < thr:
            continue
        quality = min(ih, io)
        if quality > best_quality:
            best_quality = quality
            best_idx = i
    return best_idx


def match_pair(
    pred: HOIProposal,
    gts: Sequence[tuple[Box, Box]],
    thr: float = 0.5,
    exclude: Sequence[int] = (),
) -> Optional[int]:
    """match_boxes applied to a proposal's human and object boxes."""
    return match_boxes(pred.human, pred.object, gts, thr, exclude)
