"""Dataset schema, loading, proposal pairing, and the synthetic scene generator.

A dataset is one JSON document with ``categories``, ``actions``,
``action_bindings``, ``images``, ``humans``, ``objects``, and
``interactions`` arrays. Human and object records carry both the detector
view (possibly jittered box, estimated pose, score) and the ground-truth
geometry plus draw attributes; image pixels are a pure function of the
ground-truth records, so datasets are self-contained and byte-reproducible.

Synthetic scenes contain procedurally posed stick figures and colored blob
objects. Each action is bound to an anchor joint (for example hold -> wrist),
and the ground-truth action of a human-object pair is decided by which anchor
joint the object center is nearest, provided it falls within a proximity
radius proportional to the human's height. Pairs whose object is beyond the
radius of every anchor carry an empty action set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import KEYPOINT_COUNT, KEYPOINT_NAMES, Box, HOIProposal, Pose
from .spatial import COCO_SKELETON

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Dataset file fails validation; the message enumerates every offender."""


class GenerationError(RuntimeError):
    """Synthetic placement could not satisfy its constraints."""


@dataclass
class ImageRecord:
    id: int
    width: int
    height: int


@dataclass
class HumanRecord:
    id: int
    image_id: int
    box: Box            # detector box (possibly jittered)
    score: float
    pose: Pose          # estimated pose (possibly noisy)
    gt_box: Box
    gt_pose: Pose
    color: tuple[float, float, float] = (0.8, 0.7, 0.6)
    line_width: float = 2.0


@dataclass
class ObjectRecord:
    id: int
    image_id: int
    box: Box            # detector box (possibly jittered)
    category: int
    score: float
    gt_box: Box
    color: tuple[float, float, float] = (0.9, 0.3, 0.3)
    size: float = 3.0   # blob radius in pixels


@dataclass
class Interaction:
    human_id: int
    object_id: int
    actions: tuple[int, ...]


@dataclass
class Dataset:
    categories: list[str]
    actions: list[str]
    action_bindings: dict[str, str]  # action name -> anchor joint name
    images: list[ImageRecord]
    humans: list[HumanRecord]
    objects: list[ObjectRecord]
    interactions: list[Interaction]

    def __post_init__(self):
        self._humans_by_image: dict[int, list[HumanRecord]] = {}
        self._objects_by_image: dict[int, list[ObjectRecord]] = {}
        for h in self.humans:
            self._humans_by_image.setdefault(h.image_id, []).append(h)
        for o in self.objects:
            self._objects_by_image.setdefault(o.image_id, []).append(o)
        self._humans_by_id = {h.id: h for h in self.humans}
        self._objects_by_id = {o.id: o for o in self.objects}
        self._interactions_by_pair = {(i.human_id, i.object_id): i for i in self.interactions}

    def image(self, image_id: int) -> ImageRecord:
        for im in self.images:
            if im.id == image_id:
                return im
        raise KeyError(f"unknown image id {image_id}")

    def humans_in(self, image_id: int) -> list[HumanRecord]:
        return self._humans_by_image.get(image_id, [])

    def objects_in(self, image_id: int) -> list[ObjectRecord]:
        return self._objects_by_image.get(image_id, [])

    def pair_actions(self, human_id: int, object_id: int) -> tuple[int, ...]:
        inter = self._interactions_by_pair.get((human_id, object_id))
        return inter.actions if inter is not None else ()


def pair_proposals(dataset: Dataset, image_id: int) -> list[HOIProposal]:
    """Cartesian product of an image's human and object detections."""
    dataset.image(image_id)
    props = []
    for h in dataset.humans_in(image_id):
        for o in dataset.objects_in(image_id):
            props.append(
                HOIProposal(
                    human=h.box, object=o.box, object_class=o.category,
                    s_h=h.score, s_o=o.score, pose=h.pose,
                )
            )
    return props


def pair_records(dataset: Dataset, image_id: int) -> list[tuple[HumanRecord, ObjectRecord]]:
    """The (human, object) record pairs matching pair_proposals order."""
    return [(h, o) for h in dataset.humans_in(image_id) for o in dataset.objects_in(image_id)]


def ground_truth_pairs(dataset: Dataset, image_id: int) -> list[tuple[Box, Box, frozenset]]:
    """Positive ground-truth pairs of one image as (human gt box, object gt box, actions)."""
    out = []
    for inter in dataset.interactions:
        human = dataset._humans_by_id[inter.human_id]
        if human.image_id != image_id:
            continue
        obj = dataset._objects_by_id[inter.object_id]
        out.append((human.gt_box, obj.gt_box, frozenset(inter.actions)))
    return out


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def _box_to_list(b: Box) -> list[float]:
    return [b.x1, b.y1, b.x2, b.y2]


def save_dataset(dataset: Dataset, path) -> None:
    doc = {
        "version": SCHEMA_VERSION,
        "categories": dataset.categories,
        "actions": dataset.actions,
        "action_bindings": dataset.action_bindings,
        "images": [{"id": im.id, "width": im.width, "height": im.height} for im in dataset.images],
        "humans": [
            {
                "id": h.id, "image_id": h.image_id,
                "box": _box_to_list(h.box), "score": h.score,
                "pose": h.pose.joints.tolist(),
                "gt_box": _box_to_list(h.gt_box), "gt_pose": h.gt_pose.joints.tolist(),
                "color": list(h.color), "line_width": h.line_width,
            }
            for h in dataset.humans
        ],
        "objects": [
            {
                "id": o.id, "image_id": o.image_id,
                "box": _box_to_list(o.box), "category": o.category, "score": o.score,
                "gt_box": _box_to_list(o.gt_box), "color": list(o.color), "size": o.size,
            }
            for o in dataset.objects
        ],
        "interactions": [
            {"human_id": i.human_id, "object_id": i.object_id, "actions": list(i.actions)}
            for i in dataset.interactions
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def _validate_box(raw, image: Optional[ImageRecord], errors: list[str], label: str) -> Optional[Box]:
    try:
        box = Box(*[float(v) for v in raw])
    except (TypeError, ValueError) as exc:
        errors.append(f"{label}: invalid box {raw!r} ({exc})")
        return None
    if image is not None and not (
        0.0 <= box.x1 and box.x2 <= image.width and 0.0 <= box.y1 and box.y2 <= image.height
    ):
        errors.append(f"{label}: box {raw!r} outside image bounds {image.width}x{image.height}")
    return box


def load_dataset(path) -> Dataset:
    """Parse and fully validate a dataset file.

    Raises SchemaError listing every invalid record, not just the first.
    """
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported dataset version {doc.get('version')!r}")

    errors: list[str] = []
    categories = list(doc.get("categories", []))
    actions = list(doc.get("actions", []))
    bindings = dict(doc.get("action_bindings", {}))
    images = [ImageRecord(int(d["id"]), int(d["width"]), int(d["height"])) for d in doc.get("images", [])]
    by_id = {im.id: im for im in images}

    humans = []
    for d in doc.get("humans", []):
        label = f"human {d.get('id')}"
        image = by_id.get(d.get("image_id"))
        if image is None:
            errors.append(f"{label}: unknown image_id {d.get('image_id')!r}")
        box = _validate_box(d.get("box"), image, errors, label)
        gt_box = _validate_box(d.get("gt_box", d.get("box")), image, errors, label)
        score = float(d.get("score", 1.0))
        if not 0.0 <= score <= 1.0:
            errors.append(f"{label}: score {score} outside [0, 1]")
        pose = gt_pose = None
        for key in ("pose", "gt_pose"):
            joints = d.get(key, d.get("pose"))
            if joints is None or len(joints) != KEYPOINT_COUNT:
                errors.append(f"{label}: {key} must have {KEYPOINT_COUNT} joints, got {0 if joints is None else len(joints)}")
            else:
                parsed = Pose(np.asarray(joints, dtype=np.float64))
                if key == "pose":
                    pose = parsed
                else:
                    gt_pose = parsed
        if box and gt_box and pose and gt_pose and image is not None:
            humans.append(
                HumanRecord(int(d["id"]), image.id, box, score, pose, gt_box, gt_pose,
                            tuple(d.get("color", (0.8, 0.7, 0.6))), float(d.get("line_width", 2.0)))
            )

    objects = []
    for d in doc.get("objects", []):
        label = f"object {d.get('id')}"
        image = by_id.get(d.get("image_id"))
        if image is None:
            errors.append(f"{label}: unknown image_id {d.get('image_id')!r}")
        box = _validate_box(d.get("box"), image, errors, label)
        gt_box = _validate_box(d.get("gt_box", d.get("box")), image, errors, label)
        score = float(d.get("score", 1.0))
        if not 0.0 <= score <= 1.0:
            errors.append(f"{label}: score {score} outside [0, 1]")
        category = int(d.get("category", -1))
        if not 0 <= category < max(len(categories), 1):
            errors.append(f"{label}: category {category} outside the {len(categories)}-entry table")
        if box and gt_box and image is not None:
            objects.append(
                ObjectRecord(int(d["id"]), image.id, box, category, score, gt_box,
                             tuple(d.get("color", (0.9, 0.3, 0.3))), float(d.get("size", 3.0)))
            )

    human_ids = {h.id for h in humans}
    object_ids = {o.id for o in objects}
    interactions = []
    for d in doc.get("interactions", []):
        label = f"interaction {d.get('human_id')}-{d.get('object_id')}"
        ok = True
        if d.get("human_id") not in human_ids:
            errors.append(f"{label}: unknown human_id")
            ok = False
        if d.get("object_id") not in object_ids:
            errors.append(f"{label}: unknown object_id")
            ok = False
        acts = tuple(int(a) for a in d.get("actions", ()))
        if any(not 0 <= a < max(len(actions), 1) for a in acts):
            errors.append(f"{label}: action ids {acts} outside the {len(actions)}-entry table")
            ok = False
        if ok:
            interactions.append(Interaction(int(d["human_id"]), int(d["object_id"]), acts))

    if errors:
        raise SchemaError("dataset failed validation:\n  " + "\n  ".join(errors))
    return Dataset(categories, actions, bindings, images, humans, objects, interactions)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

BACKGROUND = (0.07, 0.07, 0.09)


def _paint(canvas: np.ndarray, mask: np.ndarray, color) -> None:
    canvas[mask] = np.asarray(color, dtype=np.float64)


def _segment_mask(shape: tuple[int, int], p0, p1, width: float) -> np.ndarray:
    h, w = shape
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    ax, ay = p0
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        t = 0.0
    else:
        t = np.clip(((xs - ax) * dx + (ys - ay) * dy) / seg2, 0.0, 1.0)
    ex, ey = xs - (ax + t * dx), ys - (ay + t * dy)
    return ex * ex + ey * ey <= (0.5 * width) ** 2


def _blob_mask(shape: tuple[int, int], center, radius: float, kind: int) -> np.ndarray:
    h, w = shape
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    dx, dy = xs - center[0], ys - center[1]
    if kind == 0:
        return dx * dx + dy * dy <= radius * radius
    if kind == 1:
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    return np.abs(dx) + np.abs(dy) <= 1.2 * radius


def render_image(dataset: Dataset, image_id: int) -> np.ndarray:
    """Rasterize one image from its ground-truth records -> (H, W, 3) in [0, 1]."""
    im = dataset.image(image_id)
    shape = (im.height, im.width)
    canvas = np.empty((im.height, im.width, 3), dtype=np.float64)
    canvas[:, :] = BACKGROUND
    for h in dataset.humans_in(image_id):
        joints = h.gt_pose.joints
        for a, b in COCO_SKELETON:
            _paint(canvas, _segment_mask(shape, joints[a], joints[b], h.line_width), h.color)
    for o in dataset.objects_in(image_id):
        cx, cy = o.gt_box.center
        _paint(canvas, _blob_mask(shape, (cx, cy), o.size, o.category % 3), o.color)
    return canvas


def render_all(dataset: Dataset) -> np.ndarray:
    """Stack every image in id order -> (B, H, W, 3); sizes must agree."""
    sizes = {(im.width, im.height) for im in dataset.images}
    if len(sizes) > 1:
        raise ValueError(f"cannot stack mixed image sizes {sorted(sizes)}")
    return np.stack([render_image(dataset, im.id) for im in dataset.images])


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

DEFAULT_ACTIONS = (("hold", "wrist"), ("kick", "ankle"), ("look", "nose"), ("sit", "hip"))
DEFAULT_CATEGORIES = ("ball", "cup", "block")

# Canonical standing figure: x relative to body center and y from the head
# down, both in units of body height. Arm and leg segments come from the
# variant tables below.
_TORSO_TEMPLATE = {
    "nose": (0.0, 0.06),
    "left_eye": (-0.025, 0.045), "right_eye": (0.025, 0.045),
    "left_ear": (-0.055, 0.06), "right_ear": (0.055, 0.06),
    "left_shoulder": (-0.11, 0.22), "right_shoulder": (0.11, 0.22),
    "left_hip": (-0.07, 0.52), "right_hip": (0.07, 0.52),
}

_ARM_VARIANTS = (
    # (elbow, wrist), mirrored for the right side
    ((-0.16, 0.34), (-0.24, 0.44)),   # hanging, slightly out
    ((-0.20, 0.26), (-0.30, 0.30)),   # out to the side
    ((-0.18, 0.12), (-0.24, 0.00)),   # raised
)

_LEG_VARIANTS = (
    ((-0.08, 0.75), (-0.09, 0.97)),   # straight
    ((-0.12, 0.74), (-0.16, 0.96)),   # stance
)


@dataclass
class SyntheticSpec:
    """Parameters of the procedural dataset generator."""

    image_size: int = 64
    n_images: int = 200
    seed: int = 0
    humans_per_image: tuple[int, int] = (1, 2)
    objects_per_image: tuple[int, int] = (1, 3)
    actions: tuple[tuple[str, str], ...] = DEFAULT_ACTIONS
    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    proximity_frac: float = 0.15     # anchor radius as a fraction of human height
    positive_frac: float = 0.75      # chance an object is placed on some anchor
    box_jitter: float = 0.0          # detector box noise, fraction of box size
    pose_noise: float = 0.0          # keypoint noise, fraction of human height
    score_range: tuple[float, float] = (0.7, 1.0)

    def __post_init__(self):
        if self.image_size % 4 != 0:
            raise ValueError("image_size must be divisible by 4 (backbone stride)")
        if not self.actions:
            raise ValueError("need at least one action binding")
        for action, joint in self.actions:
            if not _binding_indices(joint):
                raise ValueError(f"action {action!r} bound to unknown joint {joint!r}")

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        with open(path) as f:
            doc = json.load(f)
        kwargs = dict(doc)
        if "actions" in kwargs:
            kwargs["actions"] = tuple((a, j) for a, j in kwargs["actions"])
        if "categories" in kwargs:
            kwargs["categories"] = tuple(kwargs["categories"])
        for key in ("humans_per_image", "objects_per_image", "score_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        known = set(cls.__dataclass_fields__)
        unknown = set(kwargs) - known
        if unknown:
            raise SchemaError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**kwargs)

    def to_json(self, path) -> None:
        doc = {
            "image_size": self.image_size, "n_images": self.n_images, "seed": self.seed,
            "humans_per_image": list(self.humans_per_image),
            "objects_per_image": list(self.objects_per_image),
            "actions": [list(pair) for pair in self.actions],
            "categories": list(self.categories),
            "proximity_frac": self.proximity_frac, "positive_frac": self.positive_frac,
            "box_jitter": self.box_jitter, "pose_noise": self.pose_noise,
            "score_range": list(self.score_range),
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=1)
            f.write("\n")


def _binding_indices(joint_name: str) -> list[int]:
    """Keypoint indices a binding name covers ('wrist' -> both wrists)."""
    return [
        i for i, n in enumerate(KEYPOINT_NAMES)
        if n == joint_name or n.endswith("_" + joint_name)
    ]


def _sample_pose(rng: np.random.Generator, cx: float, top: float, height: float) -> np.ndarray:
    rel = np.zeros((KEYPOINT_COUNT, 2))
    for name, (x, y) in _TORSO_TEMPLATE.items():
        rel[KEYPOINT_NAMES.index(name)] = (x, y)
    for side, sign in (("left", 1.0), ("right", -1.0)):
        (ex, ey), (wx, wy) = _ARM_VARIANTS[rng.integers(len(_ARM_VARIANTS))]
        rel[KEYPOINT_NAMES.index(f"{side}_elbow")] = (sign * -ex, ey)
        rel[KEYPOINT_NAMES.index(f"{side}_wrist")] = (sign * -wx, wy)
        (kx, ky), (ax, ay) = _LEG_VARIANTS[rng.integers(len(_LEG_VARIANTS))]
        rel[KEYPOINT_NAMES.index(f"{side}_knee")] = (sign * -kx, ky)
        rel[KEYPOINT_NAMES.index(f"{side}_ankle")] = (sign * -ax, ay)
    rel += rng.uniform(-0.015, 0.015, size=rel.shape)
    joints = np.empty_like(rel)
    joints[:, 0] = cx + rel[:, 0] * height
    joints[:, 1] = top + rel[:, 1] * height
    return joints


def _jitter_box(box: Box, frac: float, rng: np.random.Generator, width: int, height: int) -> Box:
    if frac <= 0:
        return box
    w, h = box.width, box.height
    x1 = box.x1 + rng.uniform(-frac, frac) * w
    x2 = box.x2 + rng.uniform(-frac, frac) * w
    y1 = box.y1 + rng.uniform(-frac, frac) * h
    y2 = box.y2 + rng.uniform(-frac, frac) * h
    x1, x2 = max(0.0, min(x1, x2 - 1e-3)), min(float(width), max(x2, x1 + 1e-3))
    y1, y2 = max(0.0, min(y1, y2 - 1e-3)), min(float(height), max(y2, y1 + 1e-3))
    return Box(x1, y1, x2, y2)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Build a dataset of rendered stick-figure scenes, deterministic in the seed."""
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    action_names = [a for a, _ in spec.actions]
    bindings = {a: j for a, j in spec.actions}
    anchor_table = [(ai, idx) for ai, (_, joint) in enumerate(spec.actions) for idx in _binding_indices(joint)]

    images, humans, objects, interactions = [], [], [], []
    human_id = object_id = 0
    for image_id in range(spec.n_images):
        images.append(ImageRecord(image_id, size, size))
        n_humans = int(rng.integers(spec.humans_per_image[0], spec.humans_per_image[1] + 1))
        n_objects = int(rng.integers(spec.objects_per_image[0], spec.objects_per_image[1] + 1))

        img_humans = []
        for slot in range(n_humans):
            height = rng.uniform(0.5 if n_humans > 1 else 0.55, 0.62 if n_humans > 1 else 0.8) * size
            margin = 0.32 * height
            if n_humans > 1:
                lane = size / n_humans
                cx = (slot + 0.5) * lane + rng.uniform(-0.08, 0.08) * lane
            else:
                cx = rng.uniform(margin, size - margin)
            cx = float(np.clip(cx, margin, size - margin))
            top = rng.uniform(0.02 * size, size - height - 0.02 * size)
            joints = _sample_pose(rng, cx, top, height)
            x1, y1 = joints.min(axis=0) - 0.05 * height
            x2, y2 = joints.max(axis=0) + 0.05 * height
            gt_box = Box(max(0.0, x1), max(0.0, y1), min(float(size), x2), min(float(size), y2))
            gt_pose = Pose(joints)
            noisy = joints + rng.uniform(-spec.pose_noise, spec.pose_noise, joints.shape) * height
            color = tuple(rng.uniform(0.55, 0.95, size=3).tolist())
            rec = HumanRecord(
                id=human_id, image_id=image_id,
                box=_jitter_box(gt_box, spec.box_jitter, rng, size, size),
                score=float(rng.uniform(*spec.score_range)),
                pose=Pose(noisy), gt_box=gt_box, gt_pose=gt_pose,
                color=color, line_width=float(max(1.6, 0.045 * height)),
            )
            humans.append(rec)
            img_humans.append(rec)
            human_id += 1

        all_anchors = []  # (human record, action index, joint xy, radius)
        for rec in img_humans:
            radius = spec.proximity_frac * rec.gt_box.height
            for ai, idx in anchor_table:
                all_anchors.append((rec, ai, rec.gt_pose.joints[idx], radius))

        for _ in range(n_objects):
            radius = rng.uniform(0.045, 0.07) * size
            placed = False
            for _attempt in range(200):
                if rng.uniform() < spec.positive_frac:
                    rec, ai, anchor, prox = all_anchors[rng.integers(len(all_anchors))]
                    angle = rng.uniform(0, 2 * np.pi)
                    dist = rng.uniform(0.0, 0.5 * prox)
                    cx = anchor[0] + dist * np.cos(angle)
                    cy = anchor[1] + dist * np.sin(angle)
                else:
                    cx = rng.uniform(radius + 1, size - radius - 1)
                    cy = rng.uniform(radius + 1, size - radius - 1)
                    near = any(
                        np.hypot(cx - a[0], cy - a[1]) < 1.5 * prox
                        for _, _, a, prox in all_anchors
                    )
                    if near:
                        continue
                if radius + 1 <= cx <= size - radius - 1 and radius + 1 <= cy <= size - radius - 1:
                    placed = True
                    break
            if not placed:
                raise GenerationError(f"image {image_id}: could not place an object after 200 attempts")
            gt_box = Box(cx - radius, cy - radius, cx + radius, cy + radius)
            rec = ObjectRecord(
                id=object_id, image_id=image_id,
                box=_jitter_box(gt_box, spec.box_jitter, rng, size, size),
                category=int(rng.integers(len(spec.categories))),
                score=float(rng.uniform(*spec.score_range)),
                gt_box=gt_box,
                color=tuple(rng.uniform(0.35, 1.0, size=3).tolist()),
                size=radius,
            )
            objects.append(rec)
            object_id += 1

        # ground-truth labels from the nearest-anchor rule, per pair
        for h in img_humans:
            radius = spec.proximity_frac * h.gt_box.height
            for o in objects:
                if o.image_id != image_id:
                    continue
                ocx, ocy = o.gt_box.center
                best_action, best_dist = None, np.inf
                for ai, idx in anchor_table:
                    jx, jy = h.gt_pose.joints[idx]
                    d = float(np.hypot(ocx - jx, ocy - jy))
                    if d < best_dist:
                        best_dist, best_action = d, ai
                if best_dist <= radius:
                    interactions.append(Interaction(h.id, o.id, (best_action,)))

    return Dataset(
        list(spec.categories), action_names, bindings, images, humans, objects, interactions
    )
