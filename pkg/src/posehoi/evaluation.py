"""Role average precision per action with dual-IoU matching, plus inference glue.

A detection is a true positive when an unmatched ground-truth pair in the
same image overlaps it with IoU above the threshold for the human box and
the object box simultaneously, and no ground truth is matched twice within
one action. AP integrates the precision envelope over all recall points
(continuous interpolation); mAP averages over actions that have at least one
ground truth, and actions without any are reported as undefined.

Detections and ground truth travel as line-delimited JSON:

    {"image_id": 3, "human_box": [...], "object_box": [...],
     "object_class": 1, "action_id": 2, "score": 0.83}
    {"image_id": 3, "human_box": [...], "object_box": [...],
     "object_class": 1, "actions": [2]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, pair_proposals, pair_records
from .geometry import Box, match_boxes


@dataclass(frozen=True)
class Detection:
    image_id: int
    human: Box
    object: Box
    object_class: int
    action_id: int
    score: float


@dataclass(frozen=True)
class GroundTruthPair:
    image_id: int
    human: Box
    object: Box
    object_class: int
    actions: frozenset


@dataclass
class ActionResult:
    ap: Optional[float]       # None when the action has no ground truth
    n_gt: int
    n_det: int
    precisions: list[float] = field(default_factory=list)
    recalls: list[float] = field(default_factory=list)


@dataclass
class EvalReport:
    per_action: dict[int, ActionResult]
    map: Optional[float]
    undefined_actions: list[int]

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "undefined_actions": self.undefined_actions,
            "per_action": {
                str(a): {
                    "ap": r.ap, "n_gt": r.n_gt, "n_det": r.n_det,
                    "precisions": r.precisions, "recalls": r.recalls,
                }
                for a, r in self.per_action.items()
            },
        }

    def save_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)
            f.write("\n")

    def table(self, action_names: Optional[Sequence[str]] = None) -> str:
        lines = [f"{'action':>10}  {'AP':>8}  {'n_gt':>6}  {'n_det':>6}"]
        for a in sorted(self.per_action):
            r = self.per_action[a]
            name = action_names[a] if action_names and a < len(action_names) else str(a)
            ap = "undef" if r.ap is None else f"{r.ap:.4f}"
            lines.append(f"{name:>10}  {ap:>8}  {r.n_gt:>6}  {r.n_det:>6}")
        map_text = "undef" if self.map is None else f"{self.map:.4f}"
        lines.append(f"{'mAP':>10}  {map_text:>8}")
        return "\n".join(lines)


def average_precision(tp: np.ndarray, n_gt: int) -> tuple[float, np.ndarray, np.ndarray]:
    """AP from per-rank true-positive flags via the precision envelope.

    Returns (ap, precisions, recalls) where the PR arrays hold one point per
    detection in rank order.
    """
    tp = np.asarray(tp, dtype=np.float64)
    cum_tp = np.cumsum(tp)
    precisions = cum_tp / np.arange(1, tp.size + 1)
    recalls = cum_tp / n_gt
    if tp.size == 0:
        return 0.0, precisions, recalls
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    prev = 0.0
    ap = 0.0
    for r, p in zip(recalls, envelope):
        ap += (r - prev) * p
        prev = r
    return float(ap), precisions, recalls


def evaluate(
    detections: Sequence[Detection],
    ground_truth: Sequence[GroundTruthPair],
    iou_thr: float = 0.5,
    require_object_class: bool = False,
    n_actions: Optional[int] = None,
    known_images: Optional[set] = None,
) -> EvalReport:
    """Greedy score-ranked matching per action, then AP and mAP.

    ``known_images`` is the id universe detections may reference; when given,
    a detection outside it is an error (ground truth alone cannot define the
    universe since images may contain no positive pair).
    """
    if known_images is not None:
        for det in detections:
            if det.image_id not in known_images:
                raise ValueError(f"detection references unknown image id {det.image_id}")

    actions = set()
    for g in ground_truth:
        actions.update(g.actions)
    for det in detections:
        actions.add(det.action_id)
    if n_actions is not None:
        actions.update(range(n_actions))

    per_action: dict[int, ActionResult] = {}
    undefined = []
    for action in sorted(actions):
        gts = [g for g in ground_truth if action in g.actions]
        dets = [d for d in detections if d.action_id == action]
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].image_id, i))
        if not gts:
            per_action[action] = ActionResult(None, 0, len(dets))
            undefined.append(action)
            continue
        gt_by_image: dict[int, list[int]] = {}
        for gi, g in enumerate(gts):
            gt_by_image.setdefault(g.image_id, []).append(gi)
        used: set[int] = set()
        tp = np.zeros(len(dets))
        for rank, di in enumerate(order):
            det = dets[di]
            candidates = [
                gi for gi in gt_by_image.get(det.image_id, [])
                if not require_object_class or gts[gi].object_class == det.object_class
            ]
            boxes = [(gts[gi].human, gts[gi].object) for gi in candidates]
            exclude = [j for j, gi in enumerate(candidates) if gi in used]
            best = match_boxes(det.human, det.object, boxes, iou_thr, exclude)
            if best is not None:
                used.add(candidates[best])
                tp[rank] = 1.0
        ap, precisions, recalls = average_precision(tp, len(gts))
        per_action[action] = ActionResult(ap, len(gts), len(dets), precisions.tolist(), recalls.tolist())

    defined = [r.ap for r in per_action.values() if r.ap is not None]
    mean_ap = float(np.mean(defined)) if defined else None
    return EvalReport(per_action, mean_ap, undefined)


def split_report(report: EvalReport, partition: dict[str, Sequence[int]]) -> dict[str, Optional[float]]:
    """Mean AP within each named action group; the groups must cover all actions."""
    covered = set()
    for ids in partition.values():
        covered.update(ids)
    missing = set(report.per_action) - covered
    if missing:
        raise ValueError(f"partition does not cover actions {sorted(missing)}")
    out: dict[str, Optional[float]] = {}
    for name, ids in partition.items():
        aps = [report.per_action[a].ap for a in ids if a in report.per_action and report.per_action[a].ap is not None]
        out[name] = float(np.mean(aps)) if aps else None
    return out


# ---------------------------------------------------------------------------
# Dataset adapters and line-delimited JSON
# ---------------------------------------------------------------------------


def dataset_ground_truth(dataset: Dataset) -> list[GroundTruthPair]:
    """Ground-truth pairs (true boxes) for the evaluator."""
    humans = {h.id: h for h in dataset.humans}
    objects = {o.id: o for o in dataset.objects}
    out = []
    for inter in dataset.interactions:
        h, o = humans[inter.human_id], objects[inter.object_id]
        out.append(GroundTruthPair(h.image_id, h.gt_box, o.gt_box, o.category, frozenset(inter.actions)))
    return out


def save_detections_jsonl(detections: Sequence[Detection], path) -> None:
    with open(path, "w") as f:
        for d in detections:
            f.write(json.dumps({
                "image_id": d.image_id,
                "human_box": [d.human.x1, d.human.y1, d.human.x2, d.human.y2],
                "object_box": [d.object.x1, d.object.y1, d.object.x2, d.object.y2],
                "object_class": d.object_class,
                "action_id": d.action_id,
                "score": d.score,
            }) + "\n")


def load_detections_jsonl(path) -> list[Detection]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append(Detection(
                int(d["image_id"]), Box(*d["human_box"]), Box(*d["object_box"]),
                int(d["object_class"]), int(d["action_id"]), float(d["score"]),
            ))
    return out


def save_ground_truth_jsonl(gts: Sequence[GroundTruthPair], path) -> None:
    with open(path, "w") as f:
        for g in gts:
            f.write(json.dumps({
                "image_id": g.image_id,
                "human_box": [g.human.x1, g.human.y1, g.human.x2, g.human.y2],
                "object_box": [g.object.x1, g.object.y1, g.object.x2, g.object.y2],
                "object_class": g.object_class,
                "actions": sorted(g.actions),
            }) + "\n")


def load_ground_truth_jsonl(path) -> list[GroundTruthPair]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append(GroundTruthPair(
                int(d["image_id"]), Box(*d["human_box"]), Box(*d["object_box"]),
                int(d["object_class"]), frozenset(int(a) for a in d["actions"]),
            ))
    return out


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def predict_image(model, dataset: Dataset, image_id: int) -> dict:
    """Score every proposal of one image; returns proposals, records, and scores."""
    from .data import render_image
    from .network import build_proposal_batch

    im = dataset.image(image_id)
    proposals = pair_proposals(dataset, image_id)
    records = pair_records(dataset, image_id)
    if not proposals:
        return {"proposals": [], "records": [], "scores": None}
    pb = build_proposal_batch(model.cfg, proposals, [0] * len(proposals), (im.width, im.height))
    images = render_image(dataset, image_id)[None]
    scores = model.predict(images, pb)
    return {"proposals": proposals, "records": records, "scores": scores}


def run_inference(model, dataset: Dataset, score_threshold: float = 0.0) -> list[Detection]:
    """Emit one detection per (proposal, action) whose fused score clears the threshold."""
    detections = []
    for im in dataset.images:
        result = predict_image(model, dataset, im.id)
        if result["scores"] is None:
            continue
        r = result["scores"]["r"]
        for i, prop in enumerate(result["proposals"]):
            for action in range(r.shape[1]):
                if r[i, action] > score_threshold:
                    detections.append(Detection(
                        im.id, prop.human, prop.object, prop.object_class,
                        action, float(r[i, action]),
                    ))
    return detections
