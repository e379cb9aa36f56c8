"""Pose-guided multi-level relation classification for human-object interaction detection."""

from .config import ModelConfig, TrainConfig
from .geometry import Box, HOIProposal, Pose, iou, match_pair, part_boxes, union_box
from .network import HOIModel, build_proposal_batch, final_score, relation_score
from .spatial import Skeleton, build_scm

__version__ = "0.1.0"

__all__ = [
    "Box",
    "HOIModel",
    "HOIProposal",
    "ModelConfig",
    "Pose",
    "Skeleton",
    "TrainConfig",
    "build_proposal_batch",
    "build_scm",
    "final_score",
    "iou",
    "match_pair",
    "part_boxes",
    "relation_score",
    "union_box",
]
