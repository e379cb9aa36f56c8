"""Static visualization: box/skeleton overlays, map channels, attention markers.

Overlays draw the human box in green, the object box in yellow, the union
box in blue, skeleton limbs in red, and one circle per keypoint whose fill
encodes its attention weight; keypoints above the highlight threshold get a
bright halo so informative parts stand out.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .geometry import Box, HOIProposal
from .spatial import COCO_SKELETON

HIGHLIGHT_THRESHOLD = 0.7

HUMAN_COLOR = (80, 220, 80)
OBJECT_COLOR = (240, 200, 40)
UNION_COLOR = (90, 140, 255)
LIMB_COLOR = (220, 60, 60)


def array_to_image(arr: np.ndarray) -> Image.Image:
    """(H, W, 3) floats in [0, 1] or (H, W) grayscale -> PIL image."""
    a = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    data = (a * 255.0).round().astype(np.uint8)
    if data.ndim == 2:
        return Image.fromarray(data, mode="L")
    return Image.fromarray(data, mode="RGB")


def scm_channel_images(scm: np.ndarray) -> list[Image.Image]:
    """One grayscale image per configuration-map channel."""
    return [array_to_image(scm[:, :, c]) for c in range(scm.shape[2])]


def _rect(draw: ImageDraw.ImageDraw, box: Box, color, width=1):
    draw.rectangle([box.x1, box.y1, box.x2, box.y2], outline=color, width=width)


def draw_overlay(
    image: np.ndarray,
    proposal: HOIProposal,
    beta: np.ndarray | None = None,
    union: Box | None = None,
    scale: int = 4,
    highlight: float = HIGHLIGHT_THRESHOLD,
) -> Image.Image:
    """Render one proposal over its image, upsampled by ``scale`` for legibility."""
    img = array_to_image(image).resize(
        (image.shape[1] * scale, image.shape[0] * scale), Image.NEAREST
    )
    draw = ImageDraw.Draw(img)

    def s(v):
        return v * scale

    joints = proposal.pose.joints
    for a, b in COCO_SKELETON:
        draw.line([s(joints[a][0]), s(joints[a][1]), s(joints[b][0]), s(joints[b][1])],
                  fill=LIMB_COLOR, width=max(1, scale // 2))
    if union is not None:
        draw.rectangle([s(union.x1), s(union.y1), s(union.x2), s(union.y2)],
                       outline=UNION_COLOR, width=1)
    draw.rectangle([s(proposal.human.x1), s(proposal.human.y1),
                    s(proposal.human.x2), s(proposal.human.y2)],
                   outline=HUMAN_COLOR, width=2)
    draw.rectangle([s(proposal.object.x1), s(proposal.object.y1),
                    s(proposal.object.x2), s(proposal.object.y2)],
                   outline=OBJECT_COLOR, width=2)

    if beta is not None:
        for k, (x, y) in enumerate(joints):
            w = float(beta[k])
            r = scale * (0.9 + 0.9 * w)
            fill = (int(40 + 215 * w), int(40 + 80 * w), 40)
            if w > highlight:
                halo = r + scale * 0.7
                draw.ellipse([s(x) - halo, s(y) - halo, s(x) + halo, s(y) + halo],
                             outline=(255, 255, 255), width=2)
            draw.ellipse([s(x) - r, s(y) - r, s(x) + r, s(y) + r], fill=fill)
    return img
