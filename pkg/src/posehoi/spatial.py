"""Spatial configuration maps: binary pair masks plus a graded skeleton raster.

Every human-object pair gets an m x m x 3 map expressed in the pair's union
frame (the union box stretched anisotropically onto the grid):

  channel 0  human box mask, values {0, 1}
  channel 1  object box mask, values {0, 1}
  channel 2  skeleton line raster, 0 for background and one fixed intensity
             per limb, evenly spaced over [0.05, 0.95]

Because everything is computed in the normalized union frame, uniformly
rescaling the image-space inputs leaves the map unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
import struct

import numpy as np

from .geometry import KEYPOINT_COUNT, Box, HOIProposal, Pose, union_box

# Limbs connecting the 17 COCO keypoints, drawn in this order (19 edges).
COCO_SKELETON = (
    (15, 13), (13, 11), (16, 14), (14, 12), (11, 12),
    (5, 11), (6, 12), (5, 6), (5, 7), (6, 8),
    (7, 9), (8, 10), (1, 2), (0, 1), (0, 2),
    (1, 3), (2, 4), (3, 5), (4, 6),
)

INTENSITY_LO = 0.05
INTENSITY_HI = 0.95
DEFAULT_MAP_SIZE = 64
DEFAULT_PEN_WIDTH = 3.0


@dataclass(frozen=True)
class Skeleton:
    """Ordered limb list with one raster intensity per limb."""

    edges: tuple[tuple[int, int], ...]
    intensities: np.ndarray  # (E,) strictly increasing over [0.05, 0.95]

    def __post_init__(self):
        for a, b in self.edges:
            if not (0 <= a < KEYPOINT_COUNT and 0 <= b < KEYPOINT_COUNT):
                raise ValueError(f"skeleton edge ({a}, {b}) out of joint range")
        intens = np.asarray(self.intensities, dtype=np.float64)
        if intens.shape != (len(self.edges),):
            raise ValueError("need exactly one intensity per edge")
        object.__setattr__(self, "intensities", intens)

    def __len__(self) -> int:
        return len(self.edges)

    @classmethod
    def coco(cls) -> "Skeleton":
        """The 19-limb COCO skeleton with uniformly spaced intensities."""
        e = len(COCO_SKELETON)
        intens = INTENSITY_LO + np.arange(e) * (INTENSITY_HI - INTENSITY_LO) / (e - 1)
        return cls(COCO_SKELETON, intens)


def _grid_centers(m: int) -> np.ndarray:
    return np.arange(m, dtype=np.float64) + 0.5


def rasterize_mask(box: Box, union: Box, m: int) -> np.ndarray:
    """Binary m x m mask of ``box`` in the union frame.

    Cell (r, c) is 1 iff its center, mapped back to image coordinates, lies
    inside ``box`` (boundary counts as inside). A box that misses the union
    entirely yields an all-zero grid.
    """
    if m < 1:
        raise ValueError(f"grid size must be >= 1, got {m}")
    # box corners expressed in grid coordinates
    gx1 = (box.x1 - union.x1) / union.width * m
    gx2 = (box.x2 - union.x1) / union.width * m
    gy1 = (box.y1 - union.y1) / union.height * m
    gy2 = (box.y2 - union.y1) / union.height * m
    cx = _grid_centers(m)
    cy = _grid_centers(m)
    in_x = (cx >= gx1) & (cx <= gx2)
    in_y = (cy >= gy1) & (cy <= gy2)
    return (in_y[:, None] & in_x[None, :]).astype(np.float64)


def rasterize_pose(
    pose: Pose,
    union: Box,
    m: int,
    skeleton: Skeleton | None = None,
    width: float = DEFAULT_PEN_WIDTH,
) -> np.ndarray:
    """Graded skeleton raster: one intensity per limb, pen width in grid pixels.

    Limbs are drawn in skeleton order; a cell belongs to a limb when its
    center lies within width/2 of the limb segment (measured in the m x m
    frame), and later limbs overwrite earlier ones. Cells touched by no limb
    stay 0.
    """
    if width <= 0:
        raise ValueError(f"pen width must be positive, got {width}")
    if skeleton is None:
        skeleton = Skeleton.coco()
    scale = np.array([m / union.width, m / union.height])
    origin = np.array([union.x1, union.y1])
    joints = (pose.joints - origin) * scale  # grid coordinates

    cx = _grid_centers(m)
    cy = _grid_centers(m)
    px, py = np.meshgrid(cx, cy)  # (m, m) each
    grid = np.zeros((m, m), dtype=np.float64)
    r2 = (0.5 * width) ** 2
    for (a, b), intensity in zip(skeleton.edges, skeleton.intensities):
        ax, ay = joints[a]
        dx, dy = joints[b] - joints[a]
        seg2 = dx * dx + dy * dy
        if seg2 == 0.0:
            t = 0.0
        else:
            t = np.clip(((px - ax) * dx + (py - ay) * dy) / seg2, 0.0, 1.0)
        ex = px - (ax + t * dx)
        ey = py - (ay + t * dy)
        grid[ex * ex + ey * ey <= r2] = intensity
    return grid


def build_scm(
    prop: HOIProposal,
    m: int = DEFAULT_MAP_SIZE,
    skeleton: Skeleton | None = None,
    width: float = DEFAULT_PEN_WIDTH,
) -> np.ndarray:
    """Spatial configuration map for one proposal: (m, m, 3) float array.

    Channels, in order: human mask, object mask, skeleton raster, all in the
    frame of union_box(human, object).
    """
    union = union_box(prop.human, prop.object)
    return np.stack(
        [
            rasterize_mask(prop.human, union, m),
            rasterize_mask(prop.object, union, m),
            rasterize_pose(prop.pose, union, m, skeleton, width),
        ],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# Portable grid files
#
# Fixture grids (golden maps and similar) are stored in a tiny raw format:
#
#   bytes 0..3   magic b"SCMF"
#   bytes 4..7   format version, uint32 little-endian (currently 1)
#   bytes 8..19  height, width, channels - three uint32 little-endian
#   bytes 20..   payload: float32 little-endian, C order (row, col, channel)
#
# Channel order for configuration maps is human, object, skeleton.
# ---------------------------------------------------------------------------

GRID_MAGIC = b"SCMF"
GRID_VERSION = 1


def save_grid(path, grid: np.ndarray) -> None:
    """Write a 2-D or 3-D float grid in the raw fixture format."""
    arr = np.asarray(grid, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"grid must be 2-D or 3-D, got shape {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<IIII", GRID_VERSION, h, w, c))
        f.write(np.ascontiguousarray(arr).astype("<f4").tobytes())


def load_grid(path) -> np.ndarray:
    """Read a grid written by save_grid; returns float32 (h, w, c)."""
    with open(path, "rb") as f:
        header = f.read(20)
        if len(header) < 20 or header[:4] != GRID_MAGIC:
            raise ValueError(f"{path}: not a grid file (bad magic)")
        version, h, w, c = struct.unpack("<IIII", header[4:])
        if version != GRID_VERSION:
            raise ValueError(f"{path}: unsupported grid version {version}")
        payload = f.read()
    expected = h * w * c * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: truncated grid payload ({len(payload)} != {expected} bytes)")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).copy()
