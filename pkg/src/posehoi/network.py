"""The multi-branch relation network and its hand-written backward pass.

Per human-object proposal the model reasons at three levels:

  holistic   human / object / union feature crops plus (optionally) the
             spatial configuration map, each embedded by a two-layer MLP and
             concatenated;
  zoom-in    feature crops around each of the 17 keypoints plus the object,
             optionally augmented with object-centered offset channels and
             reweighted by a learned per-part attention predicted from the
             configuration map;
  fusion     an affinity head ("is there any interaction?") gating a
             per-action relation head.

Five switches (scm, pc, spalign, seatten, ia) disable the corresponding
component structurally: a disabled component contributes no parameters, and
its absence is mathematically identical to fixing its output at the neutral
element (attention 1, affinity 1, no offset channels).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .checkpoint import CheckpointMismatchError
from .config import ModelConfig
from .features import Backbone, coordinate_map, roi_align_backward, roi_align_batch
from .geometry import HOIProposal, part_boxes, union_box
from .layers import TwoLayerMLP, sigmoid
from .spatial import Skeleton, build_scm


class HolisticModule:
    """Embeds the human, object, union, and optional map branches (concatenated)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64):
        crop_dim = cfg.r_h * cfg.r_h * cfg.d
        self.human = TwoLayerMLP(crop_dim, cfg.d_hol, cfg.d_hol, rng, dtype)
        self.object = TwoLayerMLP(crop_dim, cfg.d_hol, cfg.d_hol, rng, dtype)
        self.union = TwoLayerMLP(crop_dim, cfg.d_hol, cfg.d_hol, rng, dtype)
        self.spatial = None
        if cfg.scm:
            self.spatial = TwoLayerMLP(cfg.m * cfg.m * 3, cfg.d_hol, cfg.d_hol, rng, dtype)
        self.out_dim = (4 if cfg.scm else 3) * cfg.d_hol
        self.d_hol = cfg.d_hol

    def forward(self, crop_h, crop_o, crop_u, scm_flat):
        feats = [
            self.human.forward(crop_h),
            self.object.forward(crop_o),
            self.union.forward(crop_u),
        ]
        if self.spatial is not None:
            feats.append(self.spatial.forward(scm_flat))
        return np.concatenate(feats, axis=1)

    def backward(self, grad):
        d = self.d_hol
        g_h = self.human.backward(grad[:, :d])
        g_o = self.object.backward(grad[:, d : 2 * d])
        g_u = self.union.backward(grad[:, 2 * d : 3 * d])
        if self.spatial is not None:
            self.spatial.backward(grad[:, 3 * d :], need_input_grad=False)
        return g_h, g_o, g_u

    def zero_grad(self):
        for mlp in (self.human, self.object, self.union, self.spatial):
            if mlp is not None:
                mlp.zero_grad()

    def params(self, prefix):
        out = (
            self.human.params(f"{prefix}.human")
            + self.object.params(f"{prefix}.object")
            + self.union.params(f"{prefix}.union")
        )
        if self.spatial is not None:
            out += self.spatial.params(f"{prefix}.spatial")
        return out


class SemanticAttention:
    """Per-keypoint attention in (0, 1), predicted from the configuration map.

    The object region is not attended; it always enters the zoom-in stack
    with weight 1.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64):
        self.mlp = TwoLayerMLP(cfg.m * cfg.m * 3, cfg.d_hol, cfg.k, rng, dtype)
        self._beta = None

    def forward(self, scm_flat):
        self._beta = sigmoid(self.mlp.forward(scm_flat))
        return self._beta

    def backward(self, gbeta):
        self.mlp.backward(gbeta * self._beta * (1.0 - self._beta), need_input_grad=False)

    def zero_grad(self):
        self.mlp.zero_grad()

    def params(self, prefix):
        return self.mlp.params(f"{prefix}.mlp")


class ZoomInModule:
    """Attention-weighted part features, stacked with the object and embedded."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64):
        self.k = cfg.k
        self.r_p = cfg.r_p
        self.spalign = cfg.spalign
        self.c_in = cfg.d + (2 if cfg.spalign else 0)
        n_in = (cfg.k + 1) * cfg.r_p * cfg.r_p * self.c_in
        self.embed = TwoLayerMLP(n_in, cfg.d_loc, cfg.d_loc, rng, dtype)
        self.d = cfg.d

    def forward(self, parts, obj, alpha_parts, alpha_obj, beta):
        """parts (n,K,r,r,D), obj (n,r,r,D), alphas carry 2 offset channels,
        beta (n,K); returns the local embedding (n, d_loc)."""
        n = parts.shape[0]
        if self.spalign:
            fp = np.concatenate([parts, alpha_parts], axis=-1)
            fo = np.concatenate([obj, alpha_obj], axis=-1)
        else:
            fp, fo = parts, obj
        fpp = beta[:, :, None, None, None] * fp
        f_att = np.concatenate([fpp.reshape(n, -1), fo.reshape(n, -1)], axis=1)
        self._fp = fp
        self._beta = beta
        return self.embed.forward(f_att)

    def backward(self, grad):
        n = grad.shape[0]
        k, r, c = self.k, self.r_p, self.c_in
        g_att = self.embed.backward(grad)
        split = k * r * r * c
        gfpp = g_att[:, :split].reshape(n, k, r, r, c)
        gfo = g_att[:, split:].reshape(n, r, r, c)
        gbeta = (gfpp * self._fp).sum(axis=(2, 3, 4))
        gfp = gfpp * self._beta[:, :, None, None, None]
        if self.spalign:
            return gfp[..., : self.d], gfo[..., : self.d], gbeta
        return gfp, gfo, gbeta

    def zero_grad(self):
        self.embed.zero_grad()

    def params(self, prefix):
        return self.embed.params(f"{prefix}.embed")


class FusionModule:
    """Affinity score from the holistic feature; per-action scores from both levels."""

    def __init__(self, cfg: ModelConfig, hol_dim: int, loc_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.loc_dim = loc_dim
        self.dtype = dtype
        self.relation = TwoLayerMLP(loc_dim + hol_dim, cfg.d_hol, cfg.a, rng, dtype)
        self.affinity = TwoLayerMLP(hol_dim, cfg.d_hol, 1, rng, dtype) if cfg.ia else None

    def forward(self, gamma_hol, gamma_loc):
        zin = gamma_hol if gamma_loc is None else np.concatenate([gamma_loc, gamma_hol], axis=1)
        self._s_l = sigmoid(self.relation.forward(zin))
        if self.affinity is not None:
            self._s_g = sigmoid(self.affinity.forward(gamma_hol)[:, 0])
        else:
            self._s_g = np.ones(gamma_hol.shape[0], dtype=self.dtype)
        return self._s_l, self._s_g

    def backward(self, gs_l, gs_g):
        gin = self.relation.backward(gs_l * self._s_l * (1.0 - self._s_l))
        if self.loc_dim:
            g_loc, g_hol = gin[:, : self.loc_dim], gin[:, self.loc_dim :]
        else:
            g_loc, g_hol = None, gin
        if self.affinity is not None and gs_g is not None:
            glogit = gs_g * self._s_g * (1.0 - self._s_g)
            g_hol = g_hol + self.affinity.backward(glogit[:, None])
        return g_hol, g_loc

    def zero_grad(self):
        self.relation.zero_grad()
        if self.affinity is not None:
            self.affinity.zero_grad()

    def params(self, prefix):
        out = self.relation.params(f"{prefix}.relation")
        if self.affinity is not None:
            out += self.affinity.params(f"{prefix}.affinity")
        return out


def relation_score(s_l: np.ndarray, s_g) -> np.ndarray:
    """Per-action relation score: local score gated by the affinity score."""
    s_l = np.asarray(s_l, dtype=np.float64)
    return s_l * np.asarray(s_g, dtype=np.float64)[..., None]


def final_score(s_ho: np.ndarray, s_h, s_o) -> np.ndarray:
    """Soft fusion with the detector scores of both entities."""
    s_ho = np.asarray(s_ho, dtype=np.float64)
    factor = np.asarray(s_h, dtype=np.float64) * np.asarray(s_o, dtype=np.float64)
    return s_ho * factor[..., None]


@dataclass
class ProposalBatch:
    """Geometry-derived model inputs for n proposals, precomputable once.

    ``regions`` holds the K part boxes plus the object box (K+1 per
    proposal); ``alpha`` holds the matching crops of the object-centered
    coordinate map. Only the feature crops depend on network parameters, so
    everything here is cached across training steps.
    """

    img_idx: np.ndarray      # (n,) index into the image stack
    human: np.ndarray        # (n, 4)
    object: np.ndarray       # (n, 4)
    union: np.ndarray        # (n, 4)
    regions: np.ndarray      # (n, K+1, 4)
    scm: np.ndarray          # (n, m, m, 3)
    alpha: np.ndarray        # (n, K+1, r_p, r_p, 2)
    s_h: np.ndarray          # (n,)
    s_o: np.ndarray          # (n,)
    gates: np.ndarray        # (n, K) keypoint-confidence gates (all ones unless enabled)

    def __len__(self) -> int:
        return self.img_idx.shape[0]

    def select(self, rows) -> "ProposalBatch":
        rows = np.asarray(rows)
        return ProposalBatch(
            self.img_idx[rows], self.human[rows], self.object[rows], self.union[rows],
            self.regions[rows], self.scm[rows], self.alpha[rows],
            self.s_h[rows], self.s_o[rows], self.gates[rows],
        )


def build_proposal_batch(
    cfg: ModelConfig,
    proposals: Sequence[HOIProposal],
    img_idx: Sequence[int],
    image_size: tuple[int, int],
    skeleton: Skeleton | None = None,
) -> ProposalBatch:
    """Precompute configuration maps, regions, and offset crops for proposals.

    ``image_size`` is (width, height) shared by every referenced image.
    """
    from .features import BACKBONE_STRIDE

    if skeleton is None:
        skeleton = Skeleton.coco()
    n = len(proposals)
    w, h = image_size
    stride = BACKBONE_STRIDE
    fshape = (h // stride, w // stride)
    kp1 = cfg.k + 1

    humans = np.zeros((n, 4))
    objects = np.zeros((n, 4))
    unions = np.zeros((n, 4))
    regions = np.zeros((n, kp1, 4))
    scms = np.zeros((n, cfg.m, cfg.m, 3))
    alphas = np.zeros((n, kp1, cfg.r_p, cfg.r_p, 2))
    s_h = np.zeros(n)
    s_o = np.zeros(n)
    gates = np.ones((n, cfg.k))

    zeros = np.zeros(kp1, dtype=np.int64)
    for i, prop in enumerate(proposals):
        humans[i] = prop.human.as_array()
        objects[i] = prop.object.as_array()
        unions[i] = union_box(prop.human, prop.object).as_array()
        pboxes = part_boxes(prop.pose, prop.human, cfg.gamma, (w, h))
        regions[i, : cfg.k] = np.stack([b.as_array() for b in pboxes])
        regions[i, cfg.k] = objects[i]
        scms[i] = build_scm(prop, cfg.m, skeleton, cfg.pen_width)
        cmap = coordinate_map(fshape, prop.object, stride)
        alphas[i], _ = roi_align_batch(
            cmap[None], zeros, regions[i], cfg.r_p, stride, cfg.samples
        )
        s_h[i] = prop.s_h
        s_o[i] = prop.s_o
        if cfg.gate_joints and prop.pose.confidence is not None:
            gates[i] = (prop.pose.confidence >= cfg.gate_threshold).astype(np.float64)
    return ProposalBatch(
        np.asarray(img_idx, dtype=np.int64), humans, objects, unions,
        regions, scms, alphas, s_h, s_o, gates,
    )


class HOIModel:
    """Backbone plus relation heads, with forward and backward over a batch.

    Each submodule draws its initial weights from an independent seeded
    stream, so toggling one ablation switch leaves every other module's
    initialization bit-identical.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        dt = self.dtype
        self.backbone = Backbone(cfg.d, np.random.default_rng([seed, 0]), dtype=dt)
        self.holistic = HolisticModule(cfg, np.random.default_rng([seed, 1]), dt)
        self.attention = (
            SemanticAttention(cfg, np.random.default_rng([seed, 2]), dt)
            if cfg.seatten and cfg.pc
            else None
        )
        self.zoomin = ZoomInModule(cfg, np.random.default_rng([seed, 3]), dt) if cfg.pc else None
        loc_dim = cfg.d_loc if cfg.pc else 0
        self.fusion = FusionModule(cfg, self.holistic.out_dim, loc_dim, np.random.default_rng([seed, 4]), dt)

    # -- forward / backward -------------------------------------------------

    def forward(self, images: np.ndarray, pb: ProposalBatch, beta_override=None):
        """Score a batch of proposals against their images.

        Returns (s_l (n, A), s_g (n,), beta (n, K)). ``beta_override``
        bypasses the attention network (used for equivalence tests).
        """
        cfg = self.cfg
        dt = self.dtype
        n = len(pb)
        fms = self.backbone.forward(images)
        stride = self.backbone.stride

        hol_boxes = np.concatenate([pb.human, pb.object, pb.union], axis=0)
        hol_idx = np.concatenate([pb.img_idx] * 3)
        hol_crops, hol_cache = roi_align_batch(fms, hol_idx, hol_boxes, cfg.r_h, stride, cfg.samples)
        crop_dim = cfg.r_h * cfg.r_h * cfg.d
        flat = hol_crops.reshape(3, n, crop_dim)
        scm_flat = pb.scm.reshape(n, -1).astype(dt, copy=False)
        gamma_hol = self.holistic.forward(flat[0], flat[1], flat[2], scm_flat)

        if beta_override is not None:
            beta = np.asarray(beta_override, dtype=dt)
        elif self.attention is not None:
            beta = self.attention.forward(scm_flat)
        else:
            beta = np.ones((n, cfg.k), dtype=dt)
        beta_eff = beta * pb.gates.astype(dt, copy=False)

        gamma_loc = None
        part_cache = None
        if self.zoomin is not None:
            kp1 = cfg.k + 1
            region_boxes = pb.regions.reshape(n * kp1, 4)
            region_idx = np.repeat(pb.img_idx, kp1)
            crops, part_cache = roi_align_batch(fms, region_idx, region_boxes, cfg.r_p, stride, cfg.samples)
            crops = crops.reshape(n, kp1, cfg.r_p, cfg.r_p, cfg.d)
            alpha = pb.alpha.astype(dt, copy=False)
            gamma_loc = self.zoomin.forward(
                crops[:, : cfg.k], crops[:, cfg.k],
                alpha[:, : cfg.k], alpha[:, cfg.k], beta_eff,
            )

        s_l, s_g = self.fusion.forward(gamma_hol, gamma_loc)
        self._cache = (fms.shape, hol_cache, part_cache, pb, beta_override is not None)
        return s_l, s_g, beta

    def backward(self, gs_l: np.ndarray, gs_g: Optional[np.ndarray]):
        """Accumulate parameter gradients from score gradients."""
        cfg = self.cfg
        fms_shape, hol_cache, part_cache, pb, beta_fixed = self._cache
        n = len(pb)
        gs_l = np.asarray(gs_l, dtype=self.dtype)
        if gs_g is not None:
            gs_g = np.asarray(gs_g, dtype=self.dtype)

        g_hol, g_loc = self.fusion.backward(gs_l, gs_g)
        gfms = np.zeros(fms_shape, dtype=self.dtype)

        if self.zoomin is not None:
            gparts, gobj, gbeta = self.zoomin.backward(g_loc)
            kp1 = cfg.k + 1
            gcrops = np.concatenate([gparts, gobj[:, None]], axis=1)
            gcrops = gcrops.reshape(n * kp1, cfg.r_p, cfg.r_p, cfg.d)
            gfms += roi_align_backward(part_cache, gcrops)
            if self.attention is not None and not beta_fixed:
                self.attention.backward(gbeta * pb.gates.astype(self.dtype, copy=False))

        g_h, g_o, g_u = self.holistic.backward(g_hol)
        crop_shape = (n, cfg.r_h, cfg.r_h, cfg.d)
        ghol_crops = np.concatenate(
            [g_h.reshape(crop_shape), g_o.reshape(crop_shape), g_u.reshape(crop_shape)], axis=0
        )
        gfms += roi_align_backward(hol_cache, ghol_crops)
        self.backbone.backward(gfms)

    def predict(self, images: np.ndarray, pb: ProposalBatch):
        """Forward pass plus score fusion; returns a dict of arrays."""
        s_l, s_g, beta = self.forward(images, pb)
        s_ho = relation_score(s_l, s_g)
        r = final_score(s_ho, pb.s_h, pb.s_o)
        return {"s_l": s_l, "s_g": s_g, "beta": beta, "s_ho": s_ho, "r": r}

    # -- parameter plumbing --------------------------------------------------

    def modules(self):
        mods = [("backbone", self.backbone), ("holistic", self.holistic)]
        if self.attention is not None:
            mods.append(("attention", self.attention))
        if self.zoomin is not None:
            mods.append(("zoomin", self.zoomin))
        mods.append(("fusion", self.fusion))
        return mods

    def named_parameters(self):
        """List of (name, parameter array, gradient array), stable order."""
        out = []
        for name, mod in self.modules():
            out += mod.params(name)
        return out

    def zero_grad(self):
        for _, mod in self.modules():
            mod.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p, _ in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = {name: p for name, p, _ in self.named_parameters()}
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise CheckpointMismatchError(
                f"parameter names do not match the model: missing {missing}, unexpected {extra}"
            )
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise CheckpointMismatchError(
                    f"parameter {name!r} has shape {value.shape}, model expects {p.shape}"
                )
            p[...] = value
