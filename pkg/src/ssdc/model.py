"""Toy grid detector with an optional spectral decoupling branch.

The backbone extracts a five-level pyramid from the raw image; when the
decoupling branch is on, the invariant image (inverse transform of the
filtered amplitude) feeds a matching spectral pyramid, and the two are
fused level by level. The head attends from grid-cell tokens over the cell
tokens plus the specific-information guidance tokens, and predicts
per-cell objectness and class logits.

Structure and parameters are separate: a `Detector` is reusable across
parameter dicts, which is what lets the teacher and student share code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import coupling, engine, said
from .engine import Tensor
from .filters import build_mode
from .rng import stream
from .spectral import batch_amp_phase, radial_field, spectral_to_image


@dataclass
class ModelCfg:
    grid: int = 8
    cell_px: int = 8
    n_classes: int = 3
    channels: int = 8
    said_mode: str = "soft"  # hard | soft | free
    n_filters: int = 100
    sigma_h: float = 0.1
    n_tokens: int = 8
    token_dim: int = 64
    low_pass_invariant: bool = False  # hard mode: put DI on the low-pass side
    use_said: bool = True
    use_coupling: bool = True  # late cross-attention + guidance tokens

    @property
    def image_px(self):
        return self.grid * self.cell_px


@dataclass
class ForwardOut:
    obj_logits: Tensor  # (B, cells, 2)
    cls_logits: Tensor  # (B, cells, n_classes)
    said_out: object  # SaidOutput or None
    gains: Tensor  # filter gains or None


class Detector:
    def __init__(self, cfg: ModelCfg):
        self.cfg = cfg
        px = cfg.image_px
        # the head reads the pyramid level whose spatial size equals the grid
        level_sizes = [px // 2 ** l for l in range(1, coupling.N_LEVELS + 1)]
        if cfg.grid not in level_sizes:
            raise ValueError(f"grid {cfg.grid} not among pyramid sizes {level_sizes}")
        self.head_level = level_sizes.index(cfg.grid) + 1
        self.radial = radial_field(px, px)
        self.mode = build_mode(cfg.said_mode, self.radial, cfg.n_filters, cfg.sigma_h,
                               cfg.low_pass_invariant) if cfg.use_said else None

    def init_params(self, seed: int) -> dict:
        cfg = self.cfg
        rng = stream(seed, "init")
        c = cfg.channels
        params = {}
        params.update(coupling.init_extractor_params(rng, 1, c, "backbone"))
        if cfg.use_said:
            params.update(self.mode.init_params(rng, "filter"))
            params.update(coupling.init_extractor_params(rng, 1, c, "specpyr"))
            for l in coupling.EARLY_LEVELS:
                params[f"couple.gate_w{l}"] = Tensor(rng.normal(0, 1 / np.sqrt(c), (c, c)), requires_grad=True)
                params[f"couple.gate_b{l}"] = Tensor(np.zeros(c), requires_grad=True)
            params["couple.alpha_early_raw"] = Tensor(np.zeros(len(coupling.EARLY_LEVELS)), requires_grad=True)
            if cfg.use_coupling:
                params["couple.alpha_late_raw"] = Tensor(np.zeros(len(coupling.LATE_LEVELS)), requires_grad=True)
                for l in coupling.LATE_LEVELS:
                    for name in ("wq", "wk", "wv"):
                        params[f"couple.{name}{l}"] = Tensor(
                            rng.normal(0, 1 / np.sqrt(c), (c, c)), requires_grad=True)
                params["tokens.w"] = Tensor(
                    rng.normal(0, 1 / np.sqrt(8), (8, cfg.n_tokens * cfg.token_dim)), requires_grad=True)
                params["tokens.b"] = Tensor(np.zeros(cfg.n_tokens * cfg.token_dim), requires_grad=True)
                params["tokens.proj"] = Tensor(
                    rng.normal(0, 1 / np.sqrt(cfg.token_dim), (cfg.token_dim, c)), requires_grad=True)
        for name in ("wq", "wk", "wv"):
            params[f"head.{name}"] = Tensor(rng.normal(0, 1 / np.sqrt(c), (c, c)), requires_grad=True)
        params["head.wo"] = Tensor(rng.normal(0, 1 / np.sqrt(c), (c, 2 + cfg.n_classes)), requires_grad=True)
        params["head.bo"] = Tensor(np.zeros(2 + cfg.n_classes), requires_grad=True)
        return params

    # ------------------------------------------------------------------
    def spectral_branch(self, params: dict, images: np.ndarray):
        """Decoupling chain, invariant image and guidance planes for a batch."""
        cfg = self.cfg
        b = images.shape[0]
        px = cfg.image_px
        gray = images.mean(axis=1) if images.shape[1] > 1 else images[:, 0]
        amp, phase = batch_amp_phase(gray)
        amp_flat = amp.reshape(b, -1)
        gains = self.mode.gains(params, np.log1p(amp_flat), "filter")
        out = said.decouple_batch(amp_flat, gains, phase, px, px)
        di_img = spectral_to_image(engine.reshape(out.di, (b, px, px)), phase)
        return out, di_img

    def guidance_planes(self, out: said.SaidOutput) -> Tensor:
        """(B, 2, H, W): log specific amplitude and gain-weighted phase."""
        b = out.ds.data.shape[0]
        h, w = out.height, out.width
        amp_plane = engine.reshape(engine.log1p(out.ds), (b, 1, h, w))
        comp = engine.sub(1.0, out.gains)
        phase_plane = engine.reshape(engine.mul(comp, out.phase.reshape(b, -1)), (b, 1, h, w))
        return engine.concat([amp_plane, phase_plane], axis=1)

    def forward(self, params: dict, images: np.ndarray) -> ForwardOut:
        """Cascaded trunk: each stage consumes the previous *fused* level, so
        every fusion point influences the head's predictions."""
        cfg = self.cfg
        b = images.shape[0]
        x = Tensor(np.asarray(images, dtype=np.float64))

        said_out = None
        gains = None
        ds_tokens = None
        f_inv = None
        if cfg.use_said:
            said_out, di_img = self.spectral_branch(params, images)
            gains = said_out.gains
            f_inv = coupling.extract_pyramid(
                engine.reshape(di_img, (b, 1, cfg.image_px, cfg.image_px)), params, "specpyr",
                coupling.SpectralPyramid)
            alpha_early = engine.sigmoid(params["couple.alpha_early_raw"])
            if cfg.use_coupling:
                alpha_late = engine.sigmoid(params["couple.alpha_late_raw"])
                planes = self.guidance_planes(said_out)
                toks = coupling.embed_ds_tokens(
                    planes, params["tokens.w"], params["tokens.b"], cfg.n_tokens, cfg.token_dim)
                flat = engine.reshape(toks.tokens, (b * cfg.n_tokens, cfg.token_dim))
                ds_tokens = engine.reshape(
                    engine.matmul(flat, params["tokens.proj"]), (b, cfg.n_tokens, cfg.channels))

        fused = []
        for l in range(1, coupling.N_LEVELS + 1):
            x = coupling.extractor_stage(x, params, "backbone", l)
            if cfg.use_said:
                if l in coupling.EARLY_LEVELS:
                    x = coupling.fuse_early(
                        x, f_inv.level(l), alpha_early[l - 1],
                        params[f"couple.gate_w{l}"], params[f"couple.gate_b{l}"])
                elif cfg.use_coupling:
                    fp = coupling.FusionParams(
                        alpha_late[l - coupling.LATE_LEVELS[0]], params[f"couple.wq{l}"],
                        params[f"couple.wk{l}"], params[f"couple.wv{l}"], cfg.channels)
                    x = coupling.fuse_late(x, f_inv.level(l), fp)
            fused.append(x)

        cells = coupling.to_tokens(fused[self.head_level - 1])  # (B, cells, C)
        bsz = cells.data.shape[0]
        context = engine.reshape(
            engine.mean(fused[-1], axis=(2, 3)), (bsz, 1, cfg.channels))
        obj_logits, cls_logits = self.head(params, cells, context, ds_tokens)
        return ForwardOut(obj_logits, cls_logits, said_out, gains)

    def head(self, params: dict, cells: Tensor, context: Tensor, ds_tokens):
        """Cells attend over cells + a global context token + guidance tokens."""
        cfg = self.cfg
        b, n_cells, c = cells.data.shape
        extras = [context] if ds_tokens is None else [context, ds_tokens]
        token_set = engine.concat([cells] + extras, axis=1)

        def project(t, w):
            s = t.data.shape[1]
            return engine.reshape(engine.matmul(engine.reshape(t, (b * s, c)), w), (b, s, c))

        q = project(cells, params["head.wq"])
        k = project(token_set, params["head.wk"])
        v = project(token_set, params["head.wv"])
        attn = engine.softmax(engine.mul(engine.bmm(q, engine.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(c)), axis=-1)
        ctx = engine.bmm(attn, v)
        h = engine.add(cells, ctx)
        logits = engine.add(
            engine.reshape(engine.matmul(engine.reshape(h, (b * n_cells, c)), params["head.wo"]),
                           (b, n_cells, 2 + cfg.n_classes)),
            params["head.bo"])
        return logits[:, :, :2], logits[:, :, 2:]


# ---------------------------------------------------------------------------
# targets, losses, predictions

def detection_targets(scenes, grid: int, n_classes: int):
    """One-hot objectness/class targets and the object mask for a batch."""
    b = len(scenes)
    cells = grid * grid
    obj = np.zeros((b, cells, 2))
    obj[:, :, 0] = 1.0
    cls = np.zeros((b, cells, n_classes))
    mask = np.zeros((b, cells))
    for i, scene in enumerate(scenes):
        for r, c, k in scene.boxes:
            idx = r * grid + c
            obj[i, idx] = (0.0, 1.0)
            cls[i, idx, k] = 1.0
            mask[i, idx] = 1.0
    return obj, cls, mask


def supervised_loss(obj_logits: Tensor, cls_logits: Tensor, scenes, grid: int, n_classes: int) -> Tensor:
    """Per-cell objectness cross-entropy plus class cross-entropy on object cells."""
    obj_t, cls_t, mask = detection_targets(scenes, grid, n_classes)
    ce_obj = engine.neg(engine.mean(
        engine.sum_(engine.mul(engine.log_softmax(obj_logits, -1), obj_t), axis=-1)))
    n_obj = max(1.0, float(mask.sum()))
    ce_cls = engine.div(engine.neg(engine.sum_(
        engine.mul(engine.sum_(engine.mul(engine.log_softmax(cls_logits, -1), cls_t), axis=-1), mask))), n_obj)
    return engine.add(ce_obj, ce_cls)


def pseudo_label_loss(obj_logits: Tensor, cls_logits: Tensor, mask: np.ndarray,
                      classes: np.ndarray, n_classes: int, negative_mask: np.ndarray = None):
    """Cross-entropy against retained teacher labels; exactly 0 when none kept.

    Retained object cells supervise objectness and class; confident
    background cells (negative_mask) supervise objectness only.
    """
    if negative_mask is None:
        negative_mask = np.zeros_like(mask)
    kept = float(mask.sum())
    n_total = kept + float(negative_mask.sum())
    if n_total == 0.0:
        return Tensor(0.0)
    b, cells = mask.shape
    obj_t = np.zeros((b, cells, 2))
    obj_t[:, :, 1] = mask
    obj_t[:, :, 0] = negative_mask
    either = (mask | negative_mask).astype(np.float64)
    ce_obj = engine.sum_(engine.mul(
        engine.sum_(engine.mul(engine.log_softmax(obj_logits, -1), obj_t), axis=-1), either))
    if kept > 0.0:
        cls_t = np.zeros((b, cells, n_classes))
        rows, cols = np.nonzero(mask)
        cls_t[rows, cols, classes[rows, cols]] = 1.0
        ce_cls = engine.sum_(engine.mul(
            engine.sum_(engine.mul(engine.log_softmax(cls_logits, -1), cls_t), axis=-1),
            mask.astype(np.float64)))
        total = engine.add(ce_obj, ce_cls)
    else:
        total = ce_obj
    return engine.div(engine.neg(total), n_total)


def predict(detector: Detector, params: dict, images: np.ndarray):
    """Gradient-free per-cell predictions: object prob, class id, class prob."""
    fwd = detector.forward(params, images)
    obj = fwd.obj_logits.data
    obj_prob = np.exp(obj[:, :, 1] - np.logaddexp(obj[:, :, 0], obj[:, :, 1]))
    cls_logits = fwd.cls_logits.data
    shifted = cls_logits - cls_logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)
    cls_id = probs.argmax(axis=-1)
    cls_prob = probs.max(axis=-1)
    return obj_prob, cls_id, cls_prob
