"""Two-stage mean-teacher training on synthetic multi-subdomain scenes.

Stage one (burn-in) trains the student on labeled source scenes with the
detection loss plus the spectral decoupling loss. Stage two initializes
the teacher from the student, then alternates: the teacher pseudo-labels
weakly augmented target scenes, the student trains on strongly augmented
views plus the source losses, the teacher tracks the student by EMA, and
the student is periodically pulled back toward the teacher.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .data import SceneSet, augment_strong, augment_weak
from .engine import Tape, Tensor, sgd_step
from .model import Detector, pseudo_label_loss, predict, supervised_loss
from .rng import stream
from .said import DecoupleLossCfg, decouple_loss

log = logging.getLogger("ssdc.trainer")

METRIC_COLUMNS = ("iteration", "l_sup", "l_dcp", "l_mt", "pseudo_count", "eval_acc")


@dataclass
class EmaSsmCfg:
    alpha_ema: float = 0.9996
    alpha_ssm: float = 0.5
    ssm_step: int = 500

    def __post_init__(self):
        if not (0.0 <= self.alpha_ema <= 1.0 and 0.0 <= self.alpha_ssm <= 1.0):
            raise ValueError("alpha_ema and alpha_ssm must lie in [0, 1]")
        if self.ssm_step < 1:
            raise ValueError(f"ssm_step must be >= 1, got {self.ssm_step}")


@dataclass
class TrainCfg:
    burn_in_steps: int = 500
    mutual_steps: int = 2000
    batch_source: int = 4
    batch_target: int = 4
    lr: float = 0.01
    conf_threshold: float = 0.7
    use_ssm: bool = True
    eval_every: int = 0  # 0: only final evaluation
    source_only: bool = False
    ema: EmaSsmCfg = field(default_factory=EmaSsmCfg)
    said: DecoupleLossCfg = field(default_factory=DecoupleLossCfg)


@dataclass
class PseudoLabelBatch:
    """Teacher labels kept above the confidence threshold.

    ``mask`` marks retained object labels (confidence = min of objectness
    and class probability); ``negative_mask`` marks cells the teacher is
    confident are background, which get objectness-only supervision.
    """

    scenes: list
    mask: np.ndarray  # (B, cells) bool, True where an object label was retained
    classes: np.ndarray  # (B, cells) int
    confidence: np.ndarray  # (B, cells) float
    threshold: float
    negative_mask: np.ndarray = None

    def __post_init__(self):
        if self.mask.any() and self.confidence[self.mask].min() < self.threshold:
            raise ValueError("retained pseudo-label below the confidence threshold")
        if self.negative_mask is None:
            self.negative_mask = np.zeros_like(self.mask)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


class ModelState:
    """Student/teacher parameter pair with identical manifests."""

    def __init__(self, theta_s: dict):
        self.theta_s = theta_s
        self.theta_t = None
        self.iteration = 0

    def init_teacher(self):
        self.theta_t = {k: Tensor(v.data.copy()) for k, v in self.theta_s.items()}

    @property
    def teacher_ready(self) -> bool:
        return self.theta_t is not None

    def check_manifests(self):
        if not self.teacher_ready:
            return
        if set(self.theta_t) != set(self.theta_s):
            raise ValueError("teacher/student parameter names differ")
        for k in self.theta_s:
            if self.theta_t[k].data.shape != self.theta_s[k].data.shape:
                raise ValueError(f"teacher/student shape mismatch at {k}")


def ema_update(state: ModelState, alpha_ema: float):
    """theta_t <- alpha * theta_t + (1 - alpha) * theta_s, elementwise."""
    for k, p in state.theta_t.items():
        p.data = alpha_ema * p.data + (1.0 - alpha_ema) * state.theta_s[k].data


def apply_ssm(state: ModelState, cfg: EmaSsmCfg) -> ModelState:
    """Pull the student toward the teacher (applied every cfg.ssm_step iterations)."""
    if not state.teacher_ready:
        raise ValueError("SSM needs an initialized teacher")
    for k, p in state.theta_s.items():
        p.data = cfg.alpha_ssm * p.data + (1.0 - cfg.alpha_ssm) * state.theta_t[k].data
    return state


# ---------------------------------------------------------------------------
# single steps

def burn_in_step(state: ModelState, detector: Detector, source_batch, cfg: TrainCfg, aug_rng) -> dict:
    """One supervised step on a labeled source batch; returns the loss values."""
    if not source_batch:
        raise ValueError("burn_in_step: empty source batch")
    mcfg = detector.cfg
    images = np.stack([augment_weak(aug_rng, s.image) for s in source_batch])
    with Tape() as tape:
        fwd = detector.forward(state.theta_s, images)
        l_sup = supervised_loss(fwd.obj_logits, fwd.cls_logits, source_batch, mcfg.grid, mcfg.n_classes)
        if mcfg.use_said and cfg.said.lambda_dcp > 0:
            l_dcp, _ = decouple_loss(fwd.said_out, cfg.said)
            total = engine.add(l_sup, l_dcp)
        else:
            l_dcp, total = Tensor(0.0), l_sup
    tape.backward(total)
    sgd_step(state.theta_s, cfg.lr)
    state.iteration += 1
    return {"l_sup": l_sup.item(), "l_dcp": l_dcp.item(), "l_mt": 0.0, "pseudo_count": 0}


def make_pseudo_labels(detector: Detector, theta_t: dict, scenes, weak_images, threshold: float) -> PseudoLabelBatch:
    """Teacher predictions on weak views, kept where both objectness and the
    class are confident; symmetric thresholding for confident background."""
    obj_prob, cls_id, cls_prob = predict(detector, theta_t, weak_images)
    confidence = np.minimum(obj_prob, cls_prob)
    mask = confidence >= threshold
    negative_mask = obj_prob <= 1.0 - threshold
    return PseudoLabelBatch(scenes, mask, cls_id, confidence, threshold, negative_mask)


def mutual_step(state: ModelState, detector: Detector, source_batch, target_batch,
                cfg: TrainCfg, aug_rng) -> dict:
    """One teacher-student step: pseudo-labels, student update, EMA, periodic SSM."""
    if not state.teacher_ready:
        raise ValueError("mutual_step: teacher not initialized (run burn-in first)")
    if not source_batch or not target_batch:
        raise ValueError("mutual_step: empty batch")
    mcfg = detector.cfg

    weak_t = np.stack([augment_weak(aug_rng, s.image) for s in target_batch])
    strong_t = np.stack([augment_strong(aug_rng, s.image) for s in target_batch])
    src = np.stack([augment_weak(aug_rng, s.image) for s in source_batch])
    pseudo = make_pseudo_labels(detector, state.theta_t, target_batch, weak_t, cfg.conf_threshold)

    n_t = len(target_batch)
    with Tape() as tape:
        # one forward over [strong target | weak source]; decoupling sees both
        fwd = detector.forward(state.theta_s, np.concatenate([strong_t, src], axis=0))
        l_mt = pseudo_label_loss(fwd.obj_logits[:n_t], fwd.cls_logits[:n_t],
                                 pseudo.mask, pseudo.classes, mcfg.n_classes,
                                 pseudo.negative_mask)
        l_sup = supervised_loss(fwd.obj_logits[n_t:], fwd.cls_logits[n_t:],
                                source_batch, mcfg.grid, mcfg.n_classes)
        if mcfg.use_said and cfg.said.lambda_dcp > 0:
            l_dcp, _ = decouple_loss(fwd.said_out, cfg.said)
        else:
            l_dcp = Tensor(0.0)
        total = engine.add(engine.add(l_mt, l_sup), l_dcp)
    tape.backward(total)
    sgd_step(state.theta_s, cfg.lr)
    state.iteration += 1
    ema_update(state, cfg.ema.alpha_ema)
    if cfg.use_ssm and state.iteration % cfg.ema.ssm_step == 0:
        apply_ssm(state, cfg.ema)
        log.debug("SSM applied at iteration %d", state.iteration)
    return {"l_sup": l_sup.item(), "l_dcp": l_dcp.item(), "l_mt": l_mt.item(),
            "pseudo_count": pseudo.count}


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalResult:
    per_class: dict  # class id -> accuracy
    mean_accuracy: float
    n_per_class: dict
    objectness_accuracy: float


def evaluate(detector: Detector, params: dict, scenes, batch: int = 16) -> EvalResult:
    """Class accuracy over labeled object cells, per class and averaged."""
    if not scenes:
        raise ValueError("evaluate: empty scene list")
    grid = detector.cfg.grid
    n_classes = detector.cfg.n_classes
    correct = np.zeros(n_classes)
    total = np.zeros(n_classes)
    obj_hits, obj_cells = 0, 0
    for start in range(0, len(scenes), batch):
        chunk = scenes[start:start + batch]
        images = np.stack([s.image for s in chunk])
        obj_prob, cls_id, _ = predict(detector, params, images)
        for i, scene in enumerate(chunk):
            truth = np.zeros(grid * grid, dtype=bool)
            for r, c, k in scene.boxes:
                idx = r * grid + c
                truth[idx] = True
                total[k] += 1
                if cls_id[i, idx] == k:
                    correct[k] += 1
            obj_hits += int(((obj_prob[i] >= 0.5) == truth).sum())
            obj_cells += truth.size
    present = total > 0
    per_class = {k: float(correct[k] / total[k]) for k in range(n_classes) if present[k]}
    mean_acc = float(np.mean([per_class[k] for k in per_class]))
    return EvalResult(per_class, mean_acc, {k: int(total[k]) for k in per_class},
                      obj_hits / max(1, obj_cells))


# ---------------------------------------------------------------------------
# full run

def _sample(rng, scenes, n):
    idx = rng.integers(0, len(scenes), size=n)
    return [scenes[int(i)] for i in idx]


def run_training(detector: Detector, dataset: SceneSet, cfg: TrainCfg, seed: int,
                 metrics_writer=None, progress=None) -> tuple:
    """Burn-in then mutual learning; returns (state, summary dict).

    ``metrics_writer`` receives one dict per step with the metric columns;
    in source-only mode the mutual stage is replaced by supervised steps.
    """
    params = detector.init_params(seed)
    state = ModelState(params)
    aug_rng = stream(seed, "augment")
    batch_rng = stream(seed, "batching")
    eval_acc_trace = []

    def emit(row):
        if metrics_writer is not None:
            metrics_writer(row)
        if progress is not None:
            progress(row)

    def periodic_eval():
        if cfg.eval_every and state.iteration % cfg.eval_every == 0:
            res = evaluate(detector, state.theta_t if state.teacher_ready else state.theta_s,
                           dataset.target_heldout)
            eval_acc_trace.append((state.iteration, res.mean_accuracy))
            return res.mean_accuracy
        return ""

    for _ in range(cfg.burn_in_steps):
        batch = _sample(batch_rng, dataset.source, cfg.batch_source)
        losses = burn_in_step(state, detector, batch, cfg, aug_rng)
        emit({"iteration": state.iteration, **losses, "eval_acc": periodic_eval()})

    state.init_teacher()
    state.check_manifests()

    for _ in range(cfg.mutual_steps):
        src = _sample(batch_rng, dataset.source, cfg.batch_source)
        if cfg.source_only:
            losses = burn_in_step(state, detector, src, cfg, aug_rng)
        else:
            tgt = _sample(batch_rng, dataset.target_train, cfg.batch_target)
            losses = mutual_step(state, detector, src, tgt, cfg, aug_rng)
        emit({"iteration": state.iteration, **losses, "eval_acc": periodic_eval()})

    final_params = state.theta_t if (state.teacher_ready and not cfg.source_only) else state.theta_s
    teacher_eval = evaluate(detector, final_params, dataset.target_heldout)
    student_eval = evaluate(detector, state.theta_s, dataset.target_heldout)
    summary = {
        "final_eval": {
            "mean_accuracy": teacher_eval.mean_accuracy,
            "per_class": teacher_eval.per_class,
            "n_per_class": teacher_eval.n_per_class,
            "objectness_accuracy": teacher_eval.objectness_accuracy,
        },
        "student_eval": {
            "mean_accuracy": student_eval.mean_accuracy,
            "per_class": student_eval.per_class,
        },
        "iterations": state.iteration,
        "eval_trace": eval_acc_trace,
    }
    return state, summary


def format_metric_row(row: dict) -> str:
    vals = []
    for col in METRIC_COLUMNS:
        v = row.get(col, "")
        if isinstance(v, float):
            vals.append(repr(v))
        else:
            vals.append(str(v))
    return ",".join(vals)
