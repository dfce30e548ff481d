"""Spectral decoupling chain and its self-distillation loss.

A spectrum's amplitude is split by a gain into an invariant part (DI) and
its complement (DS); the same gain is applied twice more to the invariant
part, yielding the six-plane chain DI, DS, DI', DS', DI'', DS''. The loss
rewards chains whose DS stages decorrelate while the DI stages stay
correlated, which drives learned gains toward idempotent (binary-like)
behavior. Phase is never touched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine
from .engine import Tensor
from .filters import AdaptiveFilter
from .spectral import Spectrum, save_plane

log = logging.getLogger("ssdc.said")


@dataclass
class DecoupleLossCfg:
    k: int = 2
    lambda_dcp: float = 50.0
    epsilon: float = 1e-8
    log_amplitude: bool = True  # correlate log(1+a) planes instead of raw amplitude

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.lambda_dcp < 0:
            raise ValueError(f"lambda_dcp must be >= 0, got {self.lambda_dcp}")


@dataclass
class PccStats:
    """Batch-mean correlations of the chain, plus degeneracy flags."""

    pcc_ds_ds1: float
    pcc_ds_ds2: float
    pcc_di_di1: float
    pcc_di_di2: float
    degenerate_ds: bool = False
    degenerate_di: bool = False
    denominator_clamped: bool = False


@dataclass
class SaidOutput:
    """Six chain planes as engine tensors shaped (batch, bins)."""

    di: Tensor
    ds: Tensor
    di1: Tensor
    ds1: Tensor
    di2: Tensor
    ds2: Tensor
    gains: Tensor
    phase: np.ndarray
    height: int
    width: int

    def plane(self, name: str, index: int = 0) -> np.ndarray:
        return getattr(self, name).data[index].reshape(self.height, self.width)


def decouple_amplitude(amplitude, gains) -> tuple:
    """Run the three-stage chain with one shared gain; returns the six planes."""
    a = engine.as_tensor(amplitude)
    g = engine.as_tensor(gains)
    if a.data.shape[-1] != g.data.shape[-1]:
        raise ValueError(f"amplitude {a.data.shape} and gains {g.data.shape} disagree on bins")
    comp = engine.sub(1.0, g)
    di = engine.mul(a, g)
    ds = engine.mul(a, comp)
    di1 = engine.mul(di, g)
    ds1 = engine.mul(di, comp)
    di2 = engine.mul(di1, g)
    ds2 = engine.mul(di1, comp)
    return di, ds, di1, ds1, di2, ds2


def decouple(spec: Spectrum, filt: AdaptiveFilter) -> SaidOutput:
    """Apply a frozen filter to one spectrum (batch of one, constant gains)."""
    if filt.shape != (spec.height, spec.width):
        raise ValueError(f"filter shape {filt.shape} != spectrum shape {(spec.height, spec.width)}")
    amp = Tensor(spec.amplitude.reshape(1, -1))
    gains = Tensor(filt.h_inv.reshape(1, -1))
    di, ds, di1, ds1, di2, ds2 = decouple_amplitude(amp, gains)
    return SaidOutput(di, ds, di1, ds1, di2, ds2, gains, spec.phase, spec.height, spec.width)


def decouple_batch(amp_flat: np.ndarray, gains: Tensor, phase: np.ndarray, height: int, width: int) -> SaidOutput:
    """Chain over a (B, bins) amplitude batch with (possibly trainable) gains."""
    di, ds, di1, ds1, di2, ds2 = decouple_amplitude(Tensor(amp_flat), gains)
    return SaidOutput(di, ds, di1, ds1, di2, ds2, engine.as_tensor(gains), phase, height, width)


# ---------------------------------------------------------------------------
# Pearson correlation

def pcc_rows(x: Tensor, y: Tensor):
    """Row-wise correlation of (B, n) tensors with population statistics.

    Rows where either input has exactly zero variance get value 0 (and no
    gradient); the returned boolean mask marks them.
    """
    if x.data.shape != y.data.shape or x.data.ndim != 2 or x.data.shape[1] < 2:
        raise ValueError(f"pcc needs matching (B, n>=2) inputs, got {x.data.shape} and {y.data.shape}")
    mx = engine.mean(x, axis=-1, keepdims=True)
    my = engine.mean(y, axis=-1, keepdims=True)
    xc = engine.sub(x, mx)
    yc = engine.sub(y, my)
    cov = engine.mean(engine.mul(xc, yc), axis=-1)
    vx = engine.mean(engine.mul(xc, xc), axis=-1)
    vy = engine.mean(engine.mul(yc, yc), axis=-1)
    degenerate = (vx.data == 0.0) | (vy.data == 0.0)
    denom = engine.sqrt(engine.clamp(engine.mul(vx, vy), lo=1e-300))
    r = engine.clamp(engine.div(cov, denom), lo=-1.0, hi=1.0)
    if degenerate.any():
        r = engine.mul(r, (~degenerate).astype(np.float64))
    return r, degenerate


def pcc(x, y) -> float:
    """Correlation of two flattened planes; 0 for a zero-variance input."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    r, _ = pcc_rows(Tensor(x), Tensor(y))
    return float(r.data[0])


# ---------------------------------------------------------------------------
# decoupling loss

def decouple_loss(out: SaidOutput, cfg: DecoupleLossCfg):
    """Per-item chain loss, averaged over the batch; returns (loss, stats).

    Gradients flow through the correlations and the chain into whatever
    produced ``out.gains``; with constant gains the loss is simply a value.
    """
    if cfg.log_amplitude:
        p_ds, p_ds1, p_ds2 = engine.log1p(out.ds), engine.log1p(out.ds1), engine.log1p(out.ds2)
        p_di, p_di1, p_di2 = engine.log1p(out.di), engine.log1p(out.di1), engine.log1p(out.di2)
    else:
        p_ds, p_ds1, p_ds2 = out.ds, out.ds1, out.ds2
        p_di, p_di1, p_di2 = out.di, out.di1, out.di2

    r_ds1, f1 = pcc_rows(p_ds, p_ds1)
    r_ds2, f2 = pcc_rows(p_ds, p_ds2)
    r_di1, f3 = pcc_rows(p_di, p_di1)
    r_di2, f4 = pcc_rows(p_di, p_di2)

    numerator = engine.pow_const(engine.add(r_ds1, r_ds2), 2)
    prod_k = engine.pow_const(engine.mul(r_di1, r_di2), cfg.k)
    raw_den = engine.add(prod_k, cfg.epsilon)
    clamped = bool(np.any(raw_den.data < cfg.epsilon))
    denominator = engine.clamp(raw_den, lo=cfg.epsilon)
    loss = engine.mul(engine.mean(engine.div(numerator, denominator)), cfg.lambda_dcp)

    stats = PccStats(
        pcc_ds_ds1=float(r_ds1.data.mean()),
        pcc_ds_ds2=float(r_ds2.data.mean()),
        pcc_di_di1=float(r_di1.data.mean()),
        pcc_di_di2=float(r_di2.data.mean()),
        degenerate_ds=bool(f1.any() or f2.any()),
        degenerate_di=bool(f3.any() or f4.any()),
        denominator_clamped=clamped,
    )
    if clamped:
        log.debug("decouple_loss: denominator clamped at epsilon (%s)", stats)
    else:
        log.debug("decouple_loss stats: %s", stats)
    return loss, stats


def loss_from_stats(stats: PccStats, cfg: DecoupleLossCfg) -> float:
    """Scalar form of the loss on already-computed correlations."""
    numerator = (stats.pcc_ds_ds1 + stats.pcc_ds_ds2) ** 2
    denominator = max((stats.pcc_di_di1 * stats.pcc_di_di2) ** cfg.k + cfg.epsilon, cfg.epsilon)
    return cfg.lambda_dcp * numerator / denominator


def apply_twice_ratio(h_inv: np.ndarray, amplitude: np.ndarray) -> float:
    """||apply^2(A) - apply(A)|| / ||apply(A)||; the trained idempotency gauge."""
    once = amplitude * h_inv
    twice = once * h_inv
    norm_once = float(np.linalg.norm(once))
    if norm_once == 0.0:
        return 0.0
    return float(np.linalg.norm(twice - once)) / norm_once


def save_output(out: SaidOutput, out_dir, index: int = 0):
    """Dump the six chain planes, gains and phase as raw float + sidecars."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in ("di", "ds", "di1", "ds1", "di2", "ds2"):
        save_plane(out.plane(name, index), out_dir / f"{name}.raw", {"plane": name})
    save_plane(out.gains.data[index % out.gains.data.shape[0]].reshape(out.height, out.width)
               if out.gains.data.ndim == 2 else out.gains.data.reshape(out.height, out.width),
               out_dir / "h_inv.raw", {"plane": "h_inv"})
    phase = out.phase if out.phase.ndim == 2 else out.phase[index]
    save_plane(phase, out_dir / "phase.raw", {"plane": "phase"})
