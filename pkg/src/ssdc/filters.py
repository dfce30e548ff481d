"""Spectral gain constructors: fixed Gaussian, weighted difference-of-Gaussian
bank, and a small parametric per-bin regressor, each with its exact
complement.

Frozen constructors (`make_hard`, `make_bank`, `combine_soft`, `make_free`)
produce immutable numpy gain planes. The *Mode classes at the bottom expose
the same math through engine tensors so the soft/free gains can be trained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .spectral import RadialField, save_plane


@dataclass(frozen=True)
class GaussianFilter:
    """Radial Gaussian gain; high-pass is exactly one minus low-pass."""

    sigma_h: float
    kind: str  # "low-pass" | "high-pass"
    response: np.ndarray

    def __post_init__(self):
        if self.kind not in ("low-pass", "high-pass"):
            raise ValueError(f"unknown gaussian kind {self.kind!r}")


@dataclass(frozen=True)
class FilterBank:
    """N non-negative band-pass responses over a radial field.

    Bandwidths are nested: band n spans sigma_n = n*delta_f to
    sigma~_n = (n+1)*delta_f with delta_f = 0.5/(N+1), so the responses
    telescope to a closed form and jointly cover the (0, 0.5] range.
    """

    n_filters: int
    delta_f: float
    responses: np.ndarray  # (N, H, W)
    radial: RadialField

    @property
    def sigma_list(self):
        return [n * self.delta_f for n in range(1, self.n_filters + 1)]

    def normalized(self) -> np.ndarray:
        """Responses rescaled so each band peaks at 1."""
        peaks = self.responses.reshape(self.n_filters, -1).max(axis=1)
        return self.responses / peaks[:, None, None]


@dataclass(frozen=True)
class FreeFilterParams:
    """Two-layer per-bin MLP: features [D, log-amplitude] -> gain logit."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros(cls, hidden=16):
        return cls(np.zeros((2, hidden)), np.zeros(hidden), np.zeros((hidden, 1)), np.zeros(1))

    @classmethod
    def random(cls, hidden=16, rng=None):
        rng = rng or np.random.default_rng(0)
        return cls(
            rng.normal(0, 1 / np.sqrt(2), (2, hidden)),
            rng.normal(0, 0.1, hidden),
            rng.normal(0, 1 / np.sqrt(hidden), (hidden, 1)),
            rng.normal(0, 0.1, 1),
        )


@dataclass(frozen=True)
class AdaptiveFilter:
    """A per-bin pass gain for invariant content plus its exact complement.

    The complement is derived inside the constructor, so
    ``h_inv + h_spe == 1`` holds bit-exactly at every bin.
    """

    h_inv: np.ndarray
    provenance: str
    h_spe: np.ndarray = field(init=False)

    def __post_init__(self):
        h = np.asarray(self.h_inv, dtype=np.float64)
        if np.any(h < 0) or np.any(h > 1):
            raise ValueError("h_inv must lie in [0, 1] everywhere")
        object.__setattr__(self, "h_inv", h)
        object.__setattr__(self, "h_spe", 1.0 - h)

    @property
    def shape(self):
        return self.h_inv.shape


def gaussian_filter(radial: RadialField, sigma_h: float, kind: str = "high-pass") -> GaussianFilter:
    if sigma_h <= 0:
        raise ValueError(f"sigma_h must be > 0, got {sigma_h}")
    low = np.exp(-(radial.values**2) / (2.0 * sigma_h**2))
    response = (1.0 - low) if kind == "high-pass" else low
    return GaussianFilter(sigma_h, kind, response)


def make_hard(radial: RadialField, sigma_h: float, low_pass_invariant: bool = False) -> AdaptiveFilter:
    """Fixed Gaussian split; invariant content defaults to the high-pass band."""
    kind = "low-pass" if low_pass_invariant else "high-pass"
    g = gaussian_filter(radial, sigma_h, kind)
    return AdaptiveFilter(g.response, f"hard(sigma_h={sigma_h}, invariant={kind})")


def make_bank(radial: RadialField, n_filters: int) -> FilterBank:
    """Difference-of-Gaussian band-pass bank with nested bandwidths."""
    if n_filters < 1:
        raise ValueError(f"n_filters must be >= 1, got {n_filters}")
    delta_f = 0.5 / (n_filters + 1)
    d2 = radial.values**2
    responses = np.empty((n_filters,) + radial.values.shape)
    for n in range(1, n_filters + 1):
        sigma = n * delta_f
        sigma_wide = (n + 1) * delta_f
        responses[n - 1] = np.exp(-d2 / (2.0 * sigma_wide**2)) - np.exp(-d2 / (2.0 * sigma**2))
    return FilterBank(n_filters, delta_f, responses, radial)


def combine_soft(bank: FilterBank, weights) -> AdaptiveFilter:
    """Weighted sum of peak-normalized bands, clamped into [0, 1]."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (bank.n_filters,):
        raise ValueError(f"weights shape {weights.shape} != ({bank.n_filters},)")
    if np.any(weights < 0) or np.any(weights > 1):
        raise ValueError("weights must lie in [0, 1] (apply an activation first)")
    h = np.einsum("n,nhw->hw", weights, bank.normalized())
    return AdaptiveFilter(np.clip(h, 0.0, 1.0), f"soft(n={bank.n_filters})")


def make_free(radial: RadialField, params: FreeFilterParams, amplitude=None) -> AdaptiveFilter:
    """Per-bin gain regressed from [D, log1p(amplitude)] through a small MLP."""
    d = radial.values.reshape(-1)
    if amplitude is None:
        log_amp = np.zeros_like(d)
    else:
        amplitude = np.asarray(amplitude, dtype=np.float64)
        if amplitude.shape != radial.values.shape:
            raise ValueError(f"amplitude shape {amplitude.shape} != {radial.values.shape}")
        log_amp = np.log1p(amplitude).reshape(-1)
    feats = np.stack([d, log_amp], axis=1)
    hidden = np.tanh(feats @ params.w1 + params.b1)
    logits = (hidden @ params.w2 + params.b2).reshape(radial.values.shape)
    h = 1.0 / (1.0 + np.exp(-logits))
    return AdaptiveFilter(h, "free")


def binary_mask_filter(radial: RadialField, d_cut: float, pass_high: bool = True) -> AdaptiveFilter:
    """Exact 0/1 split of the plane at radial distance d_cut."""
    mask = (radial.values >= d_cut) if pass_high else (radial.values < d_cut)
    return AdaptiveFilter(mask.astype(np.float64), f"binary(d_cut={d_cut}, high={pass_high})")


# ---------------------------------------------------------------------------
# trainable filter modules
#
# Each mode is a stateless structure over precomputed constants; parameters
# live in an external named dict so a teacher and a student can share one
# mode object while holding separate weights.

class HardMode:
    """Parameter-free trainable-API wrapper around the fixed Gaussian split."""

    name = "hard"

    def __init__(self, radial: RadialField, sigma_h: float = 0.1, low_pass_invariant: bool = False):
        self.filter = make_hard(radial, sigma_h, low_pass_invariant)
        self._flat = self.filter.h_inv.reshape(-1)

    def init_params(self, rng, prefix: str = "filter"):
        return {}

    def gains(self, params: dict, log_amp: np.ndarray, prefix: str = "filter") -> engine.Tensor:
        return engine.Tensor(np.broadcast_to(self._flat, log_amp.shape).copy())


class SoftMode:
    """Band weights regressed from per-band energies of the input spectrum.

    The regressor is a two-layer MLP; its sigmoid outputs weight the
    peak-normalized bank, and the combined gain is clamped into [0, 1].
    """

    name = "soft"

    def __init__(self, bank: FilterBank, hidden: int = 32):
        n = bank.n_filters
        self.bank = bank
        self.hidden = hidden
        self.bank_flat = bank.normalized().reshape(n, -1)  # (N, HW)
        self.n_bins = self.bank_flat.shape[1]

    def init_params(self, rng, prefix: str = "filter"):
        n, hid = self.bank.n_filters, self.hidden
        # Initial weight logits sit near 1/N (overlapping normalized bands
        # would otherwise sum far past the clamp and kill all gradients) and
        # tilt downward with band index: the invariant side starts as a soft
        # pass of the energy-carrying low bands, and the binarizing pull of
        # the decoupling loss amplifies the tilt instead of saturating every
        # band in the same direction.
        bias0 = -np.log(float(max(4, n)))
        tilt = 1.0 - (2.0 * np.arange(1, n + 1) / n)
        return {
            f"{prefix}.w1": engine.Tensor(rng.normal(0, 1 / np.sqrt(n), (n, hid)), requires_grad=True),
            f"{prefix}.b1": engine.Tensor(np.zeros(hid), requires_grad=True),
            f"{prefix}.w2": engine.Tensor(rng.normal(0, 1 / np.sqrt(hid), (hid, n)), requires_grad=True),
            f"{prefix}.b2": engine.Tensor(bias0 + tilt, requires_grad=True),
        }

    def band_energies(self, log_amp: np.ndarray) -> np.ndarray:
        return log_amp @ self.bank_flat.T / self.n_bins  # (B, N)

    def weights(self, params: dict, log_amp: np.ndarray, prefix: str = "filter") -> engine.Tensor:
        feats = engine.Tensor(self.band_energies(log_amp))
        h1 = engine.tanh(engine.matmul(feats, params[f"{prefix}.w1"]) + params[f"{prefix}.b1"])
        logits = engine.matmul(h1, params[f"{prefix}.w2"]) + params[f"{prefix}.b2"]
        return engine.sigmoid(logits)

    def gains(self, params: dict, log_amp: np.ndarray, prefix: str = "filter") -> engine.Tensor:
        w = self.weights(params, log_amp, prefix)  # (B, N)
        h = engine.matmul(w, engine.Tensor(self.bank_flat))  # (B, HW)
        return engine.clamp(h, 0.0, 1.0)


class FreeMode:
    """Per-bin gain from [D, log-amplitude] features through a shared MLP."""

    name = "free"

    def __init__(self, radial: RadialField, hidden: int = 16):
        self.radial = radial
        self.hidden = hidden
        self._d = radial.values.reshape(-1)

    def init_params(self, rng, prefix: str = "filter"):
        hid = self.hidden
        return {
            f"{prefix}.w1": engine.Tensor(rng.normal(0, 1 / np.sqrt(2), (2, hid)), requires_grad=True),
            f"{prefix}.b1": engine.Tensor(np.zeros(hid), requires_grad=True),
            f"{prefix}.w2": engine.Tensor(rng.normal(0, 1 / np.sqrt(hid), (hid, 1)), requires_grad=True),
            f"{prefix}.b2": engine.Tensor(np.zeros(1), requires_grad=True),
        }

    def gains(self, params: dict, log_amp: np.ndarray, prefix: str = "filter") -> engine.Tensor:
        b, n_bins = log_amp.shape
        d = np.broadcast_to(self._d, (b, n_bins)).reshape(-1)
        feats = engine.Tensor(np.stack([d, log_amp.reshape(-1)], axis=1))  # (B*HW, 2)
        h1 = engine.tanh(engine.matmul(feats, params[f"{prefix}.w1"]) + params[f"{prefix}.b1"])
        logits = engine.matmul(h1, params[f"{prefix}.w2"]) + params[f"{prefix}.b2"]
        return engine.reshape(engine.sigmoid(logits), (b, n_bins))


def build_mode(mode: str, radial: RadialField, n_filters: int = 100, sigma_h: float = 0.1,
               low_pass_invariant: bool = False):
    if mode == "hard":
        return HardMode(radial, sigma_h, low_pass_invariant)
    if mode == "soft":
        return SoftMode(make_bank(radial, n_filters))
    if mode == "free":
        return FreeMode(radial)
    raise ValueError(f"unknown filter mode {mode!r} (expected hard, soft or free)")


# ---------------------------------------------------------------------------
# export

def save_bank(bank: FilterBank, out_dir):
    """Bank metadata JSON plus one raw float plane per band response."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "n_filters": bank.n_filters,
        "delta_f": bank.delta_f,
        "sigma_list": bank.sigma_list,
    }
    with open(out_dir / "bank.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    for i in range(bank.n_filters):
        save_plane(bank.responses[i], out_dir / f"band_{i + 1:03d}.raw", {"band": i + 1})


def save_filter(filt: AdaptiveFilter, path):
    save_plane(filt.h_inv, path, {"provenance": filt.provenance, "plane": "h_inv"})
