"""Synthetic multi-subdomain detection scenes.

Every scene shares the same content model: class-specific shapes stamped
into grid cells. Domains differ only in "style": a smooth luminance field
band-limited to a radial frequency ring that is unique per subdomain. The
target domain's ring sits below all source rings, so nothing during
supervised training ever shows the model the target style.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import stream
from .spectral import radial_field

TARGET_DOMAIN = -1


@dataclass(frozen=True)
class SyntheticScene:
    image: np.ndarray  # (C, H, W) float
    boxes: tuple  # ((cell_row, cell_col, class_id), ...); empty for unlabeled
    subdomain_id: int  # 0..K-1 for source, TARGET_DOMAIN for target

    def __post_init__(self):
        if self.image.ndim != 3:
            raise ValueError(f"scene image must be (C, H, W), got {self.image.shape}")


@dataclass(frozen=True)
class DataCfg:
    grid: int = 8
    cell_px: int = 8
    n_classes: int = 3
    objects_min: int = 3
    objects_max: int = 6
    background: float = 0.3
    shape_intensity: float = 0.85
    style_rms: float = 0.25
    # the source->target shift is deliberately larger than the shift between
    # source subdomains, mirroring a modality gap rather than a weather change
    target_style_rms: float = 0.5
    # Style rings sit above the shapes' main spectral mass, with gaps between
    # the source rings; the target ring lives inside the first gap, so it is
    # disjoint from every source ring yet inside their hull. A filter that
    # learns to stop the styled region from the source rings alone then
    # rejects the never-seen target ring too.
    source_band_range: tuple = (0.24, 0.46)
    source_band_width: float = 0.04
    target_band_width: float = 0.03

    @property
    def image_px(self):
        return self.grid * self.cell_px


@dataclass
class SceneSet:
    source: list  # labeled scenes, all subdomains
    target_train: list  # unlabeled target scenes
    target_heldout: list  # labeled target scenes for evaluation
    k_subdomains: int
    cfg: DataCfg = field(default_factory=DataCfg)

    def source_of(self, subdomain_id: int):
        return [s for s in self.source if s.subdomain_id == subdomain_id]


def source_bands(cfg: DataCfg, k: int):
    lo, hi = cfg.source_band_range
    starts = np.linspace(lo, hi - cfg.source_band_width, k)
    return [(float(s), float(s + cfg.source_band_width)) for s in starts]


def target_band(cfg: DataCfg, k: int):
    """Ring centered in the gap between the first two source rings."""
    bands = source_bands(cfg, k)
    if len(bands) > 1:
        center = 0.5 * (bands[0][1] + bands[1][0])
    else:
        center = bands[0][1] + cfg.target_band_width
    half = cfg.target_band_width / 2.0
    return (center - half, center + half)


def _stamp(class_id: int, px: int) -> np.ndarray:
    """Boolean shape mask for one cell: horizontal bar, vertical bar, square.

    Classes differ in their coarse geometry (orientation and extent), so
    they stay separable below the styled frequency rings.
    """
    mask = np.zeros((px, px), dtype=bool)
    t = max(2, px // 3)
    lo = (px - t) // 2
    if class_id == 0:
        mask[lo:lo + t, 1:px - 1] = True
    elif class_id == 1:
        mask[1:px - 1, lo:lo + t] = True
    elif class_id == 2:
        mask[1:px - 1, 1:px - 1] = True
    else:
        raise ValueError(f"no stamp for class {class_id}")
    return mask


def band_noise(rng, height: int, width: int, band, rms: float) -> np.ndarray:
    """Real field whose spectrum lives in one radial ring, scaled to a target RMS."""
    d = radial_field(height, width).values
    ring = (d >= band[0]) & (d < band[1])
    white = rng.standard_normal((height, width))
    spec = np.fft.fftshift(np.fft.fft2(white)) * ring
    noise = np.fft.ifft2(np.fft.ifftshift(spec)).real
    std = noise.std()
    if std == 0.0:
        return np.zeros((height, width))
    return noise * (rms / std)


def make_scene(rng, cfg: DataCfg, band, subdomain_id: int, labeled: bool = True) -> SyntheticScene:
    px = cfg.image_px
    img = np.full((px, px), cfg.background)
    n_obj = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    cells = rng.choice(cfg.grid * cfg.grid, size=n_obj, replace=False)
    classes = rng.integers(0, cfg.n_classes, size=n_obj)
    boxes = []
    for cell, cls in zip(cells, classes):
        r, c = int(cell) // cfg.grid, int(cell) % cfg.grid
        sl = (slice(r * cfg.cell_px, (r + 1) * cfg.cell_px), slice(c * cfg.cell_px, (c + 1) * cfg.cell_px))
        patch = img[sl]
        patch[_stamp(int(cls), cfg.cell_px)] = cfg.shape_intensity
        boxes.append((r, c, int(cls)))
    if band is not None:
        rms = cfg.target_style_rms if subdomain_id == TARGET_DOMAIN else cfg.style_rms
        img = img + band_noise(rng, px, px, band, rms)
    return SyntheticScene(img[None, :, :], tuple(boxes) if labeled else (), subdomain_id)


def generate_dataset(seed: int, n_per_subdomain: int, k_subdomains: int = 3,
                     n_target: int = 160, n_heldout: int = 64, cfg: DataCfg = None) -> SceneSet:
    """Labeled source scenes over K styled subdomains plus unlabeled and
    held-out labeled target scenes; deterministic per seed."""
    if k_subdomains < 2:
        raise ValueError(f"need at least 2 source subdomains, got {k_subdomains}")
    cfg = cfg or DataCfg()
    rng = stream(seed, "data")
    bands = source_bands(cfg, k_subdomains)
    tgt_band = target_band(cfg, k_subdomains)
    source = []
    for k in range(k_subdomains):
        for _ in range(n_per_subdomain):
            source.append(make_scene(rng, cfg, bands[k], k))
    target_train = [make_scene(rng, cfg, tgt_band, TARGET_DOMAIN, labeled=False)
                    for _ in range(n_target)]
    target_heldout = [make_scene(rng, cfg, tgt_band, TARGET_DOMAIN)
                      for _ in range(n_heldout)]
    return SceneSet(source, target_train, target_heldout, k_subdomains, cfg)


# ---------------------------------------------------------------------------
# augmentations (labels are invariant: shifts stay within a cell)

def augment_weak(rng, image: np.ndarray, max_shift: int = 2, brightness: float = 0.08) -> np.ndarray:
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
    out = np.roll(image, (int(dy), int(dx)), axis=(-2, -1))
    return out + rng.uniform(-brightness, brightness)


def augment_strong(rng, image: np.ndarray, cfg: DataCfg = None, noise_rms: float = 0.08,
                   cutout: int = 12) -> np.ndarray:
    """Weak augmentation plus band-limited spectral noise and a cutout patch."""
    cfg = cfg or DataCfg()
    out = augment_weak(rng, image)
    h, w = out.shape[-2], out.shape[-1]
    lo = rng.uniform(0.02, 0.28)
    band = (lo, lo + rng.uniform(0.02, 0.08))
    out = out + band_noise(rng, h, w, band, noise_rms)
    cy = int(rng.integers(0, h - cutout)) if h > cutout else 0
    cx = int(rng.integers(0, w - cutout)) if w > cutout else 0
    out = out.copy()
    out[..., cy:cy + cutout, cx:cx + cutout] = cfg.background
    return out
