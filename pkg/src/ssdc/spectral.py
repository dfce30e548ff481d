"""2D spectral transforms and frequency-geometry fields.

Conventions, fixed for the whole package:

* forward transform is unnormalized, the inverse carries 1/(h*w);
* spectra are stored centered (fft-shifted), DC at (h//2, w//2);
* phase lies in (-pi, pi].

All operations here are pure functions on immutable inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine


@dataclass(frozen=True)
class ImagePlane:
    """One real-valued channel of an image, row-major."""

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.shape != (self.height, self.width):
            raise ValueError(f"image data shape {arr.shape} != ({self.height}, {self.width})")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape[0], arr.shape[1], arr)


@dataclass(frozen=True)
class Spectrum:
    """Centered amplitude/phase planes of one channel's transform."""

    height: int
    width: int
    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=np.float64)
        ph = np.asarray(self.phase, dtype=np.float64)
        shape = (self.height, self.width)
        if amp.shape != shape or ph.shape != shape:
            raise ValueError(f"spectrum planes {amp.shape}/{ph.shape} != {shape}")
        if np.any(amp < 0):
            raise ValueError("amplitude must be non-negative")
        # fold the closed end of the branch cut onto +pi
        ph = np.where(ph <= -np.pi, np.pi, ph)
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "phase", ph)

    def to_complex(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)


@dataclass(frozen=True)
class RadialField:
    """Normalized radial frequency distance for every centered bin."""

    height: int
    width: int
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (self.height, self.width):
            raise ValueError(f"radial field shape {arr.shape} != ({self.height}, {self.width})")
        object.__setattr__(self, "values", arr)

    @property
    def center(self):
        return (self.height // 2, self.width // 2)


def fft2d(img: ImagePlane) -> Spectrum:
    """Centered 2D transform of one channel; amplitude = modulus, phase = argument."""
    if img.height < 2 or img.width < 2:
        raise ValueError(f"fft2d needs height, width >= 2, got {img.height}x{img.width}")
    spec = np.fft.fftshift(np.fft.fft2(img.data))
    return Spectrum(img.height, img.width, np.abs(spec), np.angle(spec))


def ifft2d(spec: Spectrum, return_residue: bool = False):
    """Inverse of fft2d; the imaginary residue is discarded.

    Filtering an amplitude plane breaks conjugate symmetry, so the inverse
    picks up an imaginary part; its L2 norm is available as a diagnostic
    via ``return_residue=True``.
    """
    back = np.fft.ifft2(np.fft.ifftshift(spec.to_complex()))
    img = ImagePlane(spec.height, spec.width, back.real)
    if return_residue:
        return img, float(np.linalg.norm(back.imag))
    return img


def radial_field(height: int, width: int) -> RadialField:
    """Radial distance D = sqrt(X^2 + Y^2) in normalized centered coordinates."""
    if height < 2 or width < 2:
        raise ValueError(f"radial_field needs height, width >= 2, got {height}x{width}")
    c_row, c_col = height // 2, width // 2
    m = float(max(height, width))
    x = (np.arange(width) - c_col) / m
    y = (np.arange(height) - c_row) / m
    d = np.sqrt(x[None, :] ** 2 + y[:, None] ** 2)
    return RadialField(height, width, d)


def spectrum_of_channels(channels: np.ndarray) -> Spectrum:
    """Channel-mean amplitude/phase of a (C, H, W) stack, per-channel transforms."""
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {channels.shape}")
    amps, phases = [], []
    for c in range(channels.shape[0]):
        s = fft2d(ImagePlane.from_array(channels[c]))
        amps.append(s.amplitude)
        phases.append(s.phase)
    return Spectrum(channels.shape[1], channels.shape[2], np.mean(amps, axis=0), np.mean(phases, axis=0))


# ---------------------------------------------------------------------------
# batched helpers used by the training path (numpy, constants w.r.t. grads)

def batch_amp_phase(images: np.ndarray):
    """Centered amplitude and phase for a (B, H, W) image batch."""
    spec = np.fft.fftshift(np.fft.fft2(images, axes=(-2, -1)), axes=(-2, -1))
    return np.abs(spec), np.angle(spec)


def spectral_to_image(amp, phase: np.ndarray) -> engine.Tensor:
    """Differentiable real image from a centered amplitude tensor.

    ``amp`` is an engine tensor shaped (..., H, W); ``phase`` is a constant
    array of the same shape. Linear in the amplitude, so the backward pass
    is the exact adjoint (a forward transform of the upstream gradient).
    """
    amp = engine.as_tensor(amp)
    phase = np.asarray(phase, dtype=np.float64)
    if amp.data.shape != phase.shape:
        raise ValueError(f"amplitude {amp.data.shape} and phase {phase.shape} differ")
    rot = np.exp(1j * phase)
    axes = (-2, -1)

    def forward(a):
        spec = np.fft.ifftshift(a * rot, axes=axes)
        return np.fft.ifft2(spec, axes=axes).real

    def vjp(g):
        h = np.fft.fftshift(np.fft.ifft2(g, axes=axes), axes=axes)
        return (rot * h).real

    return engine.make_op(forward(amp.data), (amp,), (vjp,))


# ---------------------------------------------------------------------------
# float-raw export with JSON sidecar

def save_spectrum(spec: Spectrum, path):
    """Raw little-endian float32 planes (amplitude then phase) + JSON sidecar."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(spec.amplitude.astype("<f4").tobytes())
        fh.write(spec.phase.astype("<f4").tobytes())
    sidecar = {
        "height": spec.height,
        "width": spec.width,
        "layout": "amplitude,phase",
        "center": "shifted",
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def load_spectrum(path) -> Spectrum:
    path = Path(path)
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    h, w = meta["height"], meta["width"]
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != 2 * h * w:
        raise ValueError(f"raw spectrum has {raw.size} floats, expected {2 * h * w}")
    amp = raw[: h * w].reshape(h, w).astype(np.float64)
    ph = raw[h * w:].reshape(h, w).astype(np.float64)
    return Spectrum(h, w, amp, ph)


def save_plane(arr: np.ndarray, path, meta_extra=None):
    """Single raw float32 plane with the same sidecar scheme."""
    arr = np.asarray(arr, dtype=np.float64)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(arr.astype("<f4").tobytes())
    sidecar = {"height": arr.shape[0], "width": arr.shape[1], "layout": "plane", "center": "shifted"}
    if meta_extra:
        sidecar.update(meta_extra)
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
