"""Independent oracles used by the test suite.

These deliberately avoid the library's own code paths: the transform oracle
evaluates the DFT definition directly, the gradient oracle uses central
finite differences, and the scalar loss oracle is plain-float arithmetic.
"""

import math

import numpy as np


def dft2_matrix(img: np.ndarray) -> np.ndarray:
    """Direct DFT by explicit basis matrices W[k, n] = exp(-2*pi*i*k*n/N).

    This is the textbook double sum evaluated as two matrix products; no
    fast-transform algorithm is involved.
    """
    h, w = img.shape
    kh = np.arange(h)
    kw = np.arange(w)
    wh = np.exp(-2j * np.pi * np.outer(kh, kh) / h)
    ww = np.exp(-2j * np.pi * np.outer(kw, kw) / w)
    return wh @ img.astype(complex) @ ww


def dft2_loops(img: np.ndarray) -> np.ndarray:
    """Quadruple-loop DFT summation; only bearable for tiny sizes."""
    h, w = img.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for x in range(h):
                for y in range(w):
                    acc += img[x, y] * np.exp(-2j * np.pi * (u * x / h + v * y / w))
            out[u, v] = acc
    return out


def idft2_matrix(spec: np.ndarray) -> np.ndarray:
    h, w = spec.shape
    kh = np.arange(h)
    kw = np.arange(w)
    wh = np.exp(2j * np.pi * np.outer(kh, kh) / h)
    ww = np.exp(2j * np.pi * np.outer(kw, kw) / w)
    return (wh @ spec.astype(complex) @ ww) / (h * w)


def shifted_amplitude(img: np.ndarray) -> np.ndarray:
    """Centered amplitude plane via the matrix oracle (DC at h//2, w//2)."""
    return np.fft.fftshift(np.abs(dft2_matrix(img)))


def numerical_grad(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / scale).max())


def eq5_scalar(p_ds1, p_ds2, p_di1, p_di2, k, epsilon, lam) -> float:
    """Plain-float evaluation of the decoupling loss from four correlations."""
    numerator = (p_ds1 + p_ds2) ** 2
    denominator = max((p_di1 * p_di2) ** k + epsilon, epsilon)
    return lam * numerator / denominator


def pcc_scalar(x, y) -> float:
    """Population-statistics Pearson correlation in plain python floats."""
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    sx = math.sqrt(sum((a - mx) ** 2 for a in x) / n)
    sy = math.sqrt(sum((b - my) ** 2 for b in y) / n)
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return cov / (sx * sy)


def ring_energy(img: np.ndarray, band, radial_values: np.ndarray) -> float:
    """Mean squared amplitude inside a radial ring, via the matrix DFT oracle."""
    amp = shifted_amplitude(img)
    sel = (radial_values >= band[0]) & (radial_values < band[1])
    return float((amp[sel] ** 2).mean())


def total_variation(img: np.ndarray) -> float:
    return float(np.abs(np.diff(img, axis=0)).sum() + np.abs(np.diff(img, axis=1)).sum())
