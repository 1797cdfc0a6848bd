"""Non-learning baselines: Bradley-Roth adaptive threshold, Frangi and Gabor
vessel enhancement, and filter-then-threshold segmenters."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "FILTERS",
    "UnsupportedFilterError",
    "ThresholdConfig",
    "FrangiConfig",
    "GaborConfig",
    "integral_image",
    "adaptive_threshold",
    "hessian_2d",
    "frangi_vesselness",
    "gabor_kernels",
    "gabor_bank",
    "gabor_response",
    "normalize_response",
    "filter_response",
    "filter_then_threshold",
]

FILTERS = ("at", "frangi", "gabor")
DECLARED_UNSUPPORTED = ("scird-ts",)


class UnsupportedFilterError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdConfig:
    """Bradley-Roth parameters.

    ``window`` is an odd pixel size; ``None`` means round(width / 8) forced
    odd (at least 3). ``sensitivity`` is the percentage t: a pixel is
    foreground when it exceeds (100 - t)% of its local mean.
    """

    window: int | None = None
    sensitivity: float = 15.0

    def resolve_window(self, width: int) -> int:
        if self.window is not None:
            return self.window
        w = int(round(width / 8))
        return max(3, w if w % 2 else w + 1)

    def __post_init__(self):
        if not 0 <= self.sensitivity < 100:
            raise ValueError("sensitivity must be in [0, 100)")
        if self.window is not None and (self.window < 3 or self.window % 2 == 0):
            raise ValueError(f"window must be odd and >= 3, got {self.window}")


@dataclass(frozen=True)
class FrangiConfig:
    scales: tuple[float, ...] = (1.0, 1.5, 2.0)
    beta: float = 0.5
    c: float | None = None  # None: half the max Hessian norm per scale

    def __post_init__(self):
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be non-empty and positive")
        if self.beta <= 0 or (self.c is not None and self.c <= 0):
            raise ValueError("beta and c must be positive")


@dataclass(frozen=True)
class GaborConfig:
    wavelengths: tuple[float, ...] = (3.0, 4.0)
    orientations: int = 12
    sigma_ratio: float = 0.5

    def __post_init__(self):
        if not self.wavelengths or any(w <= 0 for w in self.wavelengths):
            raise ValueError("wavelengths must be positive")
        if self.orientations < 1 or self.sigma_ratio <= 0:
            raise ValueError("orientations must be >= 1 and sigma_ratio > 0")


# --------------------------------------------------------------------------
# Adaptive threshold
# --------------------------------------------------------------------------

def integral_image(img: np.ndarray) -> np.ndarray:
    """Summed-area table with a leading zero row and column."""
    s = np.zeros((img.shape[0] + 1, img.shape[1] + 1), dtype=np.float64)
    s[1:, 1:] = np.cumsum(np.cumsum(np.asarray(img, dtype=np.float64), axis=0), axis=1)
    return s


def adaptive_threshold(img, cfg: ThresholdConfig | None = None) -> np.ndarray:
    """Bradley-Roth thresholding against the local mean.

    Windows are clipped at the borders, so ``count`` is the true number of
    pixels averaged. A pixel is vessel iff
    ``value * count > window_sum * (100 - t) / 100``.
    """
    cfg = cfg or ThresholdConfig()
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    half = cfg.resolve_window(w) // 2
    s = integral_image(img)
    ys, xs = np.arange(h), np.arange(w)
    y0, y1 = np.maximum(ys - half, 0), np.minimum(ys + half, h - 1) + 1
    x0, x1 = np.maximum(xs - half, 0), np.minimum(xs + half, w - 1) + 1
    total = s[y1][:, x1] - s[y0][:, x1] - s[y1][:, x0] + s[y0][:, x0]
    count = np.outer(y1 - y0, x1 - x0)
    return img * count > total * (100.0 - cfg.sensitivity) / 100.0


# --------------------------------------------------------------------------
# Hessian / Frangi
# --------------------------------------------------------------------------

def _derivative_kernels(sigma: float, truncate: float = 4.0):
    """Sampled Gaussian and its first two derivatives, moment-corrected.

    Truncation breaks the continuous identities, so the smoothing kernel is
    renormalised to sum 1, the first derivative to first moment 1, and the
    second derivative to zero sum and second moment 2. Polynomials up to
    degree 2 are then differentiated exactly and constants give exactly 0.
    """
    r = int(truncate * sigma + 0.5)
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-x * x / (2 * sigma * sigma))
    g /= g.sum()
    d1 = x * g
    d1 /= (x * d1).sum()
    d2 = (x * x / sigma ** 4 - 1 / sigma ** 2) * g
    d2 -= g * d2.sum()
    d2 *= 2.0 / (x * x * d2).sum()
    return g, d1, d2


def hessian_2d(img, sigma: float):
    """Scale-normalised second derivatives (Ixx, Ixy, Iyy) at scale sigma.

    x runs along columns, y along rows. Kernels are truncated at 4 sigma
    with reflected borders; responses are multiplied by sigma**2.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    img = np.asarray(img, dtype=np.float64)
    g, d1, d2 = _derivative_kernels(sigma)

    def sep(ky, kx):
        tmp = ndimage.correlate1d(img, ky, axis=0, mode="reflect")
        return ndimage.correlate1d(tmp, kx, axis=1, mode="reflect")

    s2 = sigma * sigma
    return sep(g, d2) * s2, sep(d1, d1) * s2, sep(d2, g) * s2


def _eigen_sorted(ixx, ixy, iyy):
    """Eigenvalues of the 2x2 Hessian ordered so that |l1| <= |l2|."""
    root = np.sqrt((ixx - iyy) ** 2 + 4.0 * ixy * ixy)
    mu1 = 0.5 * (ixx + iyy + root)
    mu2 = 0.5 * (ixx + iyy - root)
    swap = np.abs(mu1) > np.abs(mu2)
    return np.where(swap, mu2, mu1), np.where(swap, mu1, mu2)


_FLAT = 1e-9


def frangi_vesselness(img, cfg: FrangiConfig | None = None) -> np.ndarray:
    """Bright-ridge vesselness in [0, 1], maximised over scales."""
    cfg = cfg or FrangiConfig()
    img = np.asarray(img, dtype=np.float64)
    out = np.zeros_like(img)
    for sigma in cfg.scales:
        l1, l2 = _eigen_sorted(*hessian_2d(img, sigma))
        s2 = l1 * l1 + l2 * l2
        peak = math.sqrt(float(s2.max(initial=0.0)))
        if peak < _FLAT:
            continue  # no second-order structure at this scale
        c = cfg.c if cfg.c is not None else 0.5 * peak
        valid = l2 < 0
        safe_l2 = np.where(valid, l2, 1.0)
        rb2 = (l1 / safe_l2) ** 2
        v = np.exp(-rb2 / (2 * cfg.beta ** 2)) * (1.0 - np.exp(-s2 / (2 * c * c)))
        np.maximum(out, np.where(valid, v, 0.0), out=out)
    return np.clip(out, 0.0, 1.0)


# --------------------------------------------------------------------------
# Gabor
# --------------------------------------------------------------------------

def gabor_kernels(wavelength: float, theta: float, sigma_ratio: float = 0.5):
    """Zero-mean even/odd Gabor pair; the carrier runs along (cos theta, sin theta)
    in (x=column, y=row) coordinates."""
    sigma = sigma_ratio * wavelength
    r = int(math.ceil(3 * sigma))
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    u = x * math.cos(theta) + y * math.sin(theta)
    env = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    phase = 2 * math.pi * u / wavelength
    even = env * np.cos(phase)
    odd = env * np.sin(phase)
    even -= env * (even.sum() / env.sum())
    odd -= env * (odd.sum() / env.sum())
    return even, odd


def gabor_bank(img, cfg: GaborConfig | None = None) -> np.ndarray:
    """Per-orientation modulus responses (K x H x W), max over wavelengths."""
    cfg = cfg or GaborConfig()
    img = np.asarray(img, dtype=np.float64)
    out = np.zeros((cfg.orientations,) + img.shape)
    for k in range(cfg.orientations):
        theta = k * math.pi / cfg.orientations
        for lam in cfg.wavelengths:
            even, odd = gabor_kernels(lam, theta, cfg.sigma_ratio)
            re = ndimage.correlate(img, even, mode="reflect")
            im = ndimage.correlate(img, odd, mode="reflect")
            np.maximum(out[k], np.hypot(re, im), out=out[k])
    return out


def gabor_response(img, cfg: GaborConfig | None = None) -> np.ndarray:
    return gabor_bank(img, cfg).max(axis=0)


# --------------------------------------------------------------------------
# Composition
# --------------------------------------------------------------------------

def normalize_response(resp: np.ndarray) -> np.ndarray:
    lo, hi = float(resp.min()), float(resp.max())
    if hi <= lo:
        return np.zeros_like(resp, dtype=np.float64)
    return (resp - lo) / (hi - lo)


def filter_response(img, method: str | None, fcfg=None) -> np.ndarray:
    """Enhanced image for ``method`` (``None``/'at' returns the input)."""
    method = (method or "at").lower()
    if method in DECLARED_UNSUPPORTED:
        raise UnsupportedFilterError(f"unsupported filter {method!r}: SCIRD-TS is not implemented")
    if method == "at":
        return np.asarray(img, dtype=np.float64)
    if method == "frangi":
        return frangi_vesselness(img, fcfg)
    if method == "gabor":
        return gabor_response(img, fcfg)
    raise UnsupportedFilterError(f"unknown filter {method!r}; expected one of {FILTERS}")


def filter_then_threshold(img, method: str | None = None, fcfg=None, tcfg: ThresholdConfig | None = None) -> np.ndarray:
    """Adaptive threshold on the raw image (``None``) or on the min-max
    normalised filter response."""
    resp = filter_response(img, method, fcfg)
    if (method or "at").lower() != "at":
        resp = normalize_response(resp)
    return adaptive_threshold(resp, tcfg)
