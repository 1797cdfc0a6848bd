"""Image value types, 8-bit IO and the synthetic OCTA-like vessel generator.

Gray images are float arrays in [0, 1]; masks are boolean arrays with
``True`` marking vessel pixels. Plain numpy arrays are used as carriers;
:func:`as_gray` and :func:`as_mask` validate and normalise them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import SplitMix64

__all__ = [
    "ImageIOError",
    "MissingFileError",
    "UnsupportedChannelsError",
    "UnsupportedBitDepthError",
    "CorruptHeaderError",
    "as_gray",
    "as_mask",
    "is_thin",
    "load_gray",
    "load_mask",
    "save_gray",
    "save_mask",
    "to_bytes",
    "SynthConfig",
    "gen_synthetic_vessels",
]


class ImageIOError(Exception):
    """Base class for image reading/writing failures."""

    code = "io"


class MissingFileError(ImageIOError):
    code = "missing_file"


class UnsupportedChannelsError(ImageIOError):
    code = "unsupported_channels"


class UnsupportedBitDepthError(ImageIOError):
    code = "unsupported_bit_depth"


class CorruptHeaderError(ImageIOError):
    code = "corrupt_header"


def as_gray(values) -> np.ndarray:
    img = np.asarray(values, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"gray image must be 2-D, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0.0 or img.max(initial=0.0) > 1.0:
        raise ValueError("gray image values must be finite and within [0, 1]")
    return img


def as_mask(bits) -> np.ndarray:
    mask = np.asarray(bits)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    return mask.astype(bool)


def is_thin(mask) -> bool:
    """True if no 2x2 block of the mask is entirely set."""
    m = np.asarray(mask, dtype=bool)
    if m.shape[0] < 2 or m.shape[1] < 2:
        return True
    block = m[:-1, :-1] & m[1:, :-1] & m[:-1, 1:] & m[1:, 1:]
    return not block.any()


# --------------------------------------------------------------------------
# 8-bit IO
# --------------------------------------------------------------------------

def to_bytes(img) -> np.ndarray:
    """Quantise [0, 1] values to uint8 with round-half-up."""
    img = as_gray(img)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise CorruptHeaderError("truncated PGM header")
    return data[start:pos], pos


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    magic = data[:2]
    if magic in (b"P6", b"P3"):
        raise UnsupportedChannelsError(f"{path}: unsupported channel count (PPM colour image)")
    if magic != b"P5":
        raise CorruptHeaderError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w_tok, pos = _read_token(data, 2)
        h_tok, pos = _read_token(data, pos)
        m_tok, pos = _read_token(data, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as exc:
        raise CorruptHeaderError(f"{path}: malformed PGM header") from exc
    if width <= 0 or height <= 0 or maxval <= 0:
        raise CorruptHeaderError(f"{path}: invalid PGM dimensions")
    if maxval > 255:
        raise UnsupportedBitDepthError(f"{path}: unsupported bit depth (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos:pos + width * height]
    if len(raw) != width * height:
        raise CorruptHeaderError(f"{path}: pixel data truncated")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width).copy()


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise UnsupportedBitDepthError(f"{path}: unsupported bit depth (mode {mode})")
            if mode == "1":
                return (np.asarray(im, dtype=np.uint8) * 255).astype(np.uint8)
            if mode != "L":
                raise UnsupportedChannelsError(f"{path}: unsupported channel count (mode {mode})")
            return np.asarray(im, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptHeaderError(f"{path}: unreadable PNG ({exc})") from exc


def read_bytes_image(path) -> np.ndarray:
    """Read an 8-bit single-channel PGM or PNG as a uint8 array."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"{path}: no such file")
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"\x89PNG"):
        return _read_png(path)
    if head[:1] == b"P":
        return _read_pgm(path)
    raise CorruptHeaderError(f"{path}: unrecognised image format")


def write_bytes_image(arr: np.ndarray, path) -> None:
    path = Path(path)
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(arr, mode="L").save(path)
        return
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def load_gray(path) -> np.ndarray:
    return read_bytes_image(path).astype(np.float64) / 255.0


def load_mask(path) -> np.ndarray:
    return read_bytes_image(path) > 127


def save_gray(img, path) -> None:
    """Write ``img`` as 8-bit PGM (or PNG by suffix), value*255 rounded half-up."""
    write_bytes_image(to_bytes(img), path)


def save_mask(mask, path) -> None:
    write_bytes_image(np.where(as_mask(mask), 255, 0).astype(np.uint8), path)


# --------------------------------------------------------------------------
# Synthetic vessels
# --------------------------------------------------------------------------

# 8 compass steps, counter-clockwise from east
_STEPS = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic generator.

    Walk lengths and vessel counts are given per 76 pixels of image side and
    scale with the image so the vessel fraction is roughly size independent.
    """

    n_trunks: int = 2
    trunk_branches: int = 2
    n_capillaries: int = 14
    trunk_length: int = 70
    capillary_length: int = 30
    turn_prob: float = 0.25
    trunk_width: tuple[int, int] = (2, 3)
    trunk_intensity: tuple[float, float] = (0.7, 1.0)
    capillary_intensity: tuple[float, float] = (0.25, 0.5)
    speckle: tuple[float, float] = (0.7, 1.3)
    background_noise: float = 0.15
    min_fraction: float = 0.05
    max_fraction: float = 0.45


def _walk(rng: SplitMix64, y: int, x: int, d: int, length: int, h: int, w: int, turn_prob: float):
    """Random 8-connected walk; returns visited integer positions."""
    pts = [(y, x)]
    for _ in range(length):
        if rng.uniform() < turn_prob:
            d = (d + (1 if rng.uniform() < 0.5 else -1)) % 8
        dy, dx = _STEPS[d]
        ny, nx = y + dy, x + dx
        if not (0 <= ny < h and 0 <= nx < w):
            break
        y, x = ny, nx
        pts.append((y, x))
    return pts


def _stamp(intensity: np.ndarray, mask: np.ndarray, pts, width: int, value: float) -> None:
    h, w = mask.shape
    lo = -(width // 2) if width > 2 else 0
    for y, x in pts:
        y0, x0 = max(y + lo, 0), max(x + lo, 0)
        y1, x1 = min(y + lo + width, h), min(x + lo + width, w)
        if width >= 2:
            # keep full blocks inside the image
            y0, x0 = min(y0, h - width), min(x0, w - width)
            y1, x1 = y0 + width, x0 + width
        mask[y0:y1, x0:x1] = True
        np.maximum(intensity[y0:y1, x0:x1], value, out=intensity[y0:y1, x0:x1])


def _border_start(rng: SplitMix64, h: int, w: int):
    side = rng.integers(0, 4)
    if side == 0:
        return 0, rng.integers(0, w), 6  # top edge, head south
    if side == 1:
        return h - 1, rng.integers(0, w), 2
    if side == 2:
        return rng.integers(0, h), 0, 0
    return rng.integers(0, h), w - 1, 4


def gen_synthetic_vessels(seed: int, height: int = 76, width: int = 76, cfg: SynthConfig | None = None):
    """Generate a speckled vessel image and its exact vessel mask.

    Trunks are 2-3 px wide branching walks entering from the border;
    capillaries are 1 px walks sprouting from existing vessels. The image is
    vessel intensity times per-pixel multiplicative speckle, plus dim
    background noise, clipped to [0, 1].
    """
    if height < 16 or width < 16:
        raise ValueError(f"degenerate dimensions {height}x{width}; both must be >= 16")
    cfg = cfg or SynthConfig()
    rng = SplitMix64(seed)
    scale = max(height, width) / 76.0
    area_scale = height * width / (76.0 * 76.0)
    mask = np.zeros((height, width), dtype=bool)
    intensity = np.zeros((height, width), dtype=np.float64)
    vessel_pts: list[tuple[int, int]] = []

    trunk_len = max(4, int(round(cfg.trunk_length * scale)))
    for _ in range(max(1, int(round(cfg.n_trunks * scale))) if cfg.n_trunks > 0 else 0):
        y, x, d = _border_start(rng, height, width)
        width_px = rng.integers(cfg.trunk_width[0], cfg.trunk_width[1] + 1)
        value = rng.uniform_range(*cfg.trunk_intensity)
        pts = _walk(rng, y, x, d, trunk_len, height, width, cfg.turn_prob)
        _stamp(intensity, mask, pts, width_px, value)
        vessel_pts.extend(pts)
        for _ in range(cfg.trunk_branches):
            by, bx = pts[rng.integers(0, len(pts))]
            bd = (d + (2 if rng.uniform() < 0.5 else -2)) % 8
            bpts = _walk(rng, by, bx, bd, trunk_len // 2, height, width, cfg.turn_prob)
            _stamp(intensity, mask, bpts, max(2, width_px - 1), value * rng.uniform_range(0.9, 1.0))
            vessel_pts.extend(bpts)

    cap_len = max(3, int(round(cfg.capillary_length * scale)))

    def add_capillary():
        if vessel_pts and rng.uniform() < 0.7:
            y, x = vessel_pts[rng.integers(0, len(vessel_pts))]
        else:
            y, x = rng.integers(0, height), rng.integers(0, width)
        d = rng.integers(0, 8)
        pts = _walk(rng, y, x, d, cap_len, height, width, cfg.turn_prob)
        _stamp(intensity, mask, pts, 1, rng.uniform_range(*cfg.capillary_intensity))
        vessel_pts.extend(pts)

    if cfg.n_capillaries > 0:
        for _ in range(int(round(cfg.n_capillaries * area_scale / scale))):
            if mask.mean() >= cfg.max_fraction:
                break
            add_capillary()
        while mask.mean() < cfg.min_fraction:
            add_capillary()

    speckle = rng.uniform_range(cfg.speckle[0], cfg.speckle[1], height * width).reshape(height, width)
    background = cfg.background_noise * rng.uniform(height * width).reshape(height, width)
    img = np.where(mask, intensity, background) * speckle
    return np.clip(img, 0.0, 1.0), mask
