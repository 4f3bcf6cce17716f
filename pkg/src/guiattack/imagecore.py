"""Image primitives used throughout the package.

Images are plain numpy arrays of shape ``(H, W, C)`` with ``C`` in {1, 3, 4}
and values in ``[0, 1]``.  Quantisation to 8 bits only happens at PNG I/O.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BoundsError

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8
SSIM_STRIDE = 4
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, order=True)
class Rect:
    """Axis-aligned box, inclusive ``min`` and exclusive ``max`` coordinates."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate rect {self}")

    @classmethod
    def from_xywh(cls, x: int, y: int, w: int, h: int) -> Rect:
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def translate(self, dx: int, dy: int) -> Rect:
        return Rect(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def fits_in(self, width: int, height: int) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    def intersects(self, other: Rect) -> bool:
        return (
            self.x_min < other.x_max
            and other.x_min < self.x_max
            and self.y_min < other.y_max
            and other.y_min < self.y_max
        )

    def iou(self, other: Rect) -> float:
        iw = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        ih = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        return inter / (self.area + other.area - inter)

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def check_image(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] not in (1, 3, 4):
        raise ValueError(f"expected (H, W, C) with C in 1/3/4, got shape {img.shape}")
    return img


def new_image(width: int, height: int, color=(0.0, 0.0, 0.0)) -> np.ndarray:
    color = np.asarray(color, dtype=np.float64)
    return np.broadcast_to(color, (height, width, color.size)).copy()


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luma (H, W) of a 1/3/4-channel image; alpha is ignored."""
    check_image(img)
    if img.shape[2] == 1:
        return img[..., 0].astype(np.float64)
    return img[..., :3] @ _LUMA


# ---------------------------------------------------------------- compositing


def alpha_composite(base: np.ndarray, sprite: np.ndarray, x: int, y: int) -> np.ndarray:
    """Blend an RGBA ``sprite`` over RGB ``base`` with its top-left at (x, y)."""
    check_image(base)
    check_image(sprite)
    if sprite.shape[2] != 4:
        raise ValueError("sprite must be RGBA")
    h, w = sprite.shape[:2]
    if not Rect.from_xywh(x, y, w, h).fits_in(base.shape[1], base.shape[0]):
        raise BoundsError(f"sprite {w}x{h} at ({x}, {y}) exceeds base {base.shape[1]}x{base.shape[0]}")
    out = base.astype(np.float64, copy=True)
    alpha = sprite[..., 3:4]
    region = out[y : y + h, x : x + w, :3]
    out[y : y + h, x : x + w, :3] = sprite[..., :3] * alpha + region * (1.0 - alpha)
    return out


def crop(img: np.ndarray, r: Rect) -> np.ndarray:
    check_image(img)
    if not r.fits_in(img.shape[1], img.shape[0]):
        raise BoundsError(f"{r} outside image {img.shape[1]}x{img.shape[0]}")
    return img[r.y_min : r.y_max, r.x_min : r.x_max].copy()


# -------------------------------------------------------------------- resize


@lru_cache(maxsize=256)
def resize_matrix(old: int, new: int) -> np.ndarray:
    """Row-stochastic ``(new, old)`` matrix resampling one axis.

    Upscaling uses bilinear interpolation with half-pixel centres; downscaling
    averages each output pixel's footprint (area resampling).
    """
    if old < 1 or new < 1:
        raise ValueError("dimensions must be >= 1")
    m = np.zeros((new, old))
    if new == old:
        np.fill_diagonal(m, 1.0)
    elif new > old:
        pos = (np.arange(new) + 0.5) * (old / new) - 0.5
        pos = np.clip(pos, 0.0, old - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, old - 1)
        frac = pos - lo
        rows = np.arange(new)
        np.add.at(m, (rows, lo), 1.0 - frac)
        np.add.at(m, (rows, hi), frac)
    else:
        scale = old / new
        for i in range(new):
            a, b = i * scale, (i + 1) * scale
            for j in range(int(math.floor(a)), min(int(math.ceil(b)), old)):
                m[i, j] = min(b, j + 1) - max(a, j)
        m /= m.sum(axis=1, keepdims=True)
    m.setflags(write=False)
    return m


def resize(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Separable resample to ``new_w`` x ``new_h``; see :func:`resize_matrix`."""
    check_image(img)
    if new_w < 1 or new_h < 1:
        raise ValueError("resize target must be at least 1x1")
    h, w = img.shape[:2]
    if (w, h) == (new_w, new_h):
        return img.copy()
    rh = resize_matrix(h, new_h)
    rw = resize_matrix(w, new_w)
    out = np.einsum("ij,jkc,lk->ilc", rh, img, rw, optimize=True)
    return np.clip(out, 0.0, 1.0)


def resize_nearest(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Point-sample the pixel nearest each output pixel centre; values are never mixed."""
    check_image(img)
    if new_w < 1 or new_h < 1:
        raise ValueError("resize target must be at least 1x1")
    h, w = img.shape[:2]
    ys = np.minimum(((np.arange(new_h) + 0.5) * h / new_h).astype(int), h - 1)
    xs = np.minimum(((np.arange(new_w) + 0.5) * w / new_w).astype(int), w - 1)
    return img[ys][:, xs]


# ------------------------------------------------------------------- metrics


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images; ``inf`` if equal."""
    _same_shape(a, b)
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr_for_report(value: float) -> float:
    return min(value, PSNR_CAP_DB)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over 8x8 windows at stride 4 (grayscale)."""
    _same_shape(a, b)
    ga, gb = to_gray(a), to_gray(b)
    h, w = ga.shape
    win_h, win_w = min(SSIM_WINDOW, h), min(SSIM_WINDOW, w)
    wa = np.lib.stride_tricks.sliding_window_view(ga, (win_h, win_w))[::SSIM_STRIDE, ::SSIM_STRIDE]
    wb = np.lib.stride_tricks.sliding_window_view(gb, (win_h, win_w))[::SSIM_STRIDE, ::SSIM_STRIDE]
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-1, -2))
    var_b = (db * db).mean(axis=(-1, -2))
    cov = (da * db).mean(axis=(-1, -2))
    num = (2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_a**2 + mu_b**2 + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


@dataclass(frozen=True)
class QualityScore:
    psnr_db: float
    ssim: float

    @classmethod
    def between(cls, original: np.ndarray, perturbed: np.ndarray) -> QualityScore:
        return cls(psnr(original, perturbed), ssim(original, perturbed))


# ---------------------------------------------------------------- randomness


def derive_seed(seed: int, *keys) -> int:
    """Stable 64-bit child seed from a parent seed and any printable keys."""
    text = ":".join([str(int(seed))] + [str(k) for k in keys])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


class SeededStream:
    """Deterministic random stream over a PCG64 bit generator.

    ``counter`` counts scalar draws taken so far.  Normal variates come from a
    Box-Muller transform of the stream's own uniforms, so they depend only on
    the PCG64 bit sequence.  A stream must have a single owner; parallel
    consumers take :meth:`child` streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *keys) -> SeededStream:
        return SeededStream(derive_seed(self.seed, *keys))

    def _count(self, size) -> None:
        self.counter += 1 if size is None else int(np.prod(size))

    def uniform(self, size=None):
        """Uniform draws on [0, 1)."""
        self._count(size)
        return self._gen.random(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high)."""
        self._count(size)
        return self._gen.integers(low, high, size=size)

    def normal(self, mean: float = 0.0, sigma: float = 1.0, size=None):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u1 = 1.0 - self.uniform(pairs)  # (0, 1]
        u2 = self.uniform(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([radius * np.cos(2 * np.pi * u2), radius * np.sin(2 * np.pi * u2)])[:n]
        values = mean + sigma * z
        return float(values[0]) if size is None else values.reshape(size)

    def poisson(self, lam: float, size=None):
        self._count(size)
        return self._gen.poisson(lam, size)

    def gamma(self, shape: float, scale: float, size=None):
        self._count(size)
        return self._gen.gamma(shape, scale, size)

    def choice(self, n: int) -> int:
        return int(self.integers(0, n))

    def permutation(self, n: int) -> np.ndarray:
        self._count(n)
        return self._gen.permutation(n)


def gaussian_draw(stream: SeededStream, mean: float, sigma: float) -> float:
    return stream.normal(mean, sigma)


# ------------------------------------------------------------------------ I/O


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: np.ndarray, path: str | Path) -> Path:
    check_image(img)
    if img.shape[2] not in (3, 4):
        raise ValueError("PNG output supports RGB or RGBA only")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(img)).save(path, format="PNG")
    return path


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA"):
            im = im.convert("RGBA" if "A" in im.mode else "RGB")
        return np.asarray(im, dtype=np.float64) / 255.0
