"""Procedural icon sprites and desktop wallpapers.

Every asset is rendered from geometry at 4x supersampling and area-downsampled,
so edges carry fractional alpha while interiors are fully opaque.  Rendering
is a pure function of its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imagecore import Rect, SeededStream, alpha_composite, resize

CLASS_NAMES = ("chrome", "firefox", "edge", "opera")
BACKGROUND_CLASS = len(CLASS_NAMES)
DISTRACTOR_NAMES = ("folder", "recycle_bin", "document", "terminal", "app_tile")
WALLPAPER_KINDS = ("gradient", "radial", "photo", "solid")

TRAY, DESKTOP = "tray", "desktop_shortcut"
TRAY_SIZE_RANGE = (16, 32)
DESKTOP_SIZE_RANGE = (32, 64)
TASKBAR_HEIGHT = 32
SCENE_SIZE = (320, 240)  # full-desktop width, height
PHOTO_GRAIN = 0.01  # per-pixel grain of the "photo" wallpaper

_SS = 4


def class_id(name: str) -> int:
    return CLASS_NAMES.index(name)


def _grid(size: int):
    n = size * _SS
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    v, u = np.meshgrid(c, c, indexing="ij")
    return u, v


def _finish(rgb: np.ndarray, alpha: np.ndarray, size: int) -> np.ndarray:
    rgba = np.concatenate([rgb * alpha[..., None], alpha[..., None]], axis=2)
    small = resize(rgba, size, size)
    a = small[..., 3:4]
    rgb_small = np.where(a > 0, small[..., :3] / np.maximum(a, 1e-12), 0.0)
    return np.clip(np.concatenate([rgb_small, a], axis=2), 0.0, 1.0)


def _paint(rgb, alpha, mask, color):
    rgb[mask] = color
    alpha[mask] = 1.0


def _canvas(size):
    n = size * _SS
    return np.zeros((n, n, 3)), np.zeros((n, n))


# ------------------------------------------------------------ browser icons


def _chrome(size):
    u, v = _grid(size)
    r, ang = np.hypot(u, v), np.arctan2(v, u)
    rgb, alpha = _canvas(size)
    ring = (r <= 0.95) & (r > 0.45)
    sector = ((ang + np.pi / 2) % (2 * np.pi)) / (2 * np.pi / 3)
    _paint(rgb, alpha, ring & (sector >= 2), (0.86, 0.20, 0.17))
    _paint(rgb, alpha, ring & (sector < 1), (0.99, 0.78, 0.10))
    _paint(rgb, alpha, ring & (sector >= 1) & (sector < 2), (0.10, 0.60, 0.25))
    _paint(rgb, alpha, (r <= 0.45) & (r > 0.36), (1.0, 1.0, 1.0))
    _paint(rgb, alpha, r <= 0.36, (0.26, 0.52, 0.96))
    return rgb, alpha


def _firefox(size):
    u, v = _grid(size)
    r = np.hypot(u, v)
    rgb, alpha = _canvas(size)
    disk = r <= 0.95
    t = np.clip((v + 1) / 2, 0, 1)[..., None]
    grad = (1 - t) * np.array([1.0, 0.80, 0.15]) + t * np.array([0.90, 0.25, 0.10])
    rgb[disk] = grad[disk]
    alpha[disk] = 1.0
    globe = np.hypot(u - 0.12, v + 0.05) <= 0.52
    _paint(rgb, alpha, globe, (0.30, 0.18, 0.62))
    tail = (np.hypot(u + 0.35, v + 0.35) <= 0.28) & ~globe
    _paint(rgb, alpha, tail & disk, (1.0, 0.55, 0.05))
    return rgb, alpha


def _edge(size):
    u, v = _grid(size)
    r, ang = np.hypot(u, v), np.arctan2(v, u)
    rgb, alpha = _canvas(size)
    t = np.clip((u + 1) / 2, 0, 1)[..., None]
    grad = (1 - t) * np.array([0.05, 0.55, 0.85]) + t * np.array([0.05, 0.30, 0.70])
    ring = (r <= 0.95) & (r > 0.50)
    gap = (ang > 0.15) & (ang < 1.1)
    bar = (np.abs(v + 0.02) <= 0.14) & (np.abs(u) <= 0.80)
    shape = (ring & ~gap) | bar
    rgb[shape] = grad[shape]
    alpha[shape] = 1.0
    return rgb, alpha


def _opera(size):
    u, v = _grid(size)
    rgb, alpha = _canvas(size)
    outer = (u / 0.82) ** 2 + (v / 0.95) ** 2 <= 1.0
    inner = (u / 0.38) ** 2 + (v / 0.66) ** 2 <= 1.0
    _paint(rgb, alpha, outer & ~inner, (0.90, 0.08, 0.16))
    return rgb, alpha


# -------------------------------------------------------------- distractors


def _folder(size):
    u, v = _grid(size)
    rgb, alpha = _canvas(size)
    body = (np.abs(u) <= 0.9) & (v >= -0.45) & (v <= 0.75)
    tab = (u >= -0.9) & (u <= -0.15) & (v >= -0.65) & (v < -0.45)
    _paint(rgb, alpha, body | tab, (0.96, 0.80, 0.35))
    _paint(rgb, alpha, body & (v < -0.30), (0.88, 0.68, 0.22))
    return rgb, alpha


def _recycle_bin(size):
    u, v = _grid(size)
    rgb, alpha = _canvas(size)
    half = 0.55 + 0.15 * (v + 0.6) / 1.45
    body = (v >= -0.6) & (v <= 0.85) & (np.abs(u) <= 0.70 - 0.15 * (v + 0.6) / 1.45)
    lid = (v >= -0.80) & (v < -0.6) & (np.abs(u) <= 0.8)
    _paint(rgb, alpha, body | lid, (0.70, 0.74, 0.78))
    slats = body & (np.abs(np.abs(u) - 0.22) < 0.05) & (np.abs(u) < half)
    _paint(rgb, alpha, slats, (0.45, 0.48, 0.52))
    return rgb, alpha


def _document(size):
    u, v = _grid(size)
    rgb, alpha = _canvas(size)
    page = (np.abs(u) <= 0.65) & (np.abs(v) <= 0.9)
    _paint(rgb, alpha, page, (0.97, 0.97, 0.97))
    lines = page & (np.abs(u) <= 0.45) & (((v + 0.6) % 0.3) < 0.08) & (v > -0.65) & (v < 0.65)
    _paint(rgb, alpha, lines, (0.55, 0.55, 0.60))
    return rgb, alpha


def _terminal(size):
    u, v = _grid(size)
    rgb, alpha = _canvas(size)
    box = (np.abs(u) <= 0.9) & (np.abs(v) <= 0.75)
    _paint(rgb, alpha, box, (0.08, 0.08, 0.10))
    prompt = box & (np.abs(v + 0.2) < 0.08) & (u > -0.7) & (u < 0.1)
    _paint(rgb, alpha, prompt, (0.25, 0.90, 0.35))
    return rgb, alpha


def _app_tile(size):
    u, v = _grid(size)
    rgb, alpha = _canvas(size)
    tile = np.maximum(np.abs(u), np.abs(v)) <= 0.85
    _paint(rgb, alpha, tile, (0.55, 0.30, 0.75))
    glyph = np.hypot(u, v) <= 0.35
    _paint(rgb, alpha, glyph, (0.95, 0.95, 1.0))
    return rgb, alpha


_RENDERERS = {
    "chrome": _chrome,
    "firefox": _firefox,
    "edge": _edge,
    "opera": _opera,
    "folder": _folder,
    "recycle_bin": _recycle_bin,
    "document": _document,
    "terminal": _terminal,
    "app_tile": _app_tile,
}


def render_icon(name: str, size: int) -> np.ndarray:
    """RGBA glyph ``size`` x ``size`` for a browser or distractor name."""
    if size < 4:
        raise ValueError("icon size must be >= 4")
    rgb, alpha = _RENDERERS[name](size)
    return _finish(rgb, alpha, size)


# ----------------------------------------------------------------- sprites


@dataclass
class IconSprite:
    icon_class: int
    variant: str
    pixels: np.ndarray

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    @property
    def name(self) -> str:
        return CLASS_NAMES[self.icon_class]


def tray_sprite(icon_class: int, size: int = 24) -> IconSprite:
    lo, hi = TRAY_SIZE_RANGE
    if not lo <= size <= hi:
        raise ValueError(f"tray size must be in [{lo}, {hi}]")
    return IconSprite(icon_class, TRAY, render_icon(CLASS_NAMES[icon_class], size))


def _badge(side: int) -> np.ndarray:
    """Opaque white-on-blue shortcut arrow, ``side`` x ``side`` RGB."""
    n = side * _SS
    c = (np.arange(n) + 0.5) / n
    y, x = np.meshgrid(c, c, indexing="ij")
    shaft = (np.abs((x - 0.22) - (0.78 - y)) < 0.16) & (x > 0.18) & (x < 0.66) & (y > 0.34) & (y < 0.82)
    head = (x > 0.38) & (y < 0.62) & (x < 0.80) & (y > 0.20) & ((x - 0.38) + (0.62 - y) > 0.30)
    arrow = (shaft | head).astype(float)
    rgb = arrow[..., None] * np.ones(3) + (1 - arrow[..., None]) * np.array([0.12, 0.32, 0.80])
    return resize(rgb, side, side)


def badge_rect(size: int) -> Rect:
    side = max(6, int(round(size * 0.42)))
    return Rect(0, size - side, side, size)


def make_shortcut_variant(sprite: IconSprite) -> IconSprite:
    """Double a tray sprite's size and stamp the shortcut arrow bottom-left."""
    if sprite.variant != TRAY:
        raise ValueError("make_shortcut_variant expects a tray sprite")
    size = min(2 * sprite.size, DESKTOP_SIZE_RANGE[1])
    up = resize(sprite.pixels, size, size)
    r = badge_rect(size)
    up[r.y_min : r.y_max, r.x_min : r.x_max, :3] = _badge(r.width)
    up[r.y_min : r.y_max, r.x_min : r.x_max, 3] = 1.0
    return IconSprite(sprite.icon_class, DESKTOP, up)


def plain_upscale(sprite: IconSprite) -> np.ndarray:
    size = min(2 * sprite.size, DESKTOP_SIZE_RANGE[1])
    return resize(sprite.pixels, size, size)


def sprite_for(icon_class: int, variant: str, tray_size: int = 24) -> IconSprite:
    tray = tray_sprite(icon_class, tray_size)
    return tray if variant == TRAY else make_shortcut_variant(tray)


def default_sprites(tray_size: int = 24) -> dict[tuple[int, str], IconSprite]:
    return {(c, v): sprite_for(c, v, tray_size) for c in range(len(CLASS_NAMES)) for v in (TRAY, DESKTOP)}


def distractor_sprite(name: str, size: int) -> np.ndarray:
    if name not in DISTRACTOR_NAMES:
        raise ValueError(f"unknown distractor {name!r}")
    return render_icon(name, size)


# -------------------------------------------------------------- wallpapers


@dataclass
class Background:
    """Desktop wallpaper with a taskbar strip and already-placed distractors."""

    image: np.ndarray
    tray_strip: Rect
    kind: str
    distractors: list[tuple[str, Rect]] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def desktop_area(self) -> Rect:
        return Rect(0, 0, self.width, self.tray_strip.y_min)

    @property
    def occupied(self) -> list[Rect]:
        return [r for _, r in self.distractors]


def _wallpaper(kind: str, width: int, height: int, stream: SeededStream) -> np.ndarray:
    y, x = np.mgrid[0:height, 0:width].astype(float)
    c1 = 0.15 + 0.7 * stream.uniform(3)
    c2 = 0.15 + 0.7 * stream.uniform(3)
    if kind == "gradient":
        t = (y / max(height - 1, 1))[..., None]
        img = (1 - t) * c1 + t * c2
    elif kind == "radial":
        cx, cy = stream.uniform() * width, stream.uniform() * height
        t = np.clip(np.hypot(x - cx, y - cy) / np.hypot(width, height), 0, 1)[..., None]
        img = (1 - t) * c1 + t * c2
    elif kind == "photo":
        img = np.broadcast_to(c1, (height, width, 3)).copy()
        for _ in range(12):
            cx, cy = stream.uniform() * width, stream.uniform() * height
            rad = 20 + stream.uniform() * 80
            col = 0.1 + 0.8 * stream.uniform(3)
            w = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * rad**2))[..., None]
            img = img * (1 - 0.8 * w) + col * 0.8 * w
        img = img + stream.normal(0.0, PHOTO_GRAIN, (height, width, 3))
    elif kind == "solid":
        img = np.broadcast_to(c1, (height, width, 3)).copy()
        img = img + stream.normal(0.0, 0.01, (height, width, 1))
    else:
        raise ValueError(f"unknown wallpaper kind {kind!r}")
    return np.clip(img, 0.0, 1.0)


def _free_spot(area: Rect, size: int, taken: list[Rect], stream: SeededStream, margin: int = 6, tries: int = 200):
    for _ in range(tries):
        x = int(stream.integers(area.x_min, area.x_max - size + 1))
        y = int(stream.integers(area.y_min, area.y_max - size + 1))
        r = Rect.from_xywh(x, y, size, size)
        grown = [Rect(t.x_min - margin, t.y_min - margin, t.x_max + margin, t.y_max + margin) for t in taken]
        if not any(r.intersects(g) for g in grown):
            return r
    return None


def make_background(
    kind: str,
    width: int,
    height: int,
    stream: SeededStream,
    n_desktop_distractors: int = 2,
    n_tray_distractors: int = 2,
) -> Background:
    """Wallpaper of ``kind`` with a taskbar strip and distractor icons."""
    img = _wallpaper(kind, width, height, stream)
    strip = Rect(0, height - TASKBAR_HEIGHT, width, height)
    img[strip.y_min :, :, :] = np.array([0.16, 0.17, 0.20])
    img[strip.y_min, :, :] = 0.35
    bg = Background(img, strip, kind)
    inner_strip = Rect(strip.x_min, strip.y_min + 2, strip.x_max, strip.y_max - 2)
    for area, count, (lo, hi) in (
        (bg.desktop_area, n_desktop_distractors, (32, 48)),
        (inner_strip, n_tray_distractors, (16, 24)),
    ):
        for _ in range(count):
            name = DISTRACTOR_NAMES[stream.choice(len(DISTRACTOR_NAMES))]
            size = int(stream.integers(lo, hi + 1))
            spot = _free_spot(area, size, bg.occupied, stream)
            if spot is None:
                continue
            bg.image = alpha_composite(bg.image, distractor_sprite(name, size), spot.x_min, spot.y_min)
            bg.distractors.append((name, spot))
    return bg


def free_spot(bg: Background, size: int, stream: SeededStream, area: Rect | None = None, taken=()) -> Rect | None:
    """Random placement for a ``size`` icon avoiding distractors and ``taken``."""
    if area is None:
        area = bg.desktop_area
    return _free_spot(area, size, bg.occupied + list(taken), stream)
