"""Synthetic desktop scenes with planted browser icons and distractors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..imagecore import Rect, SeededStream, alpha_composite, resize
from ..sprites import (
    CLASS_NAMES,
    DESKTOP,
    TRAY,
    WALLPAPER_KINDS,
    SCENE_SIZE,
    IconSprite,
    free_spot,
    make_background,
    sprite_for,
)

SCENE_WIDTH, SCENE_HEIGHT = SCENE_SIZE


@dataclass(frozen=True)
class Placement:
    label: int | str  # browser class id or distractor name
    variant: str
    rect: Rect

    @property
    def is_browser(self) -> bool:
        return isinstance(self.label, int)


@dataclass
class Scene:
    full_desktop: np.ndarray
    tray_strip: Rect
    placements: list[Placement] = field(default_factory=list)
    perturbation: str | None = None
    scale: float = 1.0

    @property
    def browsers(self) -> list[Placement]:
        return [p for p in self.placements if p.is_browser]

    @property
    def distractors(self) -> list[Placement]:
        return [p for p in self.placements if not p.is_browser]

    def validate(self) -> None:
        for i, p in enumerate(self.placements):
            in_tray = self.tray_strip.y_min <= p.rect.y_min and p.rect.y_max <= self.tray_strip.y_max
            if p.variant == TRAY and not in_tray:
                raise ConfigurationError(f"tray placement {p} outside tray strip")
            if p.variant != TRAY and p.rect.intersects(self.tray_strip):
                raise ConfigurationError(f"desktop placement {p} overlaps tray strip")
            for q in self.placements[i + 1 :]:
                if p.rect.intersects(q.rect):
                    raise ConfigurationError(f"placements {p} and {q} overlap")


def _tray_area(strip: Rect) -> Rect:
    return Rect(strip.x_min, strip.y_min + 2, strip.x_max, strip.y_max - 2)


def build_scene(
    stream: SeededStream,
    icons: list[tuple[int, str]] = (),
    width: int = SCENE_WIDTH,
    height: int = SCENE_HEIGHT,
    kind: str | None = None,
    n_desktop_distractors: int = 2,
    n_tray_distractors: int = 2,
    tray_size_range: tuple[int, int] = (18, 26),
    sprites: dict[tuple[int, str], IconSprite] | None = None,
    scale: float = 1.0,
) -> Scene:
    """Wallpaper plus one placement per ``(class_id, variant)`` in ``icons``.

    ``scale`` resizes each browser sprite after rendering (1.25, 1.5 for the
    scale-brittleness scenes); the sprites themselves stay at native size.
    """
    kind = kind or WALLPAPER_KINDS[stream.choice(len(WALLPAPER_KINDS))]
    bg = make_background(kind, width, height, stream, n_desktop_distractors, n_tray_distractors)
    scene = Scene(bg.image, bg.tray_strip, scale=scale)
    scene.placements = [Placement(name, TRAY if r.y_min >= bg.tray_strip.y_min else DESKTOP, r) for name, r in bg.distractors]
    taken: list[Rect] = []
    for icon_class, variant in icons:
        if sprites is not None:
            pixels = sprites[(icon_class, variant)].pixels
        else:
            lo, hi = tray_size_range
            pixels = sprite_for(icon_class, variant, int(stream.integers(lo, hi + 1))).pixels
        if scale != 1.0:
            side = int(round(pixels.shape[0] * scale))
            pixels = resize(pixels, side, side)
        area = _tray_area(bg.tray_strip) if variant == TRAY else bg.desktop_area
        spot = free_spot(bg, pixels.shape[0], stream, area=area, taken=taken)
        if spot is None:
            raise ConfigurationError(f"no room for {CLASS_NAMES[icon_class]} {variant} in scene")
        scene.full_desktop = alpha_composite(scene.full_desktop, pixels, spot.x_min, spot.y_min)
        scene.placements.append(Placement(icon_class, variant, spot))
        taken.append(spot)
    scene.validate()
    return scene


def random_icon_set(stream: SeededStream, max_icons: int = 4) -> list[tuple[int, str]]:
    """1..max_icons distinct classes, each tray or desktop at random."""
    n = 1 + stream.choice(max_icons)
    classes = stream.permutation(len(CLASS_NAMES))[:n]
    return [(int(c), TRAY if stream.uniform() < 0.5 else DESKTOP) for c in classes]


FIXTURES = ("tray", "desktop", "both", "empty")


def fixture_scene(name: str, seed: int = 0) -> Scene:
    """Canonical workflow scenes: a tray icon only, a desktop icon only, both, or nothing."""
    stream = SeededStream(seed).child("fixture", name)
    if name == "tray":
        return build_scene(stream, [(0, TRAY)])
    if name == "desktop":
        return build_scene(stream, [(1, DESKTOP)])
    if name == "both":
        return build_scene(stream, [(0, TRAY), (2, DESKTOP)])
    if name == "empty":
        return build_scene(stream, [], n_desktop_distractors=0, n_tray_distractors=0)
    raise ConfigurationError(f"unknown scene fixture {name!r}; expected one of {FIXTURES}")


def baseline_scenes(
    seed: int,
    scales: tuple[float, ...] = (1.0, 1.25, 1.5),
    trials: int = 8,
    tray_size: int = 20,
    include_empty: bool = True,
) -> list[Scene]:
    """One desktop-shortcut icon per trial, rendered once per scale on the same wallpaper.

    Trial ``t`` uses class ``t % 4``; scenes are ordered trial-major, then by scale,
    followed by one scene without browser icons.
    """
    scenes = []
    for t in range(trials):
        c = t % len(CLASS_NAMES)
        sprites = {(c, DESKTOP): sprite_for(c, DESKTOP, tray_size)}
        for s in scales:
            stream = SeededStream(seed).child("baseline", t)
            scenes.append(build_scene(stream, [(c, DESKTOP)], sprites=sprites, scale=s))
    if include_empty:
        scenes.append(build_scene(SeededStream(seed).child("baseline", "empty"), []))
    return scenes
