"""Labelled icon-crop dataset: compositing, cropping, splitting and export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BoundsError, ConfigurationError
from .imagecore import Rect, SeededStream, alpha_composite, crop, derive_seed, load_png, save_png
from .sprites import (
    CLASS_NAMES,
    DESKTOP,
    TRAY,
    WALLPAPER_KINDS,
    Background,
    IconSprite,
    free_spot,
    make_background,
    sprite_for,
)

CROP_SIZE = 300
CSV_COLUMNS = ["image_id", "width", "height", "class", "x_min", "y_min", "x_max", "y_max"]
VARIANTS = (TRAY, DESKTOP)


@dataclass(frozen=True)
class Annotation:
    image_id: str
    icon_class: int
    bbox: Rect
    width: int = CROP_SIZE
    height: int = CROP_SIZE

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.icon_class]


@dataclass
class ManifestEntry:
    annotation: Annotation
    path: str
    variant: str
    split: str = "train"

    @property
    def image_id(self) -> str:
        return self.annotation.image_id

    @property
    def icon_class(self) -> int:
        return self.annotation.icon_class

    @property
    def bbox(self) -> Rect:
        return self.annotation.bbox


@dataclass
class DatasetManifest:
    seed: int
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def subset(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def image(self, entry: ManifestEntry) -> np.ndarray:
        if self.root is None:
            raise ConfigurationError("manifest has no root directory")
        return load_png(self.root / entry.path)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "classes": [{"id": i, "name": n} for i, n in enumerate(CLASS_NAMES)],
            "entries": [
                {
                    "image_id": e.image_id,
                    "path": e.path,
                    "class_id": e.icon_class,
                    "variant": e.variant,
                    "bbox": e.bbox.as_list(),
                    "split": e.split,
                }
                for e in self.entries
            ],
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        path = Path(path)
        doc = json.loads(path.read_text())
        names = [c["name"] for c in sorted(doc["classes"], key=lambda c: c["id"])]
        if tuple(names) != CLASS_NAMES:
            raise ConfigurationError(f"unexpected class list {names}")
        entries = [
            ManifestEntry(
                Annotation(e["image_id"], e["class_id"], Rect(*e["bbox"])),
                e["path"],
                e["variant"],
                e["split"],
            )
            for e in doc["entries"]
        ]
        return cls(doc["seed"], entries, path.parent)


@dataclass
class DatasetConfig:
    per_variant: int = 100
    seed: int = 0
    test_fraction: float = 0.2
    background_size: tuple[int, int] = (400, 400)
    n_backgrounds: int = 8
    tray_size_range: tuple[int, int] = (18, 26)
    # Optional fixed assets; None means procedural rendering per entry.
    sprites: dict[tuple[int, str], IconSprite] | None = None
    backgrounds: list[Background] | None = None

    @classmethod
    def from_dict(cls, d: dict) -> DatasetConfig:
        known = {"per_variant", "seed", "test_fraction", "background_size", "n_backgrounds", "tray_size_range"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown dataset options {sorted(unknown)}")
        kw = dict(d)
        for key in ("background_size", "tray_size_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


def synthesize_crop(
    background: np.ndarray,
    sprite: IconSprite,
    pos: tuple[int, int],
    stream: SeededStream,
    image_id: str = "",
    crop_size: int = CROP_SIZE,
) -> tuple[np.ndarray, Annotation]:
    """Paste ``sprite`` at ``pos`` and cut a jittered crop that contains it."""
    bh, bw = background.shape[:2]
    if bw < crop_size or bh < crop_size:
        raise ValueError(f"background {bw}x{bh} smaller than {crop_size}x{crop_size}")
    x, y = pos
    s = sprite.pixels.shape
    placed = Rect.from_xywh(x, y, s[1], s[0])
    if not placed.fits_in(bw, bh) or placed.width > crop_size or placed.height > crop_size:
        raise BoundsError(f"sprite at {placed} cannot fit a {crop_size} crop inside the background")
    scene = alpha_composite(background, sprite.pixels, x, y)
    x0 = int(stream.integers(max(0, placed.x_max - crop_size), min(x, bw - crop_size) + 1))
    y0 = int(stream.integers(max(0, placed.y_max - crop_size), min(y, bh - crop_size) + 1))
    window = Rect.from_xywh(x0, y0, crop_size, crop_size)
    ann = Annotation(image_id, sprite.icon_class, placed.translate(-x0, -y0), crop_size, crop_size)
    return crop(scene, window), ann


def default_backgrounds(config: DatasetConfig) -> list[Background]:
    stream = SeededStream(derive_seed(config.seed, "backgrounds"))
    w, h = config.background_size
    return [
        make_background(WALLPAPER_KINDS[i % len(WALLPAPER_KINDS)], w, h, stream.child(i))
        for i in range(config.n_backgrounds)
    ]


def _check_sprites(sprites: dict[tuple[int, str], IconSprite]) -> None:
    missing = [(c, v) for c in range(len(CLASS_NAMES)) for v in VARIANTS if (c, v) not in sprites]
    if missing:
        names = ", ".join(f"{CLASS_NAMES[c]}/{v}" for c, v in missing)
        raise ConfigurationError(f"missing sprites: {names}")


def build_dataset(config: DatasetConfig, out_dir: str | Path) -> DatasetManifest:
    """Render, crop, annotate and split the dataset under ``out_dir``.

    Layout: ``images/*.png``, ``manifest.json``, ``train.csv``, ``test.csv``.
    Each entry draws from its own child stream, so output is a pure function
    of the config.
    """
    if config.sprites is not None:
        _check_sprites(config.sprites)
    backgrounds = config.backgrounds if config.backgrounds is not None else default_backgrounds(config)
    if not backgrounds:
        raise ConfigurationError("at least one background is required")
    out_dir = Path(out_dir)
    root_stream = SeededStream(config.seed)
    manifest = DatasetManifest(config.seed, [], out_dir)

    for c, name in enumerate(CLASS_NAMES):
        for variant in VARIANTS:
            for k in range(config.per_variant):
                image_id = f"{name}_{'tray' if variant == TRAY else 'desktop'}_{k:04d}"
                stream = root_stream.child(image_id)
                bg = backgrounds[stream.choice(len(backgrounds))]
                if config.sprites is not None:
                    sprite = config.sprites[(c, variant)]
                else:
                    lo, hi = config.tray_size_range
                    sprite = sprite_for(c, variant, int(stream.integers(lo, hi + 1)))
                area = None
                if variant == TRAY:
                    strip = bg.tray_strip
                    area = Rect(strip.x_min, strip.y_min + 2, strip.x_max, strip.y_max - 2)
                spot = free_spot(bg, sprite.size, stream, area=area)
                if spot is None:
                    raise ConfigurationError(f"no free placement for {image_id} on {bg.kind} background")
                img, ann = synthesize_crop(bg.image, sprite, (spot.x_min, spot.y_min), stream, image_id)
                rel = f"images/{image_id}.png"
                save_png(img, out_dir / rel)
                manifest.entries.append(ManifestEntry(ann, rel, variant))

    manifest = split(manifest, config.test_fraction, config.seed)
    manifest.save(out_dir / "manifest.json")
    export_annotations_csv(manifest, out_dir)
    return manifest


def split(manifest: DatasetManifest, test_fraction: float = 0.2, seed: int | None = None) -> DatasetManifest:
    """Stratified train/test assignment.

    Within every (class, variant) stratum entries are ranked by a hash of
    ``(seed, image_id)`` and the lowest ``round(fraction * n)`` become test.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must be in [0, 1)")
    seed = manifest.seed if seed is None else seed
    strata: dict[tuple[int, str], list[ManifestEntry]] = {}
    for e in manifest.entries:
        strata.setdefault((e.icon_class, e.variant), []).append(e)
    test_ids = set()
    for members in strata.values():
        ranked = sorted(members, key=lambda e: (derive_seed(seed, e.image_id), e.image_id))
        n_test = int(round(test_fraction * len(members)))
        test_ids.update(e.image_id for e in ranked[:n_test])
    entries = [
        ManifestEntry(e.annotation, e.path, e.variant, "test" if e.image_id in test_ids else "train")
        for e in manifest.entries
    ]
    return DatasetManifest(manifest.seed, entries, manifest.root)


def export_annotations_csv(manifest: DatasetManifest, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for split_name in ("train", "test"):
        path = out_dir / f"{split_name}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for e in manifest.subset(split_name):
                a = e.annotation
                writer.writerow([a.image_id, a.width, a.height, a.class_name, *a.bbox.as_list()])
        paths.append(path)
    return paths[0], paths[1]


def read_annotations_csv(path: str | Path) -> list[Annotation]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [
            Annotation(
                row["image_id"],
                CLASS_NAMES.index(row["class"]),
                Rect(int(row["x_min"]), int(row["y_min"]), int(row["x_max"]), int(row["y_max"])),
                int(row["width"]),
                int(row["height"]),
            )
            for row in reader
        ]
