"""Countermeasure evaluation matrix and the AI-vs-template-matching comparison."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..imagecore import QualityScore, Rect, SeededStream, alpha_composite, crop, derive_seed
from ..matcher import ncc_match
from ..perturb import METHODS, flatten, perturb_icon
from ..recognizer.detection import DEFAULT_THRESHOLD, detect
from ..recognizer.network import NetworkParams, forward
from ..sprites import BACKGROUND_CLASS, CLASS_NAMES, WALLPAPER_KINDS, Background, IconSprite, free_spot, make_background
from .scenes import SCENE_HEIGHT, SCENE_WIDTH, Scene

# Parameters shown in n/255 units in column labels.
_EIGHT_BIT = ("epsilon", "sigma", "strength")


@dataclass(frozen=True, order=True)
class MethodSpec:
    """One matrix column: a perturbation method and its parameters."""

    method: str
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")

    @classmethod
    def make(cls, method: str, **params: float) -> MethodSpec:
        return cls(method, tuple(sorted((k, float(v)) for k, v in params.items())))

    def as_dict(self) -> dict:
        return dict(self.params)

    @property
    def label(self) -> str:
        parts = []
        for k, v in self.params:
            parts.append(f"{k}={v * 255:.4g}/255" if k in _EIGHT_BIT else f"{k}={v:.6g}")
        return " ".join([self.method] + parts)

    @property
    def sort_key(self):
        return METHODS.index(self.method), self.params


def default_methods(epsilon: float = 8 / 255) -> list[MethodSpec]:
    """The standard grid: original, both FGSM strategies and every noise model."""
    return sorted(
        [
            MethodSpec.make("original"),
            MethodSpec.make("fgsm_resize", epsilon=epsilon),
            MethodSpec.make("fgsm_pad_crop", epsilon=epsilon),
            *(MethodSpec.make("gaussian", sigma=s / 255) for s in (10, 20, 25)),
            MethodSpec.make("salt_pepper", p=0.05),
            *(MethodSpec.make("poisson", **{"lambda": lam, "strength": 0.5 / 255}) for lam in (100, 500)),
            MethodSpec.make("speckle", k=4),
        ],
        key=lambda m: m.sort_key,
    )


@dataclass(frozen=True)
class EvalCell:
    icon_class: int
    method: MethodSpec
    confidences: tuple[float, ...]  # true-class probability at each paste position
    psnr_db: float
    ssim: float
    misclassified_as: int | None = None
    misclassified_confidence: float | None = None

    def __post_init__(self):
        if not self.confidences:
            raise ValueError("a cell needs at least one paste position")
        if self.misclassified_as is not None and self.misclassified_as == self.icon_class:
            raise ValueError("misclassified_as must differ from the true class")

    @property
    def conf_min(self) -> float:
        return min(self.confidences)

    @property
    def conf_max(self) -> float:
        return max(self.confidences)

    @property
    def conf_mean(self) -> float:
        return float(np.mean(self.confidences))

    def below_threshold(self, threshold: float = DEFAULT_THRESHOLD) -> bool:
        return self.conf_max < threshold


@dataclass
class EvalMatrix:
    classes: tuple[int, ...]
    methods: tuple[MethodSpec, ...]
    cells: dict[tuple[int, MethodSpec], EvalCell]
    checkpoint_id: str = ""
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if not self.classes or not self.methods:
            raise ValueError("an evaluation matrix needs at least one row and one column")
        missing = [(c, m.label) for c in self.classes for m in self.methods if (c, m) not in self.cells]
        if missing:
            raise ValueError(f"matrix is missing cells {missing}")

    def cell(self, icon_class: int, method: MethodSpec) -> EvalCell:
        return self.cells[(icon_class, method)]

    def column(self, method: MethodSpec) -> list[EvalCell]:
        return [self.cells[(c, method)] for c in self.classes]

    def __iter__(self):
        for c in self.classes:
            for m in self.methods:
                yield self.cells[(c, m)]


def _check_sprites(sprites: dict[int, IconSprite]) -> None:
    missing = [CLASS_NAMES[c] for c in range(len(CLASS_NAMES)) if c not in sprites]
    if missing:
        raise ConfigurationError(f"missing sprites for {missing}")


def _local_color(img: np.ndarray, r: Rect) -> tuple[float, float, float]:
    return tuple(float(v) for v in crop(img, r)[..., :3].reshape(-1, 3).mean(axis=0))


def _misclassification(probs: list[np.ndarray], true_class: int, threshold: float):
    wrong = [
        (int(p.argmax()), float(p.max()))
        for p in probs
        if p.argmax() not in (true_class, BACKGROUND_CLASS) and p.max() >= threshold
    ]
    if not wrong:
        return None, None
    counts = Counter(k for k, _ in wrong)
    top = min(counts, key=lambda k: (-counts[k], k))
    return top, max(c for k, c in wrong if k == top)


def evaluate_cell(
    params: NetworkParams,
    sprite: IconSprite,
    method: MethodSpec,
    backgrounds: list[Background],
    stream: SeededStream,
    positions: int = 5,
    threshold: float = DEFAULT_THRESHOLD,
) -> EvalCell:
    """Perturb ``sprite``, paste it at ``positions`` fresh spots, classify the ground-truth box."""
    confs, probs, psnrs, ssims = [], [], [], []
    for k in range(positions):
        bg = backgrounds[k % len(backgrounds)]
        spot = free_spot(bg, sprite.size, stream)
        if spot is None:
            raise ConfigurationError(f"no room for a {sprite.size}px icon on background {k}")
        pad = _local_color(bg.image, spot)
        pert = perturb_icon(params, sprite, method.method, method.as_dict(), stream.child("noise", k), pad)
        clean = crop(alpha_composite(bg.image, sprite.pixels, spot.x_min, spot.y_min), spot)
        seen = crop(alpha_composite(bg.image, pert.perturbed, spot.x_min, spot.y_min), spot)
        p = forward(params, seen)
        q = QualityScore.between(clean, seen)
        confs.append(float(p[sprite.icon_class]))
        probs.append(p)
        psnrs.append(q.psnr_db)
        ssims.append(q.ssim)
    wrong, wrong_conf = _misclassification(probs, sprite.icon_class, threshold)
    return EvalCell(sprite.icon_class, method, tuple(confs), float(np.mean(psnrs)), float(np.mean(ssims)), wrong, wrong_conf)


def evaluation_backgrounds(seed: int, n: int) -> list[Background]:
    """``n`` scene-sized wallpapers cycling through every wallpaper kind."""
    stream = SeededStream(derive_seed(seed, "eval-backgrounds"))
    return [
        make_background(WALLPAPER_KINDS[i % len(WALLPAPER_KINDS)], SCENE_WIDTH, SCENE_HEIGHT, stream.child(i))
        for i in range(n)
    ]


def evaluate_countermeasures(
    params: NetworkParams,
    sprites: dict[int, IconSprite],
    methods: list[MethodSpec],
    backgrounds: list[Background],
    seed: int = 0,
    positions: int = 5,
    threshold: float = DEFAULT_THRESHOLD,
    checkpoint_id: str = "",
) -> EvalMatrix:
    """Icon x method confidence matrix; every cell is a pure function of ``seed``."""
    _check_sprites(sprites)
    if not backgrounds:
        raise ConfigurationError("at least one background is required")
    if positions < 1:
        raise ConfigurationError("positions must be >= 1")
    methods = tuple(sorted(dict.fromkeys(methods), key=lambda m: m.sort_key))
    classes = tuple(sorted(sprites))
    cells = {}
    for c in classes:
        for m in methods:
            stream = SeededStream(derive_seed(seed, "cell", c, m.label))
            cells[(c, m)] = evaluate_cell(params, sprites[c], m, backgrounds, stream, positions, threshold)
    return EvalMatrix(classes, methods, cells, checkpoint_id, seed, threshold)


# --------------------------------------------------------- baseline compare


@dataclass(frozen=True)
class ComparisonRow:
    scene_id: str
    scale: float
    icon_class: int
    planted: Rect | None
    ai_confidence: float
    ncc_score: float
    ncc_location: tuple[int, int]

    def ai_found(self, threshold: float = DEFAULT_THRESHOLD) -> bool:
        return self.ai_confidence >= threshold

    def ncc_found(self, threshold: float) -> bool:
        return self.ncc_score >= threshold


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow] = field(default_factory=list)
    ai_threshold: float = DEFAULT_THRESHOLD
    ncc_threshold: float = 0.9


def ncc_template(sprite: IconSprite, color) -> np.ndarray:
    """The icon as it would look in a reference screenshot on ``color``."""
    return flatten(sprite.pixels, color)


def _ring_color(img: np.ndarray, r: Rect, width: int = 3) -> tuple[float, float, float]:
    h, w = img.shape[:2]
    outer = Rect(max(r.x_min - width, 0), max(r.y_min - width, 0), min(r.x_max + width, w), min(r.y_max + width, h))
    mask = np.zeros((h, w), bool)
    mask[outer.y_min : outer.y_max, outer.x_min : outer.x_max] = True
    mask[r.y_min : r.y_max, r.x_min : r.x_max] = False
    return tuple(float(v) for v in img[mask][:, :3].mean(axis=0))


def compare_baseline(
    params: NetworkParams,
    sprites: dict[tuple[int, str], IconSprite],
    scenes: list[Scene],
    stride: int = 4,
    ai_threshold: float = DEFAULT_THRESHOLD,
    ncc_threshold: float = 0.9,
) -> ComparisonTable:
    """Per planted icon: the detector's confidence vs the NCC best score.

    Templates are the native-size sprites, so scenes built with ``scale`` != 1
    probe template matching's sensitivity to icon size.  For scenes without
    browser icons every class gets a row with its strongest (false) response.
    """
    table = ComparisonTable(ai_threshold=ai_threshold, ncc_threshold=ncc_threshold)
    for i, scene in enumerate(scenes):
        dets = detect(params, scene.full_desktop, stride=stride, threshold=ai_threshold)
        desktop = Rect(0, 0, scene.full_desktop.shape[1], scene.tray_strip.y_min)
        targets = [(p.label, p.variant, p.rect) for p in scene.browsers]
        if not targets:
            targets = [(c, v, None) for (c, v) in sorted(sprites)]
        for icon_class, variant, rect in targets:
            if (icon_class, variant) not in sprites:
                raise ConfigurationError(f"no template for {CLASS_NAMES[icon_class]} {variant}")
            color = _ring_color(scene.full_desktop, rect) if rect is not None else _local_color(scene.full_desktop, desktop)
            match = ncc_match(scene.full_desktop, ncc_template(sprites[(icon_class, variant)], color))
            ok = [d.confidence for d in dets if d.icon_class == icon_class and (rect is None or d.bbox.iou(rect) >= 0.5)]
            table.rows.append(
                ComparisonRow(f"scene_{i:03d}", scene.scale, icon_class, rect, max(ok, default=0.0), match.best_score, match.best_location)
            )
    return table
