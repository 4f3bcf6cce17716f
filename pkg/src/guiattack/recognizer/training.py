"""SGD training on windows sampled from the dataset crops."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import CROP_SIZE, DatasetManifest, ManifestEntry
from ..errors import ConfigurationError, TrainingFailure
from ..imagecore import Rect, SeededStream, alpha_composite, quantize
from ..sprites import (
    BACKGROUND_CLASS,
    CLASS_NAMES,
    DISTRACTOR_NAMES,
    SCENE_SIZE,
    TRAY,
    WALLPAPER_KINDS,
    distractor_sprite,
    make_background,
    sprite_for,
)
from .network import NetworkParams, NetworkSpec, batch_loss_and_grads, init_params, predict_batch, to_input

log = logging.getLogger(__name__)

WINDOW_SIDES = (24, 48, 64)
POSITIVE_IOU = 0.55
NEGATIVE_IOU = 0.3
OVERFIT_RISK_ITERATION = 8000
CHECKPOINT_MAGIC = b"GUIATK-CKPT\n"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    iterations: int = 10_000
    batch: int = 16
    learning_rate: float = 0.05
    lr_decay: float = 0.5
    lr_step: int = 3000
    weight_decay: float = 0.0
    label_smoothing: float = 0.01
    # shares of the background half of each batch (see WindowSampler.negative)
    degraded_fraction: float = 0.2
    degraded_sigma: tuple[float, float] = (12 / 255, 40 / 255)
    distractor_fraction: float = 0.3
    wallpaper_fraction: float = 0.3
    wallpaper_pool: int = 128
    mining_every: int = 1000  # 0: no hard-negative mining
    mining_candidates: int = 8192
    mining_keep: int = 512
    seed: int = 0
    checkpoint_every: int = 500
    positive_fraction: float = 0.5
    smoothing_window: int = 100
    divergence_factor: float = 10.0
    divergence_patience: int = 500

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown training options {sorted(unknown)}")
        return cls(**d)

    def lr_at(self, iteration: int) -> float:
        return self.learning_rate * self.lr_decay ** (iteration // self.lr_step)


@dataclass(frozen=True)
class LossPoint:
    iteration: int
    classification_loss: float


@dataclass
class Checkpoint:
    iteration: int
    params: NetworkParams
    running_loss: float

    @property
    def overfit_risk(self) -> bool:
        return self.iteration > OVERFIT_RISK_ITERATION


@dataclass
class TrainResult:
    params: NetworkParams
    curve: list[LossPoint] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)

    def smoothed(self, window: int = 100) -> np.ndarray:
        return smooth([p.classification_loss for p in self.curve], window)

    def first_iteration_below(self, target: float, window: int = 100) -> int | None:
        hits = np.nonzero(self.smoothed(window) <= target)[0]
        return int(self.curve[hits[0]].iteration) if hits.size else None


def smooth(values, window: int = 100) -> np.ndarray:
    """Trailing moving average; early points average over what exists."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v
    c = np.cumsum(np.concatenate([[0.0], v]))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


# ---------------------------------------------------------------- sampling


def _square(cx: float, cy: float, side: int) -> Rect:
    x0 = int(round(cx - side / 2))
    y0 = int(round(cy - side / 2))
    return Rect.from_xywh(x0, y0, side, side)


class WindowSampler:
    """Draws labelled training windows from dataset crops.

    Positives are windows at one of :data:`WINDOW_SIDES` overlapping the
    annotated icon with IoU >= 0.55.  Negatives (IoU < 0.3) come in three
    flavours: near misses around the icon, uniformly random windows, and the
    most textured of several random windows, which tends to land on
    distractor icons.  Optional extras: noised icons, pasted distractors and
    windows from icon-free desktops in ``wallpapers``.
    """

    def __init__(
        self,
        images: list[np.ndarray],
        entries: list[ManifestEntry],
        degraded_fraction: float = 0.0,
        degraded_sigma: tuple[float, float] = (12 / 255, 40 / 255),
        distractor_fraction: float = 0.0,
        wallpaper_fraction: float = 0.0,
        wallpapers: list[np.ndarray] = (),
    ):
        if not entries:
            raise ConfigurationError("no training entries")
        present = {e.icon_class for e in entries}
        missing = [CLASS_NAMES[c] for c in range(len(CLASS_NAMES)) if c not in present]
        if missing:
            raise ConfigurationError(f"train split lacks classes: {missing}")
        self.images = images
        self.entries = entries
        self.degraded_fraction = degraded_fraction
        self.degraded_sigma = degraded_sigma
        self.distractor_fraction = distractor_fraction
        if wallpaper_fraction > 0 and not wallpapers:
            raise ConfigurationError("wallpaper negatives need a wallpaper pool")
        self.wallpaper_fraction = wallpaper_fraction
        self.wallpapers = list(wallpapers)
        self.hard: list[np.ndarray] = []
        self._alphas: dict[tuple[int, str, int], np.ndarray] = {}

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, split: str = "train", **kw) -> WindowSampler:
        entries = manifest.subset(split)
        return cls([quantize(manifest.image(e)) for e in entries], entries, **kw)

    def _inside(self, r: Rect, img: np.ndarray) -> bool:
        return r.fits_in(img.shape[1], img.shape[0])

    def _window(self, img: np.ndarray, r: Rect) -> np.ndarray:
        return img[r.y_min : r.y_max, r.x_min : r.x_max].astype(np.float64) / 255.0

    def positive(self, stream: SeededStream) -> tuple[np.ndarray, int]:
        k, r = self._positive_rect(stream)
        return self._window(self.images[k], r), self.entries[k].icon_class

    def _positive_rect(self, stream: SeededStream) -> tuple[int, Rect]:
        k = stream.choice(len(self.entries))
        img, bbox = self.images[k], self.entries[k].bbox
        size = max(bbox.width, bbox.height)
        sides = [s for s in WINDOW_SIDES if min(s, size) ** 2 / max(s, size) ** 2 >= POSITIVE_IOU] or [size]
        side = sides[stream.choice(len(sides))]
        cx, cy = bbox.center
        r = _square(cx, cy, side)
        jitter = max(1, int(0.2 * min(side, size)))
        for _ in range(20):
            cand = r.translate(int(stream.integers(-jitter, jitter + 1)), int(stream.integers(-jitter, jitter + 1)))
            if self._inside(cand, img) and cand.iou(bbox) >= POSITIVE_IOU:
                r = cand
                break
        if not self._inside(r, img):
            r = bbox
        return k, r

    def _alpha(self, k: int) -> np.ndarray:
        """The entry's sprite coverage, rebuilt from its class, variant and size."""
        e = self.entries[k]
        key = (e.icon_class, e.variant, e.bbox.width)
        if key not in self._alphas:
            tray_size = e.bbox.width if e.variant == TRAY else e.bbox.width // 2
            self._alphas[key] = sprite_for(e.icon_class, e.variant, tray_size).pixels[..., 3:4]
        return self._alphas[key]

    def degraded(self, stream: SeededStream) -> tuple[np.ndarray, int]:
        """An icon window whose icon pixels carry visible Gaussian noise, labelled background.

        Only the sprite's own pixels are noised, as when a noisy icon is
        pasted onto a clean desktop.
        """
        k, r = self._positive_rect(stream)
        win = self._window(self.images[k], r)
        bbox = self.entries[k].bbox
        mask = np.zeros(win.shape[:2] + (1,))
        x0, y0 = max(bbox.x_min, r.x_min), max(bbox.y_min, r.y_min)
        x1, y1 = min(bbox.x_max, r.x_max), min(bbox.y_max, r.y_max)
        alpha = self._alpha(k)
        mask[y0 - r.y_min : y1 - r.y_min, x0 - r.x_min : x1 - r.x_min] = alpha[
            y0 - bbox.y_min : y1 - bbox.y_min, x0 - bbox.x_min : x1 - bbox.x_min
        ]
        lo, hi = self.degraded_sigma
        sigma = lo + (hi - lo) * stream.uniform()
        noisy = win + mask * stream.normal(0.0, sigma, win.shape)
        return np.clip(noisy, 0.0, 1.0), BACKGROUND_CLASS

    def distractor(self, stream: SeededStream) -> tuple[np.ndarray, int]:
        """A non-browser icon pasted into a background window, labelled background.

        Sizes run from a quarter of the window (a tray icon seen by the largest
        window) up to the full window.
        """
        win, _ = self.negative(stream, kind=1)
        side = win.shape[0]
        size = max(14, int(side * (0.25 + 0.75 * stream.uniform())))
        name = DISTRACTOR_NAMES[stream.choice(len(DISTRACTOR_NAMES))]
        x, y = (int(stream.integers(0, side - size + 1)) for _ in range(2))
        return alpha_composite(win, distractor_sprite(name, size), x, y), BACKGROUND_CLASS

    def _wallpaper_window(self, stream: SeededStream) -> tuple[int, Rect]:
        k = stream.choice(len(self.wallpapers))
        side = WINDOW_SIDES[stream.choice(len(WINDOW_SIDES))]
        h, w = self.wallpapers[k].shape[:2]
        return k, Rect.from_xywh(int(stream.integers(0, w - side + 1)), int(stream.integers(0, h - side + 1)), side, side)

    def wallpaper(self, stream: SeededStream) -> tuple[np.ndarray, int]:
        """A window anywhere on an icon-free desktop: taskbar edges, distractors, plain wallpaper.

        Once :meth:`mine` has run, half of these are replayed hard negatives.
        """
        if self.hard and stream.uniform() < 0.5:
            return self.hard[stream.choice(len(self.hard))], BACKGROUND_CLASS
        k, r = self._wallpaper_window(stream)
        return self._window(self.wallpapers[k], r), BACKGROUND_CLASS

    def mine(self, params: NetworkParams, stream: SeededStream, candidates: int, keep: int, chunk: int = 256) -> int:
        """Replace the hard-negative set with the ``keep`` icon-free windows the model finds most icon-like.

        Returns how many of them the model currently assigns to a browser class.
        """
        if not self.wallpapers:
            raise ConfigurationError("hard-negative mining needs a wallpaper pool")
        picks = [self._wallpaper_window(stream) for _ in range(candidates)]
        scores = np.empty(candidates)
        for start in range(0, candidates, chunk):
            part = picks[start : start + chunk]
            x = np.stack([to_input(self._window(self.wallpapers[k], r), params.spec.input_side, params.dtype) for k, r in part])
            scores[start : start + len(part)] = 1.0 - predict_batch(params, x)[:, BACKGROUND_CLASS]
        top = np.argsort(-scores, kind="stable")[:keep]
        self.hard = [self._window(self.wallpapers[picks[i][0]], picks[i][1]) for i in top]
        return int((scores[top] > 0.5).sum())

    def negative(self, stream: SeededStream, kind: int | None = None) -> tuple[np.ndarray, int]:
        if kind is None:
            if self.degraded_fraction > 0 and stream.uniform() < self.degraded_fraction:
                return self.degraded(stream)
            if self.distractor_fraction > 0 and stream.uniform() < self.distractor_fraction:
                return self.distractor(stream)
            if self.wallpaper_fraction > 0 and stream.uniform() < self.wallpaper_fraction:
                return self.wallpaper(stream)
            kind = stream.choice(3)
        for _ in range(100):
            k = stream.choice(len(self.entries))
            img, bbox = self.images[k], self.entries[k].bbox
            side = WINDOW_SIDES[stream.choice(len(WINDOW_SIDES))]
            if kind == 0:
                cx, cy = bbox.center
                reach = 1.2 * side
                cands = [_square(cx + (2 * stream.uniform() - 1) * reach, cy + (2 * stream.uniform() - 1) * reach, side)]
            else:
                n = 1 if kind == 1 else 8
                cands = [
                    Rect.from_xywh(int(stream.integers(0, CROP_SIZE - side + 1)), int(stream.integers(0, CROP_SIZE - side + 1)), side, side)
                    for _ in range(n)
                ]
            cands = [c for c in cands if self._inside(c, img) and c.iou(bbox) < NEGATIVE_IOU]
            if not cands:
                continue
            windows = [self._window(img, c) for c in cands]
            best = max(range(len(windows)), key=lambda i: float(windows[i].std()))
            return windows[best], BACKGROUND_CLASS
        raise ConfigurationError("could not sample a background window")

    def batch(self, stream: SeededStream, size: int, positive_fraction: float, side: int, dtype):
        n_pos = int(round(size * positive_fraction))
        xs, ys = [], []
        for i in range(size):
            win, label = self.positive(stream) if i < n_pos else self.negative(stream)
            xs.append(to_input(win, side, dtype))
            ys.append(label)
        return np.stack(xs), np.array(ys)


# ----------------------------------------------------------------- training


def wallpaper_pool(n: int, stream: SeededStream) -> list[np.ndarray]:
    """``n`` icon-free full desktops (8-bit, like dataset images), cycling wallpaper kinds.

    They carry more distractors than a typical scene so that random windows
    often catch one.
    """
    width, height = SCENE_SIZE
    return [
        quantize(make_background(WALLPAPER_KINDS[i % len(WALLPAPER_KINDS)], width, height, stream.child(i), 3, 4).image)
        for i in range(n)
    ]


def train(
    manifest: DatasetManifest | WindowSampler,
    config: TrainConfig | None = None,
    spec: NetworkSpec | None = None,
    init: NetworkParams | None = None,
) -> TrainResult:
    """Plain SGD with step decay; deterministic in ``config.seed``."""
    config = config or TrainConfig()
    spec = spec or (init.spec if init is not None else NetworkSpec())
    root = SeededStream(config.seed)
    if isinstance(manifest, WindowSampler):
        sampler = manifest
    else:
        sampler = WindowSampler.from_manifest(
            manifest,
            degraded_fraction=config.degraded_fraction,
            degraded_sigma=tuple(config.degraded_sigma),
            distractor_fraction=config.distractor_fraction,
            wallpaper_fraction=config.wallpaper_fraction,
            wallpapers=wallpaper_pool(config.wallpaper_pool, root.child("wallpapers")) if config.wallpaper_fraction > 0 else (),
        )
    params = init.copy() if init is not None else init_params(spec, root.child("init"))
    result = TrainResult(params)
    if config.iterations <= 0:
        return result

    data_stream = root.child("batches")
    initial = None
    over = 0
    for it in range(1, config.iterations + 1):
        if config.mining_every and it > 1 and (it - 1) % config.mining_every == 0 and sampler.wallpapers:
            n = sampler.mine(params, root.child("mining", it), config.mining_candidates, config.mining_keep)
            log.info("iteration %d: mined %d hard negatives, %d still misread", it, config.mining_keep, n)
        x, y = sampler.batch(data_stream, config.batch, config.positive_fraction, spec.input_side, params.dtype)
        value, grads, _ = batch_loss_and_grads(params, x, y, config.label_smoothing)
        if not np.isfinite(value):
            raise TrainingFailure(f"non-finite loss at iteration {it}")
        lr = params.dtype.type(config.lr_at(it - 1))
        wd = params.dtype.type(config.weight_decay)
        for t, g in zip(params.tensors, grads):
            t -= lr * (g + wd * t) if t.ndim > 1 else lr * g
        result.curve.append(LossPoint(it, value))
        initial = value if initial is None else initial
        over = over + 1 if value > config.divergence_factor * initial else 0
        if over >= config.divergence_patience:
            raise TrainingFailure(f"loss above {config.divergence_factor}x initial for {over} iterations")
        if it % config.checkpoint_every == 0 or it == config.iterations:
            running = float(smooth([p.classification_loss for p in result.curve[-config.smoothing_window :]], config.smoothing_window)[-1])
            result.checkpoints.append(Checkpoint(it, params.copy(), running))
            log.info("iteration %d loss %.4f lr %.4g", it, running, float(lr))
    return result


# ---------------------------------------------------------------- file I/O


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    """Self-describing container: magic line, JSON header line, raw tensors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = [np.ascontiguousarray(t) for t in ckpt.params.tensors]
    header = {
        "version": CHECKPOINT_VERSION,
        "iteration": ckpt.iteration,
        "running_loss": ckpt.running_loss,
        "spec": ckpt.params.spec.to_dict(),
        "tensors": [{"shape": list(t.shape), "dtype": t.dtype.newbyteorder("<").str} for t in tensors],
    }
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for t in tensors:
            fh.write(t.astype(t.dtype.newbyteorder("<"), copy=False).tobytes())
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ConfigurationError(f"{path} is not a checkpoint file")
    rest = raw[len(CHECKPOINT_MAGIC) :]
    line_end = rest.find(b"\n")
    try:
        header = json.loads(rest[:line_end])
    except ValueError as exc:
        raise ConfigurationError(f"{path}: malformed checkpoint header") from exc
    if header["version"] != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {header['version']}")
    body = rest[line_end + 1 :]
    tensors, offset = [], 0
    for info in header["tensors"]:
        dtype = np.dtype(info["dtype"])
        count = int(np.prod(info["shape"]))
        if offset + count * dtype.itemsize > len(body):
            raise ConfigurationError("checkpoint payload size mismatch")
        t = np.frombuffer(body, dtype=dtype, count=count, offset=offset).reshape(info["shape"])
        tensors.append(t.astype(dtype.newbyteorder("="), copy=True))
        offset += count * dtype.itemsize
    if offset != len(body):
        raise ConfigurationError("checkpoint payload size mismatch")
    params = NetworkParams(NetworkSpec.from_dict(header["spec"]), tensors)
    return Checkpoint(header["iteration"], params, header["running_loss"])


def export_loss_curve(curve: list[LossPoint], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["iteration,classification_loss"] + [f"{p.iteration},{p.classification_loss!r}" for p in curve]
    path.write_text("\n".join(lines) + "\n")
    return path
