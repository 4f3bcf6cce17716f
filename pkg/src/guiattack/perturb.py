"""Adversarial and noise perturbations of icon sprites.

All methods work on the icon's RGB as seen on screen, i.e. the sprite
flattened over ``pad_color``; alpha is carried through unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError
from .imagecore import QualityScore, SeededStream, psnr_for_report, resize, resize_nearest, save_png
from .recognizer.network import NetworkParams, backward
from .sprites import IconSprite

PAD_CROP, RESIZE = "pad_crop", "resize"
METHODS = ("original", "fgsm_resize", "fgsm_pad_crop", "gaussian", "salt_pepper", "poisson", "speckle")


@dataclass(frozen=True)
class FgsmConfig:
    epsilon: float = 8 / 255
    strategy: str = RESIZE
    resize_side: int = 128
    pad_to: int = 300
    pad_color: tuple[float, float, float] = (0.5, 0.5, 0.5)
    iterations: int = 1

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.strategy not in (RESIZE, PAD_CROP):
            raise ValueError(f"unknown FGSM strategy {self.strategy!r}")
        if self.iterations != 1:
            raise ValueError("only single-step FGSM is supported")


@dataclass(frozen=True)
class NoiseConfig:
    """Noise parameters in unit pixel range."""

    gaussian_sigma: float = 20 / 255
    salt_pepper_p: float = 0.05
    poisson_lambda: float = 100.0
    poisson_strength: float = 0.5 / 255
    speckle_shape: float = 4.0

    @property
    def speckle_scale(self) -> float:
        return 1.0 / self.speckle_shape

    @classmethod
    def from_8bit(cls, gaussian_sigma: float = 20.0, poisson_strength: float = 0.5, **kw) -> NoiseConfig:
        """Build from 0-255 scale sigma/strength as quoted for 8-bit images."""
        return cls(gaussian_sigma=gaussian_sigma / 255, poisson_strength=poisson_strength / 255, **kw)


@dataclass
class PerturbedIcon:
    original: np.ndarray  # RGBA
    perturbed: np.ndarray  # RGBA, same alpha
    method: str
    params: dict = field(default_factory=dict)
    quality: QualityScore | None = None
    linf_delta: float = 0.0

    def sidecar(self) -> dict:
        return {
            "method": self.method,
            "params": self.params,
            "linf_delta": round(self.linf_delta, 8),
            "psnr_db": round(psnr_for_report(self.quality.psnr_db), 6),
            "ssim": round(self.quality.ssim, 8),
        }


def flatten(rgba: np.ndarray, color) -> np.ndarray:
    """RGB of an RGBA image composited over a solid ``color``."""
    a = rgba[..., 3:4]
    return rgba[..., :3] * a + np.asarray(color, dtype=np.float64) * (1.0 - a)


def _finish(original: np.ndarray, rgb: np.ndarray, pad_color, method: str, params: dict) -> PerturbedIcon:
    """Apply the on-screen change ``rgb - flatten(original)`` to the sprite's RGB.

    Partially transparent pixels then show the change scaled by their alpha
    and fully transparent ones hide it, wherever the sprite is pasted.
    """
    before = flatten(original, pad_color)
    delta = np.clip(rgb, 0.0, 1.0) - before
    perturbed = np.concatenate([np.clip(original[..., :3] + delta, 0.0, 1.0), original[..., 3:4]], axis=2)
    after = flatten(perturbed, pad_color)
    return PerturbedIcon(
        original,
        perturbed,
        method,
        params,
        QualityScore.between(before, after),
        float(np.abs(after - before).max()) if after.size else 0.0,
    )


# ------------------------------------------------------------------- FGSM


def fgsm_step(params: NetworkParams, image: np.ndarray, true_class: int, epsilon: float) -> np.ndarray:
    """``clip(x + eps * sign(grad_x loss))`` for an RGB image of any size."""
    if epsilon == 0:
        return image.copy()
    grad = backward(params, image, true_class).input_grad
    if not np.isfinite(grad).all():
        raise NumericError("non-finite input gradient")
    return np.clip(image + epsilon * np.sign(grad), 0.0, 1.0)


def fgsm_resize(params: NetworkParams, icon: IconSprite, cfg: FgsmConfig) -> PerturbedIcon:
    """Enlarge, attack, shrink the perturbation back to the icon's own size."""
    rgb = flatten(icon.pixels, cfg.pad_color)
    h, w = rgb.shape[:2]
    side = max(cfg.resize_side, h, w)
    big = resize(rgb, side, side)
    adv = fgsm_step(params, big, icon.icon_class, cfg.epsilon)
    # Shrink only the perturbation, by point sampling: area averaging would
    # cancel neighbouring +eps/-eps samples, and the up/down round trip of the
    # icon itself would blur it.
    out = rgb + resize_nearest(adv - big, w, h)
    return _finish(icon.pixels, out, cfg.pad_color, "fgsm_resize", {"epsilon": cfg.epsilon, "resize_side": side})


def fgsm_pad_crop(params: NetworkParams, icon: IconSprite, cfg: FgsmConfig) -> PerturbedIcon:
    """Attack the icon centred on a padded canvas, then cut the icon back out."""
    rgb = flatten(icon.pixels, cfg.pad_color)
    h, w = rgb.shape[:2]
    side = max(cfg.pad_to, h, w)
    canvas = np.broadcast_to(np.asarray(cfg.pad_color, np.float64), (side, side, 3)).copy()
    y0, x0 = (side - h) // 2, (side - w) // 2
    canvas[y0 : y0 + h, x0 : x0 + w] = rgb
    adv = fgsm_step(params, canvas, icon.icon_class, cfg.epsilon)
    out = adv[y0 : y0 + h, x0 : x0 + w]
    return _finish(icon.pixels, out, cfg.pad_color, "fgsm_pad_crop", {"epsilon": cfg.epsilon, "pad_to": side})


def fgsm(params: NetworkParams, icon: IconSprite, cfg: FgsmConfig) -> PerturbedIcon:
    return fgsm_resize(params, icon, cfg) if cfg.strategy == RESIZE else fgsm_pad_crop(params, icon, cfg)


# ------------------------------------------------------------------ noise


def _rgb(img: np.ndarray):
    return img[..., :3], img[..., 3:] if img.shape[2] == 4 else None


def _rejoin(rgb: np.ndarray, alpha) -> np.ndarray:
    rgb = np.clip(rgb, 0.0, 1.0)
    return rgb if alpha is None else np.concatenate([rgb, alpha], axis=2)


def gaussian_noise(img: np.ndarray, sigma: float, stream: SeededStream) -> np.ndarray:
    """Additive zero-mean Gaussian noise on every colour sample."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rgb, alpha = _rgb(img)
    if sigma == 0:
        return img.copy()
    return _rejoin(rgb + stream.normal(0.0, sigma, rgb.shape), alpha)


def salt_pepper(img: np.ndarray, p: float, stream: SeededStream) -> np.ndarray:
    """Each pixel independently becomes black or white with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("density p must lie in [0, 1]")
    rgb, alpha = _rgb(img)
    if p == 0:
        return img.copy()
    h, w = rgb.shape[:2]
    hit = stream.uniform((h, w)) < p
    value = (stream.uniform((h, w)) < 0.5).astype(np.float64)
    out = np.where(hit[..., None], value[..., None], rgb)
    return _rejoin(out, alpha)


def poisson_noise(img: np.ndarray, lam: float, strength: float, stream: SeededStream) -> np.ndarray:
    """Centred Poisson noise ``strength * (P - lam)``; variance ``strength**2 * lam``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    rgb, alpha = _rgb(img)
    if strength == 0:
        return img.copy()
    return _rejoin(rgb + strength * (stream.poisson(lam, rgb.shape) - lam), alpha)


def speckle(img: np.ndarray, shape_k: float, scale_theta: float, stream: SeededStream) -> np.ndarray:
    """Multiplicative noise with Gamma(k, theta) factors of unit mean."""
    if shape_k <= 0 or scale_theta <= 0:
        raise ValueError("gamma shape and scale must be positive")
    if not math.isclose(shape_k * scale_theta, 1.0, rel_tol=1e-9):
        raise ValueError("speckle requires shape * scale == 1")
    rgb, alpha = _rgb(img)
    return _rejoin(rgb * stream.gamma(shape_k, scale_theta, rgb.shape), alpha)


def noise_icon(icon: IconSprite, method: str, params: dict, stream: SeededStream, pad_color) -> PerturbedIcon:
    rgb = flatten(icon.pixels, pad_color)
    if method == "gaussian":
        out = gaussian_noise(rgb, params["sigma"], stream)
    elif method == "salt_pepper":
        out = salt_pepper(rgb, params["p"], stream)
    elif method == "poisson":
        out = poisson_noise(rgb, params["lambda"], params.get("strength", 0.5 / 255), stream)
    elif method == "speckle":
        k = params["k"]
        out = speckle(rgb, k, params.get("theta", 1.0 / k), stream)
    else:
        raise ValueError(f"unknown noise method {method!r}")
    return _finish(icon.pixels, out, pad_color, method, dict(params))


def perturb_icon(
    params: NetworkParams | None,
    icon: IconSprite,
    method: str,
    method_params: dict,
    stream: SeededStream,
    pad_color=(0.5, 0.5, 0.5),
) -> PerturbedIcon:
    """Dispatch on a method tag from :data:`METHODS`."""
    pad_color = tuple(float(c) for c in pad_color)
    if method == "original":
        return _finish(icon.pixels, flatten(icon.pixels, pad_color), pad_color, method, {})
    if method in ("fgsm_resize", "fgsm_pad_crop"):
        kw = {k: v for k, v in method_params.items() if k in ("epsilon", "resize_side", "pad_to")}
        strategy = RESIZE if method == "fgsm_resize" else PAD_CROP
        return fgsm(params, icon, FgsmConfig(strategy=strategy, pad_color=pad_color, **kw))
    return noise_icon(icon, method, method_params, stream, pad_color)


def write_perturbed(icon: PerturbedIcon, directory: str | Path, name: str) -> tuple[Path, Path]:
    directory = Path(directory)
    png = save_png(icon.perturbed, directory / f"{name}.png")
    meta = directory / f"{name}.json"
    meta.write_text(json.dumps(icon.sidecar(), sort_keys=True, indent=1) + "\n")
    return png, meta
