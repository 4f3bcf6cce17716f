"""Template matching by zero-mean normalised cross-correlation.

The template slides over the scene one pixel at a time; every offset gets the
Pearson correlation between the template and the window it covers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import to_gray

_VAR_EPS = 1e-12


@dataclass
class MatchResult:
    score_map: np.ndarray  # (H - h + 1, W - w + 1)
    best_location: tuple[int, int]  # (x, y) of the template's top-left corner
    best_score: float


def ncc_map(scene_gray: np.ndarray, template_gray: np.ndarray) -> np.ndarray:
    """Correlation score at every valid offset; flat windows or templates score 0."""
    H, W = scene_gray.shape
    h, w = template_gray.shape
    if h > H or w > W:
        raise ValueError(f"template {w}x{h} larger than scene {W}x{H}")
    n = h * w
    t = template_gray - template_gray.mean()
    t_energy = float((t * t).sum())
    windows = np.lib.stride_tricks.sliding_window_view(scene_gray, (h, w))
    # sum over window of (s - mean_s) * t == sum(s * t) because t is zero-mean
    num = np.einsum("ijkl,kl->ij", windows, t, optimize=True)
    c = np.cumsum(np.cumsum(np.pad(scene_gray, ((1, 0), (1, 0))), axis=0), axis=1)
    c2 = np.cumsum(np.cumsum(np.pad(scene_gray**2, ((1, 0), (1, 0))), axis=0), axis=1)
    s1 = c[h:, w:] - c[:-h, w:] - c[h:, :-w] + c[:-h, :-w]
    s2 = c2[h:, w:] - c2[:-h, w:] - c2[h:, :-w] + c2[:-h, :-w]
    w_energy = np.maximum(s2 - s1 * s1 / n, 0.0)
    den = np.sqrt(w_energy * t_energy)
    flat = (w_energy <= _VAR_EPS * n) | (t_energy <= _VAR_EPS * n)
    scores = np.where(flat, 0.0, num / np.where(flat, 1.0, den))
    return np.clip(scores, -1.0, 1.0)


def ncc_match(scene: np.ndarray, template: np.ndarray) -> MatchResult:
    """Exhaustive grayscale NCC of ``template`` against ``scene``."""
    scores = ncc_map(to_gray(scene), to_gray(template))
    iy, ix = np.unravel_index(int(np.argmax(scores)), scores.shape)
    return MatchResult(scores, (int(ix), int(iy)), float(scores[iy, ix]))


def best_match(result: MatchResult, threshold: float) -> tuple[tuple[int, int], float] | None:
    if not -1.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [-1, 1]")
    if result.best_score >= threshold:
        return result.best_location, result.best_score
    return None


def brute_force_ncc(scene_gray: np.ndarray, template_gray: np.ndarray) -> np.ndarray:
    """Reference double loop over offsets, one explicit correlation each."""
    H, W = scene_gray.shape
    h, w = template_gray.shape
    out = np.zeros((H - h + 1, W - w + 1))
    t = template_gray - template_gray.mean()
    tn = np.sqrt((t * t).sum())
    for y in range(H - h + 1):
        for x in range(W - w + 1):
            win = scene_gray[y : y + h, x : x + w]
            d = win - win.mean()
            dn = np.sqrt((d * d).sum())
            if dn * dn <= _VAR_EPS * h * w or tn * tn <= _VAR_EPS * h * w:
                out[y, x] = 0.0
            else:
                out[y, x] = (d * t).sum() / (dn * tn)
    return out


def export_score_map(result: MatchResult, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in result.score_map:
            writer.writerow([f"{v:.6f}" for v in row])
    return path
