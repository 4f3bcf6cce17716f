"""Side-effect-free simulation of the icon-driven attack workflow.

The state machine scans the taskbar tray first, then the whole desktop (after
a notional "minimize all windows"), and falls back to the start menu when no
browser icon is recognised.  Every effect is a :class:`TraceStep`; nothing
here touches files, processes, the network or input devices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ModelQualityError, NumericError
from ..imagecore import SeededStream, crop
from ..recognizer.detection import DEFAULT_THRESHOLD, Detection, detect
from ..recognizer.network import NetworkParams, predict_batch
from ..sprites import CLASS_NAMES
from .scenes import Scene

SCAN_TRAY = "scan_tray"
SCAN_DESKTOP = "scan_desktop"
OPEN_START_MENU = "open_start_menu"
ENTER_URL = "enter_url"
CLICK = "click"
LOGIN_SIMULATED = "login_simulated"
STEP_KINDS = (SCAN_TRAY, SCAN_DESKTOP, OPEN_START_MENU, ENTER_URL, CLICK, LOGIN_SIMULATED)

SUCCESS, FALLBACK_USED, NO_ACTION = "success", "fallback_used", "no_action"

# Each step may only follow one of these.
_ALLOWED_AFTER = {
    SCAN_TRAY: {None},
    SCAN_DESKTOP: {SCAN_TRAY},
    CLICK: {SCAN_TRAY, SCAN_DESKTOP},
    LOGIN_SIMULATED: {CLICK},
    OPEN_START_MENU: {SCAN_DESKTOP},
    ENTER_URL: {OPEN_START_MENU},
}


@dataclass(frozen=True)
class TraceStep:
    kind: str
    x: int | None = None
    y: int | None = None
    target_class: int | None = None
    minimize_windows: bool = False

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == CLICK:
            d.update(x=self.x, y=self.y, **{"class": CLASS_NAMES[self.target_class]})
        if self.kind == SCAN_DESKTOP:
            d["minimize_windows"] = self.minimize_windows
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TraceStep:
        cls_name = d.get("class")
        return cls(
            d["kind"],
            d.get("x"),
            d.get("y"),
            CLASS_NAMES.index(cls_name) if cls_name is not None else None,
            bool(d.get("minimize_windows", False)),
        )


@dataclass
class ActionTrace:
    steps: list[TraceStep] = field(default_factory=list)
    outcome: str = NO_ACTION
    target: Detection | None = None

    @property
    def kinds(self) -> list[str]:
        return [s.kind for s in self.steps]

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "outcome": self.outcome}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    def validate(self) -> None:
        prev = None
        for s in self.steps:
            if s.kind not in STEP_KINDS:
                raise ValueError(f"unknown step {s.kind!r}")
            if prev not in _ALLOWED_AFTER[s.kind]:
                raise ValueError(f"step {s.kind} cannot follow {prev}")
            prev = s.kind
        if self.target is not None:
            click = next(s for s in self.steps if s.kind == CLICK)
            if not self.target.bbox.contains_point(click.x, click.y):
                raise ValueError("click outside the detected bbox")


def check_model_quality(params: NetworkParams, probes: int = 8, min_spread: float = 1e-3) -> None:
    """Refuse parameters whose outputs are non-finite, uniform or input-independent."""
    side = params.spec.input_side
    stream = SeededStream(0).child("probe")
    x = np.stack(
        [np.full((side, side, 3), v) for v in (0.0, 0.5, 1.0)]
        + [stream.uniform((side, side, 3)) for _ in range(probes)]
    ) - 0.5
    try:
        probs = predict_batch(params, x.astype(params.dtype))
    except NumericError as exc:
        raise ModelQualityError(f"model produces non-finite outputs: {exc}") from exc
    if not np.isfinite(probs).all():
        raise ModelQualityError("model produces non-finite outputs")
    if float((probs.max(axis=1) - probs.min(axis=1)).max()) < min_spread:
        raise ModelQualityError("model outputs are uniform over classes; is it trained?")
    if float(np.abs(probs - probs[0]).max()) < min_spread:
        raise ModelQualityError("model outputs do not depend on the input")


def _click(det: Detection) -> TraceStep:
    b = det.bbox
    return TraceStep(CLICK, (b.x_min + b.x_max) // 2, (b.y_min + b.y_max) // 2, det.icon_class)


def _best(dets: list[Detection]) -> Detection | None:
    # highest confidence; ties resolved toward the top-left box
    return min(dets, key=lambda d: (-d.confidence, d.bbox.y_min, d.bbox.x_min), default=None)


def run_attack_workflow(
    params: NetworkParams,
    scene: Scene,
    threshold: float = DEFAULT_THRESHOLD,
    stride: int = 4,
    allow_fallback: bool = True,
) -> ActionTrace:
    """Tray scan, then desktop scan, then the start-menu fallback."""
    check_model_quality(params)
    scene.validate()
    trace = ActionTrace([TraceStep(SCAN_TRAY)])
    strip = scene.tray_strip
    tray = crop(scene.full_desktop, strip)
    hit = _best(detect(params, tray, stride=stride, threshold=threshold, offset=(strip.x_min, strip.y_min)))
    if hit is None:
        trace.steps.append(TraceStep(SCAN_DESKTOP, minimize_windows=True))
        hit = _best(detect(params, scene.full_desktop, stride=stride, threshold=threshold))
    if hit is not None:
        trace.steps += [_click(hit), TraceStep(LOGIN_SIMULATED)]
        trace.outcome, trace.target = SUCCESS, hit
    elif allow_fallback:
        trace.steps += [TraceStep(OPEN_START_MENU), TraceStep(ENTER_URL)]
        trace.outcome = FALLBACK_USED
    trace.validate()
    return trace
