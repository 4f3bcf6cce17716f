"""Command-line entry point: ``guiattack <subcommand> [options]``.

Every path is resolved relative to ``--out``.  Exit status: 0 on success,
1 on a domain error (bad data, missing checkpoint, degenerate model), 2 on a
usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from ..dataset import DatasetManifest, build_dataset
from ..errors import ConfigurationError, GuiAttackError
from ..imagecore import SeededStream, derive_seed, load_png, save_png
from ..matcher import best_match, export_score_map, ncc_match
from ..perturb import METHODS, perturb_icon, write_perturbed
from ..recognizer.detection import detect
from ..recognizer.training import Checkpoint, export_loss_curve, load_checkpoint, save_checkpoint, train
from ..sprites import CLASS_NAMES, DESKTOP, TRAY, sprite_for
from .config import PipelineConfig, load_config
from .evaluation import compare_baseline, evaluate_countermeasures, evaluation_backgrounds
from .report import CSV, MARKDOWN, emit_report, parse_comparison_csv, parse_matrix_csv
from .scenes import FIXTURES, baseline_scenes, build_scene, fixture_scene, random_icon_set
from .workflow import run_attack_workflow

log = logging.getLogger("guiattack")

CHECKPOINT_NAME = "model.ckpt"
MATRIX_NAME = "matrix.csv"
BASELINE_NAME = "baseline.csv"


class UsageError(Exception):
    """Bad arguments detected after parsing; exit status 2."""


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _params(pairs: list[str]) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        out[key] = _parse_value(value)
    return out


def _checkpoint(args) -> tuple[Checkpoint, str]:
    path = args.out / (args.checkpoint or CHECKPOINT_NAME)
    if not path.exists():
        raise ConfigurationError(f"no trained checkpoint at {path}; run `guiattack train` first")
    ckpt = load_checkpoint(path)
    return ckpt, hashlib.sha256(path.read_bytes()).hexdigest()[:12]


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


# ----------------------------------------------------------------- commands


def cmd_gen_data(args, cfg: PipelineConfig) -> int:
    manifest = build_dataset(cfg.dataset, args.out)
    print(f"wrote {len(manifest)} images and manifest.json to {args.out}")
    return 0


def cmd_train(args, cfg: PipelineConfig) -> int:
    data = args.out / (args.data or ".")
    manifest_path = data / "manifest.json"
    if not manifest_path.exists():
        raise ConfigurationError(f"no dataset manifest at {manifest_path}; run `guiattack gen-data` first")
    tc = cfg.training
    if args.iterations is not None:
        tc.iterations = args.iterations
    result = train(DatasetManifest.load(manifest_path), tc, cfg.network)
    final = result.checkpoints[-1] if result.checkpoints else Checkpoint(0, result.params, float("nan"))
    save_checkpoint(final, args.out / CHECKPOINT_NAME)
    if args.keep_checkpoints:
        for ck in result.checkpoints:
            save_checkpoint(ck, args.out / "checkpoints" / f"iter_{ck.iteration:06d}.ckpt")
    export_loss_curve(result.curve, args.out / "loss_curve.csv")
    hit = result.first_iteration_below(0.05)
    print(f"trained {tc.iterations} iterations; smoothed loss {final.running_loss:.4f}; <= 0.05 first at {hit}")
    return 0


def cmd_detect(args, cfg: PipelineConfig) -> int:
    ckpt, _ = _checkpoint(args)
    if args.image:
        scene = load_png(args.out / args.image)[..., :3]
    else:
        stream = SeededStream(derive_seed(cfg.evaluation.seed, "detect"))
        scene = build_scene(stream, random_icon_set(stream)).full_desktop
        save_png(scene, args.out / "scene.png")
    dets = detect(ckpt.params, scene, stride=cfg.detection.stride, threshold=cfg.detection.threshold)
    doc = [{"class": d.class_name, "confidence": round(d.confidence, 6), "bbox": d.bbox.as_list()} for d in dets]
    _write_json(args.out / "detections.json", doc)
    for d in doc:
        print(f"{d['class']:8s} {d['confidence']:.3f} {d['bbox']}")
    return 0


def cmd_match(args, cfg: PipelineConfig) -> int:
    scene = load_png(args.out / args.scene)
    template = load_png(args.out / args.template)
    result = ncc_match(scene[..., :3], template[..., :3])
    found = best_match(result, args.threshold)
    export_score_map(result, args.out / "score_map.csv")
    doc = {"best_location": list(result.best_location), "best_score": round(result.best_score, 8), "found": found is not None}
    _write_json(args.out / "match.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_perturb(args, cfg: PipelineConfig) -> int:
    method_params = _params(args.param)
    params = None
    if args.method.startswith("fgsm"):
        params = _checkpoint(args)[0].params
    names = CLASS_NAMES if args.icon == "all" else [args.icon]
    for name in names:
        c = CLASS_NAMES.index(name)
        icon = sprite_for(c, args.variant, args.tray_size)
        stream = SeededStream(derive_seed(cfg.evaluation.seed, "perturb", name, args.method))
        result = perturb_icon(params, icon, args.method, method_params, stream)
        png, _ = write_perturbed(result, args.out / "perturbed", f"{name}_{args.method}")
        print(f"{png}  psnr {result.quality.psnr_db:.2f} dB  ssim {result.quality.ssim:.4f}")
    return 0


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    ckpt, ckpt_id = _checkpoint(args)
    ev = cfg.evaluation
    backgrounds = evaluation_backgrounds(ev.seed, ev.n_backgrounds)
    sprites = {c: sprite_for(c, ev.variant, ev.tray_size) for c in range(len(CLASS_NAMES))}
    matrix = evaluate_countermeasures(
        ckpt.params, sprites, ev.method_grid(), backgrounds, ev.seed, ev.positions, cfg.detection.threshold, ckpt_id
    )
    emit_report(matrix, CSV, args.out / MATRIX_NAME)
    print(f"wrote {len(matrix.classes)}x{len(matrix.methods)} matrix to {args.out / MATRIX_NAME}")
    if args.baseline:
        bl = cfg.baseline
        scenes = baseline_scenes(ev.seed, bl.scales, bl.trials, bl.tray_size)
        templates = {(c, v): sprite_for(c, v, bl.tray_size) for c in range(len(CLASS_NAMES)) for v in (TRAY, DESKTOP)}
        table = compare_baseline(ckpt.params, templates, scenes, cfg.detection.stride, cfg.detection.threshold, bl.ncc_threshold)
        emit_report(table, CSV, args.out / BASELINE_NAME)
        print(f"wrote {len(table.rows)} comparison rows to {args.out / BASELINE_NAME}")
    return 0


def cmd_attack_sim(args, cfg: PipelineConfig) -> int:
    ckpt, _ = _checkpoint(args)
    if args.scene == "random":
        stream = SeededStream(derive_seed(cfg.evaluation.seed, "attack-sim"))
        scene = build_scene(stream, random_icon_set(stream))
    else:
        scene = fixture_scene(args.scene, cfg.evaluation.seed)
    trace = run_attack_workflow(ckpt.params, scene, cfg.detection.threshold, cfg.detection.stride)
    trace.save(args.out / "trace.json")
    print(json.dumps(trace.to_dict(), sort_keys=True))
    return 0


def cmd_report(args, cfg: PipelineConfig) -> int:
    matrix_path = args.out / (args.matrix or MATRIX_NAME)
    if not matrix_path.exists():
        raise ConfigurationError(f"no evaluation matrix at {matrix_path}; run `guiattack evaluate` first")
    matrix = parse_matrix_csv(matrix_path.read_text())
    emit_report(matrix, MARKDOWN, args.out / "report.md")
    emit_report(matrix, CSV, args.out / "report.csv")
    baseline_path = args.out / BASELINE_NAME
    if baseline_path.exists():
        emit_report(parse_comparison_csv(baseline_path.read_text()), MARKDOWN, args.out / "baseline.md")
    print(f"wrote {args.out / 'report.md'} and {args.out / 'report.csv'}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "detect": cmd_detect,
    "match": cmd_match,
    "perturb": cmd_perturb,
    "evaluate": cmd_evaluate,
    "attack-sim": cmd_attack_sim,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every random stream")
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory (default: .)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="guiattack", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="synthesize the labelled crop dataset")

    p = sub.add_parser("train", parents=[common], help="train the recognizer")
    p.add_argument("--data", help="dataset directory (default: --out)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--keep-checkpoints", action="store_true", help="also save every periodic checkpoint")

    for name, text in (("detect", "sliding-window detection on a scene"), ("attack-sim", "simulate the attack workflow")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", help=f"checkpoint file (default: {CHECKPOINT_NAME})")
        if name == "detect":
            p.add_argument("--image", help="scene PNG (default: a synthesized scene)")
        else:
            p.add_argument("--scene", choices=FIXTURES + ("random",), default="random")

    p = sub.add_parser("match", parents=[common], help="NCC template matching")
    p.add_argument("--scene", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--threshold", type=float, default=0.9)

    p = sub.add_parser("perturb", parents=[common], help="write perturbed icons")
    p.add_argument("--checkpoint", help=f"checkpoint file (default: {CHECKPOINT_NAME})")
    p.add_argument("--icon", choices=CLASS_NAMES + ("all",), default="all")
    p.add_argument("--variant", choices=(TRAY, DESKTOP), default=DESKTOP)
    p.add_argument("--tray-size", type=int, default=20)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="method parameter, repeatable")

    p = sub.add_parser("evaluate", parents=[common], help="countermeasure evaluation matrix")
    p.add_argument("--checkpoint", help=f"checkpoint file (default: {CHECKPOINT_NAME})")
    p.add_argument("--baseline", action="store_true", help="also compare against template matching")

    p = sub.add_parser("report", parents=[common], help="render report.md / report.csv")
    p.add_argument("--matrix", help=f"matrix CSV (default: {MATRIX_NAME})")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.out = getattr(args, "out", Path("."))
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(getattr(args, "config", None))
        if hasattr(args, "seed"):
            cfg = cfg.with_seed(args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"guiattack: usage error: {exc}", file=sys.stderr)
        return 2
    except (GuiAttackError, OSError, ValueError, KeyError) as exc:
        print(f"guiattack: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
