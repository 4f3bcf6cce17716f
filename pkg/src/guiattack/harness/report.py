"""Markdown and CSV renderings of evaluation matrices and baseline comparisons.

Output bytes depend only on the input object: no timestamps, fixed column
order, ``repr`` floats in CSV so that parsing gives back an equal object.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from ..errors import ConfigurationError
from ..imagecore import Rect
from ..sprites import CLASS_NAMES
from .evaluation import ComparisonRow, ComparisonTable, EvalCell, EvalMatrix, MethodSpec

MARKDOWN, CSV = "markdown", "csv"
FORMATS = (MARKDOWN, CSV)

MATRIX_COLUMNS = [
    "icon_class",
    "icon",
    "method",
    "params",
    "confidences",
    "psnr_db",
    "ssim",
    "misclassified_as",
    "misclassified_confidence",
    "checkpoint_id",
    "seed",
    "threshold",
]
COMPARISON_COLUMNS = [
    "scene_id",
    "scale",
    "icon_class",
    "icon",
    "planted",
    "ai_confidence",
    "ncc_score",
    "ncc_x",
    "ncc_y",
    "ai_threshold",
    "ncc_threshold",
]


def _pct(v: float) -> int:
    return int(math.floor(v * 100 + 0.5))


def confidence_band(cell: EvalCell, threshold: float) -> str:
    """``"75-80%"`` style band; ``"0%"`` when every position is below threshold."""
    if cell.below_threshold(threshold):
        return "0%"
    lo, hi = _pct(cell.conf_min), _pct(cell.conf_max)
    return f"{hi}%" if lo == hi else f"{lo}-{hi}%"


def _quality(cell: EvalCell) -> str:
    psnr = "inf" if math.isinf(cell.psnr_db) else f"{cell.psnr_db:.1f}"
    return f"{psnr} / {cell.ssim:.3f}"


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join(" --- " for _ in header) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def matrix_markdown(matrix: EvalMatrix) -> str:
    notes: list[str] = []
    conf_rows, qual_rows = [], []
    for c in matrix.classes:
        conf_row, qual_row = [CLASS_NAMES[c]], [CLASS_NAMES[c]]
        for m in matrix.methods:
            cell = matrix.cell(c, m)
            text = confidence_band(cell, matrix.threshold)
            if cell.misclassified_as is not None:
                notes.append(
                    f"{CLASS_NAMES[c]}, {m.label}: recognized as {CLASS_NAMES[cell.misclassified_as]} "
                    f"with {_pct(cell.misclassified_confidence)}%"
                )
                text += f" [{len(notes)}]"
            conf_row.append(text)
            qual_row.append(_quality(cell))
        conf_rows.append(conf_row)
        qual_rows.append(qual_row)
    header = ["icon"] + [m.label for m in matrix.methods]
    n_pos = len(next(iter(matrix)).confidences)
    lines = [
        "# Countermeasure evaluation",
        "",
        f"- checkpoint: {matrix.checkpoint_id or '-'}",
        f"- seed: {matrix.seed}",
        f"- threshold: {matrix.threshold:g}",
        f"- paste positions per cell: {n_pos}",
        "",
        "True-class confidence band (min-max over paste positions); 0% means below threshold everywhere.",
        "",
        *_table(header, conf_rows),
        "",
        "## Image quality (PSNR dB / SSIM vs the clean pasted icon)",
        "",
        *_table(header, qual_rows),
    ]
    if notes:
        lines += ["", "## Misclassifications", ""] + [f"[{i}] {n}" for i, n in enumerate(notes, 1)]
    return "\n".join(lines) + "\n"


def matrix_csv(matrix: EvalMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MATRIX_COLUMNS)
    for cell in matrix:
        w.writerow(
            [
                cell.icon_class,
                CLASS_NAMES[cell.icon_class],
                cell.method.method,
                json.dumps(cell.method.as_dict(), sort_keys=True),
                ";".join(repr(v) for v in cell.confidences),
                repr(cell.psnr_db),
                repr(cell.ssim),
                "" if cell.misclassified_as is None else cell.misclassified_as,
                "" if cell.misclassified_confidence is None else repr(cell.misclassified_confidence),
                matrix.checkpoint_id,
                matrix.seed,
                repr(matrix.threshold),
            ]
        )
    return buf.getvalue()


def parse_matrix_csv(text: str) -> EvalMatrix:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ConfigurationError("matrix CSV has no data rows")
    cells, classes, methods = {}, [], []
    for r in rows:
        c = int(r["icon_class"])
        m = MethodSpec.make(r["method"], **json.loads(r["params"]))
        cell = EvalCell(
            c,
            m,
            tuple(float(v) for v in r["confidences"].split(";")),
            float(r["psnr_db"]),
            float(r["ssim"]),
            int(r["misclassified_as"]) if r["misclassified_as"] else None,
            float(r["misclassified_confidence"]) if r["misclassified_confidence"] else None,
        )
        cells[(c, m)] = cell
        classes += [c] if c not in classes else []
        methods += [m] if m not in methods else []
    first = rows[0]
    return EvalMatrix(tuple(classes), tuple(methods), cells, first["checkpoint_id"], int(first["seed"]), float(first["threshold"]))


def comparison_markdown(table: ComparisonTable) -> str:
    header = ["scene", "scale", "icon", "AI confidence", "AI found", "NCC best", "NCC found"]
    rows = [
        [
            r.scene_id,
            f"{r.scale:g}",
            CLASS_NAMES[r.icon_class] + ("" if r.planted is not None else " (absent)"),
            f"{r.ai_confidence:.3f}",
            "yes" if r.ai_found(table.ai_threshold) else "no",
            f"{r.ncc_score:.3f}",
            "yes" if r.ncc_found(table.ncc_threshold) else "no",
        ]
        for r in table.rows
    ]
    lines = [
        "# Template matching vs recognizer",
        "",
        f"- recognizer threshold: {table.ai_threshold:g}",
        f"- NCC threshold: {table.ncc_threshold:g}",
        "",
        *_table(header, rows),
    ]
    return "\n".join(lines) + "\n"


def comparison_csv(table: ComparisonTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_COLUMNS)
    for r in table.rows:
        w.writerow(
            [
                r.scene_id,
                repr(r.scale),
                r.icon_class,
                CLASS_NAMES[r.icon_class],
                "" if r.planted is None else " ".join(str(v) for v in r.planted.as_list()),
                repr(r.ai_confidence),
                repr(r.ncc_score),
                r.ncc_location[0],
                r.ncc_location[1],
                repr(table.ai_threshold),
                repr(table.ncc_threshold),
            ]
        )
    return buf.getvalue()


def parse_comparison_csv(text: str) -> ComparisonTable:
    rows = list(csv.DictReader(io.StringIO(text)))
    table = ComparisonTable()
    for r in rows:
        table.ai_threshold, table.ncc_threshold = float(r["ai_threshold"]), float(r["ncc_threshold"])
        planted = Rect(*(int(v) for v in r["planted"].split())) if r["planted"] else None
        table.rows.append(
            ComparisonRow(
                r["scene_id"],
                float(r["scale"]),
                int(r["icon_class"]),
                planted,
                float(r["ai_confidence"]),
                float(r["ncc_score"]),
                (int(r["ncc_x"]), int(r["ncc_y"])),
            )
        )
    return table


def render(obj: EvalMatrix | ComparisonTable, fmt: str) -> str:
    if fmt not in FORMATS:
        raise ConfigurationError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    if isinstance(obj, EvalMatrix):
        return matrix_markdown(obj) if fmt == MARKDOWN else matrix_csv(obj)
    if isinstance(obj, ComparisonTable):
        return comparison_markdown(obj) if fmt == MARKDOWN else comparison_csv(obj)
    raise TypeError(f"cannot report on {type(obj).__name__}")


def emit_report(obj: EvalMatrix | ComparisonTable, fmt: str, path: str | Path) -> Path:
    """Write ``obj`` as markdown or CSV; raises ``OSError`` if ``path`` is unwritable."""
    path = Path(path)
    text = render(obj, fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))
    return path
