import json

import numpy as np
import pytest

import guiattack.harness.workflow as wf
from guiattack.errors import ConfigurationError, ModelQualityError
from guiattack.harness.cli import main
from guiattack.harness.config import PipelineConfig, load_config
from guiattack.harness.evaluation import EvalCell, EvalMatrix, MethodSpec, default_methods
from guiattack.harness.report import (
    confidence_band,
    emit_report,
    matrix_csv,
    matrix_markdown,
    parse_matrix_csv,
    render,
)
from guiattack.harness.scenes import FIXTURES, baseline_scenes, fixture_scene
from guiattack.imagecore import Rect, SeededStream
from guiattack.recognizer.detection import Detection
from guiattack.recognizer.network import NetworkSpec, init_params, zero_params
from guiattack.sprites import DESKTOP, TRAY


@pytest.fixture(scope="module")
def random_net():
    return init_params(NetworkSpec(), SeededStream(0))


@pytest.fixture
def oracle_detect(monkeypatch):
    """Replace the recognizer with ground truth for whatever region is scanned."""
    state = {}

    def fake(params, image, stride=4, threshold=0.5, offset=(0, 0), **kw):
        dx, dy = offset
        region = Rect(dx, dy, dx + image.shape[1], dy + image.shape[0])
        return [
            Detection(p.label, 0.9, p.rect)
            for p in state["scene"].browsers
            if region.x_min <= p.rect.x_min and region.y_min <= p.rect.y_min
            and p.rect.x_max <= region.x_max and p.rect.y_max <= region.y_max
        ]

    monkeypatch.setattr(wf, "detect", fake)
    return state


# --------------------------------------------------------------- workflow


@pytest.mark.parametrize("name", FIXTURES)
def test_fixtures_are_valid_and_deterministic(name):
    a, b = fixture_scene(name), fixture_scene(name)
    a.validate()
    assert np.array_equal(a.full_desktop, b.full_desktop) and a.placements == b.placements


def test_fixture_contents():
    assert [(p.label, p.variant) for p in fixture_scene("tray").browsers] == [(0, TRAY)]
    assert [(p.label, p.variant) for p in fixture_scene("desktop").browsers] == [(1, DESKTOP)]
    assert fixture_scene("empty").placements == []
    with pytest.raises(ConfigurationError):
        fixture_scene("attic")


def test_tray_trace(random_net, oracle_detect):
    scene = oracle_detect["scene"] = fixture_scene("tray")
    t = wf.run_attack_workflow(random_net, scene)
    assert t.kinds == [wf.SCAN_TRAY, wf.CLICK, wf.LOGIN_SIMULATED]
    assert t.outcome == wf.SUCCESS
    click = t.steps[1]
    assert scene.browsers[0].rect.contains_point(click.x, click.y) and click.target_class == 0


def test_desktop_trace(random_net, oracle_detect):
    oracle_detect["scene"] = fixture_scene("desktop")
    t = wf.run_attack_workflow(random_net, oracle_detect["scene"])
    assert t.kinds == [wf.SCAN_TRAY, wf.SCAN_DESKTOP, wf.CLICK, wf.LOGIN_SIMULATED]
    assert t.steps[1].minimize_windows


def test_empty_trace(random_net, oracle_detect):
    oracle_detect["scene"] = fixture_scene("empty")
    t = wf.run_attack_workflow(random_net, oracle_detect["scene"])
    assert t.kinds[-2:] == [wf.OPEN_START_MENU, wf.ENTER_URL]
    assert t.outcome == wf.FALLBACK_USED
    t = wf.run_attack_workflow(random_net, oracle_detect["scene"], allow_fallback=False)
    assert t.outcome == wf.NO_ACTION and t.kinds == [wf.SCAN_TRAY, wf.SCAN_DESKTOP]


def test_tray_beats_desktop(random_net, oracle_detect):
    oracle_detect["scene"] = fixture_scene("both")
    t = wf.run_attack_workflow(random_net, oracle_detect["scene"])
    assert t.kinds == [wf.SCAN_TRAY, wf.CLICK, wf.LOGIN_SIMULATED]
    assert t.steps[1].target_class == 0


def test_model_quality_refusals(random_net):
    with pytest.raises(ModelQualityError):
        wf.check_model_quality(zero_params(NetworkSpec()))
    bad = random_net.copy()
    bad.tensors[-1][:] = np.nan
    with pytest.raises(ModelQualityError):
        wf.check_model_quality(bad)
    # constant output regardless of input: zero every weight, keep a skewed bias
    const = zero_params(NetworkSpec())
    const.tensors[-1][:] = np.arange(5, dtype=const.dtype)
    with pytest.raises(ModelQualityError):
        wf.check_model_quality(const)
    wf.check_model_quality(random_net)


def test_trace_validation_and_serialisation(tmp_path):
    good = wf.ActionTrace(
        [wf.TraceStep(wf.SCAN_TRAY), wf.TraceStep(wf.CLICK, 5, 6, 2), wf.TraceStep(wf.LOGIN_SIMULATED)],
        wf.SUCCESS,
        Detection(2, 0.9, Rect(0, 0, 10, 10)),
    )
    good.validate()
    doc = json.loads(good.save(tmp_path / "t.json").read_text())
    assert doc == {
        "steps": [{"kind": "scan_tray"}, {"kind": "click", "x": 5, "y": 6, "class": "edge"}, {"kind": "login_simulated"}],
        "outcome": "success",
    }
    assert [wf.TraceStep.from_dict(s) for s in doc["steps"]] == good.steps
    with pytest.raises(ValueError):
        wf.ActionTrace([wf.TraceStep(wf.CLICK, 1, 1, 0)]).validate()
    with pytest.raises(ValueError):
        wf.ActionTrace([wf.TraceStep(wf.SCAN_TRAY), wf.TraceStep(wf.OPEN_START_MENU)]).validate()
    off = wf.ActionTrace(good.steps, wf.SUCCESS, Detection(2, 0.9, Rect(50, 50, 60, 60)))
    with pytest.raises(ValueError):
        off.validate()


def test_baseline_scenes_layout():
    scenes = baseline_scenes(3, trials=2)
    assert [s.scale for s in scenes] == [1.0, 1.25, 1.5, 1.0, 1.25, 1.5, 1.0]
    assert scenes[-1].browsers == []
    sides = [s.browsers[0].rect.width for s in scenes[:3]]
    assert sides == [40, 50, 60]


# ---------------------------------------------------------------- reports


def _matrix(conf=(0.97, 0.99)):
    methods = tuple(default_methods())
    cells = {}
    for c in range(4):
        for m in methods:
            low = m.method.startswith("fgsm_resize")
            cells[(c, m)] = EvalCell(
                c,
                m,
                (0.01, 0.02) if low else conf,
                float("inf") if m.method == "original" else 30.0,
                1.0 if m.method == "original" else 0.95,
                (c + 1) % 4 if low else None,
                0.6 if low else None,
            )
    return EvalMatrix(tuple(range(4)), methods, cells, "abc123", 7)


def test_confidence_band():
    m = MethodSpec.make("original")
    assert confidence_band(EvalCell(0, m, (0.754, 0.801), 1, 1), 0.5) == "75-80%"
    assert confidence_band(EvalCell(0, m, (0.97, 0.974), 1, 1), 0.5) == "97%"
    assert confidence_band(EvalCell(0, m, (0.2, 0.3), 1, 1), 0.5) == "0%"


def test_method_labels():
    assert MethodSpec.make("fgsm_resize", epsilon=8 / 255).label == "fgsm_resize epsilon=8/255"
    assert MethodSpec.make("poisson", **{"lambda": 500, "strength": 0.5 / 255}).label == "poisson lambda=500 strength=0.5/255"
    with pytest.raises(ConfigurationError):
        MethodSpec.make("blur")


def test_matrix_validation():
    m = _matrix()
    cells = dict(m.cells)
    cells.pop(next(iter(cells)))
    with pytest.raises(ValueError):
        EvalMatrix(m.classes, m.methods, cells)
    with pytest.raises(ValueError):
        EvalMatrix((), m.methods, {})
    with pytest.raises(ValueError):
        EvalCell(1, MethodSpec.make("original"), (0.5,), 1, 1, 1, 0.5)


def test_one_cell_matrix_report():
    m = MethodSpec.make("original")
    mat = EvalMatrix((2,), (m,), {(2, m): EvalCell(2, m, (0.98,), float("inf"), 1.0)})
    text = matrix_markdown(mat)
    assert "| edge | 98% |" in text


def test_markdown_report_content():
    text = matrix_markdown(_matrix())
    assert text.count("| chrome |") == 2  # confidence and quality tables
    assert "0%" in text and "97-99%" in text
    assert "recognized as firefox with 60%" in text


def test_matrix_csv_round_trip_and_determinism():
    m = _matrix()
    csv_text = matrix_csv(m)
    assert csv_text == matrix_csv(_matrix())
    back = parse_matrix_csv(csv_text)
    assert back.classes == m.classes and back.methods == m.methods
    assert [c for c in back] == [c for c in m]
    assert matrix_csv(back) == csv_text


def test_emit_report(tmp_path):
    m = _matrix()
    p = emit_report(m, "markdown", tmp_path / "r.md")
    assert p.read_text() == render(m, "markdown")
    with pytest.raises(ConfigurationError):
        render(m, "pdf")


# ----------------------------------------------------------------- config


def test_config_round_trip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"dataset": {"per_variant": 7}, "training": {"iterations": 11}, "baseline": {"scales": [1.0, 2.0]}}))
    cfg = load_config(path)
    assert cfg.dataset.per_variant == 7 and cfg.training.iterations == 11 and cfg.baseline.scales == (1.0, 2.0)
    assert load_config(None) == PipelineConfig()
    s = cfg.with_seed(42)
    assert s.dataset.seed == s.training.seed == s.evaluation.seed == 42


@pytest.mark.parametrize("doc", ['{"nope": {}}', '{"training": {"momentum": 1}}', "[1, 2]", "{not json"])
def test_config_errors(tmp_path, doc):
    path = tmp_path / "c.json"
    path.write_text(doc)
    with pytest.raises(ConfigurationError):
        load_config(path)


# -------------------------------------------------------------------- CLI


def test_cli_usage_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["fly"]) == 2
    assert main(["perturb", "--out", str(tmp_path)]) == 2  # --method is required
    assert main(["train", "--iterations", "many"]) == 2


def test_cli_domain_errors(tmp_path, capsys):
    assert main(["evaluate", "--out", str(tmp_path)]) == 1  # no checkpoint yet
    bad = tmp_path / "bad.json"
    bad.write_text('{"bogus": 1}')
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "bogus" in capsys.readouterr().err


def test_cli_match(tmp_path):
    from guiattack.imagecore import save_png

    scene = SeededStream(1).uniform((40, 50, 3))
    save_png(scene, tmp_path / "scene.png")
    save_png(scene[5:15, 8:20], tmp_path / "tpl.png")
    assert main(["match", "--scene", str(tmp_path / "scene.png"), "--template", str(tmp_path / "tpl.png"), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "match.json").read_text())
    assert doc["best_location"] == [8, 5] and doc["found"] is True
    assert (tmp_path / "score_map.csv").exists()


def test_cli_gen_train_attack(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"per_variant": 3}, "training": {"iterations": 5, "checkpoint_every": 5}}))
    common = ["--config", str(cfg), "--out", str(tmp_path), "--seed", "3"]
    assert main(["gen-data", *common]) == 0
    assert (tmp_path / "manifest.json").exists()
    assert main(["train", *common]) == 0
    assert (tmp_path / "model.ckpt").exists() and (tmp_path / "loss_curve.csv").exists()
    assert main(["attack-sim", "--scene", "empty", *common]) in (0, 1)
    assert main(["perturb", "--method", "gaussian", "--param", "sigma=0.1", "--icon", "chrome", *common]) == 0
    assert list((tmp_path / "perturbed").glob("*.png"))
