import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guiattack.imagecore import SeededStream
from guiattack.matcher import best_match, brute_force_ncc, export_score_map, ncc_map, ncc_match


@given(st.integers(0, 2**32), st.integers(4, 40), st.integers(4, 40), st.integers(1, 12), st.integers(1, 12))
@settings(max_examples=40, deadline=None)
def test_ncc_equals_brute_force(seed, H, W, h, w):
    s = SeededStream(seed)
    h, w = min(h, H), min(w, W)
    scene = s.uniform((H, W))
    template = s.uniform((h, w))
    assert np.abs(ncc_map(scene, template) - brute_force_ncc(scene, template)).max() <= 1e-6


def test_self_match_is_one_at_source():
    scene = SeededStream(1).uniform((40, 50, 3))
    r = ncc_match(scene, scene[10:22, 17:30])
    assert r.best_location == (17, 10)
    assert r.best_score == pytest.approx(1.0)
    assert r.score_map.shape == (40 - 12 + 1, 50 - 13 + 1)


def test_negated_template_scores_minus_one():
    g = SeededStream(2).uniform((30, 30))
    m = ncc_map(g, 1.0 - g[5:15, 5:15])
    assert m[5, 5] == pytest.approx(-1.0)


def test_affine_invariance():
    g = SeededStream(3).uniform((30, 30))
    m = ncc_map(g, 0.2 + 0.5 * g[3:13, 8:18])
    assert m[3, 8] == pytest.approx(1.0)


def test_flat_regions_score_zero():
    scene = np.full((20, 20), 0.3)
    assert (ncc_map(scene, SeededStream(4).uniform((5, 5))) == 0).all()
    assert (ncc_map(SeededStream(5).uniform((20, 20)), np.full((5, 5), 0.7)) == 0).all()


def test_template_too_large():
    with pytest.raises(ValueError):
        ncc_map(np.zeros((5, 5)), np.zeros((6, 2)))


def test_best_match_threshold():
    scene = SeededStream(6).uniform((20, 20, 3))
    r = ncc_match(scene, scene[2:8, 3:9])
    assert best_match(r, 0.9) == ((3, 2), r.best_score)
    assert best_match(r, 1.0) is None or r.best_score >= 1.0
    with pytest.raises(ValueError):
        best_match(r, 1.5)


def test_score_map_export(tmp_path):
    scene = SeededStream(7).uniform((10, 12, 3))
    r = ncc_match(scene, scene[:4, :4])
    rows = export_score_map(r, tmp_path / "m.csv").read_text().splitlines()
    assert len(rows) == 7 and len(rows[0].split(",")) == 9
    assert float(rows[0].split(",")[0]) == pytest.approx(1.0, abs=1e-6)
