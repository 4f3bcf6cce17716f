import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import guiattack.perturb as pt
from guiattack.errors import NumericError
from guiattack.imagecore import SeededStream
from guiattack.recognizer.network import Gradient, NetworkSpec, init_params
from guiattack.perturb import (
    FgsmConfig,
    NoiseConfig,
    fgsm_pad_crop,
    fgsm_resize,
    fgsm_step,
    flatten,
    gaussian_noise,
    perturb_icon,
    poisson_noise,
    salt_pepper,
    speckle,
    write_perturbed,
)
from guiattack.sprites import DESKTOP, TRAY, sprite_for


@pytest.fixture(scope="module")
def net():
    return init_params(NetworkSpec(), SeededStream(21))


def _fake_grad(monkeypatch, value):
    monkeypatch.setattr(pt, "backward", lambda p, img, c: Gradient([], np.full(img.shape, value)))


# ------------------------------------------------------------------- FGSM


def test_fgsm_sign_pattern(monkeypatch):
    _fake_grad(monkeypatch, -0.2)
    assert fgsm_step(None, np.full((2, 2, 3), 0.5), 0, 0.1) == pytest.approx(0.4)


def test_fgsm_clamps(monkeypatch):
    _fake_grad(monkeypatch, 3.0)
    assert (fgsm_step(None, np.full((2, 2, 3), 0.99), 0, 0.05) == 1.0).all()


def test_fgsm_zero_gradient_leaves_pixel(monkeypatch):
    _fake_grad(monkeypatch, 0.0)
    assert (fgsm_step(None, np.full((2, 2, 3), 0.3), 0, 0.1) == 0.3).all()


def test_fgsm_non_finite_gradient(monkeypatch):
    _fake_grad(monkeypatch, np.nan)
    with pytest.raises(NumericError):
        fgsm_step(None, np.zeros((2, 2, 3)), 0, 0.1)


def test_fgsm_config_validation():
    with pytest.raises(ValueError):
        FgsmConfig(epsilon=1.5)
    with pytest.raises(ValueError):
        FgsmConfig(strategy="rotate")
    with pytest.raises(ValueError):
        FgsmConfig(iterations=3)


@pytest.mark.parametrize("attack", [fgsm_resize, fgsm_pad_crop])
def test_fgsm_zero_epsilon_is_identity(net, attack):
    icon = sprite_for(0, TRAY, 20)
    out = attack(net, icon, FgsmConfig(epsilon=0.0))
    assert np.allclose(out.perturbed, icon.pixels, atol=1e-12)
    assert out.linf_delta <= 1e-12


@pytest.mark.parametrize("attack", [fgsm_resize, fgsm_pad_crop])
@pytest.mark.parametrize("eps", [2 / 255, 8 / 255, 16 / 255])
def test_fgsm_budget_and_alpha(net, attack, eps):
    icon = sprite_for(3, DESKTOP, 20)
    out = attack(net, icon, FgsmConfig(epsilon=eps, pad_color=(0.2, 0.6, 0.3)))
    assert out.perturbed.shape == icon.pixels.shape
    assert np.array_equal(out.perturbed[..., 3], icon.pixels[..., 3])
    assert 0 < out.linf_delta <= eps + 1 / 255
    assert out.perturbed.min() >= 0 and out.perturbed.max() <= 1


def test_pad_crop_output_is_icon_region(monkeypatch):
    # with a constant gradient the crop is just the shifted icon; padding never leaks in
    _fake_grad(monkeypatch, 1.0)
    icon = sprite_for(1, TRAY, 20)
    pad = (0.25, 0.25, 0.25)
    out = fgsm_pad_crop(None, icon, FgsmConfig(epsilon=0.1, pad_color=pad))
    expected = np.clip(flatten(icon.pixels, pad) + 0.1, 0, 1)
    opaque = icon.pixels[..., 3] == 1.0
    assert np.allclose(flatten(out.perturbed, pad)[opaque], expected[opaque])


def test_pad_crop_padding_size_does_not_matter_for_shape(net):
    icon = sprite_for(2, TRAY, 24)
    for pad_to in (64, 300):
        out = perturb_icon(net, icon, "fgsm_pad_crop", {"epsilon": 4 / 255, "pad_to": pad_to}, SeededStream(0))
        assert out.perturbed.shape == icon.pixels.shape and out.params["pad_to"] == pad_to


def test_original_method_is_lossless():
    icon = sprite_for(0, DESKTOP, 20)
    out = perturb_icon(None, icon, "original", {}, SeededStream(0))
    assert np.array_equal(out.perturbed, icon.pixels)
    assert out.quality.psnr_db == np.inf and out.linf_delta == 0


# ------------------------------------------------------------------ noise


def test_identities():
    img = SeededStream(1).uniform((8, 8, 3))
    s = SeededStream(2)
    assert np.array_equal(gaussian_noise(img, 0.0, s), img)
    assert np.array_equal(salt_pepper(img, 0.0, s), img)
    assert np.array_equal(poisson_noise(img, 100.0, 0.0, s), img)


def test_same_seed_same_noise():
    img = np.full((16, 16, 3), 0.5)
    assert np.array_equal(gaussian_noise(img, 0.1, SeededStream(9)), gaussian_noise(img, 0.1, SeededStream(9)))
    assert not np.array_equal(gaussian_noise(img, 0.1, SeededStream(9)), gaussian_noise(img, 0.1, SeededStream(8)))


def test_gaussian_sd():
    img = np.full((200, 200, 3), 0.5)
    d = gaussian_noise(img, 20 / 255, SeededStream(3)) - img
    assert abs(d.std() / (20 / 255) - 1) < 0.05
    with pytest.raises(ValueError):
        gaussian_noise(img, -0.1, SeededStream(3))


@given(st.floats(0.0, 1.0), st.integers(0, 2**32))
@settings(max_examples=20, deadline=None)
def test_salt_pepper_values(p, seed):
    img = np.full((20, 20, 3), 0.4)
    out = salt_pepper(img, p, SeededStream(seed))
    changed = (out != 0.4).any(axis=2)
    assert set(np.unique(out[changed])) <= {0.0, 1.0}
    # whole pixels flip, never single channels
    assert (out[changed].min(axis=1) == out[changed].max(axis=1)).all()
    if p == 1.0:
        assert changed.all()


def test_salt_pepper_fraction():
    n = 400 * 400
    out = salt_pepper(np.full((400, 400, 3), 0.5), 0.05, SeededStream(4))
    frac = (out[..., 0] != 0.5).mean()
    assert abs(frac - 0.05) <= 3 * np.sqrt(0.05 * 0.95 / n)


def test_poisson_variance():
    s = 0.5 / 255
    d = poisson_noise(np.full((200, 200, 3), 0.5), 100.0, s, SeededStream(5)) - 0.5
    assert abs(d.var() / (s * s * 100) - 1) < 0.1
    with pytest.raises(ValueError):
        poisson_noise(np.zeros((2, 2, 3)), 0.0, s, SeededStream(5))


def test_poisson_larger_lambda_is_stronger():
    img = np.full((64, 64, 3), 0.5)
    d100 = poisson_noise(img, 100, 0.5 / 255, SeededStream(6)) - img
    d500 = poisson_noise(img, 500, 0.5 / 255, SeededStream(6)) - img
    assert d500.std() > d100.std()


def test_speckle_properties():
    black = np.zeros((10, 10, 3))
    assert np.array_equal(speckle(black, 4.0, 0.25, SeededStream(7)), black)
    img = SeededStream(8).uniform((30, 30, 3)) * 0.9
    assert np.abs(speckle(img, 1e6, 1e-6, SeededStream(9)) - img).max() < 1e-2
    m = speckle(np.full((200, 200, 3), 0.05), 4.0, 0.25, SeededStream(10)) / 0.05
    assert abs(m.mean() - 1) < 0.01
    with pytest.raises(ValueError):
        speckle(img, 4.0, 0.5, SeededStream(0))


@pytest.mark.parametrize(
    "method,params",
    [("gaussian", {"sigma": 0.1}), ("salt_pepper", {"p": 0.1}), ("poisson", {"lambda": 500}), ("speckle", {"k": 4})],
)
def test_noise_preserves_alpha_and_range(method, params):
    icon = sprite_for(2, DESKTOP, 20)
    out = perturb_icon(None, icon, method, params, SeededStream(11), (0.1, 0.2, 0.3))
    assert np.array_equal(out.perturbed[..., 3], icon.pixels[..., 3])
    assert 0 <= out.perturbed.min() and out.perturbed.max() <= 1
    assert out.quality.psnr_db < np.inf


def test_unknown_method():
    with pytest.raises(ValueError):
        perturb_icon(None, sprite_for(0, TRAY, 20), "blur", {}, SeededStream(0))


def test_noise_config_8bit():
    c = NoiseConfig.from_8bit(gaussian_sigma=20, poisson_strength=0.5)
    assert c.gaussian_sigma == 20 / 255 and c.poisson_strength == 0.5 / 255
    assert c.speckle_scale * c.speckle_shape == 1.0


def test_write_perturbed(tmp_path):
    out = perturb_icon(None, sprite_for(0, TRAY, 20), "gaussian", {"sigma": 0.05}, SeededStream(1))
    png, meta = write_perturbed(out, tmp_path, "chrome")
    assert png.exists() and meta.read_text().startswith("{")
