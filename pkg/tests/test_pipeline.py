import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from PIL import Image

from wavescore import oracle as O
from wavescore.errors import ConfigError, DimensionError
from wavescore.models import build_conditional_denoiser, build_lowpass_denoiser
from wavescore.pipeline import (PSNR_FIELDS, export_heatmap, heatmap_rgb, mse_decomposition_check,
                                multiscale_denoise, psnr, psnr_curve, read_heatmap, sigma_for_psnr,
                                write_psnr_csv)


def test_psnr_examples():
    x = np.zeros((4, 4))
    assert psnr(x, x + 0.1) == pytest.approx(20.0)
    assert psnr(x, x + 1.0) == pytest.approx(0.0)
    assert psnr(x, x) == 200.0
    with pytest.raises(DimensionError):
        psnr(x, np.zeros((4, 5)))
    assert sigma_for_psnr(20.0) == pytest.approx(0.1)


def test_mse_decomposition_examples(rng):
    x = rng.standard_normal((1, 16, 16))
    xh = rng.standard_normal((1, 16, 16))
    assert mse_decomposition_check(x, xh, 3)[2] < 1e-10
    assert mse_decomposition_check(x, x, 3) == (0.0, 0.0, 0.0)
    e = np.zeros_like(x)
    e[0, 5, 9] = 1e-3
    lhs, rhs, _ = mse_decomposition_check(x, x + e, 2)
    assert lhs == pytest.approx(1e-6, rel=1e-9) and rhs == pytest.approx(1e-6, rel=1e-6)


def oracle_parts(m, J, sigma=None):
    conds = [O.conditional_detail_denoiser(m, j, sigma) for j in range(1, J + 1)]
    return O.lowpass_denoiser(m, sigma), conds


def test_oracle_multiscale_equals_global_wiener(rng):
    m = O.make_model("haar", 32, "powerlaw:2:2", depth=3)
    x = O.sample_exact(m, seed=1, n=5)
    y = x + 0.4 * rng.standard_normal(x.shape)
    low, conds = oracle_parts(m, 3, 0.4)
    out, bands = multiscale_denoise(y, low, conds, 3, return_bands=True)
    assert np.max(np.abs(out - O.wiener_denoise(y, m, 0.4))) < 1e-10
    assert [b.shape for b in bands] == [(5, 3, 16, 16), (5, 3, 8, 8), (5, 3, 4, 4)]


def test_oracle_sigma_zero_is_identity(rng):
    m = O.make_model("haar", 16, "powerlaw:1", depth=2)
    y = rng.standard_normal((1, 16, 16))
    low, conds = oracle_parts(m, 2, 0.0)
    # every band passes through untouched; only Haar round-off remains
    np.testing.assert_allclose(multiscale_denoise(y, low, conds, 2), y, rtol=0, atol=1e-14)


def test_conditioning_uses_estimated_lowpass(rng):
    seen = []
    low_f = lambda y: np.zeros_like(y)

    def cond(d, lo):
        seen.append(lo.copy())
        return d

    y = rng.standard_normal((1, 8, 8))
    multiscale_denoise(y, low_f, [cond, cond], 2)
    assert np.all(seen[0] == 0)  # scale 2 sees the denoised (zero) low-pass, not y_2


def test_pipeline_config_errors(rng):
    with pytest.raises(ConfigError):
        multiscale_denoise(rng.standard_normal((1, 8, 8)), lambda y: y, [], 2)
    with pytest.raises(ConfigError):
        multiscale_denoise(rng.standard_normal((1, 8, 8)), build_conditional_denoiser(3, 3, 4),
                           [lambda d, l: d], 1)
    with pytest.raises(ConfigError):
        multiscale_denoise(rng.standard_normal((1, 8, 8)), lambda y: y,
                           [build_lowpass_denoiser(3, 4)], 1)


def test_models_plug_into_pipeline(rng):
    low = build_lowpass_denoiser(3, 4, seed=1)
    conds = [build_conditional_denoiser(5, 3, 4, seed=j) for j in (1, 2)]
    y = rng.standard_normal((2, 1, 16, 16))
    out = multiscale_denoise(y, low, conds, 2)
    assert out.shape == y.shape
    assert mse_decomposition_check(y, out, 2)[2] < 1e-10


def test_psnr_curve_rows_and_determinism(tmp_path):
    m = O.make_model("haar", 16, "powerlaw:1.5", depth=2)
    images = O.sample_exact(m, seed=0, n=10)
    low, conds = oracle_parts(m, 2)
    den = lambda y: multiscale_denoise(y, low, conds, 2)
    rows = psnr_curve(den, images, [0.1], seed=3)
    assert len(rows) == 1 and rows[0]["n_images"] == 10
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_psnr_csv(rows, a)
    write_psnr_csv(psnr_curve(den, images, [0.1], seed=3), b)
    assert a.read_bytes() == b.read_bytes()
    assert next(csv.reader(open(a))) == PSNR_FIELDS
    with pytest.raises(ConfigError):
        psnr_curve(den, images[:0], [0.1])
    with pytest.raises(ConfigError):
        psnr_curve(den, images, [-0.1])


def test_psnr_curve_worker_count_invariant(monkeypatch):
    m = O.make_model("pixel", 8, "white:0.5")
    images = O.sample_exact(m, seed=0, n=25)
    den = O.blind_denoiser(m)
    one = psnr_curve(den, images, [0.2, 0.5], seed=1, chunk=4)
    monkeypatch.setenv("WAVESCORE_THREADS", "4")
    four = psnr_curve(den, images, [0.2, 0.5], seed=1, chunk=4)
    assert one == four


def test_oracle_psnr_monotone_in_sigma():
    m = O.make_model("haar", 32, "powerlaw:2", depth=3)
    images = O.sample_exact(m, seed=2, n=20)
    low, conds = oracle_parts(m, 3)
    den = lambda y: multiscale_denoise(y, low, conds, 3)
    grid = [0.05, 0.1, 0.2, 0.4, 0.7, 1.0]
    out = [r["psnr_out_mean"] for r in psnr_curve(den, images, grid, seed=0)]
    assert all(a >= b for a, b in zip(out, out[1:]))


def test_heatmap_colors(tmp_path):
    rgb, lo, hi = heatmap_rgb(np.zeros((3, 3)))
    assert np.all(rgb == [128, 0, 0]) and lo == hi == 0.0
    f = np.array([[-2.0, 0.0], [1.0, 3.0]])
    rgb, lo, hi = heatmap_rgb(f)
    assert rgb[0, 0].tolist() == [255, 0, 0]
    assert rgb[1, 1].tolist() == [0, 0, 0]
    path = tmp_path / "h.png"
    export_heatmap(f, path, zoom=3)
    with Image.open(path) as im:
        assert im.size == (6, 6) and im.mode == "RGB"
    back = read_heatmap(path)
    assert np.max(np.abs(back - f)) <= (hi - lo) / 255 / 2 + 1e-12


def test_heatmap_errors(tmp_path):
    with pytest.raises(ConfigError):
        heatmap_rgb(np.array([[np.nan, 1.0], [0.0, 2.0]]))
    with pytest.raises(DimensionError):
        heatmap_rgb(np.zeros((2, 2, 2)))
    with pytest.raises(OSError):
        export_heatmap(np.zeros((2, 2)), tmp_path / "missing" / "h.png")


@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_property_mse_decomposition(seed, J):
    r = np.random.default_rng(seed)
    x, xh = r.standard_normal((2, 1, 8 * 2 ** J // 2, 8 * 2 ** J // 2)) * r.uniform(0.1, 100)
    lhs, rhs, gap = mse_decomposition_check(x, xh, J)
    assert gap <= 1e-10 * max(1.0, lhs)
