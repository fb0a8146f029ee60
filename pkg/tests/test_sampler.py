import csv

import numpy as np
import pytest

from wavescore import oracle as O
from wavescore.errors import ConfigError, DimensionError, NonConvergenceError
from wavescore.sampler import (SamplerConfig, measurement_projector, sample_conditional,
                               sample_score_ascent, superres_pixel_constrained,
                               synthesize_cascade)
from wavescore.wavelet import build_pyramid


def test_config_validation():
    for kw in (dict(h=0), dict(h=1.5), dict(beta=0), dict(sigma_inf=2.0), dict(max_iters=0)):
        with pytest.raises(ConfigError):
            SamplerConfig(**kw)


def test_noise_ratio():
    assert SamplerConfig(h=0.01, beta=0.1).noise_ratio == pytest.approx(0.017901, abs=1e-12)
    assert SamplerConfig(h=0.3, beta=1.0).noise_ratio == 0.0


def test_beta_one_is_deterministic_contraction():
    m = O.make_model("pixel", 8, "white:1")
    cfg = SamplerConfig(h=0.05, beta=1.0, seed=3)
    x1, t1 = sample_score_ascent(O.blind_denoiser(m), (1, 8, 8), cfg)
    x2, t2 = sample_score_ascent(O.blind_denoiser(m), (1, 8, 8), cfg)
    np.testing.assert_array_equal(x1, x2)
    assert all(g == 0 for g in t1.gamma)
    # exact-sigma oracle: ascent contracts toward the prior mean
    f = lambda x: O.wiener_denoise(x, m, 0.5)
    _, tr = sample_score_ascent(f, (1, 8, 8), SamplerConfig(h=0.05, beta=1.0, seed=1))
    assert np.all(np.diff(tr.sigma[1:]) <= 0)


def test_same_seed_same_output():
    m = O.make_model("haar", 8, "powerlaw:1", depth=2)
    cfg = SamplerConfig(h=0.1, beta=0.5, seed=11)
    a = sample_score_ascent(O.blind_denoiser(m), (1, 8, 8), cfg)
    b = sample_score_ascent(O.blind_denoiser(m), (1, 8, 8), cfg)
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1].sigma == b[1].sigma


def test_trace_and_csv(tmp_path):
    m = O.make_model("pixel", 8, "white:0.3")
    x, tr = sample_score_ascent(O.blind_denoiser(m), (1, 8, 8), SamplerConfig(h=0.2, beta=0.5))
    assert tr.converged and tr.sigma[-1] < 0.01 and all(s >= 0.01 for s in tr.sigma[:-1])
    assert tr.iterations == len(tr.gamma) == len(tr.norm_d)
    np.testing.assert_array_equal(tr.image, x)
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "sigma_t", "gamma_t", "norm_d_t"]
    assert len(rows) == tr.iterations + 1
    assert float(rows[1][1]) == tr.sigma[0]


def test_non_convergence_carries_trace():
    cfg = SamplerConfig(max_iters=5)
    with pytest.raises(NonConvergenceError) as info:
        sample_score_ascent(lambda x: 0.5 * x, (1, 4, 4), cfg)
    assert info.value.trace.iterations == 5
    assert info.value.trace.image.shape == (1, 4, 4)


def test_denoiser_shape_checked():
    with pytest.raises(DimensionError):
        sample_score_ascent(lambda x: x[..., :2], (1, 4, 4), SamplerConfig())


def test_white_prior_statistics_small():
    m = O.make_model("pixel", 8, "white:1")
    f = O.blind_denoiser(m)
    xs = np.stack([sample_score_ascent(f, (1, 8, 8), SamplerConfig(seed=s))[0]
                   for s in range(100)])
    assert abs(xs.mean()) < 0.05
    assert 0.85 < xs.var(axis=0).mean() < 1.15


def test_mismatched_start_reaches_prior_variance():
    # x_0 has variance 1, the prior 0.25: the chain must actually contract
    m = O.make_model("pixel", 8, "white:0.25")
    f = O.blind_denoiser(m)
    runs = [sample_score_ascent(f, (1, 8, 8), SamplerConfig(seed=s)) for s in range(100)]
    xs = np.stack([x for x, _ in runs])
    assert min(tr.iterations for _, tr in runs) > 100
    assert abs(xs.var(axis=0).mean() / 0.25 - 1) < 0.15


def test_conditional_band_variance():
    m = O.haar_band_model([0.5, 0.2], 1.0, 32)
    f = O.conditional_detail_denoiser(m, 1)
    low = np.zeros((1, 16, 16))
    ds = np.stack([sample_conditional(f, low, SamplerConfig(seed=s))[0] for s in range(60)])
    assert ds.shape[1:] == (3, 16, 16)
    assert abs(ds.var() / 0.5 - 1) < 0.15


def test_conditional_zero_variance_prior():
    # the terminal iterate has RMS about sigma_inf, so the sup-norm bound of
    # 3 sigma_inf holds for most chains but is not a hard guarantee
    m = O.haar_band_model([0.0], 1.0, 8)
    f = O.conditional_detail_denoiser(m, 1)
    sup = []
    for s in range(100):
        d, _ = sample_conditional(f, np.zeros((1, 4, 4)), SamplerConfig(seed=s))
        assert np.sqrt(np.mean(d ** 2)) < 1.1 * 0.01
        sup.append(np.max(np.abs(d)))
    sup = np.array(sup)
    assert np.all(sup < 5 * 0.01)
    assert np.mean(sup < 3 * 0.01) >= 0.9


def test_conditioning_invariance():
    # the oracle ignores the low-pass band, so the outputs must not depend on it
    m = O.haar_band_model([0.4], 1.0, 16)
    f = O.conditional_detail_denoiser(m, 1)
    a = np.stack([sample_conditional(f, np.zeros((1, 8, 8)), SamplerConfig(seed=s))[0]
                  for s in range(40)])
    b = np.stack([sample_conditional(f, 5 * np.ones((1, 8, 8)), SamplerConfig(seed=1000 + s))[0]
                  for s in range(40)])
    n = a.size
    assert abs(a.mean() - b.mean()) < 4 * np.sqrt(2 * 0.4 / n)
    assert abs(a.var() / b.var() - 1) < 4 * np.sqrt(4 / n)


def test_conditional_shape_errors():
    with pytest.raises(DimensionError):
        sample_conditional(lambda d, x: d, np.zeros((2, 4, 4)), SamplerConfig())


def test_cascade_shapes_and_lowpass():
    m = O.haar_band_model([0.3, 0.3, 0.3], 1.0, 32)
    models = [O.conditional_detail_denoiser(m, j) for j in (1, 2, 3)]
    low = np.random.default_rng(0).standard_normal((1, 4, 4))
    x, traces = synthesize_cascade(models, low, SamplerConfig(h=0.05, beta=0.5), return_traces=True)
    assert x.shape == (1, 32, 32) and len(traces) == 3
    assert np.max(np.abs(build_pyramid(x, 3).lowpass - low)) < 1e-10
    with pytest.raises(ConfigError):
        synthesize_cascade([], low, SamplerConfig())
    with pytest.raises(DimensionError):
        synthesize_cascade(models, np.zeros((2, 4, 4)), SamplerConfig())


def test_cascade_spectrum_matches_exact_sampler():
    # band-diagonal prior: radially averaged power of cascade samples vs exact samples
    side, J = 32, 2
    m = O.haar_band_model([0.1, 0.3], 1.0, side)
    models = [O.conditional_detail_denoiser(m, j) for j in (1, 2)]
    exact = O.sample_exact(m, seed=5, n=200)
    cascade = np.stack([
        synthesize_cascade(models, build_pyramid(exact[i], J).lowpass, SamplerConfig(seed=i))
        for i in range(200)
    ])

    def radial(x):
        p = np.mean(np.abs(np.fft.fft2(x[:, 0], norm="ortho")) ** 2, axis=0)
        k = np.fft.fftfreq(side) * side
        r = np.hypot(k[:, None], k[None, :])
        bands = [(0, 4), (4, 8), (8, 16), (16, 23)]
        return np.array([p[(r >= a) & (r < b)].mean() for a, b in bands])

    np.testing.assert_allclose(radial(cascade), radial(exact), rtol=0.2)


def test_projector_enforces_measurement(rng):
    low = rng.standard_normal((1, 4, 4))
    proj = measurement_projector(low, 2)
    y = proj(rng.standard_normal((1, 16, 16)))
    np.testing.assert_allclose(build_pyramid(y, 2).lowpass, low, atol=1e-12)
    with pytest.raises(DimensionError):
        proj(rng.standard_normal((1, 8, 8)))


def test_superres_identity_denoiser_terminates(rng):
    low = rng.standard_normal((1, 4, 4))
    x, tr = superres_pixel_constrained(lambda v: v, low, 2, SamplerConfig())
    assert tr.iterations == 1 and tr.sigma[0] == 0.0
    assert np.max(np.abs(build_pyramid(x, 2).lowpass - low)) < 1e-10


def test_superres_ignores_lowpass_bias(rng):
    # a constant offset lives in the low-pass band only; the measurement fixes
    # that band, so the chain must stop at once instead of stalling at 0.05
    low = rng.standard_normal((1, 4, 4))
    x, tr = superres_pixel_constrained(lambda y: y + 0.05, low, 2, SamplerConfig(max_iters=50))
    assert tr.iterations == 1 and tr.sigma[0] < 1e-12
    assert np.max(np.abs(build_pyramid(x, 2).lowpass - low)) < 1e-10


def test_superres_white_prior_detail_variance():
    m = O.make_model("pixel", 16, "white:1")
    f = O.blind_denoiser(m)
    rng = np.random.default_rng(4)
    dets = []
    for s in range(80):
        low = build_pyramid(O.sample_exact(m, seed=rng), 2).lowpass
        x, _ = superres_pixel_constrained(f, low, 2, SamplerConfig(seed=s))
        p = build_pyramid(x, 2)
        assert np.max(np.abs(p.lowpass - low)) < 1e-10
        dets.append(np.concatenate([d.ravel() for d in p.details]))
    assert abs(np.var(dets) - 1.0) < 0.15
