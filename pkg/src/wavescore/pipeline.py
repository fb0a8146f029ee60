"""Multi-scale denoising, PSNR evaluation and adaptive-filter heatmaps."""
import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from PIL import Image, PngImagePlugin

from .errors import ConfigError, DimensionError, InvariantViolation
from .models import Model
from .wavelet import build_pyramid, haar_synthesis_step

log = logging.getLogger(__name__)

PSNR_CAP = 200.0
PSNR_FIELDS = ["sigma", "psnr_in_mean", "psnr_out_mean", "psnr_out_std", "n_images"]


def lowpass_fn(model):
    """Adapt a 1->1 channel :class:`Model` to ``f(y_J) -> x_J``."""
    if isinstance(model, Model) and (model.spec.in_channels, model.spec.out_channels) != (1, 1):
        raise ConfigError(f"{model.spec.name} is not a 1->1 channel denoiser")
    return lambda y: np.asarray(model(np.asarray(y)), dtype=np.float64)


def conditional_fn(model):
    """Adapt a 4->3 channel :class:`Model` to ``f(details, lowpass) -> details``."""
    if isinstance(model, Model) and (model.spec.in_channels, model.spec.out_channels) != (4, 3):
        raise ConfigError(f"{model.spec.name} is not a 4->3 channel conditional denoiser")

    def f(details, low):
        d = np.asarray(details)
        lo = np.asarray(low)
        inp = np.concatenate([d, lo], axis=-3)
        return np.asarray(model(inp), dtype=np.float64)

    return f


def multiscale_denoise(y, lowpass_denoiser, conditional_denoisers, J, return_bands=False):
    """Denoise ``y`` (..., 1, N, N) coarse to fine.

    The coarsest band is denoised on its own; each finer detail band is
    denoised conditioned on the *estimated* low-pass image of its scale, and
    one inverse Haar step produces the next estimate. Models are wrapped
    with :func:`lowpass_fn` / :func:`conditional_fn` automatically.
    """
    if len(conditional_denoisers) != J:
        raise ConfigError(f"need {J} conditional denoisers, got {len(conditional_denoisers)}")
    f_low = lowpass_fn(lowpass_denoiser) if isinstance(lowpass_denoiser, Model) else lowpass_denoiser
    conds = [conditional_fn(f) if isinstance(f, Model) else f for f in conditional_denoisers]
    y = np.asarray(y, dtype=np.float64)
    p = build_pyramid(y, J)
    x_hat = np.asarray(f_low(p.lowpass), dtype=np.float64).reshape(p.lowpass.shape)
    bands = [None] * J
    for j in range(J, 0, -1):
        det = np.asarray(conds[j - 1](p.details[j - 1], x_hat), dtype=np.float64)
        det = det.reshape(p.details[j - 1].shape)
        bands[j - 1] = det
        x_hat = haar_synthesis_step(det, x_hat)
    x_hat = x_hat.reshape(y.shape)
    lhs, rhs, gap = mse_decomposition_check(y, x_hat, J)
    log.debug("multiscale_denoise: ||y - x_hat||^2 = %.6g, band sum = %.6g, gap = %.3g", lhs, rhs, gap)
    if gap > 1e-10 * max(1.0, lhs):
        raise InvariantViolation(f"MSE decomposition gap {gap:.3g} exceeds tolerance")
    return (x_hat, bands) if return_bands else x_hat


def psnr(x, x_hat, peak=1.0):
    """10 log10(peak**2 / MSE) in dB; identical images give ``PSNR_CAP``."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak ** 2 / mse))


def mse_decomposition_check(x, x_hat, J):
    """Compare ||x - x_hat||^2 with the sum of per-band squared errors.

    Returns ``(lhs, rhs, |lhs - rhs|)``.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    lhs = float(np.sum((x - x_hat) ** 2))
    px, ph = build_pyramid(x, J), build_pyramid(x_hat, J)
    rhs = float(np.sum((px.lowpass - ph.lowpass) ** 2))
    for a, b in zip(px.details, ph.details):
        rhs += float(np.sum((a - b) ** 2))
    return lhs, rhs, abs(lhs - rhs)


def _workers():
    try:
        return max(1, int(os.environ.get("WAVESCORE_THREADS", "1")))
    except ValueError:
        return 1


def psnr_curve(denoiser, images, sigmas, seed=0, peak=1.0, chunk=10):
    """PSNR of ``denoiser`` on noisy copies of ``images`` for each noise level.

    ``denoiser`` maps a batch (B, 1, N, N) to a batch. Returns one dict per
    sigma with the keys of ``PSNR_FIELDS``.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[:, None]
    if images.shape[0] == 0:
        raise ConfigError("psnr_curve needs at least one image")
    sig = [float(s) for s in sigmas]
    if any(s < 0 for s in sig):
        raise ConfigError("noise levels must be >= 0")
    rows = []
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        for i, s in enumerate(sig):
            rng = np.random.default_rng([seed, i])
            noisy = images + s * rng.standard_normal(images.shape)
            parts = [noisy[k:k + chunk] for k in range(0, len(noisy), chunk)]
            # map preserves order, so results are independent of worker count
            out = np.concatenate(list(pool.map(lambda b: np.asarray(denoiser(b)), parts)))
            p_in = [psnr(a, b, peak) for a, b in zip(images, noisy)]
            p_out = [psnr(a, b, peak) for a, b in zip(images, out.reshape(images.shape))]
            rows.append({
                "sigma": s,
                "psnr_in_mean": float(np.mean(p_in)),
                "psnr_out_mean": float(np.mean(p_out)),
                "psnr_out_std": float(np.std(p_out)),
                "n_images": len(images),
            })
    return rows


def write_psnr_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PSNR_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def sigma_for_psnr(db, peak=1.0):
    """Noise standard deviation whose expected input PSNR is ``db``."""
    return peak * 10.0 ** (-db / 20.0)


def heatmap_rgb(values):
    """Map values linearly onto a red (minimum) to black (maximum) ramp.

    Returns ``(rgb uint8 array, vmin, vmax)``; a constant input maps every
    pixel to the midpoint colour.
    """
    v = np.asarray(values, dtype=np.float64)
    v = np.squeeze(v)
    if v.ndim != 2:
        raise DimensionError(f"filter must be 2-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ConfigError("filter has non-finite entries")
    vmin, vmax = float(v.min()), float(v.max())
    t = np.full(v.shape, 0.5) if vmax == vmin else (v - vmin) / (vmax - vmin)
    rgb = np.zeros(v.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = np.round((1.0 - t) * 255.0).astype(np.uint8)
    return rgb, vmin, vmax


def export_heatmap(filter, path, zoom=1):
    """Write a filter as a red-to-black PNG; value range stored in PNG text."""
    rgb, vmin, vmax = heatmap_rgb(filter)
    if zoom > 1:
        rgb = np.repeat(np.repeat(rgb, zoom, axis=0), zoom, axis=1)
    info = PngImagePlugin.PngInfo()
    info.add_text("vmin", repr(vmin))
    info.add_text("vmax", repr(vmax))
    info.add_text("zoom", str(int(zoom)))
    try:
        Image.fromarray(rgb, mode="RGB").save(path, format="PNG", pnginfo=info)
    except OSError as exc:
        raise OSError(f"cannot write heatmap to {path}: {exc}") from exc
    return vmin, vmax


def read_heatmap(path):
    """Invert :func:`export_heatmap` up to 8-bit quantization."""
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
        vmin = float(im.text["vmin"])
        vmax = float(im.text["vmax"])
        zoom = int(im.text.get("zoom", "1"))
    rgb = rgb[::zoom, ::zoom]
    t = 1.0 - rgb[..., 0] / 255.0
    return vmin + t * (vmax - vmin)
