"""Desk-scale training protocol on synthetic toy faces.

Trains the multi-scale model (low-pass CNN plus one conditional CNN per
scale) and a pixel-domain CNN with the same receptive field, then compares
them. All networks share the batch size and learning rate; step counts are
chosen so that both pipelines get about the same CPU time (the pixel network
works at full resolution, so each of its steps costs several times more).
"""
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import DatasetSpec, load_dataset
from .errors import ConfigError
from .models import build_conditional_denoiser, build_lowpass_denoiser, build_pixel_denoiser
from .pipeline import lowpass_fn, multiscale_denoise, psnr, sigma_for_psnr
from .training import TrainConfig, load_model, save_checkpoint, train_denoiser

log = logging.getLogger(__name__)


@dataclass
class DeskConfig:
    side: int = 64
    J: int = 2
    n_train: int = 5000
    n_test: int = 50
    rf: int = 13
    width: int = 32
    lowpass_layers: int = 20
    lowpass_steps: int = 600
    conditional_steps: tuple = (2000, 2400)  # scale 1 first
    pixel_steps: int = 600
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0


def model_paths(out_dir, J):
    out = Path(out_dir)
    return {
        "lowpass": out / "lowpass.ckpt",
        "conditional": [out / f"ccnn_j{j}.ckpt" for j in range(1, J + 1)],
        "pixel": out / "pixel.ckpt",
    }


def train_desk_models(cfg, out_dir=None):
    """Train all desk-scale networks; returns ``(models, timings)``.

    ``models`` has keys ``lowpass``, ``conditional`` (list, scale 1 first)
    and ``pixel``. Checkpoints and loss CSVs are written to ``out_dir`` when
    given.
    """
    data = DatasetSpec("toyfaces", cfg.side, cfg.n_train, cfg.n_test, cfg.seed)
    train, _ = load_dataset(data)
    if len(cfg.conditional_steps) != cfg.J:
        raise ConfigError(f"need {cfg.J} conditional step counts, got {len(cfg.conditional_steps)}")
    timings = {}
    jobs = [("lowpass", build_lowpass_denoiser(cfg.lowpass_layers, cfg.width, seed=cfg.seed),
             cfg.lowpass_steps, dict(mode="lowpass", depth=cfg.J))]
    for j in range(1, cfg.J + 1):
        jobs.append((f"ccnn_j{j}", build_conditional_denoiser(cfg.rf, width=cfg.width, seed=cfg.seed + j),
                     cfg.conditional_steps[j - 1], dict(mode="conditional", scale=j)))
    jobs.append(("pixel", build_pixel_denoiser(cfg.rf, width=cfg.width, seed=cfg.seed),
                 cfg.pixel_steps, dict(mode="lowpass", depth=0)))
    trained = {}
    for name, model, steps, kw in jobs:
        tc = TrainConfig(batch_size=cfg.batch_size, lr=cfg.lr, epochs=10 ** 6,
                         max_steps=steps, seed=cfg.seed)
        t0 = time.monotonic()
        ck = train_denoiser(model, train, tc, **kw)
        timings[name] = time.monotonic() - t0
        ck.metadata["desk"] = asdict(cfg)
        ck.metadata["train_seconds"] = timings[name]
        log.info("%s: %d steps in %.1fs, final loss %.4g", name, ck.metadata["steps"],
                 timings[name], float(np.mean(ck.loss_history[-20:, 2])))
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(ck, Path(out_dir) / f"{name}.ckpt")
            ck.write_loss_csv(Path(out_dir) / f"{name}_loss.csv")
        trained[name] = (model, ck)
    models = {
        "lowpass": trained["lowpass"][0],
        "conditional": [trained[f"ccnn_j{j}"][0] for j in range(1, cfg.J + 1)],
        "pixel": trained["pixel"][0],
    }
    return models, timings


def load_desk_models(out_dir, J):
    paths = model_paths(out_dir, J)
    return {
        "lowpass": load_model(paths["lowpass"]),
        "conditional": [load_model(p) for p in paths["conditional"]],
        "pixel": load_model(paths["pixel"]),
    }


def compare_desk(models, test, J, input_psnrs=(10.0, 7.0, 4.0), seed=1234):
    """Paired PSNRs of the multi-scale and pixel-domain denoisers.

    Returns a list of dicts, one per input PSNR, holding per-image arrays
    ``noisy``, ``multiscale`` and ``pixel``.
    """
    pixel = lowpass_fn(models["pixel"])
    results = []
    for i, db in enumerate(input_psnrs):
        sigma = sigma_for_psnr(db)
        rng = np.random.default_rng([seed, i])
        x = np.asarray(test, dtype=np.float64)
        y = x + sigma * rng.standard_normal(x.shape)
        ms = multiscale_denoise(y, models["lowpass"], models["conditional"], J)
        px = pixel(y)
        results.append({
            "input_psnr": db,
            "sigma": sigma,
            "noisy": np.array([psnr(a, b) for a, b in zip(x, y)]),
            "multiscale": np.array([psnr(a, b) for a, b in zip(x, ms)]),
            "pixel": np.array([psnr(a, b) for a, b in zip(x, px)]),
        })
    return results
