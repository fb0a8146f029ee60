"""Command-line entry point: ``wavescore <command> --config FILE [overrides]``.

Exit status is 0 on success, 1 on a usage error (bad flag, bad config key)
and 2 on a runtime error (missing checkpoint, numerical failure, ...).
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import oracle as O
from .config import default_config, load_config
from .data import DatasetSpec, load_dataset, read_image, write_image
from .errors import ConfigError, WavescoreError
from .models import (build_conditional_denoiser, build_lowpass_denoiser, build_pixel_denoiser,
                     jacobian_row)
from .pipeline import (conditional_fn, export_heatmap, lowpass_fn, multiscale_denoise, psnr,
                       psnr_curve, write_psnr_csv)
from .sampler import (SamplerConfig, sample_score_ascent, superres_pixel_constrained,
                      synthesize_cascade)
from .training import TrainConfig, load_model, save_checkpoint, train_denoiser
from .wavelet import build_pyramid, collapse_pyramid

log = logging.getLogger("wavescore")

COMMANDS = ("train", "denoise", "sample", "superres", "synthesize", "eval-psnr", "jacobian",
            "oracle-check")
PIPELINES = ("multiscale", "pixel", "oracle")
ORACLE_OFFSET = 0.5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "invalid choice" in message:
            message = f"{message}\n\n{self.format_help()}"
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", "-c", help="experiment config file")
    common.add_argument("--seed", type=int, help="override the experiment and sampler seed")
    common.add_argument("--output", "-o", help="output directory")
    common.add_argument("--sigma", type=float, action="append",
                        help="noise level (repeatable; replaces the eval-psnr grid)")
    common.add_argument("--input", "-i", help="input image (PGM or PNG)")
    common.add_argument("--pipeline", choices=PIPELINES)
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config entry")
    common.add_argument("--verbose", "-v", action="store_true")

    p = _Parser(prog="wavescore", description="Wavelet conditional score models at desk scale.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    helps = {
        "train": "train one denoiser (role from [model] role)",
        "denoise": "denoise one image",
        "sample": "draw samples from the low-pass (or oracle) prior",
        "superres": "super-resolve the low-pass band of an image",
        "synthesize": "sample a low-pass image then run the conditional cascade",
        "eval-psnr": "PSNR versus noise level, written as CSV",
        "jacobian": "adaptive filter of one output pixel, written as a heatmap",
        "oracle-check": "verify the exact identities on a Gaussian oracle",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return p


def resolve_config(args):
    cfg = load_config(args.config) if args.config else default_config()
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.set(section, name, value.strip())
    if args.seed is not None:
        cfg.experiment["seed"] = args.seed
        cfg.sampler["seed"] = args.seed
    if args.output is not None:
        cfg.experiment["output"] = args.output
    if args.sigma:
        cfg.experiment["sigmas"] = list(args.sigma)
        cfg.experiment["sigma"] = args.sigma[0]
    if args.input is not None:
        cfg.data["input"] = args.input
    if args.pipeline is not None:
        cfg.experiment["pipeline"] = args.pipeline
    if any(s < 0 for s in cfg.experiment["sigmas"]):
        raise ConfigError("noise grid values must be >= 0")
    if cfg.experiment["pipeline"] not in PIPELINES:
        raise ConfigError(f"unknown pipeline {cfg.experiment['pipeline']!r}")
    return cfg


# helpers ----------------------------------------------------------------

def _out_dir(cfg):
    out = Path(cfg.experiment["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model(cfg, key, channels):
    path = cfg.model.get(key)
    if not path:
        raise ConfigError(f"[model] {key} is not set")
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    m = load_model(path)
    if (m.spec.in_channels, m.spec.out_channels) != channels:
        raise ConfigError(f"{path}: {m.spec.in_channels}->{m.spec.out_channels} channels, "
                          f"[model] {key} needs {channels[0]}->{channels[1]}")
    return m


def _conditionals(cfg):
    paths = cfg.model.get("conditional") or []
    J = cfg.model["J"]
    if len(paths) != J:
        raise ConfigError(f"[model] conditional lists {len(paths)} checkpoints, J = {J}")
    out = []
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        m = load_model(p)
        if (m.spec.in_channels, m.spec.out_channels) != (4, 3):
            raise ConfigError(f"{p} is not a 4->3 channel conditional checkpoint")
        out.append(m)
    return out


def _oracle(cfg, side):
    basis = cfg.model["oracle_basis"]
    depth = cfg.model["J"] if basis == "haar" else 0
    return O.make_model(basis, side, cfg.model["oracle_spectrum"], depth=depth)


def _denoiser(cfg, side):
    """Batch denoiser (B, 1, N, N) -> (B, 1, N, N) for the configured pipeline."""
    kind = cfg.experiment["pipeline"]
    J = cfg.model["J"]
    if kind == "pixel":
        return lowpass_fn(_model(cfg, "pixel", (1, 1)))
    if kind == "oracle":
        # the oracle priors are zero-mean; images live around mid-gray
        m = _oracle(cfg, side)
        if m.basis != "haar":
            f = O.blind_denoiser(m)
            return lambda y: f(y - ORACLE_OFFSET) + ORACLE_OFFSET
        conds = [O.conditional_detail_denoiser(m, j) for j in range(1, J + 1)]
        f_low = O.lowpass_denoiser(m)
        return lambda y: multiscale_denoise(y - ORACLE_OFFSET, f_low, conds, J) + ORACLE_OFFSET
    low = _model(cfg, "lowpass", (1, 1))
    conds = _conditionals(cfg)
    return lambda y: multiscale_denoise(y, low, conds, J)


def _sampler_cfg(cfg):
    return SamplerConfig(**cfg.sampler)


def _input_image(cfg):
    path = cfg.data.get("input")
    if path:
        if not Path(path).is_file():
            raise FileNotFoundError(f"input image not found: {path}")
        return read_image(path)[None]
    _, test = load_dataset(DatasetSpec(cfg.data["source"], cfg.data["side"], 0, 1,
                                       cfg.data["seed"]))
    return test[0].astype(np.float64)


def _save_array(out, stem, x, scale=1.0):
    np.save(out / f"{stem}.npy", np.asarray(x))
    write_image(out / f"{stem}.png", np.asarray(x) / scale)


# commands ---------------------------------------------------------------

def cmd_train(cfg):
    role = cfg.model["role"]
    m, e, d = cfg.model, cfg.experiment, cfg.data
    J = m["J"]
    seed = e["seed"]
    if role == "lowpass":
        model = build_lowpass_denoiser(m.get("layers", 20), m["width"], seed=seed)
        kw = dict(mode="lowpass", depth=J)
    elif role == "conditional":
        model = build_conditional_denoiser(m["rf"], m.get("layers", 21), m["width"], seed=seed)
        kw = dict(mode="conditional", scale=m["scale"])
    elif role == "pixel":
        model = build_pixel_denoiser(m["rf"], m.get("layers", 21), m["width"], seed=seed)
        kw = dict(mode="lowpass", depth=0)
    else:
        raise ConfigError(f"unknown role {role!r}; use lowpass, conditional or pixel")
    train, _ = load_dataset(DatasetSpec(d["source"], d["side"], d["n_train"], 0, d["seed"]))
    # an explicit step count overrides the epoch count
    epochs = 10 ** 9 if e.get("steps") else e["epochs"]
    tc = TrainConfig(batch_size=e["batch_size"], lr=e["lr"], epochs=epochs, seed=seed,
                     max_steps=e.get("steps"), time_budget=e.get("time_budget"), flip=e["flip"])
    ck = train_denoiser(model, train, tc, **kw)
    out = _out_dir(cfg)
    path = Path(m.get("checkpoint") or out / f"{role}.ckpt")
    save_checkpoint(ck, path)
    ck.write_loss_csv(path.with_name(path.stem + "_loss.csv"))
    print(f"{model.spec.name}: {ck.metadata['steps']} steps, "
          f"final loss {ck.loss_history[-1, 2]:.5g} -> {path}")


def cmd_denoise(cfg):
    x = _input_image(cfg)
    side = x.shape[-1]
    sigma = cfg.experiment["sigma"]
    rng = np.random.default_rng(cfg.experiment["seed"])
    y = x + sigma * rng.standard_normal(x.shape) if sigma > 0 else x
    x_hat = np.asarray(_denoiser(cfg, side)(y[None]))[0]
    out = _out_dir(cfg)
    write_image(out / "noisy.png", y)
    write_image(out / "denoised.png", x_hat)
    np.save(out / "denoised.npy", x_hat)
    if sigma > 0:
        print(f"sigma {sigma:g}: noisy {psnr(x, y):.2f} dB, denoised {psnr(x, x_hat):.2f} dB")
    else:
        print(f"denoised image written to {out / 'denoised.png'}")


def _sample_lowpass(cfg, scfg, rng, side):
    J = cfg.model["J"]
    if cfg.experiment["pipeline"] == "oracle":
        m = _oracle(cfg, side)
        x, trace = sample_score_ascent(O.blind_denoiser(m), (1, side, side), scfg, rng=rng)
        return x + ORACLE_OFFSET, trace, 1.0
    low = lowpass_fn(_model(cfg, "lowpass", (1, 1)))
    M = side // 2 ** J
    x, trace = sample_score_ascent(low, (1, M, M), scfg, rng=rng)
    return x, trace, 2.0 ** J


def cmd_sample(cfg):
    scfg = _sampler_cfg(cfg)
    rng = np.random.default_rng(scfg.seed)
    out = _out_dir(cfg)
    for k in range(cfg.experiment["n_samples"]):
        x, trace, scale = _sample_lowpass(cfg, scfg, rng, cfg.data["side"])
        _save_array(out, f"sample_{k}", x, scale)
        trace.write_csv(out / f"sample_{k}_trace.csv")
        print(f"sample {k}: {trace.iterations} iterations, final sigma {trace.sigma[-1]:.4g}")


def _cascade(cfg, low, scfg, rng):
    J = cfg.model["J"]
    if cfg.experiment["pipeline"] == "oracle":
        m = _oracle(cfg, low.shape[-1] * 2 ** J)
        conds = [O.conditional_detail_denoiser(m, j) for j in range(1, J + 1)]
    else:
        conds = [conditional_fn(m) for m in _conditionals(cfg)]
    x, traces = synthesize_cascade(conds, low, scfg, rng=rng, return_traces=True)
    return x, sum(t.iterations for t in traces)


def cmd_synthesize(cfg):
    scfg = _sampler_cfg(cfg)
    rng = np.random.default_rng(scfg.seed)
    out = _out_dir(cfg)
    J = cfg.model["J"]
    M = cfg.data["side"] // 2 ** J
    oracle = cfg.experiment["pipeline"] == "oracle"
    if oracle:
        f_low = O.lowpass_denoiser(_oracle(cfg, cfg.data["side"]))
    else:
        f_low = lowpass_fn(_model(cfg, "lowpass", (1, 1)))
    for k in range(cfg.experiment["n_samples"]):
        low = sample_score_ascent(f_low, (1, M, M), scfg, rng=rng)[0]
        x, iters = _cascade(cfg, low, scfg, rng)
        if oracle:
            x = x + ORACLE_OFFSET
        _save_array(out, f"synth_{k}", x)
        print(f"synthesis {k}: {iters} cascade iterations -> {out / f'synth_{k}.png'}")


def cmd_superres(cfg):
    x = _input_image(cfg)
    J = cfg.model["J"]
    low = build_pyramid(x, J).lowpass
    scfg = _sampler_cfg(cfg)
    rng = np.random.default_rng(scfg.seed)
    out = _out_dir(cfg)
    if cfg.experiment["pipeline"] == "pixel":
        den = lowpass_fn(_model(cfg, "pixel", (1, 1)))
        x_sr, trace = superres_pixel_constrained(den, low, J, scfg, rng=rng)
        iters = trace.iterations
    else:
        x_sr, iters = _cascade(cfg, low, scfg, rng)
    # zero-detail reconstruction as the reference upsampling
    p = build_pyramid(x, J)
    p.details = [np.zeros_like(d) for d in p.details]
    _save_array(out, "superres", x_sr)
    write_image(out / "lowpass_upsampled.png", collapse_pyramid(p))
    print(f"super-resolution: {iters} iterations, PSNR {psnr(x, x_sr):.2f} dB "
          f"(zero-detail {psnr(x, collapse_pyramid(p)):.2f} dB)")


def cmd_eval_psnr(cfg):
    d = cfg.data
    _, test = load_dataset(DatasetSpec(d["source"], d["side"], 0, d["n_test"], d["seed"]))
    den = _denoiser(cfg, d["side"])
    rows = psnr_curve(den, test, cfg.experiment["sigmas"], seed=cfg.experiment["seed"])
    path = _out_dir(cfg) / f"psnr_{cfg.experiment['pipeline']}.csv"
    write_psnr_csv(rows, path)
    for r in rows:
        print(f"sigma {r['sigma']:g}: in {r['psnr_in_mean']:.2f} dB, out {r['psnr_out_mean']:.2f} dB")
    print(f"wrote {path}")


def cmd_jacobian(cfg):
    path = cfg.model.get("checkpoint") or cfg.model.get("pixel")
    if not path:
        raise ConfigError("[model] checkpoint is not set")
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model = load_model(path)
    x = _input_image(cfg)
    rng = np.random.default_rng(cfg.experiment["seed"])
    if model.spec.in_channels == 1:
        inp = x + cfg.experiment["sigma"] * rng.standard_normal(x.shape)
    else:
        p = build_pyramid(x, cfg.model["scale"])
        det = p.details[-1]
        inp = np.concatenate([det + cfg.experiment["sigma"] * rng.standard_normal(det.shape),
                              p.lowpass])
    coord = cfg.experiment.get("coordinate") or [0, inp.shape[1] // 2, inp.shape[2] // 2]
    if len(coord) != 3:
        raise ConfigError("coordinate must be channel, row, col")
    row = jacobian_row(model, inp, tuple(coord))
    out = _out_dir(cfg)
    np.save(out / "jacobian.npy", row)
    c = coord[0] if model.spec.in_channels > 1 else 0
    vmin, vmax = export_heatmap(row[c], out / "jacobian.png", zoom=cfg.experiment["zoom"])
    print(f"jacobian row at {tuple(coord)}: range [{vmin:.4g}, {vmax:.4g}] -> {out / 'jacobian.png'}")


def oracle_checks(side=16, J=2, spectrum="powerlaw:1.5", seed=0):
    """Exact identities on Gaussian oracles; returns a list of (name, value, ok)."""
    rng = np.random.default_rng(seed)
    results = []
    m = O.make_model("haar", side, spectrum, depth=J)
    x = O.sample_exact(m, seed=rng, n=4)
    sigma = 0.3
    y = x + sigma * rng.standard_normal(x.shape)
    pixel_var = O.variances_from_vector("pixel", side, 0, rng.uniform(0.1, 2.0, side * side))
    for basis in ("pixel", "fourier", "haar"):
        if basis == "pixel":
            mb = O.GaussianModel("pixel", pixel_var, side, 0, None)
        else:
            mb = O.make_model(basis, side, spectrum, depth=J if basis == "haar" else 0)
        lhs = O.wiener_denoise(y, mb, sigma)
        rhs = y + sigma ** 2 * O.analytic_score(y, mb, sigma)
        err = float(np.max(np.abs(lhs - rhs)))
        results.append((f"tweedie identity ({basis})", err, err < 1e-10))
    p = build_pyramid(y, J)
    err = float(np.max(np.abs(collapse_pyramid(p) - y)))
    results.append(("haar perfect reconstruction", err, err < 1e-12))
    e = abs(p.energy() - float(np.sum(y ** 2)))
    results.append(("haar energy preservation", e, e < 1e-9))
    conds = [O.conditional_detail_denoiser(m, j, sigma) for j in range(1, J + 1)]
    ms = multiscale_denoise(y, O.lowpass_denoiser(m, sigma), conds, J)
    err = float(np.max(np.abs(ms - O.wiener_denoise(y, m, sigma))))
    results.append(("multiscale oracle equals global wiener", err, err < 1e-10))
    from .pipeline import mse_decomposition_check
    gap = mse_decomposition_check(x, ms, J)[2]
    results.append(("mse decomposition gap", gap, gap < 1e-10))
    return results


def cmd_oracle_check(cfg):
    J = cfg.model["J"]
    side = max(2 ** J, min(cfg.data["side"], 32))
    results = oracle_checks(side, J, cfg.model["oracle_spectrum"], cfg.experiment["seed"])
    for name, value, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {value:.3g}")
    out = _out_dir(cfg)
    with open(out / "oracle_check.json", "w") as fh:
        json.dump([{"check": n, "value": v, "pass": bool(ok)} for n, v, ok in results], fh,
                  indent=1)
    if not all(ok for _, _, ok in results):
        raise WavescoreError("oracle identities failed")


HANDLERS = {
    "train": cmd_train,
    "denoise": cmd_denoise,
    "sample": cmd_sample,
    "superres": cmd_superres,
    "synthesize": cmd_synthesize,
    "eval-psnr": cmd_eval_psnr,
    "jacobian": cmd_jacobian,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
    except (UsageError, ConfigError) as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        HANDLERS[args.command](cfg)
    except (WavescoreError, OSError, FloatingPointError) as exc:
        print(f"wavescore {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
