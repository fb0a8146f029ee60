"""Stochastic ascent of the log-density using a denoiser residual as the
score, and the coarse-to-fine wavelet conditional cascade built on it.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, InvariantViolation, NonConvergenceError
from .wavelet import build_pyramid, collapse_pyramid, haar_synthesis_step


@dataclass
class SamplerConfig:
    h: float = 0.01
    beta: float = 0.1
    sigma0: float = 1.0
    sigma_inf: float = 0.01
    max_iters: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.h <= 1:
            raise ConfigError(f"step size h must be in (0, 1], got {self.h}")
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if not 0 < self.sigma_inf < self.sigma0:
            raise ConfigError(
                f"need 0 < sigma_inf < sigma0, got sigma_inf={self.sigma_inf}, sigma0={self.sigma0}"
            )
        if self.max_iters < 1:
            raise ConfigError("max_iters must be positive")

    @property
    def noise_ratio(self):
        """gamma_t**2 / sigma_t**2 = (1 - beta h)**2 - (1 - h)**2."""
        return (1 - self.beta * self.h) ** 2 - (1 - self.h) ** 2


@dataclass
class SampleTrace:
    sigma: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    norm_d: list = field(default_factory=list)
    image: np.ndarray = None
    converged: bool = False

    @property
    def iterations(self):
        return len(self.sigma)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "sigma_t", "gamma_t", "norm_d_t"])
            for t, row in enumerate(zip(self.sigma, self.gamma, self.norm_d), start=1):
                w.writerow([t, *(repr(float(v)) for v in row)])


def sample_score_ascent(denoiser, shape, cfg, rng=None, project=None, residual=None, dof=None):
    """Draw a sample from the prior implicit in ``denoiser``.

    Starting from x_0 ~ N(0, sigma0**2 Id), iterate

        d_t = f(x_{t-1}) - x_{t-1}
        sigma_t**2 = ||d_t||**2 / N
        gamma_t**2 = ((1 - beta h)**2 - (1 - h)**2) sigma_t**2
        x_t = x_{t-1} + h d_t + gamma_t z_t

    until sigma_t < sigma_inf. ``project``, if given, is applied to x_0 and
    to every iterate (used for linearly constrained sampling). ``residual``
    maps d_t onto the unconstrained directions before it is used, and
    ``dof`` replaces N as the number of free coordinates.

    Returns ``(x, trace)``; raises :class:`NonConvergenceError` with the
    trace attached if ``cfg.max_iters`` is reached first.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    shape = tuple(shape)
    n = int(np.prod(shape)) if dof is None else int(dof)
    ratio = cfg.noise_ratio
    if ratio < 0:
        raise InvariantViolation(f"gamma^2/sigma^2 = {ratio} < 0")
    x = cfg.sigma0 * rng.standard_normal(shape)
    if project is not None:
        x = project(x)
    trace = SampleTrace()
    sigma_t = cfg.sigma0
    while sigma_t >= cfg.sigma_inf:
        if trace.iterations >= cfg.max_iters:
            trace.image = x
            raise NonConvergenceError(
                f"sampler did not reach sigma_inf={cfg.sigma_inf} in {cfg.max_iters} "
                f"iterations (last sigma_t={sigma_t:.4g})",
                trace,
            )
        fx = np.asarray(denoiser(x), dtype=np.float64)
        if fx.shape != shape:
            raise DimensionError(f"denoiser returned {fx.shape}, expected {shape}")
        d = fx - x
        if residual is not None:
            d = residual(d)
        sq = float(np.sum(d * d))
        sigma_t = math.sqrt(sq / n)
        gamma2 = ratio * sigma_t ** 2
        if gamma2 < 0:
            raise InvariantViolation(f"gamma_t^2 = {gamma2} < 0")
        gamma = math.sqrt(gamma2)
        z = rng.standard_normal(shape)
        x = x + cfg.h * d + gamma * z
        if project is not None:
            x = project(x)
        trace.sigma.append(sigma_t)
        trace.gamma.append(gamma)
        trace.norm_d.append(math.sqrt(sq))
    trace.image = x
    trace.converged = True
    return x, trace


def sample_conditional(ccnn, lowpass, cfg, rng=None):
    """Sample detail coefficients given a clean low-pass band.

    ``ccnn(details, lowpass) -> details``; ``lowpass`` is (1, M, M) and the
    result is (3, M, M).
    """
    low = np.asarray(lowpass, dtype=np.float64)
    if low.ndim != 3 or low.shape[0] != 1:
        raise DimensionError(f"low-pass band must be (1, M, M), got {low.shape}")
    shape = (3,) + low.shape[1:]
    return sample_score_ascent(lambda d: ccnn(d, low), shape, cfg, rng=rng)


def synthesize_cascade(models, lowpass, cfg, rng=None, return_traces=False):
    """Coarse-to-fine conditional synthesis.

    ``models[j-1]`` is the conditional denoiser for scale j (j = 1..J). For
    j = J..1 details are sampled conditioned on the current low-pass image
    and one inverse Haar step doubles the resolution.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    x = np.asarray(lowpass, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] != 1:
        raise DimensionError(f"low-pass image must be (1, M, M), got {x.shape}")
    J = len(models)
    if J < 1:
        raise ConfigError("need at least one conditional model")
    traces = []
    for j in range(J, 0, -1):
        details, trace = sample_conditional(models[j - 1], x, cfg, rng=rng)
        traces.append(trace)
        x = haar_synthesis_step(details, x)
    return (x, traces) if return_traces else x


def measurement_projector(lowpass, J):
    """Projection onto images whose depth-J low-pass band equals ``lowpass``."""
    target = np.asarray(lowpass, dtype=np.float64)
    if target.ndim == 2:
        target = target[None]

    def project(x):
        p = build_pyramid(x, J)
        if p.lowpass.shape != target.shape:
            raise DimensionError(
                f"measurement has shape {target.shape}, iterate low-pass is {p.lowpass.shape}"
            )
        p.lowpass = target.copy()
        return collapse_pyramid(p)

    return project


def superres_pixel_constrained(denoiser, lowpass, J, cfg, rng=None):
    """Sample from a pixel-domain prior subject to a fixed low-pass band.

    Runs :func:`sample_score_ascent` on the full-resolution shape and
    re-imposes the measurement after every step. The residual is measured
    after projection onto the detail bands: the low-pass band is known, so
    only the details carry noise. Otherwise any bias of the denoiser on the
    clean low-pass band puts a floor under sigma_t.
    """
    low = np.asarray(lowpass, dtype=np.float64)
    if low.ndim == 2:
        low = low[None]
    J = int(J)
    side = low.shape[-1] * 2 ** J

    def details_only(d):
        p = build_pyramid(d, J)
        p.lowpass = np.zeros_like(p.lowpass)
        return collapse_pyramid(p)

    return sample_score_ascent(
        denoiser, (1, side, side), cfg, rng=rng, project=measurement_projector(low, J),
        residual=details_only, dof=side * side - low.size,
    )
