"""Closed-form Gaussian image models.

A :class:`GaussianModel` has a covariance that is diagonal in an orthonormal
basis (pixels, the unitary 2-D DFT, or the Haar pyramid), so the MMSE
denoiser, the score of the noisy density and exact samples are all
per-coefficient formulas. These serve as ground truth for the samplers and
the multi-scale pipeline.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, SingularModelError, UnsupportedModelError
from .wavelet import WaveletPyramid, build_pyramid, collapse_pyramid

BASES = ("pixel", "fourier", "haar")


@dataclass
class GaussianModel:
    """Zero-mean Gaussian with variances ``variances`` in ``basis``.

    For ``pixel`` and ``fourier`` the variances are an (N, N) array (DFT
    bins in numpy's FFT order, symmetric under k -> -k). For ``haar`` they
    are a :class:`WaveletPyramid` of variances at depth ``depth``.
    """

    basis: str
    variances: object
    side: int
    depth: int = 0
    spectrum: str = ""

    def __post_init__(self):
        if self.basis not in BASES:
            raise ConfigError(f"unknown basis {self.basis!r}; expected one of {BASES}")
        for arr in self._arrays():
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ConfigError("variances must be finite and non-negative")
        if self.basis == "fourier":
            c = self.variances
            flipped = np.roll(c[::-1, ::-1], 1, axis=(0, 1))
            if not np.allclose(c, flipped):
                raise ConfigError("Fourier variances must satisfy c(k) = c(-k)")

    def _arrays(self):
        if self.basis == "haar":
            return [self.variances.lowpass] + list(self.variances.details)
        return [self.variances]

    @property
    def n_coefficients(self):
        return self.side * self.side

    def total_variance(self):
        return float(sum(a.sum() for a in self._arrays()))

    # coefficient maps ---------------------------------------------------

    def analyze(self, x):
        """Coefficients of ``x`` (..., 1, N, N) in the model basis."""
        x = self._check(x)
        if self.basis == "pixel":
            return x[..., 0, :, :]
        if self.basis == "fourier":
            return np.fft.fft2(x[..., 0, :, :], norm="ortho")
        return build_pyramid(x, self.depth)

    def synthesize(self, coef):
        if self.basis == "pixel":
            return np.asarray(coef)[..., None, :, :]
        if self.basis == "fourier":
            return np.fft.ifft2(coef, norm="ortho").real[..., None, :, :]
        return collapse_pyramid(coef)

    def map_coefficients(self, coef, fn):
        """Apply ``fn(coefficients, variances)`` band by band."""
        if self.basis != "haar":
            return fn(coef, self.variances)
        v = self.variances
        return WaveletPyramid(
            fn(coef.lowpass, v.lowpass),
            [fn(d, c) for d, c in zip(coef.details, v.details)],
            coef.depth,
            coef.base_size,
        )

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[-3:] != (1, self.side, self.side):
            raise DimensionError(
                f"model is for (1, {self.side}, {self.side}) images, got {x.shape}"
            )
        return x

    def to_text(self):
        lines = [f"basis = {self.basis}", f"side = {self.side}"]
        if self.basis == "haar":
            lines.append(f"depth = {self.depth}")
        lines.append(f"spectrum = {self.spectrum or 'csv'}")
        return "\n".join(lines) + "\n"


def _variance_layout(basis, side, depth):
    if basis == "haar":
        if depth < 1 or side % (2 ** depth):
            raise DimensionError(f"side {side} is not divisible by 2**{depth}")
        return build_pyramid(np.zeros((1, side, side)), depth)
    return np.zeros((side, side))


def make_model(basis, side, spectrum, depth=0):
    """Build a model from a spectrum string.

    ``white:c``            every coefficient has variance c
    ``powerlaw:alpha[:s]`` haar: detail variance s * 2**(alpha * (j - J - 1)) at
                           scale j, low-pass variance s; fourier: s * (1 + |k|)**-alpha
    ``csv:path``           explicit variances in coefficient order
    """
    kind, _, arg = spectrum.partition(":")
    layout = _variance_layout(basis, side, depth)
    try:
        if kind == "white":
            c = float(arg)
            if basis == "haar":
                var = _fill_pyramid(layout, lambda j: c)
            else:
                var = np.full((side, side), c)
        elif kind == "powerlaw":
            parts = arg.split(":")
            alpha = float(parts[0])
            s = float(parts[1]) if len(parts) > 1 else 1.0
            if basis == "haar":
                var = _fill_pyramid(layout, lambda j: s * 2.0 ** (alpha * (j - depth - 1)))
            elif basis == "fourier":
                k = np.fft.fftfreq(side) * side
                radius = np.hypot(k[:, None], k[None, :])
                var = s * (1.0 + radius) ** (-alpha)
            else:
                raise ConfigError("powerlaw spectra are defined for haar and fourier bases only")
        elif kind == "csv":
            values = np.loadtxt(arg, delimiter=",", ndmin=1).ravel()
            var = variances_from_vector(basis, side, depth, values)
        else:
            raise ConfigError(f"unknown spectrum {spectrum!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed spectrum {spectrum!r}") from exc
    return GaussianModel(basis, var, side, depth, spectrum)


def variances_from_vector(basis, side, depth, values):
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != side * side:
        raise DimensionError(f"expected {side * side} variances, got {values.size}")
    if basis != "haar":
        return values.reshape(side, side)
    layout = _variance_layout(basis, side, depth)
    low_n = layout.lowpass.size
    low = values[:low_n].reshape(layout.lowpass.shape)
    details = [None] * depth
    offset = low_n
    for j in range(depth, 0, -1):
        shape = layout.details[j - 1].shape
        n = int(np.prod(shape))
        details[j - 1] = values[offset:offset + n].reshape(shape)
        offset += n
    return WaveletPyramid(low, details, depth, side)


def _fill_pyramid(layout, detail_var):
    J = layout.depth
    low = np.full(layout.lowpass.shape, detail_var(J + 1))
    details = [np.full(d.shape, detail_var(j + 1)) for j, d in enumerate(layout.details)]
    return WaveletPyramid(low, details, J, layout.base_size)


def haar_band_model(band_variances, lowpass_variance, side):
    """Haar-diagonal model with one variance per detail band.

    ``band_variances[j-1]`` is a length-3 sequence (horizontal, vertical,
    diagonal) or a scalar for scale j.
    """
    depth = len(band_variances)
    layout = _variance_layout("haar", side, depth)
    details = []
    for d, bv in zip(layout.details, band_variances):
        bv = np.broadcast_to(np.asarray(bv, dtype=np.float64).reshape(-1), (3,))
        details.append(np.broadcast_to(bv[:, None, None], d.shape).copy())
    low = np.full(layout.lowpass.shape, float(lowpass_variance))
    return GaussianModel("haar", WaveletPyramid(low, details, depth, side), side, depth, "bands")


def wiener_denoise(y, m, sigma):
    """Exact MMSE estimate: each coefficient shrunk by c / (c + sigma**2)."""
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    s2 = float(sigma) ** 2
    coef = m.analyze(y)

    def shrink(v, c):
        if s2 == 0.0:
            return v
        return v * (c / (c + s2))

    return m.synthesize(m.map_coefficients(coef, shrink))


def analytic_score(y, m, sigma):
    """Gradient of log p(y) for y = x + sigma * z: -coef / (c + sigma**2)."""
    s2 = float(sigma) ** 2
    if s2 == 0.0 and any(np.any(a == 0) for a in m._arrays()):
        raise SingularModelError("score is undefined: zero-variance coefficient and sigma = 0")
    coef = m.analyze(y)
    return m.synthesize(m.map_coefficients(coef, lambda v, c: -v / (c + s2)))


def sample_exact(m, seed=None, n=None):
    """Draw coefficients N(0, c_i) in the model basis and transform back.

    Returns (1, N, N), or (n, 1, N, N) when ``n`` is given.
    """
    rng = np.random.default_rng(seed)
    lead = () if n is None else (int(n),)
    z = rng.standard_normal(lead + (1, m.side, m.side))
    if m.basis == "pixel":
        return np.sqrt(m.variances) * z
    if m.basis == "fourier":
        zf = np.fft.fft2(z[..., 0, :, :], norm="ortho")
        return np.fft.ifft2(np.sqrt(m.variances) * zf, norm="ortho").real[..., None, :, :]
    coef = build_pyramid(z, m.depth)
    return collapse_pyramid(m.map_coefficients(coef, lambda v, c: np.sqrt(c) * v))


def estimate_noise_variance(y, m):
    """Moment estimate of sigma**2 from E||y||^2 = sum(c) + n * sigma**2."""
    y = m._check(y)
    axes = tuple(range(y.ndim - 3, y.ndim))
    excess = np.sum(y * y, axis=axes) - m.total_variance()
    return np.maximum(excess / m.n_coefficients, 0.0)


def blind_denoiser(m):
    """Wiener denoiser that estimates its own noise level from each input image."""

    def f(y):
        y = m._check(y)
        flat = y.reshape((-1,) + y.shape[-3:])
        s2 = np.atleast_1d(estimate_noise_variance(flat, m))
        out = np.stack([wiener_denoise(img, m, np.sqrt(v)) for img, v in zip(flat, s2)])
        return out.reshape(y.shape)

    return f


def conditional_detail_denoiser(m, j, sigma=None):
    """Exact conditional MMSE map for detail band ``j`` of a haar-diagonal model.

    Returns ``f(details, lowpass) -> details``. For a band-diagonal model the
    conditional law of the details does not depend on the low-pass image, so
    the conditioning argument only has its shape checked. With ``sigma=None``
    the noise variance is estimated from the details themselves.
    """
    if m.basis != "haar":
        raise UnsupportedModelError(f"conditional oracle needs a haar-diagonal model, got {m.basis}")
    if not 1 <= j <= m.depth:
        raise DimensionError(f"scale {j} outside 1..{m.depth}")
    c = m.variances.details[j - 1]
    total = float(c.sum())

    def f(details, lowpass):
        d = np.asarray(details, dtype=np.float64)
        low = np.asarray(lowpass)
        if d.shape[-3:] != c.shape or low.shape[-2:] != c.shape[-2:]:
            raise DimensionError(
                f"scale {j} expects details {c.shape} with matching low-pass, "
                f"got {d.shape} and {low.shape}"
            )
        return _shrink(d, c, total, sigma)

    return f


def lowpass_denoiser(m, sigma=None):
    """Exact denoiser of the terminal low-pass band of a haar-diagonal model."""
    if m.basis != "haar":
        raise UnsupportedModelError(f"low-pass oracle needs a haar-diagonal model, got {m.basis}")
    c = m.variances.lowpass
    total = float(c.sum())

    def f(y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-3:] != c.shape:
            raise DimensionError(f"low-pass oracle expects {c.shape}, got {y.shape}")
        return _shrink(y, c, total, sigma)

    return f


def _shrink(v, c, total, sigma):
    # per-image noise estimate over the last three axes when sigma is None
    if sigma is None:
        sq = np.sum(v * v, axis=(-3, -2, -1), keepdims=True)
        s2 = np.maximum((sq - total) / c.size, 0.0)
    else:
        s2 = float(sigma) ** 2
        if s2 == 0.0:
            return v.copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        gain = np.where(s2 > 0, c / (c + s2), 1.0)
    return v * gain


def energy(x, m):
    """Quadratic form 0.5 * sum(coef**2 / c) over coefficients with c > 0.

    This is -log p(x) up to the normalization constant.
    """
    coef = m.analyze(x)
    if m.basis == "haar":
        return lowpass_energy(coef.lowpass, m) + sum(
            detail_energy(coef.details[j - 1], m, j) for j in range(1, m.depth + 1)
        )
    c = m.variances
    mask = c > 0
    return 0.5 * float(np.sum(np.abs(coef[..., mask]) ** 2 / c[mask]))


def lowpass_energy(x_low, m):
    c = m.variances.lowpass
    mask = c > 0
    return 0.5 * float(np.sum(np.asarray(x_low)[..., mask] ** 2 / c[mask]))


def detail_energy(details, m, j):
    """Energy of -log p(details_j | x_j) for a haar-diagonal model."""
    c = m.variances.details[j - 1]
    mask = c > 0
    return 0.5 * float(np.sum(np.asarray(details)[..., mask] ** 2 / c[mask]))
