"""Datasets and grayscale image I/O."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DimensionError

IMAGE_SUFFIXES = (".pgm", ".png")


@dataclass
class DatasetSpec:
    """Where images come from and how many to take.

    ``source`` is ``"toyfaces"``, ``"gaussfield"`` or a directory of PGM/PNG
    files.
    """

    source: str = "toyfaces"
    side: int = 64
    n_train: int = 5000
    n_test: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.side < 2:
            raise ConfigError(f"image side must be >= 2, got {self.side}")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigError("split sizes must be non-negative")


def load_dataset(spec):
    """Return ``(train, test)`` float32 arrays of shape (n, 1, side, side) in [0, 1]."""
    n = spec.n_train + spec.n_test
    if spec.source == "toyfaces":
        images = toy_faces(n, spec.side, seed=spec.seed)
    elif spec.source == "gaussfield":
        images = gaussian_fields(n, spec.side, seed=spec.seed)
    else:
        images = load_image_dir(spec.source, spec.side)
        if images.shape[0] < n:
            raise ConfigError(
                f"{spec.source} has {images.shape[0]} images, {n} requested"
            )
        images = images[:n]
    return images[:spec.n_train], images[spec.n_train:n]


def toy_faces(n, side=64, seed=0):
    """Synthetic non-stationary 'faces': an elliptical head with two eyes and a
    mouth at random positions and contrasts on a smooth background.
    """
    rng = np.random.default_rng(seed)
    u = (np.arange(side) + 0.5) / side
    yy, xx = np.meshgrid(u, u, indexing="ij")
    yy, xx = yy[None], xx[None]

    def r(lo, hi):
        return rng.uniform(lo, hi, size=(n, 1, 1))

    # smooth background: tilted plane plus one broad bump
    bg = r(0.1, 0.4) + r(-0.15, 0.15) * (xx - 0.5) + r(-0.15, 0.15) * (yy - 0.5)
    bx, by, bs = r(0, 1), r(0, 1), r(0.25, 0.5)
    bg = bg + r(-0.1, 0.1) * np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * bs ** 2))

    cx, cy = r(0.42, 0.58), r(0.42, 0.58)
    ax, ay = r(0.26, 0.36), r(0.34, 0.44)
    head_level = r(0.55, 0.9)
    rho = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
    head = 1.0 / (1.0 + np.exp((rho - 1.0) * 25.0))
    img = bg * (1 - head) + head_level * head

    eye_dx, eye_dy = r(0.09, 0.14), r(0.08, 0.14)
    eye_s = r(0.025, 0.045)
    eye_depth = r(0.3, 0.6)
    for sgn in (-1.0, 1.0):
        ex, ey = cx + sgn * eye_dx, cy - eye_dy
        blob = np.exp(-((xx - ex) ** 2 + (yy - ey) ** 2) / (2 * eye_s ** 2))
        img = img - eye_depth * blob * head

    my, mw, mh = cy + r(0.12, 0.2), r(0.08, 0.14), r(0.015, 0.03)
    mouth = (1.0 / (1.0 + np.exp((np.abs(xx - cx) - mw) * 60.0))) * np.exp(
        -((yy - my) ** 2) / (2 * mh ** 2)
    )
    img = img - r(0.2, 0.45) * mouth * head
    return np.clip(img, 0.0, 1.0).astype(np.float32)[:, None]


def gaussian_fields(n, side=64, alpha=3.0, amplitude=0.12, seed=0):
    """Stationary Gaussian fields with a (1 + |k|)**-alpha spectrum around 0.5.

    Amplitude is small enough that clipping to [0, 1] is rare.
    """
    from .oracle import make_model, sample_exact

    m = make_model("fourier", side, gaussian_field_spectrum(side, alpha, amplitude))
    x = sample_exact(m, seed=seed, n=n)
    return np.clip(0.5 + x, 0.0, 1.0).astype(np.float32)


def gaussian_field_spectrum(side=64, alpha=3.0, amplitude=0.12):
    """Fourier spectrum string of the centred fields from :func:`gaussian_fields`.

    The scale is chosen so the per-pixel standard deviation equals ``amplitude``.
    """
    k = np.fft.fftfreq(side) * side
    base = (1.0 + np.hypot(k[:, None], k[None, :])) ** (-alpha)
    s = amplitude ** 2 * side ** 2 / float(base.sum())
    return f"powerlaw:{alpha!r}:{s!r}"


def read_image(path):
    """Read a grayscale PGM (P5) or PNG as float64 in [0, 1], shape (H, W)."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            a = np.asarray(im, dtype=np.float64)
            return a / 65535.0
        a = np.asarray(im.convert("L"), dtype=np.float64)
    return a / 255.0


def write_image(path, image):
    """Write an image in [0, 1] as 8-bit PGM or PNG (chosen by suffix)."""
    a = np.asarray(image, dtype=np.float64)
    a = np.squeeze(a)
    if a.ndim != 2:
        raise DimensionError(f"expected a single grayscale image, got shape {a.shape}")
    q = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() == ".pgm" else "PNG"
    Image.fromarray(q, mode="L").save(path, format=fmt)


def load_image_dir(directory, side=None):
    paths = sorted(
        p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise ConfigError(f"no PGM/PNG images in {directory}")
    images = [read_image(p) for p in paths]
    shape = images[0].shape
    if side is not None and shape != (side, side):
        raise DimensionError(f"{paths[0]} is {shape}, expected {side}x{side}")
    for p, im in zip(paths, images):
        if im.shape != shape:
            raise DimensionError(f"{p} is {im.shape}, expected {shape}")
    return np.stack(images)[:, None].astype(np.float32)
