"""Noise corruption, denoising-score training loops and checkpoint files."""
import csv
import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import (
    CheckpointVersionError,
    ConfigError,
    IntegrityError,
    NumericError,
)
from .models import Model, NetworkSpec
from .wavelet import build_pyramid

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"WSCKPT\x00\x01"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def corrupt(x, sigma, seed=None, rng=None):
    """``x + sigma * z`` with z i.i.d. standard normal.

    ``sigma`` may be a scalar or broadcastable against ``x`` (e.g. one value
    per image).
    """
    s = np.asarray(sigma, dtype=np.float64)
    if np.any(s < 0):
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    x = np.asarray(x)
    rng = np.random.default_rng(seed) if rng is None else rng
    z = rng.standard_normal(x.shape)
    if not np.any(s):
        return x.copy()
    return (x + s * z).astype(x.dtype if x.dtype.kind == "f" else np.float64)


@dataclass
class TrainConfig:
    batch_size: int = 512
    sigma_min: float = 0.0
    sigma_max: float = 1.0
    lr: float = 1e-3
    epochs: int = 1
    seed: int = 0
    max_steps: int = None
    time_budget: float = None  # seconds
    plateau_window: int = 50
    plateau_patience: int = 2
    lr_decay: float = 0.5
    min_lr: float = 1e-5
    flip: bool = False
    resample_noise: bool = True  # False: one fixed noise draw per image (sanity fits)

    def __post_init__(self):
        if not 0 <= self.sigma_min < self.sigma_max:
            raise ConfigError(
                f"need 0 <= sigma_min < sigma_max, got [{self.sigma_min}, {self.sigma_max}]"
            )
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: list
    running_ms: list
    adam: T.AdamState
    metadata: dict = field(default_factory=dict)
    loss_history: np.ndarray = None  # rows (epoch, step, loss)

    def to_model(self):
        states = [T.BatchNormState(ms.copy(), eps=l.eps)
                  for ms, l in zip(self.running_ms,
                                   [l for l in self.spec.layers if l.kind == "batchnorm"])]
        noise = tuple(self.metadata.get("noise_range", (0.0, 1.0)))
        return Model(self.spec, [p.copy() for p in self.params], states, noise_range=noise)

    @classmethod
    def from_model(cls, model, adam=None, metadata=None, loss_history=None):
        if adam is None:
            adam = T.AdamState.zeros_like(model.params)
        meta = dict(metadata or {})
        meta.setdefault("noise_range", list(model.noise_range))
        hist = np.zeros((0, 3)) if loss_history is None else np.asarray(loss_history, dtype=np.float64)
        return cls(
            model.spec,
            [p.copy() for p in model.params],
            [s.running_ms.copy() for s in model.bn_states],
            adam,
            meta,
            hist.reshape(-1, 3),
        )

    def write_loss_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "step", "loss"])
            for epoch, step, loss in self.loss_history:
                w.writerow([int(epoch), int(step), repr(float(loss))])


def training_pairs(images, mode="lowpass", depth=0, scale=1):
    """Clean targets and (optional) clean conditioning bands for training.

    ``lowpass`` mode targets the depth-``depth`` low-pass band (depth 0 is
    the image itself). ``conditional`` mode targets the detail band at
    ``scale`` and conditions on the low-pass band at the same scale.
    """
    x = np.asarray(images, dtype=np.float64)
    if mode == "lowpass":
        target = x if depth == 0 else build_pyramid(x, depth).lowpass
        return target.astype(np.float32), None
    if mode == "conditional":
        p = build_pyramid(x, scale)
        return p.details[scale - 1].astype(np.float32), p.lowpass.astype(np.float32)
    raise ConfigError(f"unknown training mode {mode!r}")


def train_denoiser(model, images, cfg, mode="lowpass", depth=0, scale=1, progress=None):
    """Fit ``model`` by minimizing E||f(x + sigma z) - x||^2, sigma ~ U[sigma_min, sigma_max].

    In conditional mode only the detail channels are corrupted; the clean
    low-pass band is appended as the last input channel. Mutates ``model``
    and returns a :class:`Checkpoint`.
    """
    target, cond = training_pairs(images, mode, depth, scale)
    n_in = target.shape[1] + (0 if cond is None else cond.shape[1])
    if n_in != model.spec.in_channels or target.shape[1] != model.spec.out_channels:
        raise ConfigError(
            f"{model.spec.name} has {model.spec.in_channels}->{model.spec.out_channels} channels, "
            f"{mode} training needs {n_in}->{target.shape[1]}"
        )
    if target.shape[0] == 0:
        raise ConfigError("empty training set")
    model.noise_range = (cfg.sigma_min, cfg.sigma_max)
    rng = np.random.default_rng(cfg.seed)
    dtype = model.dtype
    adam = T.AdamState.zeros_like(model.params)
    lr = cfg.lr
    history = []
    window, best, stale = [], np.inf, 0
    step = 0
    start = time.monotonic()
    n = target.shape[0]
    bs = min(cfg.batch_size, n)
    done = False
    if not cfg.resample_noise:
        fixed_sig = rng.uniform(cfg.sigma_min, cfg.sigma_max, size=(n, 1, 1, 1))
        fixed_z = rng.standard_normal(target.shape)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for b0 in range(0, n - bs + 1, bs):
            idx = order[b0:b0 + bs]
            clean = target[idx]
            c = None if cond is None else cond[idx]
            if cfg.flip:
                flips = rng.random(bs) < 0.5
                clean = np.where(flips[:, None, None, None], clean[..., ::-1], clean)
                if c is not None:
                    c = np.where(flips[:, None, None, None], c[..., ::-1], c)
                    # horizontal flip negates the vertical and diagonal details
                    sign = np.array([1, -1, -1], dtype=dtype)[None, :, None, None]
                    clean = np.where(flips[:, None, None, None], clean * sign, clean)
            if cfg.resample_noise:
                sig = rng.uniform(cfg.sigma_min, cfg.sigma_max, size=(bs, 1, 1, 1))
                z = rng.standard_normal(clean.shape)
            else:
                sig, z = fixed_sig[idx], fixed_z[idx]
            noisy = (clean + sig * z).astype(dtype)
            inp = noisy if c is None else np.concatenate([noisy, c], axis=1)
            pn = [T.parameter(p) for p in model.params]
            out = model.forward(T.constant(inp), train=True, param_nodes=pn)
            loss = T.mse(out, T.constant(np.ascontiguousarray(clean, dtype=dtype)))
            lv = float(loss.value)
            if not np.isfinite(lv):
                raise NumericError(f"non-finite loss at step {step}")
            grads = T.backprop(loss, pn)
            model.params, adam = T.adam_step(model.params, grads, adam, lr)
            history.append((epoch, step, lv))
            step += 1
            window.append(lv)
            if len(window) == cfg.plateau_window:
                m = float(np.mean(window))
                window = []
                if m < best * (1 - 1e-3):
                    best, stale = m, 0
                else:
                    stale += 1
                    if stale >= cfg.plateau_patience and lr > cfg.min_lr:
                        lr = max(lr * cfg.lr_decay, cfg.min_lr)
                        stale = 0
                        log.info("step %d: learning rate -> %g", step, lr)
            if progress is not None:
                progress(epoch, step, lv)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
            elif cfg.time_budget is not None and time.monotonic() - start >= cfg.time_budget:
                done = True
            if done:
                break
        if done:
            break
    meta = {
        "mode": mode,
        "depth": int(depth),
        "scale": int(scale),
        "epochs": epoch + 1,
        "steps": step,
        "seed": int(cfg.seed),
        "lr_final": lr,
        "batch_size": bs,
        "noise_range": [float(cfg.sigma_min), float(cfg.sigma_max)],
    }
    return Checkpoint.from_model(model, adam, meta, np.array(history, dtype=np.float64))


# checkpoint files -------------------------------------------------------

def _pack_array(name, a):
    a = np.ascontiguousarray(a)
    code = _DTYPE_CODES.get(a.dtype)
    if code is None:
        raise ConfigError(f"cannot store array {name!r} of dtype {a.dtype}")
    raw_name = name.encode("utf-8")
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<BB", code, a.ndim)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.astype(_DTYPES[code], copy=False).tobytes()


def checkpoint_bytes(c):
    spec_text = c.spec.to_text().encode("utf-8")
    meta = dict(c.metadata)
    meta["adam_t"] = int(c.adam.t)
    meta_text = json.dumps(meta, sort_keys=True).encode("utf-8")
    arrays = [(f"param{i}", p) for i, p in enumerate(c.params)]
    arrays += [(f"bn{i}", s) for i, s in enumerate(c.running_ms)]
    arrays += [(f"adam_m{i}", m) for i, m in enumerate(c.adam.m)]
    arrays += [(f"adam_v{i}", v) for i, v in enumerate(c.adam.v)]
    hist = np.zeros((0, 3)) if c.loss_history is None else c.loss_history
    arrays.append(("loss_history", np.asarray(hist, dtype=np.float64)))
    body = struct.pack("<I", len(spec_text)) + spec_text
    body += struct.pack("<I", len(meta_text)) + meta_text
    body += struct.pack("<I", len(arrays))
    body += b"".join(_pack_array(name, a) for name, a in arrays)
    total = len(MAGIC) + 4 + 8 + len(body) + 8
    blob = MAGIC + struct.pack("<IQ", FORMAT_VERSION, total) + body
    return blob + hashlib.blake2b(blob, digest_size=8).digest()


def save_checkpoint(c, path):
    data = checkpoint_bytes(c)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_checkpoint(data, source=str(path))


def parse_checkpoint(data, source="<bytes>"):
    head = len(MAGIC) + 12
    if len(data) < head + 8 or data[:len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{source}: not a checkpoint file (bad magic or too short)")
    version, total = struct.unpack_from("<IQ", data, len(MAGIC))
    if total != len(data):
        raise IntegrityError(f"{source}: expected {total} bytes, found {len(data)} (truncated?)")
    if hashlib.blake2b(data[:-8], digest_size=8).digest() != data[-8:]:
        raise IntegrityError(f"{source}: checksum mismatch")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(version, FORMAT_VERSION)
    off = head
    try:
        (n,) = struct.unpack_from("<I", data, off)
        spec = NetworkSpec.from_text(data[off + 4:off + 4 + n].decode("utf-8"))
        off += 4 + n
        (n,) = struct.unpack_from("<I", data, off)
        meta = json.loads(data[off + 4:off + 4 + n].decode("utf-8"))
        off += 4 + n
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        arrays = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, off)
            name = data[off + 2:off + 2 + ln].decode("utf-8")
            off += 2 + ln
            code, ndim = struct.unpack_from("<BB", data, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, off)
            off += 8 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            arrays[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize,
                                         offset=off).reshape(shape).astype(dt.newbyteorder("="))
            off += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, ValueError) as exc:
        raise IntegrityError(f"{source}: malformed checkpoint body") from exc
    if off != len(data) - 8:
        raise IntegrityError(f"{source}: trailing bytes in checkpoint body")
    n_params = sum(1 for k in arrays if k.startswith("param"))
    n_bn = sum(1 for k in arrays if k.startswith("bn"))
    adam_t = int(meta.pop("adam_t", 0))
    adam = T.AdamState(
        [arrays[f"adam_m{i}"] for i in range(n_params)],
        [arrays[f"adam_v{i}"] for i in range(n_params)],
        adam_t,
    )
    return Checkpoint(
        spec,
        [arrays[f"param{i}"] for i in range(n_params)],
        [arrays[f"bn{i}"] for i in range(n_bn)],
        adam,
        meta,
        arrays["loss_history"],
    )


def load_model(path):
    return load_checkpoint(path).to_model()
