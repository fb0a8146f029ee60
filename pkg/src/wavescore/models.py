"""Bias-free denoiser architectures, receptive-field arithmetic and
Jacobian-row (adaptive filter) extraction.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "Model",
    "receptive_field",
    "kernel_pattern",
    "build_network_spec",
    "build_lowpass_denoiser",
    "build_conditional_denoiser",
    "build_pixel_denoiser",
    "jacobian_row",
]


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "relu" | "batchnorm"
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 1
    channels: int = 0
    eps: float = T.BN_EPS

    def to_text(self):
        if self.kind == "conv":
            return f"conv {self.in_channels} {self.out_channels} {self.kernel_size}"
        if self.kind == "batchnorm":
            return f"batchnorm {self.channels} {self.eps!r}"
        return self.kind

    @classmethod
    def from_text(cls, text):
        parts = text.split()
        if not parts:
            raise ConfigError("empty layer line")
        kind = parts[0]
        try:
            if kind == "conv":
                cin, cout, k = (int(v) for v in parts[1:4])
                return cls("conv", in_channels=cin, out_channels=cout, kernel_size=k)
            if kind == "batchnorm":
                return cls("batchnorm", channels=int(parts[1]), eps=float(parts[2]))
            if kind == "relu" and len(parts) == 1:
                return cls("relu")
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"malformed layer line {text!r}") from exc
        raise ConfigError(f"unknown layer {text!r}")


@dataclass
class NetworkSpec:
    """Layer-by-layer description of a bias-free denoiser.

    Layout: conv, relu, then (conv, batchnorm, relu) blocks, then a final conv.

    With ``residual`` set the network predicts the noise and the model output
    is ``input[:, :out_channels] - net(input)``.
    """

    layers: list
    in_channels: int
    out_channels: int
    name: str = "network"
    residual: bool = True

    def validate(self):
        convs = [l for l in self.layers if l.kind == "conv"]
        if not convs or self.layers[0].kind != "conv" or self.layers[-1].kind != "conv":
            raise ConfigError("first and last layers must be convolutions")
        if self.layers[0].in_channels != self.in_channels:
            raise ConfigError("first conv does not match in_channels")
        if self.layers[-1].out_channels != self.out_channels:
            raise ConfigError("last conv does not match out_channels")
        if self.residual and self.out_channels > self.in_channels:
            raise ConfigError("residual output needs out_channels <= in_channels")
        channels = self.in_channels
        i = 0
        while i < len(self.layers):
            layer = self.layers[i]
            if layer.kind != "conv":
                raise ConfigError(f"layer {i}: expected conv, got {layer.kind}")
            if layer.kernel_size % 2 == 0 or layer.kernel_size < 1:
                raise ConfigError(f"layer {i}: kernel size must be odd")
            if layer.in_channels != channels:
                raise ConfigError(f"layer {i}: expects {layer.in_channels} channels, gets {channels}")
            channels = layer.out_channels
            if i == len(self.layers) - 1:
                break
            if i == 0:
                # first conv: ReLU only
                if self.layers[1].kind != "relu":
                    raise ConfigError("first conv must be followed by relu")
                i += 2
                continue
            tail = self.layers[i + 1:i + 3]
            if [l.kind for l in tail] != ["batchnorm", "relu"] or tail[0].channels != channels:
                raise ConfigError(f"layer {i}: intermediate conv must be followed by batchnorm, relu")
            i += 3
        return self

    def to_text(self):
        lines = [
            f"name = {self.name}",
            f"in_channels = {self.in_channels}",
            f"out_channels = {self.out_channels}",
            f"residual = {int(self.residual)}",
        ]
        lines += [f"layer = {l.to_text()}" for l in self.layers]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields = {}
        layers = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"malformed spec line {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "layer":
                layers.append(LayerSpec.from_text(value))
            elif key in ("name", "in_channels", "out_channels", "residual"):
                fields[key] = value
            else:
                raise ConfigError(f"unknown spec key {key!r}")
        try:
            spec = cls(
                layers=layers,
                in_channels=int(fields["in_channels"]),
                out_channels=int(fields["out_channels"]),
                name=fields.get("name", "network"),
                residual=bool(int(fields.get("residual", "1"))),
            )
        except KeyError as exc:
            raise ConfigError(f"spec is missing {exc.args[0]!r}") from exc
        return spec.validate()

    @property
    def conv_layers(self):
        return [l for l in self.layers if l.kind == "conv"]

    def parameter_count(self):
        n = 0
        for l in self.layers:
            if l.kind == "conv":
                n += l.out_channels * l.in_channels * l.kernel_size ** 2
            elif l.kind == "batchnorm":
                n += l.channels
        return n


def receptive_field(spec):
    """Side of the square input region one output element depends on."""
    return 1 + sum(l.kernel_size - 1 for l in spec.conv_layers)


def kernel_pattern(rf, n_layers, big=3):
    """Kernel sizes giving receptive field ``rf`` with ``n_layers`` convs.

    ``(rf - 1) / (big - 1)`` layers get ``big`` kernels, spread evenly and
    including the first and last layer; the rest are 1x1.
    """
    rf = int(rf)
    if rf < 1 or (rf - 1) % (big - 1):
        raise ConfigError(f"receptive field {rf} is not reachable with {big}x{big} kernels")
    m = (rf - 1) // (big - 1)
    if m > n_layers:
        raise ConfigError(
            f"receptive field {rf} needs {m} {big}x{big} layers, only {n_layers} available"
        )
    sizes = [1] * n_layers
    if m == 1:
        sizes[0] = big
    elif m > 1:
        for pos in np.round(np.linspace(0, n_layers - 1, m)).astype(int):
            sizes[pos] = big
    return sizes


def build_network_spec(kernel_sizes, in_channels, out_channels, width=64, name="network",
                       residual=True, eps=T.BN_EPS):
    if width < 1:
        raise ConfigError(f"width must be positive, got {width}")
    if len(kernel_sizes) < 2:
        raise ConfigError("a denoiser needs at least two conv layers")
    layers = []
    n = len(kernel_sizes)
    for i, k in enumerate(kernel_sizes):
        cin = in_channels if i == 0 else width
        cout = out_channels if i == n - 1 else width
        layers.append(LayerSpec("conv", in_channels=cin, out_channels=cout, kernel_size=int(k)))
        if 0 < i < n - 1:
            layers.append(LayerSpec("batchnorm", channels=width, eps=eps))
        if i < n - 1:
            layers.append(LayerSpec("relu"))
    return NetworkSpec(layers, in_channels, out_channels, name=name, residual=residual).validate()


class Model:
    """A :class:`NetworkSpec` with weights.

    ``params`` holds conv kernels and batch-norm scales in declaration order;
    ``bn_states`` the running mean-square statistics.
    """

    def __init__(self, spec, params=None, bn_states=None, noise_range=(0.0, 1.0),
                 dtype=np.float32, seed=0):
        spec.validate()
        self.spec = spec
        self.noise_range = tuple(float(s) for s in noise_range)
        if params is None:
            params, bn_states = _init_weights(spec, dtype, seed)
        self.params = [np.ascontiguousarray(p) for p in params]
        expected = _param_shapes(spec)
        if [p.shape for p in self.params] != expected:
            raise DimensionError("weight shapes do not match the network spec")
        if bn_states is None:
            bn_states = [
                T.BatchNormState(np.ones(l.channels, dtype=self.dtype), eps=l.eps)
                for l in spec.layers if l.kind == "batchnorm"
            ]
        self.bn_states = bn_states

    @property
    def dtype(self):
        return self.params[0].dtype

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params))

    def astype(self, dtype):
        params = [p.astype(dtype) for p in self.params]
        states = [T.BatchNormState(s.running_ms.astype(dtype), s.momentum, s.eps)
                  for s in self.bn_states]
        return Model(self.spec, params, states, self.noise_range)

    def forward(self, x, train=False, param_nodes=None):
        """Build the graph for input node ``x``; returns the output node."""
        if x.value.ndim != 4 or x.value.shape[1] != self.spec.in_channels:
            raise DimensionError(
                f"{self.spec.name} expects (B, {self.spec.in_channels}, H, W), "
                f"got {x.value.shape}"
            )
        if param_nodes is None:
            param_nodes = [T.constant(p) for p in self.params]
        h = x
        pi = bi = 0
        for layer in self.spec.layers:
            if layer.kind == "conv":
                h = T.conv2d(h, param_nodes[pi])
                pi += 1
            elif layer.kind == "relu":
                h = T.relu(h)
            else:
                h = T.batchnorm(h, param_nodes[pi], self.bn_states[bi], train=train)
                pi += 1
                bi += 1
        if self.spec.residual:
            h = T.sub(T.take_channels(x, self.spec.out_channels), h)
        return h

    def __call__(self, x, batch_size=64):
        """Evaluation-mode inference on (B, C, H, W) or (C, H, W) arrays."""
        x = np.asarray(x)
        single = x.ndim == 3
        if single:
            x = x[None]
        x = x.astype(self.dtype, copy=False)
        outs = [
            self.forward(T.constant(x[i:i + batch_size])).value
            for i in range(0, x.shape[0], batch_size)
        ]
        out = np.concatenate(outs, axis=0) if len(outs) > 1 else outs[0]
        return out[0] if single else out


def _param_shapes(spec):
    shapes = []
    for l in spec.layers:
        if l.kind == "conv":
            shapes.append((l.out_channels, l.in_channels, l.kernel_size, l.kernel_size))
        elif l.kind == "batchnorm":
            shapes.append((l.channels,))
    return shapes


def _init_weights(spec, dtype, seed):
    # Kaiming fan-in for conv kernels, unit batch-norm scales.
    rng = np.random.default_rng(seed)
    params, states = [], []
    for l in spec.layers:
        if l.kind == "conv":
            fan_in = l.in_channels * l.kernel_size ** 2
            shape = (l.out_channels, l.in_channels, l.kernel_size, l.kernel_size)
            params.append((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype))
        elif l.kind == "batchnorm":
            params.append(np.ones(l.channels, dtype=dtype))
            states.append(T.BatchNormState(np.ones(l.channels, dtype=dtype), eps=l.eps))
    return params, states


def build_lowpass_denoiser(n_layers=20, width=64, kernel_size=3, seed=0, dtype=np.float32):
    """Low-pass band CNN: every kernel ``kernel_size`` x ``kernel_size``.

    The default 20 conv layers give 665,856 parameters at width 64; pass
    ``n_layers=21`` for the 21-layer variant (702,784 parameters, RF 43).
    """
    if n_layers < 2:
        raise ConfigError(f"need at least 2 layers, got {n_layers}")
    spec = build_network_spec(
        [kernel_size] * n_layers, 1, 1, width=width, name=f"lowpass-L{n_layers}-w{width}"
    )
    return Model(spec, dtype=dtype, seed=seed)


def build_conditional_denoiser(rf, n_layers=21, width=64, seed=0, dtype=np.float32):
    """Conditional CNN: input [3 noisy detail bands, low-pass], output 3 bands."""
    spec = build_network_spec(
        kernel_pattern(rf, n_layers), 4, 3, width=width, name=f"ccnn-rf{rf}-w{width}"
    )
    return Model(spec, dtype=dtype, seed=seed)


def build_pixel_denoiser(rf, n_layers=21, width=64, seed=0, dtype=np.float32):
    """Conventional single-channel CNN with receptive field ``rf``."""
    spec = build_network_spec(
        kernel_pattern(rf, n_layers), 1, 1, width=width, name=f"pixel-rf{rf}-w{width}"
    )
    return Model(spec, dtype=dtype, seed=seed)


def jacobian_row(model, input, coordinate):
    """Gradient of one output element with respect to every input element.

    ``input`` is (C, H, W); ``coordinate`` is (channel, row, col) of the
    output. Evaluated in eval mode, so for a bias-free model the row is the
    adaptive linear filter that produced that output value.
    """
    x = np.asarray(input)
    if x.ndim != 3:
        raise DimensionError(f"input must be (C, H, W), got {x.shape}")
    x = x.astype(model.dtype, copy=False)
    node = T.parameter(x[None])
    out = model.forward(node)
    c, r, q = coordinate
    _, C, H, W = out.value.shape
    if not (0 <= c < C and 0 <= r < H and 0 <= q < W):
        raise IndexError(f"coordinate {coordinate} outside output of shape {(C, H, W)}")
    seed = np.zeros_like(out.value)
    seed[0, c, r, q] = 1
    (g,) = T.backprop(out, [node], seed=seed)
    return g[0]
