"""Generator, discriminator and siamese encoder: layer schedules, builders, forward.

The discriminator and siamese networks share a strided-conv trunk that halves
the image until it is 4x4, doubling filters each layer up to ``8n``. The
generator is a U-Net whose decoder concatenates the mirrored encoder
activation onto each upsampled feature map.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .diffcore import ops
from .diffcore.tensor import ShapeError, Tensor, concat, flatten

ROLES = ("generator", "discriminator", "siamese")
GENERATOR_SCHEDULE = (1, 2, 4, 4, 4)
INIT_STD = 0.02


class ConfigError(ValueError):
    """Invalid architecture or run configuration."""


@dataclass(frozen=True)
class ArchitectureSpec:
    image_size: int = 32
    base_filters: int = 16
    latent_dim: int = 1000
    channels: int = 3
    filter_cap_multiple: int = 8

    def __post_init__(self):
        d = self.image_size
        if not isinstance(d, (int, np.integer)) or d < 16 or d & (d - 1):
            raise ConfigError(f"image_size must be a power of two >= 16, got {d!r}")
        for key in ("base_filters", "latent_dim", "channels", "filter_cap_multiple"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)!r}")

    @property
    def disc_depth(self) -> int:
        """Number of stride-2 layers that bring ``image_size`` down to 4."""
        return int(self.image_size).bit_length() - 1 - 2

    def to_dict(self):
        return {k: int(getattr(self, k)) for k in
                ("image_size", "base_filters", "latent_dim", "channels", "filter_cap_multiple")}


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv_s2 | conv_transpose_s2 | dense
    filters: int
    activation: str
    batch_norm: bool
    in_channels: int
    # encoder layer (1-based) whose activation is concatenated onto this layer's input
    skip_source: int | None = None

    @property
    def has_bias(self):
        # batch-norm shift already provides the per-channel offset
        return not self.batch_norm


def _trunk_filters(arch):
    n, cap = arch.base_filters, arch.filter_cap_multiple * arch.base_filters
    return [min(n * 2 ** i, cap) for i in range(arch.disc_depth)]


def layer_specs(arch: ArchitectureSpec, role: str) -> list[LayerSpec]:
    if role not in ROLES:
        raise ConfigError(f"unknown network role {role!r}")
    layers = []
    if role in ("discriminator", "siamese"):
        prev = arch.channels
        for i, f in enumerate(_trunk_filters(arch)):
            bn = not (role == "discriminator" and i == 0)
            layers.append(LayerSpec(f"conv{i + 1}", "conv_s2", f, "leaky_relu", bn, prev))
            prev = f
        flat = prev * 4 * 4
        if role == "discriminator":
            layers.append(LayerSpec("fc", "dense", 1, "sigmoid", False, flat))
        else:
            layers.append(LayerSpec("fc", "dense", arch.latent_dim, "linear", False, flat))
        return layers

    depth = arch.disc_depth
    mult = list(GENERATOR_SCHEDULE) + [GENERATOR_SCHEDULE[-1]] * max(0, depth - len(GENERATOR_SCHEDULE))
    enc = [arch.base_filters * m for m in mult[:depth]]
    prev = arch.channels
    for i, f in enumerate(enc):
        layers.append(LayerSpec(f"enc{i + 1}", "conv_s2", f, "leaky_relu", True, prev))
        prev = f
    for j in range(1, depth):
        mirror = depth - j  # encoder layer at this decoder layer's output resolution
        skip = None if j == 1 else mirror + 1
        in_ch = prev if j == 1 else prev + enc[mirror]
        layers.append(LayerSpec(f"dec{j}", "conv_transpose_s2", enc[mirror - 1], "leaky_relu", True, in_ch, skip))
        prev = enc[mirror - 1]
    in_ch = prev + enc[0] if depth > 1 else prev
    layers.append(LayerSpec("out", "conv_transpose_s2", arch.channels, "tanh", False, in_ch,
                            1 if depth > 1 else None))
    return layers


def _param_shapes(layer: LayerSpec):
    shapes = {}
    if layer.kind == "conv_s2":
        shapes["kernel"] = (layer.filters, layer.in_channels, 4, 4)
    elif layer.kind == "conv_transpose_s2":
        shapes["kernel"] = (layer.in_channels, layer.filters, 4, 4)
    else:
        shapes["weight"] = (layer.in_channels, layer.filters)
    if layer.has_bias:
        shapes["bias"] = (layer.filters,)
    if layer.batch_norm:
        shapes["gain"] = (layer.filters,)
        shapes["shift"] = (layer.filters,)
    return shapes


@dataclass(frozen=True)
class LayerPlan:
    name: str
    kind: str
    output_shape: tuple
    param_shapes: dict


def layer_shape_plan(arch: ArchitectureSpec, role: str) -> list[LayerPlan]:
    """Static trace of every layer's output shape (without batch axis) and parameters."""
    plan = []
    size = arch.image_size
    for layer in layer_specs(arch, role):
        if layer.kind == "conv_s2":
            size //= 2
            out = (layer.filters, size, size)
        elif layer.kind == "conv_transpose_s2":
            size *= 2
            out = (layer.filters, size, size)
        else:
            out = (layer.filters,)
        plan.append(LayerPlan(layer.name, layer.kind, out,
                              {f"{layer.name}/{k}": v for k, v in _param_shapes(layer).items()}))
    return plan


@dataclass
class NetworkParams:
    role: str
    arch: ArchitectureSpec
    layers: list
    params: dict  # "layer/role" -> ndarray, sorted by name
    buffers: dict = field(default_factory=dict)  # layer -> RunningStats
    tensors: dict = field(default_factory=dict)  # persistent grad-tracking leaves over ``params``

    def __post_init__(self):
        self.params = {k: self.params[k] for k in sorted(self.params)}
        self.refresh_tensors()

    def refresh_tensors(self):
        self.tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in self.params.items()}

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameter_count(self):
        return int(sum(p.size for p in self.params.values()))

    def copy(self):
        return NetworkParams(self.role, self.arch, list(self.layers),
                             {k: v.copy() for k, v in self.params.items()},
                             copy.deepcopy(self.buffers))

    def astype(self, dtype):
        buffers = {k: ops.RunningStats(b.mean.astype(dtype), b.var.astype(dtype)) for k, b in self.buffers.items()}
        return NetworkParams(self.role, self.arch, list(self.layers),
                             {k: v.astype(dtype) for k, v in self.params.items()}, buffers)


def _verify_against_plan(net: NetworkParams):
    expected = {}
    for lp in layer_shape_plan(net.arch, net.role):
        expected.update(lp.param_shapes)
    actual = {k: tuple(v.shape) for k, v in net.params.items()}
    if actual != expected:
        raise ShapeError(f"{net.role} parameters {actual} differ from plan {expected}")


def _build(arch, role, seed, dtype):
    rng = np.random.default_rng(seed)
    layers = layer_specs(arch, role)
    params, buffers = {}, {}
    for layer in layers:
        for key, shape in _param_shapes(layer).items():
            name = f"{layer.name}/{key}"
            if key in ("kernel", "weight"):
                params[name] = (rng.standard_normal(shape) * INIT_STD).astype(dtype)
            elif key == "gain":
                params[name] = np.ones(shape, dtype=dtype)
            else:
                params[name] = np.zeros(shape, dtype=dtype)
        if layer.batch_norm:
            buffers[layer.name] = ops.RunningStats.fresh(layer.filters, dtype)
    net = NetworkParams(role, arch, layers, params, buffers)
    _verify_against_plan(net)
    return net


def build_generator(arch: ArchitectureSpec, seed: int, dtype=np.float32) -> NetworkParams:
    return _build(arch, "generator", seed, dtype)


def build_discriminator(arch: ArchitectureSpec, seed: int, dtype=np.float32) -> NetworkParams:
    return _build(arch, "discriminator", seed, dtype)


def build_siamese(arch: ArchitectureSpec, seed: int, dtype=np.float32) -> NetworkParams:
    return _build(arch, "siamese", seed, dtype)


def build_network(arch, role, seed, dtype=np.float32):
    return _build(arch, role, seed, dtype)


def _apply(layer, x, p, net, mode, update_stats):
    if layer.kind == "conv_s2":
        y = ops.conv2d_s2(x, p[f"{layer.name}/kernel"], p.get(f"{layer.name}/bias"))
    elif layer.kind == "conv_transpose_s2":
        y = ops.conv_transpose2d_s2(x, p[f"{layer.name}/kernel"], p.get(f"{layer.name}/bias"))
    else:
        y = ops.dense(flatten(x) if x.ndim > 2 else x, p[f"{layer.name}/weight"], p.get(f"{layer.name}/bias"))
    if layer.batch_norm:
        y = ops.batch_norm(y, p[f"{layer.name}/gain"], p[f"{layer.name}/shift"], mode,
                           net.buffers[layer.name], update_stats=update_stats)
    return ops.ACTIVATIONS[layer.activation](y)


def forward(net: NetworkParams, batch, mode: str = "train", trainable: bool = False,
            update_stats: bool = True) -> Tensor:
    """Run ``net`` on an (N, C, d, d) batch.

    With ``trainable`` the persistent leaves in ``net.tensors`` are used, so
    ``backward(loss, net.tensors)`` yields parameter gradients. Otherwise
    parameters enter the graph as constants (gradients still reach ``batch``).
    """
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
    d, c = net.arch.image_size, net.arch.channels
    if x.ndim != 4 or x.shape[1:] != (c, d, d):
        raise ShapeError(f"{net.role}: expected batch of shape (N, {c}, {d}, {d}), got {x.shape}")
    p = net.tensors if trainable else {k: Tensor(v) for k, v in net.params.items()}
    activations = []
    for layer in net.layers:
        if layer.skip_source is not None:
            x = concat([x, activations[layer.skip_source - 1]], axis=1)
        x = _apply(layer, x, p, net, mode, update_stats)
        if layer.name.startswith("enc"):
            activations.append(x)
    return x


def trunk_features(net: NetworkParams, batch, mode="eval") -> Tensor:
    """Flattened activation of the last conv layer (discriminator/siamese trunk)."""
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
    p = {k: Tensor(v) for k, v in net.params.items()}
    for layer in net.layers:
        if layer.kind == "dense":
            break
        x = _apply(layer, x, p, net, mode, update_stats=False)
    return flatten(x)
