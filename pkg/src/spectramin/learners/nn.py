"""Minimal 1-D convolutional network with hand-written backward passes.

Architectures are plain data (``CnnArchitecture``) so they can be stored in
JSON configs and model files.  ``Network`` instantiates one or more
convolutional streams whose final feature maps are concatenated along the
channel axis and fed to a shared dense head; a single-stream network is the
common case, two streams give the fused Raman+VNIR model.

Tensors are laid out as ``(batch, channels, length)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArchError

# --------------------------------------------------------------------------
# architecture description


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: str = "valid"
    activation: str = "relu"


@dataclass(frozen=True)
class MaxPool:
    width: int


@dataclass(frozen=True)
class Dropout:
    rate: float


@dataclass(frozen=True)
class Parallel:
    """Branches run on the same input; outputs are concatenated by channel."""

    branches: tuple


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "relu"


LayerSpec = Conv | MaxPool | Dropout | Parallel | Dense


def layer_to_dict(layer: LayerSpec) -> dict:
    if isinstance(layer, Conv):
        return {"type": "conv", "out_channels": layer.out_channels, "kernel": layer.kernel,
                "stride": layer.stride, "padding": layer.padding, "activation": layer.activation}
    if isinstance(layer, MaxPool):
        return {"type": "pool", "width": layer.width}
    if isinstance(layer, Dropout):
        return {"type": "dropout", "rate": layer.rate}
    if isinstance(layer, Dense):
        return {"type": "dense", "units": layer.units, "activation": layer.activation}
    if isinstance(layer, Parallel):
        return {"type": "parallel",
                "branches": [[layer_to_dict(x) for x in br] for br in layer.branches]}
    raise ArchError(f"unknown layer {layer!r}")


def layer_from_dict(d: Mapping) -> LayerSpec:
    kind = d.get("type")
    if kind == "conv":
        return Conv(int(d["out_channels"]), int(d["kernel"]), int(d.get("stride", 1)),
                    d.get("padding", "valid"), d.get("activation", "relu"))
    if kind == "pool":
        return MaxPool(int(d["width"]))
    if kind == "dropout":
        return Dropout(float(d["rate"]))
    if kind == "dense":
        return Dense(int(d["units"]), d.get("activation", "relu"))
    if kind == "parallel":
        return Parallel(tuple(tuple(layer_from_dict(x) for x in br) for br in d["branches"]))
    raise ArchError(f"unknown layer type {kind!r}")


def _conv_out_len(length: int, layer: Conv) -> int:
    if layer.padding == "same":
        if layer.stride != 1:
            raise ArchError("'same' padding requires stride 1")
        return length
    if layer.padding != "valid":
        raise ArchError(f"unknown padding {layer.padding!r}")
    if length < layer.kernel:
        raise ArchError(f"kernel {layer.kernel} longer than input length {length}")
    return (length - layer.kernel) // layer.stride + 1


def _feature_shape(layers: Sequence[LayerSpec], shape: tuple[int, int]) -> tuple[int, int]:
    c, length = shape
    for layer in layers:
        if isinstance(layer, Conv):
            if layer.out_channels < 1 or layer.kernel < 1 or layer.stride < 1:
                raise ArchError(f"invalid conv {layer}")
            if layer.activation not in ("relu", "linear"):
                raise ArchError(f"unsupported conv activation {layer.activation!r}")
            c, length = layer.out_channels, _conv_out_len(length, layer)
        elif isinstance(layer, MaxPool):
            if layer.width < 1 or length // layer.width < 1:
                raise ArchError(f"pool width {layer.width} too large for length {length}")
            length //= layer.width
        elif isinstance(layer, Dropout):
            if not 0.0 <= layer.rate < 1.0:
                raise ArchError(f"dropout rate {layer.rate} outside [0, 1)")
        elif isinstance(layer, Parallel):
            if not layer.branches:
                raise ArchError("parallel block needs at least one branch")
            outs = [_feature_shape(br, (c, length)) for br in layer.branches]
            lengths = {o[1] for o in outs}
            if len(lengths) != 1:
                raise ArchError(f"parallel branches disagree on length: {sorted(lengths)}")
            c, length = sum(o[0] for o in outs), lengths.pop()
        elif isinstance(layer, Dense):
            raise ArchError("dense layers must follow all convolutional layers")
        else:
            raise ArchError(f"unknown layer {layer!r}")
    return c, length


@dataclass(frozen=True)
class CnnArchitecture:
    layers: tuple
    input_length: int
    in_channels: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def _head_start(self) -> int:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                return i
        return len(self.layers)

    @property
    def feature_layers(self) -> tuple:
        return self.layers[: self._head_start]

    @property
    def head_layers(self) -> tuple:
        return self.layers[self._head_start:]

    @property
    def n_classes(self) -> int:
        head = self.head_layers
        return head[-1].units if head else 0

    def n_conv(self) -> int:
        def count(layers):
            n = 0
            for layer in layers:
                if isinstance(layer, Conv):
                    n += 1
                elif isinstance(layer, Parallel):
                    n += max(count(br) for br in layer.branches)
            return n
        return count(self.feature_layers)

    def n_dense(self) -> int:
        return sum(isinstance(layer, Dense) for layer in self.head_layers)

    def feature_shape(self) -> tuple[int, int]:
        """(channels, length) at the end of the convolutional stack."""
        if self.input_length < 1 or self.in_channels < 1:
            raise ArchError("input dimensions must be positive")
        return _feature_shape(self.feature_layers, (self.in_channels, self.input_length))

    def check(self) -> None:
        """Raise ``ArchError`` unless the layer shapes chain into a softmax head."""
        self.feature_shape()
        head = self.head_layers
        if not head or not isinstance(head[-1], Dense) or head[-1].activation != "softmax":
            raise ArchError("architecture must end in a softmax dense layer")
        for layer in head:
            if isinstance(layer, Dense):
                if layer.units < 1:
                    raise ArchError("dense units must be positive")
                if layer.activation not in ("relu", "linear", "softmax"):
                    raise ArchError(f"unknown dense activation {layer.activation!r}")
                if layer.activation == "softmax" and layer is not head[-1]:
                    raise ArchError("softmax is only allowed on the last layer")
            elif isinstance(layer, Dropout):
                if not 0.0 <= layer.rate < 1.0:
                    raise ArchError(f"dropout rate {layer.rate} outside [0, 1)")
            else:
                raise ArchError(f"{type(layer).__name__} cannot follow a dense layer")

    def to_dict(self) -> dict:
        return {"name": self.name, "input_length": self.input_length,
                "in_channels": self.in_channels,
                "layers": [layer_to_dict(x) for x in self.layers]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CnnArchitecture":
        return cls(tuple(layer_from_dict(x) for x in d["layers"]), int(d["input_length"]),
                   int(d.get("in_channels", 1)), d.get("name", ""))


# --------------------------------------------------------------------------
# runtime modules


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class ConvModule:
    n_params = 2

    def __init__(self, spec: Conv, in_channels: int):
        self.spec = spec
        self.in_channels = in_channels
        k = spec.kernel
        self.pad = ((k - 1) // 2, k // 2) if spec.padding == "same" else (0, 0)

    def init(self, rng, dtype) -> list[np.ndarray]:
        s = self.spec
        fan_in = self.in_channels * s.kernel
        return [_he(rng, (s.out_channels, self.in_channels, s.kernel), fan_in, dtype),
                np.zeros(s.out_channels, dtype=dtype)]

    def forward(self, x, params, train, rng):
        w, b = params
        s = self.spec
        if self.pad != (0, 0):
            x = np.pad(x, ((0, 0), (0, 0), self.pad))
        n, c, length = x.shape
        win = sliding_window_view(x, s.kernel, axis=2)[:, :, :: s.stride, :]
        l_out = win.shape[2]
        cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n * l_out, c * s.kernel)
        z = cols @ w.reshape(s.out_channels, -1).T + b
        out = z.reshape(n, l_out, s.out_channels).transpose(0, 2, 1)
        if s.activation == "relu":
            out = np.maximum(out, 0)
        return np.ascontiguousarray(out), (cols, out, x.shape, l_out)

    def backward(self, dout, cache, params):
        w, _ = params
        s = self.spec
        cols, out, xshape, l_out = cache
        if s.activation == "relu":
            dout = dout * (out > 0)
        n, c, length = xshape
        dz = dout.transpose(0, 2, 1).reshape(n * l_out, s.out_channels)
        dw = (dz.T @ cols).reshape(w.shape)
        db = dz.sum(axis=0)
        dcols = (dz @ w.reshape(s.out_channels, -1)).reshape(n, l_out, c, s.kernel)
        dx = np.zeros(xshape, dtype=dout.dtype)
        span = s.stride * (l_out - 1) + 1
        for j in range(s.kernel):
            dx[:, :, j: j + span: s.stride] += dcols[:, :, :, j].transpose(0, 2, 1)
        if self.pad != (0, 0):
            dx = dx[:, :, self.pad[0]: length - self.pad[1]]
        return dx, [dw, db]


class PoolModule:
    n_params = 0

    def __init__(self, spec: MaxPool):
        self.width = spec.width

    def init(self, rng, dtype):
        return []

    def forward(self, x, params, train, rng):
        n, c, length = x.shape
        l_out = length // self.width
        xr = x[:, :, : l_out * self.width].reshape(n, c, l_out, self.width)
        idx = np.argmax(xr, axis=3)
        out = np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]
        return out, (idx, x.shape)

    def backward(self, dout, cache, params):
        idx, xshape = cache
        n, c, length = xshape
        l_out = dout.shape[2]
        dxr = np.zeros((n, c, l_out, self.width), dtype=dout.dtype)
        np.put_along_axis(dxr, idx[..., None], dout[..., None], axis=3)
        dx = np.zeros(xshape, dtype=dout.dtype)
        dx[:, :, : l_out * self.width] = dxr.reshape(n, c, l_out * self.width)
        return dx, []


class DropoutModule:
    n_params = 0

    def __init__(self, spec: Dropout):
        self.rate = spec.rate

    def init(self, rng, dtype):
        return []

    def forward(self, x, params, train, rng):
        if not train or self.rate == 0.0 or rng is None:
            return x, None
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * mask, mask

    def backward(self, dout, cache, params):
        return (dout if cache is None else dout * cache), []


class DenseModule:
    n_params = 2

    def __init__(self, spec: Dense, in_features: int):
        self.spec = spec
        self.in_features = in_features

    def init(self, rng, dtype):
        u = self.spec.units
        if self.spec.activation == "relu":
            w = _he(rng, (self.in_features, u), self.in_features, dtype)
        else:
            limit = np.sqrt(6.0 / (self.in_features + u))
            w = rng.uniform(-limit, limit, (self.in_features, u)).astype(dtype)
        return [w, np.zeros(u, dtype=dtype)]

    def forward(self, x, params, train, rng):
        w, b = params
        xshape = x.shape
        x2 = x.reshape(xshape[0], -1)
        out = x2 @ w + b
        if self.spec.activation == "relu":
            out = np.maximum(out, 0)
        return out, (x2, out, xshape)

    def backward(self, dout, cache, params):
        w, _ = params
        x2, out, xshape = cache
        if self.spec.activation == "relu":
            dout = dout * (out > 0)
        dw = x2.T @ dout
        db = dout.sum(axis=0)
        dx = (dout @ w.T).reshape(xshape)
        return dx, [dw, db]


class Sequential:
    """A chain of modules; parameters are held externally as one flat list."""

    def __init__(self, modules: list):
        self.modules = modules
        self.n_params = [m.n_params for m in modules]

    def init(self, rng, dtype) -> list[np.ndarray]:
        out = []
        for m in self.modules:
            out.extend(m.init(rng, dtype))
        return out

    def _split(self, params):
        i = 0
        for m, k in zip(self.modules, self.n_params):
            yield m, params[i: i + k]
            i += k

    def forward(self, x, params, train, rng):
        caches = []
        for m, p in self._split(params):
            x, cache = m.forward(x, p, train, rng)
            caches.append(cache)
        return x, caches

    def backward(self, dout, caches, params):
        split = list(self._split(params))
        grads: list = []
        for (m, p), cache in zip(reversed(split), reversed(caches)):
            dout, g = m.backward(dout, cache, p)
            grads = g + grads
        return dout, grads


class ParallelModule:
    def __init__(self, branches: list[Sequential], channels: list[int]):
        self.branches = branches
        self.channels = channels

    def init(self, rng, dtype):
        out = []
        for br in self.branches:
            out.extend(br.init(rng, dtype))
        return out

    @property
    def n_params(self) -> int:
        return sum(sum(br.n_params) for br in self.branches)

    def _split(self, params):
        i = 0
        for br in self.branches:
            k = sum(br.n_params)
            yield br, params[i: i + k]
            i += k

    def forward(self, x, params, train, rng):
        outs, caches = [], []
        for br, p in self._split(params):
            o, cache = br.forward(x, p, train, rng)
            outs.append(o)
            caches.append(cache)
        return np.concatenate(outs, axis=1), caches

    def backward(self, dout, caches, params):
        dx = None
        grads: list = []
        bounds = np.cumsum([0] + self.channels)
        for n, ((br, p), cache) in enumerate(zip(self._split(params), caches)):
            d, g = br.backward(dout[:, bounds[n]: bounds[n + 1]], cache, p)
            dx = d if dx is None else dx + d
            grads.extend(g)
        return dx, grads


def _build_modules(layers: Sequence[LayerSpec], shape: tuple[int, int]) -> tuple[Sequential, tuple[int, int]]:
    modules = []
    c, length = shape
    for layer in layers:
        if isinstance(layer, Conv):
            modules.append(ConvModule(layer, c))
        elif isinstance(layer, MaxPool):
            modules.append(PoolModule(layer))
        elif isinstance(layer, Dropout):
            modules.append(DropoutModule(layer))
        elif isinstance(layer, Parallel):
            branches, channels = [], []
            for br in layer.branches:
                seq, (bc, _) = _build_modules(br, (c, length))
                branches.append(seq)
                channels.append(bc)
            modules.append(ParallelModule(branches, channels))
        c, length = _feature_shape([layer], (c, length))
    return Sequential(modules), (c, length)


def _build_head(layers: Sequence[LayerSpec], in_features: int) -> Sequential:
    modules = []
    f = in_features
    for layer in layers:
        if isinstance(layer, Dense):
            modules.append(DenseModule(layer, f))
            f = layer.units
        elif isinstance(layer, Dropout):
            modules.append(DropoutModule(layer))
    return Sequential(modules)


class Network:
    """Convolutional streams -> channel concatenation -> dense head -> logits.

    ``streams[0]`` consumes ``inputs[0]`` and so on.  The head architecture is
    taken from ``head_layers``.  All streams must end at the same length.
    """

    def __init__(self, stream_archs: Sequence[CnnArchitecture], head_layers: Sequence[LayerSpec]):
        self.stream_archs = tuple(stream_archs)
        self.streams = []
        shapes = []
        for arch in self.stream_archs:
            seq, shape = _build_modules(arch.feature_layers, (arch.in_channels, arch.input_length))
            self.streams.append(seq)
            shapes.append(shape)
        lengths = {s[1] for s in shapes}
        if len(lengths) != 1:
            raise ArchError(f"streams end at different lengths: {[s[1] for s in shapes]}")
        self.feature_shape = (sum(s[0] for s in shapes), lengths.pop())
        self.stream_channels = [s[0] for s in shapes]
        self.head = _build_head(head_layers, self.feature_shape[0] * self.feature_shape[1])
        self.head_layers = tuple(head_layers)

    @classmethod
    def single(cls, arch: CnnArchitecture) -> "Network":
        arch.check()
        return cls([arch], arch.head_layers)

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> list[np.ndarray]:
        params = []
        for s in self.streams:
            params.extend(s.init(rng, dtype))
        params.extend(self.head.init(rng, dtype))
        return params

    def _split(self, params):
        i = 0
        parts = []
        for s in self.streams:
            k = sum(s.n_params)
            parts.append(params[i: i + k])
            i += k
        parts.append(params[i:])
        return parts

    def forward(self, inputs: Sequence[np.ndarray], params, train: bool = False,
                rng: np.random.Generator | None = None):
        parts = self._split(params)
        feats, caches = [], []
        for s, x, p in zip(self.streams, inputs, parts):
            if x.ndim == 2:
                x = x[:, None, :]
            f, cache = s.forward(x, p, train, rng)
            feats.append(f)
            caches.append(cache)
        fused = feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1)
        logits, head_cache = self.head.forward(fused, parts[-1], train, rng)
        return logits, (caches, head_cache, fused.shape)

    def backward(self, dlogits, cache, params) -> list[np.ndarray]:
        caches, head_cache, fshape = cache
        parts = self._split(params)
        dfused, head_grads = self.head.backward(dlogits, head_cache, parts[-1])
        dfused = dfused.reshape(fshape)
        bounds = np.cumsum([0] + self.stream_channels)
        grads: list = []
        for n, (s, c, p) in enumerate(zip(self.streams, caches, parts)):
            _, g = s.backward(dfused[:, bounds[n]: bounds[n + 1]], c, p)
            grads.extend(g)
        return grads + head_grads


# --------------------------------------------------------------------------
# output transforms and losses (all take logits)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def softmax_mae_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error between softmax(logits) and target fractions."""
    p = softmax(logits)
    diff = p - targets
    loss = np.abs(diff).mean()
    g = np.sign(diff) / diff.size
    # softmax vector-Jacobian product: p * (g - <g, p>)
    grad = p * (g - (g * p).sum(axis=1, keepdims=True))
    return float(loss), grad
