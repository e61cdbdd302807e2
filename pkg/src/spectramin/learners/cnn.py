"""CNN classifiers: training loop, weight averaging, ensembles, two-stream fusion."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from ..datasets import LabeledDataset, PairedSample
from ..errors import ArchError, DivergedError, ValidationError
from ..spectra import GridSpec, Spectrum, SpectrumKind
from .base import TrainedModel, param_arrays, read_params, register
from .nn import (
    CnnArchitecture,
    Conv,
    Dense,
    Dropout,
    MaxPool,
    Network,
    Parallel,
    cross_entropy_loss,
    softmax,
)
from .prediction import Prediction, l1_normalize


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # or "sgd" (with momentum)
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    dropout_rate: float | None = None  # overrides the architecture's rates when set
    ema_decay: float = 0.0
    # TF-style warm-up: effective decay min(d, (1 + n) / (10 + n)) at update n
    ema_warmup: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValidationError("ema_decay must lie in [0, 1)")
        if self.dropout_rate is not None and not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


# --------------------------------------------------------------------------
# weight averaging and optimizers


def ema_update(shadow, weights, decay: float):
    """One step of ``shadow <- decay * shadow + (1 - decay) * weights``."""
    return decay * shadow + (1.0 - decay) * weights


class ExponentialMovingAverage:
    """Shadow copy of a parameter list, updated after every optimizer step."""

    def __init__(self, params: Sequence[np.ndarray], decay: float, warmup: bool = False):
        self.decay = decay
        self.warmup = warmup
        self.num_updates = 0
        self.shadow = [np.array(p, copy=True) for p in params]

    def effective_decay(self) -> float:
        if self.warmup:
            return min(self.decay, (1.0 + self.num_updates) / (10.0 + self.num_updates))
        return self.decay

    def update(self, params: Sequence[np.ndarray]) -> None:
        d = self.effective_decay()
        for s, p in zip(self.shadow, params):
            s *= d
            s += (1.0 - d) * p
        self.num_updates += 1


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


class SgdMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        for p, g, v in zip(params, grads, self.vel):
            v *= self.momentum
            v -= self.lr * g
            p += v.astype(p.dtype)


def _make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2)
    return SgdMomentum(params, cfg.learning_rate, cfg.momentum)


@dataclass
class FitResult:
    params: list
    shadow: list | None
    losses: list = field(default_factory=list)


LossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def fit_network(net: Network, inputs: Sequence[np.ndarray], targets: np.ndarray,
                cfg: TrainConfig, loss_fn: LossFn = cross_entropy_loss,
                dtype=np.float32, init_params: list | None = None) -> FitResult:
    """Minibatch training; returns final weights, EMA shadow and per-epoch losses."""
    init_rng, shuffle_rng, dropout_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3)
    )
    params = init_params if init_params is not None else net.init_params(init_rng, dtype)
    inputs = [np.asarray(x, dtype=dtype) for x in inputs]
    n = inputs[0].shape[0]
    opt = _make_optimizer(cfg, params)
    ema = ExponentialMovingAverage(params, cfg.ema_decay, cfg.ema_warmup) if cfg.ema_decay > 0 else None
    losses = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start: start + cfg.batch_size]
            logits, cache = net.forward([x[batch] for x in inputs], params, True, dropout_rng)
            loss, dlogits = loss_fn(logits.astype(float), targets[batch])
            if not np.isfinite(loss):
                raise DivergedError(f"loss became {loss} in epoch {epoch}")
            grads = net.backward(dlogits.astype(dtype), cache, params)
            opt.step(params, grads)
            if ema is not None:
                ema.update(params)
            total += loss * batch.size
        losses.append(total / n)
    return FitResult(params, ema.shadow if ema is not None else None, losses)


def _override_dropout(arch: CnnArchitecture, rate: float | None) -> CnnArchitecture:
    if rate is None:
        return arch

    def swap(layers):
        out = []
        for layer in layers:
            if isinstance(layer, Dropout):
                out.append(Dropout(rate))
            elif isinstance(layer, Parallel):
                out.append(Parallel(tuple(tuple(swap(br)) for br in layer.branches)))
            else:
                out.append(layer)
        return out

    return replace(arch, layers=tuple(swap(arch.layers)))


def forward_proba(net: Network, params, inputs: Sequence[np.ndarray], chunk: int = 64) -> np.ndarray:
    n = inputs[0].shape[0]
    out = []
    for start in range(0, n, chunk):
        logits, _ = net.forward([np.asarray(x[start: start + chunk], dtype=params[0].dtype)
                                 for x in inputs], params, False, None)
        out.append(softmax(logits.astype(float)))
    return np.concatenate(out) if out else np.zeros((0, 0))


# --------------------------------------------------------------------------
# single-stream CNN


@register
@dataclass(frozen=True)
class CnnModel(TrainedModel):
    model_type = "cnn"

    arch: CnnArchitecture
    params: tuple
    shadow: tuple | None
    classes: tuple
    grid: GridSpec | None = None
    kind: SpectrumKind | None = None
    ema_decay: float = 0.0
    use_ema: bool = True

    def network(self) -> Network:
        return Network.single(self.arch)

    def weights(self, use_ema: bool | None = None) -> list:
        use = self.use_ema if use_ema is None else use_ema
        if use and self.shadow is not None and self.ema_decay > 0:
            return list(self.shadow)
        return list(self.params)

    def predict_proba(self, x: np.ndarray, use_ema: bool | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x))
        if x.shape[1] != self.arch.input_length:
            raise ArchError(f"input length {x.shape[1]} != architecture input {self.arch.input_length}")
        return forward_proba(self.network(), self.weights(use_ema), [x])

    def predict(self, x, use_ema: bool | None = None) -> Prediction:
        if isinstance(x, Spectrum):
            x = x.values
        return Prediction(self.predict_proba(np.asarray(x)[None, :], use_ema)[0], self.classes)

    def state(self):
        meta = {**self._contract(), "arch": self.arch.to_dict(), "n_params": len(self.params),
                "has_shadow": self.shadow is not None, "ema_decay": self.ema_decay,
                "use_ema": self.use_ema}
        arrays = param_arrays(self.params, "w")
        if self.shadow is not None:
            arrays.update(param_arrays(self.shadow, "s"))
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        n = int(meta["n_params"])
        shadow = tuple(read_params(arrays, "s", n)) if meta["has_shadow"] else None
        return cls(CnnArchitecture.from_dict(meta["arch"]), tuple(read_params(arrays, "w", n)),
                   shadow, ema_decay=float(meta["ema_decay"]), use_ema=bool(meta["use_ema"]),
                   **cls._read_contract(meta))


def train_cnn(train: LabeledDataset, arch: CnnArchitecture, cfg: TrainConfig) -> CnnModel:
    arch = _override_dropout(arch, cfg.dropout_rate)
    arch.check()
    if arch.input_length != train.grid.n_points:
        raise ArchError(f"architecture expects {arch.input_length} inputs, "
                        f"dataset grid has {train.grid.n_points}")
    if arch.n_classes != train.n_classes:
        raise ArchError(f"architecture has {arch.n_classes} outputs for {train.n_classes} classes")
    if len(train) == 0:
        raise ValidationError("training set is empty")
    net = Network.single(arch)
    fit = fit_network(net, [train.values], train.labels, cfg)
    return CnnModel(arch, tuple(fit.params), tuple(fit.shadow) if fit.shadow else None,
                    train.species, train.grid, train.kind, cfg.ema_decay)


def predict_cnn(model: CnnModel, spectrum, use_ema: bool = True) -> Prediction:
    return model.predict(spectrum, use_ema)


# --------------------------------------------------------------------------
# architectures


def _arch(name, layers, n_classes, input_length) -> CnnArchitecture:
    arch = CnnArchitecture(tuple(layers) + (Dense(n_classes, "softmax"),), input_length, name=name)
    arch.check()
    return arch


def liu_baseline(n_classes: int, input_length: int = 1715) -> CnnArchitecture:
    """Three conv/pool stages, a 512-unit dense layer with dropout, softmax."""
    return _arch("liu-baseline", [
        Conv(16, 21), MaxPool(2), Conv(32, 11), MaxPool(2), Conv(64, 5), MaxPool(2),
        Dense(512), Dropout(0.5),
    ], n_classes, input_length)


def simple_cnn(n_classes: int, input_length: int = 1715) -> CnnArchitecture:
    """Four conv layers and two dense layers, used for all fusion experiments."""
    return _arch("simple-4conv-2dense", [
        Conv(8, 21), MaxPool(4), Conv(16, 11), MaxPool(2), Conv(32, 7), MaxPool(2),
        Conv(32, 5), MaxPool(2), Dense(128), Dropout(0.5),
    ], n_classes, input_length)


def _featex_block(squeeze: int, width: int, kernels: tuple[int, int]) -> Parallel:
    return Parallel(tuple(
        (Conv(squeeze, 1), Conv(width, k, padding="same")) for k in kernels
    ))


def build_ensemble6(n_classes: int, input_length: int = 1715) -> list[CnnArchitecture]:
    """Six architectures: two conv-pool stacks, two parallel-block nets, two VGG-lite nets."""
    if n_classes < 1 or input_length < 1:
        raise ArchError("n_classes and input_length must be positive")
    return [
        _arch("liu-a", [
            Conv(8, 21), MaxPool(4), Conv(16, 11), MaxPool(4), Conv(32, 5), MaxPool(2),
            Dense(128), Dropout(0.5),
        ], n_classes, input_length),
        _arch("liu-b", [
            Conv(16, 15), MaxPool(4), Conv(24, 9), MaxPool(4), Conv(48, 5), MaxPool(2),
            Dense(128), Dropout(0.5),
        ], n_classes, input_length),
        _arch("featex-a", [
            Conv(8, 15), MaxPool(4), _featex_block(8, 12, (9, 5)), MaxPool(4),
            _featex_block(12, 16, (7, 3)), MaxPool(2), Dense(128), Dropout(0.5),
        ], n_classes, input_length),
        _arch("featex-b", [
            Conv(12, 11), MaxPool(4), _featex_block(8, 16, (11, 3)), MaxPool(4),
            _featex_block(16, 16, (5, 1)), MaxPool(2), Dense(96), Dropout(0.5),
        ], n_classes, input_length),
        _arch("vgg-lite-2fc", [
            Conv(8, 9), Conv(8, 9), MaxPool(4), Conv(16, 7), Conv(16, 7), MaxPool(4),
            Conv(32, 5), Conv(32, 5), MaxPool(2), Dense(128), Dropout(0.5),
        ], n_classes, input_length),
        _arch("vgg-lite-3fc", [
            Conv(8, 7), Conv(8, 7), MaxPool(4), Conv(16, 5), Conv(16, 5), MaxPool(4),
            Conv(24, 3), Conv(24, 3), MaxPool(2), Dense(128), Dropout(0.5), Dense(64),
        ], n_classes, input_length),
    ]


ARCHITECTURES = {
    "liu-baseline": liu_baseline,
    "simple": simple_cnn,
}


# --------------------------------------------------------------------------
# ensembles


@register
@dataclass(frozen=True)
class EnsembleModel(TrainedModel):
    """Averages the members' predictions."""

    model_type = "ensemble"

    members: tuple
    classes: tuple
    grid: GridSpec | None = None
    kind: SpectrumKind | None = None

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        total = sum(m.predict_proba(x) for m in self.members)
        return l1_normalize(total / len(self.members))

    def state(self):
        meta = {**self._contract(), "members": []}
        arrays = {}
        for i, m in enumerate(self.members):
            m_meta, m_arrays = m.state()
            meta["members"].append({"model_type": m.model_type, "meta": m_meta})
            arrays.update({f"m{i}.{k}": v for k, v in m_arrays.items()})
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        from .base import MODEL_TYPES, unprefixed

        members = tuple(
            MODEL_TYPES[m["model_type"]].from_state(m["meta"], unprefixed(arrays, f"m{i}."))
            for i, m in enumerate(meta["members"])
        )
        return cls(members, **cls._read_contract(meta))


def member_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def train_ensemble6(train: LabeledDataset, cfg: TrainConfig) -> EnsembleModel:
    archs = build_ensemble6(train.n_classes, train.grid.n_points)
    members = tuple(
        train_cnn(train, arch, replace(cfg, seed=member_seed(cfg.seed, i)))
        for i, arch in enumerate(archs)
    )
    return EnsembleModel(members, train.species, train.grid, train.kind)


def predict_ensemble(models: Sequence[TrainedModel], spectrum) -> Prediction:
    preds = [m.predict(spectrum) for m in models]
    classes = preds[0].classes
    if any(p.classes != classes for p in preds):
        raise ValidationError("ensemble members disagree on the class list")
    return Prediction(l1_normalize(np.mean([p.scores for p in preds], axis=0)), classes)


# --------------------------------------------------------------------------
# two-stream CNN


def two_stream_network(arch_a: CnnArchitecture, arch_b: CnnArchitecture) -> Network:
    """Conv stacks of both architectures, concatenated by channel, then ``arch_a``'s head."""
    arch_a.check()
    ca, la = arch_a.feature_shape()
    cb, lb = arch_b.feature_shape()
    if la != lb:
        raise ArchError(f"stream feature lengths differ: {la} vs {lb}")
    return Network([arch_a, arch_b], arch_a.head_layers)


@register
@dataclass(frozen=True)
class TwoStreamModel(TrainedModel):
    model_type = "two_stream"

    arch_a: CnnArchitecture
    arch_b: CnnArchitecture
    params: tuple
    shadow: tuple | None
    classes: tuple
    grid: GridSpec | None = None
    kind: SpectrumKind | None = None
    grid_b: GridSpec | None = None
    kind_b: SpectrumKind | None = None
    ema_decay: float = 0.0

    def network(self) -> Network:
        return two_stream_network(self.arch_a, self.arch_b)

    def predict_proba_pairs(self, xa: np.ndarray, xb: np.ndarray, use_ema: bool = True) -> np.ndarray:
        w = list(self.shadow) if use_ema and self.shadow is not None and self.ema_decay > 0 else list(self.params)
        return forward_proba(self.network(), w, [np.atleast_2d(xa), np.atleast_2d(xb)])

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        # x holds the two inputs side by side
        x = np.atleast_2d(x)
        la = self.arch_a.input_length
        return self.predict_proba_pairs(x[:, :la], x[:, la:])

    def predict_pair(self, pair: PairedSample) -> Prediction:
        p = self.predict_proba_pairs(pair.spectrum_a.values[None], pair.spectrum_b.values[None])
        return Prediction(p[0], self.classes)

    def state(self):
        meta = {**self._contract(), "arch_a": self.arch_a.to_dict(), "arch_b": self.arch_b.to_dict(),
                "n_params": len(self.params), "has_shadow": self.shadow is not None,
                "ema_decay": self.ema_decay,
                "grid_b": self.grid_b.to_dict() if self.grid_b else None,
                "kind_b": self.kind_b.value if self.kind_b else None}
        arrays = param_arrays(self.params, "w")
        if self.shadow is not None:
            arrays.update(param_arrays(self.shadow, "s"))
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        n = int(meta["n_params"])
        shadow = tuple(read_params(arrays, "s", n)) if meta["has_shadow"] else None
        return cls(CnnArchitecture.from_dict(meta["arch_a"]), CnnArchitecture.from_dict(meta["arch_b"]),
                   tuple(read_params(arrays, "w", n)), shadow,
                   grid_b=GridSpec.from_dict(meta["grid_b"]) if meta.get("grid_b") else None,
                   kind_b=SpectrumKind.parse(meta["kind_b"]) if meta.get("kind_b") else None,
                   ema_decay=float(meta["ema_decay"]), **cls._read_contract(meta))


def _pair_classes(pairs: Sequence[PairedSample]) -> tuple:
    n = max(p.species_id for p in pairs) + 1
    names = [f"class-{i}" for i in range(n)]
    for p in pairs:
        if p.species:
            names[p.species_id] = p.species
    return tuple(names)


def train_two_stream_cnn(pairs: Sequence[PairedSample], arch_a: CnnArchitecture,
                         arch_b: CnnArchitecture, cfg: TrainConfig,
                         classes: Sequence[str] | None = None) -> TwoStreamModel:
    if not pairs:
        raise ValidationError("no training pairs")
    arch_a = _override_dropout(arch_a, cfg.dropout_rate)
    arch_b = _override_dropout(arch_b, cfg.dropout_rate)
    net = two_stream_network(arch_a, arch_b)
    classes = tuple(classes) if classes is not None else _pair_classes(pairs)
    if arch_a.n_classes != len(classes):
        raise ArchError(f"head has {arch_a.n_classes} outputs for {len(classes)} classes")
    xa = np.stack([p.spectrum_a.values for p in pairs])
    xb = np.stack([p.spectrum_b.values for p in pairs])
    if xa.shape[1] != arch_a.input_length or xb.shape[1] != arch_b.input_length:
        raise ArchError("pair spectra do not match the stream input lengths")
    y = np.array([p.species_id for p in pairs])
    fit = fit_network(net, [xa, xb], y, cfg)
    first = pairs[0]
    return TwoStreamModel(arch_a, arch_b, tuple(fit.params),
                          tuple(fit.shadow) if fit.shadow else None, classes,
                          first.spectrum_a.grid, first.spectrum_a.kind,
                          first.spectrum_b.grid, first.spectrum_b.kind, cfg.ema_decay)


def predict_two_stream(model: TwoStreamModel, pair: PairedSample) -> Prediction:
    return model.predict_pair(pair)
