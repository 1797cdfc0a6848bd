"""IMN, U-Net and CNN-7 built on the tensor engine.

IMN inverts U-Net's resolution profile: its encoder stages up-sample with
2x2/2 transposed convolutions, the bottleneck runs at ``2**depth`` times the
input resolution, and the decoder comes back down with 2x2 max pooling,
merging same-resolution encoder features through copy-and-crop skips.
All 3x3 convolutions use zero padding 1, so every architecture maps an
H x W input to 2 x H x W class logits.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .rng import SplitMix64
from .tensor import (
    Adam,
    BatchNormState,
    Parameter,
    Tensor,
    batch_norm2d,
    concat_crop,
    conv2d,
    max_pool2d,
    no_grad,
    relu,
    softmax,
    softmax_cross_entropy,
    transposed_conv2d,
)

__all__ = [
    "KINDS",
    "ArchitectureConfig",
    "TrainConfig",
    "Network",
    "NumericError",
    "build",
    "build_imn",
    "build_unet",
    "build_cnn7",
    "forward",
    "train_step",
    "predict_logits",
    "predict_proba",
    "predict_mask",
    "count_parameters",
]

KINDS = ("imn", "unet", "cnn7")


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class ArchitectureConfig:
    kind: str = "imn"
    depth: int = 2
    width: int = 256
    in_channels: int = 1
    num_classes: int = 2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown architecture {self.kind!r}; expected one of {KINDS}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.num_classes != 2:
            raise ValueError("only 2-class (background/vessel) segmentation is supported")

    @property
    def multiple(self) -> int:
        """Input H and W must be divisible by this."""
        return 1 if self.kind == "cnn7" else 2 ** self.depth

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 1
    weight_decay: float = 0.0
    max_steps: int = 1000
    crop: int = 76
    seed: int = 0
    eval_every: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay != 0:
            raise ValueError("weight decay is not supported (training uses plain Adam)")
        if self.max_steps < 0 or self.crop < 1 or self.eval_every < 0:
            raise ValueError("max_steps, crop and eval_every must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------

class ConvBNReLU:
    def __init__(self, net: "Network", name: str, cin: int, cout: int):
        self.weight = net.add_param(f"{name}.conv.weight", (cout, cin, 3, 3), fan_in=cin * 9)
        self.bias = net.add_param(f"{name}.conv.bias", (cout,))
        self.gamma = net.add_param(f"{name}.bn.gamma", (cout,), fill=1.0)
        self.beta = net.add_param(f"{name}.bn.beta", (cout,))
        self.bn = net.add_bn(f"{name}.bn", cout)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        h = conv2d(x, self.weight.tensor, self.bias.tensor)
        h = batch_norm2d(h, self.gamma.tensor, self.beta.tensor, self.bn, train=train)
        return relu(h)


class Conv:
    def __init__(self, net: "Network", name: str, cin: int, cout: int):
        self.weight = net.add_param(f"{name}.weight", (cout, cin, 3, 3), fan_in=cin * 9)
        self.bias = net.add_param(f"{name}.bias", (cout,))

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return conv2d(x, self.weight.tensor, self.bias.tensor)


class UpConv:
    def __init__(self, net: "Network", name: str, cin: int, cout: int):
        # each output pixel sees cin inputs through one kernel tap
        self.weight = net.add_param(f"{name}.weight", (cin, cout, 2, 2), fan_in=cin)
        self.bias = net.add_param(f"{name}.bias", (cout,))

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return transposed_conv2d(x, self.weight.tensor, self.bias.tensor)


class Pool:
    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return max_pool2d(x)


class Network:
    """Realised layer graph with named parameters and batch-norm states.

    ``encoder``, ``bottleneck`` and ``decoder`` hold per-stage layer lists;
    the decoder stage ``k`` concatenates the output of encoder stage ``k``
    (before resampling) with its resampled input.
    """

    def __init__(self, config: ArchitectureConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        self.bn_states: dict[str, BatchNormState] = {}
        self._rng = SplitMix64(config.seed)
        self.encoder: list[tuple[list, object]] = []
        self.bottleneck: list = []
        self.decoder: list[tuple[object, list]] = []
        self.head: Conv | None = None

    # -- construction -----------------------------------------------------
    def add_param(self, name: str, shape, fan_in: int | None = None, fill: float = 0.0) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        size = int(np.prod(shape))
        if fan_in is None:
            values = np.full(shape, fill, dtype=self.dtype)
        else:
            std = math.sqrt(2.0 / fan_in)
            values = (self._rng.spawn(len(self.params)).normal(size) * std).reshape(shape).astype(self.dtype)
        p = Parameter(name, Tensor(values, requires_grad=True))
        self.params[name] = p
        return p

    def add_bn(self, name: str, channels: int) -> BatchNormState:
        st = BatchNormState(
            channels,
            momentum=self.config.bn_momentum,
            eps=self.config.bn_eps,
            running_mean=np.zeros(channels, dtype=self.dtype),
            running_var=np.ones(channels, dtype=self.dtype),
        )
        self.bn_states[name] = st
        return st

    # -- execution --------------------------------------------------------
    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def check_input(self, dims) -> None:
        if len(dims) != 4 or dims[1] != self.config.in_channels:
            raise ValueError(f"expected N x {self.config.in_channels} x H x W input, got {tuple(dims)}")
        m = self.config.multiple
        if dims[2] % m or dims[3] % m:
            raise ValueError(f"input {dims[2]}x{dims[3]} is not divisible by 2**depth = {m}")

    def forward(self, x, train: bool = False, trace: list | None = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        self.check_input(x.dims)

        def note(tag, t):
            if trace is not None:
                trace.append((tag, t.dims[2], t.dims[3]))

        h = x
        skips = []
        for k, (blocks, resample) in enumerate(self.encoder):
            for layer in blocks:
                h = layer(h, train)
            note(f"enc{k}", h)
            skips.append(h)
            h = resample(h, train)
        for layer in self.bottleneck:
            h = layer(h, train)
        note("bottleneck", h)
        for k in reversed(range(len(self.decoder))):
            resample, blocks = self.decoder[k]
            h = resample(h, train)
            h = concat_crop(skips[k], h)
            for layer in blocks:
                h = layer(h, train)
            note(f"dec{k}", h)
        return self.head(h, train)

    __call__ = forward

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every stored array by canonical record name (checkpoint order)."""
        out: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            out[f"param/{name}"] = p.tensor.values
        for name, st in self.bn_states.items():
            out[f"bn_mean/{name}"] = st.running_mean
            out[f"bn_var/{name}"] = st.running_var
            out[f"bn_count/{name}"] = np.array([st.num_batches], dtype=np.float32)
        for name, p in self.params.items():
            out[f"adam_m/{name}"] = p.adam_m
            out[f"adam_v/{name}"] = p.adam_v
            out[f"adam_t/{name}"] = np.array([p.step_count], dtype=np.float32)
        return out


def count_parameters(net: Network) -> int:
    return sum(p.tensor.values.size for p in net.params.values())


# --------------------------------------------------------------------------
# Builders
# --------------------------------------------------------------------------

def _double_block(net: Network, name: str, cin: int, width: int) -> list:
    return [ConvBNReLU(net, f"{name}.0", cin, width), ConvBNReLU(net, f"{name}.1", width, width)]


def _build_resampling(cfg: ArchitectureConfig, up_first: bool, dtype) -> Network:
    net = Network(cfg, dtype)
    w, d = cfg.width, cfg.depth
    cin = cfg.in_channels
    for k in range(d):
        blocks = _double_block(net, f"enc{k}", cin, w)
        resample = UpConv(net, f"enc{k}.up", w, w) if up_first else Pool()
        net.encoder.append((blocks, resample))
        cin = w
    net.bottleneck = _double_block(net, "mid", cin, w)
    for k in range(d):
        resample = Pool() if up_first else UpConv(net, f"dec{k}.up", w, w)
        net.decoder.append((resample, _double_block(net, f"dec{k}", 2 * w, w)))
    net.head = Conv(net, "head", w, cfg.num_classes)
    return net


def build_imn(cfg: ArchitectureConfig, dtype=np.float32) -> Network:
    """Up-sampling encoder, magnified bottleneck, max-pool decoder."""
    if cfg.kind != "imn":
        raise ValueError("build_imn needs kind='imn'")
    return _build_resampling(cfg, up_first=True, dtype=dtype)


def build_unet(cfg: ArchitectureConfig, dtype=np.float32) -> Network:
    """Max-pool encoder, reduced bottleneck, transposed-conv decoder."""
    if cfg.kind != "unet":
        raise ValueError("build_unet needs kind='unet'")
    return _build_resampling(cfg, up_first=False, dtype=dtype)


def build_cnn7(cfg: ArchitectureConfig, dtype=np.float32) -> Network:
    """Six conv-BN-ReLU blocks at constant resolution plus a class conv."""
    if cfg.kind != "cnn7":
        raise ValueError("build_cnn7 needs kind='cnn7'")
    net = Network(cfg, dtype)
    cin = cfg.in_channels
    for i in range(6):
        net.bottleneck.append(ConvBNReLU(net, f"block{i}", cin, cfg.width))
        cin = cfg.width
    net.head = Conv(net, "head", cfg.width, cfg.num_classes)
    return net


def build(cfg: ArchitectureConfig, dtype=np.float32) -> Network:
    return {"imn": build_imn, "unet": build_unet, "cnn7": build_cnn7}[cfg.kind](cfg, dtype)


# --------------------------------------------------------------------------
# Entry points
# --------------------------------------------------------------------------

def _as_batch(images, dtype) -> np.ndarray:
    arr = np.asarray(images, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    return arr


def forward(net: Network, batch, train: bool = False, trace: list | None = None) -> Tensor:
    return net.forward(batch, train=train, trace=trace)


def train_step(net: Network, optimizer: Adam, image, target) -> float:
    """Forward, backward and one Adam update; returns the pre-update loss."""
    x = _as_batch(image, net.dtype)
    tgt = np.asarray(target, dtype=bool)
    if tgt.ndim == 2:
        tgt = tgt[None]
    logits = net.forward(x, train=True)
    loss = softmax_cross_entropy(logits, tgt)
    value = float(loss.values)
    if not math.isfinite(value):
        for p in net.parameters():
            p.tensor.grad = None
        bad = [n for n, p in net.params.items() if not np.all(np.isfinite(p.tensor.values))]
        raise NumericError(f"non-finite loss {value}; non-finite parameters: {bad[:5] or 'none'}")
    loss.backward()
    optimizer.step(net.parameters())
    return value


def predict_logits(net: Network, image) -> np.ndarray:
    """Eval-mode logits (N x 2 x H x W) without recording a tape."""
    with no_grad():
        return net.forward(_as_batch(image, net.dtype), train=False).values


def predict_proba(net: Network, image) -> np.ndarray:
    """Eval-mode vessel probability map(s) from the class-1 softmax."""
    p = softmax(predict_logits(net, image).astype(np.float64), axis=1)[:, 1]
    return p[0] if np.ndim(image) == 2 else p


def predict_mask(net: Network, image) -> np.ndarray:
    """Per-pixel argmax; class 1 is vessel and ties go to background."""
    logits = predict_logits(net, image)
    mask = logits[:, 1] > logits[:, 0]
    return mask[0] if np.ndim(image) == 2 else mask
