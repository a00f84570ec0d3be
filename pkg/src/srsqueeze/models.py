"""EDSR-style SR network family, parameter/FLOP accounting and SRWT weights I/O.

Layout (names are the keys of ``SRModel.params``)::

    shallow.{weight,bias}                   in_channels -> n_c
    deep.blocks.{b}.{l}.{weight,bias}       n_b residual blocks of n_l convs
    deep.tail.{weight,bias}                 trailing conv of the deep module
    recon.up.{weight,bias}                  n_c -> n_c * scale**2, then pixel shuffle
    recon.out.{weight,bias}                 n_c -> in_channels
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

SCALES = (2, 3, 4)


@dataclass(frozen=True)
class ModelConfig:
    n_c: int
    n_l: int
    n_b: int
    kernel: int = 3
    scale: int = 2
    in_channels: int = 3

    def __post_init__(self):
        for name in ("n_c", "n_l", "n_b", "kernel", "in_channels"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"ModelConfig.{name} must be a positive int, got {v!r}")
        if self.kernel % 2 == 0:
            raise ValueError(f"ModelConfig.kernel must be odd, got {self.kernel}")
        if self.scale not in SCALES:
            raise ValueError(f"ModelConfig.scale must be one of {SCALES}, got {self.scale!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**{k: int(d[k]) for k in ("n_c", "n_l", "n_b", "kernel", "scale", "in_channels") if k in d})

    @property
    def triple(self) -> tuple[int, int, int]:
        return self.n_c, self.n_l, self.n_b


def layer_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter tensor, in initialisation order."""
    c, k, s = config.n_c, config.kernel, config.scale
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout):
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)

    conv("shallow", config.in_channels, c)
    for b in range(config.n_b):
        for l in range(config.n_l):
            conv(f"deep.blocks.{b}.{l}", c, c)
    conv("deep.tail", c, c)
    conv("recon.up", c, c * s * s)
    conv("recon.out", c, config.in_channels)
    return shapes


def module_of(name: str) -> str:
    return name.split(".", 1)[0]


class SRModel:
    """Parameters plus the forward pass for one ModelConfig."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = layer_shapes(config)
        if list(params) != list(expected):
            raise ValueError("parameter names do not match the config layout")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def deep_parameters(self) -> list[Tensor]:
        return [p for n, p in self.params.items() if module_of(n) == "deep"]

    def named_parameters(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def requires_grad_(self, flag: bool = True) -> SRModel:
        for p in self.params.values():
            p.requires_grad = flag
        return self

    def copy(self) -> SRModel:
        return SRModel(self.config, {n: Tensor(p.data.copy(), p.requires_grad, name=n)
                                     for n, p in self.params.items()})

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    def _conv(self, name: str, x: Tensor) -> Tensor:
        return T.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"],
                        padding=self.config.kernel // 2)

    def shallow(self, x) -> Tensor:
        return self._conv("shallow", T.tensor(x))

    def deep(self, feat: Tensor) -> Tensor:
        cfg = self.config
        h = feat
        for b in range(cfg.n_b):
            y = h
            for l in range(cfg.n_l):
                y = self._conv(f"deep.blocks.{b}.{l}", y)
                if l < cfg.n_l - 1:
                    y = T.relu(y)
            h = h + y
        return self._conv("deep.tail", h)

    def reconstruct(self, feat: Tensor) -> Tensor:
        up = T.pixel_shuffle(self._conv("recon.up", feat), self.config.scale)
        return self._conv("recon.out", up)

    def forward(self, x) -> Tensor:
        x = T.tensor(x)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected N x {self.config.in_channels} x H x W input, got {x.shape}")
        s = self.shallow(x)
        return self.reconstruct(self.deep(s) + s)

    __call__ = forward


def build(config: ModelConfig, seed: int = 0) -> SRModel:
    """Deterministic He-uniform (gain 1, fan-in) initialisation.

    Weights ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)); the last conv of each
    residual block is further scaled by 0.1. Biases ~ U(-1/sqrt(fan_in),
    1/sqrt(fan_in)).
    """
    if not isinstance(config, ModelConfig):
        raise TypeError("build() needs a ModelConfig")
    rng = np.random.default_rng(seed)
    shapes = layer_shapes(config)
    params: dict[str, Tensor] = {}
    for name, shape in shapes.items():
        layer = name.rsplit(".", 1)[0]
        fan_in = math.prod(shapes[f"{layer}.weight"][1:])
        if name.endswith(".weight"):
            bound = math.sqrt(3.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
            if name.startswith("deep.blocks.") and name.split(".")[3] == str(config.n_l - 1):
                arr *= 0.1
        else:
            bound = 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(arr.astype(np.float32), requires_grad=True, name=name)
    return SRModel(config, params)


# -- accounting ----------------------------------------------------------------

@dataclass(frozen=True)
class ParamCount:
    shallow: int
    deep: int
    recon: int
    total: int


def exact_param_count(model: SRModel) -> ParamCount:
    """Element counts of the parameter tensors actually held by ``model``."""
    per = {"shallow": 0, "deep": 0, "recon": 0}
    for name, p in model.params.items():
        per[module_of(name)] += int(p.size)
    return ParamCount(per["shallow"], per["deep"], per["recon"], sum(per.values()))


def config_param_count(config: ModelConfig) -> ParamCount:
    """Same as ``exact_param_count`` but from the config alone (no weights)."""
    per = {"shallow": 0, "deep": 0, "recon": 0}
    for name, shape in layer_shapes(config).items():
        per[module_of(name)] += math.prod(shape)
    return ParamCount(per["shallow"], per["deep"], per["recon"], sum(per.values()))


def approx_param_count(config: ModelConfig) -> float:
    """k * n_b * (n_l + 1) * n_c**2 with k = kernel**2."""
    return float(config.kernel ** 2 * config.n_b * (config.n_l + 1) * config.n_c ** 2)


def conv_macs(in_ch: int, out_ch: int, kernel: int, out_h: float, out_w: float) -> float:
    return float(out_h) * float(out_w) * out_ch * in_ch * kernel * kernel


def conv_flops(in_ch: int, out_ch: int, kernel: int, out_h: float, out_w: float,
               flops_per_mac: float = 1.0) -> float:
    return flops_per_mac * conv_macs(in_ch, out_ch, kernel, out_h, out_w)


def estimate_flops(config: ModelConfig, out_h: int, out_w: int, flops_per_mac: float = 1.0) -> float:
    """Forward-pass cost for an ``out_h x out_w`` SR output.

    Counts conv multiply-accumulates only (ReLU, adds and the shuffle are
    free). The default ``flops_per_mac=1`` follows the convention used for
    published SR complexity figures; pass 2 for strict FLOPs.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"output dims must be positive, got {out_h}x{out_w}")
    c, k, r, cin = config.n_c, config.kernel, config.scale, config.in_channels
    lh, lw = out_h / r, out_w / r
    macs = conv_macs(cin, c, k, lh, lw)
    macs += (config.n_b * config.n_l + 1) * conv_macs(c, c, k, lh, lw)
    macs += conv_macs(c, c * r * r, k, lh, lw)
    macs += conv_macs(c, cin, k, out_h, out_w)
    return flops_per_mac * macs


# -- SRWT v1 weights container ---------------------------------------------------
#
#   b"SRWT" | u32 version | 6 x u32 config (n_c, n_l, n_b, kernel, scale, in_channels)
#   | u32 tensor count | per tensor: u32 name length, UTF-8 name, u32 rank,
#   rank x u64 dims, float32 payload (all little-endian)

SRWT_MAGIC = b"SRWT"
SRWT_VERSION = 1
_CONFIG_FIELDS = ("n_c", "n_l", "n_b", "kernel", "scale", "in_channels")


def dumps_weights(model: SRModel) -> bytes:
    buf = io.BytesIO()
    buf.write(SRWT_MAGIC)
    buf.write(struct.pack("<I", SRWT_VERSION))
    buf.write(struct.pack("<6I", *(getattr(model.config, f) for f in _CONFIG_FIELDS)))
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", p.ndim))
        buf.write(struct.pack(f"<{p.ndim}Q", *p.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return buf.getvalue()


def loads_weights(blob: bytes) -> SRModel:
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise ValueError("SRWT: truncated file")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != SRWT_MAGIC:
        raise ValueError("SRWT: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != SRWT_VERSION:
        raise ValueError(f"SRWT: unsupported version {version}")
    config = ModelConfig(**dict(zip(_CONFIG_FIELDS, struct.unpack("<6I", take(24)))))
    (count,) = struct.unpack("<I", take(4))
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = math.prod(dims)
        arr = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    if pos != len(view):
        raise ValueError("SRWT: trailing bytes")
    return SRModel(config, params)


def save_weights(model: SRModel, path) -> None:
    Path(path).write_bytes(dumps_weights(model))


def load_weights(path) -> SRModel:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise OSError(f"cannot read weights file {path}: {e}") from e
    try:
        return loads_weights(blob)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from e
