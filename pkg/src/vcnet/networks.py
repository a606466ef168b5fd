"""RSN / IDN / VCN stacks for the standard-codec path and the stride-2 autoencoder for the feature path.

Every network is a flat list of layers whose parameters live in one
name -> Tensor dict, so optimizers, checksums and checkpoints all work on
plain mappings.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .conv import conv2d, conv2d_transpose
from .tensor import ShapeError, Tensor, relu

DNNC_RATES = (1, 2, 4, 8, 12, 16, 20)
PAPER_WIDTH = 128
DNNC_WIDTH = 64
DNNC_BLOCKS = 3


class Mode(str, Enum):
    FULL = "full"
    LOW = "low"

    @property
    def factor(self) -> int:
        return 2 if self is Mode.LOW else 1


@dataclass(frozen=True)
class Layer:
    kind: str  # "conv", "deconv" or "res"
    in_ch: int
    out_ch: int
    k: int
    stride: int = 1
    relu: bool = True

    @property
    def padding(self) -> int:
        return self.k // 2

    @property
    def output_padding(self) -> int:
        return 1 if self.kind == "deconv" and self.stride == 2 else 0

    def weight_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        if self.kind == "conv":
            return [("weight", (self.out_ch, self.in_ch, self.k, self.k)), ("bias", (self.out_ch,))]
        if self.kind == "deconv":
            return [("weight", (self.in_ch, self.out_ch, self.k, self.k)), ("bias", (self.out_ch,))]
        shape = (self.out_ch, self.in_ch, self.k, self.k)
        return [("weight1", shape), ("bias1", (self.out_ch,)), ("weight2", shape), ("bias2", (self.out_ch,))]


class Network:
    """Ordered layers plus their parameters, keyed ``"<index>.<field>"``."""

    def __init__(self, layers: list[Layer], mode: Mode = Mode.FULL, kind: str = "", dtype=np.float64, seed=0):
        self.layers = layers
        self.mode = mode
        self.kind = kind
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        for i, layer in enumerate(layers):
            for field, shape in layer.weight_shapes():
                if field.startswith("bias"):
                    data = np.zeros(shape)
                else:
                    fan_in = layer.in_ch * layer.k * layer.k
                    if layer.kind == "deconv":
                        fan_in = max(1, fan_in // (layer.stride * layer.stride))
                    bound = np.sqrt(6.0 / fan_in)
                    data = rng.uniform(-bound, bound, size=shape)
                self.params[f"{i}.{field}"] = Tensor(data.astype(dtype), requires_grad=True, name=f"{i}.{field}")

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "Network":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ShapeError(f"{k}: stored shape {state[k].shape} vs {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data).tobytes())
        return h.hexdigest()

    def structure(self) -> list[Layer]:
        return list(self.layers)

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1] != self.layers[0].in_ch:
            raise ShapeError(f"{self.kind or 'network'}: expected (batch, {self.layers[0].in_ch}, H, W), got {x.shape}")
        down = int(np.prod([l.stride for l in self.layers if l.kind == "conv"]))
        if x.shape[2] % down or x.shape[3] % down:
            raise ShapeError(f"{self.kind or 'network'}: spatial extents {x.shape[2:]} must be multiples of {down}")
        p = self.params
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                x = conv2d(x, p[f"{i}.weight"], p[f"{i}.bias"], layer.stride, layer.padding)
            elif layer.kind == "deconv":
                x = conv2d_transpose(
                    x, p[f"{i}.weight"], p[f"{i}.bias"], layer.stride, layer.padding, layer.output_padding
                )
            else:
                h = relu(conv2d(x, p[f"{i}.weight1"], p[f"{i}.bias1"], 1, layer.padding))
                x = x + conv2d(h, p[f"{i}.weight2"], p[f"{i}.bias2"], 1, layer.padding)
            if layer.relu:
                x = relu(x)
        return x


def _as_mode(mode) -> Mode:
    return mode if isinstance(mode, Mode) else Mode(mode)


def rsn_layers(mode, width: int = PAPER_WIDTH) -> list[Layer]:
    mode = _as_mode(mode)
    layers = [Layer("conv", 1, width, 9), Layer("conv", width, width, 3, stride=mode.factor)]
    layers += [Layer("conv", width, width, 3) for _ in range(4)]
    layers.append(Layer("conv", width, 1, 9, relu=False))
    return layers


def idn_layers(mode, width: int = PAPER_WIDTH) -> list[Layer]:
    mode = _as_mode(mode)
    layers = [Layer("conv", 1, width, 9)] + [Layer("conv", width, width, 3) for _ in range(6)]
    if mode is Mode.LOW:
        layers.append(Layer("deconv", width, 1, 9, stride=2, relu=False))
    else:
        layers.append(Layer("conv", width, 1, 9, relu=False))
    return layers


def build_rsn(mode, width: int = PAPER_WIDTH, dtype=np.float64, seed=0) -> Network:
    return Network(rsn_layers(mode, width), _as_mode(mode), "rsn", dtype, seed)


def build_idn(mode, width: int = PAPER_WIDTH, dtype=np.float64, seed=1) -> Network:
    return Network(idn_layers(mode, width), _as_mode(mode), "idn", dtype, seed)


def build_vcn(mode, width: int = PAPER_WIDTH, dtype=np.float64, seed=2) -> Network:
    """Same layer structure as the IDN, independent parameters."""
    return Network(idn_layers(mode, width), _as_mode(mode), "vcn", dtype, seed)


# -- feature-space autoencoder ---------------------------------------------------------


def dnnc_encoder_layers(n: int, width: int = DNNC_WIDTH, blocks: int = DNNC_BLOCKS) -> list[Layer]:
    layers = [Layer("conv", 1, width, 5, stride=2), Layer("conv", width, width, 5, stride=2)]
    layers += [Layer("res", width, width, 3, relu=False) for _ in range(blocks)]
    layers.append(Layer("conv", width, n, 3, relu=False))
    return layers


def dnnc_decoder_layers(n: int, width: int = DNNC_WIDTH, blocks: int = DNNC_BLOCKS) -> list[Layer]:
    layers = [Layer("conv", n, width, 3)]
    layers += [Layer("res", width, width, 3, relu=False) for _ in range(blocks)]
    layers += [Layer("deconv", width, width, 5, stride=2), Layer("deconv", width, 1, 5, stride=2, relu=False)]
    return layers


@dataclass
class DnncAutoencoder:
    n: int
    encoder: Network
    decoder: Network


def check_rate(n: int) -> int:
    if n not in DNNC_RATES:
        raise ValueError(f"feature-map count {n} not in {DNNC_RATES}")
    return n


def build_dnnc(n: int, width: int = DNNC_WIDTH, blocks: int = DNNC_BLOCKS, dtype=np.float64, seed=0) -> DnncAutoencoder:
    check_rate(n)
    enc = Network(dnnc_encoder_layers(n, width, blocks), Mode.LOW, "rsn", dtype, seed)
    dec = Network(dnnc_decoder_layers(n, width, blocks), Mode.LOW, "idn", dtype, seed + 1)
    return DnncAutoencoder(n, enc, dec)


def copy_params(src: Network, dst: Network) -> None:
    """Value-copy `src` parameters into a structurally identical `dst`."""
    if src.layers != dst.layers:
        raise ShapeError("copy_params: layer structures differ")
    dst.load_state(src.state())


# -- checkpoint file ---------------------------------------------------------------------

CKPT_MAGIC = b"VCNCKPT1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> None:
    """Write named float32 tensors; `meta` entries become rank-0 records named ``@key=value``."""
    Path(path).write_bytes(encode_checkpoint(tensors, meta))


def encode_checkpoint(tensors: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> bytes:
    out = bytearray(CKPT_MAGIC)
    records: list[tuple[str, np.ndarray]] = [(f"@{k}={v}", np.zeros(())) for k, v in (meta or {}).items()]
    records += [(k, np.asarray(v)) for k, v in tensors.items()]
    for name, arr in records:
        raw = name.encode()
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"name too long: {name[:40]}...")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def decode_checkpoint(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if buf[:8] != CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    if len(buf) < 12:
        raise CheckpointError("truncated checkpoint")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    tensors: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    pos, end = 8, len(buf) - 4
    try:
        while pos < end:
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode()
            pos += nlen
            rank = buf[pos]
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
            if name.startswith("@"):
                key, _, value = name[1:].partition("=")
                meta[key] = value
            else:
                tensors[name] = arr.astype(np.float32)
    except (struct.error, ValueError, IndexError) as exc:
        raise CheckpointError(f"corrupt checkpoint record at byte {pos}: {exc}") from None
    if pos != end:
        raise CheckpointError("checkpoint records overrun the trailer")
    return tensors, meta


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return decode_checkpoint(Path(path).read_bytes())


def prefixed(prefix: str, net: Network) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in net.state().items()}


def unprefixed(prefix: str, tensors: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    head = prefix + "."
    return {k[len(head) :]: v for k, v in tensors.items() if k.startswith(head)}


def all_params(nets: Iterable[Network]) -> list[Tensor]:
    return [p for n in nets for p in n.params.values()]
