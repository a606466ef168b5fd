"""Self-describing compressed container shared by the SCIC and DNNC paths.

Layout (little-endian)::

    magic      8s   b"VCNBITS1"
    path       B    0 = SCIC, 1 = DNNC
    mode       B    0 = full, 1 = low; bit 7 set when the plane is a re-sampled
                    vector that needs a trained decoder (clear for plain images)
    width      H    decoded image extents
    height     H
    code_w     H    extents of the coded plane(s)
    code_h     H
    -- SCIC --
    qf         B
    -- DNNC --
    n          B    feature maps
    beta       H
    y_min      d
    y_max      d
    payload    length-prefixed (I) arithmetic-coded bytes
    crc32      I    over everything before it
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..dataset import GrayImage
from ..networks import Mode
from ..quantizer import QuantizerSpec
from .arith import AdaptiveModel, Decoder, DecodeError, Encoder
from .blockdct import decode_levels, encode_levels, quantized_coefficients, reconstruct

MAGIC = b"VCNBITS1"
SCIC, DNNC = 0, 1
_BASE = struct.Struct("<8sBBHHHH")
_SCIC = struct.Struct("<B")
_DNNC = struct.Struct("<BHdd")


class BitstreamError(DecodeError):
    pass


@dataclass
class Bitstream:
    path: int
    mode: Mode
    width: int
    height: int
    code_width: int
    code_height: int
    payload: bytes
    qf: int | None = None
    n: int | None = None
    spec: QuantizerSpec | None = None
    resampled: bool = False

    def to_bytes(self) -> bytes:
        head = _BASE.pack(
            MAGIC,
            self.path,
            (1 if self.mode is Mode.LOW else 0) | (0x80 if self.resampled else 0),
            self.width,
            self.height,
            self.code_width,
            self.code_height,
        )
        if self.path == SCIC:
            head += _SCIC.pack(self.qf)
        else:
            head += _DNNC.pack(self.n, self.spec.beta, self.spec.y_min, self.spec.y_max)
        body = head + struct.pack("<I", len(self.payload)) + self.payload
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Bitstream":
        if len(buf) < _BASE.size + 8:
            raise BitstreamError(f"stream too short ({len(buf)} bytes)")
        (crc,) = struct.unpack("<I", buf[-4:])
        if zlib.crc32(buf[:-4]) != crc:
            raise BitstreamError("CRC mismatch: stream is corrupted")
        magic, path, mode, w, h, cw, ch = _BASE.unpack_from(buf, 0)
        if magic != MAGIC:
            raise BitstreamError(f"bad magic {magic!r}")
        pos = _BASE.size
        kw: dict = {}
        try:
            if path == SCIC:
                (kw["qf"],) = _SCIC.unpack_from(buf, pos)
                pos += _SCIC.size
            elif path == DNNC:
                n, beta, lo, hi = _DNNC.unpack_from(buf, pos)
                pos += _DNNC.size
                kw.update(n=n, spec=QuantizerSpec(lo, hi, beta))
            else:
                raise BitstreamError(f"unknown path tag {path}")
            (length,) = struct.unpack_from("<I", buf, pos)
        except struct.error as exc:
            raise BitstreamError(f"truncated header: {exc}") from None
        pos += 4
        if pos + length != len(buf) - 4:
            raise BitstreamError("payload length disagrees with stream size")
        if mode & 0x7F > 1:
            raise BitstreamError(f"unknown mode byte {mode}")
        return cls(path, Mode.LOW if mode & 1 else Mode.FULL, w, h, cw, ch, bytes(buf[pos : pos + length]),
                   resampled=bool(mode & 0x80), **kw)

    def __len__(self) -> int:
        return len(self.to_bytes())

    @property
    def bits(self) -> int:
        return 8 * len(self)


def bpp(stream: Bitstream | bytes, width: int, height: int) -> float:
    """Total bits, header included, per pixel of the decoded image."""
    if width <= 0 or height <= 0:
        raise ValueError("extents must be positive")
    size = len(stream) if isinstance(stream, (bytes, bytearray)) else len(stream.to_bytes())
    return 8.0 * size / (width * height)


# -- SCIC ---------------------------------------------------------------------------


def encode_scic(
    img: GrayImage,
    qf: int,
    mode=Mode.FULL,
    width: int | None = None,
    height: int | None = None,
    resampled: bool = False,
) -> Bitstream:
    """Code an 8-bit plane; `width`/`height` record the final image extents (default: the plane's)."""
    levels = quantized_coefficients(img, qf)
    return Bitstream(
        SCIC,
        Mode(mode),
        width or img.width,
        height or img.height,
        img.width,
        img.height,
        encode_levels(levels),
        qf=int(qf),
        resampled=resampled,
    )


def decode_scic(stream: Bitstream | bytes) -> GrayImage:
    if isinstance(stream, (bytes, bytearray)):
        stream = Bitstream.from_bytes(stream)
    if stream.path != SCIC:
        raise BitstreamError("not an SCIC stream")
    rows, cols = stream.code_height // 8, stream.code_width // 8
    levels = decode_levels(stream.payload, rows, cols)
    img = reconstruct(levels, stream.qf)
    if (img.width, img.height) != (stream.code_width, stream.code_height):
        raise BitstreamError("decoded plane disagrees with header extents")
    return img


def g_map(y, qf: int, mode=Mode.FULL) -> np.ndarray:
    """Lossy channel for a batch of [0,1] planes: 8-bit rounding, encode, decode, rescale.

    Accepts (B, 1, h, w) or (h, w) arrays; never participates in autodiff.
    """
    arr = np.asarray(getattr(y, "data", y))
    flat = arr.reshape(-1, arr.shape[-2], arr.shape[-1])
    out = np.empty(flat.shape, dtype=arr.dtype)
    for i, plane in enumerate(flat):
        img = GrayImage.from_unit(np.clip(plane, 0.0, 1.0))
        out[i] = decode_scic(Bitstream.from_bytes(encode_scic(img, qf, mode).to_bytes())).samples / 255.0
    return out.reshape(arr.shape)


# -- DNNC ---------------------------------------------------------------------------


def encode_dnnc(symbols: np.ndarray, spec: QuantizerSpec, width: int | None = None, height: int | None = None) -> Bitstream:
    """Code an (N, h, w) symbol tensor with one adaptive model per channel."""
    sym = np.asarray(symbols)
    if sym.ndim == 4:
        if sym.shape[0] != 1:
            raise ValueError("encode_dnnc codes one image at a time")
        sym = sym[0]
    n, h, w = sym.shape
    if sym.size and (sym.min() < 0 or sym.max() > spec.beta):
        raise ValueError(f"symbols must lie in [0, {spec.beta}]")
    enc = Encoder()
    for c in range(n):
        model = AdaptiveModel(spec.alphabet)
        for s in sym[c].ravel().tolist():
            enc.encode(model, s)
    return Bitstream(DNNC, Mode.LOW, width or 4 * w, height or 4 * h, w, h, enc.finish(), n=n, spec=spec, resampled=True)


def decode_dnnc(stream: Bitstream | bytes) -> tuple[np.ndarray, QuantizerSpec]:
    if isinstance(stream, (bytes, bytearray)):
        stream = Bitstream.from_bytes(stream)
    if stream.path != DNNC:
        raise BitstreamError("not a DNNC stream")
    dec = Decoder(stream.payload)
    count = stream.code_width * stream.code_height
    out = np.empty((stream.n, count), dtype=np.int64)
    for c in range(stream.n):
        model = AdaptiveModel(stream.spec.alphabet)
        out[c] = [dec.decode(model) for _ in range(count)]
    return out.reshape(stream.n, stream.code_height, stream.code_width), stream.spec
