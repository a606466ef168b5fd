"""JPEG-like grayscale block transform codec.

Level shift, 8x8 orthonormal DCT-II, quality-scaled luminance quantization,
zigzag scan, then arithmetic coding of differential DC values and
(zero-run, level) AC pairs terminated by an end-of-block symbol.

Levels are binarized as a magnitude class coded in unary with adaptive
contexts (capped at ``MAX_CLASS``), an equiprobable sign bit and
``class - 1`` equiprobable refinement bits.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..dataset import BLOCK, GrayImage
from .arith import AdaptiveModel, BitModel, Decoder, DecodeError, Encoder

# ITU T.81 Annex K, table K.1
LUMA_BASE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

MAX_CLASS = 15
EOB = 63
LOW_BAND = 6  # zigzag positions below this use their own magnitude contexts


@lru_cache(maxsize=1)
def dct_matrix() -> np.ndarray:
    n = np.arange(BLOCK)
    c = np.sqrt(2.0 / BLOCK) * np.cos(np.pi * (2 * n[None, :] + 1) * n[:, None] / (2 * BLOCK))
    c[0] /= np.sqrt(2.0)
    c.flags.writeable = False
    return c


def dct8(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of the trailing 8x8 axes."""
    c = dct_matrix()
    return c @ np.asarray(block, dtype=np.float64) @ c.T


def idct8(coeffs: np.ndarray) -> np.ndarray:
    c = dct_matrix()
    return c.T @ np.asarray(coeffs, dtype=np.float64) @ c


def quant_table(qf: int) -> np.ndarray:
    """IJG quality scaling of the luminance base table, clamped to [1, 255]."""
    if not 1 <= int(qf) <= 100 or int(qf) != qf:
        raise ValueError(f"quality factor must be an integer in 1..100, got {qf}")
    qf = int(qf)
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    # integer round-half-up of base*scale/100
    table = (LUMA_BASE * scale + 50) // 100
    return np.clip(table, 1, 255)


@lru_cache(maxsize=1)
def zigzag() -> np.ndarray:
    """Flat raster indices of the 64 coefficients in zigzag order."""
    order = sorted(
        ((r, c) for r in range(BLOCK) for c in range(BLOCK)),
        key=lambda rc: (rc[0] + rc[1], rc[0] if (rc[0] + rc[1]) % 2 else rc[1]),
    )
    out = np.array([r * BLOCK + c for r, c in order])
    out.flags.writeable = False
    return out


def _to_blocks(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    return x.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _from_blocks(b: np.ndarray) -> np.ndarray:
    rows, cols = b.shape[:2]
    return b.transpose(0, 2, 1, 3).reshape(rows * BLOCK, cols * BLOCK)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantized_coefficients(img: GrayImage, qf: int) -> np.ndarray:
    """(rows, cols, 64) integer coefficients in zigzag order."""
    if img.height % BLOCK or img.width % BLOCK:
        raise ValueError(f"extents {img.width}x{img.height} must be multiples of {BLOCK}")
    blocks = _to_blocks(img.samples.astype(np.float64) - 128.0)
    coeffs = dct8(blocks) / quant_table(qf)
    q = _round_half_away(coeffs).astype(np.int64)
    return q.reshape(q.shape[0], q.shape[1], 64)[:, :, zigzag()]


def reconstruct(levels: np.ndarray, qf: int) -> GrayImage:
    """Inverse of :func:`quantized_coefficients` up to quantization loss."""
    rows, cols = levels.shape[:2]
    raster = np.empty_like(levels)
    raster[:, :, zigzag()] = levels
    coeffs = raster.reshape(rows, cols, BLOCK, BLOCK) * quant_table(qf)
    pixels = _from_blocks(idct8(coeffs)) + 128.0
    return GrayImage(np.clip(_round_half_away(pixels), 0, 255).astype(np.uint8))


# -- entropy coding of the levels ---------------------------------------------------------


class _Contexts:
    def __init__(self):
        self.dc_class = [BitModel() for _ in range(MAX_CLASS)]
        self.ac_class = [[BitModel() for _ in range(MAX_CLASS)] for _ in range(2)]
        self.run = AdaptiveModel(64)


def _magnitude_class(v: int) -> int:
    return min(abs(v).bit_length(), MAX_CLASS)


def _encode_level(enc: Encoder, ctx: list[BitModel], v: int, allow_zero: bool) -> None:
    mag = abs(v)
    cls = mag.bit_length()
    if cls > MAX_CLASS:
        raise ValueError(f"coefficient magnitude {mag} exceeds {MAX_CLASS}-bit class range")
    start = 0 if allow_zero else 1
    # unary class code: one '1' per step, '0' terminates unless capped
    for i in range(start, MAX_CLASS):
        if i < cls:
            enc.encode_bit(ctx[i], 1)
        else:
            enc.encode_bit(ctx[i], 0)
            break
    if cls:
        enc.encode_raw(1 if v < 0 else 0, 1)
        if cls > 1:
            enc.encode_raw(mag - (1 << (cls - 1)), cls - 1)


def _decode_level(dec: Decoder, ctx: list[BitModel], allow_zero: bool) -> int:
    cls = 0 if allow_zero else 1
    while cls < MAX_CLASS and dec.decode_bit(ctx[cls]):
        cls += 1
    if cls == 0:
        return 0
    negative = dec.decode_raw(1)
    mag = (1 << (cls - 1)) + (dec.decode_raw(cls - 1) if cls > 1 else 0)
    return -mag if negative else mag


def encode_levels(levels: np.ndarray) -> bytes:
    enc = Encoder()
    ctx = _Contexts()
    prev_dc = 0
    for block in levels.reshape(-1, 64).tolist():
        _encode_level(enc, ctx.dc_class, block[0] - prev_dc, allow_zero=True)
        prev_dc = block[0]
        run = 0
        last = max((i for i in range(1, 64) if block[i]), default=0)
        for pos in range(1, last + 1):
            v = block[pos]
            if v == 0:
                run += 1
                continue
            enc.encode(ctx.run, run)
            _encode_level(enc, ctx.ac_class[pos < LOW_BAND], v, allow_zero=False)
            run = 0
        if last < 63:
            enc.encode(ctx.run, EOB)
    return enc.finish()


def decode_levels(payload: bytes, rows: int, cols: int) -> np.ndarray:
    dec = Decoder(payload)
    ctx = _Contexts()
    out = np.zeros((rows * cols, 64), dtype=np.int64)
    prev_dc = 0
    for b in range(rows * cols):
        prev_dc += _decode_level(dec, ctx.dc_class, allow_zero=True)
        out[b, 0] = prev_dc
        pos = 1
        while pos < 64:
            run = dec.decode(ctx.run)
            if run == EOB:
                break
            pos += run
            if pos > 63:
                raise DecodeError(f"block {b}: zero run overruns the block")
            out[b, pos] = _decode_level(dec, ctx.ac_class[pos < LOW_BAND], allow_zero=False)
            pos += 1
    return out.reshape(rows, cols, 64)
