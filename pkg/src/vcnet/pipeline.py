"""Inference: image -> bitstream -> image through a trained RSN / IDN pair."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec.bitstream import SCIC, Bitstream, BitstreamError, decode_dnnc, decode_scic, encode_dnnc, encode_scic
from .dataset import GrayImage
from .networks import (
    DNNC_BLOCKS,
    DNNC_WIDTH,
    PAPER_WIDTH,
    CheckpointError,
    Mode,
    Network,
    build_dnnc,
    build_idn,
    build_rsn,
    decode_checkpoint,
    unprefixed,
)
from .quantizer import QuantizerSpec, dequantize, quantize_symbols
from .tensor import Tensor


@dataclass
class InferenceModel:
    framework: str
    mode: Mode
    rsn: Network
    idn: Network
    qf: int | None = None
    spec: QuantizerSpec | None = None

    @property
    def multiple(self) -> int:
        """Image extents are padded up to a multiple of this before re-sampling."""
        if self.framework == "dnnc":
            return 4
        return 16 if self.mode is Mode.LOW else 8

    @classmethod
    def from_bytes(cls, buf: bytes, dtype=np.float32) -> "InferenceModel":
        # training checkpoints also carry vcn.* tensors; they are ignored here
        tensors, meta = decode_checkpoint(buf)
        try:
            framework = meta["framework"]
            mode = Mode(meta["mode"])
            if framework == "scic":
                width = int(meta.get("width", PAPER_WIDTH))
                rsn = build_rsn(mode, width, dtype)
                idn = build_idn(mode, width, dtype)
                spec, qf = None, int(meta["qf"])
            else:
                ae = build_dnnc(int(meta["n"]), int(meta.get("dnnc_width", DNNC_WIDTH)),
                                int(meta.get("dnnc_blocks", DNNC_BLOCKS)), dtype)
                rsn, idn, qf = ae.encoder, ae.decoder, None
                spec = QuantizerSpec(float(meta["y_min"]), float(meta["y_max"]), int(meta["beta"]))
        except KeyError as exc:
            raise CheckpointError(f"checkpoint metadata lacks {exc}") from None
        rsn.load_state(unprefixed("rsn", tensors))
        idn.load_state(unprefixed("idn", tensors))
        rsn.set_trainable(False)
        idn.set_trainable(False)
        return cls(framework, mode, rsn, idn, qf, spec)

    @classmethod
    def load(cls, path: str | Path, dtype=np.float32) -> "InferenceModel":
        return cls.from_bytes(Path(path).read_bytes(), dtype)

    def _forward(self, net: Network, x: np.ndarray) -> np.ndarray:
        return net.forward(Tensor(x[None, None].astype(net.dtype) if x.ndim == 2 else x.astype(net.dtype))).data

    def compress(self, img: GrayImage, qf: int | None = None) -> Bitstream:
        x = pad_to(img.normalized(), self.multiple)
        y = self._forward(self.rsn, x)
        if self.framework == "scic":
            plane = GrayImage.from_unit(np.clip(y[0, 0], 0.0, 1.0))
            return encode_scic(plane, qf or self.qf, self.mode, img.width, img.height, resampled=True)
        return encode_dnnc(quantize_symbols(y[0], self.spec), self.spec, img.width, img.height)

    def decompress(self, stream: Bitstream | bytes) -> GrayImage:
        if isinstance(stream, (bytes, bytearray)):
            stream = Bitstream.from_bytes(stream)
        if (stream.path == SCIC) != (self.framework == "scic"):
            raise BitstreamError(f"stream path does not match the {self.framework} checkpoint")
        if not stream.resampled:
            raise BitstreamError("stream holds a plain image; decode it without a checkpoint")
        if stream.path == SCIC:
            if stream.mode is not self.mode:
                raise BitstreamError(f"stream is {stream.mode.value}-resolution, checkpoint is {self.mode.value}")
            z = decode_scic(stream).samples / 255.0
            out = self._forward(self.idn, z)[0, 0]
        else:
            symbols, spec = decode_dnnc(stream)
            z = dequantize(symbols, spec)[None]
            out = self._forward(self.idn, z)[0, 0]
        return GrayImage.from_unit(np.clip(out[: stream.height, : stream.width], 0.0, 1.0))


def pad_to(x: np.ndarray, multiple: int) -> np.ndarray:
    """Edge-replicate the bottom/right borders up to the next multiple."""
    h, w = x.shape
    ph, pw = -h % multiple, -w % multiple
    return np.pad(x, ((0, ph), (0, pw)), mode="edge") if ph or pw else x


def baseline_compress(img: GrayImage, qf: int) -> Bitstream:
    """The jpeg-like codec applied to the image itself (identity re-sampling)."""
    if img.width % 8 or img.height % 8:
        padded = GrayImage(pad_to(img.samples, 8), img.name)
        return encode_scic(padded, qf, Mode.FULL, img.width, img.height)
    return encode_scic(img, qf)


def baseline_decompress(stream: Bitstream | bytes) -> GrayImage:
    if isinstance(stream, (bytes, bytearray)):
        stream = Bitstream.from_bytes(stream)
    if stream.path != SCIC or stream.resampled:
        raise BitstreamError("stream needs its checkpoint to decode (re-sampled plane)")
    plane = decode_scic(stream)
    return GrayImage(plane.samples[: stream.height, : stream.width])
