"""Adaptive binary arithmetic coding over integer frequency tables.

The coder keeps 32-bit `low`/`high` registers and resolves carries with
pending underflow bits. Models adapt after every coded symbol; encoder and
decoder apply identical updates, so their tables never diverge.
"""

from __future__ import annotations

STATE_BITS = 32
FULL = 1 << STATE_BITS
MASK = FULL - 1
HALF = FULL >> 1
QUARTER = HALF >> 1
MAX_TOTAL = QUARTER + 2


class ArithmeticError_(ValueError):
    """Malformed stream or encoder/decoder disagreement."""


DecodeError = ArithmeticError_


class AdaptiveModel:
    """Frequency table over `size` symbols: +`increment` per coded symbol, halved at `ceiling`.

    Frequencies never drop below 1.
    """

    __slots__ = ("size", "freq", "total", "increment", "ceiling")

    def __init__(self, size: int, increment: int = 32, ceiling: int = 1 << 16):
        if size < 1:
            raise ValueError("alphabet must have at least one symbol")
        if ceiling > MAX_TOTAL or ceiling < size + increment:
            raise ValueError(f"ceiling {ceiling} out of range for {size} symbols")
        self.size = size
        self.freq = [1] * size
        self.total = size
        self.increment = increment
        self.ceiling = ceiling

    def interval(self, symbol: int) -> tuple[int, int]:
        lo = sum(self.freq[:symbol])
        return lo, lo + self.freq[symbol]

    def find(self, value: int) -> tuple[int, int, int]:
        lo = 0
        for s, f in enumerate(self.freq):
            if value < lo + f:
                return s, lo, lo + f
            lo += f
        raise DecodeError("model desync: value beyond cumulative total")

    def update(self, symbol: int) -> None:
        self.freq[symbol] += self.increment
        self.total += self.increment
        if self.total > self.ceiling:
            self.freq = [max(1, f >> 1) for f in self.freq]
            self.total = sum(self.freq)


class BitModel:
    """Adaptive binary context (count-based)."""

    __slots__ = ("zero", "one", "increment", "ceiling")

    def __init__(self, increment: int = 32, ceiling: int = 1 << 13):
        self.zero = 1
        self.one = 1
        self.increment = increment
        self.ceiling = ceiling

    def update(self, bit: int) -> None:
        if bit:
            self.one += self.increment
        else:
            self.zero += self.increment
        if self.zero + self.one > self.ceiling:
            self.zero = max(1, self.zero >> 1)
            self.one = max(1, self.one >> 1)


class Encoder:
    def __init__(self):
        self.low = 0
        self.high = MASK
        self.pending = 0
        self._bytes = bytearray()
        self._acc = 0
        self._nbits = 0

    def _emit(self, bit: int) -> None:
        self._acc = (self._acc << 1) | bit
        self._nbits += 1
        if self._nbits == 8:
            self._bytes.append(self._acc)
            self._acc = 0
            self._nbits = 0

    def _narrow(self, lo: int, hi: int, total: int) -> None:
        span = self.high - self.low + 1
        self.high = self.low + hi * span // total - 1
        self.low = self.low + lo * span // total
        while True:
            if not (self.low ^ self.high) & HALF:
                bit = self.low >> (STATE_BITS - 1)
                self._emit(bit)
                for _ in range(self.pending):
                    self._emit(bit ^ 1)
                self.pending = 0
                self.low = (self.low << 1) & MASK
                self.high = ((self.high << 1) & MASK) | 1
            elif self.low & ~self.high & QUARTER:
                self.pending += 1
                self.low = (self.low << 1) ^ HALF
                self.high = ((self.high ^ HALF) << 1) | HALF | 1
            else:
                break

    def encode(self, model: AdaptiveModel, symbol: int) -> None:
        if not 0 <= symbol < model.size:
            raise ValueError(f"symbol {symbol} outside alphabet of {model.size}")
        lo, hi = model.interval(symbol)
        self._narrow(lo, hi, model.total)
        model.update(symbol)

    def encode_bit(self, model: BitModel, bit: int) -> None:
        if bit:
            self._narrow(model.zero, model.zero + model.one, model.zero + model.one)
        else:
            self._narrow(0, model.zero, model.zero + model.one)
        model.update(bit)

    def encode_raw(self, value: int, nbits: int) -> None:
        """Equiprobable bits, most significant first."""
        for i in range(nbits - 1, -1, -1):
            b = (value >> i) & 1
            self._narrow(b, b + 1, 2)

    def finish(self) -> bytes:
        self.pending += 1
        bit = 0 if self.low < QUARTER else 1
        self._emit(bit)
        for _ in range(self.pending):
            self._emit(bit ^ 1)
        self.pending = 0
        while self._nbits:
            self._emit(0)
        return bytes(self._bytes)


class Decoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0  # bit position
        self.low = 0
        self.high = MASK
        self.code = 0
        for _ in range(STATE_BITS):
            self.code = (self.code << 1) | self._bit()

    def _bit(self) -> int:
        byte = self.pos >> 3
        if byte >= len(self.data):
            self.pos += 1
            if self.pos > 8 * len(self.data) + 2 * STATE_BITS:
                raise DecodeError("read past end of arithmetic-coded payload")
            return 0
        bit = (self.data[byte] >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit

    def _target(self, total: int) -> int:
        span = self.high - self.low + 1
        return ((self.code - self.low + 1) * total - 1) // span

    def _narrow(self, lo: int, hi: int, total: int) -> None:
        span = self.high - self.low + 1
        self.high = self.low + hi * span // total - 1
        self.low = self.low + lo * span // total
        while True:
            if not (self.low ^ self.high) & HALF:
                self.low = (self.low << 1) & MASK
                self.high = ((self.high << 1) & MASK) | 1
                self.code = ((self.code << 1) & MASK) | self._bit()
            elif self.low & ~self.high & QUARTER:
                self.low = (self.low << 1) ^ HALF
                self.high = ((self.high ^ HALF) << 1) | HALF | 1
                self.code = (self.code & HALF) | ((self.code << 1) & (MASK >> 1)) | self._bit()
            else:
                break

    def decode(self, model: AdaptiveModel) -> int:
        value = self._target(model.total)
        if not 0 <= value < model.total:
            raise DecodeError("model desync: code outside the current interval")
        symbol, lo, hi = model.find(value)
        self._narrow(lo, hi, model.total)
        model.update(symbol)
        return symbol

    def decode_bit(self, model: BitModel) -> int:
        total = model.zero + model.one
        value = self._target(total)
        if not 0 <= value < total:
            raise DecodeError("model desync: code outside the current interval")
        bit = 1 if value >= model.zero else 0
        if bit:
            self._narrow(model.zero, total, total)
        else:
            self._narrow(0, model.zero, total)
        model.update(bit)
        return bit

    def decode_raw(self, nbits: int) -> int:
        value = 0
        for _ in range(nbits):
            b = 1 if self._target(2) >= 1 else 0
            self._narrow(b, b + 1, 2)
            value = (value << 1) | b
        return value


# -- varints ------------------------------------------------------------------------


def write_varint(n: int) -> bytes:
    if n < 0:
        raise ValueError("varint must be non-negative")
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def read_varint(buf: bytes, pos: int = 0) -> tuple[int, int]:
    n = shift = 0
    while True:
        if pos >= len(buf):
            raise DecodeError("truncated varint")
        byte = buf[pos]
        pos += 1
        n |= (byte & 0x7F) << shift
        shift += 7
        if not byte & 0x80:
            return n, pos


# -- whole-stream helpers ----------------------------------------------------------


def arith_encode(symbols, alphabet: int) -> bytes:
    """Symbol count (varint) followed by the adaptive arithmetic code of `symbols`."""
    symbols = [int(s) for s in symbols]
    model = AdaptiveModel(alphabet)
    enc = Encoder()
    for s in symbols:
        enc.encode(model, s)
    return write_varint(len(symbols)) + enc.finish()


def arith_decode(data: bytes, count: int, alphabet: int) -> list[int]:
    stored, pos = read_varint(data)
    if stored != count:
        raise DecodeError(f"stream holds {stored} symbols, caller expected {count}")
    model = AdaptiveModel(alphabet)
    dec = Decoder(data[pos:])
    return [dec.decode(model) for _ in range(count)]
