"""Uniform scalar quantization and adaptive run-length / Golomb-Rice (RLGR) coding.

Notes
-----
The RLGR coder switches between a Golomb-Rice "no run" mode and a run-length mode for zeros,
adapting both the run parameter `k` and the Golomb-Rice parameter `kR` after every codeword.
Both are tracked in fixed point with `settings.RLGR_LOG2_L` fractional bits. Signed symbols are
zig-zag mapped (0, -1, 1, -2, ... -> 0, 1, 2, 3, ...) before coding. Bits are written MSB-first.
"""

import struct
import numpy as np
import log, settings
from errors import QuantizerError, DecodeError, MalformedStreamError

logger = log.get("entropy")

class QuantizerSpec:
    """Uniform quantizer with stepsize `delta`."""
    def __init__(self, delta):
        delta = float(delta)
        if not (np.isfinite(delta) and delta > 0):
            raise QuantizerError(f"quantizer stepsize must be positive, got {delta}")
        self.delta = delta

    def __str__(self):
        return f"<quantizer:{self.delta}>"

def _as_spec(q):
    return q if isinstance(q, QuantizerSpec) else QuantizerSpec(q)

def quantize(values, q):
    """Rounds `values / delta` to the nearest integer, ties away from zero.

    Parameters
    ----------
    values : np.Array
        Real values; must be finite.

    q : QuantizerSpec or float
        Quantizer or its stepsize.

    Returns
    -------
    np.Array
        int64 array with the shape of `values`.
    """
    q = _as_spec(q)
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise QuantizerError("cannot quantize non-finite values")
    return (np.sign(values) * np.floor(np.abs(values) / q.delta + 0.5)).astype(np.int64)

def dequantize(ints, q):
    q = _as_spec(q)
    return np.asarray(ints, dtype=np.float64) * q.delta

class Bitstream:
    """Bytes plus the number of meaningful bits in them (trailing bits are zero padding)."""
    def __init__(self, data=b"", bit_length=0):
        self.data = bytes(data)
        self.bit_length = int(bit_length)
        if self.bit_length > 8 * len(self.data):
            raise MalformedStreamError(len(self.data), f"{self.bit_length} bits do not fit in {len(self.data)} bytes")

    def __len__(self):
        return len(self.data)

    def __eq__(self, other):
        return isinstance(other, Bitstream) and (self.data, self.bit_length) == (other.data, other.bit_length)

    def __str__(self):
        return f"<bitstream:{self.bit_length} bits>"

class BitWriter:
    def __init__(self):
        self._bytes = bytearray()
        self._accumulator = 0
        self._pending = 0
        self.bit_length = 0

    def write(self, value, width):
        """Appends the `width` low bits of `value`, most significant first."""
        if width <= 0:
            return
        self._accumulator = (self._accumulator << width) | (value & ((1 << width) - 1))
        self._pending += width
        self.bit_length += width
        while self._pending >= 8:
            self._pending -= 8
            self._bytes.append((self._accumulator >> self._pending) & 0xFF)
        self._accumulator &= (1 << self._pending) - 1

    def write_ones(self, count):
        for _ in range(count):
            self.write(1, 1)

    def bitstream(self):
        data = bytes(self._bytes)
        if self._pending:
            data += bytes([(self._accumulator << (8 - self._pending)) & 0xFF])
        return Bitstream(data, self.bit_length)

class BitReader:
    def __init__(self, bitstream):
        self._bits = np.unpackbits(np.frombuffer(bitstream.data, dtype=np.uint8))[:bitstream.bit_length].tolist()
        self.position = 0

    def read(self, width):
        if self.position + width > len(self._bits):
            raise DecodeError(self.position, f"stream ends at bit {len(self._bits)}, needed {width} more from bit {self.position}")
        value = 0
        for bit in self._bits[self.position:self.position + width]:
            value = (value << 1) | bit
        self.position += width
        return value

    def count_ones(self, limit):
        """Reads ones up to and including a terminating zero; stops without a terminator at `limit`."""
        count = 0
        while count < limit:
            if self.read(1) == 0:
                return count
            count += 1
        return count

def zigzag(values):
    values = np.asarray(values, dtype=np.int64)
    if np.any((values >= settings.RLGR_MAGNITUDE_LIMIT) | (values <= -settings.RLGR_MAGNITUDE_LIMIT)):
        raise QuantizerError(f"symbol magnitudes must stay below 2^{settings.RLGR_MAGNITUDE_LIMIT.bit_length() - 1}")
    return np.where(values >= 0, 2 * values, -2 * values - 1)

def unzigzag(codes):
    codes = np.asarray(codes, dtype=np.int64)
    return np.where(codes & 1, -(codes >> 1) - 1, codes >> 1)

class _Adaptation:
    """Fixed-point RLGR parameter state shared verbatim by encoder and decoder.

    Both parameters saturate at `settings.RLGR_KP_MAX`, and one codeword raises kR by at most
    `settings.RLGR_KR_GROWTH`.
    """
    def __init__(self):
        self.shift = settings.RLGR_LOG2_L
        self.kp = 0
        self.krp = 2 << self.shift

    @property
    def k(self):
        return self.kp >> self.shift

    @property
    def kr(self):
        return self.krp >> self.shift

    def after_golomb(self, value):
        prefix = value >> self.kr
        if prefix == 0:
            self.krp = max(0, self.krp - 2)
        elif prefix > 1:
            self.krp = min(settings.RLGR_KP_MAX, self.krp + min(prefix + 1, settings.RLGR_KR_GROWTH))

    def grow_run(self, step):
        self.kp = min(settings.RLGR_KP_MAX, self.kp + step)

    def shrink_run(self, step):
        self.kp = max(0, self.kp - step)

def _golomb_encode(writer, value, state):
    kr = state.kr
    prefix = value >> kr
    if prefix < settings.RLGR_ESCAPE_PREFIX:
        writer.write_ones(prefix)
        writer.write(0, 1)
        writer.write(value, kr)
    else:
        width = value.bit_length()
        writer.write_ones(settings.RLGR_ESCAPE_PREFIX)
        writer.write(width, 6)
        writer.write(value, width)
    state.after_golomb(value)

def _golomb_decode(reader, state):
    kr = state.kr
    prefix = reader.count_ones(settings.RLGR_ESCAPE_PREFIX)
    if prefix < settings.RLGR_ESCAPE_PREFIX:
        value = (prefix << kr) | reader.read(kr)
    else:
        value = reader.read(reader.read(6))
    state.after_golomb(value)
    return value

def rlgr_encode(symbols):
    """Encodes signed integers with the adaptive RLGR coder.

    Parameters
    ----------
    symbols : np.Array
        Integer symbols.

    Returns
    -------
    Bitstream
        The coded bits; the symbol count is not part of the stream.
    """
    codes = [int(c) for c in zigzag(symbols).reshape(-1)]
    writer = BitWriter()
    state = _Adaptation()
    index, count = 0, len(codes)
    while index < count:
        k = state.k
        if k == 0:
            value = codes[index]
            index += 1
            _golomb_encode(writer, value, state)
            if value == 0:
                state.grow_run(settings.RLGR_U0)
            else:
                state.shrink_run(settings.RLGR_D0)
            continue
        run_limit = 1 << k
        run = 0
        while run < run_limit and index + run < count and codes[index + run] == 0:
            run += 1
        if run == run_limit:
            writer.write(0, 1)
            index += run
            state.grow_run(settings.RLGR_U1)
        elif index + run == count:
            # stream ends inside a run; the decoder clips the run to the symbol count
            writer.write(0, 1)
            index = count
        else:
            writer.write(1, 1)
            writer.write(run, k)
            _golomb_encode(writer, codes[index + run] - 1, state)
            index += run + 1
            state.shrink_run(settings.RLGR_D1)
    return writer.bitstream()

def rlgr_decode(bitstream, count):
    """Decodes `count` signed integers from an RLGR bitstream.

    Raises
    ------
    DecodeError
        If the stream ends early or describes more symbols than `count`.
    """
    reader = BitReader(bitstream)
    state = _Adaptation()
    codes = []
    while len(codes) < count:
        k = state.k
        if k == 0:
            value = _golomb_decode(reader, state)
            codes.append(value)
            if value == 0:
                state.grow_run(settings.RLGR_U0)
            else:
                state.shrink_run(settings.RLGR_D0)
            continue
        if reader.read(1) == 0:
            run = min(1 << k, count - len(codes))
            codes.extend([0] * run)
            state.grow_run(settings.RLGR_U1)
        else:
            run = reader.read(k)
            if len(codes) + run + 1 > count:
                raise DecodeError(reader.position, f"run of {run} zeros overflows {count} symbols")
            codes.extend([0] * run)
            codes.append(_golomb_decode(reader, state) + 1)
            state.shrink_run(settings.RLGR_D1)
    return unzigzag(np.array(codes, dtype=np.int64))

def pack_rlgr(symbols):
    """Byte payload: little-endian u32 symbol count followed by the RLGR bytes."""
    symbols = np.asarray(symbols).reshape(-1)
    return struct.pack("<I", len(symbols)) + rlgr_encode(symbols).data

def unpack_rlgr(payload, offset=0):
    """Inverse of `pack_rlgr` for a payload occupying `payload[offset:]`."""
    if len(payload) - offset < 4:
        raise DecodeError(8 * offset, "payload too short for a symbol count")
    count, = struct.unpack_from("<I", payload, offset)
    body = payload[offset + 4:]
    return rlgr_decode(Bitstream(body, 8 * len(body)), count)
