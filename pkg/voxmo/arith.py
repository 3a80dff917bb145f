"""Range coding of transform coefficients under adaptive discretized Laplacian models."""

import functools
import numpy as np
import log, settings
from entropy import Bitstream
from errors import DecodeError, ModelError

logger = log.get("arith")

_TOP = 1 << 24
_MASK = (1 << 32) - 1

class RangeEncoder:
    """32-bit range encoder with carry propagation through a cached byte and a run of 0xFF bytes."""
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.cache = 0
        self.cache_size = 1
        self.output = bytearray()

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > _MASK:
            carry = self.low >> 32
            byte = self.cache
            while True:
                self.output.append((byte + carry) & 0xFF)
                byte = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode(self, start, size, total):
        """Narrows the interval to [start, start + size) out of `total`."""
        r = self.range // total
        self.low += r * start
        self.range = r * size
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bits(self, value, width):
        """Encodes `width` equiprobable bits, at most 16 at a time."""
        while width > 0:
            chunk = min(width, 16)
            width -= chunk
            self.encode((value >> width) & ((1 << chunk) - 1), 1, 1 << chunk)

    def finish(self):
        for _ in range(5):
            self._shift_low()
        return bytes(self.output)

class RangeDecoder:
    def __init__(self, data):
        self.data = bytes(data)
        self.position = 0
        self.range = _MASK
        self.code = 0
        self._r = 1
        for _ in range(5):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self):
        if self.position >= len(self.data):
            raise DecodeError(8 * self.position, f"range-coded stream ends at byte {len(self.data)}")
        byte = self.data[self.position]
        self.position += 1
        return byte

    def target(self, total):
        """Cumulative frequency the next symbol must cover; call `consume` with its interval next."""
        self._r = self.range // total
        return min(self.code // self._r, total - 1)

    def consume(self, start, size):
        self.code -= self._r * start
        self.range = self._r * size
        while self.range < _TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next_byte()) & _MASK

    def decode_bits(self, width):
        value = 0
        while width > 0:
            chunk = min(width, 16)
            width -= chunk
            bits = self.target(1 << chunk)
            self.consume(bits, 1)
            value = (value << chunk) | bits
        return value

class LaplacianModel:
    """Discretized Laplacian over coefficient magnitudes, with an escape for the tail.

    Parameters
    ----------
    diversity : float
        Laplacian diversity `b`; the probability of magnitude m > 0 is
        exp(-(m - 1/2)/b) - exp(-(m + 1/2)/b), and of zero 1 - exp(-1/(2b)).

    Notes
    -----
    Magnitudes `0..DIRECT_MAGNITUDES-1` have their own symbol; larger magnitudes share the
    escape symbol. Every symbol gets at least `RANGE_FLOOR` out of `RANGE_TOTAL`.
    """
    def __init__(self, diversity):
        if not diversity > 0:
            raise ModelError(f"Laplacian diversity must be positive, got {diversity}")
        self.diversity = float(diversity)
        self.frequencies = self._frequencies(self.diversity)
        self.cumulative = np.concatenate([[0], np.cumsum(self.frequencies)])

    @staticmethod
    def _frequencies(diversity):
        count = settings.DIRECT_MAGNITUDES + 1
        edges = np.exp(-(np.arange(count, dtype=np.float64) + 0.5) / diversity)
        probabilities = np.empty(count)
        probabilities[0] = 1.0 - edges[0]
        probabilities[1:-1] = edges[:-2] - edges[1:-1]
        probabilities[-1] = edges[-2]
        spare = settings.RANGE_TOTAL - count * settings.RANGE_FLOOR
        frequencies = settings.RANGE_FLOOR + np.floor(probabilities * spare).astype(np.int64)
        frequencies[int(np.argmax(frequencies))] += settings.RANGE_TOTAL - int(frequencies.sum())
        return frequencies

    @property
    def escape(self):
        return settings.DIRECT_MAGNITUDES

    def interval(self, symbol):
        return int(self.cumulative[symbol]), int(self.frequencies[symbol])

    def lookup(self, target):
        symbol = int(np.searchsorted(self.cumulative, target, side="right")) - 1
        return symbol, int(self.cumulative[symbol]), int(self.frequencies[symbol])

@functools.lru_cache(maxsize=settings.MODEL_CACHE_SIZE)
def _model_at(level):
    return LaplacianModel(2.0 ** (level / settings.DIVERSITY_LEVELS))

def laplacian_model(diversity):
    """Shared model for `diversity` rounded to the nearest `1 / settings.DIVERSITY_LEVELS` octave."""
    if not (np.isfinite(diversity) and diversity > 0):
        raise ModelError(f"Laplacian diversity must be positive, got {diversity}")
    return _model_at(int(np.rint(settings.DIVERSITY_LEVELS * np.log2(diversity))))

class AdaptiveDiversity:
    """Scales per-coefficient diversity seeds by a multiplier tracking the observed magnitudes.

    After each symbol x with seed s the multiplier a becomes d*a + (1-d)*|x|/s, floored at
    `DIVERSITY_FLOOR`; the diversity used for the next symbol is a times its seed.
    """
    def __init__(self, decay=None):
        if decay is None:
            decay = settings.DIVERSITY_DECAY
        self.decay = float(decay)
        self.multiplier = 1.0

    def model(self, seed):
        return laplacian_model(self.multiplier * seed)

    def update(self, symbol, seed):
        self.multiplier = max(
            settings.DIVERSITY_FLOOR,
            self.decay * self.multiplier + (1.0 - self.decay) * abs(symbol) / seed,
        )

def _check_seeds(seeds, count):
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1)
    if len(seeds) != count:
        raise ModelError(f"{count} symbols but {len(seeds)} diversity seeds")
    if not np.all(np.isfinite(seeds) & (seeds > 0)):
        raise ModelError("diversity seeds must be finite and positive")
    return seeds

def _encode_symbol(encoder, model, value):
    magnitude = abs(value)
    if magnitude < model.escape:
        encoder.encode(*model.interval(magnitude), settings.RANGE_TOTAL)
    else:
        encoder.encode(*model.interval(model.escape), settings.RANGE_TOTAL)
        excess = magnitude - model.escape
        width = excess.bit_length()
        if width > 31:
            raise ModelError(f"magnitude {magnitude} exceeds the escape range")
        encoder.encode_bits(width, 5)
        encoder.encode_bits(excess, width)
    if magnitude:
        encoder.encode(1 if value < 0 else 0, 1, 2)

def _decode_symbol(decoder, model):
    symbol, start, size = model.lookup(decoder.target(settings.RANGE_TOTAL))
    decoder.consume(start, size)
    magnitude = symbol
    if symbol == model.escape:
        width = decoder.decode_bits(5)
        magnitude = model.escape + decoder.decode_bits(width)
    if magnitude:
        negative = decoder.target(2)
        decoder.consume(negative, 1)
        if negative:
            magnitude = -magnitude
    return magnitude

class LaplaceStreamEncoder:
    """Range-codes coefficients one at a time; each context keeps its own diversity multiplier."""
    def __init__(self, decay=None):
        self.decay = decay
        self.encoder = RangeEncoder()
        self.contexts = {}

    def encode(self, value, seed, context=0):
        if not (np.isfinite(seed) and seed > 0):
            raise ModelError(f"diversity seed must be finite and positive, got {seed}")
        diversity = self.contexts.setdefault(context, AdaptiveDiversity(self.decay))
        _encode_symbol(self.encoder, diversity.model(seed), int(value))
        diversity.update(int(value), seed)

    def finish(self):
        return self.encoder.finish()

class LaplaceStreamDecoder:
    def __init__(self, data, decay=None):
        self.decay = decay
        self.decoder = RangeDecoder(data)
        self.contexts = {}

    def decode(self, seed, context=0):
        if not (np.isfinite(seed) and seed > 0):
            raise ModelError(f"diversity seed must be finite and positive, got {seed}")
        diversity = self.contexts.setdefault(context, AdaptiveDiversity(self.decay))
        value = _decode_symbol(self.decoder, diversity.model(seed))
        diversity.update(value, seed)
        return value

def laplace_ac_encode(symbols, seeds, decay=None):
    """Range-codes integer coefficients, each under a Laplacian model seeded by its diversity seed.

    Parameters
    ----------
    symbols : np.Array
        Integer coefficients.

    seeds : np.Array
        Positive diversity seed per coefficient (e.g. proportional to 1/sqrt(eigenvalue)).

    decay : float, optional
        Decay of the diversity multiplier update. Defaults to `settings.DIVERSITY_DECAY`.

    Returns
    -------
    Bitstream

    Raises
    ------
    ModelError
        If a seed is zero, negative or non-finite, or the seed count does not match.
    """
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    seeds = _check_seeds(seeds, len(symbols))
    stream = LaplaceStreamEncoder(decay)
    for value, seed in zip(symbols.tolist(), seeds.tolist()):
        stream.encode(value, seed)
    data = stream.finish()
    return Bitstream(data, 8 * len(data))

def laplace_ac_decode(bitstream, seeds, decay=None):
    """Decodes one coefficient per seed from a stream made by `laplace_ac_encode`."""
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1)
    seeds = _check_seeds(seeds, len(seeds))
    data = bitstream.data if isinstance(bitstream, Bitstream) else bytes(bitstream)
    stream = LaplaceStreamDecoder(data, decay)
    return np.array([stream.decode(seed) for seed in seeds.tolist()], dtype=np.int64)
