"""Motion, geometry and color coding of voxelized sequences, and the sequence container.

Notes
-----
Container layout (little-endian): a `SequenceHeader` followed by one record per frame,
`[frame type: u8][u32 length][geometry][u32 length][motion][u32 length][color]`.

P-frames are predicted from the previous *decoded* frame. The decoder rebuilds the reference
graph and spectrum from that frame, decodes the motion field, warps the reference, recovers the
target geometry from the XOR of warped and target occupancy, predicts colors from the warped
points and adds the decoded block-transform color residual.
"""

import struct
import numpy as np
import log, settings
from voxels import VoxelGrid, VoxelSet, VoxelFrame, xor_voxel_sets, apply_xor, morton_encode
from octree import Octree, build_octree, decode_octree
from graph import build_knn_graph, eigendecompose, gft, inverse_gft, nearest_neighbors
from features import WaveletConfig, estimate_lmax
from motion import MotionField, estimate_motion, train_precision
from entropy import quantize, dequantize, pack_rlgr, unpack_rlgr
from arith import LaplaceStreamEncoder, LaplaceStreamDecoder
from synth import frame_cloud, training_pairs
from errors import (
    VoxmoError, DimensionError, GridMismatchError, MalformedStreamError, DecodeError, EmptyInputError,
    ContainerError, HeaderError, VersionError, TruncatedPayloadError, BlockDecodeError,
)

logger = log.get("codec")

MAGIC = b"VXMO"
VERSION = 1

I_FRAME, P_FRAME = "I", "P"
_FRAME_CODES = {I_FRAME : 0, P_FRAME : 1}

class CodecConfig:
    """Every encoder parameter; `None` values fall back to `settings`.

    Parameters
    ----------
    k : int
        Graph neighbors for motion graphs and color block graphs.

    scales, degree, partition : int
        Wavelet scale count, Chebyshev degree and spectrum partition factor.

    mu, clusters, percentile : float, int, float
        Motion smoothing weight, sparse cluster count and score-threshold percentile.

    delta_motion, delta_color : float
        Quantizer stepsizes of motion coefficients and color coefficients.

    decay, dc_constant, ac_constant : float
        Diversity update decay and the DC / AC diversity seed constants.

    block, neighbors, gop : int
        Color block edge, color prediction neighbors and I-frame period (0: first frame only).

    precision : motion.PrecisionModel, optional
        Descriptor precision; trained from the first frame when absent.
    """
    def __init__(self, k=None, scales=None, degree=None, partition=None, mu=None, clusters=None,
                 percentile=None, delta_motion=None, delta_color=None, decay=None, dc_constant=None,
                 ac_constant=None, block=None, neighbors=None, gop=None, precision=None):
        self.k = settings.KNN_NEIGHBORS if k is None else int(k)
        self.scales = settings.WAVELET_SCALES if scales is None else int(scales)
        self.degree = settings.CHEBYSHEV_DEGREE if degree is None else int(degree)
        self.partition = settings.SPECTRUM_PARTITION if partition is None else float(partition)
        self.mu = settings.MOTION_SMOOTHING if mu is None else float(mu)
        self.clusters = settings.SPARSE_CLUSTERS if clusters is None else int(clusters)
        self.percentile = settings.THRESHOLD_PERCENTILE if percentile is None else float(percentile)
        self.delta_motion = settings.DELTA_MOTION if delta_motion is None else float(delta_motion)
        self.delta_color = settings.DELTA_COLOR if delta_color is None else float(delta_color)
        self.decay = settings.DIVERSITY_DECAY if decay is None else float(decay)
        self.dc_constant = settings.DC_CONSTANT if dc_constant is None else float(dc_constant)
        self.ac_constant = settings.AC_CONSTANT if ac_constant is None else float(ac_constant)
        self.block = settings.COLOR_BLOCK if block is None else int(block)
        self.neighbors = settings.COLOR_NEIGHBORS if neighbors is None else int(neighbors)
        self.gop = settings.GOP_LENGTH if gop is None else int(gop)
        self.precision = precision

    def frame_type(self, index):
        if index == 0 or (self.gop > 0 and index % self.gop == 0):
            return I_FRAME
        return P_FRAME

class SequenceHeader:
    """Everything the decoder needs besides the frame records."""
    _FIXED = struct.Struct("<4sH3ddBHB")
    _TAIL = struct.Struct("<dHdddddHBII")

    def __init__(self, grid, wavelets, k, delta_motion, delta_color, decay, dc_constant, ac_constant,
                 block, neighbors, frame_count, gop):
        self.grid = grid
        self.wavelets = wavelets
        self.k = k
        self.delta_motion = delta_motion
        self.delta_color = delta_color
        self.decay = decay
        self.dc_constant = dc_constant
        self.ac_constant = ac_constant
        self.block = block
        self.neighbors = neighbors
        self.frame_count = frame_count
        self.gop = gop

    def to_bytes(self):
        head = self._FIXED.pack(MAGIC, VERSION, *self.grid.origin, self.grid.stepsize, self.grid.depth,
                                self.k, len(self.wavelets.scales))
        scales = struct.pack(f"<{len(self.wavelets.scales)}d", *self.wavelets.scales)
        tail = self._TAIL.pack(self.wavelets.cutoff, self.wavelets.degree, self.delta_motion, self.delta_color,
                               self.decay, self.dc_constant, self.ac_constant, self.block, self.neighbors,
                               self.frame_count, self.gop)
        return head + scales + tail

    @classmethod
    def from_bytes(cls, data):
        """Parses a header from the start of `data`; returns it with its byte length."""
        if len(data) < cls._FIXED.size:
            raise HeaderError(f"container of {len(data)} bytes is too short for a header")
        magic, version, ox, oy, oz, stepsize, depth, k, count = cls._FIXED.unpack_from(data, 0)
        if magic != MAGIC:
            raise HeaderError(f"bad magic {magic!r}")
        if version != VERSION:
            raise VersionError(f"container version {version} is not supported (expected {VERSION})")
        offset = cls._FIXED.size
        if len(data) < offset + 8 * count + cls._TAIL.size:
            raise HeaderError("container header is truncated")
        scales = struct.unpack_from(f"<{count}d", data, offset)
        offset += 8 * count
        (cutoff, degree, delta_motion, delta_color, decay, dc_constant, ac_constant,
         block, neighbors, frame_count, gop) = cls._TAIL.unpack_from(data, offset)
        offset += cls._TAIL.size
        try:
            grid = VoxelGrid((ox, oy, oz), stepsize, depth)
            wavelets = WaveletConfig(scales, cutoff, degree)
        except VoxmoError as exc:
            raise HeaderError(f"invalid header parameters: {exc}") from exc
        header = cls(grid, wavelets, k, delta_motion, delta_color, decay, dc_constant, ac_constant,
                     block, neighbors, frame_count, gop)
        return header, offset

class EncodedFrame:
    """Payloads of one frame and its encoder-side statistics.

    Attributes
    ----------
    stats : dict
        Payload bits, decoded vertex count, clamped warp count and sparse match count.

    prediction : np.Array or None
        Predicted colors of P-frames; encoder-side only, never serialized.
    """
    _LENGTH = struct.Struct("<I")

    def __init__(self, frame_type, geometry, motion, color, stats=None, prediction=None):
        if frame_type == I_FRAME and motion:
            raise ContainerError("I-frames carry no motion payload")
        self.frame_type = frame_type
        self.geometry = geometry
        self.motion = motion
        self.color = color
        self.stats = stats or {}
        self.prediction = prediction

    @property
    def payload_bits(self):
        return 8 * (len(self.geometry) + len(self.motion) + len(self.color))

    def to_bytes(self):
        record = bytes([_FRAME_CODES[self.frame_type]])
        for payload in (self.geometry, self.motion, self.color):
            record += self._LENGTH.pack(len(payload)) + payload
        return record

    @classmethod
    def from_bytes(cls, data, offset, index):
        """Parses the record of frame `index` at `offset`; returns it with the offset past it."""
        if offset >= len(data):
            raise TruncatedPayloadError(index, f"container ends before frame {index}")
        codes = {code : kind for kind, code in _FRAME_CODES.items()}
        if data[offset] not in codes:
            raise ContainerError(f"frame {index} has unknown type byte {data[offset]}")
        frame_type = codes[data[offset]]
        offset += 1
        payloads = []
        for _ in range(3):
            if offset + cls._LENGTH.size > len(data):
                raise TruncatedPayloadError(index)
            length, = cls._LENGTH.unpack_from(data, offset)
            offset += cls._LENGTH.size
            if offset + length > len(data):
                raise TruncatedPayloadError(index)
            payloads.append(bytes(data[offset:offset + length]))
            offset += length
        return cls(frame_type, *payloads), offset

def _coordinates(payload, count, offset=0):
    """Splits three count-prefixed RLGR streams, one per coordinate."""
    streams = []
    for axis in range(3):
        if len(payload) - offset < 4:
            raise MalformedStreamError(offset, f"motion payload lacks coordinate {axis}")
        length, = struct.unpack_from("<I", payload, offset)
        values = unpack_rlgr(payload[offset + 4:offset + 4 + length])
        if len(values) != count:
            raise DimensionError(f"coordinate {axis} holds {len(values)} values for {count} vertices")
        streams.append(values)
        offset += 4 + length
    if offset != len(payload):
        raise MalformedStreamError(offset, f"{len(payload) - offset} surplus motion bytes")
    return np.stack(streams, axis=1)

def _pack_coordinates(symbols):
    payload = b""
    for axis in range(3):
        stream = pack_rlgr(symbols[:, axis])
        payload += struct.pack("<I", len(stream)) + stream
    return payload

def _check_field(spectrum, field):
    if len(field) != spectrum.n:
        raise DimensionError(f"{field} does not match {spectrum}")

def quantize_motion(spectrum, field, delta):
    """GFT-domain quantization of a motion field; returns the integers and the reconstructed field."""
    _check_field(spectrum, field)
    symbols = quantize(gft(spectrum, field.vectors), delta)
    return symbols, MotionField(inverse_gft(spectrum, dequantize(symbols, delta)))

def encode_motion(spectrum, field, delta):
    """Motion payload: per coordinate, graph Fourier coefficients quantized with `delta` and RLGR-coded.

    Parameters
    ----------
    spectrum : graph.Spectrum
        Spectrum of the reference frame graph, known to both sides.

    field : motion.MotionField

    delta : float
        Quantizer stepsize in grid units.

    Returns
    -------
    bytes
    """
    symbols, _ = quantize_motion(spectrum, field, delta)
    return _pack_coordinates(symbols)

def decode_motion(spectrum, payload, delta):
    symbols = _coordinates(payload, spectrum.n)
    return MotionField(inverse_gft(spectrum, dequantize(symbols, delta)))

def encode_motion_signal_domain(field, delta):
    """Baseline motion payload quantizing the vectors themselves instead of their GFT."""
    return _pack_coordinates(quantize(field.vectors, delta))

def decode_motion_signal_domain(payload, count, delta):
    return MotionField(dequantize(_coordinates(payload, count), delta))

class WarpedFrame:
    """Reference points displaced by a motion field, with their colors and occupied voxels.

    Attributes
    ----------
    clamped : int
        Number of warped points that fell outside the grid and were clamped to its boundary.
    """
    def __init__(self, points, colors, voxel_set, clamped):
        self.points = points
        self.colors = colors
        self.voxel_set = voxel_set
        self.clamped = clamped

    def __len__(self):
        return len(self.points)

    def __str__(self):
        return f"<warped:{len(self)} points, {len(self.voxel_set)} voxels>"

def warp_frame(reference, field):
    """Displaces the reference voxel centers by the decoded motion.

    Returns
    -------
    WarpedFrame
        Warped positions keep the reference colors; their occupied voxels are the cells containing
        them, points outside the grid being clamped to its boundary.
    """
    if len(field) != len(reference):
        raise DimensionError(f"{field} does not match {reference}")
    points = reference.positions + field.vectors
    cells = np.floor(points).astype(np.int64)
    clamped_cells = np.clip(cells, 0, reference.grid.extent - 1)
    clamped = int(np.sum(np.any(cells != clamped_cells, axis=1)))
    if clamped:
        logger.warning(f"Clamped {clamped} warped points to the grid boundary.")
    voxel_set = VoxelSet(reference.grid, morton_encode(clamped_cells, reference.grid.depth))
    colors = reference.colors if reference.colors is not None else np.zeros((len(reference), 3))
    return WarpedFrame(points, colors, voxel_set, clamped)

def _encode_voxel_set(voxel_set):
    # flag byte: 0 for an empty set, then the RLGR-coded octree bytes
    if len(voxel_set) == 0:
        return b"\x00"
    tree = build_octree(voxel_set)
    return b"\x01" + pack_rlgr(np.frombuffer(tree.data, dtype=np.uint8))

def _decode_voxel_set(payload, grid):
    if len(payload) == 0:
        raise MalformedStreamError(0, "geometry payload is empty")
    if payload[0] == 0:
        if len(payload) != 1:
            raise MalformedStreamError(1, "empty-set geometry payload carries data")
        return VoxelSet.empty(grid)
    if payload[0] != 1:
        raise MalformedStreamError(0, f"unknown geometry flag {payload[0]}")
    values = unpack_rlgr(payload, 1)
    if np.any((values < 0) | (values > 255)):
        raise MalformedStreamError(1, "octree symbols outside the byte range")
    return decode_octree(Octree(grid.depth, values.astype(np.uint8).tobytes()), grid).voxel_set

def encode_geometry_intra(voxel_set):
    """Geometry payload of an independently coded frame: the RLGR-coded octree of its voxels."""
    voxel_set = voxel_set.voxel_set if isinstance(voxel_set, VoxelFrame) else voxel_set
    return _encode_voxel_set(voxel_set)

def decode_geometry_intra(payload, grid):
    return _decode_voxel_set(payload, grid)

def encode_geometry_P(warped, target):
    """Geometry payload of a predicted frame: the octree of the XOR of warped and target occupancy.

    An exact prediction gives a one-byte payload flagging the empty difference.
    """
    return _encode_voxel_set(xor_voxel_sets(warped, target))

def decode_geometry_P(warped, payload):
    warped = warped.voxel_set if isinstance(warped, (VoxelFrame, WarpedFrame)) else warped
    return apply_xor(warped, _decode_voxel_set(payload, warped.grid))

def predict_color(warped, positions, neighbors=None):
    """Mean color of the `neighbors` warped points nearest to each target position.

    Parameters
    ----------
    warped : WarpedFrame
        Non-empty warped reference.

    positions : np.Array
        (N, 3) target voxel centers in grid units.

    neighbors : int, optional
        Defaults to `settings.COLOR_NEIGHBORS`.
    """
    if neighbors is None:
        neighbors = settings.COLOR_NEIGHBORS
    if len(warped) == 0:
        raise EmptyInputError("cannot predict colors from an empty warped frame")
    if len(positions) == 0:
        return np.zeros((0, 3))
    nearest = nearest_neighbors(warped.points, positions, neighbors)
    return np.asarray(warped.colors, dtype=np.float64)[nearest].mean(axis=1)

def _round(value):
    return float(np.sign(value) * np.floor(abs(value) + 0.5))

def _blocks(voxel_set, block):
    """Contiguous runs of the Morton-ordered voxels sharing one block of edge `block`."""
    extent = voxel_set.grid.extent
    if block < 1 or block & (block - 1) or extent % block:
        raise GridMismatchError(f"color block edge {block} must be a power of two dividing {extent}")
    ids = voxel_set.codes >> (3 * (block.bit_length() - 1))
    starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]]) if len(ids) else np.zeros(0, dtype=np.int64)
    stops = np.r_[starts[1:], len(ids)]
    return list(zip(starts.tolist(), stops.tolist()))

class _ColorContext:
    """Block spectra and diversity seeds shared by color encoding and decoding."""
    def __init__(self, voxel_set, block, k, dc_constant, ac_constant):
        self.runs = _blocks(voxel_set, block)
        self.positions = voxel_set.centers
        self.k = k
        self.dc_constant = dc_constant
        self.ac_constant = ac_constant

    def spectrum(self, start, stop):
        return eigendecompose(build_knn_graph(self.positions[start:stop], self.k), limit=None)

    def seeds(self, spectrum):
        sizes = np.bincount(spectrum.labels, minlength=spectrum.components)
        dc = self.dc_constant / sizes
        ac = self.ac_constant / np.sqrt(np.maximum(spectrum.eigenvalues[spectrum.components:], 1e-12))
        return sizes, dc, ac

class _DcPredictor:
    """Running mean of decoded per-component mean residuals within one channel."""
    def __init__(self):
        self.total = 0.0
        self.count = 0

    def predict(self, size, delta):
        mean = self.total / self.count if self.count else 0.0
        return _round(mean * np.sqrt(size) / delta)

    def update(self, value, size, delta):
        self.total += value * delta / np.sqrt(size)
        self.count += 1

_DC, _AC = 0, 1

def _code_color(colors, predicted, voxel_set, delta, block, k, decay, dc_constant, ac_constant):
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1, 3)
    if len(colors) != len(voxel_set) or len(predicted) != len(voxel_set):
        raise DimensionError(f"{len(colors)} colors and {len(predicted)} predictions for {len(voxel_set)} voxels")
    context = _ColorContext(voxel_set, block, k, dc_constant, ac_constant)
    streams = [LaplaceStreamEncoder(decay) for _ in range(3)]
    predictors = [_DcPredictor() for _ in range(3)]
    residual = np.zeros_like(colors)
    for start, stop in context.runs:
        spectrum = context.spectrum(start, stop)
        sizes, dc_seeds, ac_seeds = context.seeds(spectrum)
        coefficients = gft(spectrum, colors[start:stop] - predicted[start:stop])
        symbols = quantize(coefficients, delta)
        for channel in range(3):
            for component, size in enumerate(sizes.tolist()):
                value = int(symbols[component, channel])
                streams[channel].encode(value - predictors[channel].predict(size, delta), dc_seeds[component], _DC)
                predictors[channel].update(value, size, delta)
            for value, seed in zip(symbols[spectrum.components:, channel].tolist(), ac_seeds.tolist()):
                streams[channel].encode(value, seed, _AC)
        residual[start:stop] = inverse_gft(spectrum, dequantize(symbols, delta))
    payload = b"".join(struct.pack("<I", len(data)) + data for data in (s.finish() for s in streams))
    return payload, np.clip(predicted + residual, 0.0, 255.0)

def encode_color(colors, predicted, voxel_set, delta, block=None, k=None, decay=None,
                 dc_constant=None, ac_constant=None):
    """Color payload: per block and channel, the quantized graph Fourier coefficients of the residual.

    Parameters
    ----------
    colors, predicted : np.Array
        (N, 3) target colors and their prediction (zeros for intra coding).

    voxel_set : voxels.VoxelSet
        Decoded target geometry in canonical order.

    delta : float
        Color quantizer stepsize.

    block, k, decay, dc_constant, ac_constant : optional
        Block edge, block graph neighbors, diversity decay and DC / AC seed constants;
        defaults from `settings`.

    Returns
    -------
    bytes
        One range-coded stream per channel, each prefixed by its u32 length.
    """
    block = settings.COLOR_BLOCK if block is None else block
    k = settings.KNN_NEIGHBORS if k is None else k
    dc_constant = settings.DC_CONSTANT if dc_constant is None else dc_constant
    ac_constant = settings.AC_CONSTANT if ac_constant is None else ac_constant
    payload, _ = _code_color(colors, predicted, voxel_set, delta, block, k, decay, dc_constant, ac_constant)
    return payload

def decode_color(payload, predicted, voxel_set, delta, block=None, k=None, decay=None,
                 dc_constant=None, ac_constant=None):
    """Reconstructed colors, clipped to [0, 255].

    Raises
    ------
    BlockDecodeError
        Naming the first block whose coefficients cannot be decoded.
    """
    block = settings.COLOR_BLOCK if block is None else block
    k = settings.KNN_NEIGHBORS if k is None else k
    dc_constant = settings.DC_CONSTANT if dc_constant is None else dc_constant
    ac_constant = settings.AC_CONSTANT if ac_constant is None else ac_constant
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1, 3)
    context = _ColorContext(voxel_set, block, k, dc_constant, ac_constant)
    streams, offset = [], 0
    for channel in range(3):
        if len(payload) - offset < 4:
            raise BlockDecodeError(0, f"color payload lacks channel {channel}")
        length, = struct.unpack_from("<I", payload, offset)
        if offset + 4 + length > len(payload):
            raise BlockDecodeError(0, f"color stream of channel {channel} is truncated")
        try:
            streams.append(LaplaceStreamDecoder(payload[offset + 4:offset + 4 + length], decay))
        except DecodeError as exc:
            raise BlockDecodeError(0, f"color stream of channel {channel} is malformed: {exc}") from exc
        offset += 4 + length
    predictors = [_DcPredictor() for _ in range(3)]
    residual = np.zeros_like(predicted)
    for index, (start, stop) in enumerate(context.runs):
        spectrum = context.spectrum(start, stop)
        sizes, dc_seeds, ac_seeds = context.seeds(spectrum)
        symbols = np.zeros((spectrum.n, 3), dtype=np.int64)
        try:
            for channel in range(3):
                for component, size in enumerate(sizes.tolist()):
                    value = streams[channel].decode(dc_seeds[component], _DC) + predictors[channel].predict(size, delta)
                    symbols[component, channel] = value
                    predictors[channel].update(value, size, delta)
                for row, seed in enumerate(ac_seeds.tolist(), start=spectrum.components):
                    symbols[row, channel] = streams[channel].decode(seed, _AC)
        except DecodeError as exc:
            raise BlockDecodeError(index, f"color block {index} cannot be decoded: {exc}") from exc
        residual[start:stop] = inverse_gft(spectrum, dequantize(symbols, delta))
    return np.clip(predicted + residual, 0.0, 255.0)

def _intra_colors(frame):
    return frame.colors if frame.colors is not None else np.zeros((len(frame), 3))

def plan_wavelets(frame, config):
    """Wavelets of the configured precision model, or scales placed for the spectrum of the first frame graph."""
    model = config.precision
    if model is not None and model.wavelets is not None:
        if len(model.wavelets.scales) != config.scales or model.wavelets.degree != config.degree:
            logger.warning(f"Using the {model.wavelets} the precision model was trained with instead of "
                           f"{config.scales} scales at degree {config.degree}.")
        return model.wavelets
    return WaveletConfig.for_lmax(estimate_lmax(build_knn_graph(frame, config.k)), config.scales, config.degree, config.partition)

def resolve_precision(frame, config, wavelets):
    """The configured precision model, or one trained on rigid transforms of `frame`."""
    if config.precision is not None:
        return config.precision
    logger.info("No precision model supplied; training one on the first frame...")
    sources, targets = training_pairs(frame_cloud(frame), frame.grid, settings.TRAINING_TRANSFORMS, wavelets, config.k)
    config.precision = train_precision(zip(sources, targets), provenance="first-frame", wavelets=wavelets)
    return config.precision

def encode_frames(frames, config=None):
    """Encodes a sequence in closed loop.

    Parameters
    ----------
    frames : list of voxels.VoxelFrame
        At least one non-empty frame, all on one grid, with colors.

    config : CodecConfig, optional

    Returns
    -------
    (SequenceHeader, list of EncodedFrame, list of voxels.VoxelFrame)
        The header, the encoded frames and the frames as the decoder will reconstruct them.
    """
    if config is None:
        config = CodecConfig()
    if not frames:
        raise EmptyInputError("cannot encode an empty sequence")
    grid = frames[0].grid
    for frame in frames:
        if frame.grid != grid:
            raise GridMismatchError(f"frames lie on different grids: {grid} vs {frame.grid}")
        if len(frame) == 0:
            raise EmptyInputError("cannot encode an empty frame")
    wavelets = plan_wavelets(frames[0], config)
    header = SequenceHeader(grid, wavelets, config.k, config.delta_motion, config.delta_color, config.decay,
                            config.dc_constant, config.ac_constant, config.block, config.neighbors,
                            len(frames), config.gop)
    model = config.precision
    color_options = (config.block, config.k, config.decay, config.dc_constant, config.ac_constant)
    encoded, decoded = [], []
    for index, frame in enumerate(frames):
        logger.info(f"Encoding frame {index} ({frame})...")
        stats = {"vertices" : len(frame), "clamped" : 0, "sparse_matches" : 0}
        if config.frame_type(index) == I_FRAME:
            geometry = encode_geometry_intra(frame.voxel_set)
            predicted = np.zeros((len(frame), 3))
            color, colors = _code_color(_intra_colors(frame), predicted, frame.voxel_set, config.delta_color, *color_options)
            record = EncodedFrame(I_FRAME, geometry, b"", color, stats)
        else:
            if model is None:
                model = resolve_precision(frames[0], config, wavelets)
            reference = decoded[-1]
            graph = build_knn_graph(reference, config.k)
            spectrum = eigendecompose(graph)
            field, diagnostics = estimate_motion(reference, frame, model, wavelets, config.k, config.mu,
                                                 config.clusters, percentile=config.percentile, reference_graph=graph)
            symbols, field = quantize_motion(spectrum, field, config.delta_motion)
            motion = _pack_coordinates(symbols)
            warped = warp_frame(reference, field)
            geometry = encode_geometry_P(warped.voxel_set, frame.voxel_set)
            predicted = predict_color(warped, frame.positions, config.neighbors)
            color, colors = _code_color(_intra_colors(frame), predicted, frame.voxel_set, config.delta_color, *color_options)
            stats.update({"clamped" : warped.clamped, "sparse_matches" : diagnostics["sparse_matches"]})
            record = EncodedFrame(P_FRAME, geometry, motion, color, stats, predicted)
        stats.update({
            "geometry_bits" : 8 * len(record.geometry),
            "motion_bits" : 8 * len(record.motion),
            "color_bits" : 8 * len(record.color),
        })
        encoded.append(record)
        decoded.append(VoxelFrame(frame.voxel_set, colors))
        logger.info(f"Encoded frame {index} as {record.frame_type}: {record.payload_bits} payload bits.")
    return header, encoded, decoded

def encode_sequence(frames, config=None):
    """Container bytes of a sequence; see `encode_frames`."""
    header, encoded, _ = encode_frames(frames, config)
    return header.to_bytes() + b"".join(record.to_bytes() for record in encoded)

def read_container(data):
    """Parses the header and frame records of a container without decoding payloads."""
    header, offset = SequenceHeader.from_bytes(data)
    records = []
    for index in range(header.frame_count):
        record, offset = EncodedFrame.from_bytes(data, offset, index)
        records.append(record)
    if offset != len(data):
        raise ContainerError(f"{len(data) - offset} surplus bytes after the last frame")
    return header, records

def decode_sequence(data):
    """Decodes container bytes into frames.

    Raises
    ------
    HeaderError, VersionError, TruncatedPayloadError, BlockDecodeError, ContainerError
        On a corrupt header, an unsupported version, truncated records or undecodable payloads.
    """
    header, records = read_container(data)
    color_options = (header.block, header.k, header.decay, header.dc_constant, header.ac_constant)
    frames = []
    for index, record in enumerate(records):
        logger.info(f"Decoding frame {index} ({record.frame_type})...")
        try:
            if record.frame_type == I_FRAME:
                voxel_set = decode_geometry_intra(record.geometry, header.grid)
                predicted = np.zeros((len(voxel_set), 3))
            else:
                if not frames:
                    raise ContainerError("the first frame must be an I-frame")
                reference = frames[-1]
                spectrum = eigendecompose(build_knn_graph(reference, header.k))
                field = decode_motion(spectrum, record.motion, header.delta_motion)
                warped = warp_frame(reference, field)
                voxel_set = decode_geometry_P(warped.voxel_set, record.geometry)
                predicted = predict_color(warped, voxel_set.centers, header.neighbors)
            colors = decode_color(record.color, predicted, voxel_set, header.delta_color, *color_options)
        except BlockDecodeError as exc:
            raise BlockDecodeError(exc.block_index, f"frame {index}: {exc}") from exc
        except ContainerError:
            raise
        except VoxmoError as exc:
            raise ContainerError(f"frame {index} cannot be decoded: {exc}") from exc
        frames.append(VoxelFrame(voxel_set, colors))
    logger.info(f"Decoded {len(frames)} frames.")
    return frames
