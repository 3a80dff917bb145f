import numpy as np
import pytest
from voxels import VoxelGrid, VoxelSet, VoxelFrame
from graph import build_knn_graph, eigendecompose, gft
from motion import MotionField, PrecisionModel
from features import WaveletConfig
from codec import (
    CodecConfig, SequenceHeader, EncodedFrame, WarpedFrame, I_FRAME, P_FRAME, quantize_motion, encode_motion,
    decode_motion, encode_motion_signal_domain, decode_motion_signal_domain, warp_frame, encode_geometry_intra,
    decode_geometry_intra, encode_geometry_P, decode_geometry_P, predict_color, encode_color, decode_color,
    encode_frames, encode_sequence, decode_sequence, read_container,
)
from errors import (
    DimensionError, GridMismatchError, MalformedStreamError, EmptyInputError, HeaderError, VersionError,
    TruncatedPayloadError, BlockDecodeError, ContainerError,
)

def _color_bound(voxel_set, delta, block=16):
    # per block, the residual error is at most delta / 2 times the square root of its size
    ids = voxel_set.codes >> (3 * (block.bit_length() - 1))
    sizes = np.bincount(np.unique(ids, return_inverse=True)[1].reshape(-1))
    return delta / 2 * np.sqrt(sizes.max()) + 1e-9

def test_gop_schedules_intra_frames():
    assert [CodecConfig(gop=0).frame_type(i) for i in range(4)] == [I_FRAME, P_FRAME, P_FRAME, P_FRAME]
    assert [CodecConfig(gop=2).frame_type(i) for i in range(5)] == [I_FRAME, P_FRAME, I_FRAME, P_FRAME, I_FRAME]

def test_zero_motion_codes_to_zero(lattice):
    spectrum = eigendecompose(build_knn_graph(lattice))
    payload = encode_motion(spectrum, MotionField.zeros(64), 0.5)
    assert np.allclose(decode_motion(spectrum, payload, 0.5).vectors, 0.0)

def test_constant_motion_has_a_single_coefficient(lattice):
    spectrum = eigendecompose(build_knn_graph(lattice))
    field = MotionField(np.tile([5.0, 0.0, 0.0], (64, 1)))
    symbols, decoded = quantize_motion(spectrum, field, 1.0)
    assert np.count_nonzero(symbols) == 1
    assert symbols[0, 0] == 40
    assert np.allclose(decoded.vectors, field.vectors)

def test_spectral_coefficients_are_within_half_a_step(lattice, rng):
    spectrum = eigendecompose(build_knn_graph(lattice))
    field = MotionField(rng.normal(scale=3.0, size=(64, 3)))
    for delta in (0.25, 1.0, 4.0):
        decoded = decode_motion(spectrum, encode_motion(spectrum, field, delta), delta)
        error = gft(spectrum, decoded.vectors) - gft(spectrum, field.vectors)
        assert np.max(np.abs(error)) <= delta / 2 + 1e-9

def test_spectral_coding_beats_signal_domain_on_smooth_motion(lattice):
    spectrum = eigendecompose(build_knn_graph(lattice))
    field = MotionField(np.tile([5.0, -2.0, 1.0], (64, 1)))
    spectral = encode_motion(spectrum, field, 1.0)
    direct = encode_motion_signal_domain(field, 1.0)
    assert len(spectral) < len(direct)
    assert np.allclose(decode_motion_signal_domain(direct, 64, 1.0).vectors, field.vectors)

def test_motion_payload_must_match_the_spectrum(lattice):
    spectrum = eigendecompose(build_knn_graph(lattice))
    with pytest.raises(DimensionError):
        encode_motion(spectrum, MotionField.zeros(10), 1.0)
    payload = encode_motion_signal_domain(MotionField.zeros(10), 1.0)
    with pytest.raises(DimensionError):
        decode_motion(spectrum, payload, 1.0)

def test_warp_with_zero_motion_is_the_reference(lattice):
    warped = warp_frame(lattice, MotionField.zeros(64))
    assert warped.voxel_set == lattice.voxel_set
    assert np.array_equal(warped.colors, lattice.colors)
    assert warped.clamped == 0

def test_integer_translation_moves_the_voxels(lattice):
    warped = warp_frame(lattice, MotionField(np.tile([1.0, 0.0, 0.0], (64, 1))))
    assert warped.voxel_set == VoxelSet.from_voxels(lattice.grid, lattice.voxels + [1, 0, 0])

def test_random_motion_can_merge_but_never_split(lattice, rng):
    warped = warp_frame(lattice, MotionField(rng.uniform(-0.7, 0.7, size=(64, 3))))
    assert len(warped.voxel_set) <= len(lattice)

def test_points_leaving_the_grid_are_clamped(lattice):
    vectors = np.zeros((64, 3))
    vectors[0] = [-100.0, 0.0, 0.0]
    warped = warp_frame(lattice, MotionField(vectors))
    assert warped.clamped == 1
    assert (0, 4, 4) in warped.voxel_set.as_tuples()

def test_intra_geometry_round_trips(lattice, grid):
    assert decode_geometry_intra(encode_geometry_intra(lattice.voxel_set), grid) == lattice.voxel_set
    assert encode_geometry_intra(VoxelSet.empty(grid)) == b"\x00"
    assert len(decode_geometry_intra(b"\x00", grid)) == 0
    with pytest.raises(MalformedStreamError):
        decode_geometry_intra(b"\x07", grid)

def test_identical_geometry_gives_an_empty_difference(lattice):
    assert encode_geometry_P(lattice.voxel_set, lattice.voxel_set) == b"\x00"
    assert decode_geometry_P(lattice.voxel_set, b"\x00") == lattice.voxel_set

def test_predicted_geometry_is_lossless(grid, rng):
    for _ in range(5):
        warped = VoxelSet.from_voxels(grid, rng.integers(0, 16, size=(40, 3)))
        target = VoxelSet.from_voxels(grid, rng.integers(0, 16, size=(30, 3)))
        assert decode_geometry_P(warped, encode_geometry_P(warped, target)) == target

def test_geometry_needs_a_common_grid(lattice):
    with pytest.raises(GridMismatchError):
        encode_geometry_P(lattice.voxel_set, VoxelSet.empty(VoxelGrid(depth=5)))

def _warped(points, colors):
    return WarpedFrame(np.asarray(points, dtype=np.float64), np.asarray(colors, dtype=np.float64), None, 0)

def test_coincident_point_copies_its_color():
    warped = _warped([[0.5, 0.5, 0.5], [3.5, 0.5, 0.5]], [[10, 20, 30], [200, 200, 200]])
    assert np.allclose(predict_color(warped, [[0.5, 0.5, 0.5]], 1), [[10, 20, 30]])

def test_prediction_averages_nearest_neighbors():
    warped = _warped([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 0, 0], [30, 60, 90], [60, 120, 180], [255, 255, 255]])
    assert np.allclose(predict_color(warped, [[0, 0, 0]], 3), [[30, 60, 90]])
    with pytest.raises(EmptyInputError):
        predict_color(_warped(np.zeros((0, 3)), np.zeros((0, 3))), [[0, 0, 0]], 3)

def test_zero_residual_reconstructs_the_prediction(lattice):
    payload = encode_color(lattice.colors, lattice.colors, lattice.voxel_set, 64.0)
    assert np.array_equal(decode_color(payload, lattice.colors, lattice.voxel_set, 64.0), lattice.colors)

def test_single_voxel_block_error_is_at_most_half_a_step(grid):
    voxel_set = VoxelSet.from_voxels(grid, [[3, 3, 3]])
    colors = np.array([[100.0, 37.0, 250.0]])
    payload = encode_color(colors, np.zeros((1, 3)), voxel_set, 32.0)
    decoded = decode_color(payload, np.zeros((1, 3)), voxel_set, 32.0)
    assert np.all(np.abs(decoded - colors) <= 16.0)

def test_color_error_respects_the_block_bound(grid, rng):
    voxel_set = VoxelSet.from_voxels(grid, rng.integers(0, 16, size=(150, 3)))
    colors = rng.uniform(0, 255, size=(len(voxel_set), 3))
    predicted = np.clip(colors + rng.normal(scale=20.0, size=colors.shape), 0, 255)
    for delta in (8.0, 64.0):
        payload = encode_color(colors, predicted, voxel_set, delta, block=8)
        decoded = decode_color(payload, predicted, voxel_set, delta, block=8)
        assert np.all((decoded >= 0) & (decoded <= 255))
        assert np.max(np.abs(decoded - colors)) <= _color_bound(voxel_set, delta, block=8)

def test_color_blocks_must_divide_the_grid(lattice):
    with pytest.raises(GridMismatchError):
        encode_color(lattice.colors, lattice.colors, lattice.voxel_set, 8.0, block=3)
    with pytest.raises(GridMismatchError):
        encode_color(lattice.colors, lattice.colors, lattice.voxel_set, 8.0, block=32)

def test_truncated_color_payload_names_a_block(lattice):
    payload = encode_color(lattice.colors, np.zeros((64, 3)), lattice.voxel_set, 16.0)
    with pytest.raises(BlockDecodeError) as info:
        decode_color(payload[:-3], np.zeros((64, 3)), lattice.voxel_set, 16.0)
    assert info.value.block_index == 0

def test_header_round_trips(grid):
    header = SequenceHeader(grid, WaveletConfig([3.0, 1.5, 0.3], 0.4, 30), 26, 0.5, 64.0, 0.95, 1.0, 1.0, 16, 3, 7, 10)
    parsed, length = SequenceHeader.from_bytes(header.to_bytes() + b"tail")
    assert length == len(header.to_bytes())
    assert parsed.grid == grid and parsed.wavelets == header.wavelets
    assert (parsed.k, parsed.frame_count, parsed.gop, parsed.block) == (26, 7, 10, 16)

def test_single_frame_sequence_is_intra_only(lattice, grid):
    data = encode_sequence([lattice], CodecConfig(delta_color=8.0))
    header, records = read_container(data)
    assert [record.frame_type for record in records] == [I_FRAME]
    assert records[0].motion == b""
    decoded = decode_sequence(data)
    assert decoded[0].voxel_set == lattice.voxel_set
    assert np.max(np.abs(decoded[0].colors - lattice.colors)) <= _color_bound(lattice.voxel_set, 8.0)

def test_sequence_round_trip_is_closed_loop(sphere_sequence, small_config):
    frames = sphere_sequence.frames
    header, encoded, reconstructed = encode_frames(frames, small_config)
    data = header.to_bytes() + b"".join(record.to_bytes() for record in encoded)
    decoded = decode_sequence(data)
    assert [record.frame_type for record in encoded] == [I_FRAME, P_FRAME, P_FRAME]
    for original, mine, theirs in zip(frames, reconstructed, decoded):
        assert theirs.voxel_set == original.voxel_set
        assert np.allclose(theirs.colors, mine.colors, atol=1e-6)
        assert np.max(np.abs(theirs.colors - original.colors)) <= _color_bound(original.voxel_set, small_config.delta_color)
    # payload accounting covers every record byte except its type and length fields
    sizes = [len(record.to_bytes()) for record in encoded]
    assert [record.payload_bits for record in encoded] == [8 * (size - 13) for size in sizes]

def test_reencoding_decoded_frames_reproduces_geometry_and_motion(sphere_sequence, small_config):
    decoded = decode_sequence(encode_sequence(sphere_sequence.frames, small_config))
    _, first, _ = encode_frames(decoded, small_config)
    _, second, _ = encode_frames(decoded, small_config)
    assert [(r.geometry, r.motion) for r in first] == [(r.geometry, r.motion) for r in second]

def test_identical_frames_send_empty_geometry(still_sequence, small_config):
    # a fine color step keeps the decoded reference close enough for every vertex to match itself
    small_config.delta_color = 1e-3
    _, encoded, reconstructed = encode_frames(still_sequence.frames, small_config)
    assert encoded[1].geometry == b"\x00"
    spectrum = eigendecompose(build_knn_graph(reconstructed[0], small_config.k))
    assert np.allclose(decode_motion(spectrum, encoded[1].motion, small_config.delta_motion).vectors, 0.0)

def test_periodic_intra_frames(sphere_sequence, small_config):
    small_config.gop = 2
    _, encoded, _ = encode_frames(sphere_sequence.frames, small_config)
    assert [record.frame_type for record in encoded] == [I_FRAME, P_FRAME, I_FRAME]

def test_encoder_rejects_bad_sequences(lattice):
    with pytest.raises(EmptyInputError):
        encode_frames([])
    other = VoxelFrame(VoxelSet.from_voxels(VoxelGrid(depth=5), [[0, 0, 0]]), [[0, 0, 0]])
    with pytest.raises(GridMismatchError):
        encode_frames([lattice, other])

def test_corrupt_containers_raise_typed_errors(lattice):
    data = encode_sequence([lattice])
    with pytest.raises(HeaderError):
        decode_sequence(b"XXXX" + data[4:])
    with pytest.raises(VersionError):
        decode_sequence(data[:4] + (2).to_bytes(2, "little") + data[6:])
    with pytest.raises(HeaderError):
        decode_sequence(data[:10])
    with pytest.raises(TruncatedPayloadError) as info:
        decode_sequence(data[:-5])
    assert info.value.frame_index == 0
    with pytest.raises(ContainerError):
        decode_sequence(data + b"\x00")

def test_i_frames_carry_no_motion():
    with pytest.raises(ContainerError):
        EncodedFrame(I_FRAME, b"\x00", b"\x01", b"")

def test_encoder_uses_the_wavelets_of_its_precision_model(sphere_sequence):
    wavelets = WaveletConfig([3.0, 1.5], 0.4)
    model = PrecisionModel(np.eye(wavelets.descriptor_length), 0.0, "fixed", wavelets)
    header, encoded, _ = encode_frames(sphere_sequence.frames[:2], CodecConfig(scales=4, precision=model))
    assert header.wavelets == wavelets
    assert decode_sequence(header.to_bytes() + b"".join(record.to_bytes() for record in encoded))[1].voxel_set \
        == sphere_sequence.frames[1].voxel_set
