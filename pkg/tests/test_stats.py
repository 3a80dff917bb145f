import numpy as np
import pandas as pd
import pytest
import settings
import stats
from motion import MotionField
from codec import CodecConfig, I_FRAME, P_FRAME, encode_frames
from errors import DimensionError, EmptyInputError

def test_psnr_of_a_single_full_scale_error():
    original = np.zeros((10, 3))
    decoded = original.copy()
    decoded[4, 1] = 255.0
    values = stats.psnr(original, decoded)
    assert values[1] == pytest.approx(10.0)
    assert values[0] == values[2] == settings.SNR_CAP

def test_psnr_validates_shapes():
    with pytest.raises(DimensionError):
        stats.psnr(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(EmptyInputError):
        stats.psnr(np.zeros((0, 3)), np.zeros((0, 3)))

def test_snr_is_a_norm_ratio_with_a_cap():
    assert stats.snr([3.0, 4.0], [3.0, 4.5]) == pytest.approx(20 * np.log10(5.0 / 0.5))
    assert stats.snr([1.0, 2.0], [1.0, 2.0]) == settings.SNR_CAP
    assert stats.sqnr([10.0], [9.0]) == pytest.approx(20.0)

def test_bits_per_vertex():
    assert stats.bpv(1000, 250) == 4.0
    with pytest.raises(EmptyInputError):
        stats.bpv(10, 0)

def test_endpoint_error_is_a_mean_distance():
    truth = MotionField(np.zeros((2, 3)))
    assert stats.endpoint_error([[3.0, 4.0, 0.0], [0.0, 0.0, 1.0]], truth) == pytest.approx(3.0)
    with pytest.raises(DimensionError):
        stats.endpoint_error(np.zeros((3, 3)), truth)

def test_csv_columns_keep_header_order(tmp_path):
    path = tmp_path / "rows.csv"
    stats.write_csv([{"b" : 2, "a" : 1}], ["a", "b"], path)
    table = pd.read_csv(path)
    assert list(table.columns) == ["a", "b"]
    assert table.iloc[0].tolist() == [1, 2]

def test_frame_rows_account_for_every_payload_bit(sphere_sequence, small_config):
    from codec import encode_frames
    header, encoded, decoded = encode_frames(sphere_sequence.frames, small_config)
    rows = stats.sequence_rows(sphere_sequence.frames, encoded, decoded)
    assert len(rows) == 3
    for row, record in zip(rows, encoded):
        assert list(row) == stats.frame_header
        assert row["geometry_bits"] + row["motion_bits"] + row["color_bits"] == 8 * (len(record.to_bytes()) - 13)
        assert row["total_bpv"] == pytest.approx(row["geometry_bpv"] + row["motion_bpv"] + row["color_bpv"])
    assert np.isnan(rows[0]["prediction_snr"])
    assert not np.isnan(rows[1]["prediction_snr"])
    assert stats.summarize(rows)["frames"] == 3

def test_rd_sweep_is_monotone_in_the_color_step(still_sequence, small_config):
    frames = still_sequence.frames[:1]
    rows = stats.rd_sweep(frames, small_config, color_ladder=[8, 64, 512], motion_ladder=[0.5])
    assert [(row["delta_motion"], row["delta_color"]) for row in rows] == [(0.5, 8), (0.5, 64), (0.5, 512)]
    psnrs = [row["psnr_avg"] for row in rows]
    rates = [row["color_bpv"] for row in rows]
    assert psnrs[0] >= psnrs[1] >= psnrs[2]
    assert rates[0] >= rates[1] >= rates[2]

def test_identical_frames_predict_perfectly(still_sequence, small_config):
    small_config.neighbors = 1
    rows = stats.prediction_comparison(still_sequence.frames, small_config)
    assert [row["predictor"] for row in rows] == list(stats.PREDICTORS)
    scores = {row["predictor"] : row["snr_db"] for row in rows}
    assert scores["motion-compensated"] == settings.SNR_CAP
    assert scores["static-nearest"] == settings.SNR_CAP
    assert scores["global-mean"] < settings.SNR_CAP

def test_comparisons_need_two_frames(still_sequence, small_config):
    with pytest.raises(EmptyInputError):
        stats.prediction_comparison(still_sequence.frames[:1], small_config)

def test_geometry_comparison_rows(sphere_sequence, small_config):
    rows = stats.geometry_comparison(sphere_sequence.frames, small_config, deltas=[0.5, 2.0])
    assert [(row["frame"], row["delta_motion"]) for row in rows] == [(1, 0.5), (1, 2.0), (2, 0.5), (2, 2.0)]
    assert all(list(row) == stats.geometry_header for row in rows)
    assert all(row["xor_bits_static"] > 8 and row["intra_bits"] > 8 for row in rows)
    assert rows[0]["intra_bits"] == rows[1]["intra_bits"]

def test_spectral_motion_coding_wins_on_true_translation(sphere_sequence):
    fields = list(zip(sphere_sequence.frames[:2], sphere_sequence.motions))
    rows = stats.motion_coding_comparison(fields, deltas=[0.25], k=10)
    bits = {(row["field"], row["domain"]) : row["bits"] for row in rows}
    for index in range(2):
        assert bits[(index, "graph-fourier")] < bits[(index, "signal")]

def test_motion_compensation_ranks_first_on_a_moving_sequence(moving_sphere, trained_precision):
    config = CodecConfig(precision=trained_precision, neighbors=1)
    scores = {row["predictor"] : row["snr_db"] for row in stats.prediction_comparison(moving_sphere.frames, config)}
    assert scores["motion-compensated"] > scores["static-nearest"] > scores["global-mean"]

def test_compensated_geometry_costs_no_more_than_static(moving_sphere, trained_precision):
    config = CodecConfig(precision=trained_precision)
    for row in stats.geometry_comparison(moving_sphere.frames, config, deltas=[0.5]):
        assert row["xor_bits_compensated"] <= row["xor_bits_static"]

def test_predicted_colors_cost_fewer_bits_than_intra(moving_sphere, trained_precision):
    bits = {}
    for gop in (0, 1):
        config = CodecConfig(precision=trained_precision, gop=gop)
        _, encoded, _ = encode_frames(moving_sphere.frames, config)
        bits[encoded[1].frame_type] = 8 * len(encoded[1].color)
    assert bits[P_FRAME] < bits[I_FRAME]

def test_motion_sqnr_falls_as_the_step_grows(lattice, rng):
    field = rng.normal(size=(len(lattice), 3))
    deltas = [0.05, 0.1, 0.2, 0.4]
    rows = stats.motion_coding_comparison([(lattice, field)], deltas=deltas, k=6)
    sqnrs = [row["sqnr"] for row in rows if row["domain"] == "graph-fourier"]
    rates = [row["bits"] for row in rows if row["domain"] == "graph-fourier"]
    assert all(later <= earlier for earlier, later in zip(sqnrs, sqnrs[1:]))
    assert all(later <= earlier for earlier, later in zip(rates, rates[1:]))
