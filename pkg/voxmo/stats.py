"""Rate and distortion statistics of coded sequences, and the comparison experiments built on them."""

import numpy as np
import pandas as pd
import log, settings
from graph import build_knn_graph, eigendecompose
from motion import MotionField, estimate_motion
from entropy import quantize, dequantize
from codec import (
    CodecConfig, I_FRAME, encode_frames, plan_wavelets, resolve_precision, quantize_motion, warp_frame,
    predict_color, encode_geometry_intra, encode_geometry_P, encode_motion, encode_motion_signal_domain,
)
from errors import DimensionError, EmptyInputError

logger = log.get("stats")

def _capped(ratio_db):
    return min(float(ratio_db), settings.SNR_CAP)

def psnr(original, decoded, peak=None):
    """Per-channel PSNR in dB of (N, C) colors; a perfect channel reports `settings.SNR_CAP`.

    Returns
    -------
    np.Array
        (C,) PSNR values.
    """
    if peak is None:
        peak = settings.PEAK
    original = np.asarray(original, dtype=np.float64)
    decoded = np.asarray(decoded, dtype=np.float64)
    if original.shape != decoded.shape:
        raise DimensionError(f"cannot compare colors of shapes {original.shape} and {decoded.shape}")
    if len(original) == 0:
        raise EmptyInputError("PSNR of zero vertices")
    mse = np.mean((original - decoded) ** 2, axis=0)
    with np.errstate(divide="ignore"):
        values = 10.0 * np.log10(peak ** 2 / mse)
    return np.minimum(values, settings.SNR_CAP)

def snr(signal, approximation):
    """20 log10 of the norm of `signal` over the norm of the error, capped at `settings.SNR_CAP`."""
    signal = np.asarray(signal, dtype=np.float64)
    error = np.linalg.norm(signal - np.asarray(approximation, dtype=np.float64))
    if error == 0.0:
        return settings.SNR_CAP
    norm = np.linalg.norm(signal)
    if norm == 0.0:
        return -settings.SNR_CAP
    return _capped(20.0 * np.log10(norm / error))

# SQNR of a quantized signal uses the same definition
sqnr = snr

def bpv(bits, vertices):
    if vertices <= 0:
        raise EmptyInputError("bits per vertex of zero vertices")
    return bits / vertices

def endpoint_error(estimated, truth):
    """Mean Euclidean distance between estimated and true motion vectors."""
    estimated = estimated.vectors if isinstance(estimated, MotionField) else np.asarray(estimated, dtype=np.float64)
    truth = truth.vectors if isinstance(truth, MotionField) else np.asarray(truth, dtype=np.float64)
    if estimated.shape != truth.shape:
        raise DimensionError(f"cannot compare motion of shapes {estimated.shape} and {truth.shape}")
    return float(np.mean(np.linalg.norm(estimated - truth, axis=1)))

def _colors(frame):
    return frame.colors if frame.colors is not None else np.zeros((len(frame), 3))

# output row construction and headers
frame_header = [
    "frame",
    "type",
    "vertices",
    "geometry_bits",
    "motion_bits",
    "color_bits",
    "geometry_bpv",
    "motion_bpv",
    "color_bpv",
    "total_bpv",
    "psnr_r",
    "psnr_g",
    "psnr_b",
    "psnr_avg",
    "prediction_snr",
]

def frame_row(index, record, original, decoded):
    """Statistics of one coded frame; the prediction SNR is empty for I-frames."""
    vertices = record.stats.get("vertices", len(decoded))
    bits = {
        "geometry_bits" : 8 * len(record.geometry),
        "motion_bits" : 8 * len(record.motion),
        "color_bits" : 8 * len(record.color),
    }
    channels = psnr(_colors(original), _colors(decoded))
    row = {"frame" : index, "type" : record.frame_type, "vertices" : vertices}
    row.update(bits)
    row.update({
        "geometry_bpv" : bpv(bits["geometry_bits"], vertices),
        "motion_bpv" : bpv(bits["motion_bits"], vertices),
        "color_bpv" : bpv(bits["color_bits"], vertices),
        "total_bpv" : bpv(record.payload_bits, vertices),
        "psnr_r" : channels[0],
        "psnr_g" : channels[1],
        "psnr_b" : channels[2],
        "psnr_avg" : float(np.mean(channels)),
        "prediction_snr" : np.nan if record.prediction is None else snr(_colors(original), record.prediction),
    })
    return row

def sequence_rows(frames, encoded, decoded):
    return [frame_row(index, *entry) for index, entry in enumerate(zip(encoded, frames, decoded))]

def write_csv(rows, header, filepath):
    """Writes rows with the columns of `header`, in that order."""
    logger.info(f"Writing {len(rows)} rows to {filepath}...")
    pd.DataFrame(rows, columns=header).to_csv(filepath, index=False)

def summarize(rows):
    """Sequence aggregates: mean bpv of every stream and mean PSNR over frames."""
    table = pd.DataFrame(rows, columns=frame_header)
    return {
        "frames" : len(table),
        "geometry_bpv" : float(table["geometry_bpv"].mean()),
        "motion_bpv" : float(table["motion_bpv"].mean()),
        "color_bpv" : float(table["color_bpv"].mean()),
        "total_bpv" : float(table["total_bpv"].mean()),
        "psnr_avg" : float(table["psnr_avg"].mean()),
    }

rd_header = [
    "delta_motion",
    "delta_color",
    "geometry_bpv",
    "motion_bpv",
    "color_bpv",
    "total_bpv",
    "psnr_avg",
]

def _with(config, **changes):
    options = dict(vars(config))
    options.update(changes)
    return CodecConfig(**options)

def rd_sweep(frames, config=None, color_ladder=None, motion_ladder=None):
    """Encodes the sequence once per (motion step, color step) pair.

    Returns
    -------
    list of dict
        One row per pair with mean bpv per stream and mean PSNR over frames.
    """
    if config is None:
        config = CodecConfig()
    color_ladder = settings.DELTA_COLOR_LADDER if color_ladder is None else color_ladder
    motion_ladder = settings.DELTA_MOTION_LADDER if motion_ladder is None else motion_ladder
    if config.precision is None and len(frames) > 1 and any(config.frame_type(i) != I_FRAME for i in range(len(frames))):
        resolve_precision(frames[0], config, plan_wavelets(frames[0], config))
    rows = []
    for delta_motion in motion_ladder:
        for delta_color in color_ladder:
            logger.info(f"Sweeping delta_motion {delta_motion}, delta_color {delta_color}...")
            point = _with(config, delta_motion=delta_motion, delta_color=delta_color)
            _, encoded, decoded = encode_frames(frames, point)
            summary = summarize(sequence_rows(frames, encoded, decoded))
            row = {"delta_motion" : delta_motion, "delta_color" : delta_color}
            row.update({key : summary[key] for key in rd_header[2:]})
            rows.append(row)
    return rows

def estimated_motions(frames, config):
    """Estimated motion of every consecutive pair of source frames."""
    if len(frames) < 2:
        raise EmptyInputError("comparisons need at least two frames")
    wavelets = plan_wavelets(frames[0], config)
    model = resolve_precision(frames[0], config, wavelets)
    for index in range(len(frames) - 1):
        reference, target = frames[index], frames[index + 1]
        graph = build_knn_graph(reference, config.k)
        field, _ = estimate_motion(reference, target, model, wavelets, config.k, config.mu,
                                   config.clusters, percentile=config.percentile, reference_graph=graph)
        yield index, reference, target, graph, field

prediction_header = ["predictor", "snr_db"]

PREDICTORS = ("motion-compensated", "static-nearest", "global-mean")

def prediction_comparison(frames, config=None):
    """Average color prediction SNR over consecutive pairs for three predictors.

    The predictors are the neighbors of each target vertex in the warped previous frame, its
    neighbors in the unwarped previous frame, and the mean color of the previous frame.
    """
    if config is None:
        config = CodecConfig()
    scores = {name : [] for name in PREDICTORS}
    for index, reference, target, graph, field in estimated_motions(frames, config):
        actual = _colors(target)
        warped = warp_frame(reference, field)
        scores["motion-compensated"].append(snr(actual, predict_color(warped, target.positions, config.neighbors)))
        static = warp_frame(reference, MotionField.zeros(len(reference)))
        scores["static-nearest"].append(snr(actual, predict_color(static, target.positions, config.neighbors)))
        mean = np.broadcast_to(_colors(reference).mean(axis=0), actual.shape)
        scores["global-mean"].append(snr(actual, mean))
        logger.info(f"Pair {index}: " + ", ".join(f"{name} {values[-1]:.2f} dB" for name, values in scores.items()))
    return [{"predictor" : name, "snr_db" : float(np.mean(scores[name]))} for name in PREDICTORS]

geometry_header = [
    "frame",
    "delta_motion",
    "vertices",
    "intra_bits",
    "xor_bits_static",
    "xor_bits_compensated",
    "motion_bits",
    "motion_bpv",
]

def geometry_comparison(frames, config=None, deltas=None):
    """Geometry bits of every predicted frame under three coders, over a ladder of motion steps.

    The coders are the intra octree of the frame, the XOR against the previous frame, and the XOR
    against the previous frame warped by the quantized motion (whose bits are reported apart).
    """
    if config is None:
        config = CodecConfig()
    deltas = settings.DELTA_MOTION_LADDER if deltas is None else deltas
    rows = []
    for index, reference, target, graph, field in estimated_motions(frames, config):
        spectrum = eigendecompose(graph)
        intra = 8 * len(encode_geometry_intra(target.voxel_set))
        static = 8 * len(encode_geometry_P(reference.voxel_set, target.voxel_set))
        for delta in deltas:
            _, decoded_field = quantize_motion(spectrum, field, delta)
            motion = 8 * len(encode_motion(spectrum, field, delta))
            warped = warp_frame(reference, decoded_field)
            rows.append({
                "frame" : index + 1,
                "delta_motion" : delta,
                "vertices" : len(target),
                "intra_bits" : intra,
                "xor_bits_static" : static,
                "xor_bits_compensated" : 8 * len(encode_geometry_P(warped.voxel_set, target.voxel_set)),
                "motion_bits" : motion,
                "motion_bpv" : bpv(motion, len(target)),
            })
    return rows

motion_coding_header = [
    "field",
    "delta_motion",
    "domain",
    "bits",
    "bpv",
    "sqnr",
]

def motion_coding_comparison(fields, deltas=None, k=None):
    """Rate and SQNR of graph Fourier versus signal-domain coding of motion fields.

    Parameters
    ----------
    fields : list of (voxels.VoxelFrame or np.Array, MotionField or np.Array)
        Frames or (N, 3) positions, each with a motion field on its vertices.

    deltas : list of float, optional
        Quantizer steps. Defaults to `settings.DELTA_MOTION_LADDER`.

    k : int, optional
        Graph neighbors. Defaults to `settings.KNN_NEIGHBORS`.
    """
    deltas = settings.DELTA_MOTION_LADDER if deltas is None else deltas
    rows = []
    for index, (frame, field) in enumerate(fields):
        field = field if isinstance(field, MotionField) else MotionField(field)
        spectrum = eigendecompose(build_knn_graph(frame, k))
        for delta in deltas:
            _, spectral = quantize_motion(spectrum, field, delta)
            direct = dequantize(quantize(field.vectors, delta), delta)
            for domain, payload, reconstruction in (
                ("graph-fourier", encode_motion(spectrum, field, delta), spectral.vectors),
                ("signal", encode_motion_signal_domain(field, delta), direct),
            ):
                rows.append({
                    "field" : index,
                    "delta_motion" : delta,
                    "domain" : domain,
                    "bits" : 8 * len(payload),
                    "bpv" : bpv(8 * len(payload), len(field)),
                    "sqnr" : sqnr(field.vectors, reconstruction),
                })
    return rows
