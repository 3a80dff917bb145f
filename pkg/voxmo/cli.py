"""Command-line interface for Voxmo."""

import log, settings, stats
import click
import functools
import numpy as np
import pandas as pd
from pathlib import Path
from voxels import VoxelGrid, voxelize
from plyio import read_ply, write_frame
from synth import SyntheticSpec, SHAPES, generate_synthetic, frame_cloud, training_pairs
from motion import train_precision, save_precision, load_precision
from codec import CodecConfig, encode_frames, decode_sequence, read_container, plan_wavelets
from errors import VoxmoError

logger = log.get("cli")

# entry point for the cli
@click.group()
@click.option("--quiet", is_flag=True)
def run(quiet):
    """Entry point for the CLI."""
    # if the quiet flag is passed, disable logging to stdout
    if quiet:
        log.enable_quiet_mode()

def _stack(*decorators):
    def apply(function):
        for decorator in reversed(decorators):
            function = decorator(function)
        return function
    return apply

# frames come from a directory of PLY files or from a synthetic sequence
source_options = _stack(
    click.option("-i", "--input", "input_dir", type=click.Path(exists=True, file_okay=False), default=None),
    click.option("--synthetic", type=click.Choice(SHAPES), default=None),
    click.option("--frames", type=int, default=None),
    click.option("--points", type=int, default=None),
    click.option("--translation", type=float, nargs=3, default=(1.0, 0.0, 0.0)),
    click.option("--rotation", type=float, nargs=3, default=(0.0, 0.0, 0.0)),
    click.option("--articulation", type=float, default=0.0),
    click.option("--seed", type=int, default=None),
    click.option("--depth", type=int, default=None),
    click.option("--stepsize", type=float, default=None),
    click.option("--origin", type=float, nargs=3, default=None),
)

codec_options = _stack(
    click.option("--k-neighbors", type=int, default=None),
    click.option("--scales", type=int, default=None),
    click.option("--cheb-degree", type=int, default=None),
    click.option("--mu", type=float, default=None),
    click.option("--clusters", type=int, default=None),
    click.option("--threshold-percentile", type=float, default=None),
    click.option("--delta-motion", type=float, default=None),
    click.option("--delta-color", type=float, default=None),
    click.option("--gop", type=int, default=None),
    click.option("--precision-model", type=click.Path(exists=True, dir_okay=False), default=None),
)

def _synthetic_spec(shape, frames, points, translation, rotation, articulation, seed, depth):
    return SyntheticSpec(shape, frames, translation, rotation, articulation, points, depth, seed)

def load_frames(input_dir, synthetic, frames, points, translation, rotation, articulation, seed, depth, stepsize, origin):
    """Voxelized frames of the selected source, and the synthetic sequence if there is one."""
    if (input_dir is None) == (synthetic is None):
        raise click.UsageError("give exactly one of --input and --synthetic")
    if synthetic is not None:
        sequence = generate_synthetic(_synthetic_spec(synthetic, frames, points, translation, rotation, articulation, seed, depth))
        return sequence.frames, sequence
    paths = sorted(Path(input_dir).glob("*.ply"))
    if frames is not None:
        paths = paths[:frames]
    if not paths:
        raise click.UsageError(f"no PLY files in {input_dir}")
    clouds = [read_ply(path) for path in paths]
    if not origin:
        # the grid starts at the lowest corner of all frames
        origin = tuple(np.min([cloud.points.min(axis=0) for cloud in clouds if len(cloud)], axis=0).tolist())
    grid = VoxelGrid(origin, stepsize, depth)
    logger.info(f"Voxelizing {len(clouds)} frames onto {grid}...")
    return [voxelize(cloud, grid) for cloud in clouds], None

def codec_config(k_neighbors, scales, cheb_degree, mu, clusters, threshold_percentile, delta_motion, delta_color, gop, precision_model):
    precision = load_precision(precision_model) if precision_model else None
    return CodecConfig(k=k_neighbors, scales=scales, degree=cheb_degree, mu=mu, clusters=clusters,
                       percentile=threshold_percentile, delta_motion=delta_motion, delta_color=delta_color,
                       gop=gop, precision=precision)

def _split(options):
    source = {key : options.pop(key) for key in (
        "input_dir", "synthetic", "frames", "points", "translation", "rotation", "articulation", "seed",
        "depth", "stepsize", "origin",
    )}
    return source, options

def _report(rows, header, csv):
    if csv:
        stats.write_csv(rows, header, csv)
    click.echo(pd.DataFrame(rows, columns=header).to_string(index=False))

def _guarded(function):
    """Turns library errors into click errors with a message and a non-zero exit code."""
    @functools.wraps(function)
    def wrapper(*args, **kwargs):
        try:
            return function(*args, **kwargs)
        except VoxmoError as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc
    return wrapper

@run.command()
@source_options
@codec_options
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
@click.option("--csv", type=click.Path(dir_okay=False), default=None)
@_guarded
def encode(output, csv, **options):
    """Encodes a sequence into a container file.

    Parameters
    ----------
    output : str
        Filepath for the container.

    csv : str, optional
        Filepath for the per-frame statistics; see `stats.frame_header` for the columns.

    See Also
    --------
    `codec.encode_frames` - the core functionality of this command-line procedure.
    """
    source, options = _split(options)
    frames, _ = load_frames(**source)
    header, encoded, decoded = encode_frames(frames, codec_config(**options))
    data = header.to_bytes() + b"".join(record.to_bytes() for record in encoded)
    logger.info(f"Writing {len(data)} bytes to {output}...")
    Path(output).write_bytes(data)
    rows = stats.sequence_rows(frames, encoded, decoded)
    if csv:
        stats.write_csv(rows, stats.frame_header, csv)
    summary = stats.summarize(rows)
    logger.info(f"Encoded {summary['frames']} frames at {summary['total_bpv']:.3f} bpv, PSNR {summary['psnr_avg']:.2f} dB.")

@run.command()
@click.option("-i", "--input", "container", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("-o", "--output", type=click.Path(file_okay=False), required=True)
@click.option("--ascii", is_flag=True)
@_guarded
def decode(container, output, ascii):
    """Decodes a container into one PLY file per frame, named frame_0000.ply onwards."""
    frames = decode_sequence(Path(container).read_bytes())
    directory = Path(output)
    directory.mkdir(parents=True, exist_ok=True)
    for index, frame in enumerate(frames):
        write_frame(directory / f"frame_{index:04d}.ply", frame, ascii=ascii)
    logger.info(f"Wrote {len(frames)} frames to {directory}.")

@run.command()
@click.option("-i", "--input", "container", type=click.Path(exists=True, dir_okay=False), required=True)
@_guarded
def inspect(container):
    """Prints the header and per-frame payload sizes of a container without decoding it."""
    header, records = read_container(Path(container).read_bytes())
    click.echo(f"{header.frame_count} frames on {header.grid}, {header.wavelets}, gop {header.gop}")
    for index, record in enumerate(records):
        click.echo(f"{index}\t{record.frame_type}\t{len(record.geometry)}\t{len(record.motion)}\t{len(record.color)}")

@run.command("rd-sweep")
@source_options
@codec_options
@click.option("--color-ladder", type=float, multiple=True)
@click.option("--motion-ladder", type=float, multiple=True)
@click.option("--csv", type=click.Path(dir_okay=False), default=None)
@_guarded
def rd_sweep(color_ladder, motion_ladder, csv, **options):
    """Encodes the input at every (motion step, color step) pair of the ladders.

    Empty ladders default to `settings.DELTA_COLOR_LADDER` and `settings.DELTA_MOTION_LADDER`.
    """
    source, options = _split(options)
    frames, _ = load_frames(**source)
    rows = stats.rd_sweep(frames, codec_config(**options), list(color_ladder) or None, list(motion_ladder) or None)
    _report(rows, stats.rd_header, csv)

@run.command("compare-prediction")
@source_options
@codec_options
@click.option("--csv", type=click.Path(dir_okay=False), default=None)
@_guarded
def compare_prediction(csv, **options):
    """Average color prediction SNR of the motion-compensated, static and mean predictors."""
    source, options = _split(options)
    frames, _ = load_frames(**source)
    _report(stats.prediction_comparison(frames, codec_config(**options)), stats.prediction_header, csv)

@run.command("compare-geometry")
@source_options
@codec_options
@click.option("--motion-ladder", type=float, multiple=True)
@click.option("--csv", type=click.Path(dir_okay=False), default=None)
@_guarded
def compare_geometry(motion_ladder, csv, **options):
    """Intra, static XOR and motion-compensated XOR geometry bits, per predicted frame and motion step."""
    source, options = _split(options)
    frames, _ = load_frames(**source)
    rows = stats.geometry_comparison(frames, codec_config(**options), list(motion_ladder) or None)
    _report(rows, stats.geometry_header, csv)

@run.command("compare-motion-coding")
@source_options
@codec_options
@click.option("--csv", type=click.Path(dir_okay=False), default=None)
@_guarded
def compare_motion_coding(csv, **options):
    """Graph Fourier versus signal-domain motion coding over the motion ladder.

    Synthetic inputs use their true motion; PLY inputs use estimated motion.
    """
    source, options = _split(options)
    frames, sequence = load_frames(**source)
    config = codec_config(**options)
    if sequence is not None:
        fields = list(zip(sequence.frames, sequence.motions))
    else:
        fields = [(reference, field) for _, reference, _, _, field in stats.estimated_motions(frames, config)]
    _report(stats.motion_coding_comparison(fields, k=config.k), stats.motion_coding_header, csv)

@run.command()
@click.option("--shape", type=click.Choice(SHAPES), required=True)
@click.option("--frames", type=int, default=None)
@click.option("--points", type=int, default=None)
@click.option("--translation", type=float, nargs=3, default=(1.0, 0.0, 0.0))
@click.option("--rotation", type=float, nargs=3, default=(0.0, 0.0, 0.0))
@click.option("--articulation", type=float, default=0.0)
@click.option("--seed", type=int, default=None)
@click.option("--depth", type=int, default=None)
@click.option("-o", "--output", type=click.Path(file_okay=False), required=True)
@_guarded
def synth(shape, frames, points, translation, rotation, articulation, seed, depth, output):
    """Writes a synthetic sequence as PLY frames and its true per-voxel motion as motion.csv.

    The motion file has columns frame, x, y, z, dx, dy, dz: voxel centers of each frame in grid
    units and their displacement towards the next frame.
    """
    sequence = generate_synthetic(_synthetic_spec(shape, frames, points, translation, rotation, articulation, seed, depth))
    directory = Path(output)
    directory.mkdir(parents=True, exist_ok=True)
    for index, frame in enumerate(sequence.frames):
        write_frame(directory / f"frame_{index:04d}.ply", frame)
    tables = [
        pd.DataFrame(np.hstack([frame.positions, motion]), columns=["x", "y", "z", "dx", "dy", "dz"]).assign(frame=index)
        for index, (frame, motion) in enumerate(zip(sequence.frames, sequence.motions))
    ]
    columns = ["frame", "x", "y", "z", "dx", "dy", "dz"]
    motion = pd.concat(tables, ignore_index=True)[columns] if tables else pd.DataFrame(columns=columns)
    motion.to_csv(directory / "motion.csv", index=False)
    logger.info(f"Wrote {len(sequence)} frames and their motion to {directory}.")

@run.command("train-precision")
@source_options
@click.option("--k-neighbors", type=int, default=None)
@click.option("--scales", type=int, default=None)
@click.option("--cheb-degree", type=int, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
@_guarded
def train(k_neighbors, scales, cheb_degree, epsilon, output, **source):
    """Trains a descriptor precision model on rigid transforms of the first input frame."""
    frames, _ = load_frames(**source)
    config = CodecConfig(k=k_neighbors, scales=scales, degree=cheb_degree)
    wavelets = plan_wavelets(frames[0], config)
    sources, targets = training_pairs(frame_cloud(frames[0]), frames[0].grid, settings.TRAINING_TRANSFORMS, wavelets, config.k)
    model = train_precision(zip(sources, targets), epsilon, provenance=source["input_dir"] or source["synthetic"], wavelets=wavelets)
    save_precision(output, model)
    logger.info(f"Saved {model} to {output}.")
