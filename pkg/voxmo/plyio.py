"""PLY reading and writing for colored point clouds."""

import numpy as np
from plyfile import PlyData, PlyElement
import log
from voxels import RawPointCloud
from errors import VoxmoError

logger = log.get("plyio")

_REQUIRED = ("x", "y", "z", "red", "green", "blue")

def read_ply(filepath):
    """Reads a colored point cloud from an ascii or binary little-endian PLY file.

    Parameters
    ----------
    filepath : str
        Path of the PLY file; its `vertex` element must carry x, y, z, red, green, blue.

    Returns
    -------
    voxels.RawPointCloud
    """
    logger.info(f"Reading point cloud from {filepath}...")
    try:
        ply = PlyData.read(str(filepath))
    except Exception as exc:
        raise VoxmoError(f"cannot parse PLY file {filepath}: {exc}") from exc
    if "vertex" not in ply:
        raise VoxmoError(f"PLY file {filepath} has no vertex element")
    vertex = ply["vertex"].data
    missing = [name for name in _REQUIRED if name not in vertex.dtype.names]
    if missing:
        raise VoxmoError(f"PLY file {filepath} lacks properties {', '.join(missing)}")
    points = np.stack([vertex[axis].astype(np.float64) for axis in ("x", "y", "z")], axis=1)
    colors = np.stack([vertex[channel].astype(np.int64) for channel in ("red", "green", "blue")], axis=1)
    cloud = RawPointCloud(points, colors)
    logger.info(f"Read {cloud} from {filepath}.")
    return cloud

def write_ply(filepath, points, colors, ascii=False):
    """Writes points and colors (rounded to the nearest integer channel) to a PLY file."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.clip(np.rint(np.asarray(colors, dtype=np.float64).reshape(-1, 3)), 0, 255).astype(np.uint8)
    records = np.empty(len(points), dtype=[
        ("x", "f8"), ("y", "f8"), ("z", "f8"),
        ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ])
    for axis, name in enumerate(("x", "y", "z")):
        records[name] = points[:, axis]
    for channel, name in enumerate(("red", "green", "blue")):
        records[name] = colors[:, channel]
    element = PlyElement.describe(records, "vertex")
    PlyData([element], text=ascii, byte_order="<").write(str(filepath))
    logger.info(f"Wrote {len(points)} points to {filepath}.")

def write_frame(filepath, frame, ascii=False):
    """Writes a decoded frame as voxel centers in source units."""
    colors = frame.colors if frame.colors is not None else np.zeros((len(frame), 3))
    write_ply(filepath, frame.grid.to_source_units(frame.positions), colors, ascii=ascii)
