"""Voxel grids, voxel sets and voxelization of raw colored point clouds.

Occupied voxels are always kept sorted by their Morton (z-order) code. That order is the
canonical vertex indexing used by graphs, descriptors, motion fields and color coding.
"""

import numpy as np
import log, settings
from errors import OutOfRangeError, DimensionError, GridMismatchError

logger = log.get("voxels")

def morton_encode(voxels, depth):
    """Interleaves integer voxel coordinates into Morton codes.

    Parameters
    ----------
    voxels : np.Array
        (N, 3) integer array of (i, j, k) coordinates in [0, 2^depth).

    depth : int
        Number of bits per coordinate.

    Returns
    -------
    np.Array
        (N,) int64 array of codes. Bit 3b holds bit b of i, bit 3b+1 of j and bit 3b+2 of k.
    """
    voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
    codes = np.zeros(len(voxels), dtype=np.int64)
    for bit in range(depth):
        for axis in range(3):
            codes |= ((voxels[:, axis] >> bit) & 1) << (3 * bit + axis)
    return codes

def morton_decode(codes, depth):
    """Inverse of `morton_encode`."""
    codes = np.asarray(codes, dtype=np.int64)
    voxels = np.zeros((len(codes), 3), dtype=np.int64)
    for bit in range(depth):
        for axis in range(3):
            voxels[:, axis] |= ((codes >> (3 * bit + axis)) & 1) << bit
    return voxels

def _frozen(array):
    array.setflags(write=False)
    return array

class RawPointCloud:
    """A colored point cloud before voxelization.

    Parameters
    ----------
    points : np.Array
        (N, 3) real coordinates in source units.

    colors : np.Array
        (N, 3) integer colors in [0, 255], aligned with `points`.
    """
    def __init__(self, points, colors):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        colors = np.asarray(colors).reshape(-1, 3)
        if len(points) != len(colors):
            raise DimensionError(f"{len(points)} points but {len(colors)} colors")
        bad = np.flatnonzero(np.any((colors < 0) | (colors > 255), axis=1))
        if len(bad):
            raise OutOfRangeError(int(bad[0]), f"color of point {bad[0]} is outside [0, 255]")
        self.points = _frozen(points)
        self.colors = _frozen(colors.astype(np.int64))

    def __len__(self):
        return len(self.points)

    def __str__(self):
        return f"<cloud:{len(self)}>"

class VoxelGrid:
    """A cubic grid of 2^depth cells per axis.

    Parameters
    ----------
    origin : (float, float, float)
        Corner of the bounding cube, in source units.

    stepsize : float
        Edge length of one voxel, in source units.

    depth : int
        Octree depth; the grid holds 2^depth cells per axis.
    """
    def __init__(self, origin=(0.0, 0.0, 0.0), stepsize=None, depth=None):
        if stepsize is None:
            stepsize = settings.DEFAULT_STEPSIZE
        if depth is None:
            depth = settings.DEFAULT_DEPTH
        if not stepsize > 0:
            raise DimensionError(f"stepsize must be positive, got {stepsize}")
        if not 1 <= depth <= settings.MAX_DEPTH:
            raise DimensionError(f"depth must lie in [1, {settings.MAX_DEPTH}], got {depth}")
        self.origin = tuple(float(c) for c in origin)
        self.stepsize = float(stepsize)
        self.depth = int(depth)

    @property
    def extent(self):
        return 1 << self.depth

    def __eq__(self, other):
        return isinstance(other, VoxelGrid) and \
            (self.origin, self.stepsize, self.depth) == (other.origin, other.stepsize, other.depth)

    def __hash__(self):
        return hash((self.origin, self.stepsize, self.depth))

    def __str__(self):
        return f"<grid:{self.extent}^3 @ {self.stepsize}>"

    def to_grid_units(self, points):
        return (np.asarray(points, dtype=np.float64) - np.array(self.origin)) / self.stepsize

    def to_source_units(self, positions):
        return np.asarray(positions, dtype=np.float64) * self.stepsize + np.array(self.origin)

class VoxelSet:
    """A set of occupied voxels on a grid, held as sorted Morton codes.

    Parameters
    ----------
    grid : VoxelGrid
        Grid the voxels live on.

    codes : np.Array
        Morton codes; duplicates are removed and the result is sorted.
    """
    def __init__(self, grid, codes):
        self.grid = grid
        self.codes = _frozen(np.unique(np.asarray(codes, dtype=np.int64)))
        self._voxels = None

    @classmethod
    def from_voxels(cls, grid, voxels):
        voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        if len(voxels) and (voxels.min() < 0 or voxels.max() >= grid.extent):
            raise OutOfRangeError(int(np.flatnonzero(np.any((voxels < 0) | (voxels >= grid.extent), axis=1))[0]))
        return cls(grid, morton_encode(voxels, grid.depth))

    @classmethod
    def empty(cls, grid):
        return cls(grid, np.zeros(0, dtype=np.int64))

    @property
    def voxels(self):
        # cached decode of the codes
        if self._voxels is None:
            self._voxels = _frozen(morton_decode(self.codes, self.grid.depth))
        return self._voxels

    @property
    def centers(self):
        return self.voxels + 0.5

    def __len__(self):
        return len(self.codes)

    def __eq__(self, other):
        return isinstance(other, VoxelSet) and self.grid == other.grid and np.array_equal(self.codes, other.codes)

    def __str__(self):
        return f"<voxels:{len(self)}>"

    def as_tuples(self):
        return {tuple(int(c) for c in v) for v in self.voxels}

class VoxelFrame:
    """Occupied voxels carrying position and color signals.

    Parameters
    ----------
    voxel_set : VoxelSet
        Occupied voxels in canonical Morton order.

    colors : np.Array, optional
        (N, 3) real colors in [0, 255] aligned with the voxels. `None` for geometry-only frames.

    Attributes
    ----------
    positions : np.Array
        (N, 3) voxel centers in grid units.
    """
    def __init__(self, voxel_set, colors=None):
        self.voxel_set = voxel_set
        if colors is not None:
            colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
            if len(colors) != len(voxel_set):
                raise DimensionError(f"{len(voxel_set)} voxels but {len(colors)} colors")
            colors = _frozen(colors)
        self.colors = colors

    @property
    def grid(self):
        return self.voxel_set.grid

    @property
    def voxels(self):
        return self.voxel_set.voxels

    @property
    def positions(self):
        return self.voxel_set.centers

    @property
    def signals(self):
        """(N, 6) signal matrix with columns x, y, z, r, g, b."""
        colors = self.colors if self.colors is not None else np.zeros((len(self), 3))
        return np.hstack([self.positions, colors])

    def __len__(self):
        return len(self.voxel_set)

    def __str__(self):
        return f"<frame:{len(self)}>"

    def with_colors(self, colors):
        return VoxelFrame(self.voxel_set, colors)

def assign_voxels(points, grid):
    """Maps raw points to the integer voxels containing them.

    Raises
    ------
    OutOfRangeError
        If any point lies outside the grid's bounding cube; names the first such point.
    """
    voxels = np.floor(grid.to_grid_units(points)).astype(np.int64).reshape(-1, 3)
    outside = np.any((voxels < 0) | (voxels >= grid.extent), axis=1)
    if outside.any():
        raise OutOfRangeError(int(np.flatnonzero(outside)[0]))
    return voxels

def voxelize(cloud, grid):
    """Voxelizes a raw point cloud.

    Parameters
    ----------
    cloud : RawPointCloud
        Points and colors in source units.

    grid : VoxelGrid
        Target grid.

    Returns
    -------
    VoxelFrame
        One voxel per cell holding at least one point; its color is the mean of the colors of
        the points falling in it.
    """
    voxels = assign_voxels(cloud.points, grid)
    codes, inverse = np.unique(morton_encode(voxels, grid.depth), return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse, minlength=len(codes))
    colors = np.stack([
        np.bincount(inverse, weights=cloud.colors[:, c], minlength=len(codes)) / counts
        for c in range(3)
    ], axis=1)
    frame = VoxelFrame(VoxelSet(grid, codes), colors)
    logger.info(f"Voxelized {cloud} into {frame}.")
    return frame

def _check_grids(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")

def _voxel_set(obj):
    return obj.voxel_set if isinstance(obj, VoxelFrame) else obj

def xor_voxel_sets(a, b):
    """Symmetric difference of the occupied voxels of `a` and `b` (frames or voxel sets)."""
    a, b = _voxel_set(a), _voxel_set(b)
    _check_grids(a, b)
    return VoxelSet(a.grid, np.setxor1d(a.codes, b.codes, assume_unique=True))

def apply_xor(base, diff):
    """Recovers a target set from a base set and their symmetric difference."""
    base, diff = _voxel_set(base), _voxel_set(diff)
    _check_grids(base, diff)
    return VoxelSet(base.grid, np.setxor1d(base.codes, diff.codes, assume_unique=True))
