"""Depth-first byte serialization of voxel occupancy octrees."""

import numpy as np
import log
from voxels import VoxelSet, VoxelFrame
from errors import EmptyInputError, MalformedStreamError

logger = log.get("octree")

class Octree:
    """Serialized occupancy tree.

    Parameters
    ----------
    depth : int
        Depth of the tree; leaves sit at this level.

    data : bytes
        One byte per internal node in depth-first order. Bit b of a byte is set iff child b
        is occupied, children being ordered by their 3-bit Morton code (bit 0 is the (0,0,0) child).
    """
    def __init__(self, depth, data):
        self.depth = int(depth)
        self.data = bytes(data)

    def __len__(self):
        return len(self.data)

    def __eq__(self, other):
        return isinstance(other, Octree) and self.depth == other.depth and self.data == other.data

    def __str__(self):
        return f"<octree:{len(self)} bytes>"

def build_octree(frame):
    """Serializes the occupied voxels of a frame (or voxel set) as an octree.

    Parameters
    ----------
    frame : voxels.VoxelFrame or voxels.VoxelSet
        Non-empty set of occupied voxels.

    Returns
    -------
    Octree
        Tree of depth `grid.depth`.

    Raises
    ------
    EmptyInputError
        If there are no occupied voxels.
    """
    voxel_set = frame.voxel_set if isinstance(frame, VoxelFrame) else frame
    if len(voxel_set) == 0:
        raise EmptyInputError("cannot build an octree over an empty voxel set")
    depth = voxel_set.grid.depth
    codes = voxel_set.codes
    starts, levels, values = [], [], []
    for level in range(depth):
        # children of the internal nodes at `level`, one entry per occupied child
        children = np.unique(codes >> (3 * (depth - level - 1)))
        parents = children >> 3
        bits = (np.ones_like(children) << (children & 7)).astype(np.int64)
        boundaries = np.flatnonzero(np.r_[True, parents[1:] != parents[:-1]])
        starts.append(parents[boundaries] << (3 * (depth - level)))
        levels.append(np.full(len(boundaries), level))
        values.append(np.bitwise_or.reduceat(bits, boundaries))
    starts, levels, values = np.concatenate(starts), np.concatenate(levels), np.concatenate(values)
    # depth-first pre-order: by first covered code, parents before children
    order = np.lexsort((levels, starts))
    return Octree(depth, values[order].astype(np.uint8).tobytes())

def decode_octree(tree, grid):
    """Recovers the geometry-only frame described by an octree byte stream.

    Parameters
    ----------
    tree : Octree
        Serialized tree; its depth must match the grid depth.

    grid : voxels.VoxelGrid
        Grid of the decoded voxels.

    Returns
    -------
    voxels.VoxelFrame
        Occupied voxels in canonical Morton order, without colors.

    Raises
    ------
    MalformedStreamError
        On truncated input, surplus bytes or an empty internal node.
    """
    data = tree.data
    depth = grid.depth
    if tree.depth != depth:
        raise MalformedStreamError(0, f"tree depth {tree.depth} does not match grid depth {depth}")
    leaves = []
    stack = [(0, 0)]
    position = 0
    while stack:
        level, prefix = stack.pop()
        if position >= len(data):
            raise MalformedStreamError(position, f"octree stream truncated at byte {position}")
        byte = data[position]
        if byte == 0:
            raise MalformedStreamError(position, f"empty internal node at byte {position}")
        position += 1
        children = [(prefix << 3) | b for b in range(8) if (byte >> b) & 1]
        if level + 1 == depth:
            leaves.extend(children)
        else:
            stack.extend((level + 1, child) for child in reversed(children))
    if position != len(data):
        raise MalformedStreamError(position, f"{len(data) - position} surplus bytes after octree")
    return VoxelFrame(VoxelSet(grid, np.array(leaves, dtype=np.int64)))
