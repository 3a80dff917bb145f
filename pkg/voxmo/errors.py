"""Exception hierarchy shared by every voxmo module."""

class VoxmoError(Exception):
    """Base class for all errors raised by voxmo."""

class OutOfRangeError(VoxmoError):
    """A raw point falls outside the bounding cube of the voxel grid.

    Parameters
    ----------
    index : int
        Index of the first offending point.
    """
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"point {index} lies outside the voxel grid")

class EmptyInputError(VoxmoError):
    pass

class GridMismatchError(VoxmoError):
    pass

class MalformedStreamError(VoxmoError):
    """A byte stream does not parse; `offset` is the byte position of the failure."""
    def __init__(self, offset, message=None):
        self.offset = offset
        super().__init__(message or f"malformed stream at byte {offset}")

class DimensionError(VoxmoError):
    pass

class CapacityError(VoxmoError):
    pass

class ModelError(VoxmoError):
    pass

class QuantizerError(VoxmoError):
    """Quantizer stepsize is not positive or the input holds non-finite values."""

class DecodeError(VoxmoError):
    """An entropy-coded stream ended early or holds an impossible code; `position` is in bits."""
    def __init__(self, position, message=None):
        self.position = position
        super().__init__(message or f"entropy decoding failed at bit {position}")

class ContainerError(VoxmoError):
    pass

class HeaderError(ContainerError):
    pass

class VersionError(ContainerError):
    pass

class TruncatedPayloadError(ContainerError):
    def __init__(self, frame_index, message=None):
        self.frame_index = frame_index
        super().__init__(message or f"payload of frame {frame_index} is truncated")

class BlockDecodeError(ContainerError):
    def __init__(self, block_index, message=None):
        self.block_index = block_index
        super().__init__(message or f"color payload malformed in block {block_index}")
