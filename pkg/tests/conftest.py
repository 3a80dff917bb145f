"""Shared fixtures; the package uses flat imports, so its directory goes on the path."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "voxmo"))

import numpy as np
import pytest
from voxels import VoxelGrid, VoxelSet, VoxelFrame
from synth import SyntheticSpec, generate_synthetic
from features import WaveletConfig
from motion import PrecisionModel
from codec import CodecConfig, plan_wavelets, resolve_precision

@pytest.fixture
def rng():
    return np.random.default_rng(7)

@pytest.fixture
def grid():
    return VoxelGrid(depth=4)

@pytest.fixture
def lattice(grid):
    """A 4x4x4 block of voxels with a smooth color ramp."""
    voxels = np.stack(np.meshgrid(*[np.arange(4, 8)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    voxel_set = VoxelSet.from_voxels(grid, voxels)
    colors = 40.0 + 10.0 * voxel_set.voxels
    return VoxelFrame(voxel_set, colors)

@pytest.fixture(scope="session")
def sphere_sequence():
    return generate_synthetic(SyntheticSpec("sphere", frames=3, translation=(1.0, 0.0, 0.0), points=3000, depth=4))

@pytest.fixture(scope="session")
def still_sequence():
    return generate_synthetic(SyntheticSpec("sphere", frames=2, points=3000, depth=4))

@pytest.fixture
def small_config():
    """Two wavelet scales and an identity precision, so nothing is trained."""
    wavelets = WaveletConfig([2.0, 1.0], 0.5)
    return CodecConfig(scales=2, precision=PrecisionModel.identity(wavelets.descriptor_length))

@pytest.fixture(scope="session")
def moving_sphere():
    """A finer translating sphere, for checks against the true motion."""
    return generate_synthetic(SyntheticSpec("sphere", frames=2, translation=(1.0, 0.0, 0.0), points=8000, depth=5))

@pytest.fixture(scope="session")
def trained_precision(moving_sphere):
    """Precision trained on the first moving frame, with the wavelets it was trained at."""
    config = CodecConfig()
    first = moving_sphere.frames[0]
    return resolve_precision(first, config, plan_wavelets(first, config))
