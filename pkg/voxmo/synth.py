"""Synthetic colored point cloud sequences with known motion.

Shapes are sampled once in body coordinates; every frame applies that frame's transform to the
same samples, so each point's displacement between frames is known exactly. Colors are a
function of body coordinates and therefore travel with the surface.
"""

import numpy as np
from scipy.spatial.transform import Rotation
import log, settings
from voxels import RawPointCloud, VoxelGrid, assign_voxels, morton_encode, voxelize
from graph import build_knn_graph
from features import compute_all_descriptors
from errors import DimensionError, OutOfRangeError

logger = log.get("synth")

SHAPES = ("sphere", "body", "blob")

class SyntheticSpec:
    """Parameters of a synthetic sequence.

    Parameters
    ----------
    shape : str
        One of `SHAPES`: a sphere shell, an articulated two-box body or a random smooth blob.

    frames : int, optional
        Frame count. Defaults to `settings.SYNTH_FRAMES`.

    translation : (float, float, float), optional
        Per-frame translation in voxels.

    rotation : (float, float, float), optional
        Per-frame rotation as an axis-angle vector in degrees, about the shape center.

    articulation : float, optional
        Per-frame hinge angle increment in degrees of the body's arm.

    points : int, optional
        Sampled points. Defaults to `settings.SYNTH_POINTS`.

    depth : int, optional
        Grid depth. Defaults to `settings.DEFAULT_DEPTH`.

    seed : int, optional
        Seed of the shape samples and the color texture. Defaults to `settings.SYNTH_SEED`.
    """
    def __init__(self, shape, frames=None, translation=(0.0, 0.0, 0.0), rotation=(0.0, 0.0, 0.0),
                 articulation=0.0, points=None, depth=None, seed=None):
        if shape not in SHAPES:
            raise DimensionError(f"unknown synthetic shape {shape!r}; expected one of {', '.join(SHAPES)}")
        self.shape = shape
        self.frames = settings.SYNTH_FRAMES if frames is None else int(frames)
        self.translation = np.asarray(translation, dtype=np.float64)
        self.rotation = np.asarray(rotation, dtype=np.float64)
        self.articulation = float(articulation)
        self.points = settings.SYNTH_POINTS if points is None else int(points)
        self.depth = settings.DEFAULT_DEPTH if depth is None else int(depth)
        self.seed = settings.SYNTH_SEED if seed is None else int(seed)
        if self.frames < 1 or self.points < 1:
            raise DimensionError("synthetic sequences need at least one frame and one point")

    @property
    def grid(self):
        return VoxelGrid(depth=self.depth)

    def __str__(self):
        return f"<synthetic:{self.shape}, {self.frames} frames>"

class SyntheticSequence:
    """Frames of a synthetic sequence with the true motion of every voxel towards the next frame.

    Attributes
    ----------
    motions : list of np.Array
        motions[t] is the (len(frames[t]), 3) mean displacement of the points in each voxel of
        frame t between frames t and t + 1.
    """
    def __init__(self, spec, clouds, frames, motions):
        self.spec = spec
        self.clouds = clouds
        self.frames = frames
        self.motions = motions

    def __len__(self):
        return len(self.frames)

def _unit_directions(rng, count):
    directions = rng.standard_normal((count, 3))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)

def _box_surface(rng, count, size):
    """Uniform samples on the surface of an axis-aligned box centered at the origin."""
    size = np.asarray(size, dtype=np.float64)
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]]).repeat(2)
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    samples = (rng.random((count, 3)) - 0.5) * size
    axes = faces // 2
    samples[np.arange(count), axes] = np.where(faces % 2, 0.5, -0.5) * size[axes]
    return samples

def _shape_samples(spec, rng):
    """Body-coordinate samples around the origin, and a mask of the points on the articulated part."""
    extent = float(1 << spec.depth)
    arm = np.zeros(spec.points, dtype=bool)
    if spec.shape == "sphere":
        samples = 0.3 * extent * _unit_directions(rng, spec.points)
    elif spec.shape == "blob":
        directions = _unit_directions(rng, spec.points)
        weights = rng.standard_normal((3, 3))
        bumps = np.sin(directions @ weights).sum(axis=1)
        samples = directions * (0.25 * extent * (1.0 + 0.15 * bumps))[:, None]
    else:
        torso_count = (2 * spec.points) // 3
        torso = _box_surface(rng, torso_count, 0.45 * extent * np.array([0.6, 1.0, 0.35]))
        limb = _box_surface(rng, spec.points - torso_count, 0.45 * extent * np.array([0.7, 0.18, 0.18]))
        # the arm leaves the torso sideways from its upper half, hinged at the torso edge
        limb += np.array([0.45 * extent * (0.3 + 0.35), 0.45 * extent * 0.3, 0.0])
        samples = np.vstack([torso, limb]) - _body_shift(spec)
        arm[torso_count:] = True
    return samples, arm

def _texture(samples, rng):
    """Smooth colors as a function of body coordinates."""
    frequencies = rng.uniform(0.02, 0.08, size=(3, 3))
    phases = rng.uniform(0, 2 * np.pi, size=3)
    waves = np.sin(samples @ frequencies.T + phases)
    return np.clip(np.rint(127.5 + 110.0 * waves), 0, 255).astype(np.int64)

def _body_shift(spec):
    # centers the bounding box of torso and arm on the origin
    return np.array([0.45 * float(1 << spec.depth) * 0.35, 0.0, 0.0])

def _hinge(spec):
    extent = float(1 << spec.depth)
    return np.array([0.45 * extent * 0.3, 0.45 * extent * 0.3, 0.0]) - _body_shift(spec)

def _pose(spec, samples, arm, index):
    """Positions of the samples at frame `index`, relative to the shape center."""
    posed = samples.copy()
    if spec.articulation and arm.any():
        hinge = _hinge(spec)
        bend = Rotation.from_rotvec(np.radians([0.0, 0.0, spec.articulation * index]))
        posed[arm] = bend.apply(samples[arm] - hinge) + hinge
    if np.any(spec.rotation):
        posed = Rotation.from_rotvec(np.radians(spec.rotation * index)).apply(posed)
    return posed + spec.translation * index

def generate_synthetic(spec):
    """Generates the frames of a synthetic sequence and their true motion.

    Parameters
    ----------
    spec : SyntheticSpec

    Returns
    -------
    SyntheticSequence

    Raises
    ------
    voxels.OutOfRangeError
        If the motion carries the shape outside the grid.
    """
    logger.info(f"Generating {spec}...")
    rng = np.random.default_rng(spec.seed)
    samples, arm = _shape_samples(spec, rng)
    colors = _texture(samples, rng)
    grid = spec.grid
    # centered so the trajectory midpoint sits at the grid center
    center = np.full(3, 0.5 * grid.extent) - 0.5 * (spec.frames - 1) * spec.translation
    positions = [_pose(spec, samples, arm, index) + center for index in range(spec.frames)]
    clouds = [RawPointCloud(points, colors) for points in positions]
    frames = [voxelize(cloud, grid) for cloud in clouds]
    motions = []
    for index in range(spec.frames - 1):
        voxels = assign_voxels(positions[index], grid)
        slots = np.searchsorted(frames[index].voxel_set.codes, morton_encode(voxels, grid.depth))
        displacement = positions[index + 1] - positions[index]
        counts = np.bincount(slots, minlength=len(frames[index]))
        motions.append(np.stack([
            np.bincount(slots, weights=displacement[:, axis], minlength=len(frames[index])) / counts
            for axis in range(3)
        ], axis=1))
    logger.info(f"Generated {spec} with {len(frames[0])} voxels in the first frame.")
    return SyntheticSequence(spec, clouds, frames, motions)

def frame_cloud(frame):
    """Raw cloud made of a frame's voxel centers and rounded colors, in source units."""
    colors = frame.colors if frame.colors is not None else np.zeros((len(frame), 3))
    return RawPointCloud(frame.grid.to_source_units(frame.positions), np.clip(np.rint(colors), 0, 255))

def training_pairs(cloud, grid, transforms, wavelets, k=None):
    """Descriptor pairs in known correspondence, made by moving one cloud with rigid transforms.

    Parameters
    ----------
    cloud : voxels.RawPointCloud
        Source points and colors.

    grid : voxels.VoxelGrid

    transforms : list of ((float, float, float), (float, float, float))
        Axis-angle rotations in degrees about the cloud centroid, and translations in voxels.

    wavelets : features.WaveletConfig

    k : int, optional
        Graph neighbors. Defaults to `settings.KNN_NEIGHBORS`.

    Returns
    -------
    (np.Array, np.Array)
        Descriptors of original voxels and of the voxels their centers move into.
    """
    original = voxelize(cloud, grid)
    original_descriptors = compute_all_descriptors(original, build_knn_graph(original, k), wavelets)
    centroid = grid.to_grid_units(cloud.points).mean(axis=0)
    sources, targets = [], []
    for rotation, translation in transforms:
        motion = Rotation.from_rotvec(np.radians(rotation))
        def move(points):
            return motion.apply(points - centroid) + centroid + np.asarray(translation, dtype=np.float64)
        moved_points = grid.to_source_units(move(grid.to_grid_units(cloud.points)))
        try:
            moved = voxelize(RawPointCloud(moved_points, cloud.colors), grid)
        except OutOfRangeError:
            logger.warning(f"Transform {rotation}, {translation} leaves the grid; skipping it.")
            continue
        moved_descriptors = compute_all_descriptors(moved, build_knn_graph(moved, k), wavelets)
        landing = np.floor(move(original.positions)).astype(np.int64)
        inside = np.all((landing >= 0) & (landing < grid.extent), axis=1)
        codes = morton_encode(landing[inside], grid.depth)
        slots = np.searchsorted(moved.voxel_set.codes, codes)
        slots = np.minimum(slots, len(moved) - 1)
        found = moved.voxel_set.codes[slots] == codes
        vertices = np.flatnonzero(inside)[found]
        sources.append(original_descriptors[vertices])
        targets.append(moved_descriptors[slots[found]])
    if not sources:
        return np.zeros((0, wavelets.descriptor_length)), np.zeros((0, wavelets.descriptor_length))
    sources, targets = np.vstack(sources), np.vstack(targets)
    logger.info(f"Collected {len(sources)} training pairs from {len(transforms)} transforms.")
    return sources, targets
