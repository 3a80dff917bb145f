import struct
import numpy as np
import pytest
from voxels import VoxelGrid, VoxelSet, VoxelFrame
from graph import VoxelGraph, build_knn_graph, laplacian
from features import WaveletConfig
from motion import (
    PrecisionModel, match_score, train_precision, save_precision, load_precision, best_matches, best_match,
    farthest_point_seeds, cluster_vertices, SparseCorrespondences, select_sparse, two_hop_neighborhood,
    estimate_offset_covariance, pseudo_inverse, MotionField, fitting_blocks, interpolate_motion, estimate_motion,
)
from stats import endpoint_error
from errors import DimensionError, ModelError

def _spd(rng):
    a = rng.normal(size=(3, 3))
    return a @ a.T + 0.5 * np.eye(3)

def test_trained_precision_inverts_the_regularized_covariance(rng):
    a = rng.normal(size=(200, 4))
    b = a + rng.normal(scale=[1.0, 2.0, 0.5, 1.0], size=(200, 4))
    model = train_precision(zip(a, b), epsilon=1e-3, provenance="test")
    covariance = np.cov(a - b, rowvar=False, ddof=1) + 1e-3 * np.eye(4)
    assert np.allclose(model.matrix @ covariance, np.eye(4), atol=1e-8)
    assert np.allclose(model.matrix, model.matrix.T)

def test_training_needs_pairs_and_a_positive_ridge():
    with pytest.raises(ModelError):
        train_precision([(np.zeros(2), np.ones(2))])
    with pytest.raises(ModelError):
        train_precision([(np.zeros(2), np.ones(2))] * 3, epsilon=0.0)

def test_precision_file_round_trip(tmp_path, rng):
    model = PrecisionModel(np.linalg.inv(_spd(rng)), 1e-3, "sphere")
    path = tmp_path / "model.vxpm"
    save_precision(path, model)
    assert path.read_bytes()[:4] == b"VXPM"
    loaded = load_precision(path)
    assert np.array_equal(loaded.matrix, model.matrix)
    assert (loaded.epsilon, loaded.provenance) == (1e-3, "sphere")

def test_precision_files_keep_their_wavelets(tmp_path):
    wavelets = WaveletConfig([2.0, 1.0], 0.5, degree=12)
    model = PrecisionModel.identity(wavelets.descriptor_length)
    path = tmp_path / "model.vxpm"
    save_precision(path, PrecisionModel(model.matrix, 1e-3, "sphere", wavelets))
    loaded = load_precision(path)
    assert loaded.wavelets == wavelets
    assert loaded.provenance == "sphere"
    save_precision(path, model)
    assert load_precision(path).wavelets is None
    with pytest.raises(ModelError):
        PrecisionModel(np.eye(3), 0.0, wavelets=wavelets)

def test_version_1_precision_files_still_load(tmp_path):
    path = tmp_path / "old.vxpm"
    path.write_bytes(b"VXPM" + struct.pack("<HIdH", 1, 2, 1e-3, 2) + b"ab" + np.eye(2).astype("<f8").tobytes())
    loaded = load_precision(path)
    assert np.array_equal(loaded.matrix, np.eye(2))
    assert (loaded.provenance, loaded.wavelets) == ("ab", None)
    path.write_bytes(path.read_bytes() + bytes([0]))
    with pytest.raises(ModelError):
        load_precision(path)

def test_truncated_wavelet_blocks_are_rejected(tmp_path):
    wavelets = WaveletConfig([2.0, 1.0], 0.5)
    path = tmp_path / "model.vxpm"
    save_precision(path, PrecisionModel(np.eye(wavelets.descriptor_length), 0.0, "", wavelets))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ModelError):
        load_precision(path)

def test_bad_precision_files_are_rejected(tmp_path):
    path = tmp_path / "bad.vxpm"
    path.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ModelError):
        load_precision(path)
    with pytest.raises(ModelError):
        PrecisionModel([[1.0, 2.0], [0.0, 1.0]], 0.0)
    with pytest.raises(ModelError):
        PrecisionModel([[1.0, 0.0], [0.0, -1.0]], 0.0)

def test_identity_score_is_squared_distance():
    model = PrecisionModel.identity(2)
    assert match_score([1.0, 2.0], [4.0, 6.0], model) == 25.0
    with pytest.raises(DimensionError):
        match_score([1.0], [2.0], model)

def test_best_match_prefers_smaller_index_on_ties():
    references = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    model = PrecisionModel.identity(2)
    assert best_match([1.0, 0.1], references, model) == (1, pytest.approx(0.01))
    indices, scores = best_matches(np.array([[0.0, 0.0], [0.9, 0.0]]), references, model, chunk=1)
    assert indices.tolist() == [0, 1]

def test_farthest_point_seeds_start_at_vertex_zero():
    points = np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0], [2.0, 0, 0]])
    assert farthest_point_seeds(points, 3).tolist() == [0, 2, 3]

def test_clusters_become_singletons_when_k_exceeds_n(rng):
    assert cluster_vertices(rng.random((5, 3)), clusters=5).tolist() == [0, 1, 2, 3, 4]
    labels = cluster_vertices(np.vstack([rng.random((20, 3)), rng.random((20, 3)) + 50]), clusters=2)
    assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1 and labels[0] != labels[20]

def _four_voxels():
    grid = VoxelGrid(depth=3)
    return VoxelFrame(VoxelSet.from_voxels(grid, [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]))

def test_threshold_keeps_strictly_better_representatives():
    target = _four_voxels()
    references = np.array([3, 2, 1, 0])
    scores = np.array([0.1, 0.5, 0.2, 0.9])
    reference_positions = target.positions + np.array([1.0, 0.0, 0.0])
    chosen = select_sparse(target, (references, scores), reference_positions, clusters=10, threshold=0.3)
    assert chosen.targets.tolist() == [0, 2]
    assert chosen.references.tolist() == [3, 1]
    assert np.allclose(chosen.vectors, target.positions[[0, 2]] - reference_positions[[3, 1]])
    assert select_sparse(target, (references, scores), reference_positions, clusters=10, threshold=0.2).targets.tolist() == [0]

def test_one_representative_per_cluster():
    target = _four_voxels()
    chosen = select_sparse(target, (np.arange(4), np.array([0.4, 0.3, 0.2, 0.1])), target.positions, clusters=1, threshold=1.0)
    assert chosen.targets.tolist() == [3]

def test_two_hop_neighborhood_on_a_path():
    graph = VoxelGraph.from_edges(5, [[0, 1], [1, 2], [2, 3], [3, 4]])
    assert two_hop_neighborhood(graph, 2).tolist() == [0, 1, 3, 4]
    assert two_hop_neighborhood(graph, 0).tolist() == [1, 2]

def test_offset_covariance_skips_non_positive_excess():
    positions = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 2, 0]])
    covariance, skipped = estimate_offset_covariance(positions, 0, [1, 2], [2.0, 1.0], 1.0)
    assert skipped == 1
    assert np.allclose(covariance, np.diag([0.5, 0.0, 0.0]))

def test_pseudo_inverse_drops_null_directions():
    assert np.allclose(pseudo_inverse(np.diag([2.0, 0.0, 0.0])), np.diag([0.5, 0.0, 0.0]))
    assert np.allclose(pseudo_inverse(np.zeros((3, 3))), 0.0)

def test_motion_field_stacks_coordinate_blocks():
    field = MotionField([[1, 2, 3], [4, 5, 6]])
    assert field.stacked.tolist() == [1, 4, 2, 5, 3, 6]
    assert np.array_equal(MotionField.from_stacked(field.stacked).vectors, field.vectors)
    with pytest.raises(DimensionError):
        MotionField([[np.nan, 0, 0]])

def test_fitting_blocks_sum_matches_of_a_vertex():
    matches = SparseCorrespondences([1, 1], [0, 1], [0.0, 0.0], [[1, 0, 0], [3, 0, 0]], [np.eye(3), np.eye(3)])
    blocks, targets = fitting_blocks(3, matches)
    assert np.allclose(blocks[1], 2 * np.eye(3))
    assert np.allclose(targets[1], [4, 0, 0])
    assert np.allclose(blocks[0], 0.0)

def test_constant_motion_is_reproduced(lattice):
    graph = build_knn_graph(lattice, 6)
    motion = np.array([1.5, -2.0, 0.25])
    vertices = [0, 10, 40]
    matches = SparseCorrespondences(vertices, vertices, np.zeros(3), np.tile(motion, (3, 1)), np.tile(np.eye(3), (3, 1, 1)))
    field, diagnostics = interpolate_motion(graph, matches, mu=1.0)
    assert np.max(np.abs(field.vectors - motion)) <= 1e-6
    assert diagnostics["pinned_directions"] == 0
    assert diagnostics["residual"] <= 1e-8

def test_interpolation_matches_a_dense_solve(rng):
    voxels = np.stack(np.meshgrid(np.arange(2), np.arange(3), np.arange(5), indexing="ij"), axis=-1).reshape(-1, 3)
    graph = build_knn_graph(voxels + 0.5, 6)
    n, mu = graph.n, 0.7
    anchors = rng.choice(n, size=5, replace=False)
    covariances = np.array([_spd(rng) for _ in anchors])
    vectors = rng.normal(size=(5, 3))
    matches = SparseCorrespondences(anchors, anchors, np.zeros(5), vectors, covariances)
    field, _ = interpolate_motion(graph, matches, mu=mu)
    system = mu * np.kron(np.eye(3), laplacian(graph).toarray())
    rhs = np.zeros(3 * n)
    for m, covariance, vector in zip(anchors, covariances, vectors):
        inverse = np.linalg.inv(covariance)
        for a in range(3):
            rhs[a * n + m] += inverse[a] @ vector
            for b in range(3):
                system[a * n + m, b * n + m] += inverse[a, b]
    expected = np.linalg.solve(system, rhs)
    assert np.linalg.norm(field.stacked - expected) <= 1e-6 * np.linalg.norm(expected)

def test_components_without_matches_do_not_move():
    line = np.arange(10.0)
    points = np.vstack([np.stack([line, 0 * line, 0 * line], axis=1), np.stack([line + 50, 0 * line, 0 * line], axis=1)])
    graph = build_knn_graph(points, 2)
    matches = SparseCorrespondences([0], [0], [0.0], [[1.0, 2.0, 3.0]], [np.eye(3)])
    field, diagnostics = interpolate_motion(graph, matches)
    assert diagnostics["unanchored_components"] == 1
    assert np.allclose(field.vectors[:10], [1.0, 2.0, 3.0])
    assert np.allclose(field.vectors[10:], 0.0)

def test_smoothing_weight_must_be_positive(lattice):
    with pytest.raises(DimensionError):
        interpolate_motion(build_knn_graph(lattice, 6), SparseCorrespondences([], [], [], np.zeros((0, 3))), mu=0.0)

def test_identical_frames_give_zero_motion(still_sequence):
    reference, target = still_sequence.frames
    wavelets = WaveletConfig([2.0, 1.0], 0.5)
    model = PrecisionModel.identity(wavelets.descriptor_length)
    field, diagnostics = estimate_motion(reference, target, model, wavelets, k=10)
    assert len(field) == len(reference)
    assert np.allclose(field.vectors, 0.0)
    assert diagnostics["sparse_matches"] == 0
    with pytest.raises(DimensionError):
        estimate_motion(reference, target, PrecisionModel.identity(3), wavelets, k=10)

def test_stronger_smoothing_never_raises_the_dirichlet_energy(rng):
    voxels = np.stack(np.meshgrid(np.arange(2), np.arange(3), np.arange(5), indexing="ij"), axis=-1).reshape(-1, 3)
    graph = build_knn_graph(voxels + 0.5, 6)
    anchors = rng.choice(graph.n, size=5, replace=False)
    matches = SparseCorrespondences(anchors, anchors, np.zeros(5), rng.normal(size=(5, 3)),
                                    np.array([_spd(rng) for _ in anchors]))
    operator = laplacian(graph)
    energies = []
    for mu in (0.1, 1.0, 10.0):
        field, _ = interpolate_motion(graph, matches, mu=mu)
        energies.append(sum(float(v @ (operator @ v)) for v in field.vectors.T))
    assert energies[0] > 0.0
    assert all(later <= earlier + 1e-9 for earlier, later in zip(energies, energies[1:]))

def test_nearly_identical_frames_accept_zero_offset_matches(still_sequence, rng):
    reference, _ = still_sequence.frames
    target = VoxelFrame(reference.voxel_set, reference.colors + rng.uniform(-0.01, 0.01, size=reference.colors.shape))
    wavelets = WaveletConfig([2.0, 1.0], 0.5)
    model = PrecisionModel.identity(wavelets.descriptor_length)
    field, diagnostics = estimate_motion(reference, target, model, wavelets, k=10)
    assert diagnostics["sparse_matches"] > 0
    assert np.allclose(field.vectors, 0.0, atol=1e-9)

def test_translation_is_recovered_within_a_voxel(moving_sphere, trained_precision):
    reference, target = moving_sphere.frames
    field, diagnostics = estimate_motion(reference, target, trained_precision)
    assert diagnostics["sparse_matches"] > 0
    assert endpoint_error(field, moving_sphere.motions[0]) <= 1.0
