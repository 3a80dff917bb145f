"""Feature matching between consecutive frames and sparse-to-dense motion estimation.

Notes
-----
Target vertices are matched to reference vertices under a learned Mahalanobis metric. A K-means
partition of the target keeps at most one confident match per cluster; the offsets of those
sparse correspondences are then spread over the whole reference graph by minimizing

    sum_n (v(m_n) - v_n)^T M_n^+ (v(m_n) - v_n) + mu * sum_axis v_axis^T L v_axis

whose minimizer solves (Q + mu (I_3 kron L)) v = Q v_sparse, with v stored as stacked
coordinate blocks (all x, then all y, then all z).
"""

import struct
import numpy as np
from scipy import sparse
from scipy.cluster.vq import kmeans2
from scipy.linalg import cho_factor, cho_solve, cholesky, eigh
from scipy.sparse.linalg import spsolve
import log, settings
from graph import build_knn_graph, connected_components, laplacian
from features import WaveletConfig, compute_all_descriptors, estimate_lmax
from errors import DimensionError, ModelError

logger = log.get("motion")

_PRECISION_MAGIC = b"VXPM"
_PRECISION_VERSION = 2
_WAVELET_TAIL = struct.Struct("<dH")

class PrecisionModel:
    """Symmetric positive-definite precision matrix of descriptor differences.

    Parameters
    ----------
    matrix : np.Array
        (D, D) precision matrix.

    epsilon : float
        Ridge added to the difference covariance before inversion.

    provenance : str, optional
        Identifier of the training data.

    wavelets : features.WaveletConfig, optional
        Wavelets of the training descriptors.
    """
    def __init__(self, matrix, epsilon, provenance="", wavelets=None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ModelError(f"precision matrix must be square, got shape {matrix.shape}")
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-10):
            raise ModelError("precision matrix is not symmetric")
        try:
            # upper factor U with P = U^T U; descriptors map to x U^T
            self.whitening = cholesky(matrix, lower=False)
        except np.linalg.LinAlgError as exc:
            raise ModelError("precision matrix is not positive definite") from exc
        self.matrix = matrix
        self.epsilon = float(epsilon)
        self.provenance = provenance
        if wavelets is not None and wavelets.descriptor_length != self.dimension:
            raise ModelError(f"{wavelets} give descriptors of length {wavelets.descriptor_length}, not {self.dimension}")
        self.wavelets = wavelets

    @classmethod
    def identity(cls, dimension):
        return cls(np.eye(dimension), 0.0, "identity")

    @property
    def dimension(self):
        return self.matrix.shape[0]

    def whiten(self, descriptors):
        descriptors = np.asarray(descriptors, dtype=np.float64)
        if descriptors.shape[-1] != self.dimension:
            raise DimensionError(f"descriptors of length {descriptors.shape[-1]} under a {self.dimension}-dimensional model")
        return descriptors @ self.whitening.T

    def __str__(self):
        return f"<precision:{self.dimension}>"

def match_score(a, b, model):
    """Mahalanobis score (a - b)^T P (a - b)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.shape[-1] != model.dimension:
        raise DimensionError(f"cannot score descriptors of shapes {a.shape} and {b.shape} under {model}")
    difference = a - b
    return float(difference @ model.matrix @ difference)

def train_precision(pairs, epsilon=None, provenance="", wavelets=None):
    """Learns the precision as the regularized inverse covariance of corresponding-descriptor differences.

    Parameters
    ----------
    pairs : iterable of (np.Array, np.Array)
        Descriptors known to be in correspondence.

    epsilon : float, optional
        Ridge on the covariance diagonal. Defaults to `settings.PRECISION_EPSILON`.

    provenance : str, optional
        Identifier recorded in the model.

    wavelets : features.WaveletConfig, optional
        Wavelets the descriptors were computed with, recorded in the model.

    Returns
    -------
    PrecisionModel

    Raises
    ------
    ModelError
        With fewer than two pairs or a non-positive `epsilon`.
    """
    if epsilon is None:
        epsilon = settings.PRECISION_EPSILON
    if not epsilon > 0:
        raise ModelError(f"epsilon must be positive, got {epsilon}")
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ModelError(f"training needs at least 2 pairs, got {len(pairs)}")
    differences = np.array([np.atleast_1d(a) - np.atleast_1d(b) for a, b in pairs], dtype=np.float64)
    covariance = np.atleast_2d(np.cov(differences, rowvar=False, ddof=1))
    dimension = covariance.shape[0]
    factor = cho_factor(covariance + epsilon * np.eye(dimension))
    precision = cho_solve(factor, np.eye(dimension))
    logger.info(f"Trained a {dimension}-dimensional precision model on {len(pairs)} pairs.")
    return PrecisionModel(0.5 * (precision + precision.T), epsilon, provenance, wavelets)

def save_precision(filepath, model):
    """Writes a model file; the trailing wavelet block holds a u8 scale count (0 when absent),
    the scales, the cutoff and the Chebyshev degree.
    """
    identifier = model.provenance.encode("utf-8")
    with open(filepath, "wb") as f:
        f.write(_PRECISION_MAGIC)
        f.write(struct.pack("<HIdH", _PRECISION_VERSION, model.dimension, model.epsilon, len(identifier)))
        f.write(identifier)
        f.write(model.matrix.astype("<f8").tobytes(order="C"))
        if model.wavelets is None:
            f.write(bytes([0]))
        else:
            scales = model.wavelets.scales
            f.write(bytes([len(scales)]) + struct.pack(f"<{len(scales)}d", *scales))
            f.write(_WAVELET_TAIL.pack(model.wavelets.cutoff, model.wavelets.degree))
    logger.info(f"Wrote {model} to {filepath}.")

def _read_wavelets(data, filepath):
    if not data:
        raise ModelError(f"{filepath} lacks its wavelet block")
    count = data[0]
    if count == 0:
        if len(data) != 1:
            raise ModelError(f"{filepath} has {len(data) - 1} surplus bytes")
        return None
    if len(data) != 1 + 8 * count + _WAVELET_TAIL.size:
        raise ModelError(f"{filepath} has a malformed wavelet block")
    scales = struct.unpack_from(f"<{count}d", data, 1)
    cutoff, degree = _WAVELET_TAIL.unpack_from(data, 1 + 8 * count)
    try:
        return WaveletConfig(scales, cutoff, degree)
    except DimensionError as exc:
        raise ModelError(f"{filepath} holds invalid wavelets: {exc}") from exc

def load_precision(filepath):
    """Reads a model file; version 1 files carry no wavelets."""
    with open(filepath, "rb") as f:
        data = f.read()
    head = 4 + struct.calcsize("<HIdH")
    if len(data) < head or data[:4] != _PRECISION_MAGIC:
        raise ModelError(f"{filepath} is not a precision model file")
    version, dimension, epsilon, length = struct.unpack_from("<HIdH", data, 4)
    if version not in (1, _PRECISION_VERSION):
        raise ModelError(f"unsupported precision model version {version}")
    size = 8 * dimension * dimension
    start = head + length
    body = data[start:start + size]
    if len(body) != size or (version == 1 and len(data) != start + size):
        raise ModelError(f"{filepath} holds {len(data) - start} bytes after its header, expected {size} matrix bytes")
    wavelets = _read_wavelets(data[start + size:], filepath) if version > 1 else None
    matrix = np.frombuffer(body, dtype="<f8").reshape(dimension, dimension)
    provenance = data[head:start].decode("utf-8")
    return PrecisionModel(matrix.astype(np.float64), epsilon, provenance, wavelets)

def best_matches(targets, references, model, chunk=512):
    """Best reference match of every target descriptor.

    Parameters
    ----------
    targets : np.Array
        (Nt, D) target descriptors.

    references : np.Array
        (Nr, D) reference descriptors, Nr >= 1.

    model : PrecisionModel

    Returns
    -------
    (np.Array, np.Array)
        Per target, the index of the reference with the smallest score (smaller index on ties)
        and that score.
    """
    targets, references = model.whiten(targets), model.whiten(references)
    if len(references) == 0:
        raise DimensionError("cannot match against an empty reference")
    reference_norms = (references ** 2).sum(axis=1)
    indices = np.empty(len(targets), dtype=np.int64)
    scores = np.empty(len(targets))
    for start in range(0, len(targets), chunk):
        block = targets[start:start + chunk]
        norms = (block ** 2).sum(axis=1)
        approximate = norms[:, None] + reference_norms[None, :] - 2.0 * block @ references.T
        smallest = approximate.min(axis=1)
        slack = 1e-9 * (norms + reference_norms.max()) + 1e-12
        for row in range(len(block)):
            # expansion error can reorder near-ties; rescore those exactly
            candidates = np.flatnonzero(approximate[row] <= smallest[row] + slack[row])
            exact = ((references[candidates] - block[row]) ** 2).sum(axis=1)
            best = int(np.argmin(exact))
            indices[start + row] = candidates[best]
            scores[start + row] = exact[best]
    return indices, scores

def best_match(target, references, model):
    """Index and score of the best reference match of one target descriptor."""
    indices, scores = best_matches(np.atleast_2d(target), references, model)
    return int(indices[0]), float(scores[0])

def farthest_point_seeds(points, count):
    """Greedy farthest-point sampling starting from point 0; ties go to the smaller index."""
    points = np.asarray(points, dtype=np.float64)
    chosen = [0]
    distances = ((points - points[0]) ** 2).sum(axis=1)
    while len(chosen) < count:
        following = int(np.argmax(distances))
        chosen.append(following)
        distances = np.minimum(distances, ((points - points[following]) ** 2).sum(axis=1))
    return np.array(chosen, dtype=np.int64)

def cluster_vertices(positions, clusters=None, iterations=None):
    """Deterministic K-means labels of vertex positions; K >= N gives singleton clusters."""
    if clusters is None:
        clusters = settings.SPARSE_CLUSTERS
    if iterations is None:
        iterations = settings.KMEANS_ITERATIONS
    positions = np.asarray(positions, dtype=np.float64)
    if clusters < 1:
        raise DimensionError(f"cluster count must be at least 1, got {clusters}")
    if clusters >= len(positions):
        return np.arange(len(positions))
    seeds = positions[farthest_point_seeds(positions, clusters)]
    _, labels = kmeans2(positions, seeds, iter=iterations, minit="matrix", missing="warn")
    return labels

class SparseCorrespondences:
    """Accepted matches (reference m, target n, score) with the offset covariance M_n of each.

    Attributes
    ----------
    vectors : np.Array
        (P, 3) motion vectors p_target(n) - p_reference(m).
    """
    def __init__(self, references, targets, scores, vectors, covariances=None):
        self.references = np.asarray(references, dtype=np.int64)
        self.targets = np.asarray(targets, dtype=np.int64)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
        if covariances is None:
            covariances = np.zeros((len(self.targets), 3, 3))
        self.covariances = np.asarray(covariances, dtype=np.float64).reshape(-1, 3, 3)

    def __len__(self):
        return len(self.targets)

    def __str__(self):
        return f"<correspondences:{len(self)}>"

    @property
    def pairs(self):
        return list(zip(self.references.tolist(), self.targets.tolist(), self.scores.tolist()))

    def with_covariances(self, covariances):
        return SparseCorrespondences(self.references, self.targets, self.scores, self.vectors, covariances)

def select_sparse(target, matches, reference_positions, clusters=None, threshold=None, percentile=None):
    """Keeps the best-scoring match of each spatial cluster of the target, if it beats the threshold.

    Parameters
    ----------
    target : voxels.VoxelFrame
        Target frame; its voxel centers are clustered.

    matches : (np.Array, np.Array)
        Best reference index and score of every target vertex.

    reference_positions : np.Array
        (Nr, 3) reference positions, used for the motion vectors.

    clusters : int, optional
        K-means cluster count. Defaults to `settings.SPARSE_CLUSTERS`.

    threshold : float, optional
        A representative is kept only if its score is below this. Defaults to the
        `percentile` percentile of the best scores.

    percentile : float, optional
        Defaults to `settings.THRESHOLD_PERCENTILE`.

    Returns
    -------
    SparseCorrespondences
        Sorted by target vertex.
    """
    indices, scores = (np.asarray(m) for m in matches)
    positions = target.positions
    if len(positions) == 0:
        return SparseCorrespondences([], [], [], np.zeros((0, 3)))
    if percentile is None:
        percentile = settings.THRESHOLD_PERCENTILE
    if threshold is None:
        threshold = float(np.percentile(scores, percentile))
    labels = cluster_vertices(positions, clusters)
    vertices = np.arange(len(positions))
    order = np.lexsort((vertices, scores, labels))
    first = np.r_[True, labels[order][1:] != labels[order][:-1]]
    representatives = np.sort(order[first])
    accepted = representatives[scores[representatives] < threshold]
    references = indices[accepted]
    vectors = positions[accepted] - np.asarray(reference_positions)[references]
    logger.info(f"Accepted {len(accepted)} of {len(representatives)} cluster representatives (threshold {threshold:.4g}).")
    return SparseCorrespondences(references, accepted, scores[accepted], vectors)

def two_hop_neighborhood(graph, vertex):
    """Vertices within two hops of `vertex`, excluding it, in increasing order."""
    first = graph.neighbors(vertex)
    second = [graph.neighbors(v) for v in first]
    hood = np.unique(np.concatenate([first] + second)) if len(first) else np.zeros(0, dtype=np.int64)
    return hood[hood != vertex]

def estimate_offset_covariance(positions, vertex, neighborhood, scores, best_score, floor=None):
    """Score-normalized covariance of the offsets from `vertex` to its neighborhood.

    Parameters
    ----------
    positions : np.Array
        (N, 3) reference positions.

    vertex : int
        Best match m_n of the target vertex.

    neighborhood : np.Array
        Reference vertices around `vertex`.

    scores : np.Array
        Score of the target vertex against each neighborhood vertex.

    best_score : float
        Score of the target vertex against `vertex`.

    floor : float, optional
        Terms whose score excess is at most this are skipped. Defaults to `settings.SCORE_EXCESS_FLOOR`.

    Returns
    -------
    (np.Array, int)
        The 3x3 matrix (1/|hood|) sum dp dp^T / (score - best_score) over kept terms, and the
        number of skipped terms.
    """
    if floor is None:
        floor = settings.SCORE_EXCESS_FLOOR
    neighborhood = np.asarray(neighborhood, dtype=np.int64)
    if len(neighborhood) == 0:
        return np.zeros((3, 3)), 0
    excess = np.asarray(scores, dtype=np.float64) - best_score
    kept = excess > floor
    offsets = positions[neighborhood[kept]] - positions[vertex]
    weighted = offsets / excess[kept][:, None]
    covariance = offsets.T @ weighted / len(neighborhood)
    return 0.5 * (covariance + covariance.T), int(np.sum(~kept))

def offset_covariances(sparse_matches, graph, reference_descriptors, target_descriptors, model):
    """Attaches M_n to every sparse correspondence, scoring each target against the 2-hop neighborhood of its match."""
    references, targets = model.whiten(reference_descriptors), model.whiten(target_descriptors)
    covariances = np.zeros((len(sparse_matches), 3, 3))
    skipped = 0
    for row, (m, n, score) in enumerate(sparse_matches.pairs):
        hood = two_hop_neighborhood(graph, m)
        scores = ((references[hood] - targets[n]) ** 2).sum(axis=1)
        covariances[row], dropped = estimate_offset_covariance(graph.positions, m, hood, scores, score)
        skipped += dropped
    if skipped:
        logger.warning(f"Skipped {skipped} offset terms whose score did not exceed the best match.")
    return sparse_matches.with_covariances(covariances), skipped

def pseudo_inverse(matrix, floor=None):
    """Eigen pseudo-inverse of a PSD 3x3 matrix, discarding eigenvalues below floor * trace."""
    if floor is None:
        floor = settings.PSEUDO_INVERSE_FLOOR
    trace = float(np.trace(matrix))
    if not trace > 0:
        return np.zeros_like(matrix)
    values, vectors = eigh(matrix)
    kept = values > floor * trace
    return (vectors[:, kept] / values[kept]) @ vectors[:, kept].T

class MotionField:
    """Per-vertex 3D displacement on the reference frame.

    Parameters
    ----------
    vectors : np.Array
        (N, 3) finite displacements in grid units.
    """
    def __init__(self, vectors):
        vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(vectors)):
            raise DimensionError("motion vectors must be finite")
        self.vectors = vectors

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 3)))

    @classmethod
    def from_stacked(cls, stacked):
        """Field from a 3N vector of stacked coordinate blocks."""
        stacked = np.asarray(stacked, dtype=np.float64).reshape(-1)
        if len(stacked) % 3:
            raise DimensionError(f"stacked motion vector length {len(stacked)} is not a multiple of 3")
        return cls(stacked.reshape(3, -1).T)

    @property
    def stacked(self):
        return self.vectors.T.reshape(-1)

    def __len__(self):
        return len(self.vectors)

    def __str__(self):
        return f"<motion:{len(self)}>"

def fitting_blocks(n, sparse_matches):
    """Per-vertex fitting blocks Q_m = sum M_n^+ and right-hand sides sum M_n^+ v_n over the matches of m."""
    blocks = np.zeros((n, 3, 3))
    targets = np.zeros((n, 3))
    for m, covariance, vector in zip(sparse_matches.references, sparse_matches.covariances, sparse_matches.vectors):
        inverse = pseudo_inverse(covariance)
        blocks[m] += inverse
        targets[m] += inverse @ vector
    return blocks, targets

def _stacked_blocks(blocks):
    n = len(blocks)
    rows, cols, values = [], [], []
    vertices = np.arange(n)
    for a in range(3):
        for b in range(3):
            rows.append(a * n + vertices)
            cols.append(b * n + vertices)
            values.append(blocks[:, a, b])
    return sparse.coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * n, 3 * n)
    ).tocsr()

def interpolate_motion(graph, sparse_matches, mu=None):
    """Dense motion field minimizing the fitting error at sparse matches plus mu times its graph smoothness.

    Parameters
    ----------
    graph : graph.VoxelGraph
        Reference frame graph.

    sparse_matches : SparseCorrespondences
        Matches with their offset covariances.

    mu : float, optional
        Smoothness weight. Defaults to `settings.MOTION_SMOOTHING`.

    Returns
    -------
    (MotionField, dict)
        The field and diagnostics: unanchored component count, pinned direction count and
        relative residual of the linear solve.

    Notes
    -----
    In each connected component, directions that no match constrains are pinned to zero
    motion; a component without any match therefore does not move.
    """
    if mu is None:
        mu = settings.MOTION_SMOOTHING
    if not mu > 0:
        raise DimensionError(f"smoothing weight must be positive, got {mu}")
    n = graph.n
    blocks, targets = fitting_blocks(n, sparse_matches)
    count, labels = connected_components(graph)
    unanchored, pinned = 0, 0
    for component in range(count):
        members = labels == component
        total = blocks[members].sum(axis=0)
        trace = float(np.trace(total))
        if not trace > 0:
            unanchored += 1
            free = np.eye(3)
        else:
            values, vectors = eigh(total)
            free = vectors[:, values <= settings.PSEUDO_INVERSE_FLOOR * trace]
        if free.shape[1]:
            pinned += free.shape[1]
            blocks[members] += free @ free.T
    if unanchored:
        logger.warning(f"{unanchored} of {count} graph components have no accepted match; their motion is zero.")
    system = (_stacked_blocks(blocks) + mu * sparse.kron(sparse.identity(3), laplacian(graph))).tocsc()
    rhs = targets.T.reshape(-1)
    solution = np.atleast_1d(spsolve(system, rhs))
    scale = np.linalg.norm(rhs)
    residual = float(np.linalg.norm(system @ solution - rhs) / scale) if scale > 0 else float(np.linalg.norm(solution))
    if residual > settings.SOLVER_TOLERANCE:
        logger.warning(f"Motion solve relative residual {residual:.3g} exceeds {settings.SOLVER_TOLERANCE}.")
    diagnostics = {"unanchored_components" : unanchored, "pinned_directions" : pinned, "residual" : residual}
    return MotionField.from_stacked(solution), diagnostics

def estimate_motion(reference, target, model, wavelets=None, k=None, mu=None, clusters=None,
                    threshold=None, percentile=None, reference_graph=None):
    """Estimates the dense motion field carrying `reference` towards `target`.

    Parameters
    ----------
    reference, target : voxels.VoxelFrame
        Consecutive frames on the same grid, with colors.

    model : PrecisionModel
        Descriptor precision; its dimension must match the descriptor length.

    wavelets : features.WaveletConfig, optional
        Defaults to the wavelets of `model`, else to scales placed for the reference graph.

    k, mu, clusters, threshold, percentile : optional
        Graph neighbors, smoothing weight, cluster count, score threshold and the percentile of
        best scores used as threshold when none is given; defaults from `settings`.

    reference_graph : graph.VoxelGraph, optional
        Graph of the reference frame, if already built.

    Returns
    -------
    (MotionField, dict)
        Field on the reference vertices and diagnostics of every stage.
    """
    logger.info(f"Estimating motion from {reference} to {target}...")
    if reference_graph is None:
        reference_graph = build_knn_graph(reference, k)
    target_graph = build_knn_graph(target, k)
    if wavelets is None:
        wavelets = model.wavelets or WaveletConfig.for_lmax(estimate_lmax(reference_graph))
    if model.dimension != wavelets.descriptor_length:
        raise DimensionError(f"{model} cannot score descriptors of length {wavelets.descriptor_length}")
    reference_descriptors = compute_all_descriptors(reference, reference_graph, wavelets)
    target_descriptors = compute_all_descriptors(target, target_graph, wavelets)
    matches = best_matches(target_descriptors, reference_descriptors, model)
    chosen = select_sparse(target, matches, reference.positions, clusters, threshold, percentile)
    chosen, skipped = offset_covariances(chosen, reference_graph, reference_descriptors, target_descriptors, model)
    field, diagnostics = interpolate_motion(reference_graph, chosen, mu)
    diagnostics.update({"sparse_matches" : len(chosen), "skipped_terms" : skipped})
    logger.info(f"Estimated {field} from {len(chosen)} sparse matches.")
    return field, diagnostics
