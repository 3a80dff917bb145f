"""K-nearest-neighbor graphs over occupied voxels, their Laplacians and graph Fourier transforms."""

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.csgraph import connected_components as _components
from scipy.spatial import cKDTree
import log, settings
from voxels import VoxelFrame
from errors import CapacityError, DimensionError, EmptyInputError

logger = log.get("graph")

def nearest_neighbors(points, queries, k, exclude_self=False):
    """Finds the `k` nearest points to each query, breaking distance ties by smaller point index.

    Parameters
    ----------
    points : np.Array
        (N, 3) searched points.

    queries : np.Array
        (M, 3) query points. With `exclude_self`, query i must be point i.

    k : int
        Neighbors per query; clipped to the number of available points.

    exclude_self : bool, optional
        Skips point i when answering query i. Defaults to False.

    Returns
    -------
    np.Array
        (M, k') indices sorted by (squared distance, index), k' = min(k, available points).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    extra = 1 if exclude_self else 0
    count = min(k, len(points) - extra)
    if count <= 0 or len(queries) == 0:
        return np.zeros((len(queries), 0), dtype=np.int64)
    wanted = count + extra
    # one more than needed exposes ties at the selection boundary
    query_count = min(wanted + 1, len(points))
    tree = cKDTree(points)
    _, index = tree.query(queries, k=query_count)
    index = np.asarray(index, dtype=np.int64).reshape(len(queries), query_count)
    squared = ((points[index] - queries[:, None, :]) ** 2).sum(axis=2)
    rows = np.repeat(np.arange(len(queries)), query_count)
    order = np.lexsort((index.reshape(-1), squared.reshape(-1), rows)).reshape(len(queries), query_count) % query_count
    index = np.take_along_axis(index, order, axis=1)
    squared = np.take_along_axis(squared, order, axis=1)
    ambiguous = np.zeros(len(queries), dtype=bool)
    if query_count > wanted:
        ambiguous = squared[:, wanted] == squared[:, wanted - 1]
    result = np.empty((len(queries), count), dtype=np.int64)
    for row in range(len(queries)):
        if ambiguous[row]:
            radius = np.sqrt(squared[row, wanted - 1]) * (1 + 1e-9) + 1e-12
            candidates = np.array(tree.query_ball_point(queries[row], radius), dtype=np.int64)
            distances = ((points[candidates] - queries[row]) ** 2).sum(axis=1)
            candidates = candidates[np.lexsort((candidates, distances))]
        else:
            candidates = index[row]
        if exclude_self:
            candidates = candidates[candidates != row]
        result[row] = candidates[:count]
    return result

class VoxelGraph:
    """Weighted undirected graph over the vertices of a frame.

    Parameters
    ----------
    n : int
        Vertex count.

    edges : np.Array
        (E, 2) vertex pairs with i < j, sorted lexicographically and without duplicates.

    weights : np.Array
        (E,) strictly positive edge weights.

    positions : np.Array, optional
        (n, 3) vertex positions the graph was built from.
    """
    def __init__(self, n, edges, weights, positions=None):
        self.n = int(n)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if len(self.edges) != len(self.weights):
            raise DimensionError(f"{len(self.edges)} edges but {len(self.weights)} weights")
        if len(self.edges) and (np.any(self.edges[:, 0] >= self.edges[:, 1]) or np.any(self.weights <= 0)):
            raise DimensionError("edges must satisfy i < j and carry positive weights")
        self.positions = positions
        i, j = self.edges[:, 0], self.edges[:, 1]
        self.adjacency = sparse.coo_matrix(
            (np.r_[self.weights, self.weights], (np.r_[i, j], np.r_[j, i])),
            shape=(self.n, self.n),
        ).tocsr()
        self.degree = np.asarray(self.adjacency.sum(axis=1)).reshape(-1)

    @classmethod
    def from_edges(cls, n, edges, weights=None, positions=None):
        """Builds a graph from unordered edges, normalizing to i < j and merging duplicates."""
        edges = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
        if weights is None:
            weights = np.ones(len(edges))
        keys, first = np.unique(edges[:, 0] * n + edges[:, 1], return_index=True)
        return cls(n, np.stack([keys // n, keys % n], axis=1), np.asarray(weights, dtype=np.float64)[first], positions)

    def __len__(self):
        return self.n

    def __str__(self):
        return f"<graph:{self.n} vertices, {len(self.edges)} edges>"

    def neighbors(self, vertex):
        start, stop = self.adjacency.indptr[vertex], self.adjacency.indptr[vertex + 1]
        return self.adjacency.indices[start:stop]

def build_knn_graph(frame, k=None):
    """Connects each vertex to its k nearest vertices, with weight 1/distance.

    Parameters
    ----------
    frame : voxels.VoxelFrame or np.Array
        Frame whose voxel centers are the vertices, or an (N, 3) array of positions.

    k : int, optional
        Neighbors per vertex. Defaults to `settings.KNN_NEIGHBORS`.

    Returns
    -------
    VoxelGraph
        An edge exists when either endpoint selects the other.

    Raises
    ------
    EmptyInputError
        If there are no vertices.
    """
    if k is None:
        k = settings.KNN_NEIGHBORS
    if k < 1:
        raise DimensionError(f"neighbor count must be at least 1, got {k}")
    positions = frame.positions if isinstance(frame, VoxelFrame) else np.asarray(frame, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    if n == 0:
        raise EmptyInputError("cannot build a graph over zero vertices")
    neighbors = nearest_neighbors(positions, positions, k, exclude_self=True)
    sources = np.repeat(np.arange(n), neighbors.shape[1])
    targets = neighbors.reshape(-1)
    low, high = np.minimum(sources, targets), np.maximum(sources, targets)
    keys = np.unique(low * n + high)
    edges = np.stack([keys // n, keys % n], axis=1)
    distances = np.linalg.norm(positions[edges[:, 0]] - positions[edges[:, 1]], axis=1)
    return VoxelGraph(n, edges, 1.0 / distances, positions)

def laplacian(graph):
    """Combinatorial Laplacian D - W as a sparse CSR matrix."""
    return (sparse.diags(graph.degree) - graph.adjacency).tocsr()

def connected_components(graph):
    """Labels connected components, numbering them by their smallest vertex.

    Returns
    -------
    (int, np.Array)
        Component count and per-vertex labels.
    """
    count, labels = _components(graph.adjacency, directed=False)
    _, first = np.unique(labels, return_index=True)
    relabel = np.empty(count, dtype=np.int64)
    relabel[np.argsort(first)] = np.arange(count)
    return count, relabel[labels]

class Spectrum:
    """Eigenvalues in nondecreasing order and the matching orthonormal eigenvector columns.

    The first `components` eigenvalues are exactly zero; their eigenvectors are the normalized
    indicators of the connected components, ordered by smallest member.
    """
    def __init__(self, eigenvalues, eigenvectors, components, labels):
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors
        self.components = components
        self.labels = labels

    @property
    def n(self):
        return len(self.eigenvalues)

    def __str__(self):
        return f"<spectrum:{self.n}, {self.components} components>"

def eigendecompose(graph, limit=settings.DENSE_EIGEN_LIMIT):
    """Dense eigendecomposition of the graph Laplacian.

    Parameters
    ----------
    graph : VoxelGraph

    limit : int or None, optional
        Largest vertex count accepted; `None` lifts the limit. Defaults to `settings.DENSE_EIGEN_LIMIT`.

    Returns
    -------
    Spectrum
        Each eigenvector's first entry of non-negligible magnitude is positive.

    Raises
    ------
    CapacityError
        If the graph has more vertices than `limit`; such frames must be processed blockwise.
    """
    if limit is not None and graph.n > limit:
        raise CapacityError(f"{graph} exceeds the dense eigendecomposition limit of {limit} vertices; process it blockwise")
    eigenvalues, eigenvectors = eigh(laplacian(graph).toarray())
    count, labels = connected_components(graph)
    threshold = settings.ZERO_EIGENVALUE_TOLERANCE * max(eigenvalues[-1], 0.0)
    zeros = int(np.sum(eigenvalues <= threshold))
    if zeros != count:
        logger.warning(f"{graph}: {zeros} eigenvalues below {threshold:.3g} but {count} components.")
    # exact null space: one normalized indicator per component
    indicators = np.zeros((graph.n, count))
    indicators[np.arange(graph.n), labels] = 1.0
    indicators /= np.sqrt(indicators.sum(axis=0))
    eigenvectors[:, :count] = indicators
    eigenvalues[:count] = 0.0
    eigenvalues = np.maximum(eigenvalues, 0.0)
    magnitude = np.abs(eigenvectors)
    leading = np.argmax(magnitude > 1e-10 * magnitude.max(axis=0), axis=0)
    signs = np.sign(eigenvectors[leading, np.arange(graph.n)])
    signs[signs == 0] = 1.0
    eigenvectors *= signs
    return Spectrum(eigenvalues, eigenvectors, count, labels)

def _check_length(spectrum, signal):
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] != spectrum.n:
        raise DimensionError(f"signal of length {signal.shape[0]} on a {spectrum.n}-vertex spectrum")
    return signal

def gft(spectrum, signal):
    """Graph Fourier coefficients <f, chi_l>; accepts (N,) signals or (N, C) stacks of signals."""
    return spectrum.eigenvectors.T @ _check_length(spectrum, signal)

def inverse_gft(spectrum, coefficients):
    return spectrum.eigenvectors @ _check_length(spectrum, coefficients)
