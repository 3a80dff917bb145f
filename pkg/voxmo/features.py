"""Octant-partitioned spectral graph wavelet descriptors.

Notes
-----
Each band is a polynomial p_b(L) of the graph Laplacian: the scaling band approximates
h(L) = exp(-L / lmin) and wavelet band s approximates g(sL) with g(x) = x exp(1 - x). The
descriptor of vertex i holds, for every octant k around i, signal f in (x, y, z, r, g, b) and
band b, the value (p_b(L) (f * o_k,i))(i) = sum_j p_b(L)[i, j] o_k,i(j) f(j). Rows of p_b(L) are
obtained by running the Chebyshev recurrence on batches of impulses, so L is only ever touched
through sparse matrix products.
"""

import numpy as np
import log, settings
from graph import laplacian, eigendecompose
from voxels import VoxelFrame
from errors import DimensionError

logger = log.get("features")

SIGNALS = ("x", "y", "z", "r", "g", "b")
OCTANTS = 8

def band_kernel(x, scale):
    sx = scale * np.asarray(x, dtype=np.float64)
    return sx * np.exp(1.0 - sx)

def scaling_kernel(x, cutoff):
    return np.exp(-np.asarray(x, dtype=np.float64) / cutoff)

class WaveletConfig:
    """Wavelet scales, scaling kernel cutoff and Chebyshev degree.

    Parameters
    ----------
    scales : list of float
        Strictly monotone wavelet scales.

    cutoff : float
        The scaling kernel is exp(-x / cutoff).

    degree : int, optional
        Chebyshev approximation degree. Defaults to `settings.CHEBYSHEV_DEGREE`.
    """
    def __init__(self, scales, cutoff, degree=None):
        if degree is None:
            degree = settings.CHEBYSHEV_DEGREE
        scales = [float(s) for s in scales]
        if degree < 1:
            raise DimensionError(f"Chebyshev degree must be at least 1, got {degree}")
        if not scales or any(s <= 0 for s in scales):
            raise DimensionError("wavelet scales must be positive")
        steps = np.diff(scales)
        if len(steps) and not (np.all(steps > 0) or np.all(steps < 0)):
            raise DimensionError("wavelet scales must be strictly monotone")
        if not cutoff > 0:
            raise DimensionError(f"scaling cutoff must be positive, got {cutoff}")
        self.scales = scales
        self.cutoff = float(cutoff)
        self.degree = int(degree)

    @classmethod
    def for_lmax(cls, lmax, scale_count=None, degree=None, partition=None):
        """Places `scale_count` scales log-spaced from partition/lmax down to 1/lmax."""
        if scale_count is None:
            scale_count = settings.WAVELET_SCALES
        if partition is None:
            partition = settings.SPECTRUM_PARTITION
        if not lmax > 0:
            lmax = 1.0
        lmin = lmax / partition
        scales = np.exp(np.linspace(np.log(1.0 / lmin), np.log(1.0 / lmax), scale_count))
        return cls(scales.tolist(), lmin, degree)

    @property
    def bands(self):
        return len(self.scales) + 1

    @property
    def descriptor_length(self):
        return OCTANTS * len(SIGNALS) * self.bands

    def kernels(self, x):
        """(bands, len(x)) kernel values, scaling band first."""
        return np.stack([scaling_kernel(x, self.cutoff)] + [band_kernel(x, s) for s in self.scales])

    def __eq__(self, other):
        return isinstance(other, WaveletConfig) and \
            (self.scales, self.cutoff, self.degree) == (other.scales, other.cutoff, other.degree)

    def __str__(self):
        return f"<wavelets:{len(self.scales)} scales, degree {self.degree}>"

def estimate_lmax(graph, iterations=None, seed=0):
    """Upper estimate of the largest Laplacian eigenvalue.

    Runs power iteration from a seeded random start, inflates the Rayleigh quotient by
    `settings.LMAX_INFLATION` and caps it with the bound 2 * max degree, which is also the
    fallback when the iteration fails.
    """
    if iterations is None:
        iterations = settings.POWER_ITERATIONS
    bound = 2.0 * float(graph.degree.max()) if graph.n else 0.0
    if bound == 0.0:
        return 0.0
    matrix = laplacian(graph)
    vector = np.random.default_rng(seed).standard_normal(graph.n)
    estimate = np.nan
    for _ in range(iterations):
        norm = np.linalg.norm(vector)
        if not norm > 0:
            break
        vector = vector / norm
        product = matrix @ vector
        estimate = float(vector @ product)
        vector = product
    if not (np.isfinite(estimate) and estimate > 0):
        logger.warning(f"Power iteration failed on {graph}; using the degree bound {bound}.")
        return bound
    return min(estimate * settings.LMAX_INFLATION, bound)

def chebyshev_coefficients(kernel, degree, lmax):
    """Chebyshev coefficients of `kernel` on [0, lmax] by Gauss-Chebyshev quadrature on degree + 1 nodes."""
    nodes = degree + 1
    angles = np.pi * (np.arange(nodes) + 0.5) / nodes
    half = lmax / 2.0
    values = np.atleast_2d(kernel(half * np.cos(angles) + half))
    orders = np.arange(degree + 1)
    return 2.0 / nodes * values @ np.cos(np.outer(angles, orders))

def chebyshev_apply(matrix, coefficients, signal, lmax):
    """Applies the Chebyshev expansions in `coefficients` (rows) to `signal` through the three-term recurrence.

    Returns
    -------
    np.Array
        (rows, *signal.shape) filtered signals.
    """
    coefficients = np.atleast_2d(coefficients)
    signal = np.asarray(signal, dtype=np.float64)
    half = lmax / 2.0
    previous = signal
    current = (matrix @ signal - half * signal) / half
    result = 0.5 * coefficients[:, 0].reshape((-1,) + (1,) * signal.ndim) * previous
    if coefficients.shape[1] > 1:
        result = result + coefficients[:, 1].reshape((-1,) + (1,) * signal.ndim) * current
    for order in range(2, coefficients.shape[1]):
        following = 2.0 / half * (matrix @ current - half * current) - previous
        result = result + coefficients[:, order].reshape((-1,) + (1,) * signal.ndim) * following
        previous, current = current, following
    return result

def _band_operator(graph, config):
    """Returns a function mapping (N, C) signals to (bands, N, C) band-filtered signals."""
    lmax = estimate_lmax(graph)
    if lmax == 0.0:
        # edgeless graph: L = 0, every band acts as its kernel value at zero
        at_zero = config.kernels(np.zeros(1))[:, 0]
        return lambda signal: at_zero.reshape((-1,) + (1,) * np.ndim(signal)) * np.asarray(signal, dtype=np.float64)
    coefficients = chebyshev_coefficients(config.kernels, config.degree, lmax)
    matrix = laplacian(graph)
    return lambda signal: chebyshev_apply(matrix, coefficients, signal, lmax)

def sgw_transform(graph, config, signal):
    """Chebyshev-approximated wavelet coefficients of a signal.

    Parameters
    ----------
    graph : graph.VoxelGraph

    config : WaveletConfig

    signal : np.Array
        (N,) or (N, C) vertex signal.

    Returns
    -------
    np.Array
        (N, bands) or (N, C, bands) coefficients, the scaling band first.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] != graph.n:
        raise DimensionError(f"signal of length {signal.shape[0]} on {graph}")
    return np.moveaxis(_band_operator(graph, config)(signal), 0, -1)

def sgw_transform_exact(graph, config, signal, spectrum=None):
    """Same as `sgw_transform`, evaluated exactly through the eigendecomposition of L."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] != graph.n:
        raise DimensionError(f"signal of length {signal.shape[0]} on {graph}")
    if spectrum is None:
        spectrum = eigendecompose(graph, limit=None)
    basis = spectrum.eigenvectors
    kernels = config.kernels(spectrum.eigenvalues)
    transformed = basis.T @ signal
    bands = [basis @ (k.reshape((-1,) + (1,) * (signal.ndim - 1)) * transformed) for k in kernels]
    return np.stack(bands, axis=-1)

def _signals(frame):
    if isinstance(frame, VoxelFrame):
        return frame.signals
    signals = np.asarray(frame, dtype=np.float64)
    if signals.ndim != 2 or signals.shape[1] != len(SIGNALS):
        raise DimensionError(f"expected an (N, {len(SIGNALS)}) signal matrix, got shape {signals.shape}")
    return signals

def octant_codes(positions, vertices):
    """(N, len(vertices)) octant code of every vertex j relative to each listed vertex i.

    Bit a of the code is set when coordinate a of j is strictly smaller than that of i,
    so code 0 is the octant where all coordinates are >= those of i.
    """
    positions = np.asarray(positions, dtype=np.float64)
    centers = positions[np.asarray(vertices)]
    lower = positions[:, None, :] < centers[None, :, :]
    return lower[..., 0] | (lower[..., 1].astype(np.int64) << 1) | (lower[..., 2].astype(np.int64) << 2)

def octant_indicator(frame, vertex, octant):
    """Binary signal selecting the vertices in octant `octant` (1..8) around `vertex`."""
    if not 1 <= octant <= OCTANTS:
        raise DimensionError(f"octant must lie in 1..{OCTANTS}, got {octant}")
    positions = _signals(frame)[:, :3]
    return (octant_codes(positions, [vertex])[:, 0] == octant - 1).astype(np.float64)

def _descriptors(signals, operator, config, vertices):
    n = len(signals)
    impulses = np.zeros((n, len(vertices)))
    impulses[vertices, np.arange(len(vertices))] = 1.0
    # rows of every band operator restricted to the batch, (bands, N, batch); p_b(L) is symmetric
    rows = operator(impulses)
    codes = octant_codes(signals[:, :3], vertices)
    out = np.empty((len(vertices), OCTANTS, len(SIGNALS), config.bands))
    for octant in range(OCTANTS):
        masked = rows * (codes == octant)[None, :, :]
        out[:, octant] = np.transpose(np.tensordot(masked, signals, axes=([1], [0])), (1, 2, 0))
    return out.reshape(len(vertices), -1)

def compute_descriptor(frame, graph, config, vertex):
    """Descriptor of one vertex, laid out (octant, signal, band) with the band varying fastest."""
    signals = _signals(frame)
    return _descriptors(signals, _band_operator(graph, config), config, np.array([vertex]))[0]

def compute_all_descriptors(frame, graph, config, batch=None):
    """Descriptors of every vertex of a frame.

    Parameters
    ----------
    frame : voxels.VoxelFrame or np.Array
        Frame or (N, 6) signal matrix with columns x, y, z, r, g, b.

    graph : graph.VoxelGraph
        Graph built on the frame.

    config : WaveletConfig

    batch : int, optional
        Impulses filtered per Chebyshev pass. Defaults to `settings.FEATURE_BATCH`.

    Returns
    -------
    np.Array
        (N, config.descriptor_length) descriptor table.
    """
    if batch is None:
        batch = settings.FEATURE_BATCH
    signals = _signals(frame)
    if len(signals) != graph.n:
        raise DimensionError(f"{len(signals)} signal rows on {graph}")
    logger.info(f"Computing descriptors for {graph}...")
    operator = _band_operator(graph, config)
    table = np.empty((graph.n, config.descriptor_length))
    for start in range(0, graph.n, batch):
        vertices = np.arange(start, min(start + batch, graph.n))
        table[vertices] = _descriptors(signals, operator, config, vertices)
    logger.info(f"Computed {graph.n} descriptors of length {config.descriptor_length}.")
    return table
