# voxel grid and octree
DEFAULT_DEPTH = 7
DEFAULT_STEPSIZE = 1.0
MAX_DEPTH = 21

# graph construction
KNN_NEIGHBORS = 26
DENSE_EIGEN_LIMIT = 20000
ZERO_EIGENVALUE_TOLERANCE = 1e-8

# spectral graph wavelets
WAVELET_SCALES = 4
CHEBYSHEV_DEGREE = 30
SPECTRUM_PARTITION = 10
POWER_ITERATIONS = 50
LMAX_INFLATION = 1.01
FEATURE_BATCH = 256

# motion estimation
MOTION_SMOOTHING = 1.0
SPARSE_CLUSTERS = 500
THRESHOLD_PERCENTILE = 25.0
KMEANS_ITERATIONS = 20
SCORE_EXCESS_FLOOR = 1e-9
PSEUDO_INVERSE_FLOOR = 1e-8
SOLVER_TOLERANCE = 1e-8
PRECISION_EPSILON = 1e-3
# (axis-angle degrees, translation in voxels) pairs used when no precision model is supplied
TRAINING_TRANSFORMS = [
    ((0.0, 0.0, 0.0), (1.0, 0.0, 0.0)),
    ((0.0, 0.0, 0.0), (0.0, -1.0, 2.0)),
    ((0.0, 0.0, 4.0), (1.0, 1.0, 0.0)),
]

# entropy coding
RLGR_LOG2_L = 2
RLGR_U0 = 3
RLGR_D0 = 1
RLGR_U1 = 2
RLGR_D1 = 1
RLGR_ESCAPE_PREFIX = 24
# k and kR never exceed 20; kR grows by at most 8 per codeword
RLGR_KP_MAX = 20 << RLGR_LOG2_L
RLGR_KR_GROWTH = 8 << RLGR_LOG2_L
# zig-zag codes of larger magnitudes leave int64
RLGR_MAGNITUDE_LIMIT = 1 << 62
RANGE_TOTAL = 1 << 16
RANGE_FLOOR = 16
DIRECT_MAGNITUDES = 255
DIVERSITY_DECAY = 0.95
# Laplacian models are shared between diversities within 1/16 of an octave
DIVERSITY_LEVELS = 16
MODEL_CACHE_SIZE = 4096
DIVERSITY_FLOOR = 1e-3
DC_CONSTANT = 1.0
AC_CONSTANT = 1.0

# codec
DELTA_MOTION = 0.5
DELTA_COLOR = 64.0
COLOR_BLOCK = 16
COLOR_NEIGHBORS = 3
GOP_LENGTH = 0

# reporting
SNR_CAP = 99.0
PEAK = 255.0
DELTA_COLOR_LADDER = [32, 64, 256, 512, 1024]
DELTA_MOTION_LADDER = [0.25, 0.5, 1.0, 2.0, 4.0]

# synthetic sequences
SYNTH_POINTS = 75000
SYNTH_FRAMES = 10
SYNTH_SEED = 0

# controlling log behavior
LOG_CONFIG = {
    # overall config
    "version" : 1,
    "disable_existing_loggers" : True,
    # simple formatter
    "formatters" : {
        "standard" : {
            "format" : "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
        }
    },
    # simple handler
    "handlers" : {
        "default" : {
            "level" : "INFO",
            "formatter" : "standard",
            "class" : "logging.StreamHandler",
            "stream" : "ext://sys.stdout"
        }
    },
    # configure the loggers
    "loggers" : {
        "voxmo" : {
            "handlers" : ["default"],
            "level" : "INFO",
            "propagate" : False
        }
    }
}
