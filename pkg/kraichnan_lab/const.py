"""Constants for Kraichnan flow lab."""

from typing import Final

DOMAIN: Final = "kraichnan_lab"

# Mollifier profiles
SHAPE_TRIANGLE_SMOOTH = "triangle-smooth"
SHAPE_BUMP = "bump"
SHAPE_TRUNCATED_COSINE = "truncated-cosine"
MOLLIFIER_SHAPES = (SHAPE_TRIANGLE_SMOOTH, SHAPE_BUMP, SHAPE_TRUNCATED_COSINE)

# Covariance tabulation and quadrature
DEFAULT_SAMPLES = 4096
DEFAULT_MASS = 1.0
QUADRATURE_RTOL = 1e-8
QUADRATURE_MAX_SAMPLES = 1 << 15
SYMMETRY_TOL = 1e-12
MASS_TOL = 1e-8

# Noise
RNG_PHILOX = "philox"
RNG_SCHEMES = (RNG_PHILOX,)
DEFAULT_SEED = 0
DEFAULT_BLOCK_SIZE = 256
MIN_CELLS_PER_EPS = 4
DIRECT_CONVOLUTION_MAX = 64

# Grid
DEFAULT_HALF_WIDTH = 8.0
DEFAULT_NX = 512
DEFAULT_DT = 1e-4

# SPDE schemes
FLUX_CONSERVATIVE = "conservative-central"
FLUX_UPWIND = "upwind"
FLUX_FORMS = (FLUX_CONSERVATIVE, FLUX_UPWIND)
DEFAULT_STABILITY_FACTOR = 0.25
NOISE_STABILITY_DIVISOR = 10.0
NEGATIVE_UNDERSHOOT = 1e-3
HEAT_KERNEL_IMAGE_TOL = 1e-14
TILT_MASS_TOL = 1e-8

# Particles
DEFAULT_BANDWIDTH_FACTOR = 8.0
MIN_BANDWIDTH_FACTOR = 4.0
MIN_KERNEL_PARTICLES = 10_000
MAX_PSD_CLAMPS = 100
LOW_CONFIDENCE_RSE = 0.2
ORACLE_EXPONENT_GUARD = 5.0

# q PDE
Q_CELLS_PER_EPS = 8
Q_NEGATIVE_TOL = 1e-8
# Leading steps taken as two implicit Euler half steps to damp stiff modes
Q_STARTUP_STEPS = 2
# Largest nu dt / dx^2 the q solvers step with
Q_DIFFUSION_NUMBER = 4.0
DEFAULT_DUHAMEL_TOL = 1e-6
DEFAULT_DUHAMEL_MAX_ITER = 50
DEFAULT_VOLTERRA_RESOLUTION = 2000
ARONSON_QUANTILE = 0.999
ARONSON_SLACK = 0.1
ARONSON_FLOOR = 1e-10

# Regimes
SIDE_WEAK_ENV = "weak-env"
SIDE_NEUTRAL = "neutral"
SIDE_WEAK_DIFF = "weak-diff"

REGIME_WEAK = "weak-disorder"
REGIME_CRITICAL_PROVEN = "critical-SHE-proven"
REGIME_CRITICAL_CONJECTURED = "critical-SHE-conjectured"
REGIME_STRONG = "strong-disorder"
REGIME_STICKY = "sticky-boundary"
REGIME_ARRATIA = "arratia-boundary"
REGIME_LABELS = (
    REGIME_WEAK,
    REGIME_CRITICAL_PROVEN,
    REGIME_CRITICAL_CONJECTURED,
    REGIME_STRONG,
    REGIME_STICKY,
    REGIME_ARRATIA,
)
REGIME_TOL = 1e-9

# Strong disorder diagnostic
MASS_ESCAPE_LEVEL = 0.05

# Experiment kinds
KIND_MEAN_KERNEL = "mean-kernel"
KIND_SECOND_MOMENT = "second-moment"
KIND_CRITICAL_LINE = "critical-line"
KIND_WEAK_DISORDER = "weak-disorder"
KIND_STRONG_DISORDER = "strong-disorder"
KIND_PHASE_SWEEP = "phase-sweep"
EXPERIMENT_KINDS = (
    KIND_MEAN_KERNEL,
    KIND_SECOND_MOMENT,
    KIND_CRITICAL_LINE,
    KIND_WEAK_DISORDER,
    KIND_STRONG_DISORDER,
    KIND_PHASE_SWEEP,
)

# Config sections and keys
SECTION_MOLLIFIER = "mollifier"
SECTION_GRID = "grid"
SECTION_NOISE = "noise"
SECTION_SCHEDULE = "schedule"
SECTION_SCHEME = "scheme"
SECTION_EXPERIMENT = "experiment"

CONF_SHAPE = "shape"
CONF_MASS = "mass"
CONF_SAMPLES = "samples"
CONF_L = "L"
CONF_NX = "nx"
CONF_DT = "dt"
CONF_SEED = "seed"
CONF_RNG_SCHEME = "rng_scheme"
CONF_BLOCK_SIZE = "block_size"
CONF_EPS = "eps"
CONF_EPS_LIST = "eps_list"
CONF_MU = "mu"
CONF_SIGMA = "sigma"
CONF_LAMBDA = "lambda"
CONF_ALPHA = "alpha"
CONF_BETA = "beta"
CONF_KAPPA_TARGET = "kappa_target"
CONF_NU_TARGET = "nu_target"
CONF_FLUX_FORM = "flux_form"
CONF_STABILITY_FACTOR = "stability_factor"
CONF_KIND = "kind"
CONF_REPLICAS = "replicas"
CONF_TIMES = "times"
CONF_WORKERS = "workers"
CONF_WINDOW = "window"
CONF_STRENGTHS = "strengths"

DEFAULT_REPLICAS = 1000
DEFAULT_WORKERS = 4
DEFAULT_TIMES = (0.5,)
DEFAULT_WINDOW = 0.5

# Exit codes
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_BLOW_UP = 3
EXIT_PARTIAL = 4

# Error keys
ERROR_INVALID_CONFIG = "invalid_config"
ERROR_UNRESOLVED = "unresolved"
ERROR_BLOW_UP = "blow_up"
ERROR_PARTIAL = "partial_failure"

# Output files
FILE_MANIFEST = "manifest.json"
FILE_COVARIANCE = "covariance.csv"
FILE_MASS_SERIES = "mass_series.csv"
FILE_MOMENTS = "moments.csv"
FILE_DIFFERENCE_HIST = "difference_hist.csv"
FILE_Q_LAMBDA = "q_lambda.csv"
FILE_OBSERVABLES = "observables.csv"
FILE_CRITICAL_LINE = "critical_line.csv"
FILE_WEAK_DISORDER = "weak_disorder.csv"
FILE_STRONG_DISORDER = "strong_disorder.csv"
FILE_PHASE_SWEEP = "phase_sweep.csv"

# Observables persisted with a standard error
OBSERVABLES = {
    "sup_error": {
        "name": "Mean kernel sup error",
        "unit": "1/length",
        "kinds": (KIND_MEAN_KERNEL,),
    },
    "second_moment_spde": {
        "name": "Second moment (SPDE ensemble)",
        "unit": "1/length",
        "kinds": (KIND_SECOND_MOMENT,),
    },
    "second_moment_twopoint": {
        "name": "Second moment (two-point Feynman-Kac)",
        "unit": "1/length",
        "kinds": (KIND_SECOND_MOMENT,),
    },
    "second_moment_pde": {
        "name": "Second moment (q lambda PDE)",
        "unit": "1/length",
        "kinds": (KIND_SECOND_MOMENT,),
    },
    "critical_abs_err": {
        "name": "Critical line error vs SHE oracle",
        "unit": "1/length",
        "kinds": (KIND_CRITICAL_LINE,),
    },
    "weak_abs_err": {
        "name": "Weak disorder error vs heat kernel",
        "unit": "1/length",
        "kinds": (KIND_WEAK_DISORDER,),
    },
    "mean_sqrt_mass": {
        "name": "Mean square-root tilted mass",
        "unit": "dimensionless",
        "kinds": (KIND_STRONG_DISORDER,),
    },
    "decay_rate": {
        "name": "Fitted square-root mass decay rate",
        "unit": "1/time",
        "kinds": (KIND_STRONG_DISORDER,),
    },
    "sweep_points": {
        "name": "Classified phase points",
        "unit": "count",
        "kinds": (KIND_PHASE_SWEEP,),
    },
}

# Experiment defaults per kind
DEFAULT_EPS_LIST = (0.2, 0.1, 0.05, 0.025)
DEFAULT_CRITICAL_POINT = (-0.5, 1.0)
DEFAULT_WEAK_POINT = (-0.5, 0.5)
DEFAULT_KAPPA_TARGET = 1.0
DEFAULT_NU_TARGET = 1.0
DEFAULT_STRENGTHS = (3.0, 6.0, 12.0)
DEFAULT_ALPHA_RANGE = (-1.0, 2.0)
DEFAULT_BETA_RANGE = (0.0, 2.0)
DEFAULT_GRID_POINTS = 13
DEFAULT_PROXY_FACTOR = 0.5
DEFAULT_HIST_BINS = 80
FIELD_QUANTILES = (0.05, 0.5, 0.95)

# Persistence
FILE_FIELD_TEMPLATE = "field_t{t}.csv"
CSV_FLOAT_FORMAT = ".12g"

# Standalone command drivers
COMMAND_SPDE = "spde"
COMMAND_TWO_POINT = "twopoint"
COMMAND_QPDE = "qpde"

OBSERVABLES.update(
    {
        "mean_mass": {
            "name": "Mean kernel mass",
            "unit": "dimensionless",
            "kinds": (COMMAND_SPDE,),
        },
        "fk_weight": {
            "name": "Feynman-Kac weight",
            "unit": "dimensionless",
            "kinds": (COMMAND_TWO_POINT,),
        },
        "fk_weight_delta": {
            "name": "Feynman-Kac weight at zero separation",
            "unit": "1/length",
            "kinds": (COMMAND_TWO_POINT,),
        },
        "occupation_time": {
            "name": "Feynman-Kac exponent",
            "unit": "dimensionless",
            "kinds": (COMMAND_TWO_POINT,),
        },
        "q0": {
            "name": "Weighted separation density at zero",
            "unit": "1/length",
            "kinds": (COMMAND_QPDE,),
        },
    }
)
