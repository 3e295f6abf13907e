SHARP_W_EXPONENT = 4.0 / 3.0
SHARP_W_RHS = 64.0 / 81.0  # -Δ∞ of w(x1, x2) = -|x1|^{4/3}
SHARP_W_SLOPE = 4.0 / 3.0  # |Dw| = (4/3)|x1|^{1/3}

# gradient-regularity threshold of the main estimate
ENERGY_ALPHA_THRESHOLD = 1.5

DEFAULT_DT_SAFETY = 0.8
DEFAULT_MASK_FACTOR = 10.0  # mask threshold = factor * h^{1/3}
DIVERGENCE_GROWTH = 10.0
DIVERGENCE_WINDOW = 500

# linearly implicit pseudo-time steps
IMPLICIT_STEP_GROWTH = 10.0
IMPLICIT_STEP_CUT = 0.25
IMPLICIT_MAX_STEP = 1e12
IMPLICIT_MAX_REJECTIONS = 30

BRACKET_EXPANSIONS = 200
BISECTION_MAXITER = 400
BISECTION_REFINEMENTS = 4
BISECTION_XTOL_FACTOR = 1e-4

RATE_THRESHOLD = 0.1  # |slope| below this reads as logarithmic
RATE_CONFIDENCE = 0.05

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3

OUT_DIR_ENV = "INFLAB_OUT_DIR"

CONVERGENT_COLOR = "rgba(42, 132, 250, 1.0)"
LOG_DIVERGENT_COLOR = "rgba(245, 110, 20, 1.0)"
POWER_DIVERGENT_COLOR = "rgba(255, 62, 48, 1.0)"
FIT_COLOR = "rgba(0, 0, 0, 1.0)"
EXACT_COLOR = "rgba(161, 52, 235, 1.0)"
