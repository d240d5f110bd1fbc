//! Library-wide error type.
//!
//! Every invariant violation maps to a distinct variant so that config
//! rejection is total and diagnosable; [`Error::code`] returns a stable
//! short code for machine-readable reports.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e} > {tolerance:.1e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix order violated: smallest eigenvalue of the difference is {eigmin:.3e}")]
    NotPsdOrdered { eigmin: f64 },

    #[error(
        "covariance atom {index} has eigenvalue {eigmin:.6} below the ellipticity floor {floor:.6}"
    )]
    BelowEllipticityFloor {
        index: usize,
        eigmin: f64,
        floor: f64,
    },

    #[error("covariance atom {index} has negative penalty {penalty}")]
    NegativePenalty { index: usize, penalty: f64 },

    #[error("no atom has zero penalty (minimum penalty is {min_penalty}); the zero of the generator is not preserved")]
    MissingZeroPenalty { min_penalty: f64 },

    #[error("atom factor does not reproduce the covariance (max entry error {error:.3e})")]
    FactorMismatch { error: f64 },

    #[error("generator needs at least one atom")]
    EmptyGenerator,

    #[error("sigma_min must be positive, got {0}")]
    NonPositiveFloor(f64),

    #[error("quadrature needs at least 2 points per axis, got {0}")]
    QuadratureTooSmall(usize),

    #[error("quadrature spread must be >= 1, got {0}")]
    BadQuadratureSpread(f64),

    #[error("quadrature moment check failed: {which} deviates by {error:.3e}")]
    QuadratureMoments { which: &'static str, error: f64 },

    #[error("bad axis: lo {lo} must be < hi {hi} with at least 3 points (got {count})")]
    BadAxis { lo: f64, hi: f64, count: usize },

    #[error("bad time grid: need 0 <= t0 < horizon and steps >= 1 (t0={t0}, horizon={horizon}, steps={steps})")]
    BadTimeGrid { t0: f64, horizon: f64, steps: usize },

    #[error("grid function has {got} values but the grid has {expected} points")]
    GridSizeMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    ArityMismatch {
        name: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("expression too large ({size} bytes > {limit})")]
    ExpressionTooLarge { size: usize, limit: usize },

    #[error("cannot differentiate {what}")]
    NotDifferentiable { what: String },

    #[error("evaluation of {context} failed: {message}")]
    Evaluation { context: String, message: String },

    #[error("coefficient {name} is asymmetric in its quadratic-variation indices (sample deviation {deviation:.3e})")]
    CoefficientAsymmetry { name: &'static str, deviation: f64 },

    #[error(
        "sampled Lipschitz ratio {ratio:.4} of {name} exceeds the declared constant {declared}"
    )]
    LipschitzExceeded {
        name: &'static str,
        ratio: f64,
        declared: f64,
    },

    #[error("coefficient {name} must not reference the value variable y")]
    ForbiddenValueVariable { name: &'static str },

    #[error("control grid is empty")]
    EmptyControlGrid,

    #[error("control point {index} lies outside the declared box")]
    ControlOutsideBox { index: usize },

    #[error("contraction violated: dt * lipschitz = {product:.4} >= 1")]
    ContractionViolated { product: f64 },

    #[error("CFL bound violated: scheme weight sum {bound:.4} exceeds 0.9 (spans {spans:?})")]
    CflViolation { bound: f64, spans: Vec<usize> },

    #[error("diffusion matrix is not diagonally dominant enough for a monotone cross stencil (axis {axis}, deficit {deficit:.3e})")]
    NotDiagonallyDominant { axis: usize, deficit: f64 },

    #[error("index out of range: {context} (got {got}, limit {limit})")]
    IndexOutOfRange {
        context: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("picard iterations must be >= 1 in solver configs, got {0}")]
    BadPicard(usize),

    #[error("config field {field}: {message}")]
    BadConfig { field: String, message: String },

    #[error("freezing deltas must be positive and strictly decreasing")]
    BadFreezingDeltas,

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code for reports and exit-code mapping.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            DimensionMismatch { .. } => "E_DIM",
            NotSymmetric { .. } => "E_SYM",
            NotPsdOrdered { .. } => "E_ORDER",
            BelowEllipticityFloor { .. } => "E_FLOOR",
            NegativePenalty { .. } => "E_PENALTY_NEG",
            MissingZeroPenalty { .. } => "E_PENALTY_ZERO",
            FactorMismatch { .. } => "E_FACTOR",
            EmptyGenerator => "E_NO_ATOMS",
            NonPositiveFloor(_) => "E_FLOOR_SIGN",
            QuadratureTooSmall(_) => "E_QUAD_POINTS",
            BadQuadratureSpread(_) => "E_QUAD_SPREAD",
            QuadratureMoments { .. } => "E_QUAD_MOMENTS",
            BadAxis { .. } => "E_AXIS",
            BadTimeGrid { .. } => "E_TIME_GRID",
            GridSizeMismatch { .. } => "E_GRID_SIZE",
            NonFinite { .. } => "E_NON_FINITE",
            NonPositiveStep(_) => "E_STEP",
            Parse { .. } => "E_PARSE",
            UnknownIdentifier { .. } => "E_UNKNOWN_IDENT",
            ArityMismatch { .. } => "E_ARITY",
            ExpressionTooLarge { .. } => "E_EXPR_SIZE",
            NotDifferentiable { .. } => "E_DIFF",
            Evaluation { .. } => "E_EVAL",
            CoefficientAsymmetry { .. } => "E_COEFF_SYM",
            LipschitzExceeded { .. } => "E_LIPSCHITZ",
            ForbiddenValueVariable { .. } => "E_Y_FORBIDDEN",
            EmptyControlGrid => "E_CONTROLS_EMPTY",
            ControlOutsideBox { .. } => "E_CONTROL_BOX",
            ContractionViolated { .. } => "E_CONTRACTION",
            CflViolation { .. } => "E_CFL",
            NotDiagonallyDominant { .. } => "E_CROSS_DOM",
            IndexOutOfRange { .. } => "E_INDEX",
            BadPicard(_) => "E_PICARD",
            BadConfig { .. } => "E_CONFIG",
            BadFreezingDeltas => "E_FREEZE_DELTAS",
            Io { .. } => "E_IO",
            Json(_) => "E_JSON",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
