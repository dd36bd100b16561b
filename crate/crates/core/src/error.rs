use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("hopping range must be at least 1")]
    RangeZero,

    #[error("model is not self-adjoint")]
    NotSelfAdjoint,

    #[error("model does not anticommute with the grading (deviation {deviation:.3e})")]
    NotChiral { deviation: f64 },

    #[error("grading is unbalanced: dim V+ = {plus}, dim V- = {minus}")]
    UnbalancedGrading { plus: usize, minus: usize },

    #[error("invalid grading: {0}")]
    InvalidGrading(String),

    #[error("Bloch Hamiltonian requested at zero momentum parameter")]
    ZeroMomentum,

    #[error(
        "leading hop A_R is numerically singular (condition {condition:.3e}); \
         use the truncated-operator route"
    )]
    SingularLeadingHop { condition: f64 },

    #[error("trailing hop B_R is numerically singular (condition {condition:.3e}); cannot propagate leftwards")]
    SingularRightHop { condition: f64 },

    #[error("companion eigenvalue with modulus {modulus} lies on the unit circle band")]
    BorderlineEigenvalue { modulus: f64 },

    #[error("mode window vanishes identically")]
    ZeroMode,

    #[error("window of length {len} is too short (need at least {min})")]
    WindowTooShort { len: usize, min: usize },

    #[error("truncation with {cells} cells is too small (need at least {min})")]
    TooFewCells { cells: usize, min: usize },

    #[error("spectral gap could not be certified (certified margin {margin:.3e})")]
    GapNotCertified { margin: f64 },

    #[error("singular value {singular_value:.3e} falls in the ambiguous kernel band at {cells} cells")]
    AmbiguousKernel { cells: usize, singular_value: f64 },

    #[error("did not converge: {0}")]
    NonConvergent(String),

    #[error("polynomial interpolation residual {residual:.3e} exceeds tolerance")]
    InterpolationResidual { residual: f64 },

    #[error("homotopy certificate failed in stage '{stage}' (min singular value {min_singular:.3e})")]
    CertificateFailed { stage: String, min_singular: f64 },

    #[error("winding changed along stage '{stage}'")]
    WindingNotConstant { stage: String },

    #[error("eigenvalue {re}+{im}i of the normalized loop lies on the critical line Re = 1/2")]
    SpectrumOnCriticalLine { re: f64, im: f64 },

    #[error("no admissible model after {tries} draws")]
    ExhaustedRedraws { tries: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
