use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("dimension must be 2 or 3, got {0}")]
    InvalidDimension(usize),
    #[error("expected {expected} per-axis values, got {got}")]
    AxisCount { expected: usize, got: usize },
    #[error("length on axis {axis} must be positive, got {value}")]
    InvalidLength { axis: usize, value: f64 },
    #[error("resolution on axis {axis} is {value}, minimum is {min}")]
    ResolutionTooSmall { axis: usize, value: usize, min: usize },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("field has {got} values but grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("malformed field dump: {0}")]
    BadFormat(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AllenCahnError {
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("test function is nonzero at node {node} outside the region")]
    SupportViolation { node: usize },
    #[error("field is not a critical point: residual {residual:.3e} exceeds {tol:.3e}")]
    NotCritical { residual: f64, tol: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("region '{0}' has no nodes")]
    EmptyRegion(String),
    #[error("invalid eigenvalue request: {0}")]
    InvalidRequest(String),
    #[error("eigensolver converged {achieved} of {requested} eigenpairs")]
    NoConvergence { achieved: usize, requested: usize },
    #[error("inner solve failed: {0}")]
    InnerSolve(String),
    #[error("monotonicity violated at q={q}: {small} < {large}")]
    Monotonicity { q: usize, small: f64, large: f64 },
    #[error("balls miss {missed} interface nodes")]
    CoverageFailure { missed: usize },
    #[error(transparent)]
    AllenCahn(#[from] AllenCahnError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no convergence after {steps} steps, residual {residual:.3e}")]
    NonConvergence { steps: usize, residual: f64 },
    #[error("divergence: sup norm {sup_norm:.3e}")]
    Divergence { sup_norm: f64 },
    #[error("singular linearization: eigenvalue {eigenvalue:.3e} at tolerance {tol:.3e}")]
    SingularJacobian { eigenvalue: f64, tol: f64 },
    #[error("certified Morse index {index} exceeds {bound}")]
    IndexViolation { index: usize, bound: usize },
    #[error("critical energy {energy:.4e} below the floor {floor:.4e}")]
    BelowEnergyFloor { energy: f64, floor: f64 },
    #[error("degenerate path: {0}")]
    DegeneratePath(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("step {step} (epsilon {epsilon}): {source}")]
    Step {
        step: usize,
        epsilon: f64,
        #[source]
        source: Box<SolverError>,
    },
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    AllenCahn(#[from] AllenCahnError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Error)]
pub enum VarifoldError {
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("field is not a critical point: residual {residual:.3e} exceeds {tol:.3e}")]
    NotCritical { residual: f64, tol: f64 },
    #[error("field is not stable in the ball: index {index}")]
    NotStableInBall { index: usize },
    #[error("operation requires a flat chart")]
    ConformalUnsupported,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    AllenCahn(#[from] AllenCahnError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("degenerate level set in cell {cell}")]
    DegenerateLevelSet { cell: usize },
    #[error("level set not transversal at node {node}: |grad u| = {grad:.3e}")]
    NotTransversal { node: usize, grad: f64 },
    #[error("multiplicity of component {component} is ambiguous: ratio {ratio:.4}")]
    MultiplicityAmbiguous { component: usize, ratio: f64 },
    #[error("surface region has no nodes")]
    EmptyRegion,
    #[error("tubes of width {tau} overlap (component separation {separation})")]
    TubeOverlap { tau: f64, separation: f64 },
    #[error("test function has zero norm on the surface")]
    ZeroNorm,
    #[error("need at least 3 schedule points, got {0}")]
    InsufficientSchedule(usize),
    #[error("mesh quality: minimum angle {min_angle_deg:.2} deg below {limit_deg} deg")]
    MeshQuality { min_angle_deg: f64, limit_deg: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Varifold(#[from] VarifoldError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("stage '{stage}' failed: {message}")]
    Stage { stage: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
