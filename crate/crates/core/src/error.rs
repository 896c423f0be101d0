use thiserror::Error;

pub type Result<T> = std::result::Result<T, MoltError>;

#[derive(Debug, Error)]
pub enum MoltError {
    #[error("beta = {beta} violates the stability bound {max} for this variant")]
    BetaOutOfRange { beta: f64, max: f64 },
    #[error("wave speed and time step must be positive (c = {c}, dt = {dt})")]
    NonPositiveStep { c: f64, dt: f64 },
    #[error("dissipation epsilon = {0} must lie in [0, 1)")]
    EpsilonOutOfRange(f64),
    #[error("quadrature parameter nu = {0} must be positive")]
    NonPositiveNu(f64),
    #[error("invalid sweep line: {0}")]
    InvalidLine(String),
    #[error("line is too short for a well-posed closure (1 - mu = {0:e})")]
    DegenerateLine(f64),
    #[error("outflow closure system is singular")]
    SingularOutflowSystem,
    #[error("closure not supported: {0}")]
    UnsupportedClosure(String),
    #[error("source at x = {x} lies outside [{a}, {b}]")]
    SourceOutsideLine { x: f64, a: f64, b: f64 },
    #[error("field history is missing level {0}")]
    MissingLevel(&'static str),
    #[error("field length {got} does not match the mesh ({expected})")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("mesh has no interior nodes")]
    NoInteriorNodes,
    #[error("domain touches the bounding box near ({0}, {1})")]
    DomainExceedsBox(f64, f64),
    #[error("grid line at {0} meets the boundary tangentially or a node sits on a cut")]
    TangentIntersection(f64),
    #[error("interpolation cell for ghost node {0} touches a non-interior node")]
    StencilNotInterior(usize),
    #[error("point ({0}, {1}) lies outside the interpolation cell")]
    PointOutsideCell(f64, f64),
    #[error("ghost iteration did not converge in {iters} iterations (last change {change:e})")]
    MaxIterExceeded { iters: usize, change: f64 },
    #[error("ghost solve is ill-conditioned (1 - K = {0:e})")]
    IllConditioned(f64),
    #[error("interior is empty")]
    EmptyInterior,
    #[error("errors must be positive for an order estimate (got {0})")]
    NonPositiveError(f64),
    #[error("unknown reference solution '{0}'")]
    UnknownReference(String),
    #[error("need at least {need} steps, got {got}")]
    InsufficientSteps { need: usize, got: usize },
    #[error("solution blew up at t = {0} (|u| above 1e10 or not finite)")]
    BlowUp(f64),
    #[error("config: unknown key '{0}'")]
    UnknownKey(String),
    #[error("config: invalid value for '{key}': {value}")]
    InvalidValue { key: String, value: String },
    #[error("config: incompatible boundary condition: {0}")]
    IncompatibleBC(String),
    #[error("config: 'scenario' is required")]
    MissingScenario,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MoltError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            MoltError::UnknownKey(_)
            | MoltError::InvalidValue { .. }
            | MoltError::IncompatibleBC(_)
            | MoltError::MissingScenario
            | MoltError::BetaOutOfRange { .. }
            | MoltError::NonPositiveStep { .. }
            | MoltError::EpsilonOutOfRange(_)
            | MoltError::UnknownReference(_)
            | MoltError::Io(_) => 2,
            _ => 3,
        }
    }
}
