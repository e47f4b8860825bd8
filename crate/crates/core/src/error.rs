use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid with {nodes} nodes cannot resolve a curve of order {order} (need at least {required})")]
    GridTooCoarse {
        nodes: usize,
        order: usize,
        required: usize,
    },

    #[error("degenerate curve: tangent norm {speed:e} at node {node}")]
    DegenerateCurve { node: usize, speed: f64 },

    #[error("evaluation point {point:?} is within {distance:e} m of a coil node")]
    SingularEvaluation { point: [f64; 3], distance: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance factorization failed even with jitter {jitter:e}")]
    IllConditionedKernel { jitter: f64 },

    #[error("CVaR objective evaluated without the auxiliary variable t")]
    MissingCvarVariable,

    #[error("non-finite objective or gradient at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        state: Box<crate::optimize::DumpState>,
    },

    #[error("field line is not toroidal: |B_phi| = {b_phi:e} at phi = {phi}")]
    NotToroidal { phi: f64, b_phi: f64 },

    #[error("no magnetic axis found after {iterations} Newton iterations (residual {residual:e})")]
    NoAxisFound {
        iterations: usize,
        residual: f64,
        trail: Vec<[f64; 2]>,
    },

    #[error("axis is hyperbolic (|trace M| = {trace_abs}), no rotational transform")]
    HyperbolicAxis { trace_abs: f64 },

    #[error("integrator step size underflow at phi = {phi}")]
    StepSizeUnderflow { phi: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
