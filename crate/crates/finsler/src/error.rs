use thiserror::Error;

/// Errors surfaced by the numerical layers.
///
/// Trajectory truncation at a chart boundary is not an error: the
/// integrators return a partial trajectory with a `truncated` flag instead.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("point outside the oracle's chart domain")]
    OutsideDomain,

    #[error("tangent vector must be nonzero")]
    ZeroVector,

    #[error("fundamental tensor not positive definite: smallest eigenvalue {lambda_min:.3e} at floor {floor:.1e}")]
    NotConvex { lambda_min: f64, floor: f64 },

    #[error("finite-difference stencil left the domain: {0}")]
    StencilOutsideDomain(String),

    #[error(
        "Richardson levels did not contract (last correction {last:.3e}, previous {previous:.3e})"
    )]
    NoisyDerivative { last: f64, previous: f64 },

    #[error("derivative step {step:.3e} below the safe floor {floor:.3e} for order {order}")]
    StepTooSmall { step: f64, floor: f64, order: usize },

    #[error("unit-speed drift {drift:.3e} exceeds 1e-3; reduce the step")]
    StepTooLarge { drift: f64 },

    #[error("initial data not unit speed: F = {f}")]
    NotUnitSpeed { f: f64 },

    #[error("point cloud is degenerate (largest singular value {sigma1:.3e})")]
    DegenerateCloud { sigma1: f64 },

    #[error("flag is degenerate: transverse edge is parallel to the pole")]
    DegenerateFlag,

    #[error("root selection ambiguous: {roots_with_positive_re} roots with positive real part")]
    BranchAmbiguity { roots_with_positive_re: usize },

    #[error("iteration failed to converge after {iterations} steps; residual history {history:?}")]
    NoConvergence {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("base point lies outside the convex body")]
    OutsideBody,

    #[error("invalid rotational profile: {0}")]
    InvalidProfile(String),

    #[error("Gauss curvature not positive at (u, v) = ({u:.4}, {v:.4}): K = {k:.4e}")]
    NonPositiveCurvature { u: f64, v: f64, k: f64 },

    #[error("conformal factor not positive at (u, v) = ({u:.4}, {v:.4}): L = {l:.4e}")]
    NonPositiveConformalFactor { u: f64, v: f64, l: f64 },

    #[error(
        "surface data violates the magnetic equation: residual {residual:.3e} exceeds {limit:.1e}"
    )]
    MagneticEquationViolated { residual: f64, limit: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
