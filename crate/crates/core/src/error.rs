use thiserror::Error;

use crate::geometry::StateU;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HullError {
    #[error("center degenerates: x or y coincides with its ball center")]
    CenterOnAxis,
    #[error("state leaves the T4 ball (margin {margin:.3e})")]
    OutOfBall { margin: f64 },
    #[error("no admissible radius around z = ({0}, {1})")]
    NoAdmissibleDelta(f64, f64),
    #[error("state is not in the hull (best defect {defect:.3e})")]
    NotMember { best: Option<Box<crate::hull::Witness>>, defect: f64 },
    #[error("witness is degenerate (mix {mix}, margin {margin:.3e})")]
    DegenerateWitness { mix: f64, margin: f64 },
    #[error("staircase node {step} left the hull")]
    CornerEscape { step: usize, node: StateU },
    #[error("shrink {shrink} violates the distance bound (needs > {min_shrink})")]
    BadShrink { shrink: f64, min_shrink: f64 },
    #[error("invalid hull specification: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("direction has v₂ = 0 or ρv = 0")]
    DegenerateDirection,
    #[error("direction is not in the wave cone (residual {0:.3e})")]
    NotInCone(f64),
    #[error("cover reached {achieved:.4} of target {target:.4} within the iteration cap")]
    IterationCap { achieved: f64, target: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error)]
pub enum ConstructError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("local state is not in the relaxed hull: {0}")]
    NotInHull(HullError),
    #[error("pairing tolerance 2^-{0} unreachable with the frequency schedule")]
    ToleranceUnreachable(usize),
    #[error(transparent)]
    Hull(#[from] HullError),
    #[error(transparent)]
    Wave(#[from] WaveError),
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("grid too coarse: Richardson estimate {estimate:.3e} exceeds tolerance {tolerance:.3e}; double n in --grid n,m")]
    GridTooCoarse { estimate: f64, tolerance: f64 },
    #[error("field is not irrotational: fit residual {0:.3e}")]
    NotIrrotational(f64),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
