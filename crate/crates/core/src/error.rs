use thiserror::Error;

use crate::mesh::SegmentTag;

/// Errors raised by mesh construction, assembly, solves and the iteration.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),

    #[error("coefficient `{name}` must be {requirement}, got {value} at ({x}, {y})")]
    InvalidCoefficient {
        name: &'static str,
        requirement: &'static str,
        value: f64,
        x: f64,
        y: f64,
    },

    #[error("field length {got} does not match expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("boundary field lives on {got:?}, expected {expected:?}")]
    SegmentMismatch { expected: SegmentTag, got: SegmentTag },

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("conjugate gradients broke down at iteration {iteration}: non-positive curvature {curvature:e}")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("trace guard tripped: |u| = {value:e} < {tau:e} at accessible node {node} (mesh node {mesh_node}){}", time_level.map(|n| format!(" at time level {n}")).unwrap_or_default())]
    TraceGuard {
        node: usize,
        mesh_node: usize,
        value: f64,
        tau: f64,
        time_level: Option<usize>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown example id `{0}` (expected one of 5.1, 5.2, 5.3, 5.4)")]
    UnknownExample(String),
}

pub type Result<T> = std::result::Result<T, Error>;
