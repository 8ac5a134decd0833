//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LuzinError {
    #[error("empty domain")]
    EmptyDomain,

    #[error("kernel under-resolved: radius {radius} < 2h = {min}")]
    KernelUnderResolved { radius: f64, min: f64 },

    #[error("sigma too large: shrink(domain, {shrink_by}) is empty")]
    SigmaTooLarge { shrink_by: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("oscillation budget unmet; refine (oscillation {oscillation} > {budget})")]
    OscillationBudget { oscillation: f64, budget: f64 },

    #[error("refine ambient grid: {0}")]
    RefineAmbientGrid(String),

    #[error("not a graph over plane (distance to horizontal {distance} >= gap {gap})")]
    NotAGraph { distance: f64, gap: f64 },

    #[error("inner accuracy not met: sup over K of |raw| = {observed} > {allowed}")]
    InnerAccuracy { observed: f64, allowed: f64 },

    #[error("atlas does not cover manifold (worst partition sum {worst_sum})")]
    AtlasCoverage { worst_sum: f64 },

    #[error("budget failure at step {step}: {detail}")]
    StepFailed { step: usize, detail: String },

    #[error("{what} budget unmet: achieved {achieved} > {budget}")]
    BudgetUnmet { what: String, achieved: f64, budget: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LuzinError>;
