//! Constructive Luzin-type approximation for gradients.
//!
//! Given a sampled vector field `v` on a grid-masked open domain, the crate
//! produces a closed-form C1 potential `phi` and an explicit open exceptional
//! set `A` of prescribed small measure with `v = grad phi` at every grid node
//! outside `A`, together with auditable certificates for every budget. A
//! geometric-decay iteration refines the rough approximation until the
//! residual is dominated by the tail of a geometric series, and a chart-based
//! assembly lifts the construction to 1-forms on the flat 2-torus.

pub mod diagnostics;
pub mod domain;
pub mod dump;
pub mod error;
pub mod field;
pub mod forms;
pub mod mesh;
pub mod pl;
pub mod potential;
pub mod preprocess;
pub mod scheme;

pub use domain::GridDomain;
pub use error::{LuzinError, Result};
pub use field::{norms_scalar, norms_vector, NormReport, SampledScalarField, SampledVectorField, C0};
pub use mesh::SimplicialMesh;
pub use pl::{
    blend, build_pl_potential, oscillation, rough_approximate, AnchorPolicy, PlFamily,
    RoughCertificate, RoughOptions,
};
pub use potential::{c1_certificate, BumpProfile, C1Report, EvaluablePotential};
pub use preprocess::{
    choose_sigma, luzin_truncate, luzin_truncate_with_repair, mollifier_kernel, mollify,
    MollifierKernel, TruncationResult,
};
pub use scheme::{clamp_extend, run as scheme_run, FinalCertificate, IterationState, Schedule};
