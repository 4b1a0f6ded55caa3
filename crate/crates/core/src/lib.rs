//! Hierarchical control of piecewise-affine systems through robust approximate
//! simulation relations.
//!
//! A concrete PWA plant tracks a lower-dimensional (linear or PWA)
//! abstraction through an interface. This crate solves the relation
//! equations, assembles the closed-loop joint system, synthesizes and
//! verifies simulation-function certificates, and simulates the closed loop
//! while checking the resulting output-error bounds.

pub mod certificate;
pub mod exec;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod polytope;
pub mod relation;
pub mod simulator;
pub mod systems;

use thiserror::Error;

pub use exec::Execution;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Relation(#[from] relation::RelationError),
    #[error(transparent)]
    Certificate(#[from] certificate::CertificateError),
    #[error(transparent)]
    Simulation(#[from] simulator::SimError),
    #[error(transparent)]
    Systems(#[from] systems::SystemsError),
    #[error(transparent)]
    Polytope(#[from] polytope::PolytopeError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error("unknown sweep parameter `{0}` (expected disturbance-amplitude, kappa or step)")]
    UnknownParameter(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// `1` for invalid or uncertifiable input, `2` for failures while running.
    pub fn exit_code(&self) -> i32 {
        use simulator::SimError as S;
        match self {
            Error::Simulation(
                S::NonFiniteState(_)
                | S::NoCell { .. }
                | S::UncertifiedMode { .. }
                | S::TooManySwitches(_)
                | S::Io { .. }
                | S::Linalg(_)
                | S::Polytope(_)
                | S::Certificate(_)
                | S::Relation(_),
            ) => 2,
            _ => 1,
        }
    }
}
