//! Random-walk approximation of backward stochastic differential equations
//! whose terminal time is a first exit time.
//!
//! The lattice scheme runs backward on the stopped random-walk lattice
//! ([`lattice`]), with a Picard variant ([`picard`]) and a regression Monte
//! Carlo scheme for Brownian motion frozen on a subdivision ([`lsmc`]).
//! [`oracle`] provides the reference values they are measured against.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod generators;
pub mod lattice;
pub mod lsmc;
pub mod metrics;
pub mod oracle;
pub mod paths;
pub mod picard;
pub mod rng;
pub mod stopping;

pub use error::{BsdeError, Result};
pub use generators::{Generator, TerminalCondition};
pub use lattice::{backward_solve, DiscreteSolution, NodeSolveConfig};
pub use stopping::StoppingRule;
