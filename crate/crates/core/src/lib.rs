//! Price impact in latent order book models: the plain diffusive book, a
//! variant with deposition and cancellation, and a mean-reverted book.
//!
//! Two independent routes to the impacted price are provided. [`impact`]
//! solves the nonlinear integral equation for the price along a metaorder,
//! and [`pde`] simulates the book density itself with Crank-Nicolson.
//! [`analytic`] holds the closed forms both are checked against, and
//! [`scenarios`] packages the named experiments.

pub mod analytic;
pub mod error;
pub mod impact;
pub mod model;
pub mod pde;
pub mod scenarios;
pub mod special;

pub use error::{Error, Result};
pub use impact::{solve_impact, DepositionTerm, KernelVariant, SolverConfig};
pub use model::{
    brownian_path, BookState, CancellationRate, CancellationWeighting, ExecutionProfile, ImpactTrajectory,
    ModelParams, ReferencePath, SpaceGrid, TimeGrid,
};
pub use pde::{simulate, AdvectionStencil, GridSpec, MetaorderMode, SimOptions, SimRun};
pub use scenarios::{ScenarioReport, Settings};
