//! Hybrid genetic optimisation: binary GA or linear GP exploration combined
//! with downhill simplex exploitation on the encoding grid.

pub mod driver;
pub mod error;
pub mod genetic;
pub mod harness;
pub mod lgp;
pub mod problems;
pub mod rng;
pub mod simplex;
pub mod space;

pub use driver::{run, run_stepped, RunConfig, RunResult, StageSpec, Termination};
pub use error::{CheckpointError, Error, EvalError, Result, RunError};
pub use genetic::{GaConfig, Genome, Individual, Origin};
pub use lgp::{LgpConfig, LgpProgram};
pub use problems::{Benchmark, Candidate, Objective, Problem, ProblemSpec};
pub use simplex::SimplexConfig;
pub use space::{Chromosome, Dimension, ParameterSpace};
