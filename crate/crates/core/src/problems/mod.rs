//! Cost functions: analytical benchmarks, the Landau oscillator control task
//! and an external-process evaluator.

mod benchmarks;
mod external;
mod landau;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::lgp::LgpProgram;
use crate::space::ParameterSpace;

pub use benchmarks::Benchmark;
pub use external::{ExternalConfig, ExternalEvaluator};
pub use landau::{landau_cost, landau_cost_fn, simulate, LandauConfig, LandauCost, Simulation, DIVERGED_COST};

/// What an objective is asked to score.
#[derive(Clone, Copy, Debug)]
pub enum Candidate<'a> {
    Params(&'a [f64]),
    Program(&'a LgpProgram),
}

pub trait Objective: Send + Sync {
    /// Cost of `candidate`; `index` is the run-wide evaluation index.
    fn evaluate(&self, candidate: Candidate<'_>, index: u64) -> Result<f64, EvalError>;

    /// Whether `evaluate` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Cost at or below which a run counts as converged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub cost: f64,
    /// A grid point attaining `cost`.
    pub phenotype: Vec<f64>,
}

/// Declarative problem selection, stored in configs and checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    Benchmark {
        function: Benchmark,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_bits")]
        bits: u32,
    },
    Landau(LandauConfig),
    External(ExternalConfig),
}

fn default_dim() -> usize {
    2
}

fn default_bits() -> u32 {
    12
}

impl ProblemSpec {
    pub fn benchmark(function: Benchmark, dim: usize) -> Self {
        ProblemSpec::Benchmark {
            function,
            dim,
            bits: default_bits(),
        }
    }

    pub fn build(&self) -> Result<Problem> {
        match self {
            ProblemSpec::Benchmark { function, dim, bits } => {
                let space = function.space(*dim, *bits)?;
                let (phenotype, cost) = function.grid_minimum(&space)?;
                Ok(Problem {
                    objective: Arc::new(BenchmarkObjective(*function)),
                    space: Some(space),
                    target: Some(Target { cost, phenotype }),
                })
            }
            ProblemSpec::Landau(config) => {
                config.validate()?;
                Ok(Problem {
                    objective: Arc::new(LandauObjective(config.clone())),
                    space: None,
                    target: None,
                })
            }
            ProblemSpec::External(config) => {
                config.validate()?;
                Ok(Problem {
                    objective: Arc::new(ExternalEvaluator::new(config.clone())),
                    space: Some(config.space.clone()),
                    target: None,
                })
            }
        }
    }
}

/// An objective with the search space and convergence target it comes with.
#[derive(Clone)]
pub struct Problem {
    pub objective: Arc<dyn Objective>,
    /// Required for parametric runs.
    pub space: Option<ParameterSpace>,
    pub target: Option<Target>,
}

impl Problem {
    pub fn new(objective: Arc<dyn Objective>, space: Option<ParameterSpace>, target: Option<Target>) -> Self {
        Self {
            objective,
            space,
            target,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BenchmarkObjective(pub Benchmark);

impl Objective for BenchmarkObjective {
    fn evaluate(&self, candidate: Candidate<'_>, _index: u64) -> Result<f64, EvalError> {
        match candidate {
            Candidate::Params(x) => self.0.eval(x).map_err(|e| EvalError::Rejected(e.to_string())),
            Candidate::Program(_) => Err(EvalError::Rejected(format!("{} scores parameter vectors", self.0))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LandauObjective(pub LandauConfig);

impl Objective for LandauObjective {
    fn evaluate(&self, candidate: Candidate<'_>, _index: u64) -> Result<f64, EvalError> {
        match candidate {
            Candidate::Program(p) => landau_cost(p, &self.0)
                .map(|c| c.cost)
                .map_err(|e| EvalError::Rejected(e.to_string())),
            Candidate::Params(_) => Err(EvalError::Rejected("the Landau task scores control-law programs".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trips_through_json() {
        let specs = [
            ProblemSpec::benchmark(Benchmark::Rastrigin, 25),
            ProblemSpec::Landau(LandauConfig::default()),
        ];
        for spec in specs {
            let text = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<ProblemSpec>(&text).unwrap(), spec);
        }
        let parsed: ProblemSpec = serde_json::from_str(r#"{"kind":"benchmark","function":"booth"}"#).unwrap();
        assert_eq!(parsed, ProblemSpec::benchmark(Benchmark::Booth, 2));
        assert!(serde_json::from_str::<ProblemSpec>(r#"{"kind":"benchmark","function":"booth","dims":2}"#).is_err());
    }

    #[test]
    fn benchmark_problem_has_grid_target() {
        let problem = ProblemSpec::benchmark(Benchmark::Sphere, 2).build().unwrap();
        let target = problem.target.unwrap();
        assert_eq!(target.cost, 0.0);
        assert_eq!(target.phenotype, vec![0.0, 0.0]);
        let cost = problem.objective.evaluate(Candidate::Params(&[1.0, 1.0]), 0).unwrap();
        assert_eq!(cost, 2.0);
        assert!(problem.objective.evaluate(Candidate::Params(&[3.0, 1.0]), 1).is_err());
    }

    /// Exhaustive 12-bit grid minima computed independently in double precision.
    #[test]
    fn grid_minima_match_reference() {
        let cases: [(Benchmark, f64, Option<[f64; 2]>); 12] = [
            (Benchmark::Beale, 1.9057179084651477e-06, None),
            (Benchmark::Booth, 2.981687963372924e-06, None),
            (Benchmark::Bukin6, 0.10257728674220062, Some([-13.034188034188034, 1.698901098901099])),
            (Benchmark::Easom, -0.9997786337022979, None),
            (Benchmark::Eggholder, -959.6405878113551, None),
            (Benchmark::GoldsteinPrice, 3.000060087573287, None),
            (Benchmark::Himmelblau, 1.9349776126157768e-05, None),
            (Benchmark::HolderTable, -19.208464770202962, None),
            (Benchmark::Levi13, 0.00013540249055495187, None),
            (Benchmark::Matyas, 2.385350370698339e-07, None),
            (Benchmark::Rosenbrock, 0.0, Some([1.0, 1.0])),
            (Benchmark::StyblinskiTang, -78.3322804494184, None),
        ];
        for (f, cost, point) in cases {
            let space = f.space(2, 12).unwrap();
            let (x, got) = f.grid_minimum(&space).unwrap();
            assert!((got - cost).abs() <= 1e-12 * cost.abs().max(1e-6), "{f}: {got} vs {cost}");
            if let Some(p) = point {
                assert!((x[0] - p[0]).abs() < 1e-12 && (x[1] - p[1]).abs() < 1e-12, "{f}: {x:?}");
            }
        }
    }

    #[test]
    fn grid_index_of_reference_minima() {
        let booth = Benchmark::Booth.space(2, 12).unwrap();
        let (x, _) = Benchmark::Booth.grid_minimum(&booth).unwrap();
        assert_eq!(booth.indices(&x).unwrap(), vec![2252, 2662]);
        let eggholder = Benchmark::Eggholder.space(2, 12).unwrap();
        let (x, _) = Benchmark::Eggholder.grid_minimum(&eggholder).unwrap();
        assert_eq!(eggholder.indices(&x).unwrap(), vec![4095, 3664]);
    }

    #[test]
    fn landau_objective_scores_programs() {
        let objective = LandauObjective(LandauConfig::default());
        let config = crate::lgp::LgpConfig::default();
        let zero = LgpProgram::new(config.layout, Vec::new(), vec![0.0], vec![0.0, 1.0]).unwrap();
        let cost = objective.evaluate(Candidate::Program(&zero), 0).unwrap();
        assert!((cost - 0.99999994).abs() < 1e-6);
        assert!(objective.evaluate(Candidate::Params(&[0.0]), 0).is_err());
    }
}
