//! Hybrid optimisation loop: initial sampling, then per generation an
//! exploration stage of genetic operators followed by an exploitation stage
//! of simplex moves. Supports staged runs on parameter subspaces and
//! checkpoint/resume.

mod checkpoint;
mod engine;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RunError};
use crate::genetic::{GaConfig, GenerationStats, Genome, Individual, Origin};
use crate::lgp::LgpConfig;
use crate::problems::{Problem, ProblemSpec};
use crate::simplex::SimplexConfig;
use crate::space::ParameterSpace;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use engine::RunState;

/// Relative best-cost change below which a generation counts as stagnant.
pub const STAGNATION_TOLERANCE: f64 = 1e-12;

/// Cost given to cap-exhausted offspring in penalty mode.
pub const PENALTY_COST: f64 = 1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Binary-encoded parameter vectors.
    Ga,
    /// Linear genetic programs.
    Lgp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitSampling {
    /// Independent uniform random genomes.
    Mcs,
    /// Latin hypercube on the grid (parametric mode only).
    Lhs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub path: PathBuf,
    /// Write a checkpoint after every `every` generations.
    #[serde(default = "one")]
    pub every: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Problem to build when the caller does not supply one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    pub mode: Mode,
    /// Run the simplex exploitation stage after each exploration stage.
    pub hybrid: bool,
    pub init: InitSampling,
    /// Size of the initial sample.
    pub n_init: usize,
    /// Offspring per exploration stage.
    pub n_explor: usize,
    /// Individuals generated per exploitation stage; shrink steps may overshoot.
    pub n_exploit: usize,
    /// Programs combined by program exploitation.
    pub n_sub: usize,
    pub max_generations: usize,
    pub max_evaluations: Option<usize>,
    /// Stop after this many generations without improvement.
    pub stagnation_window: Option<usize>,
    /// Stop as soon as the problem target cost is reached.
    pub stop_at_target: bool,
    pub seed: u64,
    /// Evaluate batches on the rayon pool when the objective allows it.
    pub parallel: bool,
    pub ga: GaConfig,
    pub lgp: LgpConfig,
    pub simplex: SimplexConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<CheckpointConfig>,
    /// Staged run; empty means one stage over the full space.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: None,
            mode: Mode::Ga,
            hybrid: true,
            init: InitSampling::Mcs,
            n_init: 70,
            n_explor: 70,
            n_exploit: 30,
            n_sub: 2,
            max_generations: 50,
            max_evaluations: None,
            stagnation_window: None,
            stop_at_target: true,
            seed: 0,
            parallel: false,
            ga: GaConfig::default(),
            lgp: LgpConfig::default(),
            simplex: SimplexConfig::default(),
            checkpoint: None,
            stages: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Hybrid setup: 70 initial samples, then 70 explored and 30 exploited
    /// individuals per generation.
    pub fn hybrid() -> Self {
        Self::default()
    }

    /// Exploration-only setup with 100 individuals per generation and a
    /// tournament spanning the whole population.
    pub fn ga_only() -> Self {
        Self {
            hybrid: false,
            n_init: 100,
            n_explor: 100,
            n_exploit: 0,
            ga: GaConfig {
                tournament_size: 100,
                ..GaConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn with_problem(mut self, problem: ProblemSpec) -> Self {
        self.problem = Some(problem);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks the settings against the search space they will run on.
    pub fn validate(&self, space: Option<&ParameterSpace>) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidConfig(m));
        self.ga.validate()?;
        self.simplex_checks()?;
        if self.n_init == 0 || self.n_explor == 0 {
            return invalid("n_init and n_explor must be positive".into());
        }
        if self.max_generations == 0 {
            return invalid("max_generations must be at least 1".into());
        }
        if self.max_evaluations == Some(0) {
            return invalid("max_evaluations must be positive".into());
        }
        if self.stagnation_window == Some(0) {
            return invalid("stagnation_window must be at least 1".into());
        }
        if self.checkpoint.as_ref().is_some_and(|c| c.every == 0) {
            return invalid("checkpoint.every must be at least 1".into());
        }
        if self.ga.elitism > self.n_explor {
            return invalid("elitism cannot exceed n_explor".into());
        }
        match self.mode {
            Mode::Ga => {
                let Some(space) = space else {
                    return invalid("parametric runs need a parameter space".into());
                };
                if self.hybrid && self.n_exploit > 0 {
                    let free = self
                        .stages
                        .iter()
                        .map(|s| space.len() - s.frozen.len())
                        .chain(std::iter::once(space.len()))
                        .max()
                        .unwrap_or(space.len());
                    if self.n_explor < free + 1 {
                        return invalid(format!(
                            "n_explor = {} cannot seed a simplex in {free} dimensions (needs at least {})",
                            self.n_explor,
                            free + 1
                        ));
                    }
                }
                for (k, stage) in self.stages.iter().enumerate() {
                    stage.validate(space).map_err(|e| Error::InvalidConfig(format!("stage {k}: {e}")))?;
                }
            }
            Mode::Lgp => {
                self.lgp.validate()?;
                if self.init == InitSampling::Lhs {
                    return invalid("LHS initialisation needs a parameter space".into());
                }
                if self.hybrid && self.n_exploit > 0 && self.n_sub < 2 {
                    return invalid("program exploitation needs n_sub >= 2".into());
                }
                if !self.stages.is_empty() {
                    return invalid("staged runs apply to parametric problems".into());
                }
            }
        }
        Ok(())
    }

    fn simplex_checks(&self) -> Result<()> {
        let s = &self.simplex;
        if !(s.weight_bound > 0.0 && s.weight_resolution > 0.0) {
            return Err(Error::InvalidConfig("simplex weight_bound and weight_resolution must be positive".into()));
        }
        if !(0.0..=1.0).contains(&s.degeneracy.r2_threshold) || !(s.degeneracy.corrective_multiplier > 0.0) {
            return Err(Error::InvalidConfig(
                "degeneracy r2_threshold must lie in [0, 1] and corrective_multiplier be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One stage of a stepped run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSpec {
    /// Dimensions held fixed during the stage, by index, with their values.
    #[serde(deserialize_with = "index_keys")]
    pub frozen: BTreeMap<usize, f64>,
    /// Full-space phenotypes evaluated first, in order, after grid snapping.
    pub seeds: Vec<Vec<f64>>,
    /// Generation budget; `None` uses the run setting.
    pub generations: Option<usize>,
    /// Evaluation budget of the stage.
    pub max_evaluations: Option<usize>,
}

/// Map keys arrive as strings from formats without integer keys.
fn index_keys<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<usize, f64>, D::Error> {
    BTreeMap::<String, f64>::deserialize(d)?
        .into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse()
                .map(|i| (i, v))
                .map_err(|_| serde::de::Error::custom(format!("frozen key `{k}` is not a dimension index")))
        })
        .collect()
}

impl StageSpec {
    pub fn validate(&self, space: &ParameterSpace) -> Result<()> {
        for (&i, &v) in &self.frozen {
            let Some(d) = space.dims().get(i) else {
                return Err(Error::InvalidConfig(format!("frozen dimension {i} outside the space")));
            };
            if !(v >= d.min && v <= d.max) {
                return Err(Error::OutOfDomain(format!("frozen value {v} of dimension {i}")));
            }
        }
        if self.frozen.len() >= space.len() {
            return Err(Error::InvalidConfig("a stage must leave at least one dimension free".into()));
        }
        for seed in &self.seeds {
            if seed.len() != space.len() {
                return Err(Error::InvalidConfig(format!(
                    "seed has {} values, space has {} dimensions",
                    seed.len(),
                    space.len()
                )));
            }
            if !space.contains(seed) {
                return Err(Error::OutOfDomain(format!("seed {seed:?}")));
            }
        }
        if self.generations == Some(0) || self.max_evaluations == Some(0) {
            return Err(Error::InvalidConfig("stage budgets must be positive".into()));
        }
        Ok(())
    }

    /// Indices of the dimensions optimised in this stage.
    pub fn free_dims(&self, dim: usize) -> Vec<usize> {
        (0..dim).filter(|i| !self.frozen.contains_key(i)).collect()
    }
}

/// Simplex seed around `center`: the center plus one vertex offset by
/// `offsets[i]` along each axis `i`, clamped into the space and snapped.
pub fn axis_simplex(space: &ParameterSpace, center: &[f64], offsets: &[f64]) -> Result<Vec<Vec<f64>>> {
    if center.len() != space.len() || offsets.len() != space.len() {
        return Err(Error::Contract("center and offsets must match the space dimension".into()));
    }
    let mut points = vec![space.snap(center)?];
    for (i, &d) in offsets.iter().enumerate() {
        let mut p = center.to_vec();
        let (lo, hi) = (space.dims()[i].min, space.dims()[i].max);
        p[i] = if center[i] + d <= hi && center[i] + d >= lo {
            center[i] + d
        } else {
            (center[i] - d).clamp(lo, hi)
        };
        points.push(space.snap(&p)?);
    }
    Ok(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// The target cost was reached.
    Converged,
    GenerationCap,
    EvaluationCap,
    Stagnation,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::GenerationCap => "generation-cap",
            Termination::EvaluationCap => "evaluation-cap",
            Termination::Stagnation => "stagnation",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One cost evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Run-wide index; records are gap-free from 0.
    pub index: u64,
    pub stage: usize,
    pub generation: usize,
    pub origin: Origin,
    /// Admitted after exhausting regeneration attempts.
    pub flagged: bool,
    /// Genome in the stage's search space.
    pub genome: Genome,
    /// Phenotype in the full space; empty for programs.
    pub phenotype: Vec<f64>,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub stage: usize,
    pub generation: usize,
    /// Evaluations performed up to the end of this generation.
    pub evaluations: u64,
    pub population: usize,
    /// Best individual so far in the stage, with a full-space phenotype.
    pub best: Individual,
    pub explore: GenerationStats,
    pub exploit_generated: usize,
    pub corrections: usize,
}

impl GenerationSummary {
    pub fn best_cost(&self) -> f64 {
        self.best.cost_or_inf()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub log: Vec<EvalRecord>,
    pub generations: Vec<GenerationSummary>,
    pub best: Individual,
    pub termination: Termination,
    /// Wall-clock seconds of the last session; not part of run equality checks.
    pub elapsed_seconds: f64,
}

impl RunResult {
    pub fn evaluations(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn best_cost(&self) -> f64 {
        self.best.cost_or_inf()
    }

    /// Evaluations up to and including the first one at or below `target`.
    pub fn evaluations_to(&self, target: f64) -> Option<u64> {
        self.log.iter().position(|r| r.cost <= target).map(|i| i as u64 + 1)
    }

    /// Generation of the first evaluation at or below `target`.
    pub fn generation_of(&self, target: f64) -> Option<usize> {
        self.log.iter().find(|r| r.cost <= target).map(|r| r.generation)
    }

    /// Same run, ignoring wall-clock metadata.
    pub fn same_run(&self, other: &RunResult) -> bool {
        self.log == other.log
            && self.generations == other.generations
            && self.best == other.best
            && self.termination == other.termination
    }
}

/// Termination decision after a completed generation.
///
/// `best_costs` holds the best cost after each generation of the current
/// stage; `target` is the convergence cost when the problem declares one.
pub fn check_convergence(
    best_costs: &[f64],
    evaluations: usize,
    max_generations: usize,
    max_evaluations: Option<usize>,
    stagnation_window: Option<usize>,
    target: Option<f64>,
) -> Option<Termination> {
    let best = *best_costs.last()?;
    if target.is_some_and(|t| best <= t) {
        return Some(Termination::Converged);
    }
    if best_costs.len() >= max_generations {
        return Some(Termination::GenerationCap);
    }
    if max_evaluations.is_some_and(|m| evaluations >= m) {
        return Some(Termination::EvaluationCap);
    }
    if let Some(window) = stagnation_window {
        if best_costs.len() > window {
            let recent = &best_costs[best_costs.len() - window - 1..];
            let stalled = recent
                .windows(2)
                .all(|w| w[0] - w[1] <= STAGNATION_TOLERANCE * w[0].abs());
            if stalled {
                return Some(Termination::Stagnation);
            }
        }
    }
    None
}

/// Runs `config` on `problem`, or on `config.problem` when `problem` is `None`.
pub fn run(config: &RunConfig, problem: Option<&Problem>) -> Result<RunResult, RunError> {
    let built;
    let problem = match problem {
        Some(p) => p,
        None => {
            let spec = config
                .problem
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("missing key `problem`".into()))?;
            built = spec.build()?;
            &built
        }
    };
    engine::Runner::start(config.clone(), problem)?.execute()
}

/// Staged run: each stage optimises the free subspace of its [`StageSpec`].
pub fn run_stepped(stages: &[StageSpec], config: &RunConfig, problem: Option<&Problem>) -> Result<RunResult, RunError> {
    if stages.is_empty() {
        return Err(Error::InvalidConfig("a stepped run needs at least one stage".into()).into());
    }
    let config = RunConfig {
        stages: stages.to_vec(),
        ..config.clone()
    };
    run(&config, problem)
}

/// Outcome of resuming a checkpoint.
#[derive(Debug)]
pub struct Resumed {
    pub result: RunResult,
    /// The checkpoint was written after termination; nothing was run.
    pub already_terminated: bool,
}

/// Continues the run stored at `path`. The problem is rebuilt from the stored
/// configuration unless supplied.
pub fn resume(path: &Path, problem: Option<&Problem>) -> Result<Resumed, RunError> {
    let state = load_checkpoint(path)?;
    resume_state(state, problem)
}

pub fn resume_state(state: RunState, problem: Option<&Problem>) -> Result<Resumed, RunError> {
    let built;
    let problem = match problem {
        Some(p) => p,
        None => {
            let spec = state
                .config
                .problem
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("checkpoint has no problem specification".into()))?;
            built = spec.build()?;
            &built
        }
    };
    let already_terminated = state.termination.is_some();
    let result = engine::Runner::resume(state, problem)?.execute()?;
    Ok(Resumed {
        result,
        already_terminated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stagnation_window_of_four() {
        let t = check_convergence(&[5.0; 5], 0, 50, None, Some(4), None);
        assert_eq!(t, Some(Termination::Stagnation));
        assert_eq!(check_convergence(&[5.0; 4], 0, 50, None, Some(4), None), None);
        let tiny = [5.0, 5.0 - 1e-14, 5.0 - 2e-14, 5.0 - 3e-14, 5.0 - 4e-14];
        assert_eq!(check_convergence(&tiny, 0, 50, None, Some(4), None), Some(Termination::Stagnation));
    }

    #[test]
    fn improving_runs_continue_to_the_cap() {
        let costs: Vec<f64> = (0..10).map(|g| 10.0 - g as f64).collect();
        for g in 1..10 {
            assert_eq!(check_convergence(&costs[..g], 0, 10, None, Some(2), None), None);
        }
        assert_eq!(check_convergence(&costs, 0, 10, None, Some(2), None), Some(Termination::GenerationCap));
    }

    #[test]
    fn target_and_budget_terminate() {
        assert_eq!(check_convergence(&[1.0, 0.0], 0, 50, None, None, Some(0.0)), Some(Termination::Converged));
        assert_eq!(check_convergence(&[1.0], 500, 50, Some(500), None, Some(0.0)), Some(Termination::EvaluationCap));
        assert_eq!(check_convergence(&[], 0, 1, None, None, None), None);
    }

    #[test]
    fn hybrid_needs_a_seedable_simplex() {
        let space = ParameterSpace::uniform(25, -5.0, 5.0, 12).unwrap();
        let config = RunConfig {
            n_explor: 20,
            ..RunConfig::hybrid()
        };
        assert!(config.validate(Some(&space)).is_err());
        assert!(RunConfig::hybrid().validate(Some(&space)).is_ok());
        assert!(RunConfig::ga_only().validate(Some(&space)).is_ok());
    }

    #[test]
    fn stage_validation() {
        let space = ParameterSpace::uniform(3, -5.0, 5.0, 12).unwrap();
        let mut stage = StageSpec::default();
        stage.frozen.insert(2, 1.0);
        assert!(stage.validate(&space).is_ok());
        assert_eq!(stage.free_dims(3), vec![0, 1]);
        stage.seeds.push(vec![0.0, 9.0, 0.0]);
        assert!(matches!(stage.validate(&space), Err(Error::OutOfDomain(_))));
        let mut all = StageSpec::default();
        for i in 0..3 {
            all.frozen.insert(i, 0.0);
        }
        assert!(all.validate(&space).is_err());
    }

    #[test]
    fn axis_simplex_stays_inside() {
        let space = ParameterSpace::uniform(2, -5.0, 5.0, 12).unwrap();
        let pts = axis_simplex(&space, &[4.9, 0.0], &[0.5, 0.5]).unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts.iter().all(|p| space.contains(p)));
        assert!(pts[1][0] < 4.9);
    }
}
