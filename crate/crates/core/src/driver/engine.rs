use std::collections::{HashMap, HashSet, VecDeque};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_convergence, save_checkpoint, EvalRecord, GenerationSummary, InitSampling, Mode, RunConfig, RunResult,
    StageSpec, Termination, PENALTY_COST,
};
use crate::error::{Error, EvalError, RunError};
use crate::genetic::{
    next_generation, sort_population, BitVariation, GenerationStats, Genome, GenomeKey, Individual, LgpVariation,
    Origin, Variation,
};
use crate::lgp::{random_program, LgpProgram};
use crate::problems::{Candidate, Problem};
use crate::rng::{RngState, RunRng};
use crate::simplex::{exploit_lgp, exploit_parametric, CandidateSink, ExploitReport};
use crate::space::ParameterSpace;

/// Population, random stream and counters after a completed generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub generation: usize,
    pub population: Vec<Individual>,
    pub rng: RngState,
    /// Log length at the boundary.
    pub evaluations: u64,
}

/// Everything needed to continue a run; this is the checkpoint payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config: RunConfig,
    pub stage: usize,
    /// Log length when the current stage started.
    pub stage_start: u64,
    /// `None` until the current stage completes its first generation.
    pub boundary: Option<Boundary>,
    /// Best individual of the previous stage, full-space phenotype.
    pub carry: Option<Individual>,
    pub log: Vec<EvalRecord>,
    pub generations: Vec<GenerationSummary>,
    pub best: Option<Individual>,
    pub termination: Option<Termination>,
}

impl RunState {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            stage: 0,
            stage_start: 0,
            boundary: None,
            carry: None,
            log: Vec::new(),
            generations: Vec::new(),
            best: None,
            termination: None,
        }
    }

    fn stages(&self) -> Vec<StageSpec> {
        if self.config.stages.is_empty() {
            vec![StageSpec::default()]
        } else {
            self.config.stages.clone()
        }
    }
}

/// Search space of one stage and its embedding into the full space.
struct StageCtx {
    index: usize,
    spec: StageSpec,
    space: Option<ParameterSpace>,
    free: Vec<usize>,
    full_dim: usize,
    max_generations: usize,
}

impl StageCtx {
    fn embed(&self, sub: &[f64]) -> Vec<f64> {
        if self.space.is_none() {
            return Vec::new();
        }
        let mut full = vec![0.0; self.full_dim];
        for (&i, &v) in &self.spec.frozen {
            full[i] = v;
        }
        for (k, &i) in self.free.iter().enumerate() {
            full[i] = sub[k];
        }
        full
    }

    fn project(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    fn space(&self) -> Result<&ParameterSpace, Error> {
        self.space
            .as_ref()
            .ok_or_else(|| Error::Contract("parametric operation without a parameter space".into()))
    }

    fn decode(&self, genome: &Genome) -> Result<Vec<f64>, Error> {
        match genome {
            Genome::Bits(c) => self.space()?.decode(c),
            Genome::Program(_) => Ok(Vec::new()),
        }
    }
}

pub(crate) struct Runner<'p> {
    state: RunState,
    problem: &'p Problem,
    /// Evaluations already performed before a resume, served in order.
    replay: VecDeque<EvalRecord>,
    seen: HashSet<GenomeKey>,
    costs: HashMap<GenomeKey, f64>,
    /// Set when the target is reached or a budget runs out mid-generation.
    halted: bool,
    started: Instant,
}

impl<'p> Runner<'p> {
    pub(crate) fn start(config: RunConfig, problem: &'p Problem) -> Result<Self, RunError> {
        config.validate(problem.space.as_ref())?;
        Ok(Self::with_state(RunState::new(config), problem, VecDeque::new()))
    }

    pub(crate) fn resume(mut state: RunState, problem: &'p Problem) -> Result<Self, RunError> {
        state.config.validate(problem.space.as_ref())?;
        if state.termination.is_some() {
            return Ok(Self::with_state(state, problem, VecDeque::new()));
        }
        let restore = state.boundary.as_ref().map_or(state.stage_start, |b| b.evaluations) as usize;
        if restore > state.log.len() {
            return Err(crate::error::CheckpointError::Corrupted("boundary beyond the evaluation log".into()).into());
        }
        let replay: VecDeque<EvalRecord> = state.log.drain(restore..).collect();
        let stage = state.stage;
        let done = state.boundary.as_ref().map_or(0, |b| b.generation);
        state.generations.retain(|g| g.stage < stage || g.generation <= done);
        state.best = best_of(&state.log, state.carry.as_ref());
        Ok(Self::with_state(state, problem, replay))
    }

    fn with_state(state: RunState, problem: &'p Problem, replay: VecDeque<EvalRecord>) -> Self {
        Self {
            state,
            problem,
            replay,
            seen: HashSet::new(),
            costs: HashMap::new(),
            halted: false,
            started: Instant::now(),
        }
    }

    pub(crate) fn execute(mut self) -> Result<RunResult, RunError> {
        let stages = self.state.stages();
        while self.state.termination.is_none() {
            let ctx = self.stage_ctx(&stages)?;
            let outcome = self.run_stage(&ctx)?;
            let last = self.state.stage + 1 >= stages.len();
            let global_stop = matches!(outcome, Termination::Converged)
                || (outcome == Termination::EvaluationCap && self.global_budget_left() == Some(0));
            if last || global_stop {
                self.state.termination = Some(outcome);
            } else {
                self.state.carry = self.state.generations.last().map(|g| g.best.clone());
                self.state.stage += 1;
                self.state.stage_start = self.state.log.len() as u64;
                self.state.boundary = None;
            }
            self.write_checkpoint()?;
        }
        self.finish()
    }

    fn finish(self) -> Result<RunResult, RunError> {
        let best = self
            .state
            .best
            .clone()
            .ok_or_else(|| Error::Contract("run finished without any evaluated individual".into()))?;
        Ok(RunResult {
            log: self.state.log,
            generations: self.state.generations,
            best,
            termination: self.state.termination.expect("finished runs are terminated"),
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        })
    }

    fn stage_ctx(&self, stages: &[StageSpec]) -> Result<StageCtx, RunError> {
        let spec = stages[self.state.stage].clone();
        let config = &self.state.config;
        let (space, free, full_dim) = match (config.mode, &self.problem.space) {
            (Mode::Ga, Some(full)) => {
                spec.validate(full)?;
                let free = spec.free_dims(full.len());
                (Some(full.subspace(&free)?), free, full.len())
            }
            (Mode::Ga, None) => return Err(Error::InvalidConfig("parametric runs need a parameter space".into()).into()),
            (Mode::Lgp, _) => (None, Vec::new(), 0),
        };
        Ok(StageCtx {
            index: self.state.stage,
            max_generations: spec.generations.unwrap_or(config.max_generations),
            spec,
            space,
            free,
            full_dim,
        })
    }

    fn global_budget_left(&self) -> Option<usize> {
        let used = self.state.log.len();
        self.state.config.max_evaluations.map(|m| m.saturating_sub(used))
    }

    fn budget_left(&self, ctx: &StageCtx) -> usize {
        let stage_used = self.state.log.len() - self.state.stage_start as usize;
        let stage = ctx.spec.max_evaluations.map(|m| m.saturating_sub(stage_used));
        [self.global_budget_left(), stage].into_iter().flatten().min().unwrap_or(usize::MAX)
    }

    fn exhausted(&self, ctx: &StageCtx) -> bool {
        self.halted || self.budget_left(ctx) == 0
    }

    fn target(&self) -> Option<f64> {
        self.problem.target.as_ref().map(|t| t.cost)
    }

    fn run_stage(&mut self, ctx: &StageCtx) -> Result<Termination, RunError> {
        self.seen.clear();
        self.costs.clear();
        self.halted = false;
        let stage_start = self.state.stage_start as usize;
        for record in &self.state.log[stage_start..] {
            let key = record.genome.key();
            self.seen.insert(key.clone());
            self.costs.entry(key).or_insert(record.cost);
        }
        if let (Some(carry), Some(space)) = (&self.state.carry, &ctx.space) {
            let sub = space.snap(&ctx.project(&carry.phenotype))?;
            if ctx.embed(&sub) == carry.phenotype {
                self.remember(&Genome::Bits(space.encode(&sub)?), carry.cost_or_inf());
            }
        }
        let (mut population, mut rng, mut generation) = match &self.state.boundary {
            Some(b) => (b.population.clone(), RunRng::restore(&b.rng)?, b.generation),
            None => (Vec::new(), RunRng::derived(self.state.config.seed, ctx.index as u64), 0),
        };
        for ind in &population {
            if let Some(cost) = ind.cost {
                let key = ind.genome.key();
                self.seen.insert(key.clone());
                self.costs.entry(key).or_insert(cost);
            }
        }
        let mut best_costs: Vec<f64> = self
            .state
            .generations
            .iter()
            .filter(|g| g.stage == ctx.index)
            .map(GenerationSummary::best_cost)
            .collect();

        loop {
            generation += 1;
            let explore = if generation == 1 {
                population = self.initial_population(ctx, generation, &mut rng)?;
                GenerationStats::default()
            } else {
                let (offspring, stats) = self.explore(ctx, &population, generation, &mut rng)?;
                population = offspring;
                stats
            };
            sort_population(&mut population);
            let config = &self.state.config;
            let report = if config.hybrid && config.n_exploit > 0 && !self.exhausted(ctx) && !population.is_empty() {
                let (added, report) = self.exploit(ctx, &population, generation, &mut rng)?;
                population.extend(added);
                sort_population(&mut population);
                report
            } else {
                None
            };
            let Some(best) = population.first() else {
                return Err(Error::Contract("generation ended without evaluated individuals".into()).into());
            };
            let mut best = best.clone();
            best.phenotype = ctx.embed(&best.phenotype);
            best_costs.push(best.cost_or_inf());
            self.state.generations.push(GenerationSummary {
                stage: ctx.index,
                generation,
                evaluations: self.state.log.len() as u64,
                population: population.len(),
                best,
                explore,
                exploit_generated: report.as_ref().map_or(0, |r| r.generated),
                corrections: report.as_ref().map_or(0, |r| r.corrections),
            });
            self.state.boundary = Some(Boundary {
                generation,
                population: population.clone(),
                rng: rng.state(),
                evaluations: self.state.log.len() as u64,
            });
            let config = &self.state.config;
            let target = if config.stop_at_target { self.target() } else { None };
            let decision = check_convergence(
                &best_costs,
                self.state.log.len(),
                ctx.max_generations,
                config.max_evaluations,
                config.stagnation_window,
                target,
            )
            .or_else(|| (self.budget_left(ctx) == 0).then_some(Termination::EvaluationCap));
            log::debug!(
                "stage {} generation {generation}: best {:e} after {} evaluations",
                ctx.index,
                best_costs.last().copied().unwrap_or(f64::INFINITY),
                self.state.log.len()
            );
            if let Some(t) = decision {
                return Ok(t);
            }
            if let Some(c) = &self.state.config.checkpoint {
                if generation % c.every == 0 {
                    self.write_checkpoint()?;
                }
            }
        }
    }

    fn initial_population(
        &mut self,
        ctx: &StageCtx,
        generation: usize,
        rng: &mut RunRng,
    ) -> Result<Vec<Individual>, RunError> {
        let config = self.state.config.clone();
        let mut population: Vec<Individual> = Vec::new();
        let mut keys: HashSet<GenomeKey> = HashSet::new();

        if let Some(space) = &ctx.space {
            for seed in &ctx.spec.seeds {
                let sub = space.snap(&ctx.project(seed))?;
                let genome = Genome::Bits(space.encode(&sub)?);
                if keys.insert(genome.key()) {
                    population.push(Individual::new(genome, sub, Origin::Seeded));
                }
            }
            if let Some(carry) = &self.state.carry {
                let sub = space.snap(&ctx.project(&carry.phenotype))?;
                let genome = Genome::Bits(space.encode(&sub)?);
                let mut ind = Individual::new(genome, sub.clone(), Origin::Seeded);
                if ctx.embed(&sub) == carry.phenotype {
                    ind.cost = carry.cost;
                }
                if keys.insert(ind.genome.key()) {
                    population.push(ind);
                }
            }
        }

        let needed = config.n_init.saturating_sub(population.len());
        let attempts = config.ga.max_regeneration_attempts.max(1);
        match (config.mode, &ctx.space) {
            (Mode::Ga, Some(space)) => {
                let mut fresh: Vec<Genome> = Vec::new();
                if config.init == InitSampling::Lhs {
                    fresh.extend(space.lhs_sample(needed, rng)?.into_iter().map(Genome::Bits));
                }
                let origin = match config.init {
                    InitSampling::Mcs => Origin::Random,
                    InitSampling::Lhs => Origin::Lhs,
                };
                let mut fresh = fresh.into_iter();
                for _ in 0..needed {
                    let mut genome = fresh
                        .next()
                        .unwrap_or_else(|| Genome::Bits(space.random_chromosome(rng)));
                    let mut tries = 0;
                    while keys.contains(&genome.key()) && tries < attempts {
                        genome = Genome::Bits(space.random_chromosome(rng));
                        tries += 1;
                    }
                    if keys.insert(genome.key()) {
                        let phenotype = ctx.decode(&genome)?;
                        population.push(Individual::new(genome, phenotype, origin));
                    }
                }
            }
            (Mode::Lgp, _) => {
                for _ in 0..needed {
                    let mut program = random_program(&config.lgp, config.lgp.init_length, rng)?;
                    let mut tries = 0;
                    while keys.contains(&GenomeKey(tagged_program_key(&program))) && tries < attempts {
                        program = random_program(&config.lgp, config.lgp.init_length, rng)?;
                        tries += 1;
                    }
                    let genome = Genome::Program(program);
                    if keys.insert(genome.key()) {
                        population.push(Individual::new(genome, Vec::new(), Origin::Random));
                    }
                }
            }
            (Mode::Ga, None) => return Err(Error::InvalidConfig("parametric runs need a parameter space".into()).into()),
        }
        self.evaluate_batch(ctx, &mut population, generation)?;
        population.retain(|ind| ind.cost.is_some());
        Ok(population)
    }

    fn explore(
        &mut self,
        ctx: &StageCtx,
        population: &[Individual],
        generation: usize,
        rng: &mut RunRng,
    ) -> Result<(Vec<Individual>, GenerationStats), RunError> {
        let config = &self.state.config;
        let variation: Box<dyn Variation> = match config.mode {
            Mode::Ga => Box::new(BitVariation::from_config(&config.ga)),
            Mode::Lgp => Box::new(LgpVariation(config.lgp.clone())),
        };
        let decode = |g: &Genome| ctx.decode(g);
        let (mut offspring, stats) = next_generation(
            population,
            &config.ga,
            variation.as_ref(),
            &self.seen,
            None,
            &decode,
            config.n_explor,
            rng,
        )?;
        self.evaluate_batch(ctx, &mut offspring, generation)?;
        offspring.retain(|ind| ind.cost.is_some());
        Ok((offspring, stats))
    }

    fn exploit(
        &mut self,
        ctx: &StageCtx,
        population: &[Individual],
        generation: usize,
        rng: &mut RunRng,
    ) -> Result<(Vec<Individual>, Option<ExploitReport>), RunError> {
        let config = self.state.config.clone();
        let mut sink = ExploitSink {
            runner: self,
            ctx,
            generation,
            added: Vec::new(),
        };
        let report = match config.mode {
            Mode::Ga => {
                let space = ctx.space()?;
                Some(exploit_parametric(population, space, &config.simplex, config.n_exploit, &mut sink, rng)?)
            }
            Mode::Lgp => {
                let distinct: HashSet<GenomeKey> = population.iter().map(|i| i.genome.key()).collect();
                if distinct.len() < config.n_sub {
                    log::warn!("generation {generation}: too few distinct programs for exploitation");
                    None
                } else {
                    Some(exploit_lgp(population, config.n_sub, &config.simplex, config.n_exploit, &mut sink, rng)?)
                }
            }
        };
        Ok((sink.added, report))
    }

    fn remember(&mut self, genome: &Genome, cost: f64) {
        let key = genome.key();
        self.seen.insert(key.clone());
        self.costs.entry(key).or_insert(cost);
    }

    /// Assigns costs to the individuals lacking one, in order. Individuals
    /// whose genome was already evaluated reuse the stored cost; individuals
    /// beyond the remaining budget are left without a cost.
    fn evaluate_batch(&mut self, ctx: &StageCtx, batch: &mut [Individual], generation: usize) -> Result<(), RunError> {
        let penalize = self.state.config.ga.penalize_unresolved;
        let mut pending: Vec<usize> = Vec::new();
        for (i, ind) in batch.iter_mut().enumerate() {
            if ind.cost.is_some() {
                continue;
            }
            if ind.flagged && penalize {
                ind.cost = Some(PENALTY_COST);
            } else if let Some(&cost) = self.costs.get(&ind.genome.key()).filter(|_| ind.origin != Origin::Seeded) {
                // Explicit seeds are always evaluated so they appear in the log.
                ind.cost = Some(cost);
            } else {
                pending.push(i);
            }
        }
        let parallel = self.state.config.parallel && self.problem.objective.concurrent();
        if !parallel {
            for i in pending {
                if self.exhausted(ctx) {
                    break;
                }
                let ind = &batch[i];
                let cost = self.evaluate_one(ctx, &ind.genome, &ind.phenotype, ind.origin, ind.flagged, generation)?;
                batch[i].cost = Some(cost);
            }
            return Ok(());
        }
        if self.halted {
            return Ok(());
        }
        pending.truncate(self.budget_left(ctx));
        let first = self.state.log.len() as u64;
        let jobs: Vec<(u64, usize, Option<f64>)> = pending
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let index = first + k as u64;
                (index, i, self.replayed(index, &batch[i].genome))
            })
            .collect();
        let objective = &self.problem.objective;
        let batch_ref: &[Individual] = batch;
        let results: Vec<Result<f64, EvalError>> = jobs
            .par_iter()
            .map(|&(index, i, cached)| match cached {
                Some(cost) => Ok(cost),
                None => evaluate_candidate(objective.as_ref(), ctx, &batch_ref[i], index),
            })
            .collect();
        for ((index, i, _), result) in jobs.into_iter().zip(results) {
            let cost = match result {
                Ok(cost) => cost,
                Err(e) => return Err(self.fail(index, e)),
            };
            let ind = &batch[i];
            self.record(ctx, &ind.genome, &ind.phenotype, ind.origin, ind.flagged, generation, cost);
            batch[i].cost = Some(cost);
        }
        Ok(())
    }

    /// Cost stored for `index` by the interrupted session, if the replayed
    /// genome matches.
    fn replayed(&self, index: u64, genome: &Genome) -> Option<f64> {
        let offset = index.checked_sub(self.state.log.len() as u64)? as usize;
        let record = self.replay.get(offset)?;
        (record.index == index && &record.genome == genome).then_some(record.cost)
    }

    fn evaluate_one(
        &mut self,
        ctx: &StageCtx,
        genome: &Genome,
        phenotype: &[f64],
        origin: Origin,
        flagged: bool,
        generation: usize,
    ) -> Result<f64, RunError> {
        let index = self.state.log.len() as u64;
        let cost = match self.replayed(index, genome) {
            Some(cost) => cost,
            None => {
                if !self.replay.is_empty() {
                    log::warn!("evaluation {index} diverges from the checkpointed log; replay abandoned");
                    self.replay.clear();
                }
                let ind = Individual::new(genome.clone(), phenotype.to_vec(), origin);
                evaluate_candidate(self.problem.objective.as_ref(), ctx, &ind, index)
                    .map_err(|e| self.fail(index, e))?
            }
        };
        self.record(ctx, genome, phenotype, origin, flagged, generation, cost);
        Ok(cost)
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        ctx: &StageCtx,
        genome: &Genome,
        phenotype: &[f64],
        origin: Origin,
        flagged: bool,
        generation: usize,
        cost: f64,
    ) {
        let index = self.state.log.len() as u64;
        if self.replay.front().is_some_and(|r| r.index == index) {
            self.replay.pop_front();
        }
        let full = ctx.embed(phenotype);
        if self.state.best.as_ref().is_none_or(|b| cost < b.cost_or_inf()) {
            self.state.best = Some(Individual {
                cost: Some(cost),
                flagged,
                ..Individual::new(genome.clone(), full.clone(), origin)
            });
        }
        self.state.log.push(EvalRecord {
            index,
            stage: ctx.index,
            generation,
            origin,
            flagged,
            genome: genome.clone(),
            phenotype: full,
            cost,
        });
        self.remember(genome, cost);
        if self.state.config.stop_at_target && self.target().is_some_and(|t| cost <= t) {
            self.halted = true;
        }
    }

    fn fail(&mut self, index: u64, source: EvalError) -> RunError {
        let checkpoint = match self.write_checkpoint() {
            Ok(()) => self.state.config.checkpoint.as_ref().map(|c| c.path.clone()),
            Err(e) => {
                log::error!("could not write checkpoint after failed evaluation {index}: {e}");
                None
            }
        };
        RunError::Evaluation {
            index,
            source,
            checkpoint,
        }
    }

    fn write_checkpoint(&self) -> Result<(), RunError> {
        let Some(c) = &self.state.config.checkpoint else {
            return Ok(());
        };
        save_checkpoint(&c.path, &self.state)?;
        Ok(())
    }
}

fn tagged_program_key(program: &LgpProgram) -> Vec<u64> {
    Genome::Program(program.clone()).key().0
}

fn evaluate_candidate(
    objective: &dyn crate::problems::Objective,
    ctx: &StageCtx,
    ind: &Individual,
    index: u64,
) -> Result<f64, EvalError> {
    match &ind.genome {
        Genome::Bits(_) => objective.evaluate(Candidate::Params(&ctx.embed(&ind.phenotype)), index),
        Genome::Program(p) => objective.evaluate(Candidate::Program(p), index),
    }
}

fn best_of(log: &[EvalRecord], carry: Option<&Individual>) -> Option<Individual> {
    let mut best = carry.cloned();
    for r in log {
        if best.as_ref().is_none_or(|b| r.cost < b.cost_or_inf()) {
            best = Some(Individual {
                cost: Some(r.cost),
                flagged: r.flagged,
                ..Individual::new(r.genome.clone(), r.phenotype.clone(), r.origin)
            });
        }
    }
    best
}

struct ExploitSink<'r, 'p> {
    runner: &'r mut Runner<'p>,
    ctx: &'r StageCtx,
    generation: usize,
    added: Vec<Individual>,
}

impl ExploitSink<'_, '_> {
    fn admit(&mut self, genome: Genome, phenotype: Vec<f64>, origin: Origin) -> Result<f64, RunError> {
        let cost = match self.runner.costs.get(&genome.key()) {
            Some(&cost) => cost,
            None => self
                .runner
                .evaluate_one(self.ctx, &genome, &phenotype, origin, false, self.generation)?,
        };
        self.added.push(Individual {
            cost: Some(cost),
            ..Individual::new(genome, phenotype, origin)
        });
        Ok(cost)
    }
}

impl CandidateSink<[f64]> for ExploitSink<'_, '_> {
    type Error = RunError;

    fn is_known(&self, point: &[f64]) -> bool {
        let Ok(space) = self.ctx.space() else { return false };
        space
            .encode(point)
            .is_ok_and(|c| self.runner.seen.contains(&Genome::Bits(c).key()))
    }

    fn evaluate(&mut self, point: &[f64], origin: Origin) -> Result<f64, RunError> {
        let genome = Genome::Bits(self.ctx.space()?.encode(point)?);
        self.admit(genome, point.to_vec(), origin)
    }

    fn exhausted(&self) -> bool {
        self.runner.exhausted(self.ctx)
    }
}

impl CandidateSink<LgpProgram> for ExploitSink<'_, '_> {
    type Error = RunError;

    fn is_known(&self, program: &LgpProgram) -> bool {
        self.runner.seen.contains(&GenomeKey(tagged_program_key(program)))
    }

    fn evaluate(&mut self, program: &LgpProgram, origin: Origin) -> Result<f64, RunError> {
        self.admit(Genome::Program(program.clone()), Vec::new(), origin)
    }

    fn exhausted(&self) -> bool {
        self.runner.exhausted(self.ctx)
    }
}
