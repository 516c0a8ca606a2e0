use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{corrective_vertex, detect_degeneracy, DegeneracyConfig, Lattice, SimplexState, UniformLattice, Vertex};
use crate::error::Error;
use crate::genetic::{Individual, Origin};
use crate::lgp::{combine_programs, LgpProgram};
use crate::space::ParameterSpace;

/// Evaluates candidates proposed during exploitation.
pub trait CandidateSink<C: ?Sized> {
    type Error: From<Error>;

    /// Candidate was evaluated before.
    fn is_known(&self, candidate: &C) -> bool;
    fn evaluate(&mut self, candidate: &C, origin: Origin) -> Result<f64, Self::Error>;
    /// No further steps should be started.
    fn exhausted(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplexConfig {
    pub degeneracy: DegeneracyConfig,
    /// Largest offset, in grid steps, tried when moving a duplicate proposal.
    pub max_perturbation: usize,
    /// Weight bound for program-combination exploitation.
    pub weight_bound: f64,
    /// Weight lattice points per unit.
    pub weight_resolution: f64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            degeneracy: DegeneracyConfig::default(),
            max_perturbation: 8,
            weight_bound: 2.0,
            weight_resolution: 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExploitReport {
    /// Candidates evaluated.
    pub generated: usize,
    pub corrections: usize,
    /// Best vertex cost after each completed step or correction.
    pub best_costs: Vec<f64>,
    pub best: Vertex,
}

fn point_key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|v| v.to_bits()).collect()
}

/// Moves a proposal that was already evaluated (or is a current vertex) to
/// the nearest free lattice point, trying offsets of growing size along
/// randomly ordered axes.
fn fresh_point<S, R>(
    point: Vec<f64>,
    vertices: &[Vertex],
    lattice: &dyn Lattice,
    sink: &S,
    max_offset: usize,
    rng: &mut R,
) -> Vec<f64>
where
    S: CandidateSink<[f64]> + ?Sized,
    R: Rng + ?Sized,
{
    let taken = |p: &[f64]| sink.is_known(p) || vertices.iter().any(|v| v.point == p);
    if !taken(&point) {
        return point;
    }
    let mut axes: Vec<(usize, f64)> = (0..point.len()).flat_map(|i| [(i, 1.0), (i, -1.0)]).collect();
    for k in 1..=max_offset {
        axes.shuffle(rng);
        for &(i, sign) in &axes {
            let mut candidate = point.clone();
            candidate[i] += sign * k as f64 * lattice.step(i);
            let candidate = lattice.snap(&candidate);
            if candidate != point && !taken(&candidate) {
                return candidate;
            }
        }
    }
    point
}

/// Runs simplex steps from `initial` until at least `budget` candidates were
/// evaluated; a shrink in progress is always completed. `pool` holds other
/// known points used when the simplex is rebuilt after a correction.
pub fn run_simplex<S, R>(
    initial: Vec<Vertex>,
    mut pool: Vec<Vertex>,
    lattice: &dyn Lattice,
    config: &SimplexConfig,
    budget: usize,
    sink: &mut S,
    rng: &mut R,
) -> Result<ExploitReport, S::Error>
where
    S: CandidateSink<[f64]> + ?Sized,
    R: Rng + ?Sized,
{
    let dim = lattice.dim();
    pool.extend(initial.iter().cloned());
    let mut state = SimplexState::new(initial)?;
    let guard = &config.degeneracy;
    let window = guard.window_for(dim);
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut report = ExploitReport {
        generated: 0,
        corrections: 0,
        best_costs: vec![state.best().cost],
        best: state.best().clone(),
    };

    while state.is_shrinking() || (report.generated < budget && !sink.exhausted()) {
        if state.is_idle() && guard.enabled {
            if let Some(plane) = detect_degeneracy(&history, window, guard.r2_threshold) {
                let best = state.best().point.clone();
                let c = corrective_vertex(&best, &plane.normal, lattice, guard.corrective_multiplier, rng);
                let point = fresh_point(c.point, state.vertices(), lattice, sink, config.max_perturbation, rng);
                let cost = sink.evaluate(&point, Origin::SimplexCorrective)?;
                report.generated += 1;
                let corrective = Vertex { point, cost };
                pool.push(corrective.clone());
                state = SimplexState::new(rebuild(&pool, corrective, dim))?;
                history.clear();
                report.corrections += 1;
                report.best_costs.push(state.best().cost);
                continue;
            }
        }
        let proposal = state.propose(lattice)?;
        let point = fresh_point(proposal.point, state.vertices(), lattice, sink, config.max_perturbation, rng);
        let cost = sink.evaluate(&point, proposal.kind.origin())?;
        report.generated += 1;
        history.push(point.clone());
        pool.push(Vertex {
            point: point.clone(),
            cost,
        });
        let before = state.steps();
        state.accept(point, cost)?;
        if state.steps() > before {
            report.best_costs.push(state.best().cost);
        }
    }
    report.best = state.best().clone();
    Ok(report)
}

/// `N + 1` best distinct pool points, forced to contain `corrective`.
fn rebuild(pool: &[Vertex], corrective: Vertex, dim: usize) -> Vec<Vertex> {
    let mut sorted: Vec<&Vertex> = pool.iter().collect();
    sorted.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    let mut seen = HashSet::new();
    let mut chosen: Vec<Vertex> = sorted
        .into_iter()
        .filter(|v| seen.insert(point_key(&v.point)))
        .take(dim + 1)
        .cloned()
        .collect();
    if !chosen.iter().any(|v| v.point == corrective.point) {
        chosen.pop();
        chosen.push(corrective);
    }
    chosen
}

/// Simplex exploitation seeded with the `N + 1` fittest distinct members of
/// a cost-sorted population. Missing vertices (fewer distinct members than
/// needed) are filled with axis offsets of the best member.
pub fn exploit_parametric<S, R>(
    population: &[Individual],
    space: &ParameterSpace,
    config: &SimplexConfig,
    budget: usize,
    sink: &mut S,
    rng: &mut R,
) -> Result<ExploitReport, S::Error>
where
    S: CandidateSink<[f64]> + ?Sized,
    R: Rng + ?Sized,
{
    let dim = space.len();
    let mut seen = HashSet::new();
    let pool: Vec<Vertex> = population
        .iter()
        .filter_map(|ind| ind.cost.map(|cost| (ind, cost)))
        .filter(|(ind, _)| seen.insert(point_key(&ind.phenotype)))
        .map(|(ind, cost)| Vertex {
            point: ind.phenotype.clone(),
            cost,
        })
        .collect();
    let mut initial: Vec<Vertex> = pool.iter().take(dim + 1).cloned().collect();
    if initial.is_empty() {
        return Err(Error::Contract("simplex exploitation needs an evaluated population".into()).into());
    }
    let mut filled = 0;
    while initial.len() < dim + 1 {
        let best = initial[0].point.clone();
        let point = fresh_point(best, &initial, space, sink, config.max_perturbation.max(1), rng);
        let cost = sink.evaluate(&point, Origin::SimplexCorrective)?;
        filled += 1;
        initial.push(Vertex { point, cost });
    }
    let mut report = run_simplex(initial, pool, space, config, budget.saturating_sub(filled), sink, rng)?;
    report.generated += filled;
    Ok(report)
}

/// Adapter evaluating weight vectors as combined programs.
struct WeightSink<'a, S: ?Sized> {
    programs: Vec<&'a LgpProgram>,
    inner: &'a mut S,
}

impl<S> CandidateSink<[f64]> for WeightSink<'_, S>
where
    S: CandidateSink<LgpProgram> + ?Sized,
{
    type Error = S::Error;

    fn is_known(&self, weights: &[f64]) -> bool {
        combine_programs(&self.programs, weights).is_ok_and(|p| self.inner.is_known(&p))
    }

    fn evaluate(&mut self, weights: &[f64], origin: Origin) -> Result<f64, S::Error> {
        let program = combine_programs(&self.programs, weights)?;
        self.inner.evaluate(&program, origin)
    }

    fn exhausted(&self) -> bool {
        self.inner.exhausted()
    }
}

/// Simplex search over weights `w` of the combination `sum_k w_k b_k` of the
/// `n_sub` fittest distinct programs `b_k`. The initial simplex is the unit
/// weight vectors (costs taken from the population) plus their centroid.
/// Every evaluated weight vector is handed to `sink` as a combined program.
pub fn exploit_lgp<S, R>(
    population: &[Individual],
    n_sub: usize,
    config: &SimplexConfig,
    budget: usize,
    sink: &mut S,
    rng: &mut R,
) -> Result<ExploitReport, S::Error>
where
    S: CandidateSink<LgpProgram> + ?Sized,
    R: Rng + ?Sized,
{
    let mut seen = HashSet::new();
    let members: Vec<(&LgpProgram, f64)> = population
        .iter()
        .filter_map(|ind| Some((ind.genome.as_program()?, ind.cost?)))
        .filter(|(p, _)| seen.insert(p.key()))
        .take(n_sub)
        .collect();
    if members.len() < 2 || members.len() < n_sub {
        return Err(Error::Contract(format!(
            "program exploitation needs {} distinct evaluated programs, found {}",
            n_sub.max(2),
            members.len()
        ))
        .into());
    }
    let n = members.len();
    let lattice = UniformLattice {
        dim: n,
        min: -config.weight_bound,
        max: config.weight_bound,
        resolution: config.weight_resolution,
    };
    let mut initial: Vec<Vertex> = (0..n)
        .map(|k| {
            let mut w = vec![0.0; n];
            w[k] = 1.0;
            Vertex {
                point: w,
                cost: members[k].1,
            }
        })
        .collect();
    let mut adapter = WeightSink {
        programs: members.iter().map(|(p, _)| *p).collect(),
        inner: sink,
    };
    let centre = lattice.snap(&vec![1.0 / n as f64; n]);
    let cost = adapter.evaluate(&centre, Origin::SimplexCentroid)?;
    initial.push(Vertex { point: centre, cost });
    let mut report = run_simplex(initial, Vec::new(), &lattice, config, budget.saturating_sub(1), &mut adapter, rng)?;
    report.generated += 1;
    Ok(report)
}
