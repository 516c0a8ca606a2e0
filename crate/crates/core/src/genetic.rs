//! Population evolution for bit-string and program genomes.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lgp::{lgp_crossover, lgp_mutate, LgpConfig, LgpProgram};
use crate::space::Chromosome;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Random,
    Lhs,
    Elitism,
    Replication,
    Crossover,
    Mutation,
    SimplexReflection,
    SimplexExpansion,
    SimplexContraction,
    SimplexShrink,
    SimplexCorrective,
    SimplexCentroid,
    Seeded,
}

impl Origin {
    pub const ALL: [Origin; 13] = [
        Origin::Random,
        Origin::Lhs,
        Origin::Elitism,
        Origin::Replication,
        Origin::Crossover,
        Origin::Mutation,
        Origin::SimplexReflection,
        Origin::SimplexExpansion,
        Origin::SimplexContraction,
        Origin::SimplexShrink,
        Origin::SimplexCorrective,
        Origin::SimplexCentroid,
        Origin::Seeded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Random => "random",
            Origin::Lhs => "lhs",
            Origin::Elitism => "elitism",
            Origin::Replication => "replication",
            Origin::Crossover => "crossover",
            Origin::Mutation => "mutation",
            Origin::SimplexReflection => "simplex-reflection",
            Origin::SimplexExpansion => "simplex-expansion",
            Origin::SimplexContraction => "simplex-contraction",
            Origin::SimplexShrink => "simplex-shrink",
            Origin::SimplexCorrective => "simplex-corrective",
            Origin::SimplexCentroid => "simplex-centroid",
            Origin::Seeded => "seeded",
        }
    }

    pub fn is_simplex(self) -> bool {
        matches!(
            self,
            Origin::SimplexReflection
                | Origin::SimplexExpansion
                | Origin::SimplexContraction
                | Origin::SimplexShrink
                | Origin::SimplexCorrective
                | Origin::SimplexCentroid
        )
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Origin::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown origin `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Genome {
    Bits(Chromosome),
    Program(LgpProgram),
}

/// Identity used for duplicate detection.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenomeKey(pub Vec<u64>);

impl Genome {
    pub fn key(&self) -> GenomeKey {
        match self {
            Genome::Bits(c) => {
                let mut k = vec![0, c.len() as u64];
                k.extend(c.packed());
                GenomeKey(k)
            }
            Genome::Program(p) => {
                let mut k = vec![1];
                k.extend(p.key());
                GenomeKey(k)
            }
        }
    }

    pub fn as_bits(&self) -> Option<&Chromosome> {
        match self {
            Genome::Bits(c) => Some(c),
            Genome::Program(_) => None,
        }
    }

    pub fn as_program(&self) -> Option<&LgpProgram> {
        match self {
            Genome::Program(p) => Some(p),
            Genome::Bits(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    /// Decoded parameters; empty for program genomes.
    pub phenotype: Vec<f64>,
    /// `None` until evaluated.
    pub cost: Option<f64>,
    pub origin: Origin,
    /// Admitted after exhausting regeneration attempts.
    pub flagged: bool,
}

impl Individual {
    pub fn new(genome: Genome, phenotype: Vec<f64>, origin: Origin) -> Self {
        Self {
            genome,
            phenotype,
            cost: None,
            origin,
            flagged: false,
        }
    }

    /// Cost of an evaluated individual; `+inf` otherwise.
    pub fn cost_or_inf(&self) -> f64 {
        self.cost.unwrap_or(f64::INFINITY)
    }
}

/// Stable ascending sort by cost; unevaluated individuals go last.
pub fn sort_population(population: &mut [Individual]) {
    population.sort_by(|a, b| a.cost_or_inf().total_cmp(&b.cost_or_inf()));
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub elitism: usize,
    pub tournament_size: usize,
    pub tournament_probability: f64,
    pub pc: f64,
    pub pm: f64,
    pub pr: f64,
    pub crossover_points: usize,
    pub crossover_mix: bool,
    /// Per-bit flip probability; `None` means one over the chromosome length.
    pub mutation_rate: Option<f64>,
    pub max_regeneration_attempts: usize,
    /// Assign a penalty cost instead of evaluating cap-exhausted offspring.
    pub penalize_unresolved: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            elitism: 1,
            tournament_size: 7,
            tournament_probability: 1.0,
            pc: 0.55,
            pm: 0.45,
            pr: 0.0,
            crossover_points: 1,
            crossover_mix: false,
            mutation_rate: None,
            max_regeneration_attempts: 100,
            penalize_unresolved: false,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.pc, self.pm, self.pr, self.tournament_probability];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("GA probabilities must lie in [0, 1]".into()));
        }
        if (self.pc + self.pm + self.pr - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "pc + pm + pr must equal 1, got {}",
                self.pc + self.pm + self.pr
            )));
        }
        if self.tournament_size == 0 {
            return Err(Error::InvalidConfig("tournament_size must be at least 1".into()));
        }
        if self.crossover_points == 0 {
            return Err(Error::InvalidConfig("crossover_points must be at least 1".into()));
        }
        if let Some(rate) = self.mutation_rate {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidConfig(format!("mutation_rate {rate} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Tournament over a population sorted by ascending cost. Returns an index
/// into `population`.
pub fn tournament_select<R: Rng + ?Sized>(
    population_len: usize,
    size: usize,
    probability: f64,
    rng: &mut R,
) -> Result<usize> {
    if size == 0 || size > population_len {
        return Err(Error::Contract(format!(
            "tournament size {size} invalid for population of {population_len}"
        )));
    }
    let mut drawn = sample(rng, population_len, size).into_vec();
    drawn.sort_unstable();
    for &idx in &drawn {
        if probability >= 1.0 || rng.gen_bool(probability) {
            return Ok(idx);
        }
    }
    Ok(*drawn.last().expect("size >= 1"))
}

/// Multi-point crossover with `points` distinct interior cuts.
pub fn crossover<R: Rng + ?Sized>(
    a: &Chromosome,
    b: &Chromosome,
    points: usize,
    mix: bool,
    rng: &mut R,
) -> Result<(Chromosome, Chromosome)> {
    let len = a.len();
    if b.len() != len {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: b.len(),
        });
    }
    if points == 0 || points >= len {
        return Err(Error::Contract(format!(
            "{points} crossover points impossible on length {len}"
        )));
    }
    let mut cuts: Vec<usize> = sample(rng, len - 1, points).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    cuts.push(len);
    Ok(crossover_at(a, b, &cuts, mix, rng))
}

/// `cuts` are ascending segment ends, the last equal to the length.
fn crossover_at<R: Rng + ?Sized>(
    a: &Chromosome,
    b: &Chromosome,
    cuts: &[usize],
    mix: bool,
    rng: &mut R,
) -> (Chromosome, Chromosome) {
    let mut ca = a.clone();
    let mut cb = b.clone();
    let mut start = 0;
    for (segment, &end) in cuts.iter().enumerate() {
        let swap = if mix { rng.gen_bool(0.5) } else { segment % 2 == 1 };
        if swap {
            ca.bits_mut()[start..end].copy_from_slice(&b.bits()[start..end]);
            cb.bits_mut()[start..end].copy_from_slice(&a.bits()[start..end]);
        }
        start = end;
    }
    (ca, cb)
}

/// Independent bit flips with the at-least-one rule: the child always
/// differs from a non-empty parent.
pub fn mutate<R: Rng + ?Sized>(parent: &Chromosome, rate: f64, rng: &mut R) -> Result<Chromosome> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Contract(format!("mutation rate {rate} outside [0, 1]")));
    }
    let mut child = parent.clone();
    if child.is_empty() {
        return Ok(child);
    }
    let mut flipped = false;
    for bit in child.bits_mut() {
        if rng.gen_bool(rate) {
            *bit = !*bit;
            flipped = true;
        }
    }
    if !flipped {
        let i = rng.gen_range(0..child.len());
        child.bits_mut()[i] = !child.bits()[i];
    }
    Ok(child)
}

/// Genome-specific variation operators.
pub trait Variation {
    fn crossover(&self, a: &Genome, b: &Genome, rng: &mut dyn rand::RngCore) -> Result<(Genome, Genome)>;
    fn mutate(&self, parent: &Genome, rng: &mut dyn rand::RngCore) -> Result<Genome>;
}

#[derive(Clone, Debug)]
pub struct BitVariation {
    pub crossover_points: usize,
    pub mix: bool,
    pub mutation_rate: Option<f64>,
}

impl BitVariation {
    pub fn from_config(config: &GaConfig) -> Self {
        Self {
            crossover_points: config.crossover_points,
            mix: config.crossover_mix,
            mutation_rate: config.mutation_rate,
        }
    }
}

fn expect_bits(g: &Genome) -> Result<&Chromosome> {
    g.as_bits()
        .ok_or_else(|| Error::Contract("bit-string operator applied to a program genome".into()))
}

fn expect_program(g: &Genome) -> Result<&LgpProgram> {
    g.as_program()
        .ok_or_else(|| Error::Contract("program operator applied to a bit-string genome".into()))
}

impl Variation for BitVariation {
    fn crossover(&self, a: &Genome, b: &Genome, rng: &mut dyn rand::RngCore) -> Result<(Genome, Genome)> {
        let (ca, cb) = crossover(expect_bits(a)?, expect_bits(b)?, self.crossover_points, self.mix, rng)?;
        Ok((Genome::Bits(ca), Genome::Bits(cb)))
    }

    fn mutate(&self, parent: &Genome, rng: &mut dyn rand::RngCore) -> Result<Genome> {
        let bits = expect_bits(parent)?;
        let rate = self
            .mutation_rate
            .unwrap_or(1.0 / bits.len().max(1) as f64);
        Ok(Genome::Bits(mutate(bits, rate, rng)?))
    }
}

#[derive(Clone, Debug)]
pub struct LgpVariation(pub LgpConfig);

impl Variation for LgpVariation {
    fn crossover(&self, a: &Genome, b: &Genome, rng: &mut dyn rand::RngCore) -> Result<(Genome, Genome)> {
        let (ca, cb) = lgp_crossover(expect_program(a)?, expect_program(b)?, &self.0, rng)?;
        Ok((Genome::Program(ca), Genome::Program(cb)))
    }

    fn mutate(&self, parent: &Genome, rng: &mut dyn rand::RngCore) -> Result<Genome> {
        Ok(Genome::Program(lgp_mutate(expect_program(parent)?, &self.0, rng)))
    }
}

/// Feasibility predicate for offspring; rejected offspring are regenerated.
pub type Constraint<'a> = &'a (dyn Fn(&Genome) -> bool + Sync);

/// Number of operations drawn while building one generation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub replication: usize,
    pub mutation: usize,
    pub crossover: usize,
    /// Offspring admitted after exhausting regeneration attempts.
    pub flagged: usize,
    /// Rejected candidates (duplicates or constraint violations).
    pub rejected: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Operation {
    Replication,
    Mutation,
    Crossover,
}

/// Builds `count` offspring from a cost-sorted, evaluated population.
///
/// Elites and replicas are copies that keep their cost. Crossover and
/// mutation offspring must be absent from `seen` and from the offspring
/// built so far and must satisfy `constraint`; otherwise they are
/// regenerated from fresh parents, at most `max_regeneration_attempts`
/// times, after which the last candidate is admitted with `flagged` set.
/// `decode` maps a genome to its phenotype.
#[allow(clippy::too_many_arguments)]
pub fn next_generation<R: Rng>(
    population: &[Individual],
    config: &GaConfig,
    variation: &dyn Variation,
    seen: &HashSet<GenomeKey>,
    constraint: Option<Constraint<'_>>,
    decode: &dyn Fn(&Genome) -> Result<Vec<f64>>,
    count: usize,
    rng: &mut R,
) -> Result<(Vec<Individual>, GenerationStats)> {
    if population.is_empty() {
        return Err(Error::Contract("cannot breed from an empty population".into()));
    }
    let mut stats = GenerationStats::default();
    let mut offspring: Vec<Individual> = Vec::with_capacity(count);
    let mut fresh: HashSet<GenomeKey> = HashSet::new();

    for elite in population.iter().take(config.elitism.min(count)) {
        offspring.push(Individual {
            origin: Origin::Elitism,
            flagged: false,
            ..elite.clone()
        });
    }

    let tournament_size = config.tournament_size.min(population.len());
    let select = |rng: &mut R| -> Result<&Individual> {
        let idx = tournament_select(population.len(), tournament_size, config.tournament_probability, rng)?;
        Ok(&population[idx])
    };

    while offspring.len() < count {
        let u: f64 = rng.gen();
        let op = if u < config.pr {
            Operation::Replication
        } else if u < config.pr + config.pm {
            Operation::Mutation
        } else {
            Operation::Crossover
        };
        match op {
            Operation::Replication => {
                stats.replication += 1;
                let parent = select(rng)?;
                offspring.push(Individual {
                    origin: Origin::Replication,
                    flagged: false,
                    ..parent.clone()
                });
                continue;
            }
            Operation::Mutation => stats.mutation += 1,
            Operation::Crossover => stats.crossover += 1,
        }

        let admissible = |g: &Genome, fresh: &HashSet<GenomeKey>| {
            let key = g.key();
            !seen.contains(&key) && !fresh.contains(&key) && constraint.is_none_or(|c| c(g))
        };
        let room = count - offspring.len();
        let mut accepted: Vec<(Genome, Origin, bool)> = Vec::new();
        let mut last: Option<(Genome, Origin)> = None;
        for _ in 0..=config.max_regeneration_attempts {
            let candidates: Vec<Genome> = match op {
                Operation::Mutation => vec![variation.mutate(&select(rng)?.genome, rng)?],
                Operation::Crossover => {
                    let a = select(rng)?;
                    let b = select(rng)?;
                    let (x, y) = variation.crossover(&a.genome, &b.genome, rng)?;
                    vec![x, y]
                }
                Operation::Replication => unreachable!(),
            };
            let origin = if op == Operation::Mutation {
                Origin::Mutation
            } else {
                Origin::Crossover
            };
            let mut local = fresh.clone();
            for g in candidates.into_iter().take(room) {
                if admissible(&g, &local) {
                    local.insert(g.key());
                    accepted.push((g, origin, false));
                } else {
                    stats.rejected += 1;
                    last = Some((g, origin));
                }
            }
            if !accepted.is_empty() {
                break;
            }
        }
        if accepted.is_empty() {
            let (g, origin) = last.expect("at least one attempt");
            stats.flagged += 1;
            accepted.push((g, origin, true));
        }
        for (genome, origin, flagged) in accepted {
            fresh.insert(genome.key());
            let phenotype = decode(&genome)?;
            offspring.push(Individual {
                genome,
                phenotype,
                cost: None,
                origin,
                flagged,
            });
        }
    }
    Ok((offspring, stats))
}
