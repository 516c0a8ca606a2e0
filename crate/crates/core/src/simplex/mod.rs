//! Downhill simplex exploitation on a discrete lattice, with a guard
//! against simplex collapse.

mod degeneracy;
mod exploit;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genetic::Origin;
use crate::space::ParameterSpace;

pub use degeneracy::{corrective_vertex, detect_degeneracy, fit_hyperplane, Corrective, DegeneracyConfig, Hyperplane};
pub use exploit::{exploit_lgp, exploit_parametric, run_simplex, CandidateSink, ExploitReport, SimplexConfig};

/// Domain on which simplex proposals live: every proposal is clamped to the
/// bounds and moved to the nearest lattice point.
pub trait Lattice {
    fn dim(&self) -> usize;
    fn bounds(&self, i: usize) -> (f64, f64);
    /// Lattice spacing along dimension `i`; zero for a continuum.
    fn step(&self, i: usize) -> f64;
    fn snap(&self, point: &[f64]) -> Vec<f64>;

    fn contains(&self, point: &[f64]) -> bool {
        point.iter().enumerate().all(|(i, &v)| {
            let (lo, hi) = self.bounds(i);
            v >= lo && v <= hi
        })
    }
}

impl Lattice for ParameterSpace {
    fn dim(&self) -> usize {
        self.len()
    }

    fn bounds(&self, i: usize) -> (f64, f64) {
        let d = &self.dims()[i];
        (d.min, d.max)
    }

    fn step(&self, i: usize) -> f64 {
        ParameterSpace::step(self, i)
    }

    fn snap(&self, point: &[f64]) -> Vec<f64> {
        ParameterSpace::snap(self, point).expect("simplex geometry yields finite points of matching length")
    }
}

/// Cubic lattice `{k / resolution}` restricted to `[min, max]^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformLattice {
    pub dim: usize,
    pub min: f64,
    pub max: f64,
    pub resolution: f64,
}

impl Lattice for UniformLattice {
    fn dim(&self) -> usize {
        self.dim
    }

    fn bounds(&self, _: usize) -> (f64, f64) {
        (self.min, self.max)
    }

    fn step(&self, _: usize) -> f64 {
        1.0 / self.resolution
    }

    fn snap(&self, point: &[f64]) -> Vec<f64> {
        point
            .iter()
            .map(|&v| ((v.clamp(self.min, self.max) * self.resolution).round() / self.resolution).clamp(self.min, self.max))
            .collect()
    }
}

/// Box without a lattice: proposals are only clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct Continuum {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Length scale used for corrective offsets and duplicate perturbation.
    pub scale: f64,
}

impl Continuum {
    pub fn unbounded(dim: usize, scale: f64) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            scale,
        }
    }
}

impl Lattice for Continuum {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn bounds(&self, i: usize) -> (f64, f64) {
        (self.lower[i], self.upper[i])
    }

    fn step(&self, _: usize) -> f64 {
        self.scale
    }

    fn snap(&self, point: &[f64]) -> Vec<f64> {
        point
            .iter()
            .enumerate()
            .map(|(i, &v)| v.clamp(self.lower[i], self.upper[i]))
            .collect()
    }
}

/// Mean of the given points.
pub fn centroid(points: &[&[f64]]) -> Vec<f64> {
    let n = points.len() as f64;
    let mut c = vec![0.0; points[0].len()];
    for p in points {
        for (ci, &v) in c.iter_mut().zip(p.iter()) {
            *ci += v;
        }
    }
    c.iter_mut().for_each(|ci| *ci /= n);
    c
}

fn affine(c: &[f64], w: &[f64], t: f64) -> Vec<f64> {
    c.iter().zip(w).map(|(&ci, &wi)| ci + t * (ci - wi)).collect()
}

/// `c + (c - worst)`.
pub fn reflect(c: &[f64], worst: &[f64]) -> Vec<f64> {
    affine(c, worst, 1.0)
}

/// `c + 2 (c - worst)`.
pub fn expand(c: &[f64], worst: &[f64]) -> Vec<f64> {
    affine(c, worst, 2.0)
}

/// `c + (worst - c) / 2`.
pub fn contract(c: &[f64], worst: &[f64]) -> Vec<f64> {
    c.iter().zip(worst).map(|(&ci, &wi)| ci + 0.5 * (wi - ci)).collect()
}

/// `best + (v - best) / 2`.
pub fn shrink_toward(best: &[f64], v: &[f64]) -> Vec<f64> {
    best.iter().zip(v).map(|(&b, &vi)| b + 0.5 * (vi - b)).collect()
}

/// Volume of the simplex spanned by `N + 1` points in `N` dimensions.
pub fn simplex_volume(points: &[Vec<f64>]) -> f64 {
    let n = points.len() - 1;
    let m = nalgebra::DMatrix::from_fn(n, n, |r, c| points[r + 1][c] - points[0][c]);
    let factorial: f64 = (1..=n).map(|k| k as f64).product();
    m.determinant().abs() / factorial
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub point: Vec<f64>,
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Reflection,
    Expansion,
    Contraction,
    Shrink,
}

impl Move {
    pub fn origin(self) -> Origin {
        match self {
            Move::Reflection => Origin::SimplexReflection,
            Move::Expansion => Origin::SimplexExpansion,
            Move::Contraction => Origin::SimplexContraction,
            Move::Shrink => Origin::SimplexShrink,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub kind: Move,
    /// Point given by the simplex geometry, before snapping.
    pub raw: Vec<f64>,
    /// `raw` clamped and snapped to the lattice.
    pub point: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Phase {
    Reflect,
    Expand { reflected: Vertex },
    Contract,
    Shrink { targets: Vec<Vec<f64>>, done: Vec<Vertex> },
}

/// Nelder-Mead state machine emitting one candidate at a time.
///
/// Vertices are kept sorted by ascending cost. A step starts with a
/// reflection of the worst vertex and ends when the worst vertex has been
/// replaced or every non-best vertex has been shrunk toward the best.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexState {
    vertices: Vec<Vertex>,
    phase: Phase,
    #[serde(skip)]
    pending: Option<Move>,
    steps: usize,
}

fn sort_vertices(vertices: &mut [Vertex]) {
    vertices.sort_by(|a, b| a.cost.total_cmp(&b.cost));
}

impl SimplexState {
    pub fn new(mut vertices: Vec<Vertex>) -> Result<Self> {
        let n = vertices.len().saturating_sub(1);
        if n == 0 || vertices.iter().any(|v| v.point.len() != n) {
            return Err(Error::Contract(format!(
                "a simplex needs N + 1 vertices of dimension N, got {} vertices",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| v.cost.is_nan()) {
            return Err(Error::Contract("simplex vertex has a NaN cost".into()));
        }
        sort_vertices(&mut vertices);
        Ok(Self {
            vertices,
            phase: Phase::Reflect,
            pending: None,
            steps: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn best(&self) -> &Vertex {
        &self.vertices[0]
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// No step is in progress.
    pub fn is_idle(&self) -> bool {
        self.pending.is_none() && matches!(self.phase, Phase::Reflect)
    }

    pub fn is_shrinking(&self) -> bool {
        matches!(self.phase, Phase::Shrink { .. })
    }

    fn centroid(&self) -> Vec<f64> {
        let n = self.dim();
        let points: Vec<&[f64]> = self.vertices[..n].iter().map(|v| v.point.as_slice()).collect();
        centroid(&points)
    }

    fn worst(&self) -> &Vertex {
        &self.vertices[self.dim()]
    }

    /// Next candidate to evaluate. Exactly one proposal may be outstanding.
    pub fn propose(&mut self, lattice: &dyn Lattice) -> Result<Proposal> {
        if self.pending.is_some() {
            return Err(Error::Contract("a simplex proposal is already outstanding".into()));
        }
        let (kind, raw) = match &self.phase {
            Phase::Reflect => (Move::Reflection, reflect(&self.centroid(), &self.worst().point)),
            Phase::Expand { .. } => (Move::Expansion, expand(&self.centroid(), &self.worst().point)),
            Phase::Contract => (Move::Contraction, contract(&self.centroid(), &self.worst().point)),
            Phase::Shrink { targets, done } => (Move::Shrink, targets[done.len()].clone()),
        };
        self.pending = Some(kind);
        let point = lattice.snap(&raw);
        Ok(Proposal { kind, raw, point })
    }

    /// Records the cost of the outstanding proposal, evaluated at `point`.
    pub fn accept(&mut self, point: Vec<f64>, cost: f64) -> Result<()> {
        if self.pending.take().is_none() {
            return Err(Error::Contract("no simplex proposal is outstanding".into()));
        }
        let n = self.dim();
        let candidate = Vertex { point, cost };
        let phase = std::mem::replace(&mut self.phase, Phase::Reflect);
        match phase {
            Phase::Reflect => {
                if cost < self.vertices[0].cost {
                    self.phase = Phase::Expand { reflected: candidate };
                } else if cost <= self.vertices[n - 1].cost {
                    self.replace_worst(candidate);
                } else {
                    self.phase = Phase::Contract;
                }
            }
            Phase::Expand { reflected } => {
                self.replace_worst(if cost < reflected.cost { candidate } else { reflected });
            }
            Phase::Contract => {
                if cost < self.worst().cost {
                    self.replace_worst(candidate);
                } else {
                    let best = &self.vertices[0].point;
                    let targets = self.vertices[1..].iter().map(|v| shrink_toward(best, &v.point)).collect();
                    self.phase = Phase::Shrink {
                        targets,
                        done: Vec::with_capacity(n),
                    };
                }
            }
            Phase::Shrink { targets, mut done } => {
                done.push(candidate);
                if done.len() == n {
                    self.vertices.truncate(1);
                    self.vertices.extend(done);
                    sort_vertices(&mut self.vertices);
                    self.steps += 1;
                } else {
                    self.phase = Phase::Shrink { targets, done };
                }
            }
        }
        Ok(())
    }

    fn replace_worst(&mut self, vertex: Vertex) {
        let n = self.dim();
        self.vertices[n] = vertex;
        sort_vertices(&mut self.vertices);
        self.steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(point: &[f64], cost: f64) -> Vertex {
        Vertex {
            point: point.to_vec(),
            cost,
        }
    }

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn free(n: usize) -> Continuum {
        Continuum::unbounded(n, 1e-6)
    }

    #[test]
    fn reflection_then_expansion_keeps_reflection() {
        let mut s = SimplexState::new(vec![v(&[0.0, 1.0], 1.0), v(&[1.0, 0.0], 1.0), v(&[1.0, 1.0], 2.0)]).unwrap();
        let lattice = free(2);
        let r = s.propose(&lattice).unwrap();
        assert_eq!(r.kind, Move::Reflection);
        assert_eq!(r.point, vec![0.0, 0.0]);
        s.accept(r.point.clone(), sphere(&r.point)).unwrap();
        let e = s.propose(&lattice).unwrap();
        assert_eq!(e.kind, Move::Expansion);
        assert_eq!(e.point, vec![-0.5, -0.5]);
        s.accept(e.point.clone(), sphere(&e.point)).unwrap();
        assert!(s.is_idle());
        assert_eq!(s.best().point, vec![0.0, 0.0]);
        assert_eq!(s.vertices().len(), 3);
    }

    #[test]
    fn middle_reflection_replaces_worst() {
        let mut s = SimplexState::new(vec![v(&[0.0, 0.0], 0.0), v(&[1.0, 0.0], 2.0), v(&[0.0, 1.0], 3.0)]).unwrap();
        let r = s.propose(&free(2)).unwrap();
        assert_eq!(r.point, vec![1.0, -1.0]);
        s.accept(r.point.clone(), 1.0).unwrap();
        assert!(s.is_idle());
        let costs: Vec<f64> = s.vertices().iter().map(|v| v.cost).collect();
        assert_eq!(costs, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn better_expansion_replaces_worst() {
        let mut s = SimplexState::new(vec![v(&[0.0, 0.0], 1.0), v(&[1.0, 0.0], 2.0), v(&[0.0, 1.0], 3.0)]).unwrap();
        let lattice = free(2);
        let r = s.propose(&lattice).unwrap();
        s.accept(r.point, 0.5).unwrap();
        let e = s.propose(&lattice).unwrap();
        assert_eq!(e.point, vec![1.5, -2.0]);
        s.accept(e.point.clone(), 0.25).unwrap();
        assert_eq!(s.best().point, e.point);
    }

    #[test]
    fn failed_contraction_shrinks_one_vertex_at_a_time() {
        let mut s = SimplexState::new(vec![v(&[0.0, 0.0], 0.0), v(&[2.0, 0.0], 1.0), v(&[0.0, 2.0], 2.0)]).unwrap();
        let lattice = free(2);
        let r = s.propose(&lattice).unwrap();
        assert_eq!(r.point, vec![2.0, -2.0]);
        s.accept(r.point, 5.0).unwrap();
        let c = s.propose(&lattice).unwrap();
        assert_eq!(c.kind, Move::Contraction);
        assert_eq!(c.point, vec![0.5, 1.0]);
        s.accept(c.point, 2.0).unwrap();
        assert!(s.is_shrinking());
        let s1 = s.propose(&lattice).unwrap();
        assert_eq!((s1.kind, s1.point.clone()), (Move::Shrink, vec![1.0, 0.0]));
        s.accept(s1.point, 0.4).unwrap();
        let s2 = s.propose(&lattice).unwrap();
        assert_eq!(s2.point, vec![0.0, 1.0]);
        s.accept(s2.point, 0.3).unwrap();
        assert!(s.is_idle());
        let costs: Vec<f64> = s.vertices().iter().map(|v| v.cost).collect();
        assert_eq!(costs, vec![0.0, 0.3, 0.4]);
    }

    #[test]
    fn successful_contraction_replaces_worst() {
        let mut s = SimplexState::new(vec![v(&[0.0, 0.0], 0.0), v(&[2.0, 0.0], 1.0), v(&[0.0, 2.0], 2.0)]).unwrap();
        let lattice = free(2);
        let r = s.propose(&lattice).unwrap();
        s.accept(r.point, 5.0).unwrap();
        let c = s.propose(&lattice).unwrap();
        s.accept(c.point.clone(), 1.5).unwrap();
        assert!(s.is_idle());
        assert_eq!(s.vertices()[2].point, c.point);
    }

    #[test]
    fn outstanding_proposal_is_exclusive() {
        let mut s = SimplexState::new(vec![v(&[0.0], 0.0), v(&[1.0], 1.0)]).unwrap();
        s.propose(&free(1)).unwrap();
        assert!(s.propose(&free(1)).is_err());
        s.accept(vec![-1.0], 1.0).unwrap();
        assert!(s.accept(vec![0.0], 0.0).is_err());
        assert!(SimplexState::new(vec![v(&[0.0, 0.0], 0.0)]).is_err());
    }

    #[test]
    fn proposals_are_snapped_and_clamped() {
        let space = ParameterSpace::uniform(2, -5.0, 5.0, 12).unwrap();
        let mut s = SimplexState::new(vec![v(&[4.0, 4.0], 0.0), v(&[5.0, 4.5], 1.0), v(&[3.0, 3.0], 2.0)]).unwrap();
        let p = s.propose(&space).unwrap();
        assert_eq!(p.point, space.snap(&p.point).unwrap());
        assert!(space.contains(&p.point));
        assert!(p.raw[0] > 5.0);
    }

    #[test]
    fn reflection_is_an_involution() {
        let c = [0.3, -1.7, 2.25];
        let w = [1.5, 0.25, -3.0];
        assert_eq!(reflect(&c, &reflect(&c, &w)), w.to_vec());
    }

    #[test]
    fn shrink_divides_volume() {
        let pts = vec![vec![0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![1.0, 1.0, 4.0]];
        let shrunk: Vec<Vec<f64>> = std::iter::once(pts[0].clone())
            .chain(pts[1..].iter().map(|p| shrink_toward(&pts[0], p)))
            .collect();
        let ratio = simplex_volume(&shrunk) / simplex_volume(&pts);
        assert!((ratio - 0.125).abs() < 1e-12);
    }

    #[test]
    fn uniform_lattice_snaps_to_thousandths() {
        let l = UniformLattice {
            dim: 2,
            min: -2.0,
            max: 2.0,
            resolution: 1000.0,
        };
        assert_eq!(l.snap(&[0.12345, 7.0]), vec![0.123, 2.0]);
        assert_eq!(l.step(0), 0.001);
    }
}
