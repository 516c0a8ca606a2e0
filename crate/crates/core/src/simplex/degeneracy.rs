use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Lattice;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegeneracyConfig {
    pub enabled: bool,
    /// Number of recent simplex points fitted; `None` means `N + 1`.
    pub window: Option<usize>,
    pub r2_threshold: f64,
    /// Corrective offset in units of the largest grid step.
    pub corrective_multiplier: f64,
}

impl Default for DegeneracyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window: None,
            r2_threshold: 0.99,
            corrective_multiplier: 4.0,
        }
    }
}

impl DegeneracyConfig {
    pub fn window_for(&self, dim: usize) -> usize {
        self.window.unwrap_or(dim + 1).max(dim + 1)
    }
}

/// Total-least-squares hyperplane through a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperplane {
    /// Unit normal; all zeros when the points coincide.
    pub normal: Vec<f64>,
    pub centroid: Vec<f64>,
    /// Orthonormal in-plane directions.
    pub basis: Vec<Vec<f64>>,
    /// `1 - lambda_min / lambda_mean` of the point covariance: 1 for points on
    /// a hyperplane, 0 for an isotropic cloud.
    pub r2: f64,
}

pub fn fit_hyperplane(points: &[Vec<f64>]) -> Option<Hyperplane> {
    let n = points.first()?.len();
    if points.len() < 2 || n == 0 {
        return None;
    }
    let m = points.len() as f64;
    let centroid: Vec<f64> = (0..n).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / m).collect();
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for p in points {
        for r in 0..n {
            let dr = p[r] - centroid[r];
            for c in 0..n {
                cov[(r, c)] += dr * (p[c] - centroid[c]) / m;
            }
        }
    }
    let trace = cov.trace();
    if trace <= 0.0 {
        return Some(Hyperplane {
            normal: vec![0.0; n],
            centroid,
            basis: Vec::new(),
            r2: 1.0,
        });
    }
    let eig = SymmetricEigen::new(cov);
    let (min_idx, lambda_min) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("n >= 1");
    let column = |k: usize| -> Vec<f64> { eig.eigenvectors.column(k).iter().copied().collect() };
    let mut normal = column(min_idx);
    let pivot = normal
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    if pivot < 0.0 {
        normal.iter_mut().for_each(|v| *v = -*v);
    }
    let basis = (0..n).filter(|&k| k != min_idx).map(column).collect();
    let r2 = 1.0 - lambda_min.max(0.0) / (trace / n as f64);
    Some(Hyperplane {
        normal,
        centroid,
        basis,
        r2,
    })
}

/// Fits the last `window` points of `history`; returns the fit when it
/// reaches `threshold`. Needs at least two dimensions and a full window.
pub fn detect_degeneracy(history: &[Vec<f64>], window: usize, threshold: f64) -> Option<Hyperplane> {
    let dim = history.first()?.len();
    if dim < 2 || window < 2 || history.len() < window {
        return None;
    }
    fit_hyperplane(&history[history.len() - window..]).filter(|h| h.r2 >= threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corrective {
    /// `raw - best`, before clamping and snapping.
    pub offset: Vec<f64>,
    pub raw: Vec<f64>,
    pub point: Vec<f64>,
}

/// Point at `multiplier` grid steps from `best` along `normal`, on the side
/// that stays in the domain. A zero normal is replaced by a random direction.
pub fn corrective_vertex<R: Rng + ?Sized>(
    best: &[f64],
    normal: &[f64],
    lattice: &dyn Lattice,
    multiplier: f64,
    rng: &mut R,
) -> Corrective {
    let n = best.len();
    let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    let direction: Vec<f64> = if norm > 0.0 {
        normal.iter().map(|v| v / norm).collect()
    } else {
        random_unit(n, rng)
    };
    let distance = (0..n).map(|i| lattice.step(i)).fold(0.0, f64::max) * multiplier;
    let place = |sign: f64| -> Vec<f64> { best.iter().zip(&direction).map(|(b, d)| b + sign * distance * d).collect() };
    let mut raw = place(1.0);
    if !lattice.contains(&raw) {
        let flipped = place(-1.0);
        if lattice.contains(&flipped) {
            raw = flipped;
        }
    }
    let offset = raw.iter().zip(best).map(|(r, b)| r - b).collect();
    let point = lattice.snap(&raw);
    Corrective { offset, raw, point }
}

fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
