use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{Dimension, ParameterSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    Ackley,
    Beale,
    Booth,
    Bukin6,
    Easom,
    Eggholder,
    GoldsteinPrice,
    Himmelblau,
    HolderTable,
    Levi13,
    Matyas,
    Sphere,
    Rastrigin,
    Rosenbrock,
    StyblinskiTang,
}

impl Benchmark {
    pub const ALL: [Benchmark; 15] = [
        Benchmark::Ackley,
        Benchmark::Beale,
        Benchmark::Booth,
        Benchmark::Bukin6,
        Benchmark::Easom,
        Benchmark::Eggholder,
        Benchmark::GoldsteinPrice,
        Benchmark::Himmelblau,
        Benchmark::HolderTable,
        Benchmark::Levi13,
        Benchmark::Matyas,
        Benchmark::Sphere,
        Benchmark::Rastrigin,
        Benchmark::Rosenbrock,
        Benchmark::StyblinskiTang,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Ackley => "ackley",
            Benchmark::Beale => "beale",
            Benchmark::Booth => "booth",
            Benchmark::Bukin6 => "bukin6",
            Benchmark::Easom => "easom",
            Benchmark::Eggholder => "eggholder",
            Benchmark::GoldsteinPrice => "goldstein-price",
            Benchmark::Himmelblau => "himmelblau",
            Benchmark::HolderTable => "holder-table",
            Benchmark::Levi13 => "levi13",
            Benchmark::Matyas => "matyas",
            Benchmark::Sphere => "sphere",
            Benchmark::Rastrigin => "rastrigin",
            Benchmark::Rosenbrock => "rosenbrock",
            Benchmark::StyblinskiTang => "styblinski-tang",
        }
    }

    /// Accepts any dimension rather than exactly two.
    pub fn is_scalable(self) -> bool {
        matches!(
            self,
            Benchmark::Ackley | Benchmark::Sphere | Benchmark::Rastrigin | Benchmark::Rosenbrock | Benchmark::StyblinskiTang
        )
    }

    pub fn check_dim(self, dim: usize) -> Result<()> {
        let ok = if self.is_scalable() { dim >= 1 } else { dim == 2 };
        let ok = ok && !(self == Benchmark::Rosenbrock && dim < 2);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{} is not defined in {dim} dimensions", self.name())))
        }
    }

    /// Bounds `(min, max)` of dimension `i`.
    pub fn bounds(self, i: usize) -> (f64, f64) {
        match self {
            Benchmark::Ackley | Benchmark::Rosenbrock | Benchmark::StyblinskiTang => (-5.0, 5.0),
            Benchmark::Beale => (-4.5, 4.5),
            Benchmark::Booth | Benchmark::HolderTable | Benchmark::Levi13 | Benchmark::Matyas => (-10.0, 10.0),
            Benchmark::Bukin6 if i == 0 => (-15.0, -5.0),
            Benchmark::Bukin6 => (-3.0, 3.0),
            Benchmark::Easom => (-100.0, 100.0),
            Benchmark::Eggholder => (-512.0, 512.0),
            Benchmark::GoldsteinPrice => (-2.0, 2.0),
            Benchmark::Himmelblau => (-6.0, 6.0),
            Benchmark::Sphere => (0.0, 2.0),
            Benchmark::Rastrigin => (-5.12, 5.12),
        }
    }

    pub fn space(self, dim: usize, bits: u32) -> Result<ParameterSpace> {
        self.check_dim(dim)?;
        ParameterSpace::new(
            (0..dim)
                .map(|i| {
                    let (lo, hi) = self.bounds(i);
                    Dimension {
                        name: Some(format!("x{}", i + 1)),
                        ..Dimension::new(lo, hi, bits)
                    }
                })
                .collect(),
        )
    }

    /// Evaluates the function; points outside the domain are rejected.
    pub fn eval(self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        for (i, &v) in x.iter().enumerate() {
            let (lo, hi) = self.bounds(i);
            if !(v >= lo && v <= hi) {
                return Err(Error::OutOfDomain(format!("{}: x{} = {v}", self.name(), i + 1)));
            }
        }
        Ok(self.eval_unchecked(x))
    }

    pub fn eval_unchecked(self, x: &[f64]) -> f64 {
        let n = x.len() as f64;
        match self {
            Benchmark::Ackley => {
                let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
                let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
                -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + E + 20.0
            }
            Benchmark::Beale => {
                let (a, b) = (x[0], x[1]);
                (1.5 - a + a * b).powi(2) + (2.25 - a + a * b * b).powi(2) + (2.625 - a + a * b.powi(3)).powi(2)
            }
            Benchmark::Booth => (x[0] + 2.0 * x[1] - 7.0).powi(2) + (2.0 * x[0] + x[1] - 5.0).powi(2),
            Benchmark::Bukin6 => 100.0 * (x[1] - 0.01 * x[0] * x[0]).abs().sqrt() + 0.01 * (x[0] + 10.0).abs(),
            Benchmark::Easom => {
                -x[0].cos() * x[1].cos() * (-((x[0] - PI).powi(2) + (x[1] - PI).powi(2))).exp()
            }
            Benchmark::Eggholder => {
                let (a, b) = (x[0], x[1] + 47.0);
                -b * (a / 2.0 + b).abs().sqrt().sin() - a * (a - b).abs().sqrt().sin()
            }
            Benchmark::GoldsteinPrice => {
                let (a, b) = (x[0], x[1]);
                let p = 1.0
                    + (a + b + 1.0).powi(2) * (19.0 - 14.0 * a + 3.0 * a * a - 14.0 * b + 6.0 * a * b + 3.0 * b * b);
                let q = 30.0
                    + (2.0 * a - 3.0 * b).powi(2)
                        * (18.0 - 32.0 * a + 12.0 * a * a + 48.0 * b - 36.0 * a * b + 27.0 * b * b);
                p * q
            }
            Benchmark::Himmelblau => (x[0] * x[0] + x[1] - 11.0).powi(2) + (x[0] + x[1] * x[1] - 7.0).powi(2),
            Benchmark::HolderTable => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                -(x[0].sin() * x[1].cos() * (1.0 - r / PI).abs().exp()).abs()
            }
            Benchmark::Levi13 => {
                let (a, b) = (x[0], x[1]);
                (3.0 * PI * a).sin().powi(2)
                    + (a - 1.0).powi(2) * (1.0 + (3.0 * PI * b).sin().powi(2))
                    + (b - 1.0).powi(2) * (1.0 + (2.0 * PI * b).sin().powi(2))
            }
            Benchmark::Matyas => 0.26 * (x[0] * x[0] + x[1] * x[1]) - 0.48 * x[0] * x[1],
            Benchmark::Sphere => x.iter().map(|v| v * v).sum(),
            Benchmark::Rastrigin => {
                10.0 * n + x.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
            }
            Benchmark::Rosenbrock => x
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (w[0] - 1.0).powi(2))
                .sum(),
            Benchmark::StyblinskiTang => 0.5 * x.iter().map(|v| v.powi(4) - 16.0 * v * v + 5.0 * v).sum::<f64>(),
        }
    }

    /// Analytic global minimisers in `dim` dimensions with the minimum value.
    pub fn optima(self, dim: usize) -> (Vec<Vec<f64>>, f64) {
        const ST: f64 = -2.903_534_027_771_177;
        match self {
            Benchmark::Ackley | Benchmark::Sphere | Benchmark::Rastrigin => (vec![vec![0.0; dim]], 0.0),
            Benchmark::Rosenbrock => (vec![vec![1.0; dim]], 0.0),
            Benchmark::StyblinskiTang => (vec![vec![ST; dim]], -39.166_165_703_771_42 * dim as f64),
            Benchmark::Beale => (vec![vec![3.0, 0.5]], 0.0),
            Benchmark::Booth => (vec![vec![1.0, 3.0]], 0.0),
            Benchmark::Bukin6 => (vec![vec![-10.0, 1.0]], 0.0),
            Benchmark::Easom => (vec![vec![PI, PI]], -1.0),
            Benchmark::Eggholder => (vec![vec![512.0, 404.231_805_113_757_8]], -959.640_662_720_850_8),
            Benchmark::GoldsteinPrice => (vec![vec![0.0, -1.0]], 3.0),
            Benchmark::Himmelblau => (
                vec![
                    vec![3.0, 2.0],
                    vec![-2.805_118_086_952_745, 3.131_312_518_250_573],
                    vec![-3.779_310_253_377_747, -3.283_185_991_286_170],
                    vec![3.584_428_340_330_492, -1.848_126_526_964_404],
                ],
                0.0,
            ),
            Benchmark::HolderTable => {
                let (a, b) = (8.055_023_475_736_563, 9.664_590_019_241_273);
                (
                    vec![vec![a, b], vec![-a, b], vec![a, -b], vec![-a, -b]],
                    -19.208_502_567_886_73,
                )
            }
            Benchmark::Levi13 => (vec![vec![1.0, 1.0]], 0.0),
            Benchmark::Matyas => (vec![vec![0.0, 0.0]], 0.0),
        }
    }

    /// Lowest cost over the grid of `space` and one grid point attaining it.
    ///
    /// Two-dimensional grids are searched exhaustively. Larger grids are
    /// searched by coordinate descent with full one-dimensional scans,
    /// starting from the grid point nearest each analytic minimiser; this is
    /// exact for the separable functions and for optima lying on the grid.
    pub fn grid_minimum(self, space: &ParameterSpace) -> Result<(Vec<f64>, f64)> {
        self.check_dim(space.len())?;
        let values: Vec<Vec<f64>> = space
            .dims()
            .iter()
            .map(|d| (0..=d.levels()).map(|k| d.value_at(k)).collect())
            .collect();
        if space.len() == 2 && values[0].len() * values[1].len() <= 1 << 26 {
            let mut best = (vec![values[0][0], values[1][0]], f64::INFINITY);
            let mut x = [0.0; 2];
            for &a in &values[0] {
                x[0] = a;
                for &b in &values[1] {
                    x[1] = b;
                    let f = self.eval_unchecked(&x);
                    if f < best.1 {
                        best = (x.to_vec(), f);
                    }
                }
            }
            return Ok(best);
        }
        let (starts, _) = self.optima(space.len());
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in starts {
            let mut x = space.snap(&start)?;
            let mut fx = self.eval_unchecked(&x);
            loop {
                let mut improved = false;
                for (i, column) in values.iter().enumerate() {
                    let mut y = x.clone();
                    for &v in column {
                        y[i] = v;
                        let f = self.eval_unchecked(&y);
                        if f < fx {
                            fx = f;
                            x[i] = v;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            if best.as_ref().is_none_or(|(_, b)| fx < *b) {
                best = Some((x, fx));
            }
        }
        Ok(best.expect("every benchmark has an analytic minimiser"))
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let alias = match norm.as_str() {
            "bukin" | "bukinn6" => "bukin6",
            "levi" | "levin13" => "levi13",
            "himmelblaus" => "himmelblau",
            "holder" => "holdertable",
            other => other,
        };
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name().replace('-', "") == alias)
            .ok_or_else(|| Error::UnknownBenchmark(s.to_string()))
    }
}
