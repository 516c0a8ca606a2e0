use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lgp::LgpProgram;

/// Cost assigned when the state leaves the finite range.
pub const DIVERGED_COST: f64 = 1e30;

/// Damped Landau oscillator
/// `a1' = (1 - r^2) a1 - a2`, `a2' = (1 - r^2) a2 + a1 + b`
/// with cost `J = J_a + gamma J_b`, `J_a = <a1^2 + a2^2>`, `J_b = <b^2>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandauConfig {
    pub gamma: f64,
    /// Integration steps per period `T = 2 pi`.
    pub steps_per_period: usize,
    /// Horizon in periods.
    pub periods: f64,
    pub initial_conditions: Vec<[f64; 2]>,
    /// Actuation clamp `|b| <= b_max`.
    pub b_max: f64,
}

impl Default for LandauConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            steps_per_period: 200,
            periods: 20.0,
            initial_conditions: vec![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
            b_max: 25.0,
        }
    }
}

impl LandauConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_period == 0 || !(self.periods > 0.0) || !(self.b_max > 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(
                "Landau steps_per_period, periods and b_max must be positive and gamma non-negative".into(),
            ));
        }
        if self.initial_conditions.is_empty() {
            return Err(Error::InvalidConfig("Landau task needs at least one initial condition".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        2.0 * PI / self.steps_per_period as f64
    }

    pub fn t_end(&self) -> f64 {
        2.0 * PI * self.periods
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub ja: f64,
    pub jb: f64,
    pub final_state: [f64; 2],
    pub diverged: bool,
    /// States at every grid time, when requested.
    pub trajectory: Vec<[f64; 2]>,
}

/// Fixed-step RK4 integration from `initial` to `t_end`; the means are
/// trapezoidal averages over the integration grid.
pub fn simulate(
    control: &mut dyn FnMut(f64, f64) -> f64,
    initial: [f64; 2],
    config: &LandauConfig,
    record: bool,
) -> Simulation {
    let dt = config.dt();
    let steps = (config.t_end() / dt).round() as usize;
    let b_max = config.b_max;
    let mut actuation = |a: [f64; 2]| {
        let b = control(a[0], a[1]);
        if b.is_nan() {
            0.0
        } else {
            b.clamp(-b_max, b_max)
        }
    };
    let field = |a: [f64; 2], b: f64| {
        let g = 1.0 - a[0] * a[0] - a[1] * a[1];
        [g * a[0] - a[1], g * a[1] + a[0] + b]
    };
    let mut a = initial;
    let mut trajectory = Vec::new();
    let mut b = actuation(a);
    let (mut sum_a, mut sum_b) = (0.0, 0.0);
    let mut diverged = false;
    for k in 0..=steps {
        let weight = if k == 0 || k == steps { 0.5 } else { 1.0 };
        sum_a += weight * (a[0] * a[0] + a[1] * a[1]);
        sum_b += weight * b * b;
        if record {
            trajectory.push(a);
        }
        if k == steps {
            break;
        }
        let k1 = field(a, b);
        let a2 = [a[0] + 0.5 * dt * k1[0], a[1] + 0.5 * dt * k1[1]];
        let k2 = field(a2, actuation(a2));
        let a3 = [a[0] + 0.5 * dt * k2[0], a[1] + 0.5 * dt * k2[1]];
        let k3 = field(a3, actuation(a3));
        let a4 = [a[0] + dt * k3[0], a[1] + dt * k3[1]];
        let k4 = field(a4, actuation(a4));
        for i in 0..2 {
            a[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !(a[0].is_finite() && a[1].is_finite()) || a[0].abs() > 1e10 || a[1].abs() > 1e10 {
            diverged = true;
            break;
        }
        b = actuation(a);
    }
    // Trapezoid weights sum to `steps`.
    let norm = steps as f64;
    Simulation {
        ja: sum_a / norm,
        jb: sum_b / norm,
        final_state: a,
        diverged,
        trajectory,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandauCost {
    pub cost: f64,
    pub ja: f64,
    pub jb: f64,
    pub diverged: bool,
}

/// Cost of a control law averaged over the configured initial conditions.
pub fn landau_cost_fn(control: &mut dyn FnMut(f64, f64) -> f64, config: &LandauConfig) -> LandauCost {
    let n = config.initial_conditions.len() as f64;
    let (mut ja, mut jb) = (0.0, 0.0);
    for &ic in &config.initial_conditions {
        let sim = simulate(control, ic, config, false);
        if sim.diverged {
            return LandauCost {
                cost: DIVERGED_COST,
                ja: f64::INFINITY,
                jb: f64::INFINITY,
                diverged: true,
            };
        }
        ja += sim.ja / n;
        jb += sim.jb / n;
    }
    LandauCost {
        cost: ja + config.gamma * jb,
        ja,
        jb,
        diverged: false,
    }
}

/// Cost of a program reading sensors `(a1, a2)` and writing `b` to its first output.
pub fn landau_cost(program: &LgpProgram, config: &LandauConfig) -> Result<LandauCost> {
    let layout = &program.layout;
    if layout.sensors != 2 || layout.time_functions != 0 {
        return Err(Error::Contract("Landau control laws read exactly two sensors (a1, a2)".into()));
    }
    let mut bank = Vec::with_capacity(layout.readable_count());
    let mut control = |a1: f64, a2: f64| {
        program.eval_with(&[a1, a2], &[], &mut bank);
        bank[0]
    };
    Ok(landau_cost_fn(&mut control, config))
}
