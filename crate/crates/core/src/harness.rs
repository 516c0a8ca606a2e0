//! Repeated independent runs with per-run records, aggregate statistics and
//! pairwise comparison tables.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{run, RunConfig, Termination};
use crate::error::{Error, Result};
use crate::problems::Problem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Reached the problem's target cost.
    pub converged: bool,
    pub generations: usize,
    /// Evaluations actually performed.
    pub evaluations: u64,
    pub best_cost: f64,
    pub termination: Option<Termination>,
    /// Set when the run failed; the other fields are then meaningless.
    pub error: Option<String>,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub runs: usize,
    pub completed: usize,
    /// Percentage of completed runs that converged.
    pub convergence_pct: f64,
    pub mean_generations: f64,
    pub mean_evaluations: f64,
    pub mean_best_cost: f64,
}

/// Mean of `values` summed in sorted order, so that the result does not
/// depend on the order of the runs.
fn mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn aggregate(records: &[RunRecord]) -> Aggregates {
    let done: Vec<&RunRecord> = records.iter().filter(|r| r.completed()).collect();
    let converged = done.iter().filter(|r| r.converged).count();
    Aggregates {
        runs: records.len(),
        completed: done.len(),
        convergence_pct: if done.is_empty() {
            f64::NAN
        } else {
            100.0 * converged as f64 / done.len() as f64
        },
        mean_generations: mean(done.iter().map(|r| r.generations as f64).collect()),
        mean_evaluations: mean(done.iter().map(|r| r.evaluations as f64).collect()),
        mean_best_cost: mean(done.iter().map(|r| r.best_cost).collect()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// Optimiser label, e.g. `hybrid` or `ga`.
    pub label: String,
    pub problem: String,
    pub records: Vec<RunRecord>,
    pub aggregates: Aggregates,
}

impl FoldReport {
    pub fn new(label: impl Into<String>, problem: impl Into<String>, records: Vec<RunRecord>) -> Self {
        let aggregates = aggregate(&records);
        Self {
            label: label.into(),
            problem: problem.into(),
            records,
            aggregates,
        }
    }

    /// Aggregates equal those recomputed from the records.
    pub fn is_consistent(&self) -> bool {
        let again = aggregate(&self.records);
        let same = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        again.runs == self.aggregates.runs
            && again.completed == self.aggregates.completed
            && same(again.convergence_pct, self.aggregates.convergence_pct)
            && same(again.mean_generations, self.aggregates.mean_generations)
            && same(again.mean_evaluations, self.aggregates.mean_evaluations)
            && same(again.mean_best_cost, self.aggregates.mean_best_cost)
    }
}

/// `k` distinct seeds derived from `base`.
pub fn fold_seeds(base: u64, k: usize) -> Vec<u64> {
    (0..k as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Runs `config` once per seed on `problem`, with at most `jobs` runs in flight.
pub fn run_kfold(
    label: &str,
    problem_label: &str,
    config: &RunConfig,
    problem: &Problem,
    seeds: &[u64],
    jobs: usize,
) -> Result<FoldReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("k-fold needs at least one run".into()));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig("k-fold seeds must be distinct".into()));
    }
    config.validate(problem.space.as_ref())?;
    let target = problem.target.as_ref().map(|t| t.cost);
    let one = |&seed: &u64| -> RunRecord {
        let config = RunConfig {
            seed,
            checkpoint: None,
            ..config.clone()
        };
        match run(&config, Some(problem)) {
            Ok(result) => RunRecord {
                seed,
                converged: target.is_some_and(|t| result.best_cost() <= t),
                generations: result.generations.len(),
                evaluations: result.evaluations(),
                best_cost: result.best_cost(),
                termination: Some(result.termination),
                error: None,
            },
            Err(e) => {
                log::warn!("run with seed {seed} failed: {e}");
                RunRecord {
                    seed,
                    converged: false,
                    generations: 0,
                    evaluations: 0,
                    best_cost: f64::NAN,
                    termination: None,
                    error: Some(e.to_string()),
                }
            }
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))?;
    let records: Vec<RunRecord> = pool.install(|| seeds.par_iter().map(one).collect());
    let failed = records.iter().filter(|r| !r.completed()).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed; aggregates cover completed runs only", records.len());
    }
    Ok(FoldReport::new(label, problem_label, records))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Winner {
    First,
    Second,
    Tie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub first: f64,
    pub second: f64,
    pub winner: Winner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub problem: String,
    pub first: String,
    pub second: String,
    pub rows: Vec<MetricRow>,
}

impl Comparison {
    pub fn wins(&self, who: Winner) -> usize {
        self.rows.iter().filter(|r| r.winner == who).count()
    }
}

/// Per-metric winners: higher convergence, fewer mean evaluations and lower
/// mean best cost win; exact ties have no winner.
pub fn compare(first: &FoldReport, second: &FoldReport) -> Result<Comparison> {
    if first.problem != second.problem {
        return Err(Error::Contract(format!(
            "cannot compare runs on `{}` with runs on `{}`",
            first.problem, second.problem
        )));
    }
    let row = |metric: &str, a: f64, b: f64, lower_wins: bool| {
        let winner = if a == b || (a.is_nan() && b.is_nan()) {
            Winner::Tie
        } else if b.is_nan() || (!a.is_nan() && ((a < b) == lower_wins)) {
            Winner::First
        } else {
            Winner::Second
        };
        MetricRow {
            metric: metric.into(),
            first: a,
            second: b,
            winner,
        }
    };
    let (a, b) = (&first.aggregates, &second.aggregates);
    Ok(Comparison {
        problem: first.problem.clone(),
        first: first.label.clone(),
        second: second.label.clone(),
        rows: vec![
            row("convergence_pct", a.convergence_pct, b.convergence_pct, false),
            row("mean_evaluations", a.mean_evaluations, b.mean_evaluations, true),
            row("mean_best_cost", a.mean_best_cost, b.mean_best_cost, true),
        ],
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Contract(format!("csv output failed: {e}"))
}

pub const RUN_COLUMNS: [&str; 9] = [
    "label",
    "problem",
    "seed",
    "converged",
    "generations",
    "evaluations",
    "best_cost",
    "termination",
    "error",
];

/// One row per run.
pub fn write_runs_csv<W: Write>(reports: &[&FoldReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_COLUMNS).map_err(csv_error)?;
    for report in reports {
        for r in &report.records {
            w.write_record([
                report.label.clone(),
                report.problem.clone(),
                r.seed.to_string(),
                r.converged.to_string(),
                r.generations.to_string(),
                r.evaluations.to_string(),
                format!("{:e}", r.best_cost),
                r.termination.map(|t| t.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| Error::Contract(format!("csv output failed: {e}")))
}

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "label",
    "problem",
    "runs",
    "completed",
    "convergence_pct",
    "mean_generations",
    "mean_evaluations",
    "mean_best_cost",
];

/// One row per report.
pub fn write_summary_csv<W: Write>(reports: &[&FoldReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS).map_err(csv_error)?;
    for r in reports {
        let a = &r.aggregates;
        w.write_record([
            r.label.clone(),
            r.problem.clone(),
            a.runs.to_string(),
            a.completed.to_string(),
            format!("{}", a.convergence_pct),
            format!("{}", a.mean_generations),
            format!("{}", a.mean_evaluations),
            format!("{:e}", a.mean_best_cost),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Contract(format!("csv output failed: {e}")))
}

/// Aligned plain-text table of the summary rows.
pub fn summary_text(reports: &[&FoldReport]) -> String {
    let mut rows: Vec<Vec<String>> = vec![SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect()];
    for r in reports {
        let a = &r.aggregates;
        rows.push(vec![
            r.label.clone(),
            r.problem.clone(),
            a.runs.to_string(),
            a.completed.to_string(),
            format!("{:.1}", a.convergence_pct),
            format!("{:.2}", a.mean_generations),
            format!("{:.2}", a.mean_evaluations),
            format!("{:.4e}", a.mean_best_cost),
        ]);
    }
    align(&rows)
}

/// Aligned text of a comparison, with a final wins line.
pub fn comparison_text(c: &Comparison) -> String {
    let mark = |w: Winner, who: Winner| match (w, who) {
        (Winner::Tie, _) => "=",
        (a, b) if a == b => "*",
        _ => "",
    };
    let mut rows = vec![vec!["metric".to_string(), c.first.clone(), c.second.clone()]];
    for r in &c.rows {
        rows.push(vec![
            r.metric.clone(),
            format!("{:.6e}{}", r.first, mark(r.winner, Winner::First)),
            format!("{:.6e}{}", r.second, mark(r.winner, Winner::Second)),
        ]);
    }
    rows.push(vec![
        "wins".into(),
        c.wins(Winner::First).to_string(),
        c.wins(Winner::Second).to_string(),
    ]);
    format!("{}\n{}", c.problem, align(&rows))
}

/// Left-aligned columns separated by two spaces.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{Benchmark, ProblemSpec};

    fn record(seed: u64, converged: bool, evaluations: u64, best_cost: f64) -> RunRecord {
        RunRecord {
            seed,
            converged,
            generations: 3,
            evaluations,
            best_cost,
            termination: Some(Termination::GenerationCap),
            error: None,
        }
    }

    #[test]
    fn aggregates_are_means_of_records() {
        let records = vec![record(1, true, 100, 0.0), record(2, false, 300, 0.3), record(3, true, 200, 0.6)];
        let a = aggregate(&records);
        assert_eq!(a.runs, 3);
        assert!((a.convergence_pct - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.mean_evaluations, 200.0);
        assert!((a.mean_best_cost - 0.3).abs() < 1e-15);
    }

    #[test]
    fn failed_runs_are_excluded() {
        let mut bad = record(4, false, 0, f64::NAN);
        bad.error = Some("boom".into());
        let a = aggregate(&[record(1, true, 100, 1.0), bad]);
        assert_eq!((a.runs, a.completed), (2, 1));
        assert_eq!(a.mean_best_cost, 1.0);
        assert_eq!(a.convergence_pct, 100.0);
    }

    #[test]
    fn order_does_not_change_aggregates() {
        let records: Vec<RunRecord> = (0..50)
            .map(|i| record(i, i % 3 == 0, 100 + i, 0.1 * i as f64 + 1e-7 / (i + 1) as f64))
            .collect();
        let mut shuffled = records.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        assert_eq!(aggregate(&records), aggregate(&shuffled));
    }

    #[test]
    fn comparison_winners_and_ties() {
        let a = FoldReport::new("ga", "booth", vec![record(1, false, 500, 0.5)]);
        let b = FoldReport::new("hybrid", "booth", vec![record(1, true, 200, 0.1)]);
        let c = compare(&a, &b).unwrap();
        assert_eq!(c.wins(Winner::Second), 3);
        let tie = compare(&a, &a).unwrap();
        assert_eq!(tie.wins(Winner::Tie), 3);
        let other = FoldReport::new("ga", "beale", vec![record(1, false, 500, 0.5)]);
        assert!(compare(&a, &other).is_err());
        assert!(comparison_text(&c).contains("wins"));
    }

    #[test]
    fn identical_seeds_give_identical_records() {
        let problem = ProblemSpec::benchmark(Benchmark::Sphere, 2).build().unwrap();
        let config = RunConfig::hybrid();
        let a = run_kfold("hybrid", "sphere", &config, &problem, &[5], 1).unwrap();
        let b = run_kfold("hybrid", "sphere", &config, &problem, &[5], 2).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.records[0].converged);
        assert!(run_kfold("hybrid", "sphere", &config, &problem, &[5, 5], 1).is_err());
        assert!(run_kfold("hybrid", "sphere", &config, &problem, &[], 1).is_err());
    }

    #[test]
    fn csv_and_text_outputs() {
        let r = FoldReport::new("ga", "booth", vec![record(1, false, 500, 0.5), record(2, true, 50, 0.0)]);
        let mut runs = Vec::new();
        write_runs_csv(&[&r], &mut runs).unwrap();
        let text = String::from_utf8(runs).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("label,problem,seed,converged"));
        let mut summary = Vec::new();
        write_summary_csv(&[&r], &mut summary).unwrap();
        assert!(String::from_utf8(summary).unwrap().contains("ga,booth,2,2,50,3,275,2.5e-1"));
        assert!(summary_text(&[&r]).lines().count() == 2);
    }
}
