//! `sweep`: grids of training runs and long-format plot data.
//!
//! Runs are independent and execute on a worker pool; a failed run is
//! recorded and the rest continue. Output order follows the grid, never the
//! completion order, so results do not depend on `--jobs`.

use fedsim_core::fl_sim::{
    Algorithm, ExperimentConfig, ExperimentResult, Partition, PlanPolicy, RoundTime,
};
use rayon::prelude::*;
use serde::Serialize;

use super::solve::perf_problem;
use super::train::{self, Mnist};
use crate::config::{RunConfig, SweepKind};
use crate::error::{CliError, CliResult};

pub const ENERGY_GRID: &str = "energy_grid";
pub const DEADLINE: &str = "deadline";
pub const LABEL_SKEW: &str = "label_skew";

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub id: String,
    pub figure: &'static str,
    pub series: String,
    pub x: Option<f64>,
    pub seed: u64,
    pub experiment: ExperimentConfig,
}

pub struct RunOutcome {
    pub spec: RunSpec,
    pub result: Result<ExperimentResult, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunStatus {
    pub run_id: String,
    pub figure: String,
    pub series: String,
    pub x: Option<f64>,
    pub seed: u64,
    pub status: String,
    pub error: String,
    pub rounds: Option<usize>,
    pub final_test_accuracy: Option<f64>,
    pub mean_energy_j: Option<f64>,
    pub fallback_rounds: Option<usize>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PlotRow {
    pub figure: String,
    pub series: String,
    pub x: Option<f64>,
    pub metric: String,
    /// Mean over the runs that succeeded.
    pub y: f64,
    pub std: f64,
    pub n: usize,
}

fn spec(
    figure: &'static str,
    series: String,
    x: Option<f64>,
    seed: u64,
    experiment: ExperimentConfig,
) -> RunSpec {
    let xs = x.map_or(String::new(), |v| format!("-x{v}"));
    RunSpec {
        id: format!("{figure}-{series}{xs}-seed{seed}"),
        figure,
        series,
        x,
        seed,
        experiment: ExperimentConfig { seed, ..experiment },
    }
}

fn seeds(cfg: &RunConfig) -> impl Iterator<Item = u64> + '_ {
    (0..cfg.sweep.seeds as u64).map(move |k| cfg.seed.wrapping_add(k))
}

/// Outage target by round time, energy-minimizing plans.
fn energy_grid(cfg: &RunConfig) -> Vec<RunSpec> {
    let base = cfg.experiment();
    let mut out = Vec::new();
    for &p in &cfg.sweep.outage_targets {
        for &t in &cfg.sweep.round_times {
            for s in seeds(cfg) {
                out.push(spec(
                    ENERGY_GRID,
                    format!("p_out={p}"),
                    Some(t),
                    s,
                    ExperimentConfig {
                        policy: PlanPolicy::EnergyMin {
                            outage_targets: vec![p],
                        },
                        round_time: RoundTime::Fixed(t),
                        ..base.clone()
                    },
                ));
            }
        }
    }
    out
}

/// Round deadline sweep per transmit power, plus the optimized deadline.
fn deadline_sweep(cfg: &RunConfig) -> Vec<RunSpec> {
    let base = cfg.experiment();
    let mut out = Vec::new();
    for &power in &cfg.sweep.powers {
        let policy = PlanPolicy::PerfMax {
            energy_budget: cfg.train.energy_budget,
            power,
        };
        for s in seeds(cfg) {
            for &t in &cfg.sweep.deadlines {
                out.push(spec(
                    DEADLINE,
                    format!("P={power}"),
                    Some(t),
                    s,
                    ExperimentConfig {
                        policy: policy.clone(),
                        round_time: RoundTime::Fixed(t),
                        ..base.clone()
                    },
                ));
            }
            out.push(spec(
                DEADLINE,
                format!("P={power}-optimized"),
                None,
                s,
                ExperimentConfig {
                    policy: policy.clone(),
                    round_time: RoundTime::Optimize,
                    ..base.clone()
                },
            ));
        }
    }
    out
}

/// Label-skewed data: stochastic sign for each `b` against full power and an
/// error-free channel with plain signs.
fn label_skew(cfg: &RunConfig) -> Vec<RunSpec> {
    let base = ExperimentConfig {
        partition: Partition::ByLabel,
        ..cfg.experiment()
    };
    let mut out = Vec::new();
    for s in seeds(cfg) {
        for &b in &cfg.sweep.b_values {
            out.push(spec(
                LABEL_SKEW,
                "stochastic_sign".into(),
                Some(b),
                s,
                ExperimentConfig {
                    algorithm: Algorithm::StochasticSign,
                    policy: PlanPolicy::FromB {
                        refresh: cfg.train.refresh,
                    },
                    b: Some(b),
                    ..base.clone()
                },
            ));
        }
        for (series, policy) in [
            ("full_power", PlanPolicy::FullPower),
            ("ideal_channel", PlanPolicy::IdealChannel),
        ] {
            out.push(spec(
                LABEL_SKEW,
                series.into(),
                None,
                s,
                ExperimentConfig {
                    algorithm: Algorithm::SignSgd,
                    policy,
                    b: None,
                    ..base.clone()
                },
            ));
        }
    }
    out
}

pub fn grid(cfg: &RunConfig) -> Vec<RunSpec> {
    match cfg.sweep.kind {
        SweepKind::EnergyGrid => energy_grid(cfg),
        SweepKind::DeadlineSweep => deadline_sweep(cfg),
        SweepKind::LabelSkew => label_skew(cfg),
        SweepKind::All => {
            let mut v = energy_grid(cfg);
            v.extend(deadline_sweep(cfg));
            v.extend(label_skew(cfg));
            v
        }
    }
}

/// Runs every spec on a pool of `jobs` threads, in grid order.
pub fn execute(specs: Vec<RunSpec>, data: &Mnist, jobs: usize) -> CliResult<Vec<RunOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        specs
            .into_par_iter()
            .map(|spec| {
                let result = train::run(&spec.experiment, data).map_err(|e| e.to_string());
                RunOutcome { spec, result }
            })
            .collect()
    }))
}

pub fn status_rows(outcomes: &[RunOutcome]) -> Vec<RunStatus> {
    outcomes
        .iter()
        .map(|o| {
            let s = &o.spec;
            let summary = o.result.as_ref().ok().map(|r| &r.summary);
            RunStatus {
                run_id: s.id.clone(),
                figure: s.figure.to_string(),
                series: s.series.clone(),
                x: s.x,
                seed: s.seed,
                status: if o.result.is_ok() { "ok" } else { "failed" }.into(),
                error: o.result.as_ref().err().cloned().unwrap_or_default(),
                rounds: summary.map(|m| m.rounds),
                final_test_accuracy: summary.map(|m| m.final_test_accuracy),
                mean_energy_j: summary.map(|m| m.mean_energy_per_worker),
                fallback_rounds: summary.map(|m| m.fallback_rounds_per_worker.iter().sum()),
            }
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Seed-averaged metrics per (figure, series, x), in first-seen order.
/// The deadline figure also gets the analytic convergence proxy per power.
pub fn plot_rows(cfg: &RunConfig, outcomes: &[RunOutcome]) -> Vec<PlotRow> {
    type Key = (String, String, Option<u64>);
    let mut keys: Vec<(Key, Option<f64>)> = Vec::new();
    for o in outcomes {
        let k = (
            o.spec.figure.to_string(),
            o.spec.series.clone(),
            o.spec.x.map(f64::to_bits),
        );
        if !keys.iter().any(|(kk, _)| *kk == k) {
            keys.push((k, o.spec.x));
        }
    }
    let metrics: [(&str, fn(&ExperimentResult) -> f64); 4] = [
        ("test_accuracy", |r| r.summary.final_test_accuracy),
        ("test_loss", |r| r.summary.final_test_loss),
        ("mean_energy_j", |r| r.summary.mean_energy_per_worker),
        ("round_time_s", |r| r.summary.round_time),
    ];
    let mut rows = Vec::new();
    for ((figure, series, xbits), x) in keys {
        let ok: Vec<&ExperimentResult> = outcomes
            .iter()
            .filter(|o| {
                o.spec.figure == figure
                    && o.spec.series == series
                    && o.spec.x.map(f64::to_bits) == xbits
            })
            .filter_map(|o| o.result.as_ref().ok())
            .collect();
        if ok.is_empty() {
            continue;
        }
        for (name, f) in metrics {
            let vals: Vec<f64> = ok.iter().map(|r| f(r)).collect();
            let (y, std) = mean_std(&vals);
            rows.push(PlotRow {
                figure: figure.clone(),
                series: series.clone(),
                x,
                metric: name.into(),
                y,
                std,
                n: vals.len(),
            });
        }
    }
    if matches!(cfg.sweep.kind, SweepKind::DeadlineSweep | SweepKind::All) {
        for &power in &cfg.sweep.powers {
            let mut c = cfg.clone();
            c.train.power = power;
            let Ok(prob) = perf_problem(&c) else { continue };
            for &t in &cfg.sweep.deadlines {
                if t > prob.min_round_time() {
                    rows.push(PlotRow {
                        figure: DEADLINE.into(),
                        series: format!("P={power}"),
                        x: Some(t),
                        metric: "proxy_objective".into(),
                        y: prob.performance_proxy(t),
                        std: 0.0,
                        n: 1,
                    });
                }
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyTableRow {
    pub series: String,
    pub b: Option<f64>,
    pub mean_energy_j: f64,
    pub test_accuracy: f64,
    pub n: usize,
}

/// Mean per-worker energy of each label-skew series.
pub fn energy_table(rows: &[PlotRow]) -> Vec<EnergyTableRow> {
    let pick = |r: &PlotRow, metric: &str| {
        rows.iter()
            .find(|q| {
                q.figure == r.figure && q.series == r.series && q.x == r.x && q.metric == metric
            })
            .map(|q| q.y)
    };
    rows.iter()
        .filter(|r| r.figure == LABEL_SKEW && r.metric == "mean_energy_j")
        .map(|r| EnergyTableRow {
            series: r.series.clone(),
            b: r.x,
            mean_energy_j: r.y,
            test_accuracy: pick(r, "test_accuracy").unwrap_or(f64::NAN),
            n: r.n,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes_and_ids() {
        let mut cfg = RunConfig::default();
        cfg.sweep.seeds = 2;
        cfg.sweep.kind = SweepKind::EnergyGrid;
        let g = grid(&cfg);
        assert_eq!(g.len(), 3 * 3 * 2);
        let mut ids: Vec<_> = g.iter().map(|s| s.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), g.len());
        assert_eq!(g[1].experiment.seed, 1);

        cfg.sweep.kind = SweepKind::LabelSkew;
        let g = grid(&cfg);
        assert_eq!(g.len(), 2 * (3 + 2));
        assert!(g
            .iter()
            .all(|s| s.experiment.partition == Partition::ByLabel));
        assert!(g.iter().all(|s| s.experiment.validate().is_ok()));

        cfg.sweep.kind = SweepKind::DeadlineSweep;
        let g = grid(&cfg);
        assert_eq!(g.len(), 2 * (cfg.sweep.deadlines.len() + 1));
    }

    #[test]
    fn mean_std_basic() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
