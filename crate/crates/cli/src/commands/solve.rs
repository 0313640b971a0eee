//! `solve-energy` and `solve-perf`.

use fedsim_core::fl_sim::RoundTime;
use fedsim_core::optimizer::{
    plan_energy_min, rate_bounds, solve_energy_min_oracle, solve_round_time_dca, worker_partition,
    EnergyMinProblem, PerfMaxProblem, PerfWorker,
};
use fedsim_core::wireless::high_snr_outage;
use fedsim_core::{PlanSolution, RadioPlan};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Points in the deadline sweep that `solve-perf` reports next to DCA.
pub const PERF_SWEEP_POINTS: usize = 1000;

#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub frequency_hz: f64,
    pub rate_bps_per_hz: f64,
    pub power_w: f64,
    pub outage: f64,
    pub round_time_s: f64,
    pub round_energy_j: f64,
    pub compute_energy_j: f64,
    pub comm_energy_j: f64,
}

impl From<&RadioPlan> for PlanReport {
    fn from(p: &RadioPlan) -> Self {
        Self {
            frequency_hz: p.frequency(),
            rate_bps_per_hz: p.rate(),
            power_w: p.power(),
            outage: p.outage(),
            round_time_s: p.round_time(),
            round_energy_j: p.round_energy(),
            compute_energy_j: p.compute_energy(),
            comm_energy_j: p.comm_energy(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyWorkerReport {
    pub worker: usize,
    pub outage_target: f64,
    pub feasible: bool,
    /// Rates at which minimum and maximum power meet the target, and the
    /// smallest rate meeting the deadline at full CPU speed.
    pub rate_r1: f64,
    pub rate_r2: f64,
    pub rate_r3: f64,
    pub plan: PlanReport,
    /// Grid-oracle energy; absent for fallback plans.
    pub oracle_energy_j: Option<f64>,
    pub oracle_rel_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub round_time_s: f64,
    pub any_fallback: bool,
    pub total_round_energy_j: f64,
    pub workers: Vec<EnergyWorkerReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkerTraceRow {
    pub worker: usize,
    pub iteration: usize,
    pub rate: f64,
    pub objective: f64,
    pub step: f64,
}

pub struct EnergyOutput {
    pub report: EnergyReport,
    pub trace: Vec<WorkerTraceRow>,
}

fn fixed_round_time(cfg: &RunConfig) -> CliResult<f64> {
    match cfg.train.round_time {
        RoundTime::Fixed(t) => Ok(t),
        RoundTime::Optimize => Err(CliError::Config(
            "train.round_time: solve-energy needs a fixed round time".into(),
        )),
    }
}

/// Minimum-energy plan per worker, with the full-power fallback for
/// infeasible targets and a grid-oracle cross-check for feasible ones.
pub fn solve_energy(cfg: &RunConfig) -> CliResult<EnergyOutput> {
    let t = fixed_round_time(cfg)?;
    let targets = &cfg.train.outage_target;
    let mut workers = Vec::new();
    let mut trace = Vec::new();
    for (m, profile) in cfg.devices().into_iter().enumerate() {
        let target = targets[if targets.len() == 1 { 0 } else { m }];
        let prob = EnergyMinProblem::new(profile, t, target)?;
        let bounds = rate_bounds(&prob)?;
        let sol: PlanSolution = plan_energy_min(&prob)?;
        let (oracle_energy_j, oracle_rel_gap) = if sol.feasible {
            let o = solve_energy_min_oracle(&prob, cfg.oracle_points)?;
            (
                Some(o.objective),
                Some((sol.objective - o.objective) / o.objective),
            )
        } else {
            (None, None)
        };
        trace.extend(sol.solver_trace.iter().map(|r| WorkerTraceRow {
            worker: m,
            iteration: r.iteration,
            rate: r.iterate,
            objective: r.objective,
            step: r.step,
        }));
        workers.push(EnergyWorkerReport {
            worker: m,
            outage_target: target,
            feasible: sol.feasible,
            rate_r1: bounds.r1,
            rate_r2: bounds.r2,
            rate_r3: bounds.r3,
            plan: PlanReport::from(&sol.plans[0]),
            oracle_energy_j,
            oracle_rel_gap,
        });
    }
    Ok(EnergyOutput {
        report: EnergyReport {
            round_time_s: t,
            any_fallback: workers.iter().any(|w| !w.feasible),
            total_round_energy_j: workers.iter().map(|w| w.plan.round_energy_j).sum(),
            workers,
        },
        trace,
    })
}

pub fn perf_problem(cfg: &RunConfig) -> CliResult<PerfMaxProblem> {
    let workers = cfg
        .devices()
        .into_iter()
        .map(|profile| PerfWorker {
            profile,
            frequency: profile.f_max,
            power: cfg.train.power,
            energy_budget: cfg.train.energy_budget,
        })
        .collect();
    Ok(PerfMaxProblem::new(workers, cfg.train.total_time)?)
}

/// Upper end of the deadline sweep: ten compute floors, at least one second.
pub fn perf_sweep_max(prob: &PerfMaxProblem) -> f64 {
    (10.0 * prob.min_round_time()).max(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct PerfWorkerReport {
    pub worker: usize,
    /// True when the energy budget, not the deadline, sets the rate.
    pub energy_limited: bool,
    pub high_snr_outage: f64,
    pub plan: PlanReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerfReport {
    pub round_time_s: f64,
    pub rounds: usize,
    /// `(M - 2 sum p_out) / sqrt(T)` with high-SNR outages.
    pub proxy_objective: f64,
    /// The same with exact outages.
    pub exact_objective: f64,
    pub dca_iterations: usize,
    pub sweep_points: usize,
    pub sweep_max_round_time_s: f64,
    pub sweep_best_round_time_s: f64,
    pub sweep_best_objective: f64,
    /// `proxy_objective / sweep_best_objective`.
    pub relative_to_sweep: f64,
    pub workers: Vec<PerfWorkerReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DcaTraceRow {
    pub iteration: usize,
    pub round_time_s: f64,
    /// `g(T) - h(T)`, nonincreasing along the trace.
    pub objective: f64,
    pub step: f64,
}

pub struct PerfOutput {
    pub report: PerfReport,
    pub trace: Vec<DcaTraceRow>,
}

/// Proxy-optimal round deadline by DCA, reported against a uniform sweep.
pub fn solve_perf(cfg: &RunConfig) -> CliResult<PerfOutput> {
    let prob = perf_problem(cfg)?;
    let sol = solve_round_time_dca(&prob)?;
    let t = sol.round_time;
    let floor = prob.min_round_time();
    let t_max = perf_sweep_max(&prob);
    let mut best = (t_max, f64::NEG_INFINITY);
    for i in 1..=PERF_SWEEP_POINTS {
        let x = floor + (t_max - floor) * i as f64 / PERF_SWEEP_POINTS as f64;
        let v = prob.performance_proxy(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    let limited = worker_partition(&prob, t);
    let workers = sol
        .plans
        .iter()
        .enumerate()
        .map(|(m, plan)| {
            let w = &prob.workers()[m];
            PerfWorkerReport {
                worker: m,
                energy_limited: limited.contains(&m),
                high_snr_outage: high_snr_outage(&w.profile, plan.rate(), w.power),
                plan: PlanReport::from(plan),
            }
        })
        .collect();
    let proxy = prob.performance_proxy(t);
    Ok(PerfOutput {
        report: PerfReport {
            round_time_s: t,
            rounds: fedsim_core::fl_sim::num_rounds(cfg.train.total_time, t),
            proxy_objective: proxy,
            exact_objective: prob.exact_performance(t),
            dca_iterations: sol.solver_trace.len().saturating_sub(1),
            sweep_points: PERF_SWEEP_POINTS,
            sweep_max_round_time_s: t_max,
            sweep_best_round_time_s: best.0,
            sweep_best_objective: best.1,
            relative_to_sweep: proxy / best.1,
            workers,
        },
        trace: sol
            .solver_trace
            .iter()
            .map(|r| DcaTraceRow {
                iteration: r.iteration,
                round_time_s: r.iterate,
                objective: r.objective,
                step: r.step,
            })
            .collect(),
    })
}
