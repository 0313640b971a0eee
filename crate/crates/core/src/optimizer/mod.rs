//! Per-worker parameter selection.
//!
//! [`energy`] minimizes a worker's round energy under an outage target and a
//! round deadline. [`perf`] picks the round deadline (and per-worker rates)
//! that maximizes the convergence proxy `(M - 2 sum p_out) / sqrt(T_l)` under
//! per-worker energy budgets.

pub mod energy;
pub mod perf;

use serde::{Deserialize, Serialize};

use crate::wireless::RadioPlan;

pub use energy::{
    check_feasibility, energy_objective, full_power_plan, infeasible_fallback, optimal_frequency,
    optimal_power, plan_energy_min, rate_bounds, solve_energy_min, solve_energy_min_oracle,
    EnergyMinProblem, RateBounds,
};
pub use perf::{
    dc_convex_g, dc_convex_h, optimal_rate, plans_for_deadline, solve_round_time_dca,
    solve_round_time_oracle, worker_partition, PerfMaxProblem, PerfWorker,
};

/// One solver iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub iterate: f64,
    pub objective: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSolution {
    /// One plan per worker of the source problem.
    pub plans: Vec<RadioPlan>,
    /// `false` when the source problem had no feasible point and a fallback
    /// plan was returned instead.
    pub feasible: bool,
    /// Round deadline the plans were built for (the optimized one for
    /// learning-performance problems).
    pub round_time: f64,
    /// Energy in joules for energy minimization; the convergence proxy for
    /// learning-performance maximization.
    pub objective: f64,
    pub solver_trace: Vec<TraceRow>,
}
