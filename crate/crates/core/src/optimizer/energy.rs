//! Minimum-energy operating point of one worker under an outage target and a
//! round deadline.
//!
//! For a fixed rate the optimal power is the smallest one meeting the outage
//! target, and the optimal CPU frequency is the smallest one meeting the
//! deadline (floored at `f_min`). What remains is a convex function of the
//! rate alone on `[max(r1, r3), r2]`, minimized here by a projected
//! subgradient method.

use serde::{Deserialize, Serialize};

use super::{PlanSolution, TraceRow};
use crate::error::{Error, Result};
use crate::wireless::{DeviceProfile, RadioPlan};

const LN2: f64 = std::f64::consts::LN_2;
/// Relative slack when checking that a rate lies in an interval whose ends
/// come out of floating-point formulas.
const RANGE_SLACK: f64 = 1e-12;
const SUBGRADIENT_ITERS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyMinProblem {
    pub profile: DeviceProfile,
    /// Round deadline `T_l`, seconds.
    pub round_time: f64,
    /// Outage target `p_out`, in `(0, 1)`.
    pub outage_target: f64,
}

impl EnergyMinProblem {
    pub fn new(profile: DeviceProfile, round_time: f64, outage_target: f64) -> Result<Self> {
        profile.validate()?;
        if !(round_time.is_finite() && round_time > 0.0) {
            return Err(Error::invalid(format!(
                "round time must be > 0, got {round_time}"
            )));
        }
        if !(outage_target > 0.0 && outage_target < 1.0) {
            return Err(Error::OutOfRange {
                what: "outage target",
                value: outage_target,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(Self {
            profile,
            round_time,
            outage_target,
        })
    }

    /// `-ln(1 - p_out)`, positive.
    fn neg_log_success(&self) -> f64 {
        -(-self.outage_target).ln_1p()
    }

    /// Rate at which power `power` exactly meets the outage target.
    fn rate_for_power(&self, power: f64) -> f64 {
        (power * self.neg_log_success() / self.profile.noise_power()).ln_1p() / LN2
    }
}

/// `r1`/`r2`: rates at which `P_min`/`P_max` exactly meet the outage target.
/// `r3`: the smallest rate meeting the deadline at `f_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

impl RateBounds {
    /// The feasible rate interval `[max(r1, r3), r2]` (possibly empty).
    pub fn interval(&self) -> (f64, f64) {
        (self.r1.max(self.r3), self.r2)
    }
}

pub fn rate_bounds(prob: &EnergyMinProblem) -> Result<RateBounds> {
    let p = &prob.profile;
    let slack = prob.round_time - p.min_compute_time();
    if slack <= 0.0 {
        return Err(Error::InfeasibleGeometry(format!(
            "round time {} s does not exceed the minimum compute time {} s",
            prob.round_time,
            p.min_compute_time()
        )));
    }
    Ok(RateBounds {
        r1: prob.rate_for_power(p.p_min),
        r2: prob.rate_for_power(p.p_max),
        r3: p.payload_bits / (p.bandwidth * slack),
    })
}

/// True iff full power at the deadline-forced rate meets the outage target.
pub fn check_feasibility(prob: &EnergyMinProblem) -> Result<bool> {
    let b = rate_bounds(prob)?;
    Ok(b.r3 <= b.r2)
}

/// Full CPU speed, full power, and the slowest rate that still meets the
/// deadline. Minimizes outage among deadline-feasible plans.
pub fn full_power_plan(profile: &DeviceProfile, round_time: f64) -> Result<RadioPlan> {
    let slack = round_time - profile.min_compute_time();
    if slack <= 0.0 {
        return Err(Error::InfeasibleGeometry(format!(
            "round time {round_time} s does not exceed the minimum compute time {} s",
            profile.min_compute_time()
        )));
    }
    let r3 = profile.payload_bits / (profile.bandwidth * slack);
    RadioPlan::new(profile, profile.f_max, r3, profile.p_max)
}

/// Plan used when the outage target cannot be met within the deadline.
pub fn infeasible_fallback(prob: &EnergyMinProblem) -> Result<PlanSolution> {
    if check_feasibility(prob)? {
        return Err(Error::invalid(
            "fallback requested for a feasible energy-minimization problem",
        ));
    }
    let plan = full_power_plan(&prob.profile, prob.round_time)?;
    Ok(PlanSolution {
        objective: plan.round_energy(),
        plans: vec![plan],
        feasible: false,
        round_time: prob.round_time,
        solver_trace: Vec::new(),
    })
}

fn check_in(what: &'static str, r: f64, lo: f64, hi: f64) -> Result<()> {
    let tol_lo = RANGE_SLACK * lo.abs().max(1.0);
    let tol_hi = RANGE_SLACK * hi.abs().max(1.0);
    if r.is_finite() && r >= lo - tol_lo && r <= hi + tol_hi {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what,
            value: r,
            lo,
            hi,
        })
    }
}

/// Smallest power meeting the outage target at rate `r`.
pub fn optimal_power(prob: &EnergyMinProblem, r: f64) -> Result<f64> {
    let b = rate_bounds(prob)?;
    check_in("rate", r, b.r1, b.r2)?;
    let p = &prob.profile;
    let power = p.noise_power() * (r * LN2).exp_m1() / prob.neg_log_success();
    Ok(power.clamp(p.p_min, p.p_max))
}

/// Smallest CPU frequency meeting the deadline at rate `r`, floored at `f_min`.
pub fn optimal_frequency(prob: &EnergyMinProblem, r: f64) -> Result<f64> {
    let b = rate_bounds(prob)?;
    check_in("rate", r, b.r3, f64::INFINITY)?;
    Ok(deadline_frequency(prob, r))
}

/// Unclamped `c D / (T_l - s / (r B))`.
fn raw_deadline_frequency(prob: &EnergyMinProblem, r: f64) -> f64 {
    let p = &prob.profile;
    p.cycles() / (prob.round_time - p.payload_bits / (r * p.bandwidth))
}

fn deadline_frequency(prob: &EnergyMinProblem, r: f64) -> f64 {
    let p = &prob.profile;
    raw_deadline_frequency(prob, r).max(p.f_min).min(p.f_max)
}

/// Round energy at rate `r` with power and frequency at their optimal values.
pub fn energy_objective(prob: &EnergyMinProblem, r: f64) -> Result<f64> {
    let b = rate_bounds(prob)?;
    let (lo, hi) = b.interval();
    check_in("rate", r, lo, hi)?;
    Ok(objective_unchecked(prob, r))
}

fn objective_unchecked(prob: &EnergyMinProblem, r: f64) -> f64 {
    let p = &prob.profile;
    let z = deadline_frequency(prob, r);
    let compute = 0.5 * p.alpha * p.cycles() * z * z;
    let comm = p.noise_psd * p.payload_bits * (r * LN2).exp_m1() / (prob.neg_log_success() * r);
    compute + comm
}

/// A subgradient of the reduced objective. At the `f_min` kink only the
/// uplink term's derivative is used.
fn subgradient(prob: &EnergyMinProblem, r: f64) -> f64 {
    let p = &prob.profile;
    let pow = (r * LN2).exp();
    let comm = p.noise_psd * p.payload_bits / prob.neg_log_success()
        * (LN2 * pow * r - (pow - 1.0))
        / (r * r);
    let raw = raw_deadline_frequency(prob, r);
    if raw > p.f_min {
        let u = prob.round_time - p.payload_bits / (r * p.bandwidth);
        let du = p.payload_bits / (r * r * p.bandwidth);
        let dz = -p.cycles() * du / (u * u);
        p.alpha * p.cycles() * raw * dz + comm
    } else {
        comm
    }
}

fn plan_at(prob: &EnergyMinProblem, r: f64) -> Result<RadioPlan> {
    let p = &prob.profile;
    let power =
        (p.noise_power() * (r * LN2).exp_m1() / prob.neg_log_success()).clamp(p.p_min, p.p_max);
    RadioPlan::new(p, deadline_frequency(prob, r), r, power)
}

/// Minimum-energy plan via projected subgradient on the feasible rate interval.
///
/// Steps move by `0.1 * width / sqrt(k)` against the subgradient direction
/// for 500 iterations; the best iterate seen is returned.
pub fn solve_energy_min(prob: &EnergyMinProblem) -> Result<PlanSolution> {
    let b = rate_bounds(prob)?;
    if b.r3 > b.r2 {
        return Err(Error::Infeasible(format!(
            "deadline needs rate {:.6} but the outage target allows at most {:.6}",
            b.r3, b.r2
        )));
    }
    let (lo, hi) = b.interval();
    let width = hi - lo;

    let mut x = 0.5 * (lo + hi);
    let mut best = (x, objective_unchecked(prob, x));
    let mut trace = vec![TraceRow {
        iteration: 0,
        iterate: x,
        objective: best.1,
        step: 0.0,
    }];
    if width > 0.0 {
        for k in 1..=SUBGRADIENT_ITERS {
            let g = subgradient(prob, x);
            let step = 0.1 * width / (k as f64).sqrt();
            let dir = if g > 0.0 {
                -1.0
            } else if g < 0.0 {
                1.0
            } else {
                0.0
            };
            x = (x + dir * step).clamp(lo, hi);
            let f = objective_unchecked(prob, x);
            if f < best.1 {
                best = (x, f);
            }
            trace.push(TraceRow {
                iteration: k,
                iterate: x,
                objective: f,
                step,
            });
            if dir == 0.0 {
                break;
            }
        }
    }
    let plan = plan_at(prob, best.0)?;
    Ok(PlanSolution {
        objective: plan.round_energy(),
        plans: vec![plan],
        feasible: true,
        round_time: prob.round_time,
        solver_trace: trace,
    })
}

/// Brute-force minimum of the reduced objective on a uniform rate grid.
pub fn solve_energy_min_oracle(
    prob: &EnergyMinProblem,
    grid_points: usize,
) -> Result<PlanSolution> {
    let b = rate_bounds(prob)?;
    if b.r3 > b.r2 {
        return Err(Error::Infeasible("empty feasible rate interval".into()));
    }
    let (lo, hi) = b.interval();
    let n = grid_points.max(2);
    let mut best = (lo, f64::INFINITY);
    for i in 0..n {
        let r = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let f = objective_unchecked(prob, r);
        if f < best.1 {
            best = (r, f);
        }
    }
    let plan = plan_at(prob, best.0)?;
    Ok(PlanSolution {
        objective: plan.round_energy(),
        plans: vec![plan],
        feasible: true,
        round_time: prob.round_time,
        solver_trace: Vec::new(),
    })
}

/// Solves when feasible, otherwise returns the full-power fallback.
pub fn plan_energy_min(prob: &EnergyMinProblem) -> Result<PlanSolution> {
    if check_feasibility(prob)? {
        solve_energy_min(prob)
    } else {
        infeasible_fallback(prob)
    }
}
