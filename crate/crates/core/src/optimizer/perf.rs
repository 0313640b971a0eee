//! Round-deadline selection for the best convergence proxy under energy budgets.
//!
//! CPU frequency and transmit power are fixed per worker. For a given
//! deadline `T` each worker's best rate is the smallest one meeting both its
//! per-round energy budget and the deadline; substituting it, and using the
//! high-SNR outage, leaves a one-dimensional difference-of-convex problem
//! `min_T g(T) - h(T)` over `T >= max_m c_m D_m / f_m`, solved with DCA.
//!
//! Each worker's total budget `E_m` covers the whole run, so the per-round
//! budget at deadline `T` is `E_m * T / T_total`.

use serde::{Deserialize, Serialize};

use super::{PlanSolution, TraceRow};
use crate::error::{Error, Result};
use crate::wireless::{compute_energy, high_snr_outage, DeviceProfile, RadioPlan};

const LN2: f64 = std::f64::consts::LN_2;
const DCA_MAX_ITERS: usize = 100;
const DCA_TOL: f64 = 1e-6;
const BISECTION_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfWorker {
    pub profile: DeviceProfile,
    /// Fixed CPU frequency, Hz.
    pub frequency: f64,
    /// Fixed transmit power, W.
    pub power: f64,
    /// Energy budget for the whole run, J.
    pub energy_budget: f64,
}

impl PerfWorker {
    /// Full CPU speed and full power.
    pub fn at_full_power(profile: DeviceProfile, energy_budget: f64) -> Self {
        Self {
            profile,
            frequency: profile.f_max,
            power: profile.p_max,
            energy_budget,
        }
    }

    fn compute_time(&self) -> f64 {
        self.profile.cycles() / self.frequency
    }

    fn compute_energy(&self) -> f64 {
        0.5 * self.profile.alpha * self.profile.cycles() * self.frequency * self.frequency
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfMaxProblem {
    workers: Vec<PerfWorker>,
    total_time: f64,
}

impl PerfMaxProblem {
    pub fn new(workers: Vec<PerfWorker>, total_time: f64) -> Result<Self> {
        if workers.is_empty() {
            return Err(Error::invalid("at least one worker is required"));
        }
        if !(total_time.is_finite() && total_time > 0.0) {
            return Err(Error::invalid(format!(
                "total time must be > 0, got {total_time}"
            )));
        }
        let floor = workers
            .iter()
            .map(PerfWorker::compute_time)
            .fold(0.0, f64::max);
        for (m, w) in workers.iter().enumerate() {
            w.profile.validate()?;
            let p = &w.profile;
            if !(w.frequency >= p.f_min && w.frequency <= p.f_max) {
                return Err(Error::OutOfRange {
                    what: "worker frequency",
                    value: w.frequency,
                    lo: p.f_min,
                    hi: p.f_max,
                });
            }
            if !(w.power > 0.0 && w.power >= p.p_min && w.power <= p.p_max) {
                return Err(Error::OutOfRange {
                    what: "worker power",
                    value: w.power,
                    lo: p.p_min.max(f64::MIN_POSITIVE),
                    hi: p.p_max,
                });
            }
            // The per-round budget at the shortest admissible deadline must
            // leave something for the uplink.
            let budget_at_floor = w.energy_budget * floor / total_time;
            if !(budget_at_floor > w.compute_energy()) {
                return Err(Error::Infeasible(format!(
                    "worker {m}: per-round budget {budget_at_floor} J at the minimum deadline does \
                     not exceed the compute energy {} J",
                    w.compute_energy()
                )));
            }
        }
        Ok(Self {
            workers,
            total_time,
        })
    }

    pub fn workers(&self) -> &[PerfWorker] {
        &self.workers
    }

    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    /// `max_m c_m D_m / f_m`: no deadline at or below this is admissible.
    pub fn min_round_time(&self) -> f64 {
        self.workers
            .iter()
            .map(PerfWorker::compute_time)
            .fold(0.0, f64::max)
    }

    /// Per-round energy budget of worker `m` at deadline `t`.
    pub fn round_budget(&self, m: usize, t: f64) -> f64 {
        self.workers[m].energy_budget * t / self.total_time
    }

    /// `(energy-limited rate, deadline-limited rate)` of worker `m` at `t`,
    /// with their derivatives in `t`.
    fn branches(&self, m: usize, t: f64) -> ([f64; 2], [f64; 2]) {
        let w = &self.workers[m];
        let p = &w.profile;
        let a = w.energy_budget / self.total_time;
        let spare = a * t - w.compute_energy();
        let r_e = w.power * p.payload_bits / (p.bandwidth * spare);
        let dr_e = -w.power * p.payload_bits * a / (p.bandwidth * spare * spare);
        let slack = t - w.compute_time();
        let r_t = p.payload_bits / (p.bandwidth * slack);
        let dr_t = -p.payload_bits / (p.bandwidth * slack * slack);
        ([r_e, r_t], [dr_e, dr_t])
    }

    fn best_rate(&self, m: usize, t: f64) -> (f64, f64) {
        let ([r_e, r_t], [dr_e, dr_t]) = self.branches(m, t);
        if r_e >= r_t {
            (r_e, dr_e)
        } else {
            (r_t, dr_t)
        }
    }

    /// Convergence proxy `(M - 2 sum_m p_out(r_m*)) / sqrt(T)` with the
    /// high-SNR outage; equals `h(T) - g(T)`.
    pub fn performance_proxy(&self, t: f64) -> f64 {
        dc_convex_h(self.num_workers(), t) - g_value(self, t)
    }

    /// The same proxy with exact Rayleigh outages.
    pub fn exact_performance(&self, t: f64) -> f64 {
        let wrong: f64 = (0..self.num_workers())
            .map(|m| {
                let w = &self.workers[m];
                crate::wireless::outage_probability(&w.profile, self.best_rate(m, t).0, w.power)
            })
            .sum();
        (self.num_workers() as f64 - 2.0 * wrong) / t.sqrt()
    }
}

fn check_deadline(prob: &PerfMaxProblem, m: usize, t: f64) -> Result<()> {
    let w = prob
        .workers
        .get(m)
        .ok_or_else(|| Error::invalid(format!("no worker {m}")))?;
    if !(t > w.compute_time()) {
        return Err(Error::Infeasible(format!(
            "worker {m}: deadline {t} s does not exceed compute time {} s",
            w.compute_time()
        )));
    }
    let budget = prob.round_budget(m, t);
    let e_cmp = compute_energy(&w.profile, w.frequency)?;
    if !(budget > e_cmp) {
        return Err(Error::Infeasible(format!(
            "worker {m}: per-round budget {budget} J does not exceed compute energy {e_cmp} J"
        )));
    }
    Ok(())
}

/// Smallest rate meeting both worker `m`'s per-round energy budget and the
/// deadline `t`.
pub fn optimal_rate(prob: &PerfMaxProblem, m: usize, t: f64) -> Result<f64> {
    check_deadline(prob, m, t)?;
    Ok(prob.best_rate(m, t).0)
}

/// Workers whose best rate at deadline `t` is pinned by the energy budget.
pub fn worker_partition(prob: &PerfMaxProblem, t: f64) -> Vec<usize> {
    (0..prob.num_workers())
        .filter(|&m| {
            let ([r_e, r_t], _) = prob.branches(m, t);
            r_e >= r_t
        })
        .collect()
}

fn g_value(prob: &PerfMaxProblem, t: f64) -> f64 {
    let sum: f64 = (0..prob.num_workers())
        .map(|m| {
            let w = &prob.workers[m];
            high_snr_outage(&w.profile, prob.best_rate(m, t).0, w.power)
        })
        .sum();
    2.0 * sum / t.sqrt()
}

fn g_derivative(prob: &PerfMaxProblem, t: f64) -> f64 {
    let sqrt_t = t.sqrt();
    (0..prob.num_workers())
        .map(|m| {
            let w = &prob.workers[m];
            let scale = 2.0 * w.profile.noise_power() / w.power;
            let (r, dr) = prob.best_rate(m, t);
            let pow = (r * LN2).exp();
            scale * (LN2 * pow * dr / sqrt_t - 0.5 * (pow - 1.0) / (t * sqrt_t))
        })
        .sum()
}

/// `g(T) = 2 sum_m (2^{r_m*(T)} - 1) N0 B_m / (P_m sqrt(T))`.
pub fn dc_convex_g(prob: &PerfMaxProblem, t: f64) -> Result<f64> {
    let floor = prob.min_round_time();
    if !(t > floor) {
        return Err(Error::OutOfRange {
            what: "round time",
            value: t,
            lo: floor,
            hi: f64::INFINITY,
        });
    }
    Ok(g_value(prob, t))
}

/// `h(T) = M / sqrt(T)`.
pub fn dc_convex_h(num_workers: usize, t: f64) -> f64 {
    num_workers as f64 / t.sqrt()
}

fn h_derivative(num_workers: usize, t: f64) -> f64 {
    -0.5 * num_workers as f64 / (t * t.sqrt())
}

/// `argmin_{T > floor} g(T) - slope * T` by bisection on `g'(T) - slope`.
fn dca_inner(prob: &PerfMaxProblem, floor: f64, start: f64, slope: f64) -> f64 {
    let phi = |t: f64| g_derivative(prob, t) - slope;
    let mut lo = floor;
    let mut hi = start.max(floor * (1.0 + 1e-6));
    let mut guard = 0;
    while !(phi(hi) >= 0.0) && guard < 200 {
        lo = hi;
        hi = floor + 2.0 * (hi - floor);
        guard += 1;
    }
    while hi - lo > BISECTION_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn plans_at(prob: &PerfMaxProblem, t: f64) -> Result<Vec<RadioPlan>> {
    (0..prob.num_workers())
        .map(|m| {
            let w = &prob.workers[m];
            let r = optimal_rate(prob, m, t)?;
            RadioPlan::new(&w.profile, w.frequency, r, w.power)
        })
        .collect()
}

/// Plans for a fixed deadline `t`, each worker at its best rate.
pub fn plans_for_deadline(prob: &PerfMaxProblem, t: f64) -> Result<PlanSolution> {
    Ok(PlanSolution {
        plans: plans_at(prob, t)?,
        feasible: true,
        round_time: t,
        objective: prob.performance_proxy(t),
        solver_trace: Vec::new(),
    })
}

/// DCA on `g - h`: linearize `h` at the current deadline and minimize the
/// convex remainder exactly. Starts at twice the compute floor and stops once
/// the deadline moves by less than `1e-6` s, or after 100 iterations.
///
/// Trace rows carry `g(T) - h(T)`, which is nonincreasing.
pub fn solve_round_time_dca(prob: &PerfMaxProblem) -> Result<PlanSolution> {
    let floor = prob.min_round_time();
    let m = prob.num_workers();
    let objective = |t: f64| g_value(prob, t) - dc_convex_h(m, t);

    let mut t = 2.0 * floor;
    let mut trace = vec![TraceRow {
        iteration: 0,
        iterate: t,
        objective: objective(t),
        step: 0.0,
    }];
    for k in 1..=DCA_MAX_ITERS {
        let slope = h_derivative(m, t);
        let next = dca_inner(prob, floor, t, slope);
        let step = next - t;
        t = next;
        trace.push(TraceRow {
            iteration: k,
            iterate: t,
            objective: objective(t),
            step,
        });
        if step.abs() < DCA_TOL {
            break;
        }
    }
    if !objective(t).is_finite() {
        return Err(Error::Infeasible(
            "DCA did not reach a finite objective".into(),
        ));
    }
    Ok(PlanSolution {
        plans: plans_at(prob, t)?,
        feasible: true,
        round_time: t,
        objective: prob.performance_proxy(t),
        solver_trace: trace,
    })
}

/// Best deadline on a uniform grid over `(floor, t_max]`.
pub fn solve_round_time_oracle(
    prob: &PerfMaxProblem,
    grid_points: usize,
    t_max: f64,
) -> Result<PlanSolution> {
    let floor = prob.min_round_time();
    if !(t_max > floor) {
        return Err(Error::invalid(format!(
            "grid upper end {t_max} must exceed the compute floor {floor}"
        )));
    }
    let n = grid_points.max(1);
    let mut best = (t_max, f64::NEG_INFINITY);
    for i in 1..=n {
        let t = floor + (t_max - floor) * i as f64 / n as f64;
        let v = prob.performance_proxy(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    plans_for_deadline(prob, best.0)
}
