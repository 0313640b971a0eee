//! The federated round loop and its per-round ledger.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{
    full_power_plan, plan_energy_min, plans_for_deadline, solve_round_time_dca, EnergyMinProblem,
    PerfMaxProblem, PerfWorker,
};
use crate::rng::{RandomStream, StreamPurpose};
use crate::sign_codec::{
    apply_sign_update, majority_vote, sign_quantize, stochastic_sign_encode, GradientVector,
    SignVector, StochasticSignConfig,
};
use crate::wireless::{transmit_packet, DeviceProfile, RadioPlan};

use super::data::{partition_by_label, partition_iid, LabeledDataset};
use super::model::{LocalPass, SoftmaxModel};

/// Largest outage target handed to the stochastic encoder, which needs
/// `p_out < 1/2`.
const MAX_ENCODER_OUTAGE: f64 = 0.5 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Plain signs, majority vote.
    SignSgd,
    /// Stochastic sign pre-processing before transmission.
    StochasticSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Iid,
    ByLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundTime {
    Fixed(f64),
    /// Chosen by the round-deadline optimizer; only with [`PlanPolicy::PerfMax`].
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanRefresh {
    EveryRound,
    Once,
}

/// How each worker's `(f, r, P)` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanPolicy {
    /// Minimum-energy plans for fixed outage targets (one per worker, or a
    /// single value shared by all), solved once.
    EnergyMin { outage_targets: Vec<f64> },
    /// Minimum-energy plans whose outage target comes from the current local
    /// gradient and `b`.
    FromB { refresh: PlanRefresh },
    /// Full CPU speed, fixed power and the best rate for the deadline under a
    /// whole-run energy budget.
    PerfMax { energy_budget: f64, power: f64 },
    /// Full CPU speed and power at the deadline rate, ignoring any target.
    FullPower,
    /// Full-power energy accounting over an error-free channel.
    IdealChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub policy: PlanPolicy,
    pub seed: u64,
    pub eta: f64,
    /// Total training time, seconds.
    pub total_time: f64,
    pub round_time: RoundTime,
    /// Stochastic sign scale; required by [`Algorithm::StochasticSign`] and
    /// [`PlanPolicy::FromB`].
    pub b: Option<f64>,
    /// Floor applied to gradient-derived outage targets.
    pub min_outage: f64,
    /// One profile per worker.
    pub devices: Vec<DeviceProfile>,
    pub partition: Partition,
    pub samples_per_worker: usize,
    /// Evaluate on the test set every this many rounds; 0 evaluates only
    /// after the last round.
    pub eval_every: usize,
    /// Mini-batch size per worker and round; `None` uses the full local set.
    pub batch_size: Option<usize>,
    /// When false, a worker that cannot meet its outage target is an error
    /// instead of falling back to full power.
    pub allow_fallback: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::SignSgd,
            policy: PlanPolicy::EnergyMin {
                outage_targets: vec![0.1],
            },
            seed: 0,
            eta: 2e-5,
            total_time: 50.0,
            round_time: RoundTime::Fixed(0.15),
            b: None,
            min_outage: 1e-4,
            devices: vec![DeviceProfile::default(); 10],
            partition: Partition::Iid,
            samples_per_worker: 2000,
            eval_every: 0,
            batch_size: None,
            allow_fallback: true,
        }
    }
}

impl ExperimentConfig {
    pub fn num_workers(&self) -> usize {
        self.devices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if self.devices.is_empty() {
            return cfg_err("at least one worker is required".into());
        }
        for (m, d) in self.devices.iter().enumerate() {
            d.validate()
                .map_err(|e| Error::Config(format!("device {m}: {e}")))?;
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return cfg_err(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.total_time.is_finite() && self.total_time > 0.0) {
            return cfg_err(format!("total time must be > 0, got {}", self.total_time));
        }
        if self.samples_per_worker == 0 {
            return cfg_err("samples per worker must be >= 1".into());
        }
        if self.batch_size == Some(0) {
            return cfg_err("batch size must be >= 1".into());
        }
        if !(self.min_outage > 0.0 && self.min_outage < 0.5) {
            return cfg_err(format!(
                "min outage must be in (0, 0.5), got {}",
                self.min_outage
            ));
        }
        match self.round_time {
            RoundTime::Fixed(t) => {
                if !(t.is_finite() && t > 0.0) {
                    return cfg_err(format!("round time must be > 0, got {t}"));
                }
                if t > self.total_time {
                    return cfg_err(format!(
                        "round time {t} s exceeds total time {} s",
                        self.total_time
                    ));
                }
                let floor = self
                    .devices
                    .iter()
                    .map(DeviceProfile::min_compute_time)
                    .fold(0.0, f64::max);
                if t <= floor {
                    return cfg_err(format!(
                        "round time {t} s does not exceed the compute floor {floor} s"
                    ));
                }
            }
            RoundTime::Optimize => {
                if !matches!(self.policy, PlanPolicy::PerfMax { .. }) {
                    return cfg_err("an optimized round time needs the perf_max policy".into());
                }
            }
        }
        let needs_b = self.algorithm == Algorithm::StochasticSign
            || matches!(self.policy, PlanPolicy::FromB { .. });
        match self.b {
            Some(b) if !(b.is_finite() && b > 0.0) => {
                return cfg_err(format!("b must be > 0, got {b}"));
            }
            None if needs_b => {
                return cfg_err("stochastic sign and from_b targets need b".into());
            }
            _ => {}
        }
        match &self.policy {
            PlanPolicy::EnergyMin { outage_targets } => {
                if outage_targets.len() != 1 && outage_targets.len() != self.num_workers() {
                    return cfg_err(format!(
                        "{} outage targets for {} workers",
                        outage_targets.len(),
                        self.num_workers()
                    ));
                }
                if let Some(p) = outage_targets.iter().find(|p| !(**p > 0.0 && **p < 0.5)) {
                    return cfg_err(format!("outage target {p} outside (0, 0.5)"));
                }
            }
            PlanPolicy::PerfMax {
                energy_budget,
                power,
            } => {
                if !(energy_budget.is_finite() && *energy_budget > 0.0) {
                    return cfg_err(format!("energy budget must be > 0, got {energy_budget}"));
                }
                for (m, d) in self.devices.iter().enumerate() {
                    if !(*power > 0.0 && *power >= d.p_min && *power <= d.p_max) {
                        return cfg_err(format!(
                            "power {power} W outside device {m}'s range ({}, {}]",
                            d.p_min, d.p_max
                        ));
                    }
                }
            }
            _ => {}
        }
        if self.partition == Partition::ByLabel && self.num_workers() != 10 {
            return cfg_err(format!(
                "label partition needs 10 workers, got {}",
                self.num_workers()
            ));
        }
        Ok(())
    }

    fn perf_problem(&self) -> Result<Option<PerfMaxProblem>> {
        match self.policy {
            PlanPolicy::PerfMax {
                energy_budget,
                power,
            } => {
                let workers = self
                    .devices
                    .iter()
                    .map(|&profile| PerfWorker {
                        profile,
                        frequency: profile.f_max,
                        power,
                        energy_budget,
                    })
                    .collect();
                Ok(Some(PerfMaxProblem::new(workers, self.total_time)?))
            }
            _ => Ok(None),
        }
    }

    /// The round deadline, solving for it when it is to be optimized.
    pub fn resolve_round_time(&self) -> Result<f64> {
        match self.round_time {
            RoundTime::Fixed(t) => Ok(t),
            RoundTime::Optimize => {
                let prob = self
                    .perf_problem()?
                    .ok_or_else(|| Error::Config("optimize needs perf_max".into()))?;
                Ok(solve_round_time_dca(&prob)?.round_time)
            }
        }
    }
}

/// `floor(total_time / round_time)`, tolerant of representation error in
/// exact ratios such as `50 / 0.1`.
pub fn num_rounds(total_time: f64, round_time: f64) -> usize {
    (total_time / round_time + 1e-9).floor() as usize
}

/// `max(min_i (1/2 - b |grad_i|), floor)`: the loosest outage target for
/// which stochastic sign pre-processing needs no clamping.
pub fn select_round_outage_target(grad: &GradientVector, b: f64, floor: f64) -> f64 {
    (0.5 - b * grad.max_abs()).max(floor)
}

/// One worker's operating point for a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerPlan {
    pub plan: RadioPlan,
    /// Outage probability the target asked for (the achieved one for plans
    /// without a target).
    pub target: f64,
    /// False when the target could not be met and full power was used.
    pub feasible: bool,
    /// Flip probability of the simulated channel.
    pub channel_outage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based index of the completed round.
    pub round: usize,
    /// Model time elapsed after this round, `round * T_l`.
    pub model_time: f64,
    /// Mean loss and accuracy over all workers' data before the update.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub outages: Vec<bool>,
    pub energies: Vec<f64>,
    pub outage_targets: Vec<f64>,
    pub fallbacks: Vec<bool>,
    /// Coordinates whose stochastic flip probability was clamped, summed
    /// over workers.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub rounds: usize,
    pub round_time: f64,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    pub final_test_loss: f64,
    pub final_test_accuracy: f64,
    pub energy_per_worker: Vec<f64>,
    pub mean_energy_per_worker: f64,
    pub outages_per_worker: Vec<usize>,
    pub fallback_rounds_per_worker: Vec<usize>,
    pub clamped_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub summary: ExperimentSummary,
}

/// State of a running experiment.
pub struct Simulation<'a> {
    cfg: ExperimentConfig,
    workers: Vec<LabeledDataset>,
    test: &'a LabeledDataset,
    model: SoftmaxModel,
    round_time: f64,
    rounds: usize,
    round: usize,
    plans: Option<Vec<WorkerPlan>>,
}

impl<'a> Simulation<'a> {
    /// Partitions `train` across the workers and solves any fixed plans.
    pub fn new(
        cfg: ExperimentConfig,
        train: &LabeledDataset,
        test: &'a LabeledDataset,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = RandomStream::keyed(cfg.seed, 0, 0, StreamPurpose::Partition);
        let workers = match cfg.partition {
            Partition::Iid => {
                partition_iid(train, cfg.num_workers(), cfg.samples_per_worker, &mut rng)?
            }
            Partition::ByLabel => {
                partition_by_label(train, cfg.num_workers(), cfg.samples_per_worker, &mut rng)?
            }
        };
        Self::with_partition(cfg, workers, test)
    }

    /// Uses the given per-worker datasets as-is.
    pub fn with_partition(
        cfg: ExperimentConfig,
        workers: Vec<LabeledDataset>,
        test: &'a LabeledDataset,
    ) -> Result<Self> {
        cfg.validate()?;
        if workers.len() != cfg.num_workers() {
            return Err(Error::DimensionMismatch {
                expected: cfg.num_workers(),
                actual: workers.len(),
            });
        }
        let model = SoftmaxModel::zeros(test.num_features(), test.num_classes())?;
        let round_time = cfg.resolve_round_time()?;
        let rounds = num_rounds(cfg.total_time, round_time);
        let mut sim = Self {
            cfg,
            workers,
            test,
            model,
            round_time,
            rounds,
            round: 0,
            plans: None,
        };
        sim.plans = sim.fixed_plans()?;
        Ok(sim)
    }

    pub fn round_time(&self) -> f64 {
        self.round_time
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds
    }

    pub fn model(&self) -> &SoftmaxModel {
        &self.model
    }

    pub fn workers(&self) -> &[LabeledDataset] {
        &self.workers
    }

    pub fn plans(&self) -> Option<&[WorkerPlan]> {
        self.plans.as_deref()
    }

    fn target_plan(&self, m: usize, target: f64) -> Result<WorkerPlan> {
        let prob = EnergyMinProblem::new(self.cfg.devices[m], self.round_time, target)?;
        let sol = plan_energy_min(&prob)?;
        if !sol.feasible && !self.cfg.allow_fallback {
            return Err(Error::Config(format!(
                "worker {m} cannot meet outage target {target} within {} s and fallback is disabled",
                self.round_time
            )));
        }
        let plan = sol.plans[0];
        Ok(WorkerPlan {
            plan,
            target,
            feasible: sol.feasible,
            channel_outage: plan.outage(),
        })
    }

    /// Plans that do not depend on gradients; `None` for gradient-driven
    /// policies.
    fn fixed_plans(&self) -> Result<Option<Vec<WorkerPlan>>> {
        let m_total = self.cfg.num_workers();
        let plans = match &self.cfg.policy {
            PlanPolicy::EnergyMin { outage_targets } => (0..m_total)
                .map(|m| {
                    let target = outage_targets[if outage_targets.len() == 1 { 0 } else { m }];
                    self.target_plan(m, target)
                })
                .collect::<Result<Vec<_>>>()?,
            PlanPolicy::FromB { .. } => return Ok(None),
            PlanPolicy::PerfMax { .. } => {
                let prob = self.cfg.perf_problem()?.expect("perf_max policy");
                plans_for_deadline(&prob, self.round_time)?
                    .plans
                    .into_iter()
                    .map(|plan| WorkerPlan {
                        plan,
                        target: plan.outage(),
                        feasible: true,
                        channel_outage: plan.outage(),
                    })
                    .collect()
            }
            PlanPolicy::FullPower | PlanPolicy::IdealChannel => {
                let ideal = matches!(self.cfg.policy, PlanPolicy::IdealChannel);
                self.cfg
                    .devices
                    .iter()
                    .map(|d| {
                        let plan = full_power_plan(d, self.round_time)?;
                        Ok(WorkerPlan {
                            plan,
                            target: plan.outage(),
                            feasible: true,
                            channel_outage: if ideal { 0.0 } else { plan.outage() },
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(Some(plans))
    }

    fn local_passes(&self) -> Result<Vec<LocalPass>> {
        let cfg = &self.cfg;
        let round = self.round;
        let model = &self.model;
        self.workers
            .par_iter()
            .enumerate()
            .map(|(m, ds)| match cfg.batch_size {
                Some(bs) if bs < ds.len() => {
                    let mut rng =
                        RandomStream::keyed(cfg.seed, m as u64, round as u64, StreamPurpose::Batch);
                    model.local_pass(&ds.subset(&index::sample(&mut rng, ds.len(), bs).into_vec()))
                }
                _ => model.local_pass(ds),
            })
            .collect()
    }

    /// Executes one round: local gradients, encoding, channel, vote, update.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        if self.round >= self.rounds {
            return Err(Error::invalid("all rounds have been run"));
        }
        let passes = self.local_passes()?;

        let refresh = match &self.cfg.policy {
            PlanPolicy::FromB { refresh } => {
                self.plans.is_none() || *refresh == PlanRefresh::EveryRound
            }
            _ => false,
        };
        if refresh {
            let b = self.cfg.b.expect("validated");
            let plans = passes
                .iter()
                .enumerate()
                .map(|(m, pass)| {
                    let target = select_round_outage_target(&pass.gradient, b, self.cfg.min_outage)
                        .min(MAX_ENCODER_OUTAGE);
                    self.target_plan(m, target)
                })
                .collect::<Result<Vec<_>>>()?;
            self.plans = Some(plans);
        }
        let plans = self
            .plans
            .as_ref()
            .expect("plans are set before transmission");

        let seed = self.cfg.seed;
        let round = self.round;
        let algorithm = self.cfg.algorithm;
        let b = self.cfg.b;
        let sent: Vec<(SignVector, bool, usize)> = passes
            .par_iter()
            .zip(plans.par_iter())
            .enumerate()
            .map(|(m, (pass, wp))| {
                let mut rng = RandomStream::for_worker(seed, m, round);
                let (signs, clamped) = match algorithm {
                    Algorithm::SignSgd => (sign_quantize(&pass.gradient), 0),
                    Algorithm::StochasticSign => {
                        let cfg = StochasticSignConfig::new(
                            b.expect("validated"),
                            wp.channel_outage.min(MAX_ENCODER_OUTAGE),
                        )?;
                        let enc = stochastic_sign_encode(&pass.gradient, &cfg, &mut rng);
                        (enc.signs, enc.clamped)
                    }
                };
                let out = transmit_packet(&signs, wp.channel_outage, &mut rng);
                Ok((out.delivered, out.outage_occurred, clamped))
            })
            .collect::<Result<_>>()?;

        let packets: Vec<SignVector> = sent.iter().map(|s| s.0.clone()).collect();
        let vote = majority_vote(&packets)?;
        let updated = apply_sign_update(&self.model.as_vector(), &vote, self.cfg.eta)?;
        self.model.set_weights(&updated)?;
        self.round += 1;

        let weight = |m: usize| passes_len(&self.workers, &self.cfg, m) as f64;
        let denom: f64 = (0..self.workers.len()).map(weight).sum();
        let train_loss = passes
            .iter()
            .enumerate()
            .map(|(m, p)| p.loss * weight(m))
            .sum::<f64>()
            / denom;
        let train_accuracy = passes
            .iter()
            .enumerate()
            .map(|(m, p)| p.accuracy * weight(m))
            .sum::<f64>()
            / denom;

        let evaluate = self.round == self.rounds
            || (self.cfg.eval_every > 0 && self.round.is_multiple_of(self.cfg.eval_every));
        let test = if evaluate {
            Some(self.model.evaluate(self.test)?)
        } else {
            None
        };

        Ok(RoundRecord {
            round: self.round,
            model_time: self.round as f64 * self.round_time,
            train_loss,
            train_accuracy,
            test_loss: test.map(|e| e.loss),
            test_accuracy: test.map(|e| e.accuracy),
            outages: sent.iter().map(|s| s.1).collect(),
            energies: plans.iter().map(|p| p.plan.round_energy()).collect(),
            outage_targets: plans.iter().map(|p| p.target).collect(),
            fallbacks: plans.iter().map(|p| !p.feasible).collect(),
            clamped: sent.iter().map(|s| s.2).sum(),
        })
    }

    /// Runs every remaining round and summarizes.
    pub fn run(mut self) -> Result<ExperimentResult> {
        let mut records = Vec::with_capacity(self.rounds);
        while self.round < self.rounds {
            records.push(self.run_round()?);
        }
        let m_total = self.cfg.num_workers();
        let mut loss = 0.0;
        let mut correct = 0.0;
        let mut n = 0.0;
        for ds in &self.workers {
            let e = self.model.evaluate(ds)?;
            let len = ds.len() as f64;
            loss += e.loss * len;
            correct += e.accuracy * len;
            n += len;
        }
        let test = self.model.evaluate(self.test)?;
        let energy_per_worker: Vec<f64> = (0..m_total)
            .map(|m| records.iter().map(|r| r.energies[m]).sum())
            .collect();
        let summary = ExperimentSummary {
            rounds: self.rounds,
            round_time: self.round_time,
            final_train_loss: loss / n,
            final_train_accuracy: correct / n,
            final_test_loss: test.loss,
            final_test_accuracy: test.accuracy,
            mean_energy_per_worker: energy_per_worker.iter().sum::<f64>() / m_total as f64,
            energy_per_worker,
            outages_per_worker: (0..m_total)
                .map(|m| records.iter().filter(|r| r.outages[m]).count())
                .collect(),
            fallback_rounds_per_worker: (0..m_total)
                .map(|m| records.iter().filter(|r| r.fallbacks[m]).count())
                .collect(),
            clamped_total: records.iter().map(|r| r.clamped).sum(),
        };
        Ok(ExperimentResult { records, summary })
    }
}

fn passes_len(workers: &[LabeledDataset], cfg: &ExperimentConfig, m: usize) -> usize {
    let n = workers[m].len();
    cfg.batch_size.map_or(n, |bs| bs.min(n))
}

/// Partitions, trains for `floor(T_total / T_l)` rounds and summarizes.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<ExperimentResult> {
    Simulation::new(cfg.clone(), train, test)?.run()
}

/// One CSV row per round; per-worker columns are suffixed with the worker id.
pub fn write_rounds_csv<W: Write>(records: &[RoundRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let workers = records.first().map_or(0, |r| r.energies.len());
    let mut header: Vec<String> = [
        "round",
        "model_time_s",
        "train_loss",
        "train_accuracy",
        "test_loss",
        "test_accuracy",
        "clamped",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["outage", "energy_j", "outage_target", "fallback"] {
        header.extend((0..workers).map(|m| format!("{prefix}_{m}")));
    }
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in records {
        let mut row = vec![
            r.round.to_string(),
            r.model_time.to_string(),
            r.train_loss.to_string(),
            r.train_accuracy.to_string(),
            opt(r.test_loss),
            opt(r.test_accuracy),
            r.clamped.to_string(),
        ];
        row.extend(r.outages.iter().map(|&o| u8::from(o).to_string()));
        row.extend(r.energies.iter().map(f64::to_string));
        row.extend(r.outage_targets.iter().map(f64::to_string));
        row.extend(r.fallbacks.iter().map(|&f| u8::from(f).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
