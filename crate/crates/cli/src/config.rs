//! Flat JSON run configuration with dotted section keys.
//!
//! Every key is optional; missing keys take the defaults of the homogeneous
//! MNIST setup. Device keys accept either one number shared by all workers
//! or an array with one entry per worker.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fedsim_core::fl_sim::{
    Algorithm, ExperimentConfig, Partition, PlanPolicy, PlanRefresh, RoundTime,
};
use fedsim_core::DeviceProfile;
use serde_json::{Map, Number, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    EnergyMin,
    FromB,
    PerfMax,
    FullPower,
    IdealChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Energy and accuracy over outage targets and round times.
    EnergyGrid,
    /// Accuracy and the convergence proxy over round times and powers.
    DeadlineSweep,
    /// Label-skewed data: stochastic sign over `b` against full power and an
    /// error-free channel; also yields the mean-energy table.
    LabelSkew,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub algorithm: Algorithm,
    pub policy: PolicyKind,
    pub eta: f64,
    pub total_time: f64,
    pub round_time: RoundTime,
    /// One target shared by all workers, or one per worker.
    pub outage_target: Vec<f64>,
    pub refresh: PlanRefresh,
    pub b: Option<f64>,
    pub min_outage: f64,
    pub energy_budget: f64,
    pub power: f64,
    pub partition: Partition,
    pub samples_per_worker: usize,
    pub eval_every: usize,
    pub batch_size: Option<usize>,
    pub allow_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub kind: SweepKind,
    pub seeds: usize,
    pub outage_targets: Vec<f64>,
    pub round_times: Vec<f64>,
    /// Round deadlines for the accuracy-versus-deadline sweep.
    pub deadlines: Vec<f64>,
    pub b_values: Vec<f64>,
    pub powers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    /// Field name to per-worker values (length 1 means shared).
    pub device: BTreeMap<String, Vec<f64>>,
    pub train: TrainSection,
    pub data_dir: Option<String>,
    pub pixel_scale: f64,
    pub oracle_points: usize,
    pub analyze_trials: usize,
    pub sweep: SweepSection,
}

const DEVICE_FIELDS: [&str; 10] = [
    "alpha",
    "bandwidth",
    "cycles_per_bit",
    "data_bits",
    "f_max",
    "f_min",
    "noise_psd",
    "p_max",
    "p_min",
    "payload_bits",
];

fn device_field(p: &DeviceProfile, name: &str) -> f64 {
    match name {
        "alpha" => p.alpha,
        "bandwidth" => p.bandwidth,
        "cycles_per_bit" => p.cycles_per_bit,
        "data_bits" => p.data_bits,
        "f_max" => p.f_max,
        "f_min" => p.f_min,
        "noise_psd" => p.noise_psd,
        "p_max" => p.p_max,
        "p_min" => p.p_min,
        "payload_bits" => p.payload_bits,
        _ => unreachable!("unknown device field {name}"),
    }
}

fn set_device_field(p: &mut DeviceProfile, name: &str, v: f64) {
    match name {
        "alpha" => p.alpha = v,
        "bandwidth" => p.bandwidth = v,
        "cycles_per_bit" => p.cycles_per_bit = v,
        "data_bits" => p.data_bits = v,
        "f_max" => p.f_max = v,
        "f_min" => p.f_min = v,
        "noise_psd" => p.noise_psd = v,
        "p_max" => p.p_max = v,
        "p_min" => p.p_min = v,
        "payload_bits" => p.payload_bits = v,
        _ => unreachable!("unknown device field {name}"),
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DeviceProfile::default();
        Self {
            seed: 0,
            workers: 10,
            device: DEVICE_FIELDS
                .iter()
                .map(|f| (f.to_string(), vec![device_field(&d, f)]))
                .collect(),
            train: TrainSection {
                algorithm: Algorithm::SignSgd,
                policy: PolicyKind::EnergyMin,
                eta: 2e-5,
                total_time: 50.0,
                round_time: RoundTime::Fixed(0.15),
                outage_target: vec![0.1],
                refresh: PlanRefresh::EveryRound,
                b: None,
                min_outage: 1e-4,
                energy_budget: 100.0,
                power: 1.0,
                partition: Partition::Iid,
                samples_per_worker: 2000,
                eval_every: 0,
                batch_size: None,
                allow_fallback: true,
            },
            data_dir: None,
            pixel_scale: fedsim_core::fl_sim::DEFAULT_PIXEL_SCALE,
            oracle_points: 10_000,
            analyze_trials: 100_000,
            sweep: SweepSection {
                kind: SweepKind::All,
                seeds: 1,
                outage_targets: vec![0.05, 0.1, 0.2],
                round_times: vec![0.1, 0.15, 0.25],
                deadlines: vec![0.06, 0.08, 0.1, 0.12, 0.15, 0.2, 0.3, 0.5, 1.0],
                b_values: vec![0.005, 0.01, 0.1],
                powers: vec![1.0],
            },
        }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn as_f64(key: &str, v: &Value) -> CliResult<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad(key, format!("expected a number, got {v}")))
}

fn as_usize(key: &str, v: &Value) -> CliResult<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| bad(key, format!("expected a nonnegative integer, got {v}")))
}

fn as_str<'a>(key: &str, v: &'a Value) -> CliResult<&'a str> {
    v.as_str()
        .ok_or_else(|| bad(key, format!("expected a string, got {v}")))
}

fn as_bool(key: &str, v: &Value) -> CliResult<bool> {
    v.as_bool()
        .ok_or_else(|| bad(key, format!("expected true or false, got {v}")))
}

/// A number, or a nonempty array of numbers.
fn as_f64_list(key: &str, v: &Value) -> CliResult<Vec<f64>> {
    match v {
        Value::Array(items) if !items.is_empty() => items.iter().map(|x| as_f64(key, x)).collect(),
        Value::Array(_) => Err(bad(key, "empty array")),
        _ => Ok(vec![as_f64(key, v)?]),
    }
}

fn num(x: f64) -> Value {
    Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn list(xs: &[f64]) -> Value {
    if xs.len() == 1 {
        num(xs[0])
    } else {
        Value::Array(xs.iter().map(|&x| num(x)).collect())
    }
}

fn array(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

impl RunConfig {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> CliResult<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        let map = value
            .as_object()
            .ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
        Self::from_map(map)
    }

    pub fn from_map(map: &Map<String, Value>) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        for (key, v) in map {
            cfg.apply(key, v)?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &Value) -> CliResult<()> {
        if let Some(field) = key.strip_prefix("device.") {
            if !DEVICE_FIELDS.contains(&field) {
                return Err(unknown(key));
            }
            self.device.insert(field.to_string(), as_f64_list(key, v)?);
            return Ok(());
        }
        let t = &mut self.train;
        match key {
            "run.seed" => {
                self.seed = v
                    .as_u64()
                    .ok_or_else(|| bad(key, format!("expected a nonnegative integer, got {v}")))?
            }
            "run.workers" => self.workers = as_usize(key, v)?,
            "train.algorithm" => {
                t.algorithm = match as_str(key, v)? {
                    "sign_sgd" => Algorithm::SignSgd,
                    "stochastic_sign" => Algorithm::StochasticSign,
                    other => return Err(bad(key, format!("unknown algorithm {other:?}"))),
                }
            }
            "train.policy" => {
                t.policy = match as_str(key, v)? {
                    "energy_min" => PolicyKind::EnergyMin,
                    "from_b" => PolicyKind::FromB,
                    "perf_max" => PolicyKind::PerfMax,
                    "full_power" => PolicyKind::FullPower,
                    "ideal_channel" => PolicyKind::IdealChannel,
                    other => return Err(bad(key, format!("unknown policy {other:?}"))),
                }
            }
            "train.eta" => t.eta = as_f64(key, v)?,
            "train.total_time" => t.total_time = as_f64(key, v)?,
            "train.round_time" => {
                t.round_time = match v {
                    Value::String(s) if s == "optimize" => RoundTime::Optimize,
                    _ => RoundTime::Fixed(as_f64(key, v).map_err(|_| {
                        bad(key, format!("expected a number or \"optimize\", got {v}"))
                    })?),
                }
            }
            "train.outage_target" => t.outage_target = as_f64_list(key, v)?,
            "train.refresh" => {
                t.refresh = match as_str(key, v)? {
                    "every_round" => PlanRefresh::EveryRound,
                    "once" => PlanRefresh::Once,
                    other => return Err(bad(key, format!("unknown refresh mode {other:?}"))),
                }
            }
            "train.b" => {
                t.b = match v {
                    Value::Null => None,
                    _ => Some(as_f64(key, v)?),
                }
            }
            "train.min_outage" => t.min_outage = as_f64(key, v)?,
            "train.energy_budget" => t.energy_budget = as_f64(key, v)?,
            "train.power" => t.power = as_f64(key, v)?,
            "train.partition" => {
                t.partition = match as_str(key, v)? {
                    "iid" => Partition::Iid,
                    "by_label" => Partition::ByLabel,
                    other => return Err(bad(key, format!("unknown partition {other:?}"))),
                }
            }
            "train.samples_per_worker" => t.samples_per_worker = as_usize(key, v)?,
            "train.eval_every" => t.eval_every = as_usize(key, v)?,
            "train.batch_size" => {
                t.batch_size = match v {
                    Value::Null => None,
                    _ => Some(as_usize(key, v)?),
                }
            }
            "train.allow_fallback" => t.allow_fallback = as_bool(key, v)?,
            "data.dir" => {
                self.data_dir = match v {
                    Value::Null => None,
                    _ => Some(as_str(key, v)?.to_string()),
                }
            }
            "data.pixel_scale" => self.pixel_scale = as_f64(key, v)?,
            "solve.oracle_points" => self.oracle_points = as_usize(key, v)?,
            "analyze.trials" => self.analyze_trials = as_usize(key, v)?,
            "sweep.kind" => {
                self.sweep.kind = match as_str(key, v)? {
                    "energy_grid" => SweepKind::EnergyGrid,
                    "deadline" => SweepKind::DeadlineSweep,
                    "label_skew" => SweepKind::LabelSkew,
                    "all" => SweepKind::All,
                    other => return Err(bad(key, format!("unknown sweep kind {other:?}"))),
                }
            }
            "sweep.seeds" => self.sweep.seeds = as_usize(key, v)?,
            "sweep.outage_targets" => self.sweep.outage_targets = as_f64_list(key, v)?,
            "sweep.round_times" => self.sweep.round_times = as_f64_list(key, v)?,
            "sweep.deadlines" => self.sweep.deadlines = as_f64_list(key, v)?,
            "sweep.b_values" => self.sweep.b_values = as_f64_list(key, v)?,
            "sweep.powers" => self.sweep.powers = as_f64_list(key, v)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    /// Cross-key consistency that single-key parsing cannot see.
    fn check(&self) -> CliResult<()> {
        if self.workers == 0 {
            return Err(bad("run.workers", "must be >= 1"));
        }
        for (field, values) in &self.device {
            if values.len() != 1 && values.len() != self.workers {
                return Err(bad(
                    &format!("device.{field}"),
                    format!("{} values for {} workers", values.len(), self.workers),
                ));
            }
        }
        let n = self.train.outage_target.len();
        if n != 1 && n != self.workers {
            return Err(bad(
                "train.outage_target",
                format!("{n} values for {} workers", self.workers),
            ));
        }
        if self.sweep.seeds == 0 {
            return Err(bad("sweep.seeds", "must be >= 1"));
        }
        for (m, d) in self.devices().iter().enumerate() {
            d.validate()
                .map_err(|e| CliError::Config(format!("worker {m}: {e}")))?;
        }
        self.experiment()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn devices(&self) -> Vec<DeviceProfile> {
        (0..self.workers)
            .map(|m| {
                let mut p = DeviceProfile::default();
                for (field, values) in &self.device {
                    set_device_field(&mut p, field, values[if values.len() == 1 { 0 } else { m }]);
                }
                p
            })
            .collect()
    }

    pub fn policy(&self) -> PlanPolicy {
        let t = &self.train;
        match t.policy {
            PolicyKind::EnergyMin => PlanPolicy::EnergyMin {
                outage_targets: t.outage_target.clone(),
            },
            PolicyKind::FromB => PlanPolicy::FromB { refresh: t.refresh },
            PolicyKind::PerfMax => PlanPolicy::PerfMax {
                energy_budget: t.energy_budget,
                power: t.power,
            },
            PolicyKind::FullPower => PlanPolicy::FullPower,
            PolicyKind::IdealChannel => PlanPolicy::IdealChannel,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let t = &self.train;
        ExperimentConfig {
            algorithm: t.algorithm,
            policy: self.policy(),
            seed: self.seed,
            eta: t.eta,
            total_time: t.total_time,
            round_time: t.round_time,
            b: t.b,
            min_outage: t.min_outage,
            devices: self.devices(),
            partition: t.partition,
            samples_per_worker: t.samples_per_worker,
            eval_every: t.eval_every,
            batch_size: t.batch_size,
            allow_fallback: t.allow_fallback,
        }
    }

    /// Directory holding the four MNIST IDX files: `data.dir`, else
    /// `FEDSIM_DATA_DIR`, else `data/mnist` under the working directory.
    pub fn resolve_data_dir(&self) -> PathBuf {
        if let Some(d) = &self.data_dir {
            return PathBuf::from(d);
        }
        match std::env::var_os("FEDSIM_DATA_DIR") {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => PathBuf::from("data").join("mnist"),
        }
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_flat_json(&self) -> Map<String, Value> {
        let t = &self.train;
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("run.seed", Value::from(self.seed));
        put("run.workers", Value::from(self.workers));
        for (field, values) in &self.device {
            put(&format!("device.{field}"), list(values));
        }
        put(
            "train.algorithm",
            Value::from(match t.algorithm {
                Algorithm::SignSgd => "sign_sgd",
                Algorithm::StochasticSign => "stochastic_sign",
            }),
        );
        put(
            "train.policy",
            Value::from(match t.policy {
                PolicyKind::EnergyMin => "energy_min",
                PolicyKind::FromB => "from_b",
                PolicyKind::PerfMax => "perf_max",
                PolicyKind::FullPower => "full_power",
                PolicyKind::IdealChannel => "ideal_channel",
            }),
        );
        put("train.eta", num(t.eta));
        put("train.total_time", num(t.total_time));
        put(
            "train.round_time",
            match t.round_time {
                RoundTime::Fixed(x) => num(x),
                RoundTime::Optimize => Value::from("optimize"),
            },
        );
        put("train.outage_target", list(&t.outage_target));
        put(
            "train.refresh",
            Value::from(match t.refresh {
                PlanRefresh::EveryRound => "every_round",
                PlanRefresh::Once => "once",
            }),
        );
        put("train.b", t.b.map_or(Value::Null, num));
        put("train.min_outage", num(t.min_outage));
        put("train.energy_budget", num(t.energy_budget));
        put("train.power", num(t.power));
        put(
            "train.partition",
            Value::from(match t.partition {
                Partition::Iid => "iid",
                Partition::ByLabel => "by_label",
            }),
        );
        put(
            "train.samples_per_worker",
            Value::from(t.samples_per_worker),
        );
        put("train.eval_every", Value::from(t.eval_every));
        put(
            "train.batch_size",
            t.batch_size.map_or(Value::Null, Value::from),
        );
        put("train.allow_fallback", Value::from(t.allow_fallback));
        put(
            "data.dir",
            self.data_dir.clone().map_or(Value::Null, Value::from),
        );
        put("data.pixel_scale", num(self.pixel_scale));
        put("solve.oracle_points", Value::from(self.oracle_points));
        put("analyze.trials", Value::from(self.analyze_trials));
        put(
            "sweep.kind",
            Value::from(match self.sweep.kind {
                SweepKind::EnergyGrid => "energy_grid",
                SweepKind::DeadlineSweep => "deadline",
                SweepKind::LabelSkew => "label_skew",
                SweepKind::All => "all",
            }),
        );
        put("sweep.seeds", Value::from(self.sweep.seeds));
        put("sweep.outage_targets", array(&self.sweep.outage_targets));
        put("sweep.round_times", array(&self.sweep.round_times));
        put("sweep.deadlines", array(&self.sweep.deadlines));
        put("sweep.b_values", array(&self.sweep.b_values));
        put("sweep.powers", array(&self.sweep.powers));
        m
    }

    /// Pretty-printed flat JSON with sorted keys.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&Value::Object(self.to_flat_json()))
            .expect("config serializes");
        s.push('\n');
        s
    }
}

fn unknown(key: &str) -> CliError {
    let known = RunConfig::default().to_flat_json();
    let hint = known
        .keys()
        .filter(|k| k.split('.').next_back() == key.split('.').next_back())
        .next()
        .map(|k| format!(" (did you mean {k}?)"))
        .unwrap_or_default();
    CliError::Config(format!("{key}: unknown key{hint}"))
}
