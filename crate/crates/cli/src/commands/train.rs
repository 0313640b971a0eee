//! `train`: one federated run on MNIST.

use std::path::Path;

use fedsim_core::fl_sim::{
    load_idx_dataset_scaled, run_experiment, write_rounds_csv, ExperimentConfig, ExperimentResult,
    ExperimentSummary, LabeledDataset,
};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

pub struct Mnist {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn load_mnist_from(dir: &Path, pixel_scale: f64) -> CliResult<Mnist> {
    for name in [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS] {
        if !dir.join(name).is_file() {
            return Err(CliError::Io(format!(
                "{} not found; set data.dir or FEDSIM_DATA_DIR, or run scripts/fetch_mnist.sh",
                dir.join(name).display()
            )));
        }
    }
    Ok(Mnist {
        train: load_idx_dataset_scaled(
            &dir.join(TRAIN_IMAGES),
            &dir.join(TRAIN_LABELS),
            pixel_scale,
        )?,
        test: load_idx_dataset_scaled(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS), pixel_scale)?,
    })
}

pub fn load_mnist(cfg: &RunConfig) -> CliResult<Mnist> {
    load_mnist_from(&cfg.resolve_data_dir(), cfg.pixel_scale)
}

/// `summary.json`: the config echo next to the run summary.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary<'a> {
    pub config: Map<String, Value>,
    pub summary: &'a ExperimentSummary,
}

pub fn run(exp: &ExperimentConfig, data: &Mnist) -> CliResult<ExperimentResult> {
    Ok(run_experiment(exp, &data.train, &data.test)?)
}

pub fn rounds_csv(result: &ExperimentResult) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_rounds_csv(&result.records, &mut buf)?;
    Ok(buf)
}
