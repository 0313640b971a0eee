//! End-to-end federated training over simulated fading uplinks.

pub mod data;
pub mod model;
pub mod sim;

pub use data::{
    load_idx_dataset, load_idx_dataset_scaled, parse_idx, partition_by_label, partition_iid,
    LabeledDataset, DEFAULT_PIXEL_SCALE,
};
pub use model::{local_gradient, Evaluation, LocalPass, SoftmaxModel};
pub use sim::{
    num_rounds, run_experiment, select_round_outage_target, write_rounds_csv, Algorithm,
    ExperimentConfig, ExperimentResult, ExperimentSummary, Partition, PlanPolicy, PlanRefresh,
    RoundRecord, RoundTime, Simulation, WorkerPlan,
};
