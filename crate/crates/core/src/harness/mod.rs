//! Seeded experiment orchestration: configuration, the 2D demo, multi-trial
//! MNIST runs, heterogeneity sweeps and result summaries.

mod config;
mod demo;
mod experiment;
mod record;
mod summary;

pub use config::{DatasetKind, ExperimentConfig, FedAvgWeighting, PartitionName, MAX_DEPTH};
pub use demo::{
    classify, demo2d_seed, run_demo2d, run_demo2d_with, write_demo_csv, Demo2dRecord, DemoModels, DemoOutcome,
    DEMO_ACTIVATION, DEMO_TEST, DEMO_TRAIN, SUCCESS_THRESHOLD,
};
pub use experiment::{
    client_widths, evaluate_methods, fused_model, load_default_mnist, mnist_dir, run_alpha_sweep,
    run_alpha_sweep_on, run_experiment, run_experiment_on, train_clients, RunOptions, DATA_DIR_ENV,
};
pub use record::{
    load_records_csv, read_records_csv, read_records_jsonl, save_records_csv, write_records_csv,
    write_records_jsonl, ResultRecord,
};
pub use summary::{find_row, format_table, summarize, write_summary_csv, SummaryRow};
