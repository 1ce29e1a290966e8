//! Experiment harness: configuration, the synthetic dataset, training runs
//! and ablation reports.

pub mod config;
pub mod dataset;
pub mod run;

pub use config::{
    table3_rows, table4_grid, AblationConfig, DataConfig, EvalConfig, ExperimentConfig, SEED_ENV,
};
pub use dataset::{
    generate_dataset, load_dataset, synthesize_dataset, Dataset, Example, Manifest, Split,
};
pub use run::{
    evaluate, load_bundle, render_ablation_table, run_ablation, run_experiment, save_bundle,
    Bundle, BundleMeta, EvalReport, RunReport,
};
