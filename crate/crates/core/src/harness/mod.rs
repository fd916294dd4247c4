//! Experiment orchestration: configuration, dataset generation, training,
//! evaluation sweeps and the CSV result tables.
//!
//! Output files:
//!
//! * `gain_vs_tau.csv` - `predictor,rule,velocity_mps,tau,mean_norm_gain,n`
//! * `gain_vs_velocity.csv` - `predictor,rule,velocity_mps,mean_norm_gain,n`
//! * `overhead.csv` - `rule,velocity_mps,overhead_fraction`
//!
//! Every output byte is a function of the configuration and its master seed.

mod config;
mod data;
mod metrics;
mod run;

pub use config::ExperimentConfig;
pub use data::{read_split, synth_split, synth_trace, trace_seed, write_dataset, Split, TraceRecord, CONFIG_FILE, MANIFEST_FILE};
pub use metrics::{
    aggregate, EpisodeResult, Metrics, MetricsRecord, OverheadRow, GAIN_VS_TAU_FILE, GAIN_VS_VELOCITY_FILE, OVERHEAD_FILE,
};
pub use run::{
    checkpoint_file, cmd_eval, cmd_generate, cmd_sweep, cmd_train, evaluate, experiment_id, load_models, loss_file, sweep,
    train_learned, write_loss_csv, LearnedModels,
};
