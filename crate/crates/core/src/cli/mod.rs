//! Operator surface: JSON run configuration, the metrics CSV, the binary
//! checkpoint, and the subcommands behind the `biredux` binary.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod run;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{parse_config, parse_config_str, DataConfig, EvalConfig, ModelConfig, OrthoDemoConfig, RunConfig, WhitenCheckConfig};
pub use metrics::{metrics_header, write_metrics_csv, MetricsRecord};
pub use run::{
    diagnose, heldout_layer_features, holdout_split, load_data, load_splits, ortho_demo, run_subcommand, run_training, whiten_check, DiagnosticsReport,
    Splits, Subcommand, TrainOutcome,
};
