//! Library side of the `rf-uda` command: configuration parsing and the
//! `train`, `eval`, `ablate` and `synth` subcommands.

pub mod config;
pub mod run;

pub use config::{AblationPlan, ArchSettings, DataSource, RunConfig, KEYS, RESOLVED_CONFIG_FILE};
pub use run::{
    ablation_variants, exit_code, load_data, run_ablation, run_eval, run_synth, run_train, train_split,
    AblationRow, TrainOutcome, Variant, ABLATION_CSV_FILE, ABLATION_CSV_HEADER, CHECKPOINT_FILE,
    CONFUSION_CSV_FILE, EPOCH_CSV_FILE, EVAL_CSV_FILE,
};
