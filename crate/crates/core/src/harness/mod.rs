//! Experiment configuration, runs and result artifacts.

mod config;
mod experiment;
mod output;

pub use config::{parse_config, ConfigFileError, ExperimentConfig};
pub use experiment::{
    run_experiment, EbmRecord, HarnessError, OptimalRecord, OutputFormat, RunOptions, RunRecord, RunReport,
};
pub use output::{emit_heatmap, fmt_num, is_lower_rectangle, mask_size, masks_fuzzy_equal, render_pgm, solution_csv};
