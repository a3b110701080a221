//! Config-driven experiment runner.
//!
//! A JSON [`ExperimentConfig`] names one method on one experiment. The
//! commands read and write a fixed layout under an output root:
//!
//! ```text
//! <out>/<experiment>/data/<seed>/{train_in,train_out,test_in,test_<name>}.csv, manifest.json
//! <out>/<experiment>/<label>/<seed>/{params,ensemble,logs,scores,metrics,heatmaps}/
//! <out>/<experiment>/<label>/summary.json
//! <out>/<experiment>/report.{json,md}
//! ```
//!
//! Every file carries the config (or data) hash and seed, and nothing written
//! depends on wall-clock time or absolute paths, so reruns are byte-identical.

mod commands;
mod config;
mod report;

pub use commands::{
    build_data, cmd_eval, cmd_generate, cmd_heatmap, cmd_train, evaluate, load_data, load_ensemble,
    load_final_params, read_heatmap_csv, read_scores, run_all, seeded_model, train_on, DataFile, DataManifest,
    HeatmapMeta, Layout, RunMetrics, SeedData, TrainRecord, TEST_IN,
};
pub use config::{
    generate_moons, generate_ood, Anchor, DataConfig, DataReference, EvalConfig, ExperimentConfig, HeatmapConfig,
    Method, MoonsSpec, NamedOod, OodSpec, OptimizerConfig, Scale, CONFIG_VERSION,
};
pub use report::{
    cmd_report, mean_stderr, summarize_label, write_json, AggregateRow, LabelSummary, Report, ReportRow, RunEntry,
};
