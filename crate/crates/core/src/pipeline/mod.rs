//! Composition of the trained stages, the error metrics, stagewise experiment runs
//! with manifests, and CSV/SVG emission.

mod config;
mod experiment;
mod manifest;
mod metrics;
mod plots;
mod surrogate;
#[cfg(test)]
mod tests;

pub use config::{
    CaeConfig, DataConfig, EvaluateConfig, ExperimentConfig, HyperMode, NfConfig, ReservoirConfig, ValidationObjective,
};
pub use experiment::{
    replot, EvaluationOutput, EvaluationSummary, FieldExperiment, Pipeline, RcTrainSummary, SetSummary, Stage,
};
pub use manifest::{sha256_hex, ArtifactRecord, RunManifest, StageFailure, MANIFEST_FILE};
pub use metrics::{
    evaluate_dataset, metric_cae, metric_caercnf, metric_rcnf, DatasetEvaluation, MetricKind, MetricSeries,
};
pub use plots::{emit_plots, field_csv, field_from_csv, heatmap_svg, line_svg, FieldExport, Line, LinePlot};
pub use surrogate::{encode_dataset, rollout, rollout_seed, RolloutOutput, SurrogateModel};

/// Observed snapshots that synchronise the reservoir before closed-loop prediction.
pub const WARMUP: usize = 10;
