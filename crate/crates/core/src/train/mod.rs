//! Joint optimization, evaluation and model persistence.

pub mod adam;
pub mod config;
pub mod metrics;
pub mod model_io;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use config::{Components, TrainConfig, Variant, ABLATIONS, SWEEP};
pub use metrics::{
    auc, final_mean_auc, final_rows, uniformity, write_metrics, MetricsRow, ALL_SCENARIOS,
    METRICS_HEADER,
};
pub use model_io::{load_model, read_model, save_model, write_model, SavedModel};
pub use trainer::{
    build_loss, evaluate, init_stream, plan_step, total_loss, train, train_step, Candidate,
    Diagnostics, EpochStats, Evaluation, IndividualPlan, LossBreakdown, PlannedAnchor,
    PlannedTriple, StepLoss, StepPlan, StepReport, Streams, TrainOutput, TrainState,
};
