//! Search and retraining loops.

mod checkpoint;
mod config;
mod metrics;
mod rank;
mod retrain;
mod search;
mod train;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{
    ControllerSettings, DataSettings, LossSettings, RankPolicy, RetrainSettings, RewardSettings, RunConfig,
    SearchSettings, SupernetSettings, TrainSettings,
};
pub use metrics::{metrics_csv, parse_metrics_csv, parse_traces_jsonl, traces_jsonl, MetricsRow, Phase, SampleRecord, CSV_HEADER};
pub use rank::{model_size_csv, model_sizes, rank_architectures, ModelSize, RankedArch, MODEL_SIZE_HEADER};
pub use retrain::{retrain_fixed, RetrainResult};
pub use search::{
    random_arch, search, search_with, AccuracyOracle, EvalContext, LatencyCache, PhaseAudit, SearchOutcome,
    SearchState, SharedWeightAccuracy,
};
pub use train::{accuracy_on, evaluate, predict, train_step};
