//! Evaluation harness: ranking metrics, detection protocols, rank
//! statistics, synthetic long-tail fixtures and timing.

pub mod detection;
pub mod metrics;
pub mod rank_stats;
pub mod synthetic;
pub mod timing;

pub use detection::{
    misclassification_detection, miscls_targets, ood_detection, permute_features, random_matched, InstanceMetric,
    LabelMetric, MisclsInstance, MisclsResult,
};
pub use metrics::{auroc, auroc_pairwise, linear_fit, precision_recall_at_k, DetectionSample, LinearFit, PrecisionRecall, RankedPrediction};
pub use rank_stats::{geometric_fit, rank_statistics, rank_statistics_beam, write_rank_csv, RankStat};
pub use synthetic::{branching_for, synthetic_longtail, synthetic_queries, synthetic_query};
pub use timing::{scaling_sweep, timing_comparison, SweepPoint, Timing};
