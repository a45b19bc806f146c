//! Cosine scoring, EER, minDCF and trial-list evaluation.

pub mod metrics;
pub mod report;
pub mod trials;

pub use metrics::{compute_eer, compute_min_dcf, cosine_score, DcfParams, ScoredTrial, Sweep};
pub use report::{evaluate_trials, DurationBucket, EvalOptions, EvalReport, MetricRow};
pub use trials::{format_scores, Trial, TrialSet};
