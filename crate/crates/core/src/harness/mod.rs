//! Submission validation, causality auditing, batch evaluation and reports.

pub mod evaluate;
pub mod probe;
pub mod report;
pub mod validate;

pub use evaluate::{dataset_sample_rate, evaluate_run, produce_submission, read_records, records_to_csv, write_records, EvaluateOptions, EvaluationRun};
pub use probe::{causality_probe, ProbeConfig, ProbeReport};
pub use report::{analysis_report, leaderboard, LeaderboardRow, StatsReport};
pub use validate::{validate_submission, SubmissionManifest, ValidationReport};
