//! The experiment pipeline: configuration, the collect / fit / pretrain /
//! finetune / eval phases, learning-curve comparison, the half-moons benchmark, oracle self-tests and
//! operation counts.

pub mod artifacts;
pub mod config;
pub mod opcount;
pub mod phases;
pub mod selftest;
pub mod trend;

pub use artifacts::{check_meta, read_csv, write_csv, write_csv_tagged, ArtifactMeta, MetricsLog, MetricsRecord};
pub use config::{CollectConfig, ExperimentConfig, CONFIG_SCHEMA_VERSION};
pub use opcount::{op_count_sweep, op_counts, OpCountRow};
pub use phases::{
    cmd_collect, cmd_eval, cmd_finetune, cmd_fit, cmd_halfmoons, cmd_pretrain, collect_dataset, mean_curve,
    report_rows, CollectSummary, EvalSummary, EvalTarget, FinetuneSummary, MeanCurveRow, OutLayout, PretrainSummary,
    ReportRow, SnapshotRow,
};
pub use selftest::{run_all as cmd_selftest, SuiteResult};
pub use trend::{compare_arms, curve_trend, ArmComparison, CurveTrend};
