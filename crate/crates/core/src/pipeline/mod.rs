//! Artifact-driven orchestration of the planning stages.
//!
//! Each stage reads its inputs from and writes its outputs to the configured
//! output directory, so stages can be run one by one or all at once with
//! [`cmd_pipeline`]:
//!
//! | stage      | reads                                  | writes                          |
//! |------------|----------------------------------------|---------------------------------|
//! | `distill`  | model                                  | `batch.json` + `.bin`           |
//! | `sense`    | model, batch                           | `sensitivity.json`              |
//! | `profile`  | model                                  | `profile.csv`, `profile.json`   |
//! | `plan`     | sensitivity, profile                   | `plan.json`                     |
//! | `quantize` | model, plan, batch                     | `quantized.json` + `.bin`       |
//! | `eval`     | model, quantized, batch                | `eval.json`                     |
//! | report     | all of the above                       | `report.json`, `report.csv`     |
//!
//! The report layout is described by `schema/report.schema.json`.

mod config;
mod eval;
mod report;
mod stages;

pub use config::{ActivationBits, EvalConfig, Overrides, PipelineConfig, PlannerSection, SensitivityConfig};
pub use eval::{eval_dataset, evaluate, score, EvalEntry, EvalReport};
pub use report::{build_report, Hardware, Report, ReportCsvRow, ReportRow, Settings, StepCycles, Totals, REPORT_FORMAT, REPORT_VERSION};
pub use stages::*;
