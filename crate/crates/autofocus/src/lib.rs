//! Online autofocus baseline: the Vollath-4/5, STD and NVAR focus criteria,
//! a simulated stage that counts acquisitions, and Brent's method focus
//! search with a timing benchmark.

pub mod bench;
pub mod criteria;
pub mod error;
pub mod search;
pub mod stage;

pub use bench::{bench_autofocus, format_bench_csv, BenchConfig, BenchRow};
pub use criteria::{argmax_by_z, focus_metric, focus_metric_with, FocusCriterion, MeanConvention};
pub use error::{AutofocusError, Result};
pub use search::{brent_maximize, brent_search, Maximum, SearchConfig, SearchResult};
pub use stage::{focus_curve, StageSource, VirtualStage, DEFAULT_LATENCY_S};
