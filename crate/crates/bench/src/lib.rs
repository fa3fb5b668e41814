//! Benchmark harness for the `indconv` convolution back-ends.
//!
//! Runs the indirect, GEMM-based and GEMM-only variants over model shape
//! suites, gates every variant on bit-exact agreement with the direct
//! reference, and reports median and 20%/80% quantile GFLOPS together with
//! the analytical cost model.

pub mod ordering;
pub mod pin;
pub mod report;
pub mod runner;
pub mod scrub;
pub mod stats;
pub mod suite;
pub mod timer;

pub use report::{emit_report, load_json_report, ReportFile, ReportFormat, CSV_HEADER};
pub use runner::{run_benchmark, run_shape, BenchConfig, BenchError, BenchOutcome, BenchReport, Variant};
pub use scrub::{scrub_caches, ScrubMode};
pub use suite::{builtin_suite, census, load_shape_suite, ConvShapeSpec, ModelTag};
