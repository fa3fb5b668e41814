use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use indconv::TileConfig;
use indconv_bench::ordering::{check_orderings, OrderingSlack};
use indconv_bench::pin::pin_to_core;
use indconv_bench::report::{emit_report, write_report};
use indconv_bench::runner::{run_shape, BenchConfig, BenchError, BenchOutcome, Variant};
use indconv_bench::suite::{load_shape_suite, SuiteError};
use indconv_bench::timer::MonotonicClock;
use indconv_bench::{ReportFormat, ScrubMode};

const EXIT_USAGE: u8 = 1;
const EXIT_GATE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScrubArg {
    Off,
    Approx,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

/// Benchmark indirect, GEMM-based and GEMM-only convolution over a shape suite.
#[derive(Debug, Parser)]
#[command(name = "bench", version)]
struct Cli {
    /// Builtin suite (resnet18, squeezenet10) or path to a suite file.
    #[arg(long, default_value = "resnet18")]
    suite: String,
    /// Comma-separated variants: indirect, gemm, gemm-only.
    #[arg(long, default_value = "indirect,gemm,gemm-only")]
    variants: String,
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u32).range(1..))]
    reps: u32,
    #[arg(long, default_value_t = 3)]
    warmup: u32,
    #[arg(long, value_enum, default_value_t = ScrubArg::Off)]
    scrub: ScrubArg,
    /// Machine balance in FLOPs per load, used by the speedup predictor.
    #[arg(long, default_value_t = 4.0)]
    lambda: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Output file; stdout when omitted or `-`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    mr: usize,
    #[arg(long, default_value_t = 8)]
    nr: usize,
    /// Last-level cache size in MiB; approx scrubbing streams 8x this.
    #[arg(long, default_value_t = indconv_bench::scrub::DEFAULT_LLC_MIB)]
    llc_mib: usize,
    /// Pin the process to this core. Failure only warns.
    #[arg(long)]
    pin_core: Option<usize>,
    /// Minimum duration of one timed sample, in microseconds.
    #[arg(long, default_value_t = 1000)]
    min_sample_us: u64,
    /// Print relative-performance checks to stderr after the run.
    #[arg(long)]
    check_ordering: bool,
    #[arg(long, default_value_t = 1.10)]
    indirect_slack: f64,
    #[arg(long, default_value_t = 1.0)]
    gemm_only_slack: f64,
}

fn parse_variants(s: &str) -> Result<Vec<Variant>, String> {
    let mut out = Vec::new();
    for item in s.split(',') {
        let item = item.trim();
        if item.is_empty() {
            return Err("empty entry in --variants".into());
        }
        let v: Variant = item.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let variants = match parse_variants(&cli.variants) {
        Ok(v) => v,
        Err(e) => return usage(e),
    };
    let tile = match TileConfig::new(cli.mr, cli.nr) {
        Ok(t) => t,
        Err(e) => return usage(e),
    };
    if !(cli.lambda >= 0.0 && cli.lambda.is_finite()) {
        return usage("--lambda must be a non-negative number");
    }
    let suite = match load_shape_suite(&cli.suite) {
        Ok(s) => s,
        Err(e @ SuiteError::Io { .. }) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_IO);
        }
        Err(e) => return usage(e),
    };
    let scrub = match cli.scrub {
        ScrubArg::Off => ScrubMode::Off,
        ScrubArg::Approx => ScrubMode::Approx,
    };
    let config = BenchConfig {
        reps: cli.reps as usize,
        warmup: cli.warmup as usize,
        lambda: cli.lambda,
        seed: cli.seed,
        tile,
        scrub,
        llc_bytes: cli.llc_mib << 20,
        min_sample: Duration::from_micros(cli.min_sample_us),
        ..BenchConfig::default()
    };

    if let Some(core) = cli.pin_core {
        if let Err(e) = pin_to_core(core) {
            eprintln!("warning: could not pin to core {core}: {e}");
        }
    }

    let clock = MonotonicClock::new();
    let mut all = BenchOutcome::default();
    for spec in &suite {
        match run_shape(spec, &variants, &config, &clock) {
            Ok(o) => {
                for r in &o.reports {
                    eprintln!(
                        "{:<22} {:<10} median {:>8.3} GFLOPS  [{:.3}, {:.3}]  x{}",
                        r.shape, r.variant, r.median_gflops, r.q20_gflops, r.q80_gflops, r.inner_iterations
                    );
                }
                for s in &o.skipped {
                    eprintln!("{:<22} {:<10} skipped ({})", s.shape, s.variant, s.reason.code());
                }
                all.reports.extend(o.reports);
                all.skipped.extend(o.skipped);
            }
            Err(e @ BenchError::CorrectnessGate { .. }) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_GATE);
            }
            Err(e) => return usage(e),
        }
    }
    if all.reports.is_empty() {
        return usage("no applicable (shape, variant) pairs");
    }

    if cli.check_ordering {
        let slack = OrderingSlack {
            gemm_only_slack: cli.gemm_only_slack,
            indirect_slack: cli.indirect_slack,
        };
        for c in check_orderings(&suite, &all.reports, slack) {
            let tag = if c.passed { "ok" } else { "VIOLATED" };
            eprintln!("{:<22} {:?} ratio {:.3} {tag}", c.shape, c.claim, c.ratio);
        }
    }

    let format = match cli.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    let result = match cli.out.as_deref() {
        Some(p) if p.as_os_str() != "-" => emit_report(&all.reports, &all.skipped, format, p),
        _ => {
            let mut stdout = std::io::stdout().lock();
            write_report(&all.reports, &all.skipped, format, &mut stdout).and_then(|()| {
                stdout.flush().map_err(|err| indconv_bench::report::ReportError::Io {
                    path: "<stdout>".into(),
                    err,
                })
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_IO)
        }
    }
}
