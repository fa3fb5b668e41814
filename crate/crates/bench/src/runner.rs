//! Benchmark protocol: correctness gate, warmup, calibrated and interleaved
//! timed repetitions, final re-check.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use indconv::analysis::{cost_report, CostReport, DEFAULT_REF_SIZE};
use indconv::tensor::random_values;
use indconv::{
    build_patch_matrix, direct_conv, gemm_conv_into, gemm_only_into, indirect_conv_into, init_indirection_buffer,
    pack_filter, ConvError, ConvParams, FilterTensor, Im2colWorkspace, IndirectionBuffer, MatrixViewMut, NhwcTensor,
    PackedFilter, PatchMatrix, TileConfig, ZeroRow,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scrub::{CacheScrubber, ScrubMode, DEFAULT_LLC_MIB};
use crate::stats::summarize;
use crate::suite::{ConvShapeSpec, ModelTag};
use crate::timer::{inner_iterations, Clock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Indirect,
    GemmBased,
    GemmOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Indirect, Variant::GemmBased, Variant::GemmOnly];

    /// Name used in reports.
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Indirect => "indirect",
            Variant::GemmBased => "gemm_based",
            Variant::GemmOnly => "gemm_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    /// Accepts the CLI spellings (`gemm`, `gemm-only`) and the report names.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "indirect" => Ok(Variant::Indirect),
            "gemm" | "gemm_based" | "gemm-based" => Ok(Variant::GemmBased),
            "gemm-only" | "gemm_only" => Ok(Variant::GemmOnly),
            other => Err(format!(
                "unknown variant `{other}` (expected indirect, gemm or gemm-only)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub reps: usize,
    pub warmup: usize,
    pub lambda: f64,
    pub seed: u64,
    pub tile: TileConfig,
    pub scrub: ScrubMode,
    pub llc_bytes: usize,
    /// Minimum wall time of one sample; shorter calls are repeated.
    pub min_sample: Duration,
    pub ref_size: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            reps: 25,
            warmup: 3,
            lambda: 4.0,
            seed: 1,
            tile: TileConfig::default(),
            scrub: ScrubMode::Off,
            llc_bytes: DEFAULT_LLC_MIB << 20,
            min_sample: Duration::from_millis(1),
            ref_size: DEFAULT_REF_SIZE,
        }
    }
}

/// One `(shape, variant)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub shape: String,
    pub model: ModelTag,
    pub variant: Variant,
    pub mr: usize,
    pub nr: usize,
    pub reps: usize,
    pub warmup: usize,
    /// Calls per timed sample; above 1 when a single call is too short to time.
    pub inner_iterations: u32,
    pub scrub: ScrubMode,
    /// Seconds per call, one entry per repetition, in run order.
    pub runs_seconds: Vec<f64>,
    pub median_seconds: f64,
    /// GFLOPS at 2 FLOPs per MAC.
    pub median_gflops: f64,
    pub q20_gflops: f64,
    pub q80_gflops: f64,
    /// GFLOPS counting one FLOP per MAC.
    pub median_gflops_mac_convention: f64,
    /// Coefficient of variation of the per-call times.
    pub cv: f64,
    pub macs: u64,
    pub flops: u64,
    pub im2col_mem_ops: u64,
    pub im2col_bytes: u64,
    pub indirection_entries: u64,
    pub indirection_bytes: u64,
    pub patch_bytes: u64,
    pub predicted_speedup: f64,
    pub lambda: f64,
    pub ref_size: usize,
    /// Bytes actually held by the engine's patch matrix for this shape.
    pub measured_patch_bytes: u64,
    /// Bytes actually held by the live indirection buffer for this shape.
    pub measured_indirection_bytes: u64,
    pub measured_indirection_entries: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// 1x1 stride-1 unpadded: there is no im2col step, so GEMM-only and
    /// GEMM-based are the same computation.
    PointwiseNoIm2col,
}

impl SkipReason {
    pub fn code(self) -> &'static str {
        match self {
            SkipReason::PointwiseNoIm2col => "pointwise_no_im2col",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub shape: String,
    pub variant: Variant,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchOutcome {
    pub reports: Vec<BenchReport>,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("correctness gate failed for {shape}/{variant} ({stage}): element {index} is {got:e}, reference {want:e}")]
    CorrectnessGate {
        shape: String,
        variant: Variant,
        stage: &'static str,
        index: usize,
        got: f32,
        want: f32,
    },
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("{shape}: {source}")]
    Conv { shape: String, source: ConvError },
}

/// Everything one shape needs, allocated and initialized before timing.
struct Prepared<'a> {
    spec: &'a ConvShapeSpec,
    tile: TileConfig,
    input: NhwcTensor,
    packed: PackedFilter,
    ib: IndirectionBuffer,
    workspace: Im2colWorkspace,
    prebuilt: Option<PatchMatrix>,
    reference: NhwcTensor,
    outputs: Vec<NhwcTensor>,
}

impl<'a> Prepared<'a> {
    fn new(spec: &'a ConvShapeSpec, variants: &[Variant], config: &BenchConfig) -> Result<Self, ConvError> {
        let params: &ConvParams = &spec.params;
        let tile = config.tile;
        let input = NhwcTensor::fill_random(spec.input, config.seed)?;
        let filter = FilterTensor::fill_random(params, config.seed.wrapping_add(1))?;
        let bias = random_values(params.out_channels, config.seed.wrapping_add(2));
        let out_shape = spec.output();
        let reference = direct_conv(&input, &filter, Some(&bias), params)?;
        let packed = pack_filter(&filter, Some(&bias), params, tile)?;
        let ib = init_indirection_buffer(&input, ZeroRow::new(params.in_channels), params, out_shape, tile)?;
        let workspace = Im2colWorkspace::new(spec.input, params)?;
        let prebuilt = if variants.contains(&Variant::GemmOnly) && !params.is_pointwise_unit() {
            Some(build_patch_matrix(&input, params)?)
        } else {
            None
        };
        let outputs = variants
            .iter()
            .map(|_| NhwcTensor::zeros(out_shape))
            .collect::<Result<_, _>>()?;
        Ok(Prepared {
            spec,
            tile,
            input,
            packed,
            ib,
            workspace,
            prebuilt,
            reference,
            outputs,
        })
    }

    fn run(&mut self, slot: usize, v: Variant) -> Result<(), ConvError> {
        let params = &self.spec.params;
        let out = &mut self.outputs[slot];
        match v {
            Variant::Indirect => indirect_conv_into(&self.input, &self.packed, &self.ib, params, self.tile, out),
            Variant::GemmBased => {
                gemm_conv_into(&self.input, &self.packed, params, self.tile, &mut self.workspace, out)
            }
            Variant::GemmOnly => {
                let patch = self.prebuilt.as_ref().expect("gemm_only prepared");
                let (m, k) = (out.shape().pixels(), params.out_channels);
                let mut view = MatrixViewMut::new(out.data_mut(), m, k, k)?;
                gemm_only_into(patch, &self.packed, self.tile, &mut view)
            }
        }
    }

    /// Slices the approx scrubber reads back in before a timed call: the
    /// input, plus the prebuilt patch matrix that GEMM-only reads instead.
    fn operands(&self, v: Variant) -> Vec<&[f32]> {
        match (v, &self.prebuilt) {
            (Variant::GemmOnly, Some(p)) => vec![self.input.data(), p.matrix().data()],
            _ => vec![self.input.data()],
        }
    }

    fn check(&self, slot: usize, v: Variant, stage: &'static str) -> Result<(), BenchError> {
        let got = self.outputs[slot].data();
        let want = self.reference.data();
        if let Some(index) = got.iter().zip(want).position(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(BenchError::CorrectnessGate {
                shape: self.spec.name.clone(),
                variant: v,
                stage,
                index,
                got: got[index],
                want: want[index],
            });
        }
        Ok(())
    }
}

pub fn applicable(spec: &ConvShapeSpec, v: Variant) -> Option<SkipReason> {
    (v == Variant::GemmOnly && spec.is_pointwise_unit()).then_some(SkipReason::PointwiseNoIm2col)
}

/// Benchmarks every applicable variant on one shape.
///
/// Variants are interleaved within each repetition so that slow drift of the
/// host affects all of them alike. Each timed sample follows an untimed
/// priming call of the same variant.
pub fn run_shape(
    spec: &ConvShapeSpec,
    variants: &[Variant],
    config: &BenchConfig,
    clock: &dyn Clock,
) -> Result<BenchOutcome, BenchError> {
    if variants.is_empty() {
        return Err(BenchError::Config("no variants selected".into()));
    }
    if config.reps == 0 {
        return Err(BenchError::Config("reps must be at least 1".into()));
    }
    let conv_err = |source| BenchError::Conv {
        shape: spec.name.clone(),
        source,
    };

    let mut outcome = BenchOutcome::default();
    let mut active = Vec::new();
    for &v in variants {
        if active.contains(&v) {
            continue;
        }
        match applicable(spec, v) {
            Some(reason) => outcome.skipped.push(Skipped {
                shape: spec.name.clone(),
                variant: v,
                reason,
            }),
            None => active.push(v),
        }
    }
    if active.is_empty() {
        return Ok(outcome);
    }

    let mut prep = Prepared::new(spec, &active, config).map_err(conv_err)?;
    let cost: CostReport =
        cost_report(&spec.params, spec.input, config.tile, config.lambda, config.ref_size).map_err(conv_err)?;
    let mut scrubber = CacheScrubber::new(config.scrub, config.llc_bytes);

    for (slot, &v) in active.iter().enumerate() {
        prep.run(slot, v).map_err(conv_err)?;
        prep.check(slot, v, "before timing")?;
    }
    for _ in 0..config.warmup {
        for (slot, &v) in active.iter().enumerate() {
            prep.run(slot, v).map_err(conv_err)?;
        }
    }

    // Every timed sample is preceded by an untimed call of the same variant,
    // so each variant is measured in the cache state of back-to-back
    // invocations even though variants are interleaved.
    let mut inner = Vec::with_capacity(active.len());
    for (slot, &v) in active.iter().enumerate() {
        prep.run(slot, v).map_err(conv_err)?;
        scrubber.scrub(&prep.operands(v));
        let t0 = clock.now();
        prep.run(slot, v).map_err(conv_err)?;
        let t1 = clock.now();
        inner.push(inner_iterations(t1.saturating_sub(t0), config.min_sample));
    }

    let mut samples = vec![Vec::with_capacity(config.reps); active.len()];
    for rep in 0..config.reps {
        let last = rep + 1 == config.reps;
        for (slot, &v) in active.iter().enumerate() {
            prep.run(slot, v).map_err(conv_err)?;
            if last {
                prep.outputs[slot].data_mut().fill(f32::NAN);
            }
            scrubber.scrub(&prep.operands(v));
            let t0 = clock.now();
            for _ in 0..inner[slot] {
                prep.run(slot, v).map_err(conv_err)?;
            }
            let t1 = clock.now();
            samples[slot].push((t1.saturating_sub(t0)).as_secs_f64() / inner[slot] as f64);
        }
    }
    for (slot, &v) in active.iter().enumerate() {
        prep.check(slot, v, "final iteration")?;
    }

    let measured_patch_bytes = prep.workspace.allocated_bytes() as u64;
    let measured_indirection_bytes = prep.ib.allocated_bytes() as u64;
    for (slot, &v) in active.iter().enumerate() {
        let runs = std::mem::take(&mut samples[slot]);
        let time = summarize(&runs);
        let rates: Vec<f64> = runs.iter().map(|&t| gflops(cost.flops, t)).collect();
        let g = summarize(&rates);
        outcome.reports.push(BenchReport {
            shape: spec.name.clone(),
            model: spec.model,
            variant: v,
            mr: config.tile.mr,
            nr: config.tile.nr,
            reps: config.reps,
            warmup: config.warmup,
            inner_iterations: inner[slot],
            scrub: config.scrub,
            median_seconds: time.median,
            median_gflops: g.median,
            q20_gflops: g.q20,
            q80_gflops: g.q80,
            median_gflops_mac_convention: gflops(cost.macs, time.median),
            cv: time.cv,
            runs_seconds: runs,
            macs: cost.macs,
            flops: cost.flops,
            im2col_mem_ops: cost.im2col_mem_ops,
            im2col_bytes: cost.im2col_bytes,
            indirection_entries: cost.indirection_entries,
            indirection_bytes: cost.indirection_bytes,
            patch_bytes: cost.patch_matrix_bytes,
            predicted_speedup: cost.speedup_predicted,
            lambda: config.lambda,
            ref_size: config.ref_size,
            measured_patch_bytes,
            measured_indirection_bytes,
            measured_indirection_entries: prep.ib.len() as u64,
        });
    }
    Ok(outcome)
}

fn gflops(ops: u64, seconds: f64) -> f64 {
    if seconds > 0.0 {
        ops as f64 / seconds / 1e9
    } else {
        f64::INFINITY
    }
}

/// Runs [`run_shape`] over a whole suite, single-threaded.
pub fn run_benchmark(
    suite: &[ConvShapeSpec],
    variants: &[Variant],
    config: &BenchConfig,
    clock: &dyn Clock,
) -> Result<BenchOutcome, BenchError> {
    let mut all = BenchOutcome::default();
    for spec in suite {
        let o = run_shape(spec, variants, config, clock)?;
        all.reports.extend(o.reports);
        all.skipped.extend(o.skipped);
    }
    Ok(all)
}

/// Bytes the engine allocates for one shape: `(patch matrix, indirection
/// entries, indirection buffer)`. Nothing is run.
pub fn measured_footprint(spec: &ConvShapeSpec, tile: TileConfig) -> Result<(u64, u64, u64), ConvError> {
    let input = NhwcTensor::zeros(spec.input)?;
    let ws = Im2colWorkspace::new(spec.input, &spec.params)?;
    let ib = init_indirection_buffer(
        &input,
        ZeroRow::new(spec.params.in_channels),
        &spec.params,
        spec.output(),
        tile,
    )?;
    Ok((
        ws.allocated_bytes() as u64,
        ib.len() as u64,
        ib.allocated_bytes() as u64,
    ))
}
