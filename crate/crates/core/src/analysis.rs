//! Analytical cost model: MAC/FLOP counts, im2col traffic, patch-matrix vs
//! indirection-buffer footprint, and the roofline speedup predictor.
//!
//! Counts cover the whole batch (`M = N * H_out * W_out` output pixels).

use crate::error::Result;
use crate::gemm::TileConfig;
use crate::indirect::RowRef;
use crate::tensor::{conv_output_shape, ConvParams, Shape4};

/// Width of one indirection-buffer entry in this build.
pub const DEFAULT_REF_SIZE: usize = std::mem::size_of::<RowRef>();

const F32_BYTES: usize = std::mem::size_of::<f32>();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopCount {
    /// `N * K * C * H_out * W_out * R * S`.
    pub macs: u64,
    /// Two FLOPs (multiply + add) per MAC. This is the GFLOPS convention.
    pub flops: u64,
}

pub fn flop_count(params: &ConvParams, out_shape: Shape4) -> FlopCount {
    let macs = out_shape.pixels() as u64 * params.out_channels as u64 * params.reduction_len() as u64;
    FlopCount { macs, flops: 2 * macs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Im2colOverhead {
    /// `2 * C * M * R * S`: one load and one store per patch element.
    pub formula_mem_ops: u64,
    /// Whether the GEMM-based engine actually runs the transformation.
    /// 1x1 stride-1 unpadded convolutions skip it.
    pub performed: bool,
}

impl Im2colOverhead {
    /// Memory operations actually incurred by the engine.
    pub fn mem_ops(&self) -> u64 {
        if self.performed {
            self.formula_mem_ops
        } else {
            0
        }
    }
}

pub fn im2col_overhead(params: &ConvParams, out_shape: Shape4) -> Im2colOverhead {
    Im2colOverhead {
        formula_mem_ops: 2 * out_shape.pixels() as u64 * params.reduction_len() as u64,
        performed: !params.is_pointwise_unit(),
    }
}

/// Predicted speedup of indirect over GEMM-based convolution, `1 + 2*lambda/K`,
/// where `lambda` is the machine's FLOPs-per-load balance.
pub fn roofline_speedup(lambda: f64, k_out: usize) -> f64 {
    assert!(lambda >= 0.0, "lambda must be non-negative");
    assert!(k_out >= 1, "K must be positive");
    1.0 + 2.0 * lambda / k_out as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    /// `M * R * S * C * 4`, whether or not the engine allocates it.
    pub patch_matrix_bytes: u64,
    /// What the GEMM-based engine allocates (0 on the 1x1 stride-1 path).
    pub engine_patch_bytes: u64,
    /// `ceil(M / mr) * mr * R * S`.
    pub indirection_entries: u64,
    pub indirection_bytes: u64,
    /// `patch_matrix_bytes / indirection_bytes`.
    pub ratio: f64,
}

pub fn footprint_compare(params: &ConvParams, input: Shape4, mr: usize, ref_size: usize) -> Result<Footprint> {
    let out = conv_output_shape(params, input)?;
    let m = out.pixels() as u64;
    let patch = m * params.reduction_len() as u64 * F32_BYTES as u64;
    let entries = m.div_ceil(mr as u64) * mr as u64 * params.kernel_elements() as u64;
    let ind = entries * ref_size as u64;
    Ok(Footprint {
        patch_matrix_bytes: patch,
        engine_patch_bytes: if params.is_pointwise_unit() { 0 } else { patch },
        indirection_entries: entries,
        indirection_bytes: ind,
        ratio: patch as f64 / ind as f64,
    })
}

/// Everything the cost model says about one convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub macs: u64,
    pub flops: u64,
    pub im2col_mem_ops: u64,
    pub im2col_bytes: u64,
    pub indirection_entries: u64,
    pub indirection_bytes: u64,
    pub patch_matrix_bytes: u64,
    pub speedup_predicted: f64,
}

pub fn cost_report(
    params: &ConvParams,
    input: Shape4,
    tile: TileConfig,
    lambda: f64,
    ref_size: usize,
) -> Result<CostReport> {
    let out = conv_output_shape(params, input)?;
    let flops = flop_count(params, out);
    let overhead = im2col_overhead(params, out);
    let fp = footprint_compare(params, input, tile.mr, ref_size)?;
    // Without a transformation there is nothing for indirection to save.
    let speedup = if overhead.performed {
        roofline_speedup(lambda, params.out_channels)
    } else {
        1.0
    };
    Ok(CostReport {
        macs: flops.macs,
        flops: flops.flops,
        im2col_mem_ops: overhead.mem_ops(),
        im2col_bytes: overhead.mem_ops() / 2 * F32_BYTES as u64,
        indirection_entries: fp.indirection_entries,
        indirection_bytes: fp.indirection_bytes,
        patch_matrix_bytes: fp.engine_patch_bytes,
        speedup_predicted: speedup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(n: usize, h: usize, w: usize, k: usize) -> Shape4 {
        Shape4::new(n, h, w, k).unwrap()
    }

    #[test]
    fn mac_counts() {
        assert_eq!(flop_count(&ConvParams::new(1, 1, 1, 1), out(1, 1, 1, 1)).macs, 1);
        let p = ConvParams::new(3, 3, 64, 64).with_uniform_padding(1);
        let f = flop_count(&p, out(1, 56, 56, 64));
        assert_eq!(f.macs, 64 * 64 * 56 * 56 * 9);
        assert_eq!(f.flops, 2 * f.macs);
    }

    #[test]
    fn im2col_traffic() {
        let p = ConvParams::new(3, 3, 1, 5);
        let o = im2col_overhead(&p, out(1, 2, 2, 5));
        assert_eq!(o.formula_mem_ops, 72);
        assert_eq!(o.mem_ops(), 72);

        let o = im2col_overhead(&ConvParams::new(1, 1, 16, 8), out(1, 4, 4, 8));
        assert!(!o.performed);
        assert_eq!(o.mem_ops(), 0);
        assert_eq!(o.formula_mem_ops, 2 * 16 * 16);
    }

    #[test]
    fn roofline_values() {
        assert_eq!(roofline_speedup(0.0, 1), 1.0);
        assert_eq!(roofline_speedup(0.0, 77), 1.0);
        assert_eq!(roofline_speedup(4.0, 8), 2.0);
        assert_eq!(roofline_speedup(3.0, 1), 7.0);
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let s = roofline_speedup(2.5, k);
            assert!(s < prev && s <= 1.0 + 2.0 * 2.5);
            prev = s;
        }
    }

    #[test]
    fn footprint_scaling() {
        let shape = |c| Shape4::new(1, 8, 8, c).unwrap();
        let p = |c| ConvParams::new(3, 3, c, 16).with_uniform_padding(1);
        let a = footprint_compare(&p(8), shape(8), 4, 8).unwrap();
        let b = footprint_compare(&p(16), shape(16), 4, 8).unwrap();
        assert_eq!(b.patch_matrix_bytes, 2 * a.patch_matrix_bytes);
        assert_eq!(b.indirection_bytes, a.indirection_bytes);

        let big = footprint_compare(&p(512), shape(512), 4, 8).unwrap();
        assert_eq!(big.ratio, 256.0);

        let pw = footprint_compare(&ConvParams::new(1, 1, 8, 8), shape(8), 4, 8).unwrap();
        assert_eq!(pw.engine_patch_bytes, 0);
        assert_eq!(pw.patch_matrix_bytes, 64 * 8 * 4);
    }

    #[test]
    fn report_fields() {
        let p = ConvParams::new(3, 3, 4, 8).with_uniform_padding(1);
        let r = cost_report(&p, Shape4::new(1, 5, 5, 4).unwrap(), TileConfig::default(), 4.0, 8).unwrap();
        assert_eq!(r.macs, 25 * 8 * 36);
        assert_eq!(r.im2col_mem_ops, 2 * 25 * 36);
        assert_eq!(r.im2col_bytes, 25 * 36 * 4);
        assert_eq!(r.patch_matrix_bytes, 25 * 36 * 4);
        assert_eq!(r.indirection_entries, 28 * 9);
        assert_eq!(r.speedup_predicted, 2.0);
    }
}
