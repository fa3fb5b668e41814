//! Relative-performance checks over measured reports.
//!
//! Absolute GFLOPS are machine-specific; what should hold on any host is
//! that skipping im2col is never slower than doing it, and that indirect
//! convolution is not meaningfully slower than GEMM-based convolution on
//! 3x3 layers.

use std::collections::BTreeMap;

use crate::runner::{BenchReport, Variant};
use crate::suite::ConvShapeSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingSlack {
    /// Passes when `t(gemm_based) * gemm_only_slack >= t(gemm_only)`.
    pub gemm_only_slack: f64,
    /// Passes when `t(indirect) <= indirect_slack * t(gemm_based)`.
    pub indirect_slack: f64,
}

impl Default for OrderingSlack {
    fn default() -> Self {
        OrderingSlack {
            gemm_only_slack: 1.0,
            indirect_slack: 1.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Claim {
    Im2colCostsTime,
    IndirectCompetitive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub shape: String,
    pub claim: Claim,
    /// `t(gemm_based) / t(gemm_only)` or `t(indirect) / t(gemm_based)`.
    pub ratio: f64,
    pub passed: bool,
}

/// Evaluates both claims for every shape where the needed variants were
/// measured.
pub fn check_orderings(specs: &[ConvShapeSpec], reports: &[BenchReport], slack: OrderingSlack) -> Vec<OrderingCheck> {
    let mut t: BTreeMap<(&str, Variant), f64> = BTreeMap::new();
    for r in reports {
        t.insert((r.shape.as_str(), r.variant), r.median_seconds);
    }
    let mut out = Vec::new();
    for s in specs {
        let get = |v| t.get(&(s.name.as_str(), v)).copied();
        if !s.is_pointwise_unit() {
            if let (Some(based), Some(only)) = (get(Variant::GemmBased), get(Variant::GemmOnly)) {
                out.push(OrderingCheck {
                    shape: s.name.clone(),
                    claim: Claim::Im2colCostsTime,
                    ratio: based / only,
                    passed: based * slack.gemm_only_slack >= only,
                });
            }
        }
        if s.is_3x3() {
            if let (Some(ind), Some(based)) = (get(Variant::Indirect), get(Variant::GemmBased)) {
                out.push(OrderingCheck {
                    shape: s.name.clone(),
                    claim: Claim::IndirectCompetitive,
                    ratio: ind / based,
                    passed: ind <= slack.indirect_slack * based,
                });
            }
        }
    }
    out
}
