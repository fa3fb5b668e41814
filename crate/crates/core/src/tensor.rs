//! Tensor storage, convolution geometry and output-shape inference.
//!
//! Activations are stored NHWC: element `(n, y, x, c)` lives at flat index
//! `((n * h + y) * w + x) * c_total + c`, so the channels of one pixel (a
//! "pixel row") are contiguous. Filters are stored KRSC.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, ConvError, Result};

static NEXT_STORAGE_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a tensor's storage.
///
/// Every freshly constructed (or cloned) buffer receives a new id. Growing a
/// tensor's batch in place keeps its id, modelling a framework that keeps
/// activations at a persistent location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StorageId(u64);

impl StorageId {
    pub(crate) fn fresh() -> Self {
        StorageId(NEXT_STORAGE_ID.fetch_add(1, Ordering::Relaxed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        let shape = Shape4 { n, h, w, c };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n >= 1 && self.h >= 1 && self.w >= 1 && self.c >= 1,
            InvalidArgument,
            "all shape extents must be >= 1, got {:?}",
            self
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of pixels (`n * h * w`), i.e. the number of pixel rows.
    pub fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    #[inline]
    pub fn pixel_index(&self, n: usize, y: usize, x: usize) -> usize {
        (n * self.h + y) * self.w + x
    }

    #[inline]
    pub fn offset(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        self.pixel_index(n, y, x) * self.c + c
    }
}

/// Dense single-precision NHWC tensor.
#[derive(Debug)]
pub struct NhwcTensor {
    shape: Shape4,
    data: Vec<f32>,
    id: StorageId,
}

impl Clone for NhwcTensor {
    fn clone(&self) -> Self {
        NhwcTensor {
            shape: self.shape,
            data: self.data.clone(),
            id: StorageId::fresh(),
        }
    }
}

impl PartialEq for NhwcTensor {
    /// Compares shape and contents bit-for-bit; storage identity is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl NhwcTensor {
    pub fn zeros(shape: Shape4) -> Result<Self> {
        shape.validate()?;
        Ok(NhwcTensor {
            shape,
            data: vec![0.0; shape.len()],
            id: StorageId::fresh(),
        })
    }

    pub fn from_vec(shape: Shape4, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        ensure!(
            data.len() == shape.len(),
            InvalidArgument,
            "data length {} does not match shape {:?} ({} elements)",
            data.len(),
            shape,
            shape.len()
        );
        Ok(NhwcTensor {
            shape,
            data,
            id: StorageId::fresh(),
        })
    }

    /// Fills with `0, 1, 2, ...` in flat order.
    pub fn fill_sequential(shape: Shape4) -> Result<Self> {
        let data = (0..shape.len()).map(|i| i as f32).collect();
        Self::from_vec(shape, data)
    }

    /// Fills with uniform values in `[-1, 1)` from a seeded ChaCha8 stream.
    pub fn fill_random(shape: Shape4, seed: u64) -> Result<Self> {
        let data = random_values(shape.len(), seed);
        Self::from_vec(shape, data)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn storage_id(&self) -> StorageId {
        self.id
    }

    pub fn allocated_bytes(&self) -> usize {
        self.data.capacity() * std::mem::size_of::<f32>()
    }

    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.shape.offset(n, y, x, c)]
    }

    /// The `c` contiguous channels of pixel `(n, y, x)`.
    pub fn pixel_row(&self, n: usize, y: usize, x: usize) -> &[f32] {
        let start = self.shape.offset(n, y, x, 0);
        &self.data[start..start + self.shape.c]
    }

    /// Changes the batch extent in place, keeping the storage id. New images
    /// are zero-filled; existing images are untouched.
    pub fn resize_batch(&mut self, n: usize) -> Result<()> {
        ensure!(n >= 1, InvalidArgument, "batch must be >= 1");
        self.shape.n = n;
        let len = self.shape.len();
        if len > self.data.len() {
            self.data.reserve_exact(len - self.data.len());
        }
        self.data.resize(len, 0.0);
        Ok(())
    }
}

/// Convolution geometry.
///
/// Kernel `R x S` (`kernel_h x kernel_w`), strides `SY, SX`, dilations
/// `DY, DX`, independent paddings on every side, `C` input and `K` output
/// channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub dilation_h: usize,
    pub dilation_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvParams {
    /// Unit stride and dilation, no padding.
    pub fn new(kernel_h: usize, kernel_w: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvParams {
            kernel_h,
            kernel_w,
            stride_h: 1,
            stride_w: 1,
            dilation_h: 1,
            dilation_w: 1,
            pad_top: 0,
            pad_left: 0,
            pad_bottom: 0,
            pad_right: 0,
            in_channels,
            out_channels,
        }
    }

    pub fn with_stride(mut self, stride_h: usize, stride_w: usize) -> Self {
        self.stride_h = stride_h;
        self.stride_w = stride_w;
        self
    }

    pub fn with_dilation(mut self, dilation_h: usize, dilation_w: usize) -> Self {
        self.dilation_h = dilation_h;
        self.dilation_w = dilation_w;
        self
    }

    pub fn with_padding(mut self, top: usize, left: usize, bottom: usize, right: usize) -> Self {
        self.pad_top = top;
        self.pad_left = left;
        self.pad_bottom = bottom;
        self.pad_right = right;
        self
    }

    /// Same padding on all four sides.
    pub fn with_uniform_padding(self, pad: usize) -> Self {
        self.with_padding(pad, pad, pad, pad)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.kernel_h >= 1
                && self.kernel_w >= 1
                && self.stride_h >= 1
                && self.stride_w >= 1
                && self.dilation_h >= 1
                && self.dilation_w >= 1,
            InvalidArgument,
            "kernel, stride and dilation must be >= 1: {:?}",
            self
        );
        ensure!(
            self.in_channels >= 1 && self.out_channels >= 1,
            InvalidArgument,
            "channel counts must be >= 1: {:?}",
            self
        );
        Ok(())
    }

    /// `R * S`.
    pub fn kernel_elements(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Length of one output element's dot product, `R * S * C`.
    pub fn reduction_len(&self) -> usize {
        self.kernel_elements() * self.in_channels
    }

    /// 1x1, unit stride, no padding: the input already is the GEMM A matrix.
    pub fn is_pointwise_unit(&self) -> bool {
        self.kernel_h == 1
            && self.kernel_w == 1
            && self.stride_h == 1
            && self.stride_w == 1
            && self.pad_top == 0
            && self.pad_left == 0
            && self.pad_bottom == 0
            && self.pad_right == 0
    }

    /// Input row tapped by output row `oy` and kernel row `ky`, or `None`
    /// when the tap falls into padding.
    #[inline]
    pub fn input_y(&self, oy: usize, ky: usize, h_in: usize) -> Option<usize> {
        tap_coordinate(oy, ky, self.stride_h, self.dilation_h, self.pad_top, h_in)
    }

    #[inline]
    pub fn input_x(&self, ox: usize, kx: usize, w_in: usize) -> Option<usize> {
        tap_coordinate(ox, kx, self.stride_w, self.dilation_w, self.pad_left, w_in)
    }
}

#[inline]
fn tap_coordinate(o: usize, k: usize, stride: usize, dilation: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + k * dilation).checked_sub(pad)?;
    (pos < extent).then_some(pos)
}

fn output_extent(
    input: usize,
    pad_a: usize,
    pad_b: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + pad_a + pad_b;
    padded.checked_sub(span).map(|d| d / stride + 1)
}

/// Output shape `(N, H_out, W_out, K)` with
/// `H_out = floor((H_in + PT + PB - DY*(R-1) - 1) / SY) + 1` and likewise for
/// the width.
pub fn conv_output_shape(params: &ConvParams, input: Shape4) -> Result<Shape4> {
    params.validate()?;
    input.validate()?;
    ensure!(
        input.c == params.in_channels,
        InvalidArgument,
        "input has {} channels, params expect {}",
        input.c,
        params.in_channels
    );
    let h = output_extent(
        input.h,
        params.pad_top,
        params.pad_bottom,
        params.kernel_h,
        params.stride_h,
        params.dilation_h,
    );
    let w = output_extent(
        input.w,
        params.pad_left,
        params.pad_right,
        params.kernel_w,
        params.stride_w,
        params.dilation_w,
    );
    match (h, w) {
        (Some(h), Some(w)) => Ok(Shape4 {
            n: input.n,
            h,
            w,
            c: params.out_channels,
        }),
        _ => Err(ConvError::InvalidGeometry(format!(
            "dilated kernel does not fit the padded input {:?} with {:?}",
            input, params
        ))),
    }
}

/// Filter weights in KRSC order: element `(oc, ky, kx, ic)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTensor {
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    data: Vec<f32>,
}

impl FilterTensor {
    pub fn from_vec(params: &ConvParams, data: Vec<f32>) -> Result<Self> {
        params.validate()?;
        let len = params.out_channels * params.reduction_len();
        ensure!(
            data.len() == len,
            InvalidArgument,
            "filter length {} does not match K*R*S*C = {}",
            data.len(),
            len
        );
        Ok(FilterTensor {
            out_channels: params.out_channels,
            kernel_h: params.kernel_h,
            kernel_w: params.kernel_w,
            in_channels: params.in_channels,
            data,
        })
    }

    pub fn fill_random(params: &ConvParams, seed: u64) -> Result<Self> {
        let len = params.out_channels * params.reduction_len();
        Self::from_vec(params, random_values(len, seed))
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn offset(&self, oc: usize, ky: usize, kx: usize, ic: usize) -> usize {
        ((oc * self.kernel_h + ky) * self.kernel_w + kx) * self.in_channels + ic
    }

    #[inline]
    pub fn get(&self, oc: usize, ky: usize, kx: usize, ic: usize) -> f32 {
        self.data[self.offset(oc, ky, kx, ic)]
    }

    pub fn matches(&self, params: &ConvParams) -> bool {
        self.out_channels == params.out_channels
            && self.kernel_h == params.kernel_h
            && self.kernel_w == params.kernel_w
            && self.in_channels == params.in_channels
    }

    pub(crate) fn check(&self, params: &ConvParams) -> Result<()> {
        ensure!(
            self.matches(params),
            InvalidArgument,
            "filter {}x{}x{}x{} does not match {:?}",
            self.out_channels,
            self.kernel_h,
            self.kernel_w,
            self.in_channels,
            params
        );
        Ok(())
    }
}

/// `len` uniform values in `[-1, 1)` from ChaCha8 seeded with `seed`.
pub fn random_values(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts output positions whose every tap lies inside the padded input
    /// `[-pad_a, extent + pad_b)`.
    fn enumerate_positions(extent: usize, pad_a: usize, pad_b: usize, k: usize, s: usize, d: usize) -> usize {
        let lo = -(pad_a as i64);
        let hi = (extent + pad_b) as i64;
        let mut count = 0;
        for o in 0..(extent + pad_a + pad_b + 1) as i64 {
            let fits = (0..k as i64).all(|t| {
                let pos = o * s as i64 + t * d as i64 - pad_a as i64;
                lo <= pos && pos < hi
            });
            if fits {
                count += 1;
            } else {
                break;
            }
        }
        count
    }

    /// Counts output rows with at least one in-bounds tap, scanning oy
    /// upwards from zero until the window leaves the padded extent.
    fn enumerate_touching(extent: usize, pad_a: usize, pad_b: usize, k: usize, s: usize, d: usize) -> usize {
        let limit = enumerate_positions(extent, pad_a, pad_b, k, s, d);
        (0..limit)
            .filter(|&o| {
                (0..k).any(|t| {
                    let pos = (o * s + t * d) as i64 - pad_a as i64;
                    0 <= pos && pos < extent as i64
                })
            })
            .count()
    }

    #[test]
    fn output_shape_examples() {
        let p = ConvParams::new(1, 1, 64, 64);
        let s = conv_output_shape(&p, Shape4::new(1, 56, 56, 64).unwrap()).unwrap();
        assert_eq!(s, Shape4::new(1, 56, 56, 64).unwrap());

        let p = ConvParams::new(7, 7, 3, 64).with_stride(2, 2).with_uniform_padding(3);
        let s = conv_output_shape(&p, Shape4::new(1, 224, 224, 3).unwrap()).unwrap();
        assert_eq!(s, Shape4::new(1, 112, 112, 64).unwrap());
        assert_eq!(enumerate_touching(224, 3, 3, 7, 2, 1), 112);

        let p = ConvParams::new(3, 3, 64, 128).with_stride(2, 2).with_uniform_padding(1);
        let s = conv_output_shape(&p, Shape4::new(1, 56, 56, 64).unwrap()).unwrap();
        assert_eq!(s, Shape4::new(1, 28, 28, 128).unwrap());
        assert_eq!(enumerate_touching(56, 1, 1, 3, 2, 1), 28);
    }

    #[test]
    fn output_shape_rejects_bad_inputs() {
        let p = ConvParams::new(5, 5, 1, 1);
        let err = conv_output_shape(&p, Shape4::new(1, 3, 3, 1).unwrap()).unwrap_err();
        assert!(matches!(err, ConvError::InvalidGeometry(_)));

        let p = ConvParams::new(3, 3, 2, 1);
        let err = conv_output_shape(&p, Shape4::new(1, 3, 3, 1).unwrap()).unwrap_err();
        assert!(matches!(err, ConvError::InvalidArgument(_)));

        let p = ConvParams::new(3, 3, 1, 1).with_stride(0, 1);
        assert!(conv_output_shape(&p, Shape4::new(1, 3, 3, 1).unwrap()).is_err());
        assert!(Shape4::new(0, 1, 1, 1).is_err());
    }

    #[test]
    fn output_shape_matches_enumeration_on_small_sweep() {
        for h in 1..=8 {
            for k in 1..=3 {
                for s in 1..=3 {
                    for d in 1..=3 {
                        for pa in 0..=2 {
                            for pb in 0..=2 {
                                let p = ConvParams::new(k, 1, 1, 1)
                                    .with_stride(s, 1)
                                    .with_dilation(d, 1)
                                    .with_padding(pa, 0, pb, 0);
                                let expected = enumerate_positions(h, pa, pb, k, s, d);
                                let got = conv_output_shape(&p, Shape4 { n: 1, h, w: 1, c: 1 });
                                match got {
                                    Ok(shape) => {
                                        assert_eq!(shape.h, expected, "h={h} k={k} s={s} d={d} pads={pa},{pb}")
                                    }
                                    Err(_) => assert_eq!(expected, 0, "h={h} k={k} s={s} d={d} pads={pa},{pb}"),
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fills() {
        let t = NhwcTensor::fill_sequential(Shape4::new(1, 1, 1, 4).unwrap()).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 3.0]);

        let shape = Shape4::new(2, 3, 3, 5).unwrap();
        let a = NhwcTensor::fill_random(shape, 9).unwrap();
        let b = NhwcTensor::fill_random(shape, 9).unwrap();
        let c = NhwcTensor::fill_random(shape, 10).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().zip(c.data()).any(|(x, y)| x != y));
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn clone_gets_new_storage_and_resize_keeps_it() {
        let mut t = NhwcTensor::fill_sequential(Shape4::new(1, 2, 2, 3).unwrap()).unwrap();
        let copy = t.clone();
        assert_eq!(copy, t);
        assert_ne!(copy.storage_id(), t.storage_id());

        let id = t.storage_id();
        t.resize_batch(3).unwrap();
        assert_eq!(t.storage_id(), id);
        assert_eq!(t.shape().n, 3);
        assert_eq!(&t.data()[..12], copy.data());
        assert!(t.data()[12..].iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn pixel_rows_are_contiguous(n in 1usize..3, h in 1usize..5, w in 1usize..5, c in 1usize..6,
                                     pn in 0usize..3, py in 0usize..5, px in 0usize..5) {
            let shape = Shape4::new(n, h, w, c).unwrap();
            let (pn, py, px) = (pn % n, py % h, px % w);
            let base = shape.offset(pn, py, px, 0);
            for ch in 0..c {
                prop_assert_eq!(shape.offset(pn, py, px, ch), base + ch);
            }
        }

        #[test]
        fn output_height_monotone_in_vertical_padding(h in 1usize..10, k in 1usize..4, s in 1usize..4,
                                                      d in 1usize..4, pt in 0usize..3, pb in 0usize..3) {
            let base = ConvParams::new(k, 1, 1, 1).with_stride(s, 1).with_dilation(d, 1);
            let shape = Shape4 { n: 1, h, w: 1, c: 1 };
            let small = conv_output_shape(&base.with_padding(pt, 0, pb, 0), shape).map(|s| s.h).unwrap_or(0);
            let more_top = conv_output_shape(&base.with_padding(pt + 1, 0, pb, 0), shape).map(|s| s.h).unwrap_or(0);
            let more_bottom = conv_output_shape(&base.with_padding(pt, 0, pb + 1, 0), shape).map(|s| s.h).unwrap_or(0);
            prop_assert!(more_top >= small);
            prop_assert!(more_bottom >= small);
        }
    }
}
