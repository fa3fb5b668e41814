//! Indirect convolution: GEMM driven by a table of input-row references.
//!
//! Instead of copying each output pixel's receptive field into a patch
//! matrix, an [`IndirectionBuffer`] stores, for every output pixel and kernel
//! element, a reference to the `C`-channel input row that tap reads (or to a
//! shared [`ZeroRow`] for taps in the padding). The micro-kernel walks kernel
//! elements in an outer loop, fetching `mr` fresh row references each time,
//! and runs the ordinary GEMM inner loop over the `C` channels of those rows.
//!
//! Entries are ordered tile-major, then kernel element, then lane: entry
//! `((t * R*S) + e) * mr + m` belongs to output pixel `min(t*mr + m, P - 1)`
//! and kernel element `e = ky * S + kx`, where `P = N * H_out * W_out`.
//! Lanes past the last pixel repeat it; the driver drops those rows.
//!
//! A buffer depends only on spatial geometry, not on the channel count, and
//! is bound to one input storage and one zero row. Changing either requires
//! [`IndirectionBuffer::rebind_input`]; growing the batch only initializes
//! the new images ([`IndirectionBuffer::update_for_batch_growth`]).

use std::sync::Arc;

use crate::error::{ensure, ConvError, Result};
use crate::gemm::{accumulate, accumulate_dyn, store_tile, MatrixViewMut, PackedFilter, TileConfig};
use crate::tensor::{conv_output_shape, ConvParams, NhwcTensor, Shape4, StorageId};

/// A shared all-zero row of `C` elements standing in for padding taps.
#[derive(Debug)]
pub struct ZeroRow {
    data: Vec<f32>,
    id: StorageId,
}

impl ZeroRow {
    pub fn new(channels: usize) -> Arc<Self> {
        Arc::new(ZeroRow {
            data: vec![0.0; channels],
            id: StorageId::fresh(),
        })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn storage_id(&self) -> StorageId {
        self.id
    }
}

/// Reference to one input pixel row, or to the zero row.
///
/// Stored as a pixel index into the bound input (element offset
/// `index * C`), so the buffer itself never depends on `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RowRef(usize);

impl RowRef {
    pub const ZERO: RowRef = RowRef(usize::MAX);

    pub fn pixel(index: usize) -> Self {
        debug_assert!(index != usize::MAX);
        RowRef(index)
    }

    pub fn is_zero(self) -> bool {
        self == Self::ZERO
    }

    pub fn pixel_index(self) -> Option<usize> {
        (!self.is_zero()).then_some(self.0)
    }

    /// The `channels` elements this reference points at.
    #[inline(always)]
    pub fn resolve<'a>(self, input: &'a [f32], zero: &'a [f32], channels: usize) -> &'a [f32] {
        if self.is_zero() {
            &zero[..channels]
        } else {
            let start = self.0 * channels;
            &input[start..start + channels]
        }
    }

    /// [`RowRef::resolve`] without bounds checks.
    ///
    /// # Safety
    /// A pixel reference must satisfy `(index + 1) * channels <= input.len()`,
    /// and `zero.len() >= channels`.
    #[inline(always)]
    unsafe fn resolve_unchecked<'a>(self, input: &'a [f32], zero: &'a [f32], channels: usize) -> &'a [f32] {
        let base = if self.is_zero() {
            zero.as_ptr()
        } else {
            input.as_ptr().add(self.0 * channels)
        };
        std::slice::from_raw_parts(base, channels)
    }
}

/// Channel-free geometry an indirection buffer was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
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
    pub mr: usize,
}

impl BufferGeometry {
    fn new(params: &ConvParams, input: Shape4, output: Shape4, mr: usize) -> Self {
        BufferGeometry {
            batch: input.n,
            in_h: input.h,
            in_w: input.w,
            out_h: output.h,
            out_w: output.w,
            kernel_h: params.kernel_h,
            kernel_w: params.kernel_w,
            stride_h: params.stride_h,
            stride_w: params.stride_w,
            dilation_h: params.dilation_h,
            dilation_w: params.dilation_w,
            pad_top: params.pad_top,
            pad_left: params.pad_left,
            pad_bottom: params.pad_bottom,
            pad_right: params.pad_right,
            mr,
        }
    }

    fn matches(&self, params: &ConvParams) -> bool {
        self.kernel_h == params.kernel_h
            && self.kernel_w == params.kernel_w
            && self.stride_h == params.stride_h
            && self.stride_w == params.stride_w
            && self.dilation_h == params.dilation_h
            && self.dilation_w == params.dilation_w
            && self.pad_top == params.pad_top
            && self.pad_left == params.pad_left
            && self.pad_bottom == params.pad_bottom
            && self.pad_right == params.pad_right
    }

    pub fn kernel_elements(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Output pixels, `N * H_out * W_out`.
    pub fn output_pixels(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn tiles(&self) -> usize {
        self.output_pixels().div_ceil(self.mr)
    }

    /// `ceil(P / mr) * R * S * mr`.
    pub fn entry_count(&self) -> usize {
        self.tiles() * self.kernel_elements() * self.mr
    }

    /// Input row read by output pixel `p` at kernel element `e`.
    pub fn tap(&self, p: usize, e: usize) -> RowRef {
        let per_image = self.out_h * self.out_w;
        let (n, rem) = (p / per_image, p % per_image);
        let (oy, ox) = (rem / self.out_w, rem % self.out_w);
        let (ky, kx) = (e / self.kernel_w, e % self.kernel_w);
        let iy = (oy * self.stride_h + ky * self.dilation_h)
            .checked_sub(self.pad_top)
            .filter(|&iy| iy < self.in_h);
        let ix = (ox * self.stride_w + kx * self.dilation_w)
            .checked_sub(self.pad_left)
            .filter(|&ix| ix < self.in_w);
        match (iy, ix) {
            (Some(iy), Some(ix)) => RowRef::pixel((n * self.in_h + iy) * self.in_w + ix),
            _ => RowRef::ZERO,
        }
    }

    /// Writes entries for every lane whose unclamped pixel index is at least
    /// `from_pixel`; earlier lanes are left untouched.
    fn fill(&self, entries: &mut [RowRef], from_pixel: usize) {
        let (mr, rs) = (self.mr, self.kernel_elements());
        let last = self.output_pixels() - 1;
        for t in from_pixel / mr..self.tiles() {
            for e in 0..rs {
                for m in 0..mr {
                    let unclamped = t * mr + m;
                    if unclamped < from_pixel {
                        continue;
                    }
                    entries[(t * rs + e) * mr + m] = self.tap(unclamped.min(last), e);
                }
            }
        }
    }
}

/// Table of input-row references for one convolution.
#[derive(Debug, Clone)]
pub struct IndirectionBuffer {
    geometry: BufferGeometry,
    channels: usize,
    input_id: StorageId,
    zero: Arc<ZeroRow>,
    entries: Vec<RowRef>,
}

impl PartialEq for IndirectionBuffer {
    fn eq(&self, other: &Self) -> bool {
        self.geometry == other.geometry
            && self.channels == other.channels
            && self.input_id == other.input_id
            && self.zero.storage_id() == other.zero.storage_id()
            && self.entries == other.entries
    }
}

/// Builds the indirection buffer for `input` under `params`.
pub fn init_indirection_buffer(
    input: &NhwcTensor,
    zero: Arc<ZeroRow>,
    params: &ConvParams,
    out_shape: Shape4,
    tile: TileConfig,
) -> Result<IndirectionBuffer> {
    let expected = conv_output_shape(params, input.shape())?;
    ensure!(
        out_shape == expected,
        InvalidGeometry,
        "output shape {:?} does not match the geometry, expected {:?}",
        out_shape,
        expected
    );
    ensure!(
        zero.len() == params.in_channels,
        InvalidArgument,
        "zero row has {} elements, need {}",
        zero.len(),
        params.in_channels
    );
    let geometry = BufferGeometry::new(params, input.shape(), out_shape, tile.mr);
    let mut entries = vec![RowRef::ZERO; geometry.entry_count()];
    geometry.fill(&mut entries, 0);
    Ok(IndirectionBuffer {
        geometry,
        channels: params.in_channels,
        input_id: input.storage_id(),
        zero,
        entries,
    })
}

impl IndirectionBuffer {
    pub fn geometry(&self) -> &BufferGeometry {
        &self.geometry
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn entries(&self) -> &[RowRef] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for tile `t`, kernel element `e`, lane `m`.
    pub fn entry(&self, t: usize, e: usize, m: usize) -> RowRef {
        let (rs, mr) = (self.geometry.kernel_elements(), self.geometry.mr);
        self.entries[(t * rs + e) * mr + m]
    }

    pub fn zero_row(&self) -> &Arc<ZeroRow> {
        &self.zero
    }

    pub fn input_id(&self) -> StorageId {
        self.input_id
    }

    pub fn allocated_bytes(&self) -> usize {
        self.entries.capacity() * std::mem::size_of::<RowRef>()
    }

    /// Extends the buffer to `new_batch` images. Entries of existing output
    /// pixels are kept verbatim; only new pixels (and tail lanes that used
    /// to clamp onto the old last pixel) are written.
    pub fn update_for_batch_growth(&mut self, new_batch: usize) -> Result<()> {
        let old = self.geometry;
        if new_batch < old.batch {
            return Err(ConvError::BatchShrink {
                from: old.batch,
                to: new_batch,
            });
        }
        if new_batch == old.batch {
            return Ok(());
        }
        self.geometry.batch = new_batch;
        let new_len = self.geometry.entry_count();
        self.entries.reserve_exact(new_len - self.entries.len());
        self.entries.resize(new_len, RowRef::ZERO);
        self.geometry.fill(&mut self.entries, old.output_pixels());
        Ok(())
    }

    /// Logically shrinks to the first `new_batch` images. Entries of the
    /// remaining pixels are kept; tail lanes of the new last tile are
    /// re-clamped so they never point past the smaller batch.
    pub fn truncate_batch(&mut self, new_batch: usize) -> Result<()> {
        ensure!(
            (1..=self.geometry.batch).contains(&new_batch),
            InvalidArgument,
            "cannot truncate batch {} to {}",
            self.geometry.batch,
            new_batch
        );
        self.geometry.batch = new_batch;
        self.entries.truncate(self.geometry.entry_count());
        self.geometry.fill(&mut self.entries, self.geometry.output_pixels());
        Ok(())
    }

    /// Full reinitialization against another input and zero row of the same
    /// shape.
    pub fn rebind_input(&mut self, new_input: &NhwcTensor, new_zero: Arc<ZeroRow>) -> Result<()> {
        let s = new_input.shape();
        let g = &self.geometry;
        ensure!(
            s.n == g.batch && s.h == g.in_h && s.w == g.in_w && s.c == self.channels,
            InvalidArgument,
            "rebind requires an input of shape ({}, {}, {}, {}), got {:?}",
            g.batch,
            g.in_h,
            g.in_w,
            self.channels,
            s
        );
        ensure!(
            new_zero.len() == self.channels,
            InvalidArgument,
            "zero row has {} elements, need {}",
            new_zero.len(),
            self.channels
        );
        self.geometry.fill(&mut self.entries, 0);
        self.input_id = new_input.storage_id();
        self.zero = new_zero;
        Ok(())
    }

    fn check_binding(&self, input: &NhwcTensor, params: &ConvParams, tile: TileConfig) -> Result<()> {
        let g = &self.geometry;
        let s = input.shape();
        let stale = |why: String| Err(ConvError::StaleBuffer(why));
        if input.storage_id() != self.input_id {
            return stale("buffer is bound to a different input tensor".into());
        }
        if s.n != g.batch || s.h != g.in_h || s.w != g.in_w || s.c != self.channels {
            return stale(format!("input shape {:?} differs from the bound geometry {:?}", s, g));
        }
        if !g.matches(params) || params.in_channels != self.channels {
            return stale(format!(
                "parameters {:?} differ from the bound geometry {:?}",
                params, g
            ));
        }
        if tile.mr != g.mr {
            return stale(format!("buffer laid out for mr={}, tile has mr={}", g.mr, tile.mr));
        }
        Ok(())
    }
}

/// The indirect GEMM micro-kernel.
///
/// For each of the `kernel_elems` kernel elements, takes the next `mr`
/// references from `refs`, and accumulates their `channels`-long dot
/// products against the matching slice of `packed_b` into `acc` (`mr x nr`,
/// row-major). Per accumulator this performs exactly the operations
/// [`crate::gemm::gemm_microkernel`] performs on the concatenated patch row.
#[allow(clippy::too_many_arguments)]
pub fn indirect_gemm_microkernel(
    tile: TileConfig,
    kernel_elems: usize,
    channels: usize,
    packed_b: &[f32],
    refs: &[RowRef],
    input: &[f32],
    zero: &[f32],
    acc: &mut [f32],
) {
    let TileConfig { mr, nr } = tile;
    assert!(refs.len() >= kernel_elems * mr, "not enough row references");
    assert_eq!(acc.len(), mr * nr, "accumulator must be mr x nr");
    assert!(zero.len() >= channels, "zero row shorter than channels");
    assert!(
        refs[..kernel_elems * mr]
            .iter()
            .all(|r| r.pixel_index().is_none_or(|i| (i + 1) * channels <= input.len())),
        "row reference past the end of the input"
    );
    if (mr, nr) == (4, 8) {
        let mut tile_acc = [[0.0f32; 8]; 4];
        for (dst, src) in tile_acc.iter_mut().zip(acc.chunks_exact(8)) {
            dst.copy_from_slice(src);
        }
        indirect_tile::<4, 8>(kernel_elems, channels, packed_b, refs, input, zero, &mut tile_acc);
        for (dst, src) in acc.chunks_exact_mut(8).zip(&tile_acc) {
            dst.copy_from_slice(src);
        }
    } else {
        let mut rows = Vec::with_capacity(mr);
        indirect_tile_dyn(
            tile,
            kernel_elems,
            channels,
            packed_b,
            refs,
            input,
            zero,
            &mut rows,
            acc,
        );
    }
}

#[inline(always)]
fn indirect_tile<const MR: usize, const NR: usize>(
    kernel_elems: usize,
    channels: usize,
    packed_b: &[f32],
    refs: &[RowRef],
    input: &[f32],
    zero: &[f32],
    acc: &mut [[f32; NR]; MR],
) {
    let step = channels * NR;
    for (e, lane_refs) in refs[..kernel_elems * MR].chunks_exact(MR).enumerate() {
        // SAFETY: callers verified the binding, so every pixel entry lies
        // inside `input`, and the zero row holds `channels` elements.
        let rows: [&[f32]; MR] =
            std::array::from_fn(|m| unsafe { lane_refs[m].resolve_unchecked(input, zero, channels) });
        accumulate::<MR, NR>(channels, &packed_b[e * step..(e + 1) * step], &rows, acc);
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn indirect_tile_dyn<'a>(
    tile: TileConfig,
    kernel_elems: usize,
    channels: usize,
    packed_b: &[f32],
    refs: &[RowRef],
    input: &'a [f32],
    zero: &'a [f32],
    rows: &mut Vec<&'a [f32]>,
    acc: &mut [f32],
) {
    let TileConfig { mr, nr } = tile;
    let step = channels * nr;
    for (e, lane_refs) in refs[..kernel_elems * mr].chunks_exact(mr).enumerate() {
        rows.clear();
        rows.extend(lane_refs.iter().map(|r| r.resolve(input, zero, channels)));
        accumulate_dyn(nr, channels, &packed_b[e * step..(e + 1) * step], rows, acc);
    }
}

/// Indirect convolution writing into `out`.
pub fn indirect_conv_into(
    input: &NhwcTensor,
    pf: &PackedFilter,
    ib: &IndirectionBuffer,
    params: &ConvParams,
    tile: TileConfig,
    out: &mut NhwcTensor,
) -> Result<()> {
    ib.check_binding(input, params, tile)?;
    pf.check(params, tile)?;
    let g = ib.geometry();
    let out_shape = Shape4 {
        n: g.batch,
        h: g.out_h,
        w: g.out_w,
        c: params.out_channels,
    };
    ensure!(
        out.shape() == out_shape,
        InvalidArgument,
        "output tensor is {:?}, expected {:?}",
        out.shape(),
        out_shape
    );
    let k = params.out_channels;
    let mut c_mat = MatrixViewMut::new(out.data_mut(), out_shape.pixels(), k, k)?;
    match (tile.mr, tile.nr) {
        (4, 8) => indirect_fixed::<4, 8>(input.data(), pf, ib, &mut c_mat),
        _ => indirect_dyn(tile, input.data(), pf, ib, &mut c_mat),
    }
    Ok(())
}

/// Indirect convolution; output equals [`crate::im2col::gemm_conv`]
/// bit-for-bit.
pub fn indirect_conv(
    input: &NhwcTensor,
    pf: &PackedFilter,
    ib: &IndirectionBuffer,
    params: &ConvParams,
    tile: TileConfig,
) -> Result<NhwcTensor> {
    let g = ib.geometry();
    let mut out = NhwcTensor::zeros(Shape4 {
        n: g.batch,
        h: g.out_h,
        w: g.out_w,
        c: params.out_channels,
    })?;
    indirect_conv_into(input, pf, ib, params, tile, &mut out)?;
    Ok(out)
}

fn indirect_fixed<const MR: usize, const NR: usize>(
    input: &[f32],
    pf: &PackedFilter,
    ib: &IndirectionBuffer,
    out: &mut MatrixViewMut<'_>,
) {
    let g = ib.geometry();
    let (rs, channels) = (g.kernel_elements(), ib.channels());
    let pixels = g.output_pixels();
    let k_out = pf.out_channels();
    let zero = ib.zero_row().as_slice();
    for (t, tile_refs) in ib.entries().chunks_exact(rs * MR).enumerate() {
        let p0 = t * MR;
        let valid_m = (pixels - p0).min(MR);
        for jt in 0..pf.n_tiles() {
            let bias: &[f32; NR] = pf.padded_bias(jt).try_into().unwrap();
            let mut acc = [*bias; MR];
            indirect_tile::<MR, NR>(rs, channels, pf.tile(jt), tile_refs, input, zero, &mut acc);
            store_tile(out, p0, valid_m, jt * NR, (k_out - jt * NR).min(NR), |m| &acc[m][..]);
        }
    }
}

fn indirect_dyn(
    tile: TileConfig,
    input: &[f32],
    pf: &PackedFilter,
    ib: &IndirectionBuffer,
    out: &mut MatrixViewMut<'_>,
) {
    let TileConfig { mr, nr } = tile;
    let g = ib.geometry();
    let (rs, channels) = (g.kernel_elements(), ib.channels());
    let pixels = g.output_pixels();
    let k_out = pf.out_channels();
    let zero = ib.zero_row().as_slice();
    let mut acc = vec![0.0f32; mr * nr];
    let mut rows = Vec::with_capacity(mr);
    for (t, tile_refs) in ib.entries().chunks_exact(rs * mr).enumerate() {
        let p0 = t * mr;
        let valid_m = (pixels - p0).min(mr);
        for jt in 0..pf.n_tiles() {
            for acc_row in acc.chunks_exact_mut(nr) {
                acc_row.copy_from_slice(pf.padded_bias(jt));
            }
            indirect_tile_dyn(
                tile,
                rs,
                channels,
                pf.tile(jt),
                tile_refs,
                input,
                zero,
                &mut rows,
                &mut acc,
            );
            store_tile(out, p0, valid_m, jt * nr, (k_out - jt * nr).min(nr), |m| {
                &acc[m * nr..(m + 1) * nr]
            });
        }
    }
}
