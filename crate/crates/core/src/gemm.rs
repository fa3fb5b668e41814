//! Tiled GEMM built on an `MR x NR` register-tile micro-kernel.
//!
//! The filter (matrix B) is repacked once into column tiles of `NR` output
//! channels. Matrix A is read in place through row slices: it is never
//! copied or repacked, which is also what lets the indirect variant swap the
//! constant row stride for a table of row references.

use crate::error::{ensure, ConvError, Result};
use crate::tensor::{ConvParams, FilterTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileConfig {
    /// Output pixels per micro-tile.
    pub mr: usize,
    /// Output channels per micro-tile.
    pub nr: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig { mr: 4, nr: 8 }
    }
}

impl TileConfig {
    pub fn new(mr: usize, nr: usize) -> Result<Self> {
        ensure!(
            mr >= 1 && nr >= 1,
            InvalidArgument,
            "tile must be at least 1x1, got {mr}x{nr}"
        );
        Ok(TileConfig { mr, nr })
    }
}

/// Filter weights re-laid-out for the micro-kernel.
///
/// Column tile `jt` holds output channels `jt*nr .. jt*nr + nr`. Inside a
/// tile, for each kernel element `e` and input channel `c` in that order,
/// the `nr` weights `filter[jt*nr + lane][e][c]` are stored consecutively.
/// Lanes past `K` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedFilter {
    k_out: usize,
    kernel_elems: usize,
    channels: usize,
    nr: usize,
    weights: Vec<f32>,
    // padded to n_tiles * nr
    bias: Vec<f32>,
}

impl PackedFilter {
    pub fn out_channels(&self) -> usize {
        self.k_out
    }

    pub fn kernel_elements(&self) -> usize {
        self.kernel_elems
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn reduction_len(&self) -> usize {
        self.kernel_elems * self.channels
    }

    pub fn n_tiles(&self) -> usize {
        self.k_out.div_ceil(self.nr)
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias[..self.k_out]
    }

    pub(crate) fn padded_bias(&self, tile: usize) -> &[f32] {
        &self.bias[tile * self.nr..(tile + 1) * self.nr]
    }

    pub fn tile_len(&self) -> usize {
        self.reduction_len() * self.nr
    }

    /// Packed weights for column tile `jt`.
    pub fn tile(&self, jt: usize) -> &[f32] {
        let len = self.tile_len();
        &self.weights[jt * len..(jt + 1) * len]
    }

    /// Position of `filter[oc][e][ic]` in [`Self::weights`].
    pub fn offset(&self, oc: usize, e: usize, ic: usize) -> usize {
        let (jt, lane) = (oc / self.nr, oc % self.nr);
        jt * self.tile_len() + (e * self.channels + ic) * self.nr + lane
    }

    pub fn allocated_bytes(&self) -> usize {
        self.weights.capacity() * std::mem::size_of::<f32>()
    }

    pub(crate) fn check(&self, params: &ConvParams, tile: TileConfig) -> Result<()> {
        ensure!(
            self.k_out == params.out_channels
                && self.kernel_elems == params.kernel_elements()
                && self.channels == params.in_channels,
            InvalidArgument,
            "packed filter (K={}, R*S={}, C={}) does not match {:?}",
            self.k_out,
            self.kernel_elems,
            self.channels,
            params
        );
        ensure!(
            self.nr == tile.nr,
            InvalidArgument,
            "filter packed for nr={} but tile has nr={}",
            self.nr,
            tile.nr
        );
        Ok(())
    }
}

/// Repacks `filter` (and an optional bias) into [`PackedFilter`] layout.
pub fn pack_filter(
    filter: &FilterTensor,
    bias: Option<&[f32]>,
    params: &ConvParams,
    tile: TileConfig,
) -> Result<PackedFilter> {
    filter.check(params)?;
    let k_out = params.out_channels;
    let kernel_elems = params.kernel_elements();
    let channels = params.in_channels;
    let nr = tile.nr;
    let n_tiles = k_out.div_ceil(nr);

    let mut padded_bias = vec![0.0; n_tiles * nr];
    if let Some(b) = bias {
        ensure!(
            b.len() == k_out,
            InvalidArgument,
            "bias has {} entries, expected {}",
            b.len(),
            k_out
        );
        padded_bias[..k_out].copy_from_slice(b);
    }

    let src = filter.data();
    let reduction = kernel_elems * channels;
    let mut weights = Vec::with_capacity(n_tiles * reduction * nr);
    for jt in 0..n_tiles {
        for r in 0..reduction {
            for lane in 0..nr {
                let oc = jt * nr + lane;
                // KRSC: (e, ic) flattens to e * C + ic within output channel oc.
                weights.push(if oc < k_out { src[oc * reduction + r] } else { 0.0 });
            }
        }
    }

    Ok(PackedFilter {
        k_out,
        kernel_elems,
        channels,
        nr,
        weights,
        bias: padded_bias,
    })
}

/// Borrowed row-major matrix with leading dimension `ld >= cols`.
#[derive(Debug, Clone, Copy)]
pub struct MatrixView<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
    ld: usize,
}

fn required_len(rows: usize, cols: usize, ld: usize) -> usize {
    if rows == 0 {
        0
    } else {
        (rows - 1) * ld + cols
    }
}

impl<'a> MatrixView<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize, ld: usize) -> Result<Self> {
        ensure!(ld >= cols, InvalidArgument, "leading dimension {ld} < cols {cols}");
        ensure!(
            data.len() >= required_len(rows, cols, ld),
            InvalidArgument,
            "buffer of {} elements too small for {rows}x{cols} (ld {ld})",
            data.len()
        );
        Ok(MatrixView { data, rows, cols, ld })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn ld(&self) -> usize {
        self.ld
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.ld..i * self.ld + self.cols]
    }
}

#[derive(Debug)]
pub struct MatrixViewMut<'a> {
    data: &'a mut [f32],
    rows: usize,
    cols: usize,
    ld: usize,
}

impl<'a> MatrixViewMut<'a> {
    pub fn new(data: &'a mut [f32], rows: usize, cols: usize, ld: usize) -> Result<Self> {
        ensure!(ld >= cols, InvalidArgument, "leading dimension {ld} < cols {cols}");
        ensure!(
            data.len() >= required_len(rows, cols, ld),
            InvalidArgument,
            "buffer of {} elements too small for {rows}x{cols} (ld {ld})",
            data.len()
        );
        Ok(MatrixViewMut { data, rows, cols, ld })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.ld..i * self.ld + self.cols]
    }
}

/// Owned row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMajorMatrix {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
    ld: usize,
}

impl RowMajorMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RowMajorMatrix {
            data: vec![0.0; rows * cols],
            rows,
            cols,
            ld: cols,
        }
    }

    pub fn from_vec(data: Vec<f32>, rows: usize, cols: usize) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            InvalidArgument,
            "{} elements cannot form a {rows}x{cols} matrix",
            data.len()
        );
        Ok(RowMajorMatrix {
            data,
            rows,
            cols,
            ld: cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn ld(&self) -> usize {
        self.ld
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.ld..i * self.ld + self.cols]
    }

    pub fn view(&self) -> MatrixView<'_> {
        MatrixView {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            ld: self.ld,
        }
    }

    pub fn view_mut(&mut self) -> MatrixViewMut<'_> {
        MatrixViewMut {
            data: &mut self.data,
            rows: self.rows,
            cols: self.cols,
            ld: self.ld,
        }
    }

    pub fn allocated_bytes(&self) -> usize {
        self.data.capacity() * std::mem::size_of::<f32>()
    }
}

/// Inner loop shared by the GEMM and indirect GEMM micro-kernels:
/// `acc[m][j] += rows[m][k] * b[k][j]` for `k` ascending.
#[inline(always)]
pub(crate) fn accumulate<const MR: usize, const NR: usize>(
    k: usize,
    b: &[f32],
    rows: &[&[f32]; MR],
    acc: &mut [[f32; NR]; MR],
) {
    let b = &b[..k * NR];
    let rows: [&[f32]; MR] = std::array::from_fn(|m| &rows[m][..k]);
    for (kk, bk) in b.chunks_exact(NR).enumerate() {
        let bk: &[f32; NR] = bk.try_into().unwrap();
        for m in 0..MR {
            let a = rows[m][kk];
            for j in 0..NR {
                acc[m][j] += a * bk[j];
            }
        }
    }
}

/// Runtime-sized counterpart of [`accumulate`]; `acc` is `mr x nr` row-major.
#[inline]
pub(crate) fn accumulate_dyn(nr: usize, k: usize, b: &[f32], rows: &[&[f32]], acc: &mut [f32]) {
    let b = &b[..k * nr];
    for (kk, bk) in b.chunks_exact(nr).enumerate() {
        for (m, row) in rows.iter().enumerate() {
            let a = row[kk];
            let acc_row = &mut acc[m * nr..(m + 1) * nr];
            for j in 0..nr {
                acc_row[j] += a * bk[j];
            }
        }
    }
}

/// The GEMM micro-kernel.
///
/// Adds `sum_k a_rows[m][k] * packed_b[k * nr + j]` into `acc[m * nr + j]`
/// for `k` in `0..reduction_len`. `a_rows` holds `mr` row slices (each with
/// at least `reduction_len` elements) read at their original addresses.
pub fn gemm_microkernel(tile: TileConfig, reduction_len: usize, packed_b: &[f32], a_rows: &[&[f32]], acc: &mut [f32]) {
    assert_eq!(a_rows.len(), tile.mr, "need exactly mr row references");
    assert_eq!(acc.len(), tile.mr * tile.nr, "accumulator must be mr x nr");
    if (tile.mr, tile.nr) == (4, 8) {
        let rows: &[&[f32]; 4] = a_rows.try_into().unwrap();
        let mut tile_acc = [[0.0f32; 8]; 4];
        for (dst, src) in tile_acc.iter_mut().zip(acc.chunks_exact(8)) {
            dst.copy_from_slice(src);
        }
        accumulate::<4, 8>(reduction_len, packed_b, rows, &mut tile_acc);
        for (dst, src) in acc.chunks_exact_mut(8).zip(&tile_acc) {
            dst.copy_from_slice(src);
        }
    } else {
        accumulate_dyn(tile.nr, reduction_len, packed_b, a_rows, acc);
    }
}

/// `out = A x B + bias` with `A` an `M x (R*S*C)` matrix and `B` the packed
/// filter.
///
/// Every micro-tile is computed at full `mr x nr` size: rows past `M` reuse
/// the last row of A, and only the valid sub-rectangle is written back.
pub fn gemm(a: &MatrixView<'_>, pf: &PackedFilter, out: &mut MatrixViewMut<'_>, tile: TileConfig) -> Result<()> {
    ensure!(
        a.cols() == pf.reduction_len(),
        InvalidArgument,
        "A has {} columns, packed filter reduces over {}",
        a.cols(),
        pf.reduction_len()
    );
    ensure!(
        out.rows() == a.rows() && out.cols() == pf.out_channels(),
        InvalidArgument,
        "output is {}x{}, expected {}x{}",
        out.rows(),
        out.cols(),
        a.rows(),
        pf.out_channels()
    );
    if pf.nr() != tile.nr {
        return Err(ConvError::InvalidArgument(format!(
            "filter packed for nr={} but tile has nr={}",
            pf.nr(),
            tile.nr
        )));
    }
    if a.rows() == 0 {
        return Ok(());
    }
    match (tile.mr, tile.nr) {
        (4, 8) => gemm_fixed::<4, 8>(a, pf, out),
        _ => gemm_dyn(tile, a, pf, out),
    }
    Ok(())
}

fn gemm_fixed<const MR: usize, const NR: usize>(a: &MatrixView<'_>, pf: &PackedFilter, out: &mut MatrixViewMut<'_>) {
    let m_total = a.rows();
    let reduction = a.cols();
    let k_out = pf.out_channels();
    for p0 in (0..m_total).step_by(MR) {
        let rows: [&[f32]; MR] = std::array::from_fn(|m| a.row((p0 + m).min(m_total - 1)));
        let valid_m = (m_total - p0).min(MR);
        for jt in 0..pf.n_tiles() {
            let bias: &[f32; NR] = pf.padded_bias(jt).try_into().unwrap();
            let mut acc = [*bias; MR];
            accumulate::<MR, NR>(reduction, pf.tile(jt), &rows, &mut acc);
            store_tile(out, p0, valid_m, jt * NR, (k_out - jt * NR).min(NR), |m| &acc[m][..]);
        }
    }
}

fn gemm_dyn(tile: TileConfig, a: &MatrixView<'_>, pf: &PackedFilter, out: &mut MatrixViewMut<'_>) {
    let TileConfig { mr, nr } = tile;
    let m_total = a.rows();
    let reduction = a.cols();
    let k_out = pf.out_channels();
    let mut rows: Vec<&[f32]> = Vec::with_capacity(mr);
    let mut acc = vec![0.0f32; mr * nr];
    for p0 in (0..m_total).step_by(mr) {
        rows.clear();
        rows.extend((0..mr).map(|m| a.row((p0 + m).min(m_total - 1))));
        let valid_m = (m_total - p0).min(mr);
        for jt in 0..pf.n_tiles() {
            for acc_row in acc.chunks_exact_mut(nr) {
                acc_row.copy_from_slice(pf.padded_bias(jt));
            }
            accumulate_dyn(nr, reduction, pf.tile(jt), &rows, &mut acc);
            store_tile(out, p0, valid_m, jt * nr, (k_out - jt * nr).min(nr), |m| {
                &acc[m * nr..(m + 1) * nr]
            });
        }
    }
}

#[inline]
pub(crate) fn store_tile<'t>(
    out: &mut MatrixViewMut<'_>,
    row0: usize,
    valid_rows: usize,
    col0: usize,
    valid_cols: usize,
    tile_row: impl Fn(usize) -> &'t [f32],
) {
    for m in 0..valid_rows {
        out.row_mut(row0 + m)[col0..col0 + valid_cols].copy_from_slice(&tile_row(m)[..valid_cols]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::random_values;

    /// Ordered triple loop over the unpacked KRSC filter.
    fn naive_gemm(a: &[f32], m: usize, l: usize, filter: &[f32], bias: &[f32], k: usize) -> Vec<f32> {
        let mut out = vec![0.0; m * k];
        for p in 0..m {
            for oc in 0..k {
                let mut acc = bias[oc];
                for r in 0..l {
                    acc += a[p * l + r] * filter[oc * l + r];
                }
                out[p * k + oc] = acc;
            }
        }
        out
    }

    fn pointwise(c: usize, k: usize) -> ConvParams {
        ConvParams::new(1, 1, c, k)
    }

    #[test]
    fn pack_single_weight() {
        let p = pointwise(1, 1);
        let f = FilterTensor::from_vec(&p, vec![3.5]).unwrap();
        let pf = pack_filter(&f, None, &p, TileConfig::default()).unwrap();
        assert_eq!(pf.weights(), &[3.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(pf.bias(), &[0.0]);
    }

    #[test]
    fn pack_two_channels_full_tile() {
        let p = pointwise(2, 8);
        // filter[oc][ic] = 10*oc + ic
        let data: Vec<f32> = (0..8)
            .flat_map(|oc| (0..2).map(move |ic| (10 * oc + ic) as f32))
            .collect();
        let f = FilterTensor::from_vec(&p, data).unwrap();
        let pf = pack_filter(&f, None, &p, TileConfig::default()).unwrap();
        let expected: Vec<f32> = (0..2)
            .flat_map(|ic| (0..8).map(move |oc| (10 * oc + ic) as f32))
            .collect();
        assert_eq!(pf.weights(), expected.as_slice());
    }

    #[test]
    fn pack_is_a_permutation_with_zero_padding() {
        let p = ConvParams::new(2, 2, 2, 3);
        let tile = TileConfig::new(4, 2).unwrap();
        let f = FilterTensor::fill_random(&p, 17).unwrap();
        let pf = pack_filter(&f, None, &p, tile).unwrap();
        assert_eq!(pf.weights().len(), 2 * 4 * 2 * 2);

        let mut seen = vec![false; pf.weights().len()];
        for oc in 0..3 {
            for e in 0..4 {
                for ic in 0..2 {
                    let off = pf.offset(oc, e, ic);
                    assert!(!seen[off], "offset {off} used twice");
                    seen[off] = true;
                    assert_eq!(pf.weights()[off].to_bits(), f.get(oc, e / 2, e % 2, ic).to_bits());
                }
            }
        }
        for (off, used) in seen.iter().enumerate() {
            if !used {
                assert_eq!(pf.weights()[off].to_bits(), 0.0f32.to_bits());
            }
        }
    }

    #[test]
    fn microkernel_rank_one() {
        let tile = TileConfig::new(2, 2).unwrap();
        let (a0, a1) = ([2.0f32], [3.0f32]);
        let mut acc = [0.0; 4];
        gemm_microkernel(tile, 1, &[5.0, 7.0], &[&a0, &a1], &mut acc);
        assert_eq!(acc, [10.0, 14.0, 15.0, 21.0]);
    }

    #[test]
    fn microkernel_zero_a_leaves_acc() {
        let tile = TileConfig::default();
        let zero = [0.0f32; 5];
        let rows = [&zero[..]; 4];
        let b = random_values(5 * 8, 1);
        let init = random_values(32, 2);
        let mut acc = init.clone();
        gemm_microkernel(tile, 5, &b, &rows, &mut acc);
        assert_eq!(acc, init);
    }

    #[test]
    fn microkernel_matches_naive() {
        let (mr, nr, k) = (4, 8, 13);
        let a = random_values(mr * k, 7);
        let b = random_values(k * nr, 8);
        let rows: Vec<&[f32]> = a.chunks_exact(k).collect();
        let mut acc = vec![0.0; mr * nr];
        gemm_microkernel(TileConfig::default(), k, &b, &rows, &mut acc);
        for m in 0..mr {
            for j in 0..nr {
                let mut want = 0.0f32;
                for kk in 0..k {
                    want += a[m * k + kk] * b[kk * nr + j];
                }
                assert_eq!(acc[m * nr + j].to_bits(), want.to_bits());
            }
        }
        // generic path on the same data
        let mut acc_dyn = vec![0.0; mr * nr];
        accumulate_dyn(nr, k, &b, &rows, &mut acc_dyn);
        assert_eq!(acc, acc_dyn);
    }

    #[test]
    fn gemm_scalar() {
        let p = pointwise(1, 1);
        let f = FilterTensor::from_vec(&p, vec![0.5]).unwrap();
        let pf = pack_filter(&f, Some(&[1.0]), &p, TileConfig::default()).unwrap();
        let a = [4.0f32];
        let mut out = [0.0f32];
        gemm(
            &MatrixView::new(&a, 1, 1, 1).unwrap(),
            &pf,
            &mut MatrixViewMut::new(&mut out, 1, 1, 1).unwrap(),
            TileConfig::default(),
        )
        .unwrap();
        assert_eq!(out, [3.0]);
    }

    #[test]
    fn gemm_identity_filter() {
        let c = 11;
        let p = pointwise(c, c);
        let eye: Vec<f32> = (0..c * c).map(|i| if i / c == i % c { 1.0 } else { 0.0 }).collect();
        let f = FilterTensor::from_vec(&p, eye).unwrap();
        let pf = pack_filter(&f, None, &p, TileConfig::default()).unwrap();
        let a = RowMajorMatrix::from_vec(random_values(6 * c, 4), 6, c).unwrap();
        let mut out = RowMajorMatrix::zeros(6, c);
        gemm(&a.view(), &pf, &mut out.view_mut(), TileConfig::default()).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn gemm_tails_match_naive() {
        let (m, k, l) = (7, 11, 5);
        let p = pointwise(l, k);
        let f = FilterTensor::fill_random(&p, 3).unwrap();
        let bias = random_values(k, 4);
        let a = random_values(m * l, 5);
        let want = naive_gemm(&a, m, l, f.data(), &bias, k);
        for tile in [
            TileConfig::default(),
            TileConfig::new(3, 5).unwrap(),
            TileConfig::new(1, 1).unwrap(),
        ] {
            let pf = pack_filter(&f, Some(&bias), &p, tile).unwrap();
            let mut out = vec![0.0; m * k];
            gemm(
                &MatrixView::new(&a, m, l, l).unwrap(),
                &pf,
                &mut MatrixViewMut::new(&mut out, m, k, k).unwrap(),
                tile,
            )
            .unwrap();
            assert_eq!(out, want, "{tile:?}");
        }
    }

    #[test]
    fn gemm_respects_leading_dimensions() {
        let (m, k, l, lda, ldc) = (5, 3, 4, 9, 6);
        let p = pointwise(l, k);
        let f = FilterTensor::fill_random(&p, 1).unwrap();
        let pf = pack_filter(&f, None, &p, TileConfig::default()).unwrap();
        let a_strided = random_values(m * lda, 2);
        let a_dense: Vec<f32> = a_strided.chunks(lda).flat_map(|r| r[..l].to_vec()).collect();
        let want = naive_gemm(&a_dense, m, l, f.data(), &[0.0; 3], k);
        let mut out = vec![-7.0; m * ldc];
        gemm(
            &MatrixView::new(&a_strided, m, l, lda).unwrap(),
            &pf,
            &mut MatrixViewMut::new(&mut out, m, k, ldc).unwrap(),
            TileConfig::default(),
        )
        .unwrap();
        for p in 0..m {
            assert_eq!(&out[p * ldc..p * ldc + k], &want[p * k..(p + 1) * k]);
            assert!(out[p * ldc + k..(p + 1) * ldc].iter().all(|&v| v == -7.0));
        }
    }

    #[test]
    fn gemm_dimension_errors() {
        let p = pointwise(3, 2);
        let f = FilterTensor::fill_random(&p, 1).unwrap();
        let pf = pack_filter(&f, None, &p, TileConfig::default()).unwrap();
        let a = RowMajorMatrix::zeros(4, 2);
        let mut out = RowMajorMatrix::zeros(4, 2);
        assert!(gemm(&a.view(), &pf, &mut out.view_mut(), TileConfig::default()).is_err());
        let a = RowMajorMatrix::zeros(4, 3);
        let mut out = RowMajorMatrix::zeros(3, 2);
        assert!(gemm(&a.view(), &pf, &mut out.view_mut(), TileConfig::default()).is_err());
        let mut out = RowMajorMatrix::zeros(4, 2);
        assert!(gemm(&a.view(), &pf, &mut out.view_mut(), TileConfig::new(4, 4).unwrap()).is_err());
        assert!(MatrixView::new(&[0.0; 5], 2, 3, 3).is_err());
        assert!(MatrixView::new(&[0.0; 6], 2, 3, 2).is_err());
        assert!(TileConfig::new(0, 8).is_err());
    }

    #[test]
    fn padded_lanes_do_not_contaminate() {
        let (m, l) = (9, 6);
        let k_big = 16;
        let a = random_values(m * l, 11);
        let big = pointwise(l, k_big);
        let f_big = FilterTensor::fill_random(&big, 12).unwrap();
        for k in 1..=k_big {
            let small = pointwise(l, k);
            let f_small = FilterTensor::from_vec(&small, f_big.data()[..k * l].to_vec()).unwrap();
            let run = |f: &FilterTensor, p: &ConvParams| {
                let pf = pack_filter(f, None, p, TileConfig::default()).unwrap();
                let mut out = RowMajorMatrix::zeros(m, p.out_channels);
                gemm(
                    &MatrixView::new(&a, m, l, l).unwrap(),
                    &pf,
                    &mut out.view_mut(),
                    TileConfig::default(),
                )
                .unwrap();
                out
            };
            let o_small = run(&f_small, &small);
            let o_big = run(&f_big, &big);
            for p in 0..m {
                assert_eq!(o_small.row(p), &o_big.row(p)[..k]);
            }
        }
    }
}
