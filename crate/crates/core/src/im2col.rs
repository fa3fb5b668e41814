//! GEMM-based convolution: materialize the patch matrix, then run [`gemm`].
//!
//! Row `p` of the patch matrix is output pixel `p` (in `n, oy, ox` order);
//! column `e * C + ic` holds input channel `ic` of kernel element
//! `e = ky * S + kx`, or `0.0` when that tap lands in padding.

use crate::error::{ensure, Result};
use crate::gemm::{gemm, MatrixView, MatrixViewMut, PackedFilter, RowMajorMatrix, TileConfig};
use crate::tensor::{conv_output_shape, ConvParams, NhwcTensor, Shape4};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    matrix: RowMajorMatrix,
    input_shape: Shape4,
    output_shape: Shape4,
    params: ConvParams,
}

impl PatchMatrix {
    /// Allocates a zeroed `N*H_out*W_out x R*S*C` patch matrix.
    pub fn allocate(input_shape: Shape4, params: &ConvParams) -> Result<Self> {
        let output_shape = conv_output_shape(params, input_shape)?;
        Ok(PatchMatrix {
            matrix: RowMajorMatrix::zeros(output_shape.pixels(), params.reduction_len()),
            input_shape,
            output_shape,
            params: *params,
        })
    }

    /// Rewrites every row from `input`.
    pub fn fill(&mut self, input: &NhwcTensor) -> Result<()> {
        ensure!(
            input.shape() == self.input_shape,
            InvalidArgument,
            "patch matrix built for {:?}, input is {:?}",
            self.input_shape,
            input.shape()
        );
        let params = self.params;
        let (in_shape, out_shape) = (self.input_shape, self.output_shape);
        let c = params.in_channels;
        let l = params.reduction_len();
        let src = input.data();
        let mut rows = self.matrix.data_mut().chunks_exact_mut(l);
        for n in 0..out_shape.n {
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let row = rows.next().unwrap();
                    let mut taps = row.chunks_exact_mut(c);
                    for ky in 0..params.kernel_h {
                        let iy = params.input_y(oy, ky, in_shape.h);
                        for kx in 0..params.kernel_w {
                            let dst = taps.next().unwrap();
                            match (iy, params.input_x(ox, kx, in_shape.w)) {
                                (Some(iy), Some(ix)) => {
                                    let start = in_shape.offset(n, iy, ix, 0);
                                    dst.copy_from_slice(&src[start..start + c]);
                                }
                                _ => dst.fill(0.0),
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> &RowMajorMatrix {
        &self.matrix
    }

    pub fn view(&self) -> MatrixView<'_> {
        self.matrix.view()
    }

    pub fn input_shape(&self) -> Shape4 {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape4 {
        self.output_shape
    }

    pub fn params(&self) -> &ConvParams {
        &self.params
    }

    pub fn allocated_bytes(&self) -> usize {
        self.matrix.allocated_bytes()
    }
}

/// im2col transformation of `input` for `params`.
pub fn build_patch_matrix(input: &NhwcTensor, params: &ConvParams) -> Result<PatchMatrix> {
    let mut patch = PatchMatrix::allocate(input.shape(), params)?;
    patch.fill(input)?;
    Ok(patch)
}

/// Scratch space for [`gemm_conv_into`], reused across calls with the same
/// geometry. 1x1 stride-1 unpadded convolutions feed the input straight to
/// GEMM and allocate nothing.
#[derive(Debug, Clone)]
pub struct Im2colWorkspace {
    patch: Option<PatchMatrix>,
    input_shape: Shape4,
    params: ConvParams,
}

impl Im2colWorkspace {
    pub fn new(input_shape: Shape4, params: &ConvParams) -> Result<Self> {
        let patch = if params.is_pointwise_unit() {
            conv_output_shape(params, input_shape)?;
            None
        } else {
            Some(PatchMatrix::allocate(input_shape, params)?)
        };
        Ok(Im2colWorkspace {
            patch,
            input_shape,
            params: *params,
        })
    }

    pub fn patch(&self) -> Option<&PatchMatrix> {
        self.patch.as_ref()
    }

    pub fn allocated_bytes(&self) -> usize {
        self.patch.as_ref().map_or(0, PatchMatrix::allocated_bytes)
    }
}

/// im2col followed by GEMM, writing into `out`.
pub fn gemm_conv_into(
    input: &NhwcTensor,
    pf: &PackedFilter,
    params: &ConvParams,
    tile: TileConfig,
    workspace: &mut Im2colWorkspace,
    out: &mut NhwcTensor,
) -> Result<()> {
    pf.check(params, tile)?;
    ensure!(
        workspace.input_shape == input.shape() && workspace.params == *params,
        InvalidArgument,
        "workspace built for {:?} / {:?}",
        workspace.input_shape,
        workspace.params
    );
    let out_shape = conv_output_shape(params, input.shape())?;
    ensure!(
        out.shape() == out_shape,
        InvalidArgument,
        "output tensor is {:?}, expected {:?}",
        out.shape(),
        out_shape
    );
    let m = out_shape.pixels();
    let k = params.out_channels;
    let mut c_mat = MatrixViewMut::new(out.data_mut(), m, k, k)?;
    match workspace.patch.as_mut() {
        None => {
            let c = params.in_channels;
            let a = MatrixView::new(input.data(), m, c, c)?;
            gemm(&a, pf, &mut c_mat, tile)
        }
        Some(patch) => {
            patch.fill(input)?;
            gemm(&patch.view(), pf, &mut c_mat, tile)
        }
    }
}

/// The traditional GEMM-based convolution.
pub fn gemm_conv(input: &NhwcTensor, pf: &PackedFilter, params: &ConvParams, tile: TileConfig) -> Result<NhwcTensor> {
    let mut workspace = Im2colWorkspace::new(input.shape(), params)?;
    let mut out = NhwcTensor::zeros(conv_output_shape(params, input.shape())?)?;
    gemm_conv_into(input, pf, params, tile, &mut workspace, &mut out)?;
    Ok(out)
}

/// GEMM over an already built patch matrix, skipping the transformation.
pub fn gemm_only_into(
    prebuilt: &PatchMatrix,
    pf: &PackedFilter,
    tile: TileConfig,
    out: &mut MatrixViewMut<'_>,
) -> Result<()> {
    pf.check(prebuilt.params(), tile)?;
    gemm(&prebuilt.view(), pf, out, tile)
}

pub fn gemm_only(prebuilt: &PatchMatrix, pf: &PackedFilter, tile: TileConfig) -> Result<RowMajorMatrix> {
    let mut out = RowMajorMatrix::zeros(prebuilt.matrix().rows(), pf.out_channels());
    gemm_only_into(prebuilt, pf, tile, &mut out.view_mut())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gemm::pack_filter;
    use crate::reference::direct_conv;
    use crate::tensor::{random_values, FilterTensor};

    #[test]
    fn pointwise_patch_is_input() {
        let x = NhwcTensor::fill_random(Shape4::new(2, 3, 4, 5).unwrap(), 1).unwrap();
        let patch = build_patch_matrix(&x, &ConvParams::new(1, 1, 5, 7)).unwrap();
        assert_eq!(patch.matrix().data(), x.data());
        assert_eq!((patch.matrix().rows(), patch.matrix().cols()), (24, 5));
    }

    #[test]
    fn padded_corner_row() {
        let x = NhwcTensor::from_vec(Shape4::new(1, 2, 2, 1).unwrap(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = ConvParams::new(3, 3, 1, 1).with_uniform_padding(1);
        let patch = build_patch_matrix(&x, &p).unwrap();
        assert_eq!(patch.matrix().row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
        assert_eq!(patch.matrix().row(3), &[1.0, 2.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn three_by_three_replicates_nine_times() {
        let shape = Shape4::new(1, 10, 12, 4).unwrap();
        let x = NhwcTensor::fill_random(shape, 2).unwrap();
        let patch = build_patch_matrix(&x, &ConvParams::new(3, 3, 4, 1).with_uniform_padding(1)).unwrap();
        assert_eq!(patch.matrix().data().len(), 9 * shape.len());
    }

    #[test]
    fn zero_input_gives_zero_patch() {
        let x = NhwcTensor::zeros(Shape4::new(1, 4, 3, 2).unwrap()).unwrap();
        let p = ConvParams::new(3, 2, 2, 1).with_padding(2, 1, 0, 2).with_dilation(2, 1);
        let patch = build_patch_matrix(&x, &p).unwrap();
        assert!(patch.matrix().data().iter().all(|v| v.to_bits() == 0));
    }

    #[test]
    fn patch_dimensions_decouple() {
        let p = ConvParams::new(3, 3, 4, 1).with_uniform_padding(1);
        let a = PatchMatrix::allocate(Shape4::new(1, 6, 6, 4).unwrap(), &p).unwrap();
        let b = PatchMatrix::allocate(Shape4::new(1, 9, 5, 4).unwrap(), &p).unwrap();
        assert_eq!(a.matrix().cols(), b.matrix().cols());
        let p2 = ConvParams::new(3, 1, 7, 1).with_padding(1, 0, 1, 0);
        let c = PatchMatrix::allocate(Shape4::new(1, 6, 6, 7).unwrap(), &p2).unwrap();
        assert_eq!(a.matrix().rows(), c.matrix().rows());
    }

    fn check_against_direct(shape: Shape4, params: ConvParams, seed: u64) {
        let x = NhwcTensor::fill_random(shape, seed).unwrap();
        let f = FilterTensor::fill_random(&params, seed + 1).unwrap();
        let bias = random_values(params.out_channels, seed + 2);
        let pf = pack_filter(&f, Some(&bias), &params, TileConfig::default()).unwrap();
        let want = direct_conv(&x, &f, Some(&bias), &params).unwrap();
        let got = gemm_conv(&x, &pf, &params, TileConfig::default()).unwrap();
        assert_eq!(got, want, "{params:?}");
    }

    #[test]
    fn matches_direct_conv() {
        check_against_direct(Shape4::new(2, 4, 5, 6).unwrap(), ConvParams::new(1, 1, 6, 10), 1);
        check_against_direct(
            Shape4::new(1, 5, 5, 4).unwrap(),
            ConvParams::new(3, 3, 4, 8).with_stride(2, 2).with_uniform_padding(1),
            42,
        );
        check_against_direct(
            Shape4::new(1, 16, 16, 3).unwrap(),
            ConvParams::new(7, 7, 3, 8).with_stride(2, 2).with_uniform_padding(3),
            7,
        );
    }

    #[test]
    fn gemm_only_composes() {
        let p = ConvParams::new(3, 3, 3, 5).with_uniform_padding(1);
        let x = NhwcTensor::fill_random(Shape4::new(1, 4, 4, 3).unwrap(), 3).unwrap();
        let f = FilterTensor::fill_random(&p, 4).unwrap();
        let pf = pack_filter(&f, None, &p, TileConfig::default()).unwrap();
        let patch = build_patch_matrix(&x, &p).unwrap();
        let o1 = gemm_only(&patch, &pf, TileConfig::default()).unwrap();
        let o2 = gemm_only(&patch, &pf, TileConfig::default()).unwrap();
        assert_eq!(o1, o2);
        let full = gemm_conv(&x, &pf, &p, TileConfig::default()).unwrap();
        assert_eq!(o1.data(), full.data());
    }

    #[test]
    fn workspace_sizes() {
        let shape = Shape4::new(1, 8, 8, 16).unwrap();
        let ws = Im2colWorkspace::new(shape, &ConvParams::new(1, 1, 16, 4)).unwrap();
        assert_eq!(ws.allocated_bytes(), 0);
        let ws = Im2colWorkspace::new(shape, &ConvParams::new(1, 1, 16, 4).with_stride(2, 2)).unwrap();
        assert_eq!(ws.allocated_bytes(), 16 * 16 * 4);
    }

    #[test]
    fn mismatched_workspace_rejected() {
        let p = ConvParams::new(3, 3, 2, 2);
        let x = NhwcTensor::zeros(Shape4::new(1, 5, 5, 2).unwrap()).unwrap();
        let f = FilterTensor::fill_random(&p, 1).unwrap();
        let pf = pack_filter(&f, None, &p, TileConfig::default()).unwrap();
        let mut ws = Im2colWorkspace::new(Shape4::new(1, 6, 5, 2).unwrap(), &p).unwrap();
        let mut out = NhwcTensor::zeros(Shape4::new(1, 3, 3, 2).unwrap()).unwrap();
        assert!(gemm_conv_into(&x, &pf, &p, TileConfig::default(), &mut ws, &mut out).is_err());
    }
}
