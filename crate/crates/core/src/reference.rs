//! Scalar loop-nest convolution, used as the correctness oracle for the
//! GEMM-based and indirect back-ends.

use crate::error::{ensure, Result};
use crate::tensor::{conv_output_shape, ConvParams, FilterTensor, NhwcTensor};

/// Direct convolution as seven nested loops.
///
/// Each output element starts from `bias[oc]` (or zero) and accumulates the
/// in-bounds taps in `ky -> kx -> ic` order, one multiply and one add per
/// tap. The packed back-ends reduce in the same order, which is what makes
/// bit-exact comparison possible.
pub fn direct_conv(
    input: &NhwcTensor,
    filter: &FilterTensor,
    bias: Option<&[f32]>,
    params: &ConvParams,
) -> Result<NhwcTensor> {
    let in_shape = input.shape();
    let out_shape = conv_output_shape(params, in_shape)?;
    filter.check(params)?;
    if let Some(b) = bias {
        ensure!(
            b.len() == params.out_channels,
            InvalidArgument,
            "bias has {} entries, expected {}",
            b.len(),
            params.out_channels
        );
    }

    let x = input.data();
    let w = filter.data();
    let mut out = NhwcTensor::zeros(out_shape)?;
    let y = out.data_mut();

    for n in 0..out_shape.n {
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                for oc in 0..params.out_channels {
                    let mut acc = bias.map_or(0.0, |b| b[oc]);
                    for ky in 0..params.kernel_h {
                        let Some(iy) = params.input_y(oy, ky, in_shape.h) else {
                            continue;
                        };
                        for kx in 0..params.kernel_w {
                            let Some(ix) = params.input_x(ox, kx, in_shape.w) else {
                                continue;
                            };
                            let x_base = in_shape.offset(n, iy, ix, 0);
                            let w_base = filter.offset(oc, ky, kx, 0);
                            for ic in 0..params.in_channels {
                                acc += x[x_base + ic] * w[w_base + ic];
                            }
                        }
                    }
                    y[out_shape.offset(n, oy, ox, oc)] = acc;
                }
            }
        }
    }
    Ok(out)
}
