//! Single-precision NHWC convolution with three interchangeable back-ends:
//!
//! * [`reference::direct_conv`], a plain loop nest used as the oracle,
//! * [`im2col::gemm_conv`], patch matrix + tiled GEMM,
//! * [`indirect::indirect_conv`], GEMM over an indirection buffer of input
//!   row references, with no patch matrix at all.
//!
//! All three reduce every output element in the same `ky -> kx -> ic` order
//! with one multiply and one add per term, so their results agree
//! bit-for-bit.

pub mod analysis;
pub mod error;
pub mod gemm;
pub mod im2col;
pub mod indirect;
pub mod reference;
pub mod tensor;

pub use error::{ConvError, Result};
pub use gemm::{
    gemm, gemm_microkernel, pack_filter, MatrixView, MatrixViewMut, PackedFilter, RowMajorMatrix, TileConfig,
};
pub use im2col::{
    build_patch_matrix, gemm_conv, gemm_conv_into, gemm_only, gemm_only_into, Im2colWorkspace, PatchMatrix,
};
pub use indirect::{
    indirect_conv, indirect_conv_into, indirect_gemm_microkernel, init_indirection_buffer, BufferGeometry,
    IndirectionBuffer, RowRef, ZeroRow,
};
pub use reference::direct_conv;
pub use tensor::{conv_output_shape, ConvParams, FilterTensor, NhwcTensor, Shape4, StorageId};
