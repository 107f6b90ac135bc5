//! Dense and blocked FP32 tensors, layout transforms and comparison helpers.

mod blocked;
mod dense;
mod io;

pub use blocked::{
    block_conv_tensors, block_weight_2d, clamp_block, crop_spatial, pad_spatial, BlockedLayout,
    BlockedTensor, DimMap,
};
pub use dense::{max_rel_error, max_rel_error_slices, DenseTensor};
