//! Numeric layer primitives.

mod activation;
mod conv;
mod pool;

pub use activation::{
    cross_entropy, dropout_backward, dropout_forward, relu_backward, relu_forward, softmax,
    softmax_cross_entropy_backward, DropoutMask,
};
pub(crate) use conv::conv2d_backward_opt;
pub use conv::{conv2d_backward, conv2d_forward, conv_out_extent, AxisGeometry, ConvGeometry};
pub use pool::{global_average_pool, global_average_pool_backward};

/// Runs `f(sample_index, chunk)` over consecutive `chunk_len` slices of `data`.
///
/// Each chunk is written by exactly one call, so results do not depend on
/// scheduling.
pub(crate) fn par_batches<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(n, chunk)| f(n, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk_len).enumerate().for_each(|(n, chunk)| f(n, chunk));
    }
}
