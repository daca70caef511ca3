//! Vision transformer over a sparse set of patches.
//!
//! Each selected patch is embedded linearly and offset by a linear function
//! of its grid coordinates normalized to `[0, 1]`. A learned class token is
//! prepended, pre-norm encoder blocks follow, and the head reads the
//! normalized class token. Gradients are computed by a hand-written reverse
//! pass over the same graph.

mod checkpoint;
mod network;
mod ops;
mod params;

pub use self::checkpoint::{read_header, Checkpoint, CheckpointHeader, TensorEntry, FORMAT_VERSION, MAGIC};
pub use self::network::{
    attention_probabilities, cross_entropy, encode_input, forward, loss, loss_and_grad, loss_grad_logits, multi_head_attention,
    normalized_coord, transformer_block, Logits, Mode, PatchSequence, TokenSequence,
};
pub use self::params::{
    init_params, BlockParams, ModelConfig, ModelParams, NamedTensor, ParamKind, Tensor, INIT_STD,
};

#[cfg(test)]
mod tests;
