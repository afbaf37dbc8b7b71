//! Minimal differentiable compute for the intent models.
//!
//! Every layer owns its [`Param`]s and exposes an explicit
//! `forward`/`backward` pair; callers keep whatever activations the backward
//! pass needs. There is no tape: the models in this crate are small and fixed,
//! so hand-written backward passes are both faster and easier to verify with
//! [`grad_check`].

mod adam;
mod attention;
mod gradcheck;
mod layers;
mod ops;
mod tensor;
mod transformer;

pub use adam::AdamState;
pub use attention::{AttentionCache, MultiHeadAttention};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_FLOOR};
pub use layers::{FeedForward, FeedForwardCache, LayerNorm, LayerNormCache, Linear, SparseLinear};
pub use ops::{dropout, layer_norm, log_softmax, logsumexp, softmax, softmax_in_place, Mode};
pub use tensor::{xavier_uniform, Param, Tensor};
pub(crate) use tensor::{axpy, dot};
pub use transformer::{EncoderBlock, Transformer, TransformerCache};

/// Anything holding trainable parameters.
pub trait HasParams {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}
