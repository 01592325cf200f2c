//! Differentiable building blocks with hand-written gradients.
//!
//! Every forward function has a matching backward that takes the upstream
//! gradient and returns the gradient with respect to its input, accumulating
//! parameter gradients into a caller-owned gradient copy of the layer.

mod activation;
mod adam;
mod layer_norm;
mod linear;
mod loss;

pub use activation::{
    dropout, dropout_backward, relu, relu_backward, softmax_backward, softmax_rows,
    DropoutMask, MASK_NEG,
};
pub use adam::{Adam, AdamConfig};
pub use layer_norm::{LayerNorm, LayerNormCache, LN_EPS};
pub use linear::Linear;
pub use loss::{bce_with_logits, cce_with_logits, mse, LossValue};
