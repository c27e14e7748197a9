//! Desk-scale differentiable RD detector with a hand-written backward pass.
//!
//! Pipeline: three stride-2 3×3 convolutions with instance normalization
//! and SiLU, a residual block, additive 2D sinusoidal position encoding,
//! two windowed self-attention blocks (the second cyclically shifted by
//! half a window), SPPF and a 1×1 head predicting a confidence logit and
//! two sub-cell offset logits per 8×8 cell. Training and inference run in
//! f64; the forward pass is also available in double-double precision as a
//! reference for finite-difference checks.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod real;
pub mod train;
pub mod weights;

pub use gradcheck::{grad_check, layer_checks, GradCheckReport};
pub use layers::Tensor;
pub use loss::{loss, LossOutput};
pub use network::{backward, decode_detections, forward, input_tensor, positional_encoding, DetectionMap, ForwardCache};
pub use real::{Real, Wide};
pub use train::{train, train_from, TrainConfig, TrainOutcome};
pub use weights::WeightSet;

/// `x·σ(x)`.
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
