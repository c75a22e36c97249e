//! Dense f64 layers with hand-written backward passes and Adam.

mod activation;
pub mod checkpoint;
mod embedding;
pub mod gradcheck;
mod gru;
mod linear;
mod param;
mod tensor;

pub use activation::{sigmoid, Activation};
pub use embedding::{EmbeddingCache, QuantileEmbedding};
pub use gru::{GruCache, GruCell};
pub use linear::Linear;
pub use param::{clip_grad_norm, Adam, Param};
pub use tensor::Tensor2;
