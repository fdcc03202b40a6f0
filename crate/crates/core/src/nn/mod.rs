//! Small differentiable models with hand-written backpropagation.
//!
//! Supported layers are dense (ReLU or identity), embedding-bag (mean of the
//! rows of the tokens present) and inverted dropout; the loss is always
//! softmax cross-entropy averaged over the batch.

mod logistic;
mod model;
mod network;

pub use logistic::{train_binary_classifier, AttackExample, ClassifierConfig, LogisticModel};
pub use model::{bias_id, embedding_id, weight_id, Activation, LayerSpec, ModelSpec};
pub use network::{sgd_step, DropoutMode, MultiTaskGrads, Network, PropertyHead};
