//! The temporal CNN risk model.
//!
//! Events are looked up as rows of an embedding table, convolved over the
//! time axis only by banks of filters of different widths, passed through
//! tanh and max-pooled over time, so any sequence length maps to one vector
//! of `sum(K)` features. A dense layer with a two-way softmax gives the
//! class probabilities. Training uses exact backpropagation of the mean
//! cross-entropy and AdaDelta.

mod adadelta;
mod checkpoint;
mod conv;
mod gradcheck;
mod model;
mod train;

pub use adadelta::{AdaDelta, AdaDeltaState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, MAGIC};
pub use conv::{conv1d_forward, max_pool_time, Conv1dBank};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{backward, forward, Batch, CnnModel, EmbeddingInputMode, ForwardCache, Gradients, ModelConfig, PAD};
pub use train::{predict, train_cnn, train_model, EpochRecord, TrainConfig, TrainingHistory};
