//! CBOW word embeddings with a Huffman-coded hierarchical softmax.

pub mod gradcheck;
pub mod huffman;
pub mod io;
pub mod space;
pub mod train;

pub use gradcheck::{analytic_gradients, gradient_check};
pub use huffman::HuffmanCoding;
pub use space::{context_mean, EmbeddingSpace, SoftmaxMode};
pub use train::{train, train_cross, train_two_round, EpochStats, TrainConfig, TrainStats, Trained};
