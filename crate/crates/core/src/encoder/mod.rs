mod bayes;
mod encoding;
mod stack;
mod tokens;

pub use bayes::{bind, effective_weights, kl_to_standard_normal, sample_weights, BayesLinear, Bound, WeightNoise};
pub use encoding::{spatio_temporal_encoding, Parity};
pub use stack::{inject_features, EncoderConfig, EncoderLayer, EncoderStack, LayerNorm};
pub use tokens::{flatten_history, Token, TokenSequence, NUM_SPECIALS};
