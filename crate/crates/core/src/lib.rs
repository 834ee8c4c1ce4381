//! Evaluation workbench for text generators.
//!
//! The crate covers the offline half of the workflow:
//!
//! - [`corpus`]: CoNLL-U and plain-text ingestion into one document model.
//! - [`profiling`]: per-sentence linguistic features and corpus aggregates.
//! - [`freqdict`]: reference frequency dictionaries and top-rank hit rates.
//! - [`markov`]: the state-size-k Markov chain baseline (train, generate,
//!   continue, score).
//! - [`perplexity`]: per-domain perplexity from external log-probabilities
//!   or from the Markov scorer.
//! - [`stimuli`]: 4x3 stimulus construction and subject session plans.
//! - [`annotation`]: judgment records shared with the HTTP service.
//! - [`results`]: ranking and classification percentage tables.
//!
//! All randomness goes through [`rng`], which pins the generator and the
//! sampling arithmetic so seeded runs are reproducible bit for bit.

pub mod annotation;
pub mod corpus;
pub mod freqdict;
pub mod markov;
pub mod numeric;
pub mod perplexity;
pub mod profiling;
pub mod reference;
pub mod results;
pub mod rng;
pub mod stimuli;

pub use corpus::{Corpus, Document, Sentence, Token, Upos};
