//! Corpora, vocabularies, batch preparation and the synthetic corpus generator.

mod batch;
mod corpus;
pub mod synth;
mod vocab;

pub use batch::{encode_source, prepare_batch, Batch, LengthLimit, SkippedExample, TaskVocabs};
pub use corpus::{load_corpus, parse_corpus, save_corpus, Example, LineIssue, LoadedCorpus};
pub use synth::{default_grammar, generate_synthetic, Grammar, GrammarSpec, SyntheticCorpora, TaskSplits};
pub use vocab::{build_vocab, Vocabulary, BOS, BOS_TOKEN, EOS, EOS_TOKEN, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
