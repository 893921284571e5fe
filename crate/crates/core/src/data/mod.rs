//! Datasets: the sparse multi-label text format, CoNLL-style column files,
//! the synthetic correlated-label generator, splitting, and label statistics.

mod conll;
mod mlc;
mod split;
mod synth;

pub use conll::{load_conll, load_conll_with_vocab, parse_conll, SeqDataset, SeqExample, UNKNOWN_TOKEN};
pub use mlc::{load_mlc, parse_mlc, write_mlc, MlcDataset, MlcExample};
pub use split::{split, Split};
pub use synth::{cooccurrence, gen_synth, SynthSpec};
