//! Experiment driver pieces: synthetic corpora, dropout sweeps and the ZEEG format.

pub mod sweep;
pub mod synth;
pub mod toy;
pub mod zeeg;

pub use sweep::{n_dropped, run_sweep, Method, SweepResult, SweepRow, SweepSpec};
pub use synth::{synth_generate, synth_recording_at, SynthSpec};
pub use zeeg::{decode_zeeg, encode_zeeg, read_zeeg, write_zeeg};
pub use toy::{build_corpora, clean_holdout, preprocess_corpus, train_toy, training_grids, ToyConfig};
