//! Weakly-supervised speech emotion recognition.
//!
//! Weak emotion labels are inferred from transcripts by scoring every
//! (transcript, prompted label) pair with an entailment scorer and keeping
//! the best label. An audio-only classifier is then pre-trained on those
//! labels from log-mel features and evaluated by fine-tuning, zero-shot
//! classification and label-efficiency sweeps.

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod labeler;
pub mod model;
pub mod par;
pub mod prompting;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
