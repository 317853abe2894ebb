//! Core algorithms for personalizing encoder-decoder speech recognizers.
//!
//! Everything in this crate is pure computation over `alloc` containers:
//! log-Mel feature extraction and SpecAugment masking, a small deterministic
//! reference transformer backbone, pooled-embedding conditioning, low-rank
//! adapter fine-tuning (LoRA / AdaLoRA) with rank budgeting, the training
//! schedule and optimizer math, and WER / SemScore metric primitives.
//!
//! IO, file formats, model clients, and the CLI live in the companion
//! `adaptasr` crate.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adapters;
pub mod autodiff;
pub mod backbone;
pub mod conditioning;
pub mod frontend;
pub mod mathutil;
pub mod metrics;
pub mod optim;
pub mod phonetics;
pub mod schedule;
pub mod semscore;
pub mod tensor;
pub mod text;

pub use tensor::Mat;
