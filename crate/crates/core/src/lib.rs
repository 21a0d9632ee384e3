//! Desk-scale laboratory for masked-prediction speech pretraining efficiency
//! experiments: interchangeable front-ends, span masking, pretraining losses,
//! CTC fine-tuning, and a per-component wall-clock profiler.

pub mod adam;
pub mod audio;
pub mod batching;
pub mod checkpoint;
pub mod config;
pub mod ctc;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod features;
pub mod finetune;
pub mod frontends;
pub mod harness;
pub mod kmeans;
pub mod labels;
pub mod losses;
pub mod manifest;
pub mod masking;
pub mod mat;
pub mod model;
pub mod nn;
pub mod pretrain;
pub mod profiler;
pub mod rng;
pub mod schedule;
pub mod synth;
pub mod tokenizer;
pub mod wer;

pub use error::{Error, ErrorClass, Result};
