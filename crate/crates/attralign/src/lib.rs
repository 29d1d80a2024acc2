//! Attribute-aligned controllable text generation.
//!
//! A small frozen decoder-only language model is steered toward target
//! attributes (sentiment, topics, arbitrary words or phrases) by trainable
//! alignment MLPs. An attribute phrase is encoded once by the frozen LM; the
//! alignment functions transform its per-layer key/value representations into
//! a prefix block that is prepended to the attention cache, so every text
//! token attends to it in addition to normal self-attention. The LM itself is
//! never updated.
//!
//! The crate ships the full pipeline: a dense-tensor autograd engine, the
//! transformer LM with key/value cache, alignment training under four loss
//! variants (`A`, `AC`, `ACK`, `ACB`), nucleus-sampling generation including
//! two-stream Bayes decoding, an automatic-metric evaluation harness, and
//! synthetic corpus generators that make the whole stack testable on a desk.
//!
//! ## Where to start
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --release --example synthesize_corpus
//! cargo run --release --example pretrain_lm
//! cargo run --release --example train_alignment
//! cargo run --release --example generate_controlled
//! cargo run --release --example bayes_decoding
//! cargo run --release --example multi_attribute_zero_shot
//! cargo run --release --example best_of_n_selection
//! cargo run --release --example finetune_baseline
//! cargo run --release --example evaluate_metrics
//! cargo run --release --example gradient_check
//! ```
//!
//! The same capabilities are reachable from the `attralign` binary
//! (`synth-data`, `pretrain`, `train-align`, `finetune`, `generate`,
//! `evaluate`, `gradcheck`); run `attralign --help`.

pub mod checkpoint;
pub mod error;
pub mod lm;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};
