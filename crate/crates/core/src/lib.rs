//! Core library for inducing context-free scene grammars from corpora of 3D
//! indoor layouts, parsing scenes into attributed rule sequences, and
//! training a grammar-masked variational sequence autoencoder whose decoder
//! can only emit valid scenes.
//!
//! The crate is `no_std` (with `alloc`): it holds the pure algorithmic
//! pipeline. File formats, the CLI and rendering live in the companion
//! `scene-grammar` crate.
//!
//! Pipeline overview:
//!
//! 1. [`causal`] builds co-occurrence tables from a corpus, runs chi-squared
//!    conditional-independence tests, orients edges and adds geometric
//!    support/enclosure edges, producing an acyclic causal graph.
//! 2. [`induction`] selects anchor non-terminals from that graph and greedily
//!    assembles a [`grammar::Grammar`] that covers the corpus.
//! 3. [`codec`] converts scenes to and from attributed rule sequences with a
//!    unique leftmost derivation, and exposes the stack-driven rule masking
//!    that makes decoding total.
//! 4. [`vae`] trains the variational autoencoder over those sequences and
//!    supports sampling, interpolation and latent projection.
//! 5. [`metrics`] scores predicted layouts against ground truth.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod causal;
pub mod codec;
pub mod geom;
pub mod grammar;
pub mod induction;
pub mod scene;
pub mod synth;

pub use geom::{BoxShape, PlacedBox, Pose};
pub use grammar::{Grammar, GrammarBuilder, NonTerminal, Rule, RuleKind, Symbol};
pub use scene::{CategoryId, ObjectInstance, Scene, Vocabulary};
