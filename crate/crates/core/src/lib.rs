//! Continual reinforcement learning with per-task quality-diversity policy
//! archives.
//!
//! The crate is organised bottom-up:
//!
//! - [`gridworld`]: procedural five-family task ladder, reward rule and the
//!   per-step behaviour feature logger.
//! - [`neural`]: dense/GRU layers with hand-written reverse mode, Adam and the
//!   parameter blob format.
//! - [`agent`]: actor-critic PPO, episodic count bonus and the single-model
//!   baseline transforms.
//! - [`embedder`]: trajectory encoder, policy summaries, views, contrastive and
//!   distillation losses, robust normaliser.
//! - [`archive`]: unstructured MAP-Elites container and illumination.
//! - [`transfer`]: candidate pooling and few-shot origin selection.
//! - [`maintenance`]: anchor/replay banks and boundary re-embedding.
//! - [`metrics`]: retention, basin, novelty, lineage and geometry analysis.
//! - [`runner`]: curricula, method variants, persistence and reports.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity)]

pub mod agent;
pub mod archive;
pub mod embedder;
pub mod error;
pub mod gridworld;
pub mod maintenance;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod runner;
pub mod transfer;

pub use error::{Error, Result};
