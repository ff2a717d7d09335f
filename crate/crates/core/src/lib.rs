//! Retrieval-augmented generation over technical PDF corpora.
//!
//! * [`layout`] turns two-column pages into Markdown in reading order.
//! * [`index`] chunks and embeds Markdown into a persistent flat index.
//! * [`retrieval`] fuses BM25 and vector search, then compresses contexts.
//! * [`agent`] answers through a self-correcting retrieve/grade/generate loop.
//! * [`funcall`] packs persona, detail level and history into tool calls.
//! * [`eval`] scores answers with four reference-style metrics.
//! * [`backend`] hides the model server; [`backend::MockBackend`] runs offline.
//! * [`service`] ties it together for the CLI and HTTP frontends.

pub mod agent;
pub mod backend;
pub mod config;
pub mod error;
pub mod eval;
pub mod funcall;
pub mod index;
pub mod layout;
pub mod pipeline;
pub mod retrieval;
pub mod service;
pub mod text;

pub use error::{Error, Result};
