//! Poster generation toolkit: turns a scientific paper into an editable
//! landscape poster and scores the result.
//!
//! The pipeline runs in three stages. [`parser`] converts the source PDF to
//! markdown, asks a text model for a section outline, and filters the
//! extracted figures. [`planner`] matches assets to sections, estimates
//! content weights, and lays the poster out as a binary tree of panels.
//! [`painter`] fills each panel with bullet text, renders a crop, and runs a
//! critique/refine loop until the text fits. The finished poster is written
//! as a single-slide .pptx by [`doc`].
//!
//! Evaluation lives in [`metrics`] (visual similarity, figure relevance,
//! perplexity, six-criterion judge) and [`quiz`] (multiple-choice comprehension
//! tests administered to reader models). All model traffic goes through
//! [`gateway`], which meters tokens and computes dollar cost.

pub mod config;
pub mod doc;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod painter;
pub mod parser;
pub mod pipeline;
pub mod planner;
pub mod prompts;
pub mod quiz;
pub mod schemas;

pub use error::{Error, Result};
