//! Stateful screen schemas for GUI screen recordings.
//!
//! The pipeline turns a clip of grayscale frames into a compact schema (key
//! frames, OCR text of changed regions, cursor position), feeds it to a
//! multimodal model through a recurrent memory loop, and scores the answers.

pub mod canonical;
pub mod cursor;
pub mod error;
pub mod frameio;
pub mod keyframe;
pub mod linalg;
pub mod memory;
pub mod metrics;
pub mod mllm;
pub mod ocr;
pub mod paramfile;
pub mod regions;
pub mod schema;
pub mod taxonomy;

pub use error::{Error, Result};
