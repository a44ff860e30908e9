//! Split-computing toolkit for edge-assisted object detection.
//!
//! A detector is split at an injected bottleneck: the mobile device runs the
//! head, quantizes the small bottleneck activation and ships it to an edge
//! server that runs the tail. This crate models every piece of that path:
//!
//! - [`tensor`]: dense `f32` tensors shared by the codec and the trainer.
//! - [`codec`]: 8-bit affine / binary16 quantization and size accounting.
//! - [`netspec`]: layer-list shape tracing and parameter counts.
//! - [`distill`]: multi-tap distillation loss and a toy affine trainer.
//! - [`latency`]: capture-to-output delay for local, offloaded and split runs.
//! - [`wire`] and [`pipeline`]: framing, the prefilter gate, and the
//!   client/server session over a simulated channel or loopback TCP.
//! - [`config`]: the JSON experiment document.

pub mod codec;
pub mod config;
pub mod distill;
pub mod error;
pub mod latency;
pub mod netspec;
pub mod pipeline;
pub mod tensor;
pub mod wire;

pub use error::{Error, Result};
