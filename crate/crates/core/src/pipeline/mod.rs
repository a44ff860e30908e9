//! The executable split pipeline: filter gate, client session and edge
//! server. Frames use the [`crate::wire`] format.

pub mod filter;
pub mod ratelimit;
pub mod server;
pub mod session;

pub use filter::{filter_decide, gate_metrics, Decision, FilterModel, GateMetrics, LatentScore};
pub use server::{serve, Server, ServerHandle, ServerOptions, ServerStats, TailMode};
pub use session::{
    run_session, synthetic_images, ImageRecord, LabeledImage, SessionLog, SessionMode,
};

use sha2::{Digest, Sha256};

/// SHA-256 of a byte string; the server echoes this for the dequantized
/// tensor so the client can check bit-exact agreement.
pub fn checksum(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}
