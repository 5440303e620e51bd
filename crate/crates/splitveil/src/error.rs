//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// All failure classes surfaced by public operations.
///
/// `Contract` marks caller mistakes (violated preconditions), while the
/// format/consistency/protocol variants mark bad data arriving from disk or
/// the network. Transport wraps socket-level trouble so callers can tell a
/// dead peer from a peer that answered with garbage.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or shape mismatch between tensors/layers.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Operation hit a layer kind it cannot execute (e.g. forward through a
    /// convolution descriptor, which exists for cost accounting only).
    #[error("unsupported layer: {0}")]
    UnsupportedLayer(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed bytes: bad magic, bad version, truncation, trailing data.
    #[error("format error: {0}")]
    Format(String),

    /// Structurally valid bytes that contradict their own metadata.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A security gate refused to proceed (e.g. publishing a client half
    /// whose inputs are uniquely reconstructable).
    #[error("security precondition failed: {0}")]
    Security(String),

    /// Wire-protocol violation by the peer.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Socket/stream failure underneath the protocol.
    #[error("transport error: {0}")]
    Transport(#[source] std::io::Error),

    /// The peer answered with an in-protocol Error frame.
    #[error("remote error {code}: {message}")]
    Remote { code: u16, message: String },

    /// Local file IO failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A pipeline stage failed; wraps the stage name for diagnostics.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tags an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
