//! Wire protocol and transport for split inference.
//!
//! The client half runs locally and ships only its output activations; the
//! server half answers with the fuzzed label, which the client recovers
//! locally. Frames are length-prefixed little-endian binary with a fixed
//! magic, so any byte transport works — the TCP pieces here are thin shells
//! around the codec.
//!
//! Error frames use three codes: `1` for a well-formed request the model
//! cannot process (wrong width, non-finite entries; the connection stays
//! open), `2` for a frame exceeding the payload limit and `3` for bytes
//! that do not parse (both close the connection, since framing can no
//! longer be trusted).

mod client;
mod cost;
mod server;
mod wire;

pub use client::{client_infer, client_infer_on};
pub use cost::comm_cost;
pub use server::{serve, RunningServer, ServeLimits};
pub use wire::{
    decode_message, encode_message, read_message, write_message, WireMessage, ERR_DIMENSION,
    ERR_MALFORMED, ERR_OVERSIZED, HEADER_LEN, MAX_PAYLOAD, WIRE_MAGIC,
};
