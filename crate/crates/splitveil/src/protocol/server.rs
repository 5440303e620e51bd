//! The serving side of the split: hosts a private server half behind a TCP
//! endpoint and answers inference requests with fuzzed labels.
//!
//! The loaded half is immutable shared state, so connections are served by
//! independent threads with no locking. A broken or hostile connection only
//! ever terminates itself — the listener keeps accepting.

use super::wire::{
    decode_payload, split_header, write_message, WireMessage, ERR_DIMENSION, ERR_MALFORMED,
    ERR_OVERSIZED, HEADER_LEN, MAX_PAYLOAD,
};
use crate::error::{Error, Result};
use crate::secure::ServerHalf;
use std::io::{ErrorKind, Read};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

/// Per-deployment protocol limits.
#[derive(Debug, Clone, Copy)]
pub struct ServeLimits {
    /// Largest accepted payload; may be lowered below the protocol-wide
    /// 16 MiB cap, never raised above it.
    pub max_payload: u32,
}

impl Default for ServeLimits {
    fn default() -> Self {
        Self {
            max_payload: MAX_PAYLOAD,
        }
    }
}

/// Handle to a live server. Dropping it (or calling [`shutdown`]) stops the
/// accept loop; connections already being served drain on their own as
/// their peers disconnect.
///
/// [`shutdown`]: RunningServer::shutdown
pub struct RunningServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_handle: Option<JoinHandle<()>>,
}

impl RunningServer {
    /// The bound address — useful when serving on port 0.
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(handle) = self.accept_handle.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Self-connect to unblock the accept call.
            let _ = TcpStream::connect(self.addr);
            let _ = handle.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Binds `endpoint` and serves the private half until shutdown.
///
/// Each request is answered with an `InferResponse` carrying the fuzzed
/// label, or an in-protocol `Error` frame: code 1 for a vector of the wrong
/// width (connection stays open), code 2 for an oversized frame and code 3
/// for an unparsable one (connection closes, since framing is lost).
pub fn serve(
    half: ServerHalf<f64>,
    endpoint: impl ToSocketAddrs,
    limits: ServeLimits,
) -> Result<RunningServer> {
    if limits.max_payload > MAX_PAYLOAD {
        return Err(Error::Contract(format!(
            "per-deployment payload limit {} exceeds the protocol cap {MAX_PAYLOAD}",
            limits.max_payload
        )));
    }
    if half.n_classes() > usize::from(u16::MAX) {
        return Err(Error::Contract(format!(
            "{} classes cannot be represented in a response frame",
            half.n_classes()
        )));
    }
    let listener = TcpListener::bind(endpoint).map_err(Error::Transport)?;
    let addr = listener.local_addr().map_err(Error::Transport)?;
    let stop = Arc::new(AtomicBool::new(false));
    let half = Arc::new(half);

    let accept_stop = Arc::clone(&stop);
    let accept_handle = thread::spawn(move || {
        for conn in listener.incoming() {
            if accept_stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else {
                continue; // a failed accept never stops the service
            };
            let half = Arc::clone(&half);
            let conn_stop = Arc::clone(&accept_stop);
            thread::spawn(move || handle_connection(stream, &half, limits, &conn_stop));
        }
    });

    Ok(RunningServer {
        addr,
        stop,
        accept_handle: Some(accept_handle),
    })
}

enum ReadOutcome {
    Complete,
    /// EOF before the first byte — the peer closed at a frame boundary.
    CleanEof,
    Shutdown,
}

/// Fills `buf` from a read-timeout socket, polling the stop flag between
/// timeouts so connections drain promptly at shutdown. Partial frames
/// survive the polling: data read so far is kept across timeouts.
fn read_exact_polling(
    stream: &mut TcpStream,
    buf: &mut [u8],
    stop: &AtomicBool,
) -> std::io::Result<ReadOutcome> {
    let mut filled = 0;
    while filled < buf.len() {
        if stop.load(Ordering::SeqCst) {
            return Ok(ReadOutcome::Shutdown);
        }
        match stream.read(&mut buf[filled..]) {
            Ok(0) => {
                return if filled == 0 {
                    Ok(ReadOutcome::CleanEof)
                } else {
                    Err(ErrorKind::UnexpectedEof.into())
                };
            }
            Ok(n) => filled += n,
            Err(e)
                if matches!(
                    e.kind(),
                    ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted
                ) =>
            {
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ReadOutcome::Complete)
}

fn handle_connection(
    mut stream: TcpStream,
    half: &ServerHalf<f64>,
    limits: ServeLimits,
    stop: &AtomicBool,
) {
    let _ = stream.set_read_timeout(Some(Duration::from_millis(50)));
    let _ = stream.set_nodelay(true);
    loop {
        let mut header = [0u8; HEADER_LEN];
        match read_exact_polling(&mut stream, &mut header, stop) {
            Ok(ReadOutcome::Complete) => {}
            Ok(ReadOutcome::CleanEof) | Ok(ReadOutcome::Shutdown) | Err(_) => return,
        }
        let (msg_type, payload_len) = match split_header(&header) {
            Ok(parts) => parts,
            Err(e) => {
                respond(&mut stream, ERR_MALFORMED, &e.to_string());
                return;
            }
        };
        if payload_len > limits.max_payload {
            respond(
                &mut stream,
                ERR_OVERSIZED,
                &format!(
                    "payload of {payload_len} bytes exceeds the {}-byte limit",
                    limits.max_payload
                ),
            );
            return;
        }
        let mut payload = vec![0u8; payload_len as usize];
        match read_exact_polling(&mut stream, &mut payload, stop) {
            Ok(ReadOutcome::Complete) => {}
            // Mid-frame EOF: the peer is gone, there is no one to answer.
            Ok(ReadOutcome::CleanEof) | Ok(ReadOutcome::Shutdown) | Err(_) => return,
        }
        let request = match decode_payload(msg_type, &payload) {
            Ok(m) => m,
            Err(e) => {
                respond(&mut stream, ERR_MALFORMED, &e.to_string());
                return;
            }
        };
        let WireMessage::InferRequest { vector } = request else {
            respond(
                &mut stream,
                ERR_MALFORMED,
                "only inference requests are accepted here",
            );
            return;
        };
        let reply = infer_reply(half, &vector);
        if write_message(&mut stream, &reply).is_err() {
            return; // peer vanished mid-reply
        }
    }
}

/// Computes the reply for one request. Bad vectors (wrong width, non-finite
/// entries) get a code-1 error and leave the connection usable.
fn infer_reply(half: &ServerHalf<f64>, vector: &[f64]) -> WireMessage {
    if vector.len() != half.in_dim() {
        return WireMessage::Error {
            code: ERR_DIMENSION,
            message: format!(
                "expected {} activations, got {}",
                half.in_dim(),
                vector.len()
            ),
        };
    }
    match half.forward(vector) {
        Ok(label) => WireMessage::InferResponse {
            label: label as u16,
            n_classes: half.n_classes() as u16,
        },
        Err(e) => WireMessage::Error {
            code: ERR_DIMENSION,
            message: format!("request vector rejected: {e}"),
        },
    }
}

fn respond(stream: &mut TcpStream, code: u16, message: &str) {
    // Error frames carry at most u16::MAX message bytes; truncate on a char
    // boundary rather than fail.
    let mut message = message.to_string();
    while message.len() > usize::from(u16::MAX) {
        message.pop();
    }
    let _ = write_message(stream, &WireMessage::Error { code, message });
}
