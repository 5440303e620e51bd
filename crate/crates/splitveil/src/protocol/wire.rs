//! Frame codec for the split-inference wire protocol.
//!
//! Every frame is `"SVL1" | msg_type u8 | payload_len u32 | payload`, all
//! integers little-endian. Three message types exist: an inference request
//! carrying the client half's output activations as f64s, a response
//! carrying the (still fuzzed) label, and an in-protocol error. Payloads are
//! capped at 16 MiB so a hostile peer cannot make the other side allocate
//! unbounded memory from a length field.

use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Cursor, Read, Write};

/// Leading frame magic.
pub const WIRE_MAGIC: [u8; 4] = *b"SVL1";
/// Frame header size: magic, type byte, payload length.
pub const HEADER_LEN: usize = 9;
/// Hard cap on payload size (16 MiB).
pub const MAX_PAYLOAD: u32 = 16 * 1024 * 1024;

/// Error-frame code: request vector width does not match the served model.
pub const ERR_DIMENSION: u16 = 1;
/// Error-frame code: frame exceeded the payload cap; connection closes.
pub const ERR_OVERSIZED: u16 = 2;
/// Error-frame code: frame could not be parsed; connection closes.
pub const ERR_MALFORMED: u16 = 3;

const TYPE_INFER_REQUEST: u8 = 1;
const TYPE_INFER_RESPONSE: u8 = 2;
const TYPE_ERROR: u8 = 3;

/// One protocol message.
#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    /// Client → server: the client half's output activations.
    InferRequest { vector: Vec<f64> },
    /// Server → client: the fuzzed label and the class count it ranges over.
    InferResponse { label: u16, n_classes: u16 },
    /// Either direction: an in-protocol failure report.
    Error { code: u16, message: String },
}

fn payload_of(m: &WireMessage) -> Result<(u8, Vec<u8>)> {
    let (msg_type, payload) = match m {
        WireMessage::InferRequest { vector } => {
            if vector.len() > u32::MAX as usize {
                return Err(Error::Contract(format!(
                    "vector of {} entries cannot be framed",
                    vector.len()
                )));
            }
            let mut buf = Vec::with_capacity(4 + 8 * vector.len());
            buf.write_u32::<LittleEndian>(vector.len() as u32)
                .expect("vec write");
            for v in vector {
                buf.write_f64::<LittleEndian>(*v).expect("vec write");
            }
            (TYPE_INFER_REQUEST, buf)
        }
        WireMessage::InferResponse { label, n_classes } => {
            let mut buf = Vec::with_capacity(4);
            buf.write_u16::<LittleEndian>(*label).expect("vec write");
            buf.write_u16::<LittleEndian>(*n_classes).expect("vec write");
            (TYPE_INFER_RESPONSE, buf)
        }
        WireMessage::Error { code, message } => {
            if message.len() > u16::MAX as usize {
                return Err(Error::Contract(format!(
                    "error message of {} bytes cannot be framed",
                    message.len()
                )));
            }
            let mut buf = Vec::with_capacity(4 + message.len());
            buf.write_u16::<LittleEndian>(*code).expect("vec write");
            buf.write_u16::<LittleEndian>(message.len() as u16)
                .expect("vec write");
            buf.extend_from_slice(message.as_bytes());
            (TYPE_ERROR, buf)
        }
    };
    if payload.len() > MAX_PAYLOAD as usize {
        return Err(Error::Contract(format!(
            "payload of {} bytes exceeds the {MAX_PAYLOAD}-byte cap",
            payload.len()
        )));
    }
    Ok((msg_type, payload))
}

/// Encodes one message into a complete frame.
pub fn encode_message(m: &WireMessage) -> Result<Vec<u8>> {
    let (msg_type, payload) = payload_of(m)?;
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&WIRE_MAGIC);
    frame.push(msg_type);
    frame
        .write_u32::<LittleEndian>(payload.len() as u32)
        .expect("vec write");
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Validates the magic and splits a header into (msg_type, payload_len).
/// The length is NOT checked against the cap here — callers decide whether
/// an oversized claim is a protocol error or an in-protocol error reply.
pub(crate) fn split_header(header: &[u8; HEADER_LEN]) -> Result<(u8, u32)> {
    if header[..4] != WIRE_MAGIC {
        return Err(Error::Protocol(format!(
            "bad frame magic {:02x}{:02x}{:02x}{:02x}",
            header[0], header[1], header[2], header[3]
        )));
    }
    let len = u32::from_le_bytes(header[5..9].try_into().expect("4 bytes"));
    Ok((header[4], len))
}

/// Decodes a payload body of a known message type.
pub(crate) fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<WireMessage> {
    let mut cur = Cursor::new(payload);
    match msg_type {
        TYPE_INFER_REQUEST => {
            let vec_len = cur
                .read_u32::<LittleEndian>()
                .map_err(|_| Error::Protocol("request payload shorter than its length field".into()))?;
            let expected = 4u64 + 8 * u64::from(vec_len);
            if payload.len() as u64 != expected {
                return Err(Error::Protocol(format!(
                    "request claims {vec_len} entries ({expected} bytes) but carries {}",
                    payload.len()
                )));
            }
            let mut vector = Vec::with_capacity(vec_len as usize);
            for _ in 0..vec_len {
                vector.push(cur.read_f64::<LittleEndian>().expect("length checked"));
            }
            Ok(WireMessage::InferRequest { vector })
        }
        TYPE_INFER_RESPONSE => {
            if payload.len() != 4 {
                return Err(Error::Protocol(format!(
                    "response payload must be 4 bytes, got {}",
                    payload.len()
                )));
            }
            let label = cur.read_u16::<LittleEndian>().expect("length checked");
            let n_classes = cur.read_u16::<LittleEndian>().expect("length checked");
            Ok(WireMessage::InferResponse { label, n_classes })
        }
        TYPE_ERROR => {
            if payload.len() < 4 {
                return Err(Error::Protocol(format!(
                    "error payload must be at least 4 bytes, got {}",
                    payload.len()
                )));
            }
            let code = cur.read_u16::<LittleEndian>().expect("length checked");
            let msg_len = cur.read_u16::<LittleEndian>().expect("length checked") as usize;
            if payload.len() != 4 + msg_len {
                return Err(Error::Protocol(format!(
                    "error message claims {msg_len} bytes but carries {}",
                    payload.len() - 4
                )));
            }
            let message = String::from_utf8(payload[4..].to_vec())
                .map_err(|_| Error::Protocol("error message is not UTF-8".into()))?;
            Ok(WireMessage::Error { code, message })
        }
        t => Err(Error::Protocol(format!("unknown message type {t}"))),
    }
}

/// Decodes the first complete frame in `bytes`.
///
/// Returns `Ok(None)` when the buffer holds only a prefix of a frame (read
/// more and retry), or `Ok(Some((message, consumed)))` where `consumed` is
/// the frame's total size — bytes beyond it belong to the next frame.
/// Malformed data (bad magic, unknown type, a length claim over the cap,
/// payload/length disagreement) is a protocol error.
pub fn decode_message(bytes: &[u8]) -> Result<Option<(WireMessage, usize)>> {
    if bytes.len() >= 4 && bytes[..4] != WIRE_MAGIC {
        return Err(Error::Protocol(format!(
            "bad frame magic {:02x}{:02x}{:02x}{:02x}",
            bytes[0], bytes[1], bytes[2], bytes[3]
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Ok(None);
    }
    let header: &[u8; HEADER_LEN] = bytes[..HEADER_LEN].try_into().expect("length checked");
    let (msg_type, payload_len) = split_header(header)?;
    if payload_len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!(
            "payload claim of {payload_len} bytes exceeds the {MAX_PAYLOAD}-byte cap"
        )));
    }
    let total = HEADER_LEN + payload_len as usize;
    if bytes.len() < total {
        return Ok(None);
    }
    let message = decode_payload(msg_type, &bytes[HEADER_LEN..total])?;
    Ok(Some((message, total)))
}

/// Writes one complete frame to a stream. Socket failures surface as
/// transport errors.
pub fn write_message<W: Write>(w: &mut W, m: &WireMessage) -> Result<()> {
    let frame = encode_message(m)?;
    w.write_all(&frame).map_err(Error::Transport)?;
    w.flush().map_err(Error::Transport)
}

/// Reads exactly one frame from a stream, blocking until it is complete.
/// EOF mid-frame is a transport error; a payload claim over the cap is a
/// protocol error and is rejected before any allocation.
pub fn read_message<R: Read>(r: &mut R) -> Result<WireMessage> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(Error::Transport)?;
    let (msg_type, payload_len) = split_header(&header)?;
    if payload_len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!(
            "payload claim of {payload_len} bytes exceeds the {MAX_PAYLOAD}-byte cap"
        )));
    }
    let mut payload = vec![0u8; payload_len as usize];
    r.read_exact(&mut payload).map_err(Error::Transport)?;
    decode_payload(msg_type, &payload)
}
