//! Binary frames exchanged between coordinator and workers.
//!
//! A frame is a 10-byte header (`"GLMD"`, version 1, message type, payload
//! length as little-endian `u32`) followed by the payload. Integers and
//! doubles are little-endian; matrices are row-major. The dimension `p` is
//! not sent separately: it follows from the payload length.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::distributed::Method;
use crate::error::{Error, Result};
use crate::glm::FamilyKind;
use crate::linalg::Matrix;

pub const MAGIC: [u8; 4] = *b"GLMD";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Frames above this size are rejected before any allocation.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    LocalFit = 0x02,
    BroadcastBeta = 0x03,
    LocalScoreFisher = 0x04,
    Result = 0x05,
    Abort = 0x06,
}

impl MessageType {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x01 => MessageType::Hello,
            0x02 => MessageType::LocalFit,
            0x03 => MessageType::BroadcastBeta,
            0x04 => MessageType::LocalScoreFisher,
            0x05 => MessageType::Result,
            0x06 => MessageType::Abort,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub msg_type: MessageType,
    pub payload_len: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello {
        worker_id: u32,
        n_k: u64,
        p: u32,
        family: FamilyKind,
    },
    LocalFit {
        converged: bool,
        iterations: u32,
        beta: Vec<f64>,
        fisher: Matrix,
    },
    BroadcastBeta {
        beta: Vec<f64>,
    },
    LocalScoreFisher {
        score: Vec<f64>,
        fisher: Matrix,
    },
    Result {
        method: Method,
        beta: Vec<f64>,
    },
    Abort {
        code: u16,
        message: String,
    },
}

impl Message {
    pub fn msg_type(&self) -> MessageType {
        match self {
            Message::Hello { .. } => MessageType::Hello,
            Message::LocalFit { .. } => MessageType::LocalFit,
            Message::BroadcastBeta { .. } => MessageType::BroadcastBeta,
            Message::LocalScoreFisher { .. } => MessageType::LocalScoreFisher,
            Message::Result { .. } => MessageType::Result,
            Message::Abort { .. } => MessageType::Abort,
        }
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes a message into a complete frame.
///
/// Panics if the payload would exceed [`MAX_PAYLOAD`] or a matrix is not
/// `p × p` for the accompanying vector; both are programming errors.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut payload = Vec::new();
    match msg {
        Message::Hello {
            worker_id,
            n_k,
            p,
            family,
        } => {
            payload.extend_from_slice(&worker_id.to_le_bytes());
            payload.extend_from_slice(&n_k.to_le_bytes());
            payload.extend_from_slice(&p.to_le_bytes());
            payload.push(family.code());
        }
        Message::LocalFit {
            converged,
            iterations,
            beta,
            fisher,
        } => {
            assert!(fisher.rows() == beta.len() && fisher.cols() == beta.len());
            payload.push(u8::from(*converged));
            payload.extend_from_slice(&iterations.to_le_bytes());
            put_f64s(&mut payload, beta);
            put_f64s(&mut payload, fisher.as_slice());
        }
        Message::BroadcastBeta { beta } => put_f64s(&mut payload, beta),
        Message::LocalScoreFisher { score, fisher } => {
            assert!(fisher.rows() == score.len() && fisher.cols() == score.len());
            put_f64s(&mut payload, score);
            put_f64s(&mut payload, fisher.as_slice());
        }
        Message::Result { method, beta } => {
            payload.push(method.code());
            put_f64s(&mut payload, beta);
        }
        Message::Abort { code, message } => {
            payload.extend_from_slice(&code.to_le_bytes());
            payload.extend_from_slice(message.as_bytes());
        }
    }
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|l| *l <= MAX_PAYLOAD)
        .expect("payload exceeds the frame limit");
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&MAGIC);
    frame.push(VERSION);
    frame.push(msg.msg_type() as u8);
    frame.extend_from_slice(&len.to_le_bytes());
    frame.extend_from_slice(&payload);
    frame
}

fn protocol(offset: usize, reason: impl Into<String>) -> Error {
    Error::Protocol {
        offset,
        reason: reason.into(),
    }
}

/// Parses and validates the 10-byte header.
pub fn decode_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(protocol(bytes.len(), "truncated header"));
    }
    for (i, (got, want)) in bytes[..4].iter().zip(MAGIC).enumerate() {
        if *got != want {
            return Err(protocol(i, "bad magic"));
        }
    }
    if bytes[4] != VERSION {
        return Err(protocol(4, format!("unsupported version {}", bytes[4])));
    }
    let msg_type = MessageType::from_code(bytes[5])
        .ok_or_else(|| protocol(5, format!("unknown message type 0x{:02x}", bytes[5])))?;
    let payload_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    if payload_len > MAX_PAYLOAD {
        return Err(protocol(6, format!("payload length {payload_len} over limit")));
    }
    Ok(Header {
        msg_type,
        payload_len,
    })
}

/// Reads fields from a payload, reporting offsets relative to the frame.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(protocol(HEADER_LEN + self.bytes.len(), "truncated payload"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn offset(&self) -> usize {
        HEADER_LEN + self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(protocol(self.offset(), "trailing bytes in payload"));
        }
        Ok(())
    }
}

/// `p` such that `8(p + p²)` equals `bytes`, if any.
fn dim_from_vector_and_matrix(bytes: usize, offset: usize) -> Result<usize> {
    if bytes % 8 != 0 {
        return Err(protocol(offset, "payload is not a whole number of doubles"));
    }
    let count = bytes / 8;
    let p = (libm::sqrt(4.0 * count as f64 + 1.0) as usize).saturating_sub(1) / 2;
    for cand in [p, p + 1] {
        if cand > 0 && cand + cand * cand == count {
            return Ok(cand);
        }
    }
    Err(protocol(offset, format!("{count} doubles do not form a vector and a square matrix")))
}

fn vector_dim(bytes: usize, offset: usize) -> Result<usize> {
    if bytes % 8 != 0 || bytes == 0 {
        return Err(protocol(offset, "payload is not a non-empty whole number of doubles"));
    }
    Ok(bytes / 8)
}

/// Decodes the payload of a frame whose header has already been read.
pub fn decode_payload(header: Header, payload: &[u8]) -> Result<Message> {
    if payload.len() != header.payload_len as usize {
        return Err(protocol(
            HEADER_LEN + payload.len().min(header.payload_len as usize),
            format!(
                "payload length {} differs from header {}",
                payload.len(),
                header.payload_len
            ),
        ));
    }
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let msg = match header.msg_type {
        MessageType::Hello => {
            let worker_id = r.u32()?;
            let n_k = r.u64()?;
            let p = r.u32()?;
            let at = r.offset();
            let code = r.u8()?;
            let family = FamilyKind::from_code(code)
                .ok_or_else(|| protocol(at, format!("unknown family code {code}")))?;
            Message::Hello {
                worker_id,
                n_k,
                p,
                family,
            }
        }
        MessageType::LocalFit => {
            let at = r.offset();
            let converged = match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(protocol(at, format!("invalid boolean {b}"))),
            };
            let iterations = r.u32()?;
            let p = dim_from_vector_and_matrix(payload.len().saturating_sub(5), r.offset())?;
            let beta = r.f64s(p)?;
            let fisher = Matrix::from_row_major(p, p, r.f64s(p * p)?)?;
            Message::LocalFit {
                converged,
                iterations,
                beta,
                fisher,
            }
        }
        MessageType::BroadcastBeta => {
            let p = vector_dim(payload.len(), r.offset())?;
            Message::BroadcastBeta { beta: r.f64s(p)? }
        }
        MessageType::LocalScoreFisher => {
            let p = dim_from_vector_and_matrix(payload.len(), r.offset())?;
            let score = r.f64s(p)?;
            let fisher = Matrix::from_row_major(p, p, r.f64s(p * p)?)?;
            Message::LocalScoreFisher { score, fisher }
        }
        MessageType::Result => {
            let at = r.offset();
            let code = r.u8()?;
            let method = Method::from_code(code)
                .ok_or_else(|| protocol(at, format!("unknown method code {code}")))?;
            let p = vector_dim(payload.len() - 1, r.offset())?;
            Message::Result {
                method,
                beta: r.f64s(p)?,
            }
        }
        MessageType::Abort => {
            let code = r.u16()?;
            let at = r.offset();
            let text = r.take(payload.len() - 2)?;
            let message = core::str::from_utf8(text)
                .map_err(|e| protocol(at + e.valid_up_to(), "ABORT message is not UTF-8"))?
                .into();
            Message::Abort { code, message }
        }
    };
    r.finish()?;
    Ok(msg)
}

/// Decodes one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize)> {
    let header = decode_header(bytes)?;
    let end = HEADER_LEN + header.payload_len as usize;
    if bytes.len() < end {
        return Err(protocol(bytes.len(), "truncated payload"));
    }
    Ok((decode_payload(header, &bytes[HEADER_LEN..end])?, end))
}
