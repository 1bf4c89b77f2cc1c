//! Length-prefixed wire messages.
//!
//! ```text
//! u32 BE length | u8 type | body
//! type 0x01: UTF-8 JSON control message
//! type 0x02: u32 BE width, height, frame_id, format (0 = raw RGBA8, 1 = PNG) | pixel bytes
//! ```
//! `length` counts the type byte and the body.

use std::io::Read;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const TYPE_CONTROL: u8 = 0x01;
pub const TYPE_FRAME: u8 = 0x02;
pub const FRAME_HEADER_LEN: usize = 16;
/// Largest accepted payload: an 8192 x 8192 raw frame plus its header.
pub const MAX_PAYLOAD_LEN: u32 = 8192 * 8192 * 4 + 1 + FRAME_HEADER_LEN as u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("message too short: need {needed} bytes, have {available}")]
    FrameTooShort { needed: usize, available: usize },
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("invalid control json: {0}")]
    InvalidJson(String),
    #[error("unknown frame format {0}")]
    UnknownFormat(u32),
    #[error("payload of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("frame of {width}x{height} carries {len} raw bytes")]
    RawSizeMismatch { width: u32, height: u32, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    #[default]
    Raw,
    Png,
}

impl FrameFormat {
    pub fn code(self) -> u32 {
        match self {
            FrameFormat::Raw => 0,
            FrameFormat::Png => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self, ProtocolError> {
        match code {
            0 => Ok(FrameFormat::Raw),
            1 => Ok(FrameFormat::Png),
            c => Err(ProtocolError::UnknownFormat(c)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMessage {
    pub width: u32,
    pub height: u32,
    pub frame_id: u32,
    pub format: FrameFormat,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Control(Value),
    Frame(FrameMessage),
}

impl WireMessage {
    /// Shorthand for a control message, used heavily in tests and replies.
    pub fn control(v: Value) -> Self {
        WireMessage::Control(v)
    }

    pub fn as_control(&self) -> Option<&Value> {
        match self {
            WireMessage::Control(v) => Some(v),
            WireMessage::Frame(_) => None,
        }
    }

    pub fn as_frame(&self) -> Option<&FrameMessage> {
        match self {
            WireMessage::Frame(f) => Some(f),
            WireMessage::Control(_) => None,
        }
    }
}

pub fn encode_message(msg: &WireMessage) -> Vec<u8> {
    let mut payload = Vec::new();
    match msg {
        WireMessage::Control(v) => {
            payload.push(TYPE_CONTROL);
            serde_json::to_writer(&mut payload, v).expect("json values serialize");
        }
        WireMessage::Frame(f) => {
            payload.reserve(1 + FRAME_HEADER_LEN + f.data.len());
            payload.push(TYPE_FRAME);
            for v in [f.width, f.height, f.frame_id, f.format.code()] {
                payload.extend_from_slice(&v.to_be_bytes());
            }
            payload.extend_from_slice(&f.data);
        }
    }
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Decode one message from the front of `bytes`, returning it and the number
/// of bytes consumed. Trailing bytes are left for the next call.
pub fn decode_message(bytes: &[u8]) -> Result<(WireMessage, usize), ProtocolError> {
    if bytes.len() < 4 {
        return Err(ProtocolError::FrameTooShort { needed: 4, available: bytes.len() });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if len > MAX_PAYLOAD_LEN {
        return Err(ProtocolError::TooLarge(len));
    }
    let end = 4 + len as usize;
    if bytes.len() < end {
        return Err(ProtocolError::FrameTooShort { needed: end, available: bytes.len() });
    }
    Ok((decode_payload(&bytes[4..end])?, end))
}

/// Decode a payload (type byte plus body) whose length prefix was already consumed.
pub fn decode_payload(payload: &[u8]) -> Result<WireMessage, ProtocolError> {
    let (&ty, body) = payload.split_first().ok_or(ProtocolError::FrameTooShort { needed: 1, available: 0 })?;
    match ty {
        TYPE_CONTROL => {
            let text = std::str::from_utf8(body).map_err(|e| ProtocolError::InvalidJson(e.to_string()))?;
            let v = serde_json::from_str(text).map_err(|e| ProtocolError::InvalidJson(e.to_string()))?;
            Ok(WireMessage::Control(v))
        }
        TYPE_FRAME => {
            if body.len() < FRAME_HEADER_LEN {
                return Err(ProtocolError::FrameTooShort { needed: 1 + FRAME_HEADER_LEN, available: payload.len() });
            }
            let word = |i: usize| u32::from_be_bytes(body[i * 4..i * 4 + 4].try_into().unwrap());
            let (width, height, frame_id) = (word(0), word(1), word(2));
            let format = FrameFormat::from_code(word(3))?;
            let data = body[FRAME_HEADER_LEN..].to_vec();
            if format == FrameFormat::Raw && data.len() as u64 != width as u64 * height as u64 * 4 {
                return Err(ProtocolError::RawSizeMismatch { width, height, len: data.len() });
            }
            Ok(WireMessage::Frame(FrameMessage { width, height, frame_id, format, data }))
        }
        other => Err(ProtocolError::UnknownType(other)),
    }
}

/// One unit read from a byte stream.
#[derive(Debug)]
pub enum Incoming {
    Payload(Vec<u8>),
    /// A length prefix over the limit; the payload was read and dropped.
    Oversize(u32),
}

/// Read the next framed payload from a stream. Returns `Ok(None)` on a clean
/// end of stream at a message boundary.
pub fn read_payload<R: Read>(r: &mut R) -> std::io::Result<Option<Incoming>> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(prefix);
    if len > MAX_PAYLOAD_LEN {
        let skipped = std::io::copy(&mut r.take(len as u64), &mut std::io::sink())?;
        if skipped < len as u64 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        return Ok(Some(Incoming::Oversize(len)));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok(Some(Incoming::Payload(payload)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn ping_golden_bytes() {
        let bytes = encode_message(&WireMessage::Control(json!({"cmd": "ping"})));
        let mut expected = vec![0x00, 0x00, 0x00, 0x0F, 0x01];
        expected.extend_from_slice(br#"{"cmd":"ping"}"#);
        assert_eq!(bytes, expected);
        assert_eq!(decode_message(&expected).unwrap(), (WireMessage::Control(json!({"cmd": "ping"})), 19));
    }

    #[test]
    fn frame_golden_bytes() {
        let msg = WireMessage::Frame(FrameMessage {
            width: 1,
            height: 1,
            frame_id: 7,
            format: FrameFormat::Raw,
            data: vec![1, 2, 3, 4],
        });
        let bytes = encode_message(&msg);
        assert_eq!(bytes, [0, 0, 0, 21, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 7, 0, 0, 0, 0, 1, 2, 3, 4]);
        assert_eq!(decode_message(&bytes).unwrap().0, msg);
    }

    #[test]
    fn errors() {
        assert_eq!(decode_message(&[0, 0, 0]), Err(ProtocolError::FrameTooShort { needed: 4, available: 3 }));
        assert_eq!(decode_message(&[0, 0, 0, 5, 1]), Err(ProtocolError::FrameTooShort { needed: 9, available: 5 }));
        assert_eq!(decode_message(&[0, 0, 0, 1, 9]), Err(ProtocolError::UnknownType(9)));
        assert!(matches!(decode_message(&[0, 0, 0, 2, 1, b'{']), Err(ProtocolError::InvalidJson(_))));
        assert!(matches!(decode_message(&[0, 0, 0, 0]), Err(ProtocolError::FrameTooShort { .. })));
        assert!(matches!(decode_message(&[0xff, 0xff, 0xff, 0xff]), Err(ProtocolError::TooLarge(_))));
        let mut bad_fmt = vec![0, 0, 0, 17, 2];
        bad_fmt.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 9]);
        assert_eq!(decode_message(&bad_fmt), Err(ProtocolError::UnknownFormat(9)));
    }

    #[test]
    fn stream_reader_skips_oversize() {
        let prefix = (MAX_PAYLOAD_LEN + 1).to_be_bytes();
        let ping = encode_message(&WireMessage::Control(json!({"cmd": "ping"})));
        let mut r = prefix.as_slice().chain(std::io::repeat(0).take(MAX_PAYLOAD_LEN as u64 + 1)).chain(ping.as_slice());
        assert!(matches!(read_payload(&mut r).unwrap(), Some(Incoming::Oversize(_))));
        let Some(Incoming::Payload(p)) = read_payload(&mut r).unwrap() else { panic!() };
        assert_eq!(decode_payload(&p).unwrap(), WireMessage::Control(json!({"cmd": "ping"})));
        assert!(read_payload(&mut r).unwrap().is_none());
    }
}
