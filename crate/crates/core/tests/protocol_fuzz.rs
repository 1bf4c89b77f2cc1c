mod common;

use std::io::Read;

use proptest::prelude::*;
use serde_json::{json, Value};

use oocv::service::protocol::{decode_payload, read_payload, Incoming, MAX_PAYLOAD_LEN};
use oocv::service::{decode_message, encode_message, FrameFormat, FrameMessage, ProtocolError, WireMessage};

use common::fuzz_session;

#[test]
fn golden_ping() {
    let bytes = encode_message(&WireMessage::Control(json!({"cmd": "ping"})));
    let mut want = vec![0, 0, 0, 15, 1];
    want.extend_from_slice(br#"{"cmd":"ping"}"#);
    assert_eq!(bytes, want);
    assert_eq!(decode_message(&want).unwrap(), (WireMessage::Control(json!({"cmd": "ping"})), 19));
}

#[test]
fn golden_frame() {
    let msg =
        FrameMessage { width: 1, height: 2, frame_id: 7, format: FrameFormat::Raw, data: vec![1, 2, 3, 4, 5, 6, 7, 8] };
    let bytes = encode_message(&WireMessage::Frame(msg.clone()));
    let want: Vec<u8> =
        [&[0, 0, 0, 25, 2][..], &[0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 7, 0, 0, 0, 0], &[1, 2, 3, 4, 5, 6, 7, 8]].concat();
    assert_eq!(bytes, want);
    assert_eq!(decode_message(&want).unwrap().0, WireMessage::Frame(msg));
}

#[test]
fn malformed_messages_are_typed_errors() {
    assert!(matches!(decode_message(&[0, 0]), Err(ProtocolError::FrameTooShort { needed: 4, .. })));
    assert!(matches!(
        decode_message(&[0, 0, 0, 5, 1, b'{']),
        Err(ProtocolError::FrameTooShort { needed: 9, available: 6 })
    ));
    assert!(matches!(decode_message(&[0, 0, 0, 1, 9]), Err(ProtocolError::UnknownType(9))));
    assert!(matches!(decode_message(&[0, 0, 0, 2, 1, b'{']), Err(ProtocolError::InvalidJson(_))));
    assert!(decode_message(&[0, 0, 0, 0]).is_err());
    let mut frame = vec![0, 0, 0, 17, 2];
    frame.extend_from_slice(&[0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 9]);
    assert!(matches!(decode_message(&frame), Err(ProtocolError::UnknownFormat(9))));
    frame[20] = 0;
    assert!(matches!(decode_message(&frame), Err(ProtocolError::RawSizeMismatch { .. })));
    let huge = (MAX_PAYLOAD_LEN + 1).to_be_bytes();
    assert!(matches!(decode_message(&[huge[0], huge[1], huge[2], huge[3], 1]), Err(ProtocolError::TooLarge(_))));
}

#[test]
fn oversize_payload_is_skipped_by_reader() {
    let len = MAX_PAYLOAD_LEN + 10;
    let junk = std::io::repeat(0).take(len as u64);
    let tail = std::io::Cursor::new(encode_message(&WireMessage::Control(json!({"cmd": "ping"}))));
    let mut reader = std::io::Cursor::new(len.to_be_bytes()).chain(junk).chain(tail);
    assert!(matches!(read_payload(&mut reader).unwrap(), Some(Incoming::Oversize(l)) if l == len));
    match read_payload(&mut reader).unwrap() {
        Some(Incoming::Payload(p)) => {
            assert_eq!(decode_payload(&p).unwrap(), WireMessage::Control(json!({"cmd": "ping"})))
        }
        other => panic!("{other:?}"),
    }
    assert!(read_payload(&mut reader).unwrap().is_none());
}

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        "[a-z_]{0,8}".prop_map(Value::from),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::btree_map("[a-z_]{1,6}", inner, 0..4)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn control_round_trip(v in json_value()) {
        let bytes = encode_message(&WireMessage::Control(v.clone()));
        let (back, used) = decode_message(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, WireMessage::Control(v));
    }

    #[test]
    fn frame_round_trip(w in 0u32..6, h in 0u32..6, id in any::<u32>(), png in any::<bool>(), seed in any::<u8>()) {
        let len = if png { (seed % 7) as usize } else { (w * h * 4) as usize };
        let data: Vec<u8> = (0..len).map(|i| (i as u8).wrapping_mul(seed)).collect();
        let format = if png { FrameFormat::Png } else { FrameFormat::Raw };
        let msg = WireMessage::Frame(FrameMessage { width: w, height: h, frame_id: id, format, data });
        let bytes = encode_message(&msg);
        prop_assert_eq!(decode_message(&bytes).unwrap(), (msg, bytes.len()));
    }

    #[test]
    fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        if let Ok((_, used)) = decode_message(&bytes) {
            prop_assert!(used <= bytes.len());
        }
    }
}

#[test]
fn session_survives_fuzzing() {
    let errors = fuzz_session(0x5eed, 10_000).unwrap();
    assert!(errors > 1000);
}
