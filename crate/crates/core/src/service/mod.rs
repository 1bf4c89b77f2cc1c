//! Frame streaming: the wire protocol, per-connection sessions, and the
//! TCP server with its websocket gateway.

pub mod protocol;
mod server;
mod session;

pub use protocol::{decode_message, encode_message, FrameFormat, FrameMessage, ProtocolError, WireMessage};
pub use server::{run_server, start_server, ServerHandle};
pub use session::{
    error_reply, CameraState, FrameSummary, Session, SessionConfig, SessionError, SourceRegistry, PROTOCOL_VERSION,
};
