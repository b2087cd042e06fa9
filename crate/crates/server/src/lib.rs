//! Live scanning sessions: a client drives the head interactively and
//! receives samples, image updates and detections as they happen.

pub mod protocol;
pub mod session;
pub mod transport;

pub use protocol::{ClientMessage, ErrorCode, ServerMessage, PROTOCOL_VERSION};
pub use session::{LiveSession, LoadedScene, Phase, Reply};
pub use transport::{handle_connection, serve, serve_blocking};
