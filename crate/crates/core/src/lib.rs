//! Host-independent model of a raw HCI/ACL access path.
//!
//! The layers, bottom up:
//!
//! * [`codec`]: lossless HCI packet encoding and H4 stream framing.
//! * [`controller`]: a deterministic simulated controller with ACL flow
//!   control and vendor RAM read/write/launch commands.
//! * [`transport`]: interchangeable byte transports (in-process, framed TCP
//!   stream, capture replay).
//! * [`dispatch`]: the two raw-send entry points and the user-client hop that
//!   routes them to a transport.
//! * [`logger`]: PacketLogger-style capture records, text rendering and the
//!   binary capture file.
//! * [`probe`]: argument-order inference for black-box send functions driven
//!   purely by capture-log feedback.

pub mod codec;
pub mod controller;
pub mod dispatch;
pub mod logger;
pub mod probe;
pub mod transport;
