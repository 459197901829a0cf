//! Byte transports beneath the dispatch layer.
//!
//! Every backend carries H4 frames exactly as [`crate::codec::encode_h4`]
//! produces them and hands inbound traffic back one whole packet at a time,
//! whatever fragmentation happens underneath.

mod harness;
mod inproc;
mod replay;
mod stream;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::codec::{encode_h4, CodecError, HciPacket};
use crate::controller::{Controller, ControllerProfile, SharedController};

pub use harness::{transport_equivalence_harness, BackendSpec, Transcript};
pub use inproc::InProcessLink;
pub use replay::{ReplayLink, ReplayPacing};
pub use stream::{StreamLink, StreamServer};

/// Quiet period after which a stream backend is considered settled.
pub const DEFAULT_SETTLE_WINDOW: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("bad transport configuration: {0}")]
    BadConfig(String),
    #[error("transport is down")]
    Down,
    #[error("framing error: {0}")]
    Framing(#[from] CodecError),
    #[error("transport I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    InProcessSim,
    FramedStream,
    Replay,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::InProcessSim => "sim",
            BackendKind::FramedStream => "stream",
            BackendKind::Replay => "replay",
        })
    }
}

/// One backend's view of the wire. Send and receive may be driven from
/// different threads.
pub trait Link: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Transmits exactly one H4 frame.
    fn send(&self, frame: &[u8]) -> Result<(), TransportError>;

    /// Next inbound packet, or `None` if nothing arrived within `timeout`.
    fn recv(&self, timeout: Duration) -> Result<Option<HciPacket>, TransportError>;

    fn is_up(&self) -> bool;

    fn close(&self);

    /// Total inbound packets made available so far, for backends that can
    /// know it without waiting.
    fn produced(&self) -> Option<u64> {
        None
    }

    /// How long inbound traffic must stay quiet before the link counts as
    /// settled, for backends where [`Link::produced`] is unknown.
    fn settle_window(&self) -> Duration {
        DEFAULT_SETTLE_WINDOW
    }
}

#[derive(Clone)]
pub struct TransportSession {
    link: Arc<dyn Link>,
}

impl fmt::Debug for TransportSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransportSession")
            .field("kind", &self.kind())
            .field("up", &self.is_up())
            .finish()
    }
}

impl TransportSession {
    pub fn new(link: impl Link + 'static) -> Self {
        TransportSession {
            link: Arc::new(link),
        }
    }

    pub fn kind(&self) -> BackendKind {
        self.link.kind()
    }

    pub fn is_up(&self) -> bool {
        self.link.is_up()
    }

    pub fn close(&self) {
        self.link.close()
    }

    pub fn send_frame(&self, frame: &[u8]) -> Result<(), TransportError> {
        if !self.link.is_up() {
            return Err(TransportError::Down);
        }
        self.link.send(frame)
    }

    pub fn send(&self, packet: &HciPacket) -> Result<(), TransportError> {
        self.send_frame(&encode_h4(packet))
    }

    pub fn recv(&self, timeout: Duration) -> Result<Option<HciPacket>, TransportError> {
        self.link.recv(timeout)
    }

    pub fn produced(&self) -> Option<u64> {
        self.link.produced()
    }

    pub fn settle_window(&self) -> Duration {
        self.link.settle_window()
    }

    /// Collects inbound packets until the link settles.
    pub fn drain(&self) -> Result<Vec<HciPacket>, TransportError> {
        let mut out = Vec::new();
        let window = self.settle_window();
        let mut deadline = Instant::now() + window;
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            match self.link.recv(wait)? {
                Some(p) => {
                    out.push(p);
                    deadline = Instant::now() + window;
                }
                None => return Ok(out),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum TransportConfig {
    /// Fresh simulated controller built from a profile.
    Sim(ControllerProfile),
    /// Attach to an existing simulated controller.
    SimShared(SharedController),
    /// H4 over TCP to `host:port`.
    Stream { addr: String, settle: Duration },
    Replay { path: PathBuf, pacing: ReplayPacing },
}

impl FromStr for TransportConfig {
    type Err = TransportError;

    /// `sim`, `sim:<seed>`, `stream:<host>:<port>`, `replay:<file>` or
    /// `replay-timed:<file>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| TransportError::BadConfig(format!("{s:?}: {why}"));
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "sim" if arg.is_empty() => Ok(TransportConfig::Sim(ControllerProfile::default())),
            "sim" => arg
                .parse()
                .map(|seed| TransportConfig::Sim(ControllerProfile::with_seed(seed)))
                .map_err(|_| bad("seed must be an integer")),
            "stream" if arg.contains(':') => Ok(TransportConfig::Stream {
                addr: arg.to_string(),
                settle: DEFAULT_SETTLE_WINDOW,
            }),
            "stream" => Err(bad("expected stream:<host>:<port>")),
            "replay" | "replay-timed" if !arg.is_empty() => Ok(TransportConfig::Replay {
                path: PathBuf::from(arg),
                pacing: if kind == "replay" {
                    ReplayPacing::Accelerated
                } else {
                    ReplayPacing::Recorded
                },
            }),
            "replay" | "replay-timed" => Err(bad("expected a capture file path")),
            _ => Err(bad("unknown backend")),
        }
    }
}

pub fn open_transport(config: TransportConfig) -> Result<TransportSession, TransportError> {
    Ok(match config {
        TransportConfig::Sim(profile) => {
            TransportSession::new(InProcessLink::new(Controller::new(profile).shared()))
        }
        TransportConfig::SimShared(controller) => TransportSession::new(InProcessLink::new(controller)),
        TransportConfig::Stream { addr, settle } => {
            TransportSession::new(StreamLink::connect(&addr, settle)?)
        }
        TransportConfig::Replay { path, pacing } => {
            TransportSession::new(ReplayLink::open(&path, pacing)?)
        }
    })
}
