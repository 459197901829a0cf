use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::{BackendKind, Link, TransportError};
use crate::codec::HciPacket;
use crate::logger::{read_capture_file, CaptureFileError, LogEntry, LogRecord, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplayPacing {
    /// Everything is available at once.
    #[default]
    Accelerated,
    /// Packets are released with the gaps they were captured with.
    Recorded,
}

struct Cursor {
    pending: VecDeque<(Timestamp, HciPacket)>,
    started: Option<(Instant, Timestamp)>,
}

/// Plays back the inbound side of a capture. Outbound frames are accepted
/// and discarded.
pub struct ReplayLink {
    cursor: Mutex<Cursor>,
    total: u64,
    pacing: ReplayPacing,
    up: AtomicBool,
}

impl ReplayLink {
    pub fn open(path: &Path, pacing: ReplayPacing) -> Result<Self, TransportError> {
        let records = read_capture_file(path).map_err(|e| match e {
            CaptureFileError::Io(e) => {
                TransportError::BackendUnavailable(format!("{}: {e}", path.display()))
            }
            CaptureFileError::Corrupt(e) => {
                TransportError::BadConfig(format!("{}: {e}", path.display()))
            }
        })?;
        Ok(Self::from_records(&records, pacing))
    }

    pub fn from_records(records: &[LogRecord], pacing: ReplayPacing) -> Self {
        let pending: VecDeque<_> = records
            .iter()
            .filter_map(|r| match r.entry() {
                LogEntry::Event(_) | LogEntry::AclRecv(_) => {
                    Some((r.timestamp(), r.entry().packet()?))
                }
                _ => None,
            })
            .collect();
        ReplayLink {
            total: pending.len() as u64,
            cursor: Mutex::new(Cursor {
                pending,
                started: None,
            }),
            pacing,
            up: AtomicBool::new(true),
        }
    }
}

impl Link for ReplayLink {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn send(&self, _frame: &[u8]) -> Result<(), TransportError> {
        if !self.is_up() {
            return Err(TransportError::Down);
        }
        Ok(())
    }

    fn recv(&self, timeout: Duration) -> Result<Option<HciPacket>, TransportError> {
        if !self.is_up() {
            return Err(TransportError::Down);
        }
        let mut cursor = self.cursor.lock().expect("replay lock");
        let Some((ts, _)) = cursor.pending.front() else {
            return Ok(None);
        };
        let ts = *ts;
        if self.pacing == ReplayPacing::Recorded {
            let (t0, first) = *cursor.started.get_or_insert((Instant::now(), ts));
            let offset = (ts.unix_micros() - first.unix_micros()).max(0) as u64;
            let due = t0 + Duration::from_micros(offset);
            let now = Instant::now();
            if due > now {
                if due - now > timeout {
                    std::thread::sleep(timeout);
                    return Ok(None);
                }
                std::thread::sleep(due - now);
            }
        }
        Ok(cursor.pending.pop_front().map(|(_, p)| p))
    }

    fn is_up(&self) -> bool {
        self.up.load(Ordering::SeqCst)
    }

    fn close(&self) {
        self.up.store(false, Ordering::SeqCst);
    }

    fn produced(&self) -> Option<u64> {
        Some(self.total)
    }

    fn settle_window(&self) -> Duration {
        Duration::ZERO
    }
}
