use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{BackendKind, Link, TransportError};
use crate::codec::{decode_h4, CodecError, HciPacket};
use crate::controller::SharedController;

/// Binds directly to a simulated controller. The controller runs inside
/// `send`, so every event a frame causes is queued before `send` returns.
pub struct InProcessLink {
    controller: SharedController,
    inbox: Mutex<VecDeque<HciPacket>>,
    arrived: Condvar,
    produced: AtomicU64,
    up: AtomicBool,
}

impl InProcessLink {
    pub fn new(controller: SharedController) -> Self {
        InProcessLink {
            controller,
            inbox: Mutex::new(VecDeque::new()),
            arrived: Condvar::new(),
            produced: AtomicU64::new(0),
            up: AtomicBool::new(true),
        }
    }

    pub fn controller(&self) -> &SharedController {
        &self.controller
    }

    fn enqueue(&self, events: impl IntoIterator<Item = HciPacket>) {
        let mut inbox = self.inbox.lock().expect("inbox lock");
        let before = inbox.len();
        inbox.extend(events);
        let added = inbox.len() - before;
        // count under the inbox lock so a reader never sees produced < delivered
        self.produced.fetch_add(added as u64, Ordering::SeqCst);
        drop(inbox);
        if added > 0 {
            self.arrived.notify_all();
        }
    }

    /// Runs the controller until every accepted ACL packet has completed.
    pub fn quiesce(&self) {
        let events = self.controller.lock().expect("controller lock").quiesce();
        self.enqueue(events.into_iter().map(HciPacket::Event));
    }
}

impl Link for InProcessLink {
    fn kind(&self) -> BackendKind {
        BackendKind::InProcessSim
    }

    fn send(&self, frame: &[u8]) -> Result<(), TransportError> {
        if !self.is_up() {
            return Err(TransportError::Down);
        }
        let (packet, rest) = decode_h4(frame)?;
        if !rest.is_empty() {
            return Err(CodecError::LengthMismatch {
                what: "H4 frame",
                declared: frame.len() - rest.len(),
                actual: frame.len(),
            }
            .into());
        }
        let processed = self.controller.lock().expect("controller lock").process(&packet);
        self.enqueue(processed.events.into_iter().map(HciPacket::Event));
        Ok(())
    }

    fn recv(&self, timeout: Duration) -> Result<Option<HciPacket>, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut inbox = self.inbox.lock().expect("inbox lock");
        loop {
            if let Some(p) = inbox.pop_front() {
                return Ok(Some(p));
            }
            if !self.is_up() {
                return Err(TransportError::Down);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            inbox = self
                .arrived
                .wait_timeout(inbox, deadline - now)
                .expect("inbox lock")
                .0;
        }
    }

    fn is_up(&self) -> bool {
        self.up.load(Ordering::SeqCst)
    }

    fn close(&self) {
        self.up.store(false, Ordering::SeqCst);
        self.arrived.notify_all();
    }

    fn produced(&self) -> Option<u64> {
        Some(self.produced.load(Ordering::SeqCst))
    }

    fn settle_window(&self) -> Duration {
        Duration::ZERO
    }
}
