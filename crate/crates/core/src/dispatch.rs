//! The raw-send entry points and the user-client routine hop beneath them.
//!
//! Nothing in this module asks who the caller is. A send succeeds or fails on
//! the buffer it was given and on which connections are live.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::codec::{
    decode_h4, encode_h4, indicator, split_raw_command, AclPacket, CodecError, ConnectionHandle,
    HciEvent, HciPacket, Opcode, MAX_ACL_PAYLOAD,
};
use crate::logger::{CaptureSink, LogEntry, LogRecord};
use crate::transport::{TransportError, TransportSession};

/// Routine index for command packets.
pub const SEND_HCI: u32 = 0;
/// Routine index for ACL data packets.
pub const SEND_ACL: u32 = 1;

/// Packet boundary flag stamped on raw ACL sends.
pub const RAW_ACL_PB: u8 = 0x3;

const MAX_SETTLE: Duration = Duration::from_secs(5);
const READER_POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DispatchError {
    #[error("malformed buffer: {0}")]
    MalformedBuffer(String),
    #[error("handle 0x{0:X} is outside the connection handle range")]
    HandleOutOfRange(u32),
    #[error("no user-client routine for selector 0x{0:X}")]
    UnknownSelector(u32),
    #[error("no device handle 0x{0:X}")]
    NoDeviceHandle(u16),
    #[error("transport down")]
    TransportDown,
}

impl DispatchError {
    /// Negative for argument errors, positive for connection and transport
    /// errors.
    pub fn code(&self) -> i32 {
        match self {
            DispatchError::MalformedBuffer(_) => -1,
            DispatchError::HandleOutOfRange(_) => -2,
            DispatchError::UnknownSelector(_) => -3,
            DispatchError::NoDeviceHandle(_) => 1,
            DispatchError::TransportDown => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DispatchStatus(pub i32);

impl DispatchStatus {
    pub const SUCCESS: DispatchStatus = DispatchStatus(0);

    pub fn is_success(self) -> bool {
        self.0 == 0
    }
}

impl From<&Result<(), DispatchError>> for DispatchStatus {
    fn from(r: &Result<(), DispatchError>) -> Self {
        DispatchStatus(r.as_ref().err().map_or(0, DispatchError::code))
    }
}

impl From<Result<(), DispatchError>> for DispatchStatus {
    fn from(r: Result<(), DispatchError>) -> Self {
        (&r).into()
    }
}

impl fmt::Display for DispatchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRequest {
    pub request_id: u32,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserClientSelector {
    pub selector: u32,
    pub payload: Vec<u8>,
}

/// One entry-point call and the capture records it produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub request_id: Option<u32>,
    pub status: DispatchStatus,
    pub records: Range<usize>,
}

type Routine = fn(&DispatchSession, &[u8]) -> Result<(), DispatchError>;

const ROUTINES: &[(u32, Routine)] = &[(SEND_HCI, route_command), (SEND_ACL, route_acl)];

#[derive(Default)]
struct Inbound {
    delivered: u64,
    last: Option<Instant>,
}

struct Shared {
    capture: CaptureSink,
    handles: Mutex<BTreeSet<u16>>,
    inbound: Mutex<Inbound>,
    arrived: Condvar,
    subscribers: Mutex<Vec<Sender<HciPacket>>>,
    stop: AtomicBool,
}

impl Shared {
    fn deliver(&self, packet: HciPacket) {
        if let HciPacket::Event(ev) = &packet {
            self.track(ev);
        }
        if let Some(entry) = LogEntry::inbound(packet.clone()) {
            let _ = self.capture.append(entry);
        }
        self.subscribers
            .lock()
            .expect("subscriber lock")
            .retain(|tx| tx.send(packet.clone()).is_ok());
        let mut inbound = self.inbound.lock().expect("inbound lock");
        inbound.delivered += 1;
        inbound.last = Some(Instant::now());
        drop(inbound);
        self.arrived.notify_all();
    }

    fn track(&self, ev: &crate::codec::EventPacket) {
        let mut handles = self.handles.lock().expect("handle lock");
        match HciEvent::parse(ev) {
            HciEvent::ConnectionComplete { status: 0, handle, .. } => {
                handles.insert(handle.value());
            }
            HciEvent::DisconnectionComplete { status: 0, handle, .. } => {
                handles.remove(&handle.value());
            }
            HciEvent::CommandComplete { opcode, return_params }
                if opcode == Opcode::RESET && return_params.first() == Some(&0) =>
            {
                handles.clear();
            }
            _ => {}
        }
    }
}

/// A host-side session bound to one transport.
///
/// Inbound packets are picked up on a background thread, logged to the
/// capture sink and fanned out to subscribers, so they may arrive after the
/// call that caused them has returned. Use [`DispatchSession::settle`] to
/// wait for them.
pub struct DispatchSession {
    transport: TransportSession,
    shared: Arc<Shared>,
    calls: Mutex<Vec<CallRecord>>,
    acl_mtu: usize,
    reader: Option<JoinHandle<()>>,
}

impl fmt::Debug for DispatchSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DispatchSession")
            .field("transport", &self.transport)
            .field("handles", &self.live_handles())
            .finish()
    }
}

impl DispatchSession {
    pub fn new(transport: TransportSession, capture: CaptureSink) -> Self {
        let shared = Arc::new(Shared {
            capture,
            handles: Mutex::new(BTreeSet::new()),
            inbound: Mutex::new(Inbound::default()),
            arrived: Condvar::new(),
            subscribers: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let reader = {
            let shared = shared.clone();
            let transport = transport.clone();
            std::thread::spawn(move || read_loop(&transport, &shared))
        };
        DispatchSession {
            transport,
            shared,
            calls: Mutex::new(Vec::new()),
            acl_mtu: MAX_ACL_PAYLOAD,
            reader: Some(reader),
        }
    }

    /// Largest ACL payload accepted by [`DispatchSession::send_raw_acl`].
    pub fn with_acl_mtu(mut self, mtu: usize) -> Self {
        self.acl_mtu = mtu.min(MAX_ACL_PAYLOAD);
        self
    }

    pub fn transport(&self) -> &TransportSession {
        &self.transport
    }

    pub fn capture(&self) -> &CaptureSink {
        &self.shared.capture
    }

    pub fn live_handles(&self) -> Vec<u16> {
        self.shared.handles.lock().expect("handle lock").iter().copied().collect()
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call lock").clone()
    }

    /// A channel receiving every inbound packet from now on.
    pub fn subscribe(&self) -> Receiver<HciPacket> {
        let (tx, rx) = mpsc::channel();
        self.shared.subscribers.lock().expect("subscriber lock").push(tx);
        rx
    }

    /// Waits until every inbound packet the transport has produced has been
    /// delivered, or, when that count is unknown, until inbound traffic has
    /// been quiet for the transport's settle window.
    pub fn settle(&self) {
        let start = Instant::now();
        let limit = start + MAX_SETTLE;
        let window = self.transport.settle_window();
        let mut inbound = self.shared.inbound.lock().expect("inbound lock");
        loop {
            let now = Instant::now();
            if now >= limit {
                return;
            }
            let wait = match self.transport.produced() {
                Some(n) if inbound.delivered >= n => return,
                Some(_) => limit - now,
                None => {
                    let quiet_since = inbound.last.map_or(start, |t| t.max(start));
                    let until = quiet_since + window;
                    if now >= until {
                        return;
                    }
                    until - now
                }
            };
            inbound = self
                .shared
                .arrived
                .wait_timeout(inbound, wait.min(READER_POLL))
                .expect("inbound lock")
                .0;
        }
    }

    fn journal(&self, request_id: Option<u32>, from: usize, result: &Result<(), DispatchError>) {
        self.calls.lock().expect("call lock").push(CallRecord {
            request_id,
            status: result.into(),
            records: from..self.shared.capture.len(),
        });
    }

    fn error_record(&self, text: String) {
        self.shared
            .capture
            .append(LogEntry::Error(text))
            .expect("error texts are never empty");
    }

    fn fail<T>(&self, err: DispatchError) -> Result<T, DispatchError> {
        let text = match &err {
            DispatchError::MalformedBuffer(why) => format!("Malformed Raw Buffer: {why}"),
            DispatchError::HandleOutOfRange(h) => format!("Invalid Connection Handle 0x{h:X}"),
            DispatchError::UnknownSelector(s) => format!("Unknown User Client Selector 0x{s:X}"),
            DispatchError::NoDeviceHandle(h) => format!("ACLPacketToHw No Device Handle 0x{h:X}"),
            DispatchError::TransportDown => "HCI Transport Down".to_string(),
        };
        self.error_record(text);
        Err(err)
    }

    /// Logs `entry` and puts `packet` on the wire.
    fn transmit(&self, entry: LogEntry, packet: &HciPacket) -> Result<(), DispatchError> {
        if !self.transport.is_up() {
            return self.fail(DispatchError::TransportDown);
        }
        // logged first so the record precedes anything the packet provokes
        self.shared.capture.append(entry).expect("packet entries are always valid");
        match self.transport.send(packet) {
            Ok(()) => Ok(()),
            Err(TransportError::Framing(e)) => self.fail(DispatchError::MalformedBuffer(e.to_string())),
            Err(_) => self.fail(DispatchError::TransportDown),
        }
    }

    /// Routes a user-client message to its registered routine and returns
    /// the one-byte status buffer.
    pub fn dispatch_user_client(&self, call: &UserClientSelector) -> Result<Vec<u8>, DispatchError> {
        let from = self.shared.capture.len();
        let result = self.route(call);
        if let Err(e @ DispatchError::UnknownSelector(_)) = result {
            return Err(e);
        }
        self.journal(None, from, &result);
        Ok(vec![DispatchStatus::from(&result).0 as i8 as u8])
    }

    fn route(&self, call: &UserClientSelector) -> Result<(), DispatchError> {
        let routine = ROUTINES
            .iter()
            .find(|(sel, _)| *sel == call.selector)
            .map(|(_, r)| *r)
            .ok_or(DispatchError::UnknownSelector(call.selector))?;
        routine(self, &call.payload)
    }

    /// Sends a raw command buffer: opcode (little-endian), parameter length,
    /// parameters.
    pub fn send_raw_command(&self, request_id: u32, command_data: &[u8]) -> DispatchStatus {
        let from = self.shared.capture.len();
        let result = match split_raw_command(command_data) {
            Ok(_) => {
                let mut frame = Vec::with_capacity(command_data.len() + 1);
                frame.push(indicator::COMMAND);
                frame.extend_from_slice(command_data);
                self.route(&UserClientSelector {
                    selector: SEND_HCI,
                    payload: frame,
                })
            }
            Err(e) => self.fail(DispatchError::MalformedBuffer(e.to_string())),
        };
        self.journal(Some(request_id), from, &result);
        result.into()
    }

    /// As [`DispatchSession::send_raw_command`], with an explicit buffer size
    /// that must agree with the buffer.
    pub fn send_raw_command_sized(&self, request_id: u32, command_data: &[u8], size: usize) -> DispatchStatus {
        if size != command_data.len() {
            let from = self.shared.capture.len();
            let result = self.fail(DispatchError::MalformedBuffer(format!(
                "size {size} does not match a {}-byte buffer",
                command_data.len()
            )));
            self.journal(Some(request_id), from, &result);
            return result.into();
        }
        self.send_raw_command(request_id, command_data)
    }

    /// Sends `data` as one ACL packet on `handle`.
    pub fn send_raw_acl(&self, data: &[u8], handle: u32, request_id: u32) -> DispatchStatus {
        let from = self.shared.capture.len();
        let result = self.build_acl(data, handle).and_then(|packet| {
            self.route(&UserClientSelector {
                selector: SEND_ACL,
                payload: encode_h4(&HciPacket::AclData(packet)),
            })
        });
        self.journal(Some(request_id), from, &result);
        result.into()
    }

    /// As [`DispatchSession::send_raw_acl`], with an explicit buffer size
    /// that must agree with the buffer.
    pub fn send_raw_acl_sized(&self, data: &[u8], size: usize, handle: u32, request_id: u32) -> DispatchStatus {
        if size != data.len() {
            let from = self.shared.capture.len();
            let result = self.fail(DispatchError::MalformedBuffer(format!(
                "size {size} does not match a {}-byte buffer",
                data.len()
            )));
            self.journal(Some(request_id), from, &result);
            return result.into();
        }
        self.send_raw_acl(data, handle, request_id)
    }

    fn build_acl(&self, data: &[u8], handle: u32) -> Result<AclPacket, DispatchError> {
        if data.is_empty() {
            return self.fail(DispatchError::MalformedBuffer("empty ACL payload".into()));
        }
        if data.len() > self.acl_mtu {
            let why = format!("ACL payload of {} bytes exceeds {}", data.len(), self.acl_mtu);
            return self.fail(DispatchError::MalformedBuffer(why));
        }
        let Some(h) = u16::try_from(handle).ok().and_then(|h| ConnectionHandle::new(h).ok()) else {
            return self.fail(DispatchError::HandleOutOfRange(handle));
        };
        Ok(AclPacket::new(h, RAW_ACL_PB, 0, data.to_vec()).expect("length checked above"))
    }

    /// Stops the background reader and closes the transport.
    pub fn close(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.transport.close();
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

impl Drop for DispatchSession {
    fn drop(&mut self) {
        self.close();
    }
}

fn decode_frame(payload: &[u8], expect: u8) -> Result<HciPacket, DispatchError> {
    let bad = |e: CodecError| DispatchError::MalformedBuffer(e.to_string());
    match payload.first() {
        Some(&ind) if ind == expect => {}
        Some(&ind) => {
            return Err(DispatchError::MalformedBuffer(format!(
                "packet type 0x{ind:02X} sent to the wrong routine"
            )))
        }
        None => return Err(bad(CodecError::NeedMoreData)),
    }
    let (packet, rest) = decode_h4(payload).map_err(bad)?;
    if !rest.is_empty() {
        return Err(bad(CodecError::LengthMismatch {
            what: "H4 frame",
            declared: payload.len() - rest.len(),
            actual: payload.len(),
        }));
    }
    Ok(packet)
}

fn route_command(s: &DispatchSession, payload: &[u8]) -> Result<(), DispatchError> {
    let packet = match decode_frame(payload, indicator::COMMAND) {
        Ok(p) => p,
        Err(e) => return s.fail(e),
    };
    let HciPacket::Command(cmd) = &packet else {
        unreachable!("indicator checked")
    };
    s.transmit(LogEntry::Command(cmd.clone()), &packet)
}

fn route_acl(s: &DispatchSession, payload: &[u8]) -> Result<(), DispatchError> {
    let packet = match decode_frame(payload, indicator::ACL) {
        Ok(p) => p,
        Err(e) => return s.fail(e),
    };
    let HciPacket::AclData(acl) = &packet else {
        unreachable!("indicator checked")
    };
    let h = acl.handle().value();
    let live = s.shared.handles.lock().expect("handle lock").contains(&h);
    if live {
        return s.transmit(LogEntry::AclSend(acl.clone()), &packet);
    }
    s.error_record(format!("ACLPacketToHw No Device Handle 0x{h:X}"));
    s.shared
        .capture
        .append(LogEntry::AclSend(acl.clone()))
        .expect("packet entries are always valid");
    s.error_record(format!("Above ACL Packet not sent Handle 0x{h:X}"));
    Err(DispatchError::NoDeviceHandle(h))
}

fn read_loop(transport: &TransportSession, shared: &Shared) {
    while !shared.stop.load(Ordering::SeqCst) {
        match transport.recv(READER_POLL) {
            Ok(Some(packet)) => shared.deliver(packet),
            Ok(None) => {}
            Err(TransportError::Framing(e)) => {
                let _ = shared.capture.append(LogEntry::Error(format!("Inbound Framing Error: {e}")));
            }
            Err(_) => return,
        }
    }
}

/// Records produced by one call, looked up in `records` by the call's range.
pub fn call_window<'a>(records: &'a [LogRecord], call: &CallRecord) -> &'a [LogRecord] {
    let end = call.records.end.min(records.len());
    &records[call.records.start.min(end)..end]
}
