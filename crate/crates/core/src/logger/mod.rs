//! PacketLogger-style capture: records, one-line text rendering, and a
//! binary capture file.

mod capture;
mod sink;
mod text;

use std::fmt;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::codec::{
    AclPacket, CommandPacket, ConnectionHandle, EventPacket, HciEvent, HciPacket,
};

pub use capture::{
    read_capture, read_capture_file, write_capture, write_capture_file, CaptureFileError,
    CorruptCapture,
};
pub use sink::{CaptureSink, Clock, SimClock, SystemClock};
pub use text::{parse_text_line, render_columns, render_text, TextLine, TextParseError};

/// Column label for sent ACL data, reproduced as the logger prints it.
pub const ACL_SEND_LABEL: &str = "LEAS Send";
pub const ACL_RECV_LABEL: &str = "LEAS Receive";

/// Wall-clock instant with microsecond resolution, as stored in capture
/// files (seconds and microseconds since the Unix epoch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp {
    secs: u32,
    micros: u32,
}

impl Timestamp {
    pub fn new(secs: u32, micros: u32) -> Option<Self> {
        (micros < 1_000_000).then_some(Timestamp { secs, micros })
    }

    /// Clamps to the representable range.
    pub fn from_unix_micros(total: i64) -> Self {
        let total = total.clamp(0, i64::from(u32::MAX) * 1_000_000 + 999_999);
        Timestamp {
            secs: (total / 1_000_000) as u32,
            micros: (total % 1_000_000) as u32,
        }
    }

    pub fn from_datetime(t: DateTime<Utc>) -> Self {
        Self::from_unix_micros(t.timestamp_micros())
    }

    pub fn secs(self) -> u32 {
        self.secs
    }

    pub fn micros(self) -> u32 {
        self.micros
    }

    pub fn unix_micros(self) -> i64 {
        i64::from(self.secs) * 1_000_000 + i64::from(self.micros)
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(i64::from(self.secs), self.micros * 1000)
            .expect("u32 seconds are always in range")
    }
}

impl fmt::Display for Timestamp {
    /// `Apr 22 23:44:30.514`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_datetime().format("%b %d %H:%M:%S%.3f"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    Command,
    Event,
    AclSend,
    AclRecv,
    Error,
    Note,
}

impl RecordKind {
    pub fn label(self) -> &'static str {
        match self {
            RecordKind::Command => "HCI Command",
            RecordKind::Event => "HCI Event",
            RecordKind::AclSend => ACL_SEND_LABEL,
            RecordKind::AclRecv => ACL_RECV_LABEL,
            RecordKind::Error => "Error",
            RecordKind::Note => "Note",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        [
            RecordKind::Command,
            RecordKind::Event,
            RecordKind::AclSend,
            RecordKind::AclRecv,
            RecordKind::Error,
            RecordKind::Note,
        ]
        .into_iter()
        .find(|k| k.label() == label)
    }

    /// Tag byte in the binary capture format.
    pub fn tag(self) -> u8 {
        match self {
            RecordKind::Command => 0x00,
            RecordKind::Event => 0x01,
            RecordKind::AclSend => 0x02,
            RecordKind::AclRecv => 0x03,
            RecordKind::Note => 0x06,
            RecordKind::Error => 0x07,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0x00 => RecordKind::Command,
            0x01 => RecordKind::Event,
            0x02 => RecordKind::AclSend,
            0x03 => RecordKind::AclRecv,
            0x06 => RecordKind::Note,
            0x07 => RecordKind::Error,
            _ => return None,
        })
    }
}

/// What a capture record holds. Packet records keep the decoded packet; the
/// handle column and message text are derived from it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LogEntry {
    Command(CommandPacket),
    Event(EventPacket),
    AclSend(AclPacket),
    AclRecv(AclPacket),
    Error(String),
    Note(String),
}

impl LogEntry {
    pub fn kind(&self) -> RecordKind {
        match self {
            LogEntry::Command(_) => RecordKind::Command,
            LogEntry::Event(_) => RecordKind::Event,
            LogEntry::AclSend(_) => RecordKind::AclSend,
            LogEntry::AclRecv(_) => RecordKind::AclRecv,
            LogEntry::Error(_) => RecordKind::Error,
            LogEntry::Note(_) => RecordKind::Note,
        }
    }

    /// Inbound packets become `Event`/`AclRecv` entries.
    pub fn inbound(packet: HciPacket) -> Option<Self> {
        match packet {
            HciPacket::Event(e) => Some(LogEntry::Event(e)),
            HciPacket::AclData(a) => Some(LogEntry::AclRecv(a)),
            _ => None,
        }
    }

    /// The packet carried by a packet entry.
    pub fn packet(&self) -> Option<HciPacket> {
        Some(match self {
            LogEntry::Command(c) => HciPacket::Command(c.clone()),
            LogEntry::Event(e) => HciPacket::Event(e.clone()),
            LogEntry::AclSend(a) | LogEntry::AclRecv(a) => HciPacket::AclData(a.clone()),
            LogEntry::Error(_) | LogEntry::Note(_) => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("error records need a message")]
    EmptyErrorMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LogRecord {
    timestamp: Timestamp,
    entry: LogEntry,
}

impl LogRecord {
    pub fn new(timestamp: Timestamp, entry: LogEntry) -> Result<Self, RecordError> {
        if matches!(&entry, LogEntry::Error(m) if m.is_empty()) {
            return Err(RecordError::EmptyErrorMessage);
        }
        Ok(LogRecord { timestamp, entry })
    }

    pub fn timestamp(&self) -> Timestamp {
        self.timestamp
    }

    pub fn entry(&self) -> &LogEntry {
        &self.entry
    }

    pub fn kind(&self) -> RecordKind {
        self.entry.kind()
    }

    pub fn handle(&self) -> Option<ConnectionHandle> {
        match &self.entry {
            LogEntry::AclSend(a) | LogEntry::AclRecv(a) => Some(a.handle()),
            LogEntry::Event(e) => HciEvent::parse(e).handle(),
            _ => None,
        }
    }

    pub fn message(&self) -> String {
        match &self.entry {
            LogEntry::Command(c) => command_message(c),
            LogEntry::Event(e) => event_message(e),
            LogEntry::AclSend(a) | LogEntry::AclRecv(a) => acl_message(a),
            LogEntry::Error(m) | LogEntry::Note(m) => m.clone(),
        }
    }

    /// Packet bytes without the H4 indicator; empty for text records.
    pub fn payload(&self) -> Vec<u8> {
        self.entry
            .packet()
            .map(|p| p.encode_body())
            .unwrap_or_default()
    }
}

fn acl_message(a: &AclPacket) -> String {
    let len = a.payload().len();
    format!(
        "Data [Handle: 0x{:04X}, Packet Boundary Flags: 0x{:X}, Length: 0x{:04X} ({})]",
        a.handle().value(),
        a.pb_flag(),
        len,
        len
    )
}

fn command_message(c: &CommandPacket) -> String {
    let op = c.opcode();
    let name = match op.name() {
        Some(n) => n,
        None if op.is_vendor() => "Vendor Command",
        None => "Command",
    };
    let len = c.params().len();
    format!("{name} [Opcode: {op}, Length: 0x{len:02X} ({len})]")
}

fn event_message(e: &EventPacket) -> String {
    match HciEvent::parse(e) {
        HciEvent::NumberOfCompletedPackets(entries) => {
            let parts: Vec<String> = entries
                .iter()
                .map(|(h, n)| format!("Handle: 0x{:04X} - Packets: 0x{:04X}", h.value(), n))
                .collect();
            format!("Number of Completed Packets - {}", parts.join(" - "))
        }
        HciEvent::CommandComplete {
            opcode,
            return_params,
        } => match return_params.first() {
            Some(st) => format!("Command Complete - Opcode: {opcode} - Status: 0x{st:02X}"),
            None => format!("Command Complete - Opcode: {opcode}"),
        },
        HciEvent::CommandStatus { status, opcode } => {
            format!("Command Status - Opcode: {opcode} - Status: 0x{status:02X}")
        }
        HciEvent::ConnectionComplete {
            status,
            handle,
            peer,
            ..
        } => format!("Connection Complete - Handle: {handle} - Peer: {peer} - Status: 0x{status:02X}"),
        HciEvent::DisconnectionComplete {
            status,
            handle,
            reason,
        } => format!(
            "Disconnection Complete - Handle: {handle} - Reason: 0x{reason:02X} - Status: 0x{status:02X}"
        ),
        HciEvent::Other(p) => {
            let len = p.params().len();
            format!("Event 0x{:02X} [Length: 0x{len:02X} ({len})]", p.code())
        }
    }
}
