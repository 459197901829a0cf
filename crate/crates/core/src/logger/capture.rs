//! Binary capture file.
//!
//! Each record is
//!
//! ```text
//! u32 BE  length of everything that follows (9 + body)
//! u32 BE  seconds since the Unix epoch
//! u32 BE  microseconds
//! u8      kind tag
//! body    packet bytes without H4 indicator, or UTF-8 text for notes/errors
//! ```

use std::io;
use std::path::Path;

use thiserror::Error;

use super::{LogEntry, LogRecord, RecordKind, Timestamp};
use crate::codec::{indicator, HciPacket};

const FIXED: usize = 9;

/// A capture that could not be read to the end. Every record before
/// `offset` parsed cleanly and is kept in `recovered`.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("corrupt capture record at byte offset {offset}: {reason}")]
pub struct CorruptCapture {
    pub offset: usize,
    pub reason: String,
    pub recovered: Vec<LogRecord>,
}

pub fn write_capture(records: &[LogRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        let body = match r.entry() {
            LogEntry::Error(m) | LogEntry::Note(m) => m.as_bytes().to_vec(),
            _ => r.payload(),
        };
        let len = (FIXED + body.len()) as u32;
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&r.timestamp().secs().to_be_bytes());
        out.extend_from_slice(&r.timestamp().micros().to_be_bytes());
        out.push(r.kind().tag());
        out.extend_from_slice(&body);
    }
    out
}

fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b[..4].try_into().expect("four bytes"))
}

fn parse_record(frame: &[u8]) -> Result<LogRecord, String> {
    let timestamp = Timestamp::new(be32(&frame[0..4]), be32(&frame[4..8]))
        .ok_or("microseconds field out of range")?;
    let tag = frame[8];
    let kind = RecordKind::from_tag(tag).ok_or_else(|| format!("unknown kind tag 0x{tag:02X}"))?;
    let body = &frame[FIXED..];
    let packet = |ind| HciPacket::decode_body(ind, body).map_err(|e| e.to_string());
    let text = || String::from_utf8(body.to_vec()).map_err(|e| e.to_string());
    let entry = match kind {
        RecordKind::Error => LogEntry::Error(text()?),
        RecordKind::Note => LogEntry::Note(text()?),
        _ => {
            let ind = kind_indicator(kind).expect("packet kinds have an indicator");
            match (kind, packet(ind)?) {
                (RecordKind::Command, HciPacket::Command(c)) => LogEntry::Command(c),
                (RecordKind::Event, HciPacket::Event(e)) => LogEntry::Event(e),
                (RecordKind::AclSend, HciPacket::AclData(a)) => LogEntry::AclSend(a),
                (RecordKind::AclRecv, HciPacket::AclData(a)) => LogEntry::AclRecv(a),
                _ => unreachable!("indicator selects the variant"),
            }
        }
    };
    LogRecord::new(timestamp, entry).map_err(|e| e.to_string())
}

fn kind_indicator(kind: RecordKind) -> Option<u8> {
    match kind {
        RecordKind::Command => Some(indicator::COMMAND),
        RecordKind::Event => Some(indicator::EVENT),
        RecordKind::AclSend | RecordKind::AclRecv => Some(indicator::ACL),
        RecordKind::Error | RecordKind::Note => None,
    }
}

/// Reads every record. Timestamps must not go backwards.
pub fn read_capture(bytes: &[u8]) -> Result<Vec<LogRecord>, CorruptCapture> {
    let mut records: Vec<LogRecord> = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let fail = |reason: String, records: Vec<LogRecord>| CorruptCapture {
            offset: at,
            reason,
            recovered: records,
        };
        let Some(len_field) = bytes.get(at..at + 4) else {
            return Err(fail("truncated length field".into(), records));
        };
        let len = be32(len_field) as usize;
        if len < FIXED {
            return Err(fail(format!("record length {len} below minimum {FIXED}"), records));
        }
        let Some(frame) = bytes.get(at + 4..).and_then(|rest| rest.get(..len)) else {
            return Err(fail(
                format!("record declares {len} bytes, {} remain", bytes.len() - at - 4),
                records,
            ));
        };
        let record = match parse_record(frame) {
            Ok(r) => r,
            Err(reason) => return Err(fail(reason, records)),
        };
        if records.last().is_some_and(|prev| prev.timestamp() > record.timestamp()) {
            return Err(fail("timestamp goes backwards".into(), records));
        }
        records.push(record);
        at += 4 + len;
    }
    Ok(records)
}

pub fn write_capture_file(path: impl AsRef<Path>, records: &[LogRecord]) -> io::Result<()> {
    std::fs::write(path, write_capture(records))
}

#[derive(Debug, Error)]
pub enum CaptureFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Corrupt(#[from] CorruptCapture),
}

pub fn read_capture_file(path: impl AsRef<Path>) -> Result<Vec<LogRecord>, CaptureFileError> {
    Ok(read_capture(&std::fs::read(path)?)?)
}
