use chrono::NaiveDateTime;
use thiserror::Error;

use super::{LogRecord, RecordKind, Timestamp};

const TS_WIDTH: usize = 19;
const LABEL_WIDTH: usize = 12;
const HANDLE_WIDTH: usize = 6;
const GAP: &str = "  ";
const PACKET_MARKER: &str = "▶ ";
const TEXT_MARKER: &str = "  ";

/// Everything after the timestamp column: label, handle, marker, message.
///
/// Packet rows carry a `▶` marker before the message; error and note rows
/// are indented by the same width instead.
pub fn render_columns(record: &LogRecord) -> String {
    let kind = record.kind();
    let handle = record.handle().map(|h| h.to_string()).unwrap_or_default();
    let marker = match kind {
        RecordKind::Error | RecordKind::Note => TEXT_MARKER,
        _ => PACKET_MARKER,
    };
    format!(
        "{:<LABEL_WIDTH$}{GAP}{:<HANDLE_WIDTH$}{GAP}{marker}{}",
        kind.label(),
        handle,
        record.message()
    )
}

pub fn render_text(record: &LogRecord) -> String {
    format!("{}{GAP}{}", record.timestamp(), render_columns(record))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextLine {
    pub timestamp: Timestamp,
    pub kind: RecordKind,
    pub handle: Option<u16>,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TextParseError {
    #[error("line too short")]
    Truncated,
    #[error("bad timestamp {0:?}")]
    Timestamp(String),
    #[error("unknown record label {0:?}")]
    Label(String),
    #[error("bad handle column {0:?}")]
    Handle(String),
    #[error("column layout broken at {0:?}")]
    Layout(String),
}

fn parse_timestamp(text: &str, year: i32) -> Result<Timestamp, TextParseError> {
    let bad = || TextParseError::Timestamp(text.to_string());
    // `23:40:49:668` and `23:44:30.514` both occur; normalise the last one.
    let (head, millis) = text.rsplit_once([':', '.']).ok_or_else(bad)?;
    let t = NaiveDateTime::parse_from_str(&format!("{year} {head}.{millis}"), "%Y %b %d %H:%M:%S%.3f")
        .map_err(|_| bad())?;
    Ok(Timestamp::from_datetime(t.and_utc()))
}

/// Parses a rendered line back into its columns. The year is not part of the
/// text, so the caller supplies it.
pub fn parse_text_line(line: &str, year: i32) -> Result<TextLine, TextParseError> {
    let chars: Vec<char> = line.chars().collect();
    let min = TS_WIDTH + GAP.len() + LABEL_WIDTH + GAP.len() + HANDLE_WIDTH + GAP.len() + 2;
    if chars.len() < min {
        return Err(TextParseError::Truncated);
    }
    let take = |from: usize, len: usize| chars[from..from + len].iter().collect::<String>();
    let mut at = 0;
    let timestamp = parse_timestamp(&take(at, TS_WIDTH), year)?;
    at += TS_WIDTH;
    let gap = |at: &mut usize| -> Result<(), TextParseError> {
        let g = take(*at, GAP.len());
        if g != GAP {
            return Err(TextParseError::Layout(g));
        }
        *at += GAP.len();
        Ok(())
    };
    gap(&mut at)?;
    let label = take(at, LABEL_WIDTH);
    let kind = RecordKind::from_label(label.trim_end())
        .ok_or_else(|| TextParseError::Label(label.clone()))?;
    at += LABEL_WIDTH;
    gap(&mut at)?;
    let handle_col = take(at, HANDLE_WIDTH);
    let handle = match handle_col.trim_end() {
        "" => None,
        h => Some(
            h.strip_prefix("0x")
                .and_then(|hex| u16::from_str_radix(hex, 16).ok())
                .ok_or_else(|| TextParseError::Handle(handle_col.clone()))?,
        ),
    };
    at += HANDLE_WIDTH;
    gap(&mut at)?;
    let marker = take(at, 2);
    if marker != PACKET_MARKER && marker != TEXT_MARKER {
        return Err(TextParseError::Layout(marker));
    }
    at += 2;
    Ok(TextLine {
        timestamp,
        kind,
        handle,
        message: chars[at..].iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{AclPacket, ConnectionHandle};
    use crate::logger::LogEntry;

    fn ts() -> Timestamp {
        Timestamp::new(1_587_598_849, 668_000).unwrap()
    }

    #[test]
    fn acl_send_row() {
        let pkt = AclPacket::new(ConnectionHandle::new(0x000B).unwrap(), 0x3, 0, vec![0; 16]).unwrap();
        let r = LogRecord::new(ts(), LogEntry::AclSend(pkt)).unwrap();
        assert_eq!(
            render_text(&r),
            "Apr 22 23:40:49.668  LEAS Send     0x000B  ▶ Data [Handle: 0x000B, Packet Boundary Flags: 0x3, Length: 0x0010 (16)]"
        );
    }

    #[test]
    fn error_row_is_verbatim() {
        let r = LogRecord::new(ts(), LogEntry::Error("ACLPacketToHw No Device Handle 0x172".into())).unwrap();
        assert_eq!(
            render_columns(&r),
            "Error                   ACLPacketToHw No Device Handle 0x172"
        );
    }

    #[test]
    fn empty_note_row() {
        let r = LogRecord::new(ts(), LogEntry::Note(String::new())).unwrap();
        let line = render_text(&r);
        assert!(line.starts_with("Apr 22 23:40:49.668  Note"));
        assert_eq!(line.trim_end(), "Apr 22 23:40:49.668  Note");
        let parsed = parse_text_line(&line, 2020).unwrap();
        assert_eq!(parsed.message, "");
        assert_eq!(parsed.kind, RecordKind::Note);
    }

    #[test]
    fn parse_accepts_both_millisecond_separators() {
        let dot = "Apr 22 23:44:30.514  HCI Event     0x000B  ▶ Number of Completed Packets - Handle: 0x000B - Packets: 0x0001";
        let colon = dot.replace("30.514", "30:514");
        let a = parse_text_line(dot, 2020).unwrap();
        let b = parse_text_line(&colon, 2020).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.handle, Some(0x000B));
        assert_eq!(a.kind, RecordKind::Event);
        assert_eq!(a.timestamp.micros(), 514_000);
        assert_eq!(
            a.message,
            "Number of Completed Packets - Handle: 0x000B - Packets: 0x0001"
        );
    }

    #[test]
    fn parse_rejects_garbage() {
        assert_eq!(parse_text_line("short", 2020), Err(TextParseError::Truncated));
        let bad_label = "Apr 22 23:44:30.514  Bogus         0x000B  ▶ x";
        assert!(matches!(parse_text_line(bad_label, 2020), Err(TextParseError::Label(_))));
        let bad_ts = "Xyz 22 23:44:30.514  Note                    x";
        assert!(matches!(parse_text_line(bad_ts, 2020), Err(TextParseError::Timestamp(_))));
    }
}
