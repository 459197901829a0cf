mod common;

use common::arb_records;
use proptest::prelude::*;
use rawblue_core::logger::{
    parse_text_line, read_capture, render_text, write_capture, LogEntry, LogRecord, RecordKind, Timestamp,
};

fn record_ends(records: &[LogRecord]) -> Vec<usize> {
    let mut ends = vec![0];
    for r in records {
        ends.push(ends.last().unwrap() + write_capture(std::slice::from_ref(r)).len());
    }
    ends
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn read_inverts_write(records in arb_records()) {
        prop_assert_eq!(read_capture(&write_capture(&records)).unwrap(), records);
    }

    #[test]
    fn truncation_never_misparses(records in arb_records()) {
        let bytes = write_capture(&records);
        let ends = record_ends(&records);
        prop_assert_eq!(*ends.last().unwrap(), bytes.len());
        for cut in 0..=bytes.len() {
            let whole = ends.iter().rposition(|&e| e <= cut).unwrap();
            match read_capture(&bytes[..cut]) {
                Ok(got) => {
                    prop_assert_eq!(ends[whole], cut);
                    prop_assert_eq!(&got[..], &records[..whole]);
                }
                Err(e) => {
                    prop_assert_ne!(ends[whole], cut);
                    prop_assert_eq!(e.offset, ends[whole]);
                    prop_assert_eq!(&e.recovered[..], &records[..whole]);
                }
            }
        }
    }

    #[test]
    fn text_rows_parse_back(records in arb_records()) {
        for r in &records {
            let line = render_text(r);
            prop_assert!(!line.contains('\n'));
            let year = r.timestamp().to_datetime().format("%Y").to_string().parse().unwrap();
            let parsed = parse_text_line(&line, year).unwrap();
            prop_assert_eq!(parsed.kind, r.kind());
            prop_assert_eq!(parsed.handle, r.handle().map(|h| h.value()));
            prop_assert_eq!(parsed.message, r.message());
            prop_assert_eq!(parsed.timestamp.unix_micros() / 1000, r.timestamp().unix_micros() / 1000);
        }
    }

    #[test]
    fn label_and_tag_identify_the_kind(records in arb_records()) {
        for r in &records {
            prop_assert_eq!(RecordKind::from_label(r.kind().label()), Some(r.kind()));
            prop_assert_eq!(RecordKind::from_tag(r.kind().tag()), Some(r.kind()));
        }
    }
}

#[test]
fn flipped_tag_is_reported_not_misread() {
    let r = LogRecord::new(Timestamp::new(1_587_598_849, 0).unwrap(), LogEntry::Note("x".into())).unwrap();
    let mut bytes = write_capture(&[r.clone(), r]);
    let second = bytes.len() / 2;
    bytes[second + 12] = 0x55;
    let e = read_capture(&bytes).unwrap_err();
    assert_eq!(e.offset, second);
    assert_eq!(e.recovered.len(), 1);
}
