use std::io::Cursor;
use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use rawblue_cli::{open_session, run_batch, run_repl, Cli, Shell};
use rawblue_core::logger::{read_capture_file, RecordKind};

fn rawblue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rawblue")).args(args).output().unwrap()
}

fn script(dir: &Path, body: &str) -> String {
    let path = dir.join("script.txt");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const DELIVERED: &str = "connect AA:BB:CC:DD:EE:01\nsendaclcmd 000B 0102030405060708090a0b0c0d0e0f10\n";

#[test]
fn empty_script_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = rawblue(&["--seed", "1", "batch", &script(dir.path(), "")]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}

#[test]
fn delivered_packet_capture_is_golden() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("run.pklg");
    let out = rawblue(&["--seed", "1", "--capture", cap.to_str().unwrap(), "batch", &script(dir.path(), DELIVERED)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let records = read_capture_file(&cap).unwrap();
    let tail: Vec<(RecordKind, Option<u16>, String)> = records[records.len() - 2..]
        .iter()
        .map(|r| (r.kind(), r.handle().map(|h| h.value()), r.message()))
        .collect();
    assert_eq!(
        tail,
        [
            (
                RecordKind::AclSend,
                Some(0x000B),
                "Data [Handle: 0x000B, Packet Boundary Flags: 0x3, Length: 0x0010 (16)]".to_string()
            ),
            (
                RecordKind::Event,
                Some(0x000B),
                "Number of Completed Packets - Handle: 0x000B - Packets: 0x0001".to_string()
            ),
        ]
    );
}

#[test]
fn dead_handle_prints_both_errors_and_fails_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let body = "# nothing is connected\n\nsendaclcmd 0172 00112233\nquit\n";
    let out = rawblue(&["--seed", "1", "batch", &script(dir.path(), body)]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows.len(), 3, "{stdout}");
    assert!(rows[0].contains("Error") && rows[0].ends_with("ACLPacketToHw No Device Handle 0x172"));
    assert!(rows[1].contains("LEAS Send") && rows[1].contains("0x0172"));
    assert!(rows[2].contains("Error") && rows[2].ends_with("Above ACL Packet not sent Handle 0x172"));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 3:"));
}

#[test]
fn out_of_range_handle_fails_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = rawblue(&["--seed", "1", "batch", &script(dir.path(), "readram 0 1\nsendaclcmd 0F00 00\n")]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("line 2:"), "{stderr}");
}

#[test]
fn fresh_ram_reads_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = rawblue(&["--seed", "1", "batch", &script(dir.path(), "readram 0x200000 4\n")]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("00200000  00 00 00 00\n"));
}

#[test]
fn setup_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let s = script(dir.path(), "");
    assert_eq!(rawblue(&["--transport", "nope", "batch", &s]).status.code(), Some(2));
    assert_eq!(rawblue(&["--transport", "replay:/no/such.pklg", "batch", &s]).status.code(), Some(2));
    assert_eq!(rawblue(&["batch", "/no/such/script"]).status.code(), Some(2));
}

#[test]
fn repl_and_batch_record_the_same_capture() {
    let body = format!("{DELIVERED}writeram 200400 00\nlaunchram 200400\nreadname\nsendaclcmd 0172 00\nprobe demo 3\n");
    let open = || {
        let (session, profile) = open_session(&Cli::parse_from(["rawblue", "--seed", "9"])).unwrap();
        Shell::new(session, profile, Vec::new())
    };
    let mut batch = open();
    assert_eq!(run_batch(&mut batch, &body).unwrap_err().0, 6);
    let mut repl = open();
    run_repl(&mut repl, Cursor::new(body.clone()), false).unwrap();

    let strip = |shell: &Shell<Vec<u8>>| {
        shell.capture().snapshot().iter().map(|r| r.entry().clone()).collect::<Vec<_>>()
    };
    let (b, r) = (strip(&batch), strip(&repl));
    assert!(!b.is_empty());
    // the repl carries on past the failing line and runs the probe too
    assert_eq!(&r[..b.len()], &b[..]);
    assert!(r.len() > b.len());
    let repl_out = String::from_utf8(repl.into_output()).unwrap();
    assert!(repl_out.contains("error: status 1"));
    assert!(repl_out.contains("local name \"rawblue-sim [patched]\""));
    assert!(repl_out.contains("verdict: (data, request, handle)"));
}
