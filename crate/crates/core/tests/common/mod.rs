#![allow(dead_code)]

use proptest::prelude::*;
use rawblue_core::codec::{
    raw_command_buffer, AclPacket, BdAddr, CommandPacket, ConnectionHandle, EventPacket, HciPacket, Opcode,
    ScoPacket,
};
use rawblue_core::controller::{Controller, ControllerProfile, SharedController};
use rawblue_core::dispatch::DispatchSession;
use rawblue_core::logger::{CaptureSink, LogEntry, LogRecord, Timestamp};
use rawblue_core::transport::{InProcessLink, TransportSession};

pub fn arb_handle() -> impl Strategy<Value = ConnectionHandle> {
    (0u16..=0x0EFF).prop_map(|h| ConnectionHandle::new(h).unwrap())
}

pub fn arb_packet() -> impl Strategy<Value = HciPacket> {
    prop_oneof![
        (0u16..64, 0u16..1024, prop::collection::vec(any::<u8>(), 0..=255)).prop_map(|(ogf, ocf, p)| {
            HciPacket::Command(CommandPacket::new(Opcode::new(ogf, ocf).unwrap(), p).unwrap())
        }),
        (any::<u8>(), prop::collection::vec(any::<u8>(), 0..=255))
            .prop_map(|(c, p)| HciPacket::Event(EventPacket::new(c, p).unwrap())),
        (arb_handle(), 0u8..4, 0u8..4, prop::collection::vec(any::<u8>(), 0..600))
            .prop_map(|(h, pb, bc, p)| HciPacket::AclData(AclPacket::new(h, pb, bc, p).unwrap())),
        (arb_handle(), 0u8..4, prop::collection::vec(any::<u8>(), 0..=255))
            .prop_map(|(h, st, p)| HciPacket::ScoData(ScoPacket::new(h, st, p).unwrap())),
    ]
}

/// H4 bytes built field by field, independent of the codec.
pub fn oracle_h4(p: &HciPacket) -> Vec<u8> {
    match p {
        HciPacket::Command(c) => {
            let op = u32::from(c.opcode().ogf()) * 1024 + u32::from(c.opcode().ocf());
            let mut v = vec![1, (op % 256) as u8, (op / 256) as u8, c.params().len() as u8];
            v.extend(c.params());
            v
        }
        HciPacket::Event(e) => {
            let mut v = vec![4, e.code(), e.params().len() as u8];
            v.extend(e.params());
            v
        }
        HciPacket::AclData(a) => {
            let field = u32::from(a.handle().value())
                + u32::from(a.pb_flag()) * 4096
                + u32::from(a.bc_flag()) * 16384;
            let n = a.payload().len();
            let mut v = vec![2, (field % 256) as u8, (field / 256) as u8, (n % 256) as u8, (n / 256) as u8];
            v.extend(a.payload());
            v
        }
        HciPacket::ScoData(s) => {
            let field = u32::from(s.handle().value()) + u32::from(s.status_flag()) * 4096;
            let mut v = vec![3, (field % 256) as u8, (field / 256) as u8, s.payload().len() as u8];
            v.extend(s.payload());
            v
        }
    }
}

pub fn create_connection(peer: BdAddr) -> Vec<u8> {
    let mut params = peer.to_le_bytes().to_vec();
    // packet type, page scan mode, reserved, clock offset, allow role switch
    params.extend([0x18, 0xCC, 0x01, 0x00, 0x00, 0x00, 0x01]);
    raw_command_buffer(Opcode::CREATE_CONNECTION, &params).unwrap()
}

pub fn disconnect(handle: u16) -> Vec<u8> {
    let mut params = handle.to_le_bytes().to_vec();
    params.push(0x13);
    raw_command_buffer(Opcode::DISCONNECT, &params).unwrap()
}

pub fn peer(n: u8) -> BdAddr {
    BdAddr([0xAA, 0xBB, 0xCC, 0xDD, 0xEE, n])
}

pub fn sim_session(profile: ControllerProfile, seed: u64) -> (DispatchSession, SharedController) {
    let controller = Controller::new(profile).shared();
    let link = InProcessLink::new(controller.clone());
    let session = DispatchSession::new(TransportSession::new(link), CaptureSink::simulated(seed));
    (session, controller)
}

/// A session with one live connection on the first handle.
pub fn connected_session(seed: u64) -> DispatchSession {
    let (s, _) = sim_session(ControllerProfile::with_seed(seed), seed);
    assert!(s.send_raw_command(1, &create_connection(peer(0xFF))).is_success());
    s.settle();
    assert_eq!(s.live_handles(), [0x000B]);
    s
}

pub fn arb_entry() -> impl Strategy<Value = LogEntry> {
    prop_oneof![
        4 => (arb_packet(), any::<bool>()).prop_map(|(p, outbound)| match p {
            HciPacket::Command(c) => LogEntry::Command(c),
            HciPacket::Event(e) => LogEntry::Event(e),
            HciPacket::AclData(a) if outbound => LogEntry::AclSend(a),
            HciPacket::AclData(a) => LogEntry::AclRecv(a),
            HciPacket::ScoData(_) => LogEntry::Note("sco".into()),
        }),
        1 => "[ -~]{1,60}".prop_map(LogEntry::Error),
        1 => "[ -~]{0,60}".prop_map(LogEntry::Note),
    ]
}

/// Records with non-decreasing timestamps in 2001..2100.
pub fn arb_records() -> impl Strategy<Value = Vec<LogRecord>> {
    (
        1_000_000_000i64..4_000_000_000,
        prop::collection::vec((0i64..5_000_000, arb_entry()), 0..24),
    )
        .prop_map(|(start, steps)| {
            let mut t = start * 1_000_000;
            steps
                .into_iter()
                .map(|(dt, e)| {
                    t += dt;
                    LogRecord::new(Timestamp::from_unix_micros(t), e).unwrap()
                })
                .collect()
        })
}
