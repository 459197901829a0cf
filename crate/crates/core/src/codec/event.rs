//! Typed views over the handful of HCI events the controller emits.

use super::{BdAddr, CodecError, ConnectionHandle, EventPacket, Opcode};

pub const CONNECTION_COMPLETE: u8 = 0x03;
pub const DISCONNECTION_COMPLETE: u8 = 0x05;
pub const COMMAND_COMPLETE: u8 = 0x0E;
pub const COMMAND_STATUS: u8 = 0x0F;
pub const NUMBER_OF_COMPLETED_PACKETS: u8 = 0x13;
pub const VENDOR: u8 = 0xFF;

/// HCI status codes used by the simulator.
pub mod status {
    pub const SUCCESS: u8 = 0x00;
    pub const UNKNOWN_COMMAND: u8 = 0x01;
    pub const UNKNOWN_CONNECTION: u8 = 0x02;
    pub const CONNECTION_LIMIT: u8 = 0x09;
    pub const CONNECTION_EXISTS: u8 = 0x0B;
    pub const INVALID_PARAMETERS: u8 = 0x12;
    pub const LOCAL_HOST_TERMINATED: u8 = 0x16;
}

/// Command packets the controller will accept after this event.
const NUM_COMMAND_PACKETS: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HciEvent {
    CommandComplete {
        opcode: Opcode,
        return_params: Vec<u8>,
    },
    CommandStatus {
        status: u8,
        opcode: Opcode,
    },
    ConnectionComplete {
        status: u8,
        handle: ConnectionHandle,
        peer: BdAddr,
        link_type: u8,
        encryption: u8,
    },
    DisconnectionComplete {
        status: u8,
        handle: ConnectionHandle,
        reason: u8,
    },
    NumberOfCompletedPackets(Vec<(ConnectionHandle, u16)>),
    /// Anything else, or a known code whose parameters do not parse.
    Other(EventPacket),
}

fn handle_at(p: &[u8], at: usize) -> Option<ConnectionHandle> {
    let raw = u16::from_le_bytes([*p.get(at)?, *p.get(at + 1)?]);
    ConnectionHandle::new(raw & 0x0FFF).ok()
}

impl HciEvent {
    pub fn parse(packet: &EventPacket) -> HciEvent {
        Self::try_parse(packet).unwrap_or_else(|| HciEvent::Other(packet.clone()))
    }

    fn try_parse(packet: &EventPacket) -> Option<HciEvent> {
        let p = packet.params();
        Some(match packet.code() {
            COMMAND_COMPLETE if p.len() >= 3 => HciEvent::CommandComplete {
                opcode: Opcode::from_raw(u16::from_le_bytes([p[1], p[2]])),
                return_params: p[3..].to_vec(),
            },
            COMMAND_STATUS if p.len() == 4 => HciEvent::CommandStatus {
                status: p[0],
                opcode: Opcode::from_raw(u16::from_le_bytes([p[2], p[3]])),
            },
            CONNECTION_COMPLETE if p.len() == 11 => HciEvent::ConnectionComplete {
                status: p[0],
                handle: handle_at(p, 1)?,
                peer: BdAddr::from_le_slice(&p[3..9])?,
                link_type: p[9],
                encryption: p[10],
            },
            DISCONNECTION_COMPLETE if p.len() == 4 => HciEvent::DisconnectionComplete {
                status: p[0],
                handle: handle_at(p, 1)?,
                reason: p[3],
            },
            NUMBER_OF_COMPLETED_PACKETS if !p.is_empty() => {
                let n = p[0] as usize;
                if p.len() != 1 + 4 * n {
                    return None;
                }
                let entries = (0..n)
                    .map(|i| {
                        let at = 1 + 4 * i;
                        Some((handle_at(p, at)?, u16::from_le_bytes([p[at + 2], p[at + 3]])))
                    })
                    .collect::<Option<Vec<_>>>()?;
                HciEvent::NumberOfCompletedPackets(entries)
            }
            _ => return None,
        })
    }

    pub fn to_packet(&self) -> Result<EventPacket, CodecError> {
        match self {
            HciEvent::CommandComplete {
                opcode,
                return_params,
            } => {
                let mut p = vec![NUM_COMMAND_PACKETS];
                p.extend_from_slice(&opcode.raw().to_le_bytes());
                p.extend_from_slice(return_params);
                EventPacket::new(COMMAND_COMPLETE, p)
            }
            HciEvent::CommandStatus { status, opcode } => {
                let mut p = vec![*status, NUM_COMMAND_PACKETS];
                p.extend_from_slice(&opcode.raw().to_le_bytes());
                EventPacket::new(COMMAND_STATUS, p)
            }
            HciEvent::ConnectionComplete {
                status,
                handle,
                peer,
                link_type,
                encryption,
            } => {
                let mut p = vec![*status];
                p.extend_from_slice(&handle.value().to_le_bytes());
                p.extend_from_slice(&peer.to_le_bytes());
                p.push(*link_type);
                p.push(*encryption);
                EventPacket::new(CONNECTION_COMPLETE, p)
            }
            HciEvent::DisconnectionComplete {
                status,
                handle,
                reason,
            } => {
                let mut p = vec![*status];
                p.extend_from_slice(&handle.value().to_le_bytes());
                p.push(*reason);
                EventPacket::new(DISCONNECTION_COMPLETE, p)
            }
            HciEvent::NumberOfCompletedPackets(entries) => {
                let n = u8::try_from(entries.len()).map_err(|_| CodecError::LengthOverflow {
                    what: "completed-packet entries",
                    len: entries.len(),
                    max: 255,
                })?;
                let mut p = vec![n];
                for (h, count) in entries {
                    p.extend_from_slice(&h.value().to_le_bytes());
                    p.extend_from_slice(&count.to_le_bytes());
                }
                EventPacket::new(NUMBER_OF_COMPLETED_PACKETS, p)
            }
            HciEvent::Other(packet) => Ok(packet.clone()),
        }
    }

    /// The connection a per-link event refers to. For completed-packet
    /// events this is the first listed handle.
    pub fn handle(&self) -> Option<ConnectionHandle> {
        match self {
            HciEvent::ConnectionComplete { handle, .. }
            | HciEvent::DisconnectionComplete { handle, .. } => Some(*handle),
            HciEvent::NumberOfCompletedPackets(entries) => entries.first().map(|(h, _)| *h),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_h4, HciPacket};

    #[test]
    fn reset_command_complete_layout() {
        let ev = HciEvent::CommandComplete {
            opcode: Opcode::RESET,
            return_params: vec![status::SUCCESS],
        };
        let bytes = encode_h4(&HciPacket::Event(ev.to_packet().unwrap()));
        assert_eq!(bytes, [0x04, 0x0E, 0x04, 0x01, 0x03, 0x0C, 0x00]);
    }

    #[test]
    fn nocp_layout() {
        let h = ConnectionHandle::new(0x000B).unwrap();
        let ev = HciEvent::NumberOfCompletedPackets(vec![(h, 1)]);
        let pkt = ev.to_packet().unwrap();
        assert_eq!(pkt.params(), &[0x01, 0x0B, 0x00, 0x01, 0x00]);
        assert_eq!(HciEvent::parse(&pkt), ev);
        assert_eq!(ev.handle(), Some(h));
    }

    #[test]
    fn typed_events_round_trip() {
        let h = ConnectionHandle::new(0x0EFF).unwrap();
        let events = [
            HciEvent::CommandStatus {
                status: 0x01,
                opcode: Opcode::from_raw(0xFC00),
            },
            HciEvent::ConnectionComplete {
                status: 0,
                handle: h,
                peer: "AA:BB:CC:DD:EE:FF".parse().unwrap(),
                link_type: 1,
                encryption: 0,
            },
            HciEvent::DisconnectionComplete {
                status: 0,
                handle: h,
                reason: status::LOCAL_HOST_TERMINATED,
            },
        ];
        for ev in events {
            assert_eq!(HciEvent::parse(&ev.to_packet().unwrap()), ev);
        }
    }

    #[test]
    fn malformed_known_code_is_other() {
        let pkt = EventPacket::new(NUMBER_OF_COMPLETED_PACKETS, vec![2, 0, 0]).unwrap();
        assert_eq!(HciEvent::parse(&pkt), HciEvent::Other(pkt));
    }
}
