//! Deterministic simulated HCI controller with vendor RAM patching.
//!
//! The controller handles one inbound packet at a time. Given the same
//! profile and the same input sequence it produces byte-identical events.

mod profile;

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::event::{status, HciEvent};
use crate::codec::{AclPacket, BdAddr, CommandPacket, ConnectionHandle, EventPacket, HciPacket, Opcode};

pub use profile::{ControllerProfile, ProfileError, VendorOpcodes};

/// Handles are allocated upward from here.
pub const FIRST_HANDLE: u16 = 0x000B;
/// Largest RAM transfer that fits one command or Command Complete event.
pub const MAX_RAM_TRANSFER: usize = 251;
/// Appended to the local name when a patch is launched at the entry point.
pub const PATCH_MARKER: &str = " [patched]";
const LOCAL_NAME_LEN: usize = 248;
const BROADCOM_OUI: [u8; 3] = [0x00, 0x10, 0x18];
const BROADCOM_COMPANY_ID: u16 = 0x000F;
const ACL_LINK: u8 = 0x01;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControllerError {
    #[error("no connection with handle {0}")]
    HandleUnknown(ConnectionHandle),
    /// The packet was not dropped: it waits until a completion frees a buffer.
    #[error("ACL buffers exhausted, {queued} packet(s) queued")]
    CreditsExhausted { queued: usize },
    #[error("RAM transfer of {len} bytes exceeds {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("controllers do not accept HCI events from the host")]
    UnexpectedEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AclCredits {
    pub total: u16,
    pub buffer_size: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionState {
    pub handle: ConnectionHandle,
    pub peer: BdAddr,
    /// ACL packets accepted but not yet reported complete.
    pub outstanding: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerState {
    pub bd_addr: BdAddr,
    pub connections: BTreeMap<ConnectionHandle, ConnectionState>,
    pub acl_credits: AclCredits,
    pub ram: BTreeMap<u32, u8>,
    pub local_name: String,
    pub rng_seed: u64,
}

impl ControllerState {
    pub fn outstanding_total(&self) -> u32 {
        self.connections.values().map(|c| c.outstanding).sum()
    }

    /// Unwritten addresses read as zero.
    pub fn read_ram(&self, addr: u32, len: usize) -> Vec<u8> {
        (0..len)
            .map(|i| {
                let a = addr.wrapping_add(i as u32);
                self.ram.get(&a).copied().unwrap_or(0)
            })
            .collect()
    }
}

/// Result of feeding one inbound packet to the controller.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Processed {
    pub events: Vec<EventPacket>,
    /// Set when an ACL packet was refused or deferred.
    pub acl_signal: Option<ControllerError>,
}

#[derive(Debug, Clone)]
struct InFlight {
    handle: ConnectionHandle,
    due: u64,
}

pub type SharedController = Arc<Mutex<Controller>>;

#[derive(Debug, Clone)]
pub struct Controller {
    profile: ControllerProfile,
    state: ControllerState,
    rng: ChaCha8Rng,
    step: u64,
    in_flight: VecDeque<InFlight>,
    backlog: VecDeque<AclPacket>,
    peer_sink: Vec<(ConnectionHandle, Vec<u8>)>,
}

fn derive_bd_addr(seed: u64) -> BdAddr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tail: [u8; 3] = rng.random();
    let b = BROADCOM_OUI;
    BdAddr([b[0], b[1], b[2], tail[0], tail[1], tail[2]])
}

impl Controller {
    pub fn new(profile: ControllerProfile) -> Self {
        let state = ControllerState {
            bd_addr: profile.bd_addr.unwrap_or_else(|| derive_bd_addr(profile.seed)),
            connections: BTreeMap::new(),
            acl_credits: AclCredits {
                total: profile.acl_buffers,
                buffer_size: profile.acl_buffer_size,
            },
            ram: BTreeMap::new(),
            local_name: profile.local_name.clone(),
            rng_seed: profile.seed,
        };
        Controller {
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            profile,
            state,
            step: 0,
            in_flight: VecDeque::new(),
            backlog: VecDeque::new(),
            peer_sink: Vec::new(),
        }
    }

    pub fn shared(self) -> SharedController {
        Arc::new(Mutex::new(self))
    }

    pub fn profile(&self) -> &ControllerProfile {
        &self.profile
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    /// ACL payloads delivered to the loopback peer, in delivery order.
    pub fn peer_received(&self) -> &[(ConnectionHandle, Vec<u8>)] {
        &self.peer_sink
    }

    /// Packets waiting for a free ACL buffer.
    pub fn backlog_len(&self) -> usize {
        self.backlog.len()
    }

    pub fn process(&mut self, packet: &HciPacket) -> Processed {
        let mut out = Processed {
            events: self.advance(),
            acl_signal: None,
        };
        match packet {
            HciPacket::Command(cmd) => out.events.extend(self.handle_command(cmd)),
            HciPacket::AclData(acl) => match self.handle_acl(acl.clone()) {
                Ok(events) => out.events.extend(events),
                Err(e) => out.acl_signal = Some(e),
            },
            // SCO is framed but has no controller behavior.
            HciPacket::ScoData(_) => {}
            HciPacket::Event(_) => out.acl_signal = Some(ControllerError::UnexpectedEvent),
        }
        out
    }

    /// Completes everything in flight or queued.
    pub fn quiesce(&mut self) -> Vec<EventPacket> {
        let mut events = Vec::new();
        while !self.in_flight.is_empty() || !self.backlog.is_empty() {
            events.extend(self.advance());
        }
        events
    }

    pub fn handle_command(&mut self, cmd: &CommandPacket) -> Vec<EventPacket> {
        let opcode = cmd.opcode();
        let p = cmd.params();
        let vendor = self.profile.vendor;
        match opcode {
            Opcode::RESET => {
                self.reset();
                vec![complete(opcode, vec![status::SUCCESS])]
            }
            Opcode::READ_BD_ADDR => {
                let mut ret = vec![status::SUCCESS];
                ret.extend_from_slice(&self.state.bd_addr.to_le_bytes());
                vec![complete(opcode, ret)]
            }
            Opcode::READ_LOCAL_NAME => {
                let mut ret = vec![status::SUCCESS];
                ret.extend_from_slice(&name_field(&self.state.local_name));
                vec![complete(opcode, ret)]
            }
            Opcode::WRITE_LOCAL_NAME => {
                let end = p.iter().position(|b| *b == 0).unwrap_or(p.len());
                self.state.local_name = String::from_utf8_lossy(&p[..end]).into_owned();
                vec![complete(opcode, vec![status::SUCCESS])]
            }
            Opcode::READ_BUFFER_SIZE => {
                let c = self.state.acl_credits;
                let mut ret = vec![status::SUCCESS];
                ret.extend_from_slice(&c.buffer_size.to_le_bytes());
                ret.push(0); // SCO buffer length
                ret.extend_from_slice(&c.total.to_le_bytes());
                ret.extend_from_slice(&0u16.to_le_bytes());
                vec![complete(opcode, ret)]
            }
            Opcode::READ_LOCAL_VERSION => {
                let mut ret = vec![status::SUCCESS, 0x09];
                ret.extend_from_slice(&0x0100u16.to_le_bytes());
                ret.push(0x09);
                ret.extend_from_slice(&BROADCOM_COMPANY_ID.to_le_bytes());
                ret.extend_from_slice(&0x2209u16.to_le_bytes());
                vec![complete(opcode, ret)]
            }
            Opcode::CREATE_CONNECTION => self.create_connection(p),
            Opcode::DISCONNECT => self.disconnect(p),
            op if op == vendor.write_ram => match p.split_first_chunk::<4>() {
                Some((addr, data)) => self
                    .vendor_write_ram(u32::from_le_bytes(*addr), data)
                    .unwrap_or_else(|_| vec![complete(op, vec![status::INVALID_PARAMETERS])]),
                None => vec![complete(op, vec![status::INVALID_PARAMETERS])],
            },
            op if op == vendor.read_ram => match p {
                [a0, a1, a2, a3, len] => self
                    .vendor_read_ram(u32::from_le_bytes([*a0, *a1, *a2, *a3]), *len as usize)
                    .unwrap_or_else(|_| vec![complete(op, vec![status::INVALID_PARAMETERS])]),
                _ => vec![complete(op, vec![status::INVALID_PARAMETERS])],
            },
            op if op == vendor.launch_ram => match p {
                [a0, a1, a2, a3] => self.vendor_launch_ram(u32::from_le_bytes([*a0, *a1, *a2, *a3])),
                _ => vec![complete(op, vec![status::INVALID_PARAMETERS])],
            },
            op => vec![command_status(status::UNKNOWN_COMMAND, op)],
        }
    }

    /// Accepts an ACL packet for transmission to the loopback peer.
    ///
    /// With a zero completion latency the completion event comes back in the
    /// same call. Otherwise it surfaces from a later [`Controller::process`]
    /// or from [`Controller::quiesce`].
    pub fn handle_acl(&mut self, packet: AclPacket) -> Result<Vec<EventPacket>, ControllerError> {
        let handle = packet.handle();
        if !self.state.connections.contains_key(&handle) {
            return Err(ControllerError::HandleUnknown(handle));
        }
        if self.in_flight.len() >= usize::from(self.state.acl_credits.total) {
            self.backlog.push_back(packet);
            return Err(ControllerError::CreditsExhausted {
                queued: self.backlog.len(),
            });
        }
        self.admit(packet);
        Ok(self.retire_due())
    }

    pub fn vendor_write_ram(&mut self, addr: u32, bytes: &[u8]) -> Result<Vec<EventPacket>, ControllerError> {
        check_transfer(bytes.len())?;
        for (i, b) in bytes.iter().enumerate() {
            self.state.ram.insert(addr.wrapping_add(i as u32), *b);
        }
        Ok(vec![complete(self.profile.vendor.write_ram, vec![status::SUCCESS])])
    }

    pub fn vendor_read_ram(&mut self, addr: u32, len: usize) -> Result<Vec<EventPacket>, ControllerError> {
        check_transfer(len)?;
        let mut ret = vec![status::SUCCESS];
        ret.extend(self.state.read_ram(addr, len));
        Ok(vec![complete(self.profile.vendor.read_ram, ret)])
    }

    /// Launching at the patch entry point marks the local name; anywhere
    /// else it is accepted and does nothing observable.
    pub fn vendor_launch_ram(&mut self, addr: u32) -> Vec<EventPacket> {
        if addr == self.profile.patch_entry && !self.state.local_name.ends_with(PATCH_MARKER) {
            let mut name = self.state.local_name.clone();
            name.push_str(PATCH_MARKER);
            // the name field is fixed-width on the wire
            while name.len() > LOCAL_NAME_LEN {
                name.remove(0);
            }
            self.state.local_name = name;
        }
        vec![complete(self.profile.vendor.launch_ram, vec![status::SUCCESS])]
    }

    fn reset(&mut self) {
        self.state.connections.clear();
        self.state.ram.clear();
        self.state.local_name = self.profile.local_name.clone();
        self.in_flight.clear();
        self.backlog.clear();
        self.rng = ChaCha8Rng::seed_from_u64(self.profile.seed);
        self.step = 0;
    }

    fn create_connection(&mut self, p: &[u8]) -> Vec<EventPacket> {
        let op = Opcode::CREATE_CONNECTION;
        let Some(peer) = BdAddr::from_le_slice(p) else {
            return vec![command_status(status::INVALID_PARAMETERS, op)];
        };
        if self.state.connections.values().any(|c| c.peer == peer) {
            return vec![command_status(status::CONNECTION_EXISTS, op)];
        }
        let Some(handle) = (FIRST_HANDLE..=ConnectionHandle::MAX)
            .map(|v| ConnectionHandle::new(v).expect("in range"))
            .find(|h| !self.state.connections.contains_key(h))
        else {
            return vec![command_status(status::CONNECTION_LIMIT, op)];
        };
        self.state.connections.insert(
            handle,
            ConnectionState {
                handle,
                peer,
                outstanding: 0,
            },
        );
        vec![
            command_status(status::SUCCESS, op),
            to_packet(HciEvent::ConnectionComplete {
                status: status::SUCCESS,
                handle,
                peer,
                link_type: ACL_LINK,
                encryption: 0,
            }),
        ]
    }

    fn disconnect(&mut self, p: &[u8]) -> Vec<EventPacket> {
        let op = Opcode::DISCONNECT;
        let handle = match p {
            [lo, hi, _reason] => ConnectionHandle::new(u16::from_le_bytes([*lo, *hi]) & 0x0FFF).ok(),
            _ => return vec![command_status(status::INVALID_PARAMETERS, op)],
        };
        let Some(handle) = handle.filter(|h| self.state.connections.contains_key(h)) else {
            return vec![command_status(status::UNKNOWN_CONNECTION, op)];
        };
        let mut events = vec![command_status(status::SUCCESS, op)];
        // packets already accepted still get their completion
        let (done, keep): (VecDeque<_>, VecDeque<_>) =
            self.in_flight.drain(..).partition(|f| f.handle == handle);
        self.in_flight = keep;
        let queued = self.backlog.len();
        self.backlog.retain(|pkt| pkt.handle() != handle);
        let flushed = queued - self.backlog.len();
        for _ in 0..done.len() + flushed {
            events.push(nocp(handle));
        }
        self.state.connections.remove(&handle);
        events.push(to_packet(HciEvent::DisconnectionComplete {
            status: status::SUCCESS,
            handle,
            reason: status::LOCAL_HOST_TERMINATED,
        }));
        events
    }

    fn draw_latency(&mut self) -> u64 {
        match self.profile.completion_latency {
            0 => 0,
            max => u64::from(self.rng.random_range(0..=max)),
        }
    }

    fn admit(&mut self, packet: AclPacket) {
        let handle = packet.handle();
        let due = self.step + self.draw_latency();
        if let Some(conn) = self.state.connections.get_mut(&handle) {
            conn.outstanding += 1;
        }
        self.peer_sink.push((handle, packet.payload().to_vec()));
        self.in_flight.push_back(InFlight { handle, due });
    }

    fn retire_due(&mut self) -> Vec<EventPacket> {
        let mut events = Vec::new();
        loop {
            let step = self.step;
            let (due, pending): (VecDeque<_>, VecDeque<_>) =
                self.in_flight.drain(..).partition(|f| f.due <= step);
            self.in_flight = pending;
            for f in due {
                if let Some(conn) = self.state.connections.get_mut(&f.handle) {
                    conn.outstanding -= 1;
                }
                events.push(nocp(f.handle));
            }
            let mut admitted = false;
            while self.in_flight.len() < usize::from(self.state.acl_credits.total) {
                let Some(pkt) = self.backlog.pop_front() else { break };
                if self.state.connections.contains_key(&pkt.handle()) {
                    self.admit(pkt);
                    admitted = true;
                }
            }
            if !admitted || !self.in_flight.iter().any(|f| f.due <= self.step) {
                return events;
            }
        }
    }

    fn advance(&mut self) -> Vec<EventPacket> {
        self.step += 1;
        self.retire_due()
    }
}

fn check_transfer(len: usize) -> Result<(), ControllerError> {
    if len > MAX_RAM_TRANSFER {
        return Err(ControllerError::LengthOverflow {
            len,
            max: MAX_RAM_TRANSFER,
        });
    }
    Ok(())
}

fn name_field(name: &str) -> [u8; LOCAL_NAME_LEN] {
    let mut field = [0u8; LOCAL_NAME_LEN];
    let bytes = name.as_bytes();
    let n = bytes.len().min(LOCAL_NAME_LEN);
    field[..n].copy_from_slice(&bytes[..n]);
    field
}

/// Decodes the name field of a Read Local Name response.
pub fn parse_name_field(return_params: &[u8]) -> Option<String> {
    let (&st, field) = return_params.split_first()?;
    if st != status::SUCCESS {
        return None;
    }
    let end = field.iter().position(|b| *b == 0).unwrap_or(field.len());
    Some(String::from_utf8_lossy(&field[..end]).into_owned())
}

fn to_packet(ev: HciEvent) -> EventPacket {
    ev.to_packet().expect("controller events fit in one packet")
}

fn complete(opcode: Opcode, return_params: Vec<u8>) -> EventPacket {
    to_packet(HciEvent::CommandComplete {
        opcode,
        return_params,
    })
}

fn command_status(status: u8, opcode: Opcode) -> EventPacket {
    to_packet(HciEvent::CommandStatus { status, opcode })
}

fn nocp(handle: ConnectionHandle) -> EventPacket {
    to_packet(HciEvent::NumberOfCompletedPackets(vec![(handle, 1)]))
}
