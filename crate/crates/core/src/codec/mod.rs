//! HCI packet model and H4 stream framing.
//!
//! Packets are validated on construction, so anything that exists as an
//! [`HciPacket`] can be encoded without failure. All multi-byte header fields
//! are little-endian.

mod addr;
pub mod event;
mod h4;

use std::fmt;

use thiserror::Error;

pub use addr::{BdAddr, ParseBdAddrError};
pub use event::HciEvent;
pub use h4::{decode_h4, encode_h4, raw_command_buffer, split_raw_command, StreamDecoder};

/// H4 packet-type indicator bytes.
pub mod indicator {
    pub const COMMAND: u8 = 0x01;
    pub const ACL: u8 = 0x02;
    pub const SCO: u8 = 0x03;
    pub const EVENT: u8 = 0x04;
}

pub const MAX_COMMAND_PARAMS: usize = 255;
pub const MAX_EVENT_PARAMS: usize = 255;
pub const MAX_ACL_PAYLOAD: usize = 65535;
pub const MAX_SCO_PAYLOAD: usize = 255;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    /// The input ends inside a packet. Not a failure: feed more bytes and retry.
    #[error("need more data")]
    NeedMoreData,
    #[error("unknown H4 packet indicator 0x{0:02X}")]
    UnknownIndicator(u8),
    #[error("{what} length {len} exceeds the limit of {max}")]
    LengthOverflow {
        what: &'static str,
        len: usize,
        max: usize,
    },
    #[error("opcode fields out of range (ogf 0x{ogf:X}, ocf 0x{ocf:X})")]
    OpcodeOutOfRange { ogf: u16, ocf: u16 },
    #[error("connection handle 0x{0:04X} is outside 0x0000..=0x0EFF")]
    ReservedHandle(u16),
    #[error("flag value 0x{0:X} does not fit in two bits")]
    FlagOutOfRange(u8),
    #[error("{what}: declared length {declared} but {actual} bytes present")]
    LengthMismatch {
        what: &'static str,
        declared: usize,
        actual: usize,
    },
}

/// A 16-bit HCI command opcode split into group (6 bits) and command (10 bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Opcode(u16);

impl Opcode {
    pub const MAX_OGF: u16 = 0x3F;
    pub const MAX_OCF: u16 = 0x3FF;

    pub const DISCONNECT: Opcode = Opcode::pack(0x01, 0x006);
    pub const CREATE_CONNECTION: Opcode = Opcode::pack(0x01, 0x005);
    pub const RESET: Opcode = Opcode::pack(0x03, 0x003);
    pub const WRITE_LOCAL_NAME: Opcode = Opcode::pack(0x03, 0x013);
    pub const READ_LOCAL_NAME: Opcode = Opcode::pack(0x03, 0x014);
    pub const READ_LOCAL_VERSION: Opcode = Opcode::pack(0x04, 0x001);
    pub const READ_BUFFER_SIZE: Opcode = Opcode::pack(0x04, 0x005);
    pub const READ_BD_ADDR: Opcode = Opcode::pack(0x04, 0x009);

    /// Vendor-specific command group.
    pub const VENDOR_OGF: u8 = 0x3F;

    const fn pack(ogf: u16, ocf: u16) -> Opcode {
        Opcode(((ogf & Self::MAX_OGF) << 10) | (ocf & Self::MAX_OCF))
    }

    pub fn new(ogf: u16, ocf: u16) -> Result<Self, CodecError> {
        if ogf > Self::MAX_OGF || ocf > Self::MAX_OCF {
            return Err(CodecError::OpcodeOutOfRange { ogf, ocf });
        }
        Ok(Self::pack(ogf, ocf))
    }

    /// Every 16-bit value is a valid opcode.
    pub const fn from_raw(raw: u16) -> Self {
        Opcode(raw)
    }

    pub const fn raw(self) -> u16 {
        self.0
    }

    pub const fn ogf(self) -> u8 {
        (self.0 >> 10) as u8
    }

    pub const fn ocf(self) -> u16 {
        self.0 & Self::MAX_OCF
    }

    pub fn is_vendor(self) -> bool {
        self.ogf() == Self::VENDOR_OGF
    }

    /// Specification name for the opcodes this crate knows about.
    pub fn name(self) -> Option<&'static str> {
        Some(match self {
            Self::DISCONNECT => "Disconnect",
            Self::CREATE_CONNECTION => "Create Connection",
            Self::RESET => "Reset",
            Self::WRITE_LOCAL_NAME => "Write Local Name",
            Self::READ_LOCAL_NAME => "Read Local Name",
            Self::READ_LOCAL_VERSION => "Read Local Version Information",
            Self::READ_BUFFER_SIZE => "Read Buffer Size",
            Self::READ_BD_ADDR => "Read BD_ADDR",
            _ => return None,
        })
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:04X}", self.0)
    }
}

/// 12-bit ACL/SCO connection handle. Values above `0x0EFF` are reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnectionHandle(u16);

impl ConnectionHandle {
    pub const MAX: u16 = 0x0EFF;

    pub fn new(value: u16) -> Result<Self, CodecError> {
        if value > Self::MAX {
            return Err(CodecError::ReservedHandle(value));
        }
        Ok(ConnectionHandle(value))
    }

    pub const fn value(self) -> u16 {
        self.0
    }
}

impl fmt::Display for ConnectionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:04X}", self.0)
    }
}

impl TryFrom<u16> for ConnectionHandle {
    type Error = CodecError;

    fn try_from(value: u16) -> Result<Self, Self::Error> {
        ConnectionHandle::new(value)
    }
}

fn check_len(what: &'static str, len: usize, max: usize) -> Result<(), CodecError> {
    if len > max {
        return Err(CodecError::LengthOverflow { what, len, max });
    }
    Ok(())
}

fn check_flag(flag: u8) -> Result<u8, CodecError> {
    if flag > 0x3 {
        return Err(CodecError::FlagOutOfRange(flag));
    }
    Ok(flag)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CommandPacket {
    opcode: Opcode,
    params: Vec<u8>,
}

impl CommandPacket {
    pub fn new(opcode: Opcode, params: impl Into<Vec<u8>>) -> Result<Self, CodecError> {
        let params = params.into();
        check_len("command parameters", params.len(), MAX_COMMAND_PARAMS)?;
        Ok(CommandPacket { opcode, params })
    }

    pub fn opcode(&self) -> Opcode {
        self.opcode
    }

    pub fn params(&self) -> &[u8] {
        &self.params
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventPacket {
    code: u8,
    params: Vec<u8>,
}

impl EventPacket {
    pub fn new(code: u8, params: impl Into<Vec<u8>>) -> Result<Self, CodecError> {
        let params = params.into();
        check_len("event parameters", params.len(), MAX_EVENT_PARAMS)?;
        Ok(EventPacket { code, params })
    }

    pub fn code(&self) -> u8 {
        self.code
    }

    pub fn params(&self) -> &[u8] {
        &self.params
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AclPacket {
    handle: ConnectionHandle,
    pb_flag: u8,
    bc_flag: u8,
    payload: Vec<u8>,
}

impl AclPacket {
    pub fn new(
        handle: ConnectionHandle,
        pb_flag: u8,
        bc_flag: u8,
        payload: impl Into<Vec<u8>>,
    ) -> Result<Self, CodecError> {
        let payload = payload.into();
        check_len("ACL payload", payload.len(), MAX_ACL_PAYLOAD)?;
        Ok(AclPacket {
            handle,
            pb_flag: check_flag(pb_flag)?,
            bc_flag: check_flag(bc_flag)?,
            payload,
        })
    }

    pub fn handle(&self) -> ConnectionHandle {
        self.handle
    }

    pub fn pb_flag(&self) -> u8 {
        self.pb_flag
    }

    pub fn bc_flag(&self) -> u8 {
        self.bc_flag
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }
}

/// SCO data is framed only; nothing in this crate interprets it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScoPacket {
    handle: ConnectionHandle,
    status_flag: u8,
    payload: Vec<u8>,
}

impl ScoPacket {
    pub fn new(
        handle: ConnectionHandle,
        status_flag: u8,
        payload: impl Into<Vec<u8>>,
    ) -> Result<Self, CodecError> {
        let payload = payload.into();
        check_len("SCO payload", payload.len(), MAX_SCO_PAYLOAD)?;
        Ok(ScoPacket {
            handle,
            status_flag: check_flag(status_flag)?,
            payload,
        })
    }

    pub fn handle(&self) -> ConnectionHandle {
        self.handle
    }

    pub fn status_flag(&self) -> u8 {
        self.status_flag
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum HciPacket {
    Command(CommandPacket),
    Event(EventPacket),
    AclData(AclPacket),
    ScoData(ScoPacket),
}

impl HciPacket {
    pub fn indicator(&self) -> u8 {
        match self {
            HciPacket::Command(_) => indicator::COMMAND,
            HciPacket::AclData(_) => indicator::ACL,
            HciPacket::ScoData(_) => indicator::SCO,
            HciPacket::Event(_) => indicator::EVENT,
        }
    }

    /// Header and body without the H4 indicator byte.
    pub fn encode_body(&self) -> Vec<u8> {
        h4::encode_body(self)
    }

    /// Parses a body (no indicator) that must span `bytes` exactly.
    pub fn decode_body(indicator: u8, bytes: &[u8]) -> Result<HciPacket, CodecError> {
        h4::decode_body_exact(indicator, bytes)
    }
}

impl From<CommandPacket> for HciPacket {
    fn from(p: CommandPacket) -> Self {
        HciPacket::Command(p)
    }
}

impl From<EventPacket> for HciPacket {
    fn from(p: EventPacket) -> Self {
        HciPacket::Event(p)
    }
}

impl From<AclPacket> for HciPacket {
    fn from(p: AclPacket) -> Self {
        HciPacket::AclData(p)
    }
}

impl From<ScoPacket> for HciPacket {
    fn from(p: ScoPacket) -> Self {
        HciPacket::ScoData(p)
    }
}
