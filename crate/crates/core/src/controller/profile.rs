use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::codec::{BdAddr, Opcode};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("reading profile: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VendorOpcodes {
    pub write_ram: Opcode,
    pub read_ram: Opcode,
    pub launch_ram: Opcode,
}

impl Default for VendorOpcodes {
    fn default() -> Self {
        let vendor = |ocf| Opcode::new(Opcode::VENDOR_OGF.into(), ocf).expect("ocf in range");
        VendorOpcodes {
            write_ram: vendor(0x4C),
            read_ram: vendor(0x4D),
            launch_ram: vendor(0x4E),
        }
    }
}

/// Static configuration of a simulated controller.
///
/// Loadable from a plain-text file of `key = value` lines; `#` starts a
/// comment. Numbers accept decimal or `0x` hex. Unknown keys are rejected.
///
/// ```text
/// bd_addr = 00:10:18:AA:BB:CC
/// local_name = rawblue-sim
/// acl_buffers = 8
/// acl_buffer_size = 1021
/// write_ram_opcode = 0xFC4C
/// read_ram_opcode = 0xFC4D
/// launch_ram_opcode = 0xFC4E
/// patch_entry = 0x00200400
/// seed = 42
/// completion_latency = 0
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerProfile {
    /// `None` derives a Broadcom-prefixed address from the seed.
    pub bd_addr: Option<BdAddr>,
    pub local_name: String,
    pub acl_buffers: u16,
    pub acl_buffer_size: u16,
    pub vendor: VendorOpcodes,
    pub patch_entry: u32,
    pub seed: u64,
    /// Upper bound, in processed packets, on how long an accepted ACL packet
    /// stays outstanding. Zero completes every packet immediately.
    pub completion_latency: u32,
}

impl Default for ControllerProfile {
    fn default() -> Self {
        ControllerProfile {
            bd_addr: None,
            local_name: "rawblue-sim".to_string(),
            acl_buffers: 8,
            acl_buffer_size: 1021,
            vendor: VendorOpcodes::default(),
            patch_entry: 0x0020_0400,
            seed: 0,
            completion_latency: 0,
        }
    }
}

fn parse_u64(value: &str) -> Option<u64> {
    match value.strip_prefix("0x").or_else(|| value.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => value.parse().ok(),
    }
}

impl ControllerProfile {
    pub fn with_seed(seed: u64) -> Self {
        ControllerProfile {
            seed,
            ..Default::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let mut profile = ControllerProfile::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| ProfileError::Syntax { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let number = |max: u64| {
                parse_u64(value)
                    .filter(|v| *v <= max)
                    .ok_or_else(|| err(format!("invalid value {value:?} for {key}")))
            };
            match key {
                "bd_addr" => {
                    profile.bd_addr = Some(value.parse().map_err(|e| err(format!("{e}")))?)
                }
                "local_name" => {
                    if value.len() > 248 {
                        return Err(err("local_name longer than 248 bytes".into()));
                    }
                    profile.local_name = value.to_string();
                }
                "acl_buffers" => profile.acl_buffers = number(u16::MAX.into())? as u16,
                "acl_buffer_size" => profile.acl_buffer_size = number(u16::MAX.into())? as u16,
                "write_ram_opcode" => {
                    profile.vendor.write_ram = Opcode::from_raw(number(u16::MAX.into())? as u16)
                }
                "read_ram_opcode" => {
                    profile.vendor.read_ram = Opcode::from_raw(number(u16::MAX.into())? as u16)
                }
                "launch_ram_opcode" => {
                    profile.vendor.launch_ram = Opcode::from_raw(number(u16::MAX.into())? as u16)
                }
                "patch_entry" => profile.patch_entry = number(u32::MAX.into())? as u32,
                "seed" => profile.seed = number(u64::MAX)?,
                "completion_latency" => profile.completion_latency = number(u32::MAX.into())? as u32,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        if profile.acl_buffers == 0 {
            return Err(ProfileError::Syntax {
                line: 0,
                message: "acl_buffers must be positive".into(),
            });
        }
        Ok(profile)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(addr) = self.bd_addr {
            let _ = writeln!(out, "bd_addr = {addr}");
        }
        let _ = writeln!(out, "local_name = {}", self.local_name);
        let _ = writeln!(out, "acl_buffers = {}", self.acl_buffers);
        let _ = writeln!(out, "acl_buffer_size = {}", self.acl_buffer_size);
        let _ = writeln!(out, "write_ram_opcode = {}", self.vendor.write_ram);
        let _ = writeln!(out, "read_ram_opcode = {}", self.vendor.read_ram);
        let _ = writeln!(out, "launch_ram_opcode = {}", self.vendor.launch_ram);
        let _ = writeln!(out, "patch_entry = 0x{:08X}", self.patch_entry);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "completion_latency = {}", self.completion_latency);
        out
    }
}
