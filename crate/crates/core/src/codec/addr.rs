use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// A Bluetooth device address, stored most-significant byte first as it is
/// written (`AA:BB:CC:DD:EE:FF`). On the wire it travels reversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BdAddr(pub [u8; 6]);

impl BdAddr {
    pub fn to_le_bytes(self) -> [u8; 6] {
        let mut b = self.0;
        b.reverse();
        b
    }

    pub fn from_le_bytes(mut bytes: [u8; 6]) -> Self {
        bytes.reverse();
        BdAddr(bytes)
    }

    pub fn from_le_slice(bytes: &[u8]) -> Option<Self> {
        Some(Self::from_le_bytes(bytes.get(..6)?.try_into().ok()?))
    }
}

impl fmt::Display for BdAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid device address {0:?}")]
pub struct ParseBdAddrError(String);

impl FromStr for BdAddr {
    type Err = ParseBdAddrError;

    /// Accepts `AA:BB:CC:DD:EE:FF`, `AA-BB-...` or twelve bare hex digits.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseBdAddrError(s.to_string());
        let digits: String = s.chars().filter(|c| *c != ':' && *c != '-').collect();
        if digits.len() != 12 || (digits.len() != s.len() && s.len() != 17) {
            return Err(err());
        }
        let mut out = [0u8; 6];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&digits[2 * i..2 * i + 2], 16).map_err(|_| err())?;
        }
        Ok(BdAddr(out))
    }
}
