use super::{
    indicator, AclPacket, CodecError, CommandPacket, ConnectionHandle, EventPacket, HciPacket,
    Opcode, ScoPacket, MAX_COMMAND_PARAMS,
};

/// Frames a packet for a serial-style transport: indicator byte, header, body.
pub fn encode_h4(packet: &HciPacket) -> Vec<u8> {
    let body = encode_body(packet);
    let mut out = Vec::with_capacity(body.len() + 1);
    out.push(packet.indicator());
    out.extend_from_slice(&body);
    out
}

pub(super) fn encode_body(packet: &HciPacket) -> Vec<u8> {
    match packet {
        HciPacket::Command(c) => {
            let mut out = Vec::with_capacity(3 + c.params.len());
            out.extend_from_slice(&c.opcode.raw().to_le_bytes());
            out.push(c.params.len() as u8);
            out.extend_from_slice(&c.params);
            out
        }
        HciPacket::Event(e) => {
            let mut out = Vec::with_capacity(2 + e.params.len());
            out.push(e.code);
            out.push(e.params.len() as u8);
            out.extend_from_slice(&e.params);
            out
        }
        HciPacket::AclData(a) => {
            let field =
                a.handle.value() | (u16::from(a.pb_flag) << 12) | (u16::from(a.bc_flag) << 14);
            let mut out = Vec::with_capacity(4 + a.payload.len());
            out.extend_from_slice(&field.to_le_bytes());
            out.extend_from_slice(&(a.payload.len() as u16).to_le_bytes());
            out.extend_from_slice(&a.payload);
            out
        }
        HciPacket::ScoData(s) => {
            let field = s.handle.value() | (u16::from(s.status_flag) << 12);
            let mut out = Vec::with_capacity(3 + s.payload.len());
            out.extend_from_slice(&field.to_le_bytes());
            out.push(s.payload.len() as u8);
            out.extend_from_slice(&s.payload);
            out
        }
    }
}

/// Decodes one H4 frame from the front of `stream`, returning the packet and
/// the unconsumed tail.
pub fn decode_h4(stream: &[u8]) -> Result<(HciPacket, &[u8]), CodecError> {
    let (&ind, rest) = stream.split_first().ok_or(CodecError::NeedMoreData)?;
    let (packet, used) = decode_body(ind, rest)?;
    Ok((packet, &rest[used..]))
}

fn header<const N: usize>(bytes: &[u8]) -> Result<[u8; N], CodecError> {
    bytes
        .get(..N)
        .map(|h| h.try_into().expect("slice has length N"))
        .ok_or(CodecError::NeedMoreData)
}

fn body(bytes: &[u8], start: usize, len: usize) -> Result<Vec<u8>, CodecError> {
    bytes
        .get(start..start + len)
        .map(<[u8]>::to_vec)
        .ok_or(CodecError::NeedMoreData)
}

/// Returns the packet and the number of body bytes consumed.
fn decode_body(ind: u8, bytes: &[u8]) -> Result<(HciPacket, usize), CodecError> {
    match ind {
        indicator::COMMAND => {
            let [lo, hi, len] = header::<3>(bytes)?;
            let params = body(bytes, 3, len as usize)?;
            let opcode = Opcode::from_raw(u16::from_le_bytes([lo, hi]));
            Ok((CommandPacket::new(opcode, params)?.into(), 3 + len as usize))
        }
        indicator::EVENT => {
            let [code, len] = header::<2>(bytes)?;
            let params = body(bytes, 2, len as usize)?;
            Ok((EventPacket::new(code, params)?.into(), 2 + len as usize))
        }
        indicator::ACL => {
            let [f0, f1, l0, l1] = header::<4>(bytes)?;
            let field = u16::from_le_bytes([f0, f1]);
            let handle = ConnectionHandle::new(field & 0x0FFF)?;
            let len = u16::from_le_bytes([l0, l1]) as usize;
            let payload = body(bytes, 4, len)?;
            let pb = ((field >> 12) & 0x3) as u8;
            let bc = ((field >> 14) & 0x3) as u8;
            Ok((AclPacket::new(handle, pb, bc, payload)?.into(), 4 + len))
        }
        indicator::SCO => {
            let [f0, f1, len] = header::<3>(bytes)?;
            let field = u16::from_le_bytes([f0, f1]);
            let handle = ConnectionHandle::new(field & 0x0FFF)?;
            let payload = body(bytes, 3, len as usize)?;
            let status = ((field >> 12) & 0x3) as u8;
            Ok((ScoPacket::new(handle, status, payload)?.into(), 3 + len as usize))
        }
        other => Err(CodecError::UnknownIndicator(other)),
    }
}

pub(super) fn decode_body_exact(ind: u8, bytes: &[u8]) -> Result<HciPacket, CodecError> {
    let (packet, used) = match decode_body(ind, bytes) {
        Err(CodecError::NeedMoreData) => {
            return Err(CodecError::LengthMismatch {
                what: "packet body",
                declared: declared_len(ind, bytes).unwrap_or(usize::MAX),
                actual: bytes.len(),
            })
        }
        r => r?,
    };
    if used != bytes.len() {
        return Err(CodecError::LengthMismatch {
            what: "packet body",
            declared: used,
            actual: bytes.len(),
        });
    }
    Ok(packet)
}

fn declared_len(ind: u8, bytes: &[u8]) -> Option<usize> {
    Some(match ind {
        indicator::COMMAND => 3 + *bytes.get(2)? as usize,
        indicator::EVENT => 2 + *bytes.get(1)? as usize,
        indicator::ACL => 4 + u16::from_le_bytes([*bytes.get(2)?, *bytes.get(3)?]) as usize,
        indicator::SCO => 3 + *bytes.get(2)? as usize,
        _ => return None,
    })
}

/// The unframed command buffer handed to the raw-send entry point:
/// little-endian opcode, one length byte, parameters.
pub fn raw_command_buffer(opcode: Opcode, params: &[u8]) -> Result<Vec<u8>, CodecError> {
    let cmd = CommandPacket::new(opcode, params)?;
    Ok(encode_body(&HciPacket::Command(cmd)))
}

/// Inverse of [`raw_command_buffer`]. The length byte must match the
/// parameter count exactly.
pub fn split_raw_command(buffer: &[u8]) -> Result<(Opcode, &[u8]), CodecError> {
    if buffer.len() < 3 {
        return Err(CodecError::LengthMismatch {
            what: "raw command buffer",
            declared: 3,
            actual: buffer.len(),
        });
    }
    let declared = buffer[2] as usize;
    let params = &buffer[3..];
    if params.len() != declared {
        return Err(if params.len() > MAX_COMMAND_PARAMS {
            CodecError::LengthOverflow {
                what: "command parameters",
                len: params.len(),
                max: MAX_COMMAND_PARAMS,
            }
        } else {
            CodecError::LengthMismatch {
                what: "raw command buffer",
                declared,
                actual: params.len(),
            }
        });
    }
    Ok((Opcode::from_raw(u16::from_le_bytes([buffer[0], buffer[1]])), params))
}

/// Incremental H4 decoder for byte streams that arrive in arbitrary pieces.
///
/// Single-owner: one decoder per stream.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    // bytes of a rejected frame still to be dropped as they arrive
    skip: usize,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        let dropped = self.skip.min(bytes.len());
        self.skip -= dropped;
        self.buf.extend_from_slice(&bytes[dropped..]);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Returns the next complete packet, `Ok(None)` when more bytes are
    /// needed. After an error the offending bytes are discarded, so calling
    /// again resumes with whatever follows.
    pub fn next_packet(&mut self) -> Result<Option<HciPacket>, CodecError> {
        match decode_h4(&self.buf) {
            Ok((packet, rest)) => {
                let used = self.buf.len() - rest.len();
                self.buf.drain(..used);
                Ok(Some(packet))
            }
            Err(CodecError::NeedMoreData) => Ok(None),
            Err(CodecError::UnknownIndicator(b)) => {
                self.buf.remove(0);
                Err(CodecError::UnknownIndicator(b))
            }
            Err(e) => {
                let frame = 1 + declared_len(self.buf[0], &self.buf[1..]).unwrap_or(0);
                let now = frame.min(self.buf.len()).max(1);
                self.buf.drain(..now);
                self.skip = frame.saturating_sub(now);
                Err(e)
            }
        }
    }
}

impl Iterator for StreamDecoder {
    type Item = Result<HciPacket, CodecError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_packet().transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle(v: u16) -> ConnectionHandle {
        ConnectionHandle::new(v).unwrap()
    }

    #[test]
    fn reset_command_frame() {
        let reset = HciPacket::Command(CommandPacket::new(Opcode::RESET, vec![]).unwrap());
        assert_eq!(encode_h4(&reset), [0x01, 0x03, 0x0C, 0x00]);
        let (decoded, rest) = decode_h4(&[0x01, 0x03, 0x0C, 0x00]).unwrap();
        assert_eq!(decoded, reset);
        assert!(rest.is_empty());
    }

    #[test]
    fn acl_header_bytes() {
        let acl = HciPacket::AclData(AclPacket::new(handle(0x000B), 0x3, 0, vec![0xAA; 16]).unwrap());
        let bytes = encode_h4(&acl);
        assert_eq!(&bytes[..5], &[0x02, 0x0B, 0x30, 0x10, 0x00]);
        assert_eq!(bytes.len(), 5 + 16);
    }

    #[test]
    fn empty_event() {
        let ev = HciPacket::Event(EventPacket::new(0xFF, vec![]).unwrap());
        assert_eq!(encode_h4(&ev), [0x04, 0xFF, 0x00]);
    }

    #[test]
    fn sco_frame() {
        let sco = HciPacket::ScoData(ScoPacket::new(handle(0x0123), 0x2, vec![1, 2]).unwrap());
        assert_eq!(encode_h4(&sco), [0x03, 0x23, 0x21, 0x02, 1, 2]);
        assert_eq!(decode_h4(&encode_h4(&sco)).unwrap().0, sco);
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode_h4(&[]), Err(CodecError::NeedMoreData));
        assert_eq!(decode_h4(&[0x07, 0x00]), Err(CodecError::UnknownIndicator(0x07)));
        assert_eq!(decode_h4(&[0x02, 0x0B, 0x30, 0x10]), Err(CodecError::NeedMoreData));
        assert_eq!(
            decode_h4(&[0x02, 0x00, 0x0F, 0x00, 0x00]),
            Err(CodecError::ReservedHandle(0x0F00))
        );
    }

    #[test]
    fn tail_is_returned() {
        let (_, rest) = decode_h4(&[0x04, 0xFF, 0x00, 0x01, 0x03]).unwrap();
        assert_eq!(rest, &[0x01, 0x03]);
    }

    #[test]
    fn raw_command_examples() {
        assert_eq!(raw_command_buffer(Opcode::RESET, &[]).unwrap(), [0x03, 0x0C, 0x00]);
        let op = Opcode::new(0x3F, 0x4D).unwrap();
        let buf = raw_command_buffer(op, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(&buf[..3], &[0x4D, 0xFC, 0x06]);
        assert!(matches!(
            raw_command_buffer(op, &[0; 256]),
            Err(CodecError::LengthOverflow { .. })
        ));
    }

    #[test]
    fn split_raw_command_checks_length() {
        assert_eq!(split_raw_command(&[0x03, 0x0C, 0x00]).unwrap(), (Opcode::RESET, &[][..]));
        assert!(split_raw_command(&[]).is_err());
        assert!(split_raw_command(&[0x03, 0x0C, 0x01]).is_err());
        assert!(split_raw_command(&[0x03, 0x0C, 0x00, 0x55]).is_err());
    }

    #[test]
    fn decode_body_exact_rejects_trailing_bytes() {
        assert!(HciPacket::decode_body(indicator::EVENT, &[0x0E, 0x00]).is_ok());
        assert!(HciPacket::decode_body(indicator::EVENT, &[0x0E, 0x00, 0x00]).is_err());
        assert!(HciPacket::decode_body(indicator::EVENT, &[0x0E, 0x02, 0x00]).is_err());
    }

    #[test]
    fn stream_decoder_resumes_after_unknown_indicator() {
        let mut d = StreamDecoder::new();
        d.push(&[0x09, 0x04, 0xFF]);
        assert_eq!(d.next_packet(), Err(CodecError::UnknownIndicator(0x09)));
        assert_eq!(d.next_packet(), Ok(None));
        d.push(&[0x00]);
        assert_eq!(
            d.next_packet(),
            Ok(Some(HciPacket::Event(EventPacket::new(0xFF, vec![]).unwrap())))
        );
    }

    #[test]
    fn stream_decoder_skips_rejected_frame() {
        let mut d = StreamDecoder::new();
        // reserved handle 0x0F00 with a 2-byte body split across pushes
        d.push(&[0x02, 0x00, 0x0F, 0x02, 0x00, 0xAA]);
        assert_eq!(d.next_packet(), Err(CodecError::ReservedHandle(0x0F00)));
        d.push(&[0xBB, 0x04, 0xFF, 0x00]);
        assert_eq!(
            d.next_packet(),
            Ok(Some(HciPacket::Event(EventPacket::new(0xFF, vec![]).unwrap())))
        );
        assert_eq!(d.buffered(), 0);
    }
}
