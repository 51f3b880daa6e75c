//! Length-prefixed wire format.
//!
//! Every frame is `u32 frame_len` followed by `frame_len` bytes: a one-byte
//! kind and the kind's payload. Integers are little-endian. Bit strings are
//! packed most significant bit first and padded with zero bits to a byte
//! boundary.
//!
//! | kind | name           | payload                                                         |
//! |------|----------------|-----------------------------------------------------------------|
//! | 1    | `SESSION_INIT` | `u64 session_id, u16 count, u16 bit_len, count × packed bits`   |
//! | 2    | `CHALLENGE`    | `u32 round, u16 bit_len, packed bits`                           |
//! | 3    | `RESPONSE`     | `u32 round, u16 bit_len, packed bits`                           |
//! | 4    | `DECISION`     | `u64 session_id, u8 accept, u32 mismatches, u32 rounds`         |

use alloc::vec::Vec;

use crate::bits::BitString;
use crate::error::{Error, Result};

pub const KIND_SESSION_INIT: u8 = 1;
pub const KIND_CHALLENGE: u8 = 2;
pub const KIND_RESPONSE: u8 = 3;
pub const KIND_DECISION: u8 = 4;

/// Bytes of the length prefix.
pub const LEN_PREFIX: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// Opens a session and carries the public reconfiguration challenges.
    SessionInit { session_id: u64, reconfig_challenges: Vec<BitString>, bit_len: u16 },
    Challenge { round: u32, c_ob: BitString },
    Response { round: u32, r_ob: BitString },
    Decision { session_id: u64, accept: bool, mismatches: u32, rounds: u32 },
}

impl Message {
    pub fn session_init(session_id: u64, reconfig_challenges: Vec<BitString>, bit_len: usize) -> Result<Self> {
        let bit_len = u16::try_from(bit_len).map_err(|_| Error::invalid("bit length exceeds u16"))?;
        if reconfig_challenges.iter().any(|c| c.len() != bit_len as usize) {
            return Err(Error::invalid("reconfiguration challenges must share one bit length"));
        }
        if u16::try_from(reconfig_challenges.len()).is_err() {
            return Err(Error::invalid("too many reconfiguration challenges for one frame"));
        }
        Ok(Message::SessionInit { session_id, reconfig_challenges, bit_len })
    }

    pub fn kind(&self) -> u8 {
        match self {
            Message::SessionInit { .. } => KIND_SESSION_INIT,
            Message::Challenge { .. } => KIND_CHALLENGE,
            Message::Response { .. } => KIND_RESPONSE,
            Message::Decision { .. } => KIND_DECISION,
        }
    }
}

fn put_bits(out: &mut Vec<u8>, bits: &BitString) -> Result<()> {
    let len = u16::try_from(bits.len()).map_err(|_| Error::invalid("bit length exceeds u16"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&bits.to_packed());
    Ok(())
}

/// Serializes one frame, length prefix included.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>> {
    let mut body = alloc::vec![msg.kind()];
    match msg {
        Message::SessionInit { session_id, reconfig_challenges, bit_len } => {
            let count = u16::try_from(reconfig_challenges.len())
                .map_err(|_| Error::invalid("too many reconfiguration challenges for one frame"))?;
            body.extend_from_slice(&session_id.to_le_bytes());
            body.extend_from_slice(&count.to_le_bytes());
            body.extend_from_slice(&bit_len.to_le_bytes());
            for c in reconfig_challenges {
                if c.len() != *bit_len as usize {
                    return Err(Error::invalid("reconfiguration challenge length differs from bit_len"));
                }
                body.extend_from_slice(&c.to_packed());
            }
        }
        Message::Challenge { round, c_ob: bits } | Message::Response { round, r_ob: bits } => {
            body.extend_from_slice(&round.to_le_bytes());
            put_bits(&mut body, bits)?;
        }
        Message::Decision { session_id, accept, mismatches, rounds } => {
            body.extend_from_slice(&session_id.to_le_bytes());
            body.push(*accept as u8);
            body.extend_from_slice(&mismatches.to_le_bytes());
            body.extend_from_slice(&rounds.to_le_bytes());
        }
    }
    let len = u32::try_from(body.len()).map_err(|_| Error::invalid("frame too long"))?;
    let mut out = Vec::with_capacity(LEN_PREFIX + body.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Total frame size announced by a buffer's length prefix, if it is complete.
pub fn frame_size(buf: &[u8]) -> Option<usize> {
    let prefix: [u8; 4] = buf.get(..LEN_PREFIX)?.try_into().ok()?;
    Some(LEN_PREFIX + u32::from_le_bytes(prefix) as usize)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Malformed { offset: self.buf.len(), reason: "truncated frame" }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn bits(&mut self, len: usize) -> Result<BitString> {
        let start = self.pos;
        let bytes = self.take(len.div_ceil(8))?;
        BitString::from_packed(bytes, len)
            .map_err(|bit| Error::Malformed { offset: start + bit / 8, reason: "non-zero padding bit" })
    }
}

/// Parses exactly one frame occupying the whole of `buf`.
pub fn decode_message(buf: &[u8]) -> Result<Message> {
    let (msg, used) = decode_prefix(buf)?;
    if used != buf.len() {
        return Err(Error::Malformed { offset: used, reason: "trailing bytes after frame" });
    }
    Ok(msg)
}

/// Parses the frame at the start of `buf`, returning it and its size.
pub fn decode_prefix(buf: &[u8]) -> Result<(Message, usize)> {
    let mut r = Reader { buf, pos: 0 };
    let body_len = r.u32()? as usize;
    let end = LEN_PREFIX + body_len;
    if buf.len() < end {
        return Err(Error::Malformed { offset: buf.len(), reason: "truncated frame" });
    }
    let mut r = Reader { buf: &buf[..end], pos: LEN_PREFIX };
    let kind_at = r.pos;
    let msg = match r.u8()? {
        KIND_SESSION_INIT => {
            let session_id = r.u64()?;
            let count = r.u16()? as usize;
            let bit_len = r.u16()?;
            let mut reconfig_challenges = Vec::with_capacity(count.min(body_len));
            for _ in 0..count {
                reconfig_challenges.push(r.bits(bit_len as usize)?);
            }
            Message::SessionInit { session_id, reconfig_challenges, bit_len }
        }
        kind @ (KIND_CHALLENGE | KIND_RESPONSE) => {
            let round = r.u32()?;
            let len = r.u16()? as usize;
            let bits = r.bits(len)?;
            if kind == KIND_CHALLENGE {
                Message::Challenge { round, c_ob: bits }
            } else {
                Message::Response { round, r_ob: bits }
            }
        }
        KIND_DECISION => {
            let session_id = r.u64()?;
            let accept_at = r.pos;
            let accept = match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err(Error::Malformed { offset: accept_at, reason: "accept flag is not 0 or 1" }),
            };
            let mismatches = r.u32()?;
            let rounds = r.u32()?;
            Message::Decision { session_id, accept, mismatches, rounds }
        }
        _ => return Err(Error::Malformed { offset: kind_at, reason: "unknown message kind" }),
    };
    if r.pos != end {
        return Err(Error::Malformed { offset: r.pos, reason: "frame length exceeds payload" });
    }
    Ok((msg, end))
}
