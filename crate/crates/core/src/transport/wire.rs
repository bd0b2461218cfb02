//! Length-prefixed message framing.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "ESPL"
//!      4     1  type: 1 HELLO, 2 PLAN_SYNC, 3 FEATURE_BLOCK, 4 RESULT, 5 ERROR
//!      5     8  plan epoch (u64 LE)
//!     13     8  request id (u64 LE)
//!     21     4  body length in bytes (u32 LE)
//!     25     n  body
//! ```
//!
//! FEATURE_BLOCK bodies are encoded blocks. All other bodies are
//! `key=value` lines.

use std::io::{self, Read, Write};

pub const MAGIC: [u8; 4] = *b"ESPL";
pub const HEADER_LEN: usize = 25;
/// Upper bound on accepted bodies, well above any feature block.
pub const MAX_BODY_LEN: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Hello = 1,
    PlanSync = 2,
    FeatureBlock = 3,
    Result = 4,
    Error = 5,
}

impl MessageKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => MessageKind::Hello,
            2 => MessageKind::PlanSync,
            3 => MessageKind::FeatureBlock,
            4 => MessageKind::Result,
            5 => MessageKind::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub epoch: u64,
    pub request_id: u64,
    pub body: Vec<u8>,
}

impl Message {
    pub fn new(kind: MessageKind, epoch: u64, request_id: u64, body: impl Into<Vec<u8>>) -> Self {
        Message {
            kind,
            epoch,
            request_id,
            body: body.into(),
        }
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.request_id.to_le_bytes());
        out.extend_from_slice(&(self.body.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.body);
        out
    }
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> io::Result<()> {
    if msg.body.len() > MAX_BODY_LEN as usize {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "message body too large"));
    }
    w.write_all(&msg.to_bytes())?;
    w.flush()
}

/// Reads one message. Returns `Ok(None)` on a clean end of stream before
/// the first header byte.
pub fn read_message(r: &mut impl Read) -> io::Result<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    if header[0..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let kind = MessageKind::from_byte(header[4]).ok_or_else(|| bad("unknown message type"))?;
    let epoch = u64::from_le_bytes(header[5..13].try_into().unwrap());
    let request_id = u64::from_le_bytes(header[13..21].try_into().unwrap());
    let len = u32::from_le_bytes(header[21..25].try_into().unwrap());
    if len > MAX_BODY_LEN {
        return Err(bad("message body too large"));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(Message {
        kind,
        epoch,
        request_id,
        body,
    }))
}
