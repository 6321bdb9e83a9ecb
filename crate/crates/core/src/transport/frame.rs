//! Wire framing: u32 BE payload length, u8 tag, u32 BE sender, u32 BE epoch,
//! then the payload.

use std::io::{self, Read, Write};

use super::{Message, Tag, TransportError};

pub const HEADER_LEN: usize = 13;

/// Frames larger than this are rejected as corrupt.
const MAX_PAYLOAD: usize = 1 << 30;

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len());
    out.extend_from_slice(&(msg.payload.len() as u32).to_be_bytes());
    out.push(msg.tag as u8);
    out.extend_from_slice(&(msg.sender as u32).to_be_bytes());
    out.extend_from_slice(&msg.epoch.to_be_bytes());
    out.extend_from_slice(&msg.payload);
    out
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(usize, Tag, usize, u32), TransportError> {
    let len = u32::from_be_bytes([h[0], h[1], h[2], h[3]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(TransportError::Frame(format!("payload length {len} exceeds limit")));
    }
    let tag = Tag::from_u8(h[4])?;
    let sender = u32::from_be_bytes([h[5], h[6], h[7], h[8]]) as usize;
    let epoch = u32::from_be_bytes([h[9], h[10], h[11], h[12]]);
    Ok((len, tag, sender, epoch))
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, TransportError> {
    let header: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| TransportError::Frame(format!("{} bytes is shorter than a header", bytes.len())))?;
    let (len, tag, sender, epoch) = parse_header(header)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != len {
        return Err(TransportError::Frame(format!(
            "header declares {len} payload bytes, found {}",
            body.len()
        )));
    }
    Ok(Message {
        tag,
        sender,
        epoch,
        payload: body.to_vec(),
    })
}

/// Reads one frame; `Ok(None)` on a clean end of stream before a header.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>, TransportError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(TransportError::Frame("stream ended inside a header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (len, tag, sender, epoch) = parse_header(&header)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(Message {
        tag,
        sender,
        epoch,
        payload,
    }))
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> Result<(), TransportError> {
    w.write_all(&encode_frame(msg))?;
    w.flush()?;
    Ok(())
}

/// Builder for tag-specific payloads: big-endian integers and
/// length-prefixed byte strings.
#[derive(Debug, Default)]
pub struct PayloadWriter {
    buf: Vec<u8>,
}

impl PayloadWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(mut self, v: u8) -> Self {
        self.buf.push(v);
        self
    }

    pub fn u32(mut self, v: u32) -> Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(self, b: &[u8]) -> Self {
        let mut s = self.u32(b.len() as u32);
        s.buf.extend_from_slice(b);
        s
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct PayloadReader<'a> {
    rest: &'a [u8],
}

impl<'a> PayloadReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { rest: bytes }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TransportError> {
        if self.rest.len() < n {
            return Err(TransportError::Frame(format!(
                "payload truncated reading {what}: need {n} bytes, have {}",
                self.rest.len()
            )));
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        Ok(head)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8, TransportError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32, TransportError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn bytes(&mut self, what: &str) -> Result<&'a [u8], TransportError> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }

    pub fn finish(self) -> Result<(), TransportError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(TransportError::Frame(format!("{} trailing payload bytes", self.rest.len())))
        }
    }
}
