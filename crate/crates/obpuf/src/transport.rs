//! TCP transport for the authentication protocol.
//!
//! Frames are exactly the wire-codec frames: a little-endian `u32` length
//! followed by that many bytes. The server side implements
//! [`Link`]; the prover side serves one connection until the peer closes it.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread::JoinHandle;

use obpuf_core::protocol::{decode_message, encode_message, Link, Message, Prover};

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME: usize = 1 << 24;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Codec(obpuf_core::Error),
    #[error("connection closed by peer")]
    Closed,
    #[error("frame of {0} bytes exceeds the limit")]
    Oversized(usize),
}

/// Reads one frame; `None` on a clean end of stream before the length prefix.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, TransportError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(TransportError::Closed),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let body = u32::from_le_bytes(len) as usize;
    if body > MAX_FRAME {
        return Err(TransportError::Oversized(body));
    }
    let mut frame = vec![0u8; 4 + body];
    frame[..4].copy_from_slice(&len);
    r.read_exact(&mut frame[4..]).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => TransportError::Closed,
        _ => e.into(),
    })?;
    Ok(Some(frame))
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), TransportError> {
    let frame = encode_message(msg).map_err(TransportError::Codec)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

/// Server end of a TCP connection to a prover.
pub struct TcpLink {
    stream: TcpStream,
}

impl TcpLink {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn from_stream(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Link for TcpLink {
    type Error = TransportError;

    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        write_message(&mut self.stream, msg)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = read_frame(&mut self.stream)?.ok_or(TransportError::Closed)?;
        decode_message(&frame).map_err(TransportError::Codec)
    }
}

/// Answers server messages on `stream` until the server disconnects.
pub fn serve_connection<S: Read + Write>(stream: &mut S, prover: &mut Prover) -> Result<(), TransportError> {
    while let Some(frame) = read_frame(stream)? {
        let msg = decode_message(&frame).map_err(TransportError::Codec)?;
        if let Some(reply) = prover.handle(msg).map_err(TransportError::Codec)? {
            write_message(stream, &reply)?;
        }
    }
    Ok(())
}

/// A prover listening on a loopback port in a background thread.
pub struct ProverServer {
    addr: SocketAddr,
    handle: JoinHandle<Result<Prover, TransportError>>,
}

impl ProverServer {
    /// Binds an ephemeral loopback port and serves a single connection.
    pub fn spawn(prover: Prover) -> io::Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", 0))?;
        let addr = listener.local_addr()?;
        let handle = std::thread::spawn(move || {
            let mut prover = prover;
            let (mut stream, _) = listener.accept()?;
            stream.set_nodelay(true)?;
            serve_connection(&mut stream, &mut prover)?;
            Ok(prover)
        });
        Ok(Self { addr, handle })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Waits for the connection to end and hands the prover back.
    pub fn join(self) -> Result<Prover, TransportError> {
        self.handle.join().map_err(|_| TransportError::Io(io::Error::other("prover thread panicked")))?
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use obpuf_core::bits::BitString;

    #[test]
    fn frames_survive_a_byte_stream() {
        let msgs = [
            Message::Challenge { round: 3, c_ob: "0110101".parse::<BitString>().unwrap() },
            Message::Decision { session_id: 9, accept: false, mismatches: 4, rounds: 10 },
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        let mut r = io::Cursor::new(buf);
        for m in &msgs {
            let f = read_frame(&mut r).unwrap().unwrap();
            assert_eq!(&decode_message(&f).unwrap(), m);
        }
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn truncated_and_oversized_frames() {
        let mut r = io::Cursor::new(vec![5u8, 0, 0, 0, 2, 0]);
        assert!(matches!(read_frame(&mut r), Err(TransportError::Closed)));
        let mut r = io::Cursor::new(vec![5u8, 0]);
        assert!(matches!(read_frame(&mut r), Err(TransportError::Closed)));
        let mut r = io::Cursor::new(u32::MAX.to_le_bytes().to_vec());
        assert!(matches!(read_frame(&mut r), Err(TransportError::Oversized(_))));
    }
}
