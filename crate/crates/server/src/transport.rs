//! Message framing over a TCP stream: bare NDJSON lines for agents, or
//! WebSocket text frames for browsers. Both carry the same JSON objects.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use tungstenite::{Message as WsMessage, WebSocket};

/// Longest line accepted from a client.
pub const MAX_LINE: usize = 1 << 20;

pub trait Transport: Send {
    /// Sends one encoded message (with or without its trailing newline).
    fn send(&mut self, line: &str) -> io::Result<()>;

    /// Next inbound message, waiting until `deadline`. `Ok(None)` means the
    /// deadline passed; a closed peer is `UnexpectedEof`.
    fn recv(&mut self, deadline: Instant) -> io::Result<Option<Vec<u8>>>;
}

fn remaining(deadline: Instant) -> Option<Duration> {
    let left = deadline.saturating_duration_since(Instant::now());
    (!left.is_zero()).then_some(left)
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

fn eof() -> io::Error {
    io::Error::new(io::ErrorKind::UnexpectedEof, "peer closed the connection")
}

pub struct LineTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    pending: Vec<u8>,
}

impl LineTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(LineTransport {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
            pending: Vec::new(),
        })
    }

    pub fn connect(addr: &str) -> io::Result<Self> {
        LineTransport::new(TcpStream::connect(addr)?)
    }
}

impl Transport for LineTransport {
    fn send(&mut self, line: &str) -> io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        if !line.ends_with('\n') {
            self.writer.write_all(b"\n")?;
        }
        Ok(())
    }

    fn recv(&mut self, deadline: Instant) -> io::Result<Option<Vec<u8>>> {
        loop {
            // a line may already be sitting in the buffer
            if self.reader.buffer().is_empty() {
                let Some(left) = remaining(deadline) else {
                    return Ok(None);
                };
                self.reader.get_ref().set_read_timeout(Some(left))?;
            }
            let limit = (MAX_LINE + 1 - self.pending.len()) as u64;
            match (&mut self.reader).take(limit).read_until(b'\n', &mut self.pending) {
                Ok(0) if self.pending.is_empty() => return Err(eof()),
                Ok(0) => return Ok(Some(std::mem::take(&mut self.pending))),
                Ok(_) if self.pending.ends_with(b"\n") => {
                    let line = std::mem::take(&mut self.pending);
                    if line.trim_ascii().is_empty() {
                        continue;
                    }
                    return Ok(Some(line));
                }
                Ok(_) if self.pending.len() > MAX_LINE => {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, "line too long"));
                }
                Ok(_) => continue,
                Err(e) if is_timeout(&e) => return Ok(None),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            }
        }
    }
}

pub struct WsTransport {
    ws: WebSocket<TcpStream>,
}

impl WsTransport {
    /// Completes the server side of the upgrade handshake.
    pub fn accept(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let ws = tungstenite::accept(stream).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        Ok(WsTransport { ws })
    }

    pub fn from_socket(ws: WebSocket<TcpStream>) -> Self {
        WsTransport { ws }
    }
}

fn ws_error(e: tungstenite::Error) -> io::Error {
    match e {
        tungstenite::Error::Io(e) => e,
        tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed => eof(),
        other => io::Error::new(io::ErrorKind::InvalidData, other.to_string()),
    }
}

impl Transport for WsTransport {
    fn send(&mut self, line: &str) -> io::Result<()> {
        let text = line.strip_suffix('\n').unwrap_or(line);
        self.ws.send(WsMessage::text(text)).map_err(ws_error)
    }

    fn recv(&mut self, deadline: Instant) -> io::Result<Option<Vec<u8>>> {
        loop {
            let Some(left) = remaining(deadline) else {
                return Ok(None);
            };
            self.ws.get_ref().set_read_timeout(Some(left))?;
            match self.ws.read() {
                Ok(WsMessage::Text(t)) => return Ok(Some(t.as_bytes().to_vec())),
                Ok(WsMessage::Binary(b)) => return Ok(Some(b.to_vec())),
                Ok(WsMessage::Close(_)) => return Err(eof()),
                Ok(_) => continue,
                Err(tungstenite::Error::Io(e)) if is_timeout(&e) => return Ok(None),
                Err(e) => return Err(ws_error(e)),
            }
        }
    }
}

/// How a freshly accepted connection wants to talk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sniffed {
    /// Plain HTTP request for the scenario list.
    ScenarioList,
    /// Any other HTTP request, expected to be a WebSocket upgrade.
    WebSocket,
    /// Bare NDJSON lines.
    Lines,
}

/// Classifies a connection from its first bytes without consuming them.
pub fn sniff(stream: &TcpStream, timeout: Duration) -> io::Result<Sniffed> {
    const LIST: &[u8] = b"GET /scenarios";
    stream.set_read_timeout(Some(timeout))?;
    let mut buf = [0u8; 16];
    let deadline = Instant::now() + timeout;
    loop {
        let n = match stream.peek(&mut buf) {
            Ok(0) => return Err(eof()),
            Ok(n) => n,
            Err(e) if is_timeout(&e) => return Err(io::Error::new(io::ErrorKind::TimedOut, "no request")),
            Err(e) => return Err(e),
        };
        let seen = &buf[..n];
        if !b"GET ".starts_with(&seen[..n.min(4)]) {
            return Ok(Sniffed::Lines);
        }
        if n >= LIST.len() + 1 {
            let is_list = seen.starts_with(LIST) && matches!(seen[LIST.len()], b' ' | b'?' | b'/');
            return Ok(if is_list { Sniffed::ScenarioList } else { Sniffed::WebSocket });
        }
        if n >= 4 && !LIST.starts_with(seen) {
            return Ok(Sniffed::WebSocket);
        }
        if Instant::now() >= deadline {
            return Ok(Sniffed::WebSocket);
        }
        std::thread::sleep(Duration::from_millis(2));
    }
}

/// Consumes an HTTP request head and answers it with a JSON body.
pub fn respond_json(mut stream: TcpStream, body: &str) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
    }
    write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nAccess-Control-Allow-Origin: *\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        body.len(),
        body
    )?;
    stream.flush()
}
