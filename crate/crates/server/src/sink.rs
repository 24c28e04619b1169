//! Decision-log and trace sinks.
//!
//! Every session writes through one [`Recorder`]: a thread that owns the
//! sinks and appends the batches it receives in arrival order, so lines from
//! concurrent sessions never interleave.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::mpsc::{self, Sender};
use std::thread;

use thiserror::Error;
use trolley_core::record::{format_record, DecisionRecord};

#[derive(Debug, Error)]
#[error("IO_ERROR after {written} line(s): {source}")]
pub struct SinkError {
    pub written: usize,
    #[source]
    pub source: io::Error,
}

/// Writes whole lines, one `write_all` per line, and reports how many made it.
pub fn write_lines<'a>(lines: impl IntoIterator<Item = &'a str>, out: &mut dyn Write) -> Result<usize, SinkError> {
    let mut written = 0;
    for line in lines {
        out.write_all(line.as_bytes())
            .map_err(|source| SinkError { written, source })?;
        written += 1;
    }
    out.flush().map_err(|source| SinkError { written, source })?;
    Ok(written)
}

pub fn write_records<'a>(
    records: impl IntoIterator<Item = &'a DecisionRecord>,
    out: &mut dyn Write,
) -> Result<usize, SinkError> {
    let lines: Vec<String> = records.into_iter().map(format_record).collect();
    write_lines(lines.iter().map(String::as_str), out)
}

/// Where decision lines go: an append-only file or a `tcp://host:port` stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SinkTarget {
    File(PathBuf),
    Stream(String),
}

impl SinkTarget {
    pub fn parse(s: &str) -> SinkTarget {
        match s.strip_prefix("tcp://") {
            Some(addr) => SinkTarget::Stream(addr.to_owned()),
            None => SinkTarget::File(PathBuf::from(s)),
        }
    }

    pub fn open(&self) -> io::Result<Box<dyn Write + Send>> {
        Ok(match self {
            SinkTarget::File(path) => Box::new(open_append(path)?),
            SinkTarget::Stream(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                Box::new(stream)
            }
        })
    }
}

/// Opens for appending, creating the file if needed. Unbuffered, so each
/// line lands in a single `write` on an `O_APPEND` descriptor.
pub fn open_append(path: &std::path::Path) -> io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

enum Job {
    Records(Vec<String>, Sender<Result<usize, SinkError>>),
    Traces(Vec<String>, Sender<Result<usize, SinkError>>),
}

/// Handle to the serializing writer thread. Cheap to clone.
#[derive(Clone)]
pub struct Recorder {
    tx: Sender<Job>,
}

impl Recorder {
    pub fn spawn(mut records: Box<dyn Write + Send>, mut traces: Option<Box<dyn Write + Send>>) -> Recorder {
        let (tx, rx) = mpsc::channel::<Job>();
        thread::Builder::new()
            .name("recorder".into())
            .spawn(move || {
                for job in rx {
                    match job {
                        Job::Records(lines, ack) => {
                            let _ = ack.send(write_lines(lines.iter().map(String::as_str), &mut *records));
                        }
                        Job::Traces(lines, ack) => {
                            let result = match traces.as_mut() {
                                Some(out) => write_lines(lines.iter().map(String::as_str), &mut **out),
                                None => Ok(0),
                            };
                            let _ = ack.send(result);
                        }
                    }
                }
            })
            .expect("spawn recorder thread");
        Recorder { tx }
    }

    /// A recorder that keeps nothing.
    pub fn discard() -> Recorder {
        Recorder::spawn(Box::new(io::sink()), None)
    }

    fn submit(&self, job: impl FnOnce(Sender<Result<usize, SinkError>>) -> Job) -> Result<usize, SinkError> {
        let (ack, done) = mpsc::channel();
        let gone = || SinkError {
            written: 0,
            source: io::Error::new(io::ErrorKind::BrokenPipe, "recorder thread stopped"),
        };
        self.tx.send(job(ack)).map_err(|_| gone())?;
        done.recv().map_err(|_| gone())?
    }

    /// Appends the records and waits until they are flushed.
    pub fn append_records(&self, records: &[DecisionRecord]) -> Result<usize, SinkError> {
        let lines = records.iter().map(format_record).collect();
        self.submit(|ack| Job::Records(lines, ack))
    }

    /// Appends preformatted trace lines and waits until they are flushed.
    pub fn append_traces(&self, lines: Vec<String>) -> Result<usize, SinkError> {
        self.submit(|ack| Job::Traces(lines, ack))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FailAfter(usize);

    impl Write for FailAfter {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            if self.0 == 0 {
                return Err(io::Error::other("disk full"));
            }
            self.0 -= 1;
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn partial_write_count() {
        let err = write_lines(["a\n", "b\n", "c\n"], &mut FailAfter(2)).unwrap_err();
        assert_eq!(err.written, 2);
        assert!(err.to_string().starts_with("IO_ERROR after 2 line(s)"));
    }

    #[test]
    fn target_parse() {
        assert_eq!(SinkTarget::parse("tcp://127.0.0.1:9"), SinkTarget::Stream("127.0.0.1:9".into()));
        assert_eq!(SinkTarget::parse("out.tsv"), SinkTarget::File("out.tsv".into()));
    }
}
