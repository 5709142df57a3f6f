//! Byte-stream links between the output loop and the arm endpoint.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, Sender};
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransportConfig {
    /// In-process pipe to a simulated arm.
    #[default]
    Loopback,
    /// TCP connection standing in for the serial line.
    Tcp { host: String, port: u16 },
}

/// Write half of an in-process pipe.
#[derive(Debug, Clone)]
pub struct LoopbackWriter {
    tx: Sender<Vec<u8>>,
}

/// Read half of an in-process pipe. Reads block until data arrives and
/// return EOF once every writer is dropped.
#[derive(Debug)]
pub struct LoopbackReader {
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    pos: usize,
}

pub fn loopback() -> (LoopbackWriter, LoopbackReader) {
    let (tx, rx) = mpsc::channel();
    (
        LoopbackWriter { tx },
        LoopbackReader {
            rx,
            pending: Vec::new(),
            pos: 0,
        },
    )
}

impl Write for LoopbackWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "loopback reader dropped"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Read for LoopbackReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos >= self.pending.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.pos);
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

pub fn connect_tcp(host: &str, port: u16) -> io::Result<TcpStream> {
    let stream = TcpStream::connect((host, port))?;
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(Duration::from_millis(500)))?;
    Ok(stream)
}
