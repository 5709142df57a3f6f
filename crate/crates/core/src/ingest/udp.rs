use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tracing::debug;

use super::packet::{IngestCounters, PacketSequencer};
use super::SampleSource;
use crate::signal::RespirationSample;

pub const DEFAULT_UDP_PORT: u16 = 4210;

/// Datagram listener worker. Accepted samples are delivered strictly
/// seq-increasing on the returned channel.
pub struct UdpIngest {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    counters: Arc<Mutex<IngestCounters>>,
    handle: Option<JoinHandle<()>>,
}

impl UdpIngest {
    pub fn bind(addr: &str) -> io::Result<(Self, Receiver<RespirationSample>)> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(Duration::from_millis(50)))?;
        let local_addr = socket.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let counters = Arc::new(Mutex::new(IngestCounters::default()));
        let handle = {
            let stop = Arc::clone(&stop);
            let counters = Arc::clone(&counters);
            thread::Builder::new()
                .name("ingest".into())
                .spawn(move || listen(socket, tx, stop, counters))?
        };
        Ok((
            Self {
                local_addr,
                stop,
                counters,
                handle: Some(handle),
            },
            rx,
        ))
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn counters(&self) -> IngestCounters {
        *self.counters.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn stop(mut self) -> IngestCounters {
        self.shutdown();
        self.counters()
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for UdpIngest {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn listen(socket: UdpSocket, tx: Sender<RespirationSample>, stop: Arc<AtomicBool>, counters: Arc<Mutex<IngestCounters>>) {
    let mut sequencer = PacketSequencer::new();
    let mut buf = [0u8; 256];
    while !stop.load(Ordering::Relaxed) {
        let n = match socket.recv_from(&mut buf) {
            Ok((n, _)) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) => {
                debug!(error = %e, "udp receive failed");
                continue;
            }
        };
        let sample = sequencer.accept(&buf[..n]);
        *counters.lock().unwrap_or_else(|e| e.into_inner()) = sequencer.counters();
        if let Some(sample) = sample {
            if tx.send(sample).is_err() {
                break;
            }
        }
    }
}

/// Adapts a push channel to the pull interface.
pub struct ChannelSource {
    rx: Receiver<RespirationSample>,
}

impl ChannelSource {
    pub fn new(rx: Receiver<RespirationSample>) -> Self {
        Self { rx }
    }
}

impl SampleSource for ChannelSource {
    fn poll(&mut self, _now_ms: u64) -> Vec<RespirationSample> {
        self.rx.try_iter().collect()
    }
}
