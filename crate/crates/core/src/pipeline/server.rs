//! Edge-server side: receive a frame, rebuild the tensor, charge the tail,
//! reply with a detection result carrying the tensor checksum.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::checksum;
use crate::codec::dequantize;
use crate::error::{Error, Result};
use crate::latency::ExecutionProfile;
use crate::wire::{read_message, write_message, MessageType, WireMessage, DEFAULT_MAX_PAYLOAD};

/// How the server accounts for tail compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// Reply immediately; the delay exists only in the model.
    #[default]
    Virtual,
    /// Sleep for the profiled time before replying.
    Sleep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerOptions {
    pub tail_mode: TailMode,
    /// Close a connection after this long without a frame. `None` waits forever.
    pub idle_timeout_s: Option<f64>,
    pub max_payload: u64,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            tail_mode: TailMode::Virtual,
            idle_timeout_s: Some(30.0),
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }
}

impl ServerOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.idle_timeout_s {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("server.idle_timeout_s {t} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub connections: AtomicU64,
    pub frames: AtomicU64,
    pub protocol_errors: AtomicU64,
    pub idle_closes: AtomicU64,
}

impl ServerStats {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::SeqCst)
    }
}

pub struct Server {
    listener: TcpListener,
    prof: ExecutionProfile,
    opts: ServerOptions,
    stats: Arc<ServerStats>,
    stop: Arc<AtomicBool>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, prof: ExecutionProfile, opts: ServerOptions) -> Result<Self> {
        opts.validate()?;
        let listener =
            TcpListener::bind(addr).map_err(|e| Error::transport(None, format!("bind: {e}")))?;
        Ok(Server {
            listener,
            prof,
            opts,
            stats: Arc::new(ServerStats::default()),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn stats(&self) -> Arc<ServerStats> {
        Arc::clone(&self.stats)
    }

    /// Accepts until stopped, one thread per connection.
    pub fn run(self) -> Result<()> {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            self.stats.connections.fetch_add(1, Ordering::SeqCst);
            let prof = self.prof;
            let opts = self.opts;
            let stats = Arc::clone(&self.stats);
            workers.retain(|w| !w.is_finished());
            workers.push(thread::spawn(move || handle_connection(stream, &prof, &opts, &stats)));
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let stats = self.stats();
        let join = thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            stats,
            join: Some(join),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stats: Arc<ServerStats>,
    join: Option<JoinHandle<Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    /// Stops accepting and waits for open connections to finish.
    pub fn shutdown(mut self) -> Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> Result<()> {
        let Some(join) = self.join.take() else {
            return Ok(());
        };
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        join.join()
            .map_err(|_| Error::transport(None, "server thread panicked"))?
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

/// Blocking server loop on `addr`.
pub fn serve<A: ToSocketAddrs>(addr: A, prof: ExecutionProfile, opts: ServerOptions) -> Result<()> {
    let server = Server::bind(addr, prof, opts)?;
    log::info!("listening on {}", server.local_addr()?);
    server.run()
}

fn handle_connection(stream: TcpStream, prof: &ExecutionProfile, opts: &ServerOptions, stats: &ServerStats) {
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "?".into());
    if let Err(e) = serve_stream(&stream, prof, opts, stats) {
        match e {
            Error::Protocol(_) => {
                stats.protocol_errors.fetch_add(1, Ordering::SeqCst);
                log::warn!("{peer}: {e}; closing connection");
            }
            Error::Io(ref io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                stats.idle_closes.fetch_add(1, Ordering::SeqCst);
                log::info!("{peer}: idle timeout; closing connection");
            }
            _ => log::warn!("{peer}: {e}"),
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

fn serve_stream(
    stream: &TcpStream,
    prof: &ExecutionProfile,
    opts: &ServerOptions,
    stats: &ServerStats,
) -> Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(opts.idle_timeout_s.map(Duration::from_secs_f64))?;
    let mut reader = BufReader::new(stream);
    let mut writer = BufWriter::new(stream);
    while let Some(msg) = read_message(&mut reader, opts.max_payload)? {
        stats.frames.fetch_add(1, Ordering::SeqCst);
        let (digest, compute_s) = match msg.msg_type {
            MessageType::QTensor8 | MessageType::QTensor16 | MessageType::FTensor32 => {
                let t = dequantize(&msg.to_quantized()?)
                    .map_err(|e| Error::Protocol(e.to_string()))?;
                (checksum(&t.to_le_bytes()), prof.t_tail)
            }
            MessageType::JpegImage => (checksum(&msg.payload), prof.t_edge_full),
            other => {
                return Err(Error::Protocol(format!(
                    "client sent a {other:?} frame"
                )))
            }
        };
        if opts.tail_mode == TailMode::Sleep {
            thread::sleep(Duration::from_secs_f64(compute_s));
        }
        write_message(&mut writer, &WireMessage::detection_result(digest))?;
        writer.flush()?;
    }
    Ok(())
}
