//! Client side: head, filter gate, quantize, send, await the result.

use std::io::{BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::filter::{filter_decide, Decision, FilterModel};
use super::ratelimit::RateLimitedWriter;
use super::checksum;
use crate::codec::{dequantize, quantize8};
use crate::error::{Error, Result};
use crate::latency::{transfer_time, ChannelModel, ExecutionProfile};
use crate::tensor::{random_fill, Shape, Tensor};
use crate::wire::{
    decode_message, encode_message, read_message, MessageType, WireMessage, DEFAULT_MAX_PAYLOAD,
};

#[derive(Debug, Clone)]
pub struct LabeledImage {
    /// Bottleneck activation the head would produce for this image.
    pub tensor: Tensor,
    pub nonempty: bool,
}

/// `n` random bottleneck tensors with labels drawn from the filter prior.
pub fn synthetic_images(shape: &Shape, n: usize, fm: &FilterModel, seed: u64) -> Result<Vec<LabeledImage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let nonempty = rand::Rng::random::<f64>(&mut rng) >= fm.p_empty;
            let tensor = random_fill(shape.clone(), seed.wrapping_add(i as u64 + 1), -2.0, 6.0)?;
            Ok(LabeledImage { tensor, nonempty })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum SessionMode {
    /// Uplink and tail are charged from the models; no sockets.
    Simulated,
    /// Real frames over TCP, paced to the channel rate.
    Socket { addr: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: usize,
    pub filtered: bool,
    pub bytes_sent: u64,
    pub t_head: f64,
    pub t_uplink: f64,
    pub t_tail: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    pub records: Vec<ImageRecord>,
}

impl SessionLog {
    pub fn total_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.bytes_sent).sum()
    }

    pub fn drop_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.filtered).count() as f64 / self.records.len() as f64
    }

    pub fn mean_total(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.total).sum::<f64>() / self.records.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs every image through the split pipeline in order. Filter scores are
/// drawn from `fm` with `seed`, so simulated sessions are reproducible.
pub fn run_session(
    images: &[LabeledImage],
    prof: &ExecutionProfile,
    ch: &ChannelModel,
    fm: &FilterModel,
    mode: &SessionMode,
    seed: u64,
) -> Result<SessionLog> {
    prof.validate()?;
    ch.validate()?;
    fm.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut link = match mode {
        SessionMode::Simulated => None,
        SessionMode::Socket { addr } => Some(Link::connect(addr, ch.rate_bps)?),
    };
    let t_head = prof.t_head + prof.t_filter_extra;
    let mut log = SessionLog::default();
    for (i, img) in images.iter().enumerate() {
        let score = fm.sample_score(img.nonempty, &mut rng);
        if filter_decide(score, fm.threshold)? == Decision::Drop {
            // answered locally with an empty detection
            log.records.push(ImageRecord {
                image_id: i,
                filtered: true,
                bytes_sent: 0,
                t_head,
                t_uplink: 0.0,
                t_tail: 0.0,
                total: t_head,
            });
            continue;
        }
        let q = quantize8(&img.tensor);
        let local = checksum(&dequantize(&q)?.to_le_bytes());
        let frame = encode_message(&WireMessage::from_quantized(&q)?)?;
        let (t_uplink, t_tail, remote) = match link.as_mut() {
            None => {
                let msg = decode_message(&frame)?;
                let remote = checksum(&dequantize(&msg.to_quantized()?)?.to_le_bytes());
                (transfer_time(frame.len() as u64, ch) + ch.downlink_s, prof.t_tail, remote)
            }
            Some(link) => link.exchange(i, &frame)?,
        };
        if remote != local {
            return Err(Error::Protocol(format!(
                "image {i}: server tensor checksum differs from client"
            )));
        }
        log.records.push(ImageRecord {
            image_id: i,
            filtered: false,
            bytes_sent: frame.len() as u64,
            t_head,
            t_uplink,
            t_tail,
            total: t_head + t_uplink + t_tail,
        });
    }
    Ok(log)
}

struct Link {
    writer: RateLimitedWriter<TcpStream>,
    reader: BufReader<TcpStream>,
}

impl Link {
    fn connect(addr: &str, rate_bps: f64) -> Result<Self> {
        let addrs: Vec<_> = addr
            .to_socket_addrs()
            .map_err(|e| Error::transport(None, format!("{addr}: {e}")))?
            .collect();
        let stream = addrs
            .iter()
            .find_map(|a| TcpStream::connect_timeout(a, Duration::from_secs(5)).ok())
            .ok_or_else(|| Error::transport(None, format!("cannot connect to {addr}")))?;
        let setup = |s: &TcpStream| -> std::io::Result<TcpStream> {
            s.set_nodelay(true)?;
            s.set_read_timeout(Some(Duration::from_secs(60)))?;
            s.try_clone()
        };
        let reader = setup(&stream).map_err(|e| Error::transport(None, e.to_string()))?;
        Ok(Link {
            writer: RateLimitedWriter::new(stream, rate_bps),
            reader: BufReader::new(reader),
        })
    }

    /// Sends one frame; returns wall-clock (uplink, reply wait, checksum).
    fn exchange(&mut self, image: usize, frame: &[u8]) -> Result<(f64, f64, [u8; 32])> {
        let io_err = |e: std::io::Error| Error::transport(Some(image), e.to_string());
        let start = Instant::now();
        self.writer.write_all(frame).map_err(io_err)?;
        self.writer.flush().map_err(io_err)?;
        let sent = Instant::now();
        let reply = match read_message(&mut self.reader, DEFAULT_MAX_PAYLOAD) {
            Ok(Some(m)) => m,
            Ok(None) => return Err(Error::transport(Some(image), "server closed the connection")),
            Err(Error::Io(e)) => return Err(io_err(e)),
            Err(e) => return Err(e),
        };
        let done = Instant::now();
        if reply.msg_type != MessageType::DetectionResult || reply.payload.len() != 32 {
            return Err(Error::Protocol(format!(
                "image {image}: expected a detection result, got {:?} with {} bytes",
                reply.msg_type,
                reply.payload.len()
            )));
        }
        let mut digest = [0u8; 32];
        digest.copy_from_slice(&reply.payload);
        Ok((
            (sent - start).as_secs_f64(),
            (done - sent).as_secs_f64(),
            digest,
        ))
    }
}

