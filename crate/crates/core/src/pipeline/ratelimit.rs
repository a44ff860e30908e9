//! Token-bucket writer that paces a stream to a configured bit rate.

use std::io::{self, Write};
use std::time::{Duration, Instant};

pub const TICK: Duration = Duration::from_millis(10);

/// Credits `rate / 8 * TICK` bytes per elapsed tick; the bucket holds at
/// most one tick's worth so bursts stay short.
pub struct RateLimitedWriter<W> {
    inner: W,
    bytes_per_tick: f64,
    tokens: f64,
    last: Instant,
}

impl<W: Write> RateLimitedWriter<W> {
    pub fn new(inner: W, rate_bps: f64) -> Self {
        let bytes_per_tick = rate_bps / 8.0 * TICK.as_secs_f64();
        RateLimitedWriter {
            inner,
            bytes_per_tick,
            tokens: bytes_per_tick,
            last: Instant::now(),
        }
    }

    pub fn get_ref(&self) -> &W {
        &self.inner
    }

    pub fn get_mut(&mut self) -> &mut W {
        &mut self.inner
    }

    fn refill(&mut self) {
        let now = Instant::now();
        let ticks = (now - self.last).as_nanos() / TICK.as_nanos();
        if ticks > 0 {
            self.tokens = (self.tokens + ticks as f64 * self.bytes_per_tick)
                .min(self.bytes_per_tick.max(1.0));
            self.last += TICK * ticks as u32;
        }
    }
}

impl<W: Write> Write for RateLimitedWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        loop {
            self.refill();
            if self.tokens >= 1.0 {
                let n = (self.tokens as usize).min(buf.len());
                let written = self.inner.write(&buf[..n])?;
                self.tokens -= written as f64;
                return Ok(written);
            }
            let next = self.last + TICK;
            std::thread::sleep(next.saturating_duration_since(Instant::now()));
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pacing_roughly_matches_rate() {
        // 8 kB at 1.6 Mbps is 40 ms
        let mut w = RateLimitedWriter::new(Vec::new(), 1.6e6);
        let start = Instant::now();
        w.write_all(&vec![7u8; 8000]).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        assert_eq!(w.get_ref().len(), 8000);
        assert!(elapsed >= 0.025, "too fast: {elapsed}");
        assert!(elapsed < 0.5, "too slow: {elapsed}");
    }

    #[test]
    fn tiny_rate_still_progresses() {
        let mut w = RateLimitedWriter::new(Vec::new(), 400.0);
        w.write_all(&[1, 2]).unwrap();
        assert_eq!(w.get_ref(), &[1, 2]);
    }
}
