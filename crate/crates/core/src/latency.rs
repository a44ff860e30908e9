//! Capture-to-output delay for local computing (LC), pure offloading (PO),
//! split computing (SC) and split computing with the neural filter (SCNF).
//!
//! Delays are deterministic functions of the profile, the payload sizes and
//! the channel; transfer time is size over rate plus a fixed latency.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::Width;
use crate::error::{Error, Result};

/// Compute times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionProfile {
    /// Full model on the mobile device.
    pub t_local: f64,
    /// Full model on the edge server.
    pub t_edge_full: f64,
    /// Head (up to and including the bottleneck) on the mobile device.
    pub t_head: f64,
    /// Tail on the edge server.
    pub t_tail: f64,
    /// Extra head-side cost of running the neural filter.
    #[serde(default)]
    pub t_filter_extra: f64,
}

impl ExecutionProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("t_local", self.t_local),
            ("t_edge_full", self.t_edge_full),
            ("t_head", self.t_head),
            ("t_tail", self.t_tail),
            ("t_filter_extra", self.t_filter_extra),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("profile.{name} = {v} must be >= 0")));
            }
        }
        if self.t_head > self.t_local || self.t_tail > self.t_local {
            return Err(Error::Config(
                "profile: t_head and t_tail may not exceed t_local".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    /// Uplink rate in bits per second.
    pub rate_bps: f64,
    #[serde(default)]
    pub fixed_latency_s: f64,
    /// Time to return the detection result; zero unless configured.
    #[serde(default)]
    pub downlink_s: f64,
}

impl ChannelModel {
    pub fn with_rate(rate_bps: f64) -> Self {
        ChannelModel {
            rate_bps,
            fixed_latency_s: 0.0,
            downlink_s: 0.0,
        }
    }

    pub fn at_rate(&self, rate_bps: f64) -> Self {
        ChannelModel { rate_bps, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_bps.is_finite() && self.rate_bps > 0.0) {
            return Err(Error::Config(format!(
                "channel.rate_bps = {} must be > 0",
                self.rate_bps
            )));
        }
        if !(self.fixed_latency_s >= 0.0 && self.downlink_s >= 0.0) {
            return Err(Error::Config("channel latencies must be >= 0".into()));
        }
        Ok(())
    }
}

/// Bytes on the wire for the JPEG input and for each bottleneck encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadSizes {
    pub jpeg_bytes: u64,
    pub bottleneck_bytes_8: u64,
    pub bottleneck_bytes_16: u64,
    pub bottleneck_bytes_32: u64,
}

impl PayloadSizes {
    pub fn bottleneck_bytes(&self, width: Width) -> u64 {
        match width {
            Width::W8 => self.bottleneck_bytes_8,
            Width::W16 => self.bottleneck_bytes_16,
            Width::W32 => self.bottleneck_bytes_32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jpeg_bytes == 0 || self.bottleneck_bytes_8 == 0 {
            return Err(Error::Config("payload sizes must be > 0".into()));
        }
        if !(self.bottleneck_bytes_8 < self.bottleneck_bytes_16
            && self.bottleneck_bytes_16 < self.bottleneck_bytes_32)
        {
            return Err(Error::Config(
                "payload sizes must satisfy 8-bit < 16-bit < 32-bit".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "LC")]
    LocalComputing,
    #[serde(rename = "PO")]
    PureOffloading,
    #[serde(rename = "SC")]
    SplitComputing,
    #[serde(rename = "SCNF")]
    SplitWithFilter,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::LocalComputing,
        Strategy::PureOffloading,
        Strategy::SplitComputing,
        Strategy::SplitWithFilter,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Strategy::LocalComputing => "LC",
            Strategy::PureOffloading => "PO",
            Strategy::SplitComputing => "SC",
            Strategy::SplitWithFilter => "SCNF",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown strategy {s:?} (LC, PO, SC, SCNF)")))
    }
}

/// Delay split into its components; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayBreakdown {
    pub strategy: Strategy,
    /// On-device compute: the head for split runs, the whole model for LC.
    pub t_head: f64,
    pub t_uplink: f64,
    pub t_server: f64,
    pub t_filter: f64,
    pub total: f64,
}

impl DelayBreakdown {
    fn new(strategy: Strategy, t_head: f64, t_uplink: f64, t_server: f64, t_filter: f64) -> Self {
        DelayBreakdown {
            strategy,
            t_head,
            t_uplink,
            t_server,
            t_filter,
            total: t_head + t_uplink + t_server + t_filter,
        }
    }

    pub fn components(&self) -> [(&'static str, f64); 4] {
        [
            ("t_head", self.t_head),
            ("t_uplink", self.t_uplink),
            ("t_server", self.t_server),
            ("t_filter", self.t_filter),
        ]
    }
}

/// `8 * bytes / rate + fixed latency`, in seconds.
pub fn transfer_time(bytes: u64, ch: &ChannelModel) -> f64 {
    8.0 * bytes as f64 / ch.rate_bps + ch.fixed_latency_s
}

/// Expected capture-to-output delay. `p_drop` (probability the filter drops
/// an image) only affects SCNF; a dropped image costs head plus filter.
pub fn total_delay(
    strategy: Strategy,
    prof: &ExecutionProfile,
    ch: &ChannelModel,
    sizes: &PayloadSizes,
    width: Width,
    p_drop: f64,
) -> Result<DelayBreakdown> {
    Ok(match strategy {
        Strategy::LocalComputing => DelayBreakdown::new(strategy, prof.t_local, 0.0, 0.0, 0.0),
        Strategy::PureOffloading => DelayBreakdown::new(
            strategy,
            0.0,
            transfer_time(sizes.jpeg_bytes, ch) + ch.downlink_s,
            prof.t_edge_full,
            0.0,
        ),
        Strategy::SplitComputing => DelayBreakdown::new(
            strategy,
            prof.t_head,
            transfer_time(sizes.bottleneck_bytes(width), ch) + ch.downlink_s,
            prof.t_tail,
            0.0,
        ),
        Strategy::SplitWithFilter => {
            if !(0.0..=1.0).contains(&p_drop) {
                return Err(Error::Range(format!("p_drop {p_drop} outside [0, 1]")));
            }
            let keep = 1.0 - p_drop;
            DelayBreakdown::new(
                strategy,
                prof.t_head,
                keep * (transfer_time(sizes.bottleneck_bytes(width), ch) + ch.downlink_s),
                keep * prof.t_tail,
                prof.t_filter_extra,
            )
        }
    })
}

/// `T_LC / T_strategy`.
pub fn gain_vs_local(
    prof: &ExecutionProfile,
    ch: &ChannelModel,
    sizes: &PayloadSizes,
    width: Width,
    strategy: Strategy,
    p_drop: f64,
) -> Result<f64> {
    let reference = total_delay(Strategy::LocalComputing, prof, ch, sizes, width, p_drop)?;
    let other = total_delay(strategy, prof, ch, sizes, width, p_drop)?;
    Ok(reference.total / other.total)
}

/// `T_PO / T_strategy`.
pub fn gain_vs_offload(
    prof: &ExecutionProfile,
    ch: &ChannelModel,
    sizes: &PayloadSizes,
    width: Width,
    strategy: Strategy,
    p_drop: f64,
) -> Result<f64> {
    let reference = total_delay(Strategy::PureOffloading, prof, ch, sizes, width, p_drop)?;
    let other = total_delay(strategy, prof, ch, sizes, width, p_drop)?;
    Ok(reference.total / other.total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub rate_mbps: f64,
    pub strategy: Strategy,
    pub t_head: f64,
    pub t_uplink: f64,
    pub t_server: f64,
    pub t_filter: f64,
    pub total_s: f64,
    pub gain_vs_local: f64,
    pub gain_vs_offload: f64,
}

/// One row per (rate, strategy), rates in bits per second, strictly
/// ascending. `ch` supplies everything but the rate.
pub fn sweep(
    prof: &ExecutionProfile,
    ch: &ChannelModel,
    sizes: &PayloadSizes,
    width: Width,
    rates: &[f64],
    p_drop: f64,
) -> Result<Vec<SweepRow>> {
    if rates.is_empty() {
        return Err(Error::Argument("sweep needs at least one rate".into()));
    }
    if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Argument("sweep rates must be positive".into()));
    }
    if rates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("sweep rates must be strictly ascending".into()));
    }
    let mut rows = Vec::with_capacity(rates.len() * Strategy::ALL.len());
    for &rate in rates {
        let ch = ch.at_rate(rate);
        let local = total_delay(Strategy::LocalComputing, prof, &ch, sizes, width, p_drop)?.total;
        let offload = total_delay(Strategy::PureOffloading, prof, &ch, sizes, width, p_drop)?.total;
        for strategy in Strategy::ALL {
            let d = total_delay(strategy, prof, &ch, sizes, width, p_drop)?;
            rows.push(SweepRow {
                rate_mbps: rate / 1e6,
                strategy,
                t_head: d.t_head,
                t_uplink: d.t_uplink,
                t_server: d.t_server,
                t_filter: d.t_filter,
                total_s: d.total,
                gain_vs_local: local / d.total,
                gain_vs_offload: offload / d.total,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Rate (bits/s) inside `bracket` at which strategies `a` and `b` have equal
/// total delay, found by bisection.
#[allow(clippy::too_many_arguments)]
pub fn crossover_rate(
    prof: &ExecutionProfile,
    ch: &ChannelModel,
    sizes: &PayloadSizes,
    width: Width,
    a: Strategy,
    b: Strategy,
    bracket: (f64, f64),
    p_drop: f64,
) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Argument(format!("bad rate bracket {bracket:?}")));
    }
    let gap = |rate: f64| -> Result<f64> {
        let ch = ch.at_rate(rate);
        Ok(total_delay(a, prof, &ch, sizes, width, p_drop)?.total
            - total_delay(b, prof, &ch, sizes, width, p_drop)?.total)
    };
    let mut f_lo = gap(lo)?;
    let f_hi = gap(hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoCrossover(format!(
            "{a} - {b} has the same sign at {:.4} and {:.4} Mbps",
            lo / 1e6,
            hi / 1e6
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = gap(mid)?;
        if f_mid == 0.0 || (hi - lo) <= 1e-12 * hi {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if gap(mid)?.abs() < 1e-6 {
        Ok(mid)
    } else {
        Err(Error::NoCrossover("bisection did not converge".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prof() -> ExecutionProfile {
        ExecutionProfile {
            t_local: 2.25,
            t_edge_full: 0.2,
            t_head: 0.1,
            t_tail: 0.15,
            t_filter_extra: 0.01,
        }
    }

    fn sizes() -> PayloadSizes {
        PayloadSizes {
            jpeg_bytes: 312_500,
            bottleneck_bytes_8: 200_000,
            bottleneck_bytes_16: 400_000,
            bottleneck_bytes_32: 800_000,
        }
    }

    #[test]
    fn transfer_cases() {
        let ch = ChannelModel::with_rate(5e6);
        assert_eq!(transfer_time(312_500, &ch), 0.5);
        let ch = ChannelModel {
            fixed_latency_s: 0.02,
            ..ChannelModel::with_rate(5e6)
        };
        assert_eq!(transfer_time(0, &ch), 0.02);
        let slow = transfer_time(1000, &ChannelModel::with_rate(1e6));
        let fast = transfer_time(1000, &ChannelModel::with_rate(2e6));
        assert_eq!(fast, slow / 2.0);
    }

    #[test]
    fn strategy_totals() {
        let ch = ChannelModel::with_rate(5e6);
        let lc = total_delay(Strategy::LocalComputing, &prof(), &ch, &sizes(), Width::W8, 0.0).unwrap();
        assert_eq!(lc.total, 2.25);
        let po = total_delay(Strategy::PureOffloading, &prof(), &ch, &sizes(), Width::W8, 0.0).unwrap();
        assert!((po.total - 0.7).abs() < 1e-15);
        let sc = total_delay(Strategy::SplitComputing, &prof(), &ch, &sizes(), Width::W8, 0.0).unwrap();
        assert!((sc.total - (0.1 + 0.32 + 0.15)).abs() < 1e-15);
        let all_dropped =
            total_delay(Strategy::SplitWithFilter, &prof(), &ch, &sizes(), Width::W8, 1.0).unwrap();
        assert_eq!(all_dropped.total, 0.1 + 0.01);
        let none_dropped =
            total_delay(Strategy::SplitWithFilter, &prof(), &ch, &sizes(), Width::W8, 0.0).unwrap();
        assert!((none_dropped.total - sc.total - 0.01).abs() < 1e-15);
        assert!(matches!(
            total_delay(Strategy::SplitWithFilter, &prof(), &ch, &sizes(), Width::W8, 1.5),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn total_is_sum_of_components() {
        let ch = ChannelModel {
            fixed_latency_s: 0.003,
            downlink_s: 0.001,
            rate_bps: 3.3e6,
        };
        for s in Strategy::ALL {
            for w in [Width::W8, Width::W16, Width::W32] {
                let d = total_delay(s, &prof(), &ch, &sizes(), w, 0.37).unwrap();
                let sum: f64 = d.components().iter().map(|c| c.1).sum();
                assert_eq!(d.total, sum);
            }
        }
    }

    #[test]
    fn strategy_names() {
        assert_eq!("scnf".parse::<Strategy>().unwrap(), Strategy::SplitWithFilter);
        assert!(matches!("XX".parse::<Strategy>(), Err(Error::Argument(_))));
        assert_eq!(
            serde_json::to_string(&Strategy::PureOffloading).unwrap(),
            "\"PO\""
        );
    }

    #[test]
    fn gains() {
        let ch = ChannelModel::with_rate(5e6);
        let g = gain_vs_local(&prof(), &ch, &sizes(), Width::W8, Strategy::LocalComputing, 0.0).unwrap();
        assert_eq!(g, 1.0);
        // free compute and equal payloads: the split path cannot be slower
        let p = ExecutionProfile {
            t_head: 0.0,
            t_tail: 0.0,
            ..prof()
        };
        let s = PayloadSizes {
            bottleneck_bytes_8: sizes().jpeg_bytes,
            ..sizes()
        };
        let g = gain_vs_offload(&p, &ch, &s, Width::W8, Strategy::SplitComputing, 0.0).unwrap();
        assert!(g >= 1.0);
    }

    #[test]
    fn sweep_shape_and_errors() {
        let rates: Vec<f64> = (1..=10).map(|r| r as f64 * 1e6).collect();
        let ch = ChannelModel::with_rate(1.0);
        let rows = sweep(&prof(), &ch, &sizes(), Width::W8, &rates, 0.2).unwrap();
        assert_eq!(rows.len(), 40);
        assert!(matches!(
            sweep(&prof(), &ch, &sizes(), Width::W8, &[], 0.2),
            Err(Error::Argument(_))
        ));
        assert!(sweep(&prof(), &ch, &sizes(), Width::W8, &[2e6, 1e6], 0.2).is_err());
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows[..1]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "rate_mbps,strategy,t_head,t_uplink,t_server,t_filter,total_s,gain_vs_local,gain_vs_offload"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("1.0,LC,2.25,"));
    }

    #[test]
    fn no_crossover_outside_bracket() {
        let ch = ChannelModel::with_rate(1.0);
        let err = crossover_rate(
            &prof(),
            &ch,
            &sizes(),
            Width::W8,
            Strategy::SplitComputing,
            Strategy::PureOffloading,
            (1e3, 1e4),
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoCrossover(_)));
    }

    #[test]
    fn validation() {
        assert!(prof().validate().is_ok());
        let bad = ExecutionProfile {
            t_head: 3.0,
            ..prof()
        };
        assert!(bad.validate().is_err());
        assert!(ChannelModel::with_rate(0.0).validate().is_err());
        let bad = PayloadSizes {
            bottleneck_bytes_16: 100,
            ..sizes()
        };
        assert!(bad.validate().is_err());
    }
}
