use serde::{Deserialize, Serialize};

use crate::profile::{BotProfile, PlannedSend};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub entity_id: String,
    pub send_monotonic_ms: f64,
    pub recv_monotonic_ms: f64,
    pub rtt_proxy_ms: f64,
}

impl LatencySample {
    pub fn new(entity_id: impl Into<String>, send_ms: f64, recv_ms: f64) -> Self {
        LatencySample {
            entity_id: entity_id.into(),
            send_monotonic_ms: send_ms,
            recv_monotonic_ms: recv_ms,
            rtt_proxy_ms: recv_ms - send_ms,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
    pub mean: f64,
}

/// Nearest-rank percentile of an ascending slice; 0 when empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize(samples: &[LatencySample]) -> LatencySummary {
    let mut values: Vec<f64> = samples.iter().map(|s| s.rtt_proxy_ms).collect();
    values.sort_by(f64::total_cmp);
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    LatencySummary {
        p50: percentile(&values, 50.0),
        p95: percentile(&values, 95.0),
        p99: percentile(&values, 99.0),
        max: values.last().copied().unwrap_or(0.0),
        mean,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub bot_count: usize,
    /// Bots that made it into the room.
    pub admitted: usize,
    /// Joins refused with RoomFull.
    pub capacity_rejections: usize,
    pub duration_s: f64,
    pub sent: u64,
    pub received: u64,
    /// Sent updates that no peer observed.
    pub dropped: u64,
    pub latency_ms: LatencySummary,
    pub samples: usize,
    /// Peer updates delivered per second, summed over bots.
    pub throughput_per_s: f64,
    /// Busy share of the room's tick budget over the run, when the server
    /// exposes it.
    pub tick_utilization: Option<f64>,
    pub valid: bool,
    pub errors: Vec<String>,
    pub seed: u64,
    pub profile: BotProfile,
    pub inject_delay_ms: u64,
    /// Every update actually sent, in (bot, seq) order.
    #[serde(skip)]
    pub sent_log: Vec<PlannedSend>,
    #[serde(skip)]
    pub received_by_bot: Vec<u64>,
}

impl RunReport {
    /// Invariants every report must satisfy.
    pub fn sanity(&self) -> Result<(), String> {
        let l = &self.latency_ms;
        if !(l.p50 <= l.p95 && l.p95 <= l.p99 && l.p99 <= l.max) {
            return Err(format!("percentiles out of order: {l:?}"));
        }
        let peers = self.admitted.saturating_sub(1) as u64;
        if self.received > self.sent * peers {
            return Err(format!(
                "received {} exceeds sent {} x peers {}",
                self.received, self.sent, peers
            ));
        }
        if self.dropped > self.sent {
            return Err("dropped exceeds sent".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Fixed-width table, one row per report.
pub fn sweep_table(reports: &[RunReport]) -> String {
    let mut out = String::from(
        "bots  admitted  full  sent    recv     drop  p50ms   p95ms   p99ms   maxms   fanout/s  tick%  ok\n",
    );
    for r in reports {
        let tick = r
            .tick_utilization
            .map(|u| format!("{:5.1}", u * 100.0))
            .unwrap_or_else(|| "    -".into());
        let mark = match (r.valid, r.capacity_rejections) {
            (false, _) => "INVALID",
            (true, 0) => "yes",
            (true, _) => "capacity",
        };
        out.push_str(&format!(
            "{:<5} {:<9} {:<5} {:<7} {:<8} {:<5} {:<7.1} {:<7.1} {:<7.1} {:<7.1} {:<9.1} {} {}\n",
            r.bot_count,
            r.admitted,
            r.capacity_rejections,
            r.sent,
            r.received,
            r.dropped,
            r.latency_ms.p50,
            r.latency_ms.p95,
            r.latency_ms.p99,
            r.latency_ms.max,
            r.throughput_per_s,
            tick,
            mark,
        ));
    }
    out
}
