use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::apps::SessionReport;
use crate::keymgmt::{KeyStore, Millis};
use crate::photonics::{DriftProcess, IntervalStats, SECONDS_PER_DAY};
use crate::topology::{NodeId, Subnetwork};

/// Formats `x` with six significant digits, trailing zeros dropped.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let s = if mag > 5 {
        let f = 10f64.powi(mag - 5);
        format!("{:.0}", (x / f).round() * f)
    } else {
        let s = format!("{:.*}", (5 - mag) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn fmt_ms(ms: Millis) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Join,
    Calibration,
    Pairing,
    BlockComplete,
    Relay,
    Session,
    Stall,
    Failure,
    Recovery,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Join => "join",
            EventKind::Calibration => "calibration",
            EventKind::Pairing => "pairing",
            EventKind::BlockComplete => "block_complete",
            EventKind::Relay => "relay",
            EventKind::Session => "session",
            EventKind::Stall => "stall",
            EventKind::Failure => "failure",
            EventKind::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time_ms: Millis,
    pub kind: EventKind,
    /// Space-separated `key=value` fields.
    pub detail: String,
}

/// Everything that happened, in time order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<SimEvent>,
}

impl EventLog {
    pub fn push(&mut self, time_ms: Millis, kind: EventKind, detail: String) {
        debug_assert!(self.events.last().is_none_or(|e| e.time_ms <= time_ms));
        self.events.push(SimEvent {
            time_ms,
            kind,
            detail,
        });
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &SimEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_s,kind,detail")?;
        for e in &self.events {
            writeln!(w, "{},{},{}", fmt_ms(e.time_ms), e.kind.label(), e.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRecord {
    pub start_ms: Millis,
    pub duration_ms: Millis,
    pub success: bool,
    /// QBER that triggered it; the baseline for start-up calibrations.
    pub qber_before: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkStats {
    pub transmitter: NodeId,
    pub receiver: NodeId,
    pub switch: Option<NodeId>,
    /// `None` for relay-to-relay links.
    pub subnetwork: Option<Subnetwork>,
    pub fiber_km: f64,
    pub baseline_qber: f64,
    pub window_ms: Millis,
    pub generated_bits: u64,
    /// Time spent distilling completed blocks.
    pub active_ms: Millis,
    pub blocks: u64,
    pub calibrations: Vec<CalibrationRecord>,
}

impl LinkStats {
    /// Average rate while QKD was running; bits per ms is kbps.
    pub fn during_process_kbps(&self) -> Option<f64> {
        (self.active_ms > 0).then(|| self.generated_bits as f64 / self.active_ms as f64)
    }
}

/// One link over one report interval ending at `time_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub time_s: u64,
    pub link: usize,
    pub bits: u64,
    pub active_ms: Millis,
    pub qber: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub transmitter: String,
    pub receiver: String,
    pub kbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub start_s: u64,
    pub link: usize,
    /// Duty-cycled: bits over the whole bucket.
    pub kbps: f64,
    /// Mean over samples taken while the link was distilling.
    pub mean_qber: Option<f64>,
    pub recalibrations: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub log: EventLog,
    pub links: Vec<LinkStats>,
    pub series: Vec<SeriesRow>,
    pub sessions: Vec<SessionReport>,
    pub pools: KeyStore,
    pub end_ms: Millis,
    pub report_interval_s: u64,
    pub start_time_of_day_s: u64,
    pub time_dilation: f64,
    pub names: BTreeMap<NodeId, String>,
}

impl SimOutput {
    fn name(&self, id: NodeId) -> String {
        self.names
            .get(&id)
            .cloned()
            .unwrap_or_else(|| id.to_string())
    }

    /// Index of the link from `transmitter` to `receiver`.
    pub fn link(&self, transmitter: &str, receiver: &str) -> Option<usize> {
        self.links.iter().position(|l| {
            self.name(l.transmitter) == transmitter && self.name(l.receiver) == receiver
        })
    }

    /// During-process averages of every link that ran, by (transmitter, receiver) id.
    pub fn key_rate_table(&self) -> Vec<RateRow> {
        let mut idx: Vec<usize> = (0..self.links.len())
            .filter(|&i| self.links[i].active_ms > 0)
            .collect();
        idx.sort_by_key(|&i| (self.links[i].transmitter, self.links[i].receiver));
        idx.into_iter()
            .map(|i| {
                let l = &self.links[i];
                RateRow {
                    transmitter: self.name(l.transmitter),
                    receiver: self.name(l.receiver),
                    kbps: l.during_process_kbps().unwrap_or(0.0),
                }
            })
            .collect()
    }

    pub fn write_key_rate_table<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "transmitter,receiver,key_rate_kbps")?;
        for r in self.key_rate_table() {
            writeln!(w, "{},{},{}", r.transmitter, r.receiver, fmt_sig6(r.kbps))?;
        }
        Ok(())
    }

    /// Lowest and highest during-process rate per subnetwork, relay-to-relay
    /// links excluded.
    pub fn subnetwork_rate_ranges(&self) -> BTreeMap<&'static str, (f64, f64)> {
        let mut out: BTreeMap<&'static str, (f64, f64)> = BTreeMap::new();
        for l in &self.links {
            let (Some(sub), Some(r)) = (l.subnetwork, l.during_process_kbps()) else {
                continue;
            };
            let e = out.entry(sub.label()).or_insert((r, r));
            e.0 = e.0.min(r);
            e.1 = e.1.max(r);
        }
        out
    }

    /// Duty-cycled rate of each link per report interval.
    pub fn write_series<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_s,transmitter,receiver,key_rate_kbps,qber")?;
        let dt = self.report_interval_s as f64 * 1000.0;
        for r in &self.series {
            let l = &self.links[r.link];
            writeln!(
                w,
                "{},{},{},{},{}",
                r.time_s,
                self.name(l.transmitter),
                self.name(l.receiver),
                fmt_sig6(r.bits as f64 / dt),
                fmt_sig6(r.qber)
            )?;
        }
        Ok(())
    }

    /// Series rows folded into buckets of `bucket_s`, with the number of
    /// recalibrations that started in each.
    pub fn robustness_series(&self, bucket_s: u64) -> Vec<BucketRow> {
        let bucket_s = bucket_s.max(1);
        let end_s = self.end_ms.div_ceil(1000);
        let mut acc: BTreeMap<(u64, usize), (u64, f64, u32)> = BTreeMap::new();
        for r in &self.series {
            let start = r.time_s.saturating_sub(self.report_interval_s) / bucket_s * bucket_s;
            let e = acc.entry((start, r.link)).or_default();
            e.0 += r.bits;
            if r.active_ms > 0 {
                e.1 += r.qber;
                e.2 += 1;
            }
        }
        acc.into_iter()
            .map(|((start, link), (bits, qsum, n))| {
                let span = (start + bucket_s).min(end_s.max(start + 1)) - start;
                let recalibrations = self.links[link]
                    .calibrations
                    .iter()
                    .filter(|c| c.qber_before > self.links[link].baseline_qber)
                    .filter(|c| c.start_ms / 1000 / bucket_s * bucket_s == start)
                    .count();
                BucketRow {
                    start_s: start,
                    link,
                    kbps: bits as f64 / (span as f64 * 1000.0),
                    mean_qber: (n > 0).then(|| qsum / f64::from(n)),
                    recalibrations,
                }
            })
            .collect()
    }

    pub fn write_robustness_series<W: Write>(&self, mut w: W, bucket_s: u64) -> io::Result<()> {
        writeln!(
            w,
            "bucket_start_s,transmitter,receiver,key_rate_kbps,mean_qber,recalibrations"
        )?;
        for r in self.robustness_series(bucket_s) {
            let l = &self.links[r.link];
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.start_s,
                self.name(l.transmitter),
                self.name(l.receiver),
                fmt_sig6(r.kbps),
                r.mean_qber.map(fmt_sig6).unwrap_or_default(),
                r.recalibrations
            )?;
        }
        Ok(())
    }

    pub fn write_sessions<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "a,b,kind,start_s,demanded_bits,consumed_bits,stall_s,completed,relayed_bits"
        )?;
        for s in &self.sessions {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                self.name(s.spec.pair.0),
                self.name(s.spec.pair.1),
                s.spec.kind.label(),
                s.spec.start_s,
                s.demanded_bits,
                s.consumed_bits,
                s.stall_seconds(),
                u8::from(s.completed),
                s.relayed_bits
            )?;
        }
        Ok(())
    }

    /// Environment-clock start times of every calibration of `link`.
    pub fn calibration_times_env(&self, link: usize) -> Vec<f64> {
        self.links[link]
            .calibrations
            .iter()
            .map(|c| self.env_time(c.start_ms))
            .collect()
    }

    pub fn env_time(&self, ms: Millis) -> f64 {
        self.start_time_of_day_s as f64 + ms as f64 / 1000.0 * self.time_dilation
    }

    /// Calibration interval statistics pooled over every link that ran for
    /// the whole run: means weighted by the number of intervals and nights.
    pub fn calibration_interval_stats(&self, drift: &DriftProcess) -> IntervalStats {
        let days = (self.env_time(self.end_ms) / SECONDS_PER_DAY).ceil() as usize;
        let mut pooled = IntervalStats {
            daytime_mean_s: 0.0,
            daytime_intervals: 0,
            overnight_mean_s: 0.0,
            overnight_min_s: f64::INFINITY,
            nights: 0,
        };
        let (mut day_sum, mut night_sum) = (0.0, 0.0);
        for i in 0..self.links.len() {
            if self.links[i].switch.is_some() {
                continue;
            }
            let t = self.calibration_times_env(i);
            let s = crate::photonics::interval_stats(drift, &t, days);
            day_sum += s.daytime_mean_s * s.daytime_intervals as f64;
            night_sum += s.overnight_mean_s * s.nights as f64;
            pooled.daytime_intervals += s.daytime_intervals;
            pooled.nights += s.nights;
            if s.nights > 0 {
                pooled.overnight_min_s = pooled.overnight_min_s.min(s.overnight_min_s);
            }
        }
        if pooled.daytime_intervals > 0 {
            pooled.daytime_mean_s = day_sum / pooled.daytime_intervals as f64;
        }
        if pooled.nights > 0 {
            pooled.overnight_mean_s = night_sum / pooled.nights as f64;
        }
        pooled
    }

    /// Writes every report into `dir`.
    pub fn write_all(&self, dir: &Path, bucket_s: u64) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
        self.log.write_csv(open("events.csv")?)?;
        self.write_key_rate_table(open("key_rates.csv")?)?;
        self.write_series(open("rate_series.csv")?)?;
        self.write_robustness_series(open("robustness.csv")?, bucket_s)?;
        self.write_sessions(open("sessions.csv")?)?;
        self.pools
            .write_ledger_csv(open("ledger.csv")?, |id| self.name(id))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(18.0), "18");
        assert_eq!(fmt_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_sig6(123456.7), "123457");
        assert_eq!(fmt_sig6(12345678.0), "12345700");
        assert_eq!(fmt_sig6(-0.000123456789), "-0.000123457");
        assert_eq!(fmt_sig6(29.6000001), "29.6");
    }
}
