//! Preprocessing and statistic nodes with mergeable result accumulators.
//!
//! Every statistic obeys the merge-consistency law: folding chunk-level
//! results with [`merge`] equals computing on the concatenated data, exactly
//! for counts and sections and within 1e-9 relative for floating sums.

use std::collections::BTreeMap;

use chrono::{TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::datastore::{Chunk, Sample};
use crate::error::{Error, Result};
use crate::timeframe::TimeFrame;

pub const DEFAULT_MAX_POWER_W: f64 = 20_000.0;
pub const DEFAULT_ON_THRESHOLD_W: f64 = 5.0;
pub const DEFAULT_SWITCH_BUCKET_S: f64 = 60.0;
pub const DEFAULT_ENTROPY_BIN_W: f64 = 10.0;

/// Kahan compensated sum, so chunk merges stay within 1e-9 relative of an
/// unchunked sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.add(-other.c);
    }

    pub fn value(&self) -> f64 {
        self.sum - self.c
    }
}

/// Sorted disjoint frames covered by an accumulator. Adjacent frames are
/// coalesced on merge; overlap is a merge error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub frames: Vec<TimeFrame>,
}

impl Coverage {
    pub fn single(frame: TimeFrame) -> Self {
        Coverage {
            frames: vec![frame],
        }
    }

    pub fn start(&self) -> Option<f64> {
        self.frames.first().map(|f| f.start)
    }

    pub fn end(&self) -> Option<f64> {
        self.frames.last().map(|f| f.end)
    }

    /// True when every frame of `self` precedes every frame of `other`.
    pub fn entirely_before(&self, other: &Coverage) -> bool {
        match (self.end(), other.start()) {
            (Some(e), Some(s)) => e <= s,
            _ => true,
        }
    }

    pub fn merge(&mut self, other: &Coverage) -> Result<()> {
        for f in &other.frames {
            for mine in &self.frames {
                if mine.overlaps(f) {
                    return Err(Error::OverlappingFrames { a: *mine, b: *f });
                }
            }
        }
        self.frames.extend(other.frames.iter().copied());
        self.frames
            .sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
        let mut out: Vec<TimeFrame> = Vec::with_capacity(self.frames.len());
        for f in self.frames.drain(..) {
            match out.last_mut() {
                Some(last) if last.end == f.start => last.end = f.end,
                _ => out.push(f),
            }
        }
        self.frames = out;
        Ok(())
    }
}

/// Total-energy accumulator: rectangular integration with gap capping.
///
/// Each interval contributes `p_i * min(t_{i+1} - t_i, max_sample_period_s)`
/// joules. The chunk-bridging interval is carried via the boundary samples so
/// chunking never changes the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyResult {
    pub joules: KahanSum,
    pub uptime: KahanSum,
    pub max_sample_period_s: f64,
    pub first: Option<Sample>,
    pub last: Option<Sample>,
    pub coverage: Coverage,
}

impl EnergyResult {
    pub fn from_chunk(chunk: &Chunk, max_sample_period_s: f64) -> Result<Self> {
        let mut joules = KahanSum::default();
        let mut uptime = KahanSum::default();
        for w in chunk.samples.windows(2) {
            let dt = w[1].timestamp - w[0].timestamp;
            if dt <= 0.0 {
                return Err(Error::Invalid("unsorted samples in energy input".into()));
            }
            let dt = dt.min(max_sample_period_s);
            joules.add(w[0].power_w * dt);
            uptime.add(dt);
        }
        Ok(EnergyResult {
            joules,
            uptime,
            max_sample_period_s,
            first: chunk.samples.first().copied(),
            last: chunk.samples.last().copied(),
            coverage: Coverage::single(chunk.frame),
        })
    }

    pub fn kwh(&self) -> f64 {
        self.joules.value() / 3.6e6
    }

    pub fn uptime_s(&self) -> f64 {
        self.uptime.value()
    }

    pub fn merge(&mut self, other: &EnergyResult) -> Result<()> {
        if (self.max_sample_period_s - other.max_sample_period_s).abs() > f64::EPSILON {
            return Err(Error::Invalid("energy merge with differing periods".into()));
        }
        if other.first.is_none() {
            self.coverage.merge(&other.coverage)?;
            return Ok(());
        }
        if self.first.is_none() {
            let coverage = std::mem::take(&mut self.coverage);
            *self = other.clone();
            self.coverage.merge(&coverage)?;
            return Ok(());
        }
        let (earlier, later) = if self.coverage.entirely_before(&other.coverage) {
            (self.clone(), other.clone())
        } else if other.coverage.entirely_before(&self.coverage) {
            (other.clone(), self.clone())
        } else {
            return Err(Error::Invalid(
                "energy merge requires time-ordered accumulators".into(),
            ));
        };
        let mut joules = earlier.joules;
        joules.merge(&later.joules);
        let mut uptime = earlier.uptime;
        uptime.merge(&later.uptime);
        // bridge across the boundary
        let (a, b) = (earlier.last.unwrap(), later.first.unwrap());
        let dt = (b.timestamp - a.timestamp).min(earlier.max_sample_period_s);
        if dt > 0.0 {
            joules.add(a.power_w * dt);
            uptime.add(dt);
        }
        let mut coverage = earlier.coverage.clone();
        coverage.merge(&later.coverage)?;
        *self = EnergyResult {
            joules,
            uptime,
            max_sample_period_s: earlier.max_sample_period_s,
            first: earlier.first,
            last: later.last,
            coverage,
        };
        Ok(())
    }
}

/// Maximal runs free of sampling gaps longer than the threshold. A run is
/// stored by its first and last sample timestamp; the reported section ends
/// at `last + max_sample_period_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodSectionsResult {
    pub runs: Vec<(f64, f64)>,
    pub max_sample_period_s: f64,
    pub coverage: Coverage,
}

impl GoodSectionsResult {
    pub fn from_chunk(chunk: &Chunk, max_sample_period_s: f64) -> Self {
        let mut runs: Vec<(f64, f64)> = Vec::new();
        for s in &chunk.samples {
            match runs.last_mut() {
                Some(run) if s.timestamp - run.1 <= max_sample_period_s => run.1 = s.timestamp,
                _ => runs.push((s.timestamp, s.timestamp)),
            }
        }
        GoodSectionsResult {
            runs,
            max_sample_period_s,
            coverage: Coverage::single(chunk.frame),
        }
    }

    pub fn sections(&self) -> Vec<TimeFrame> {
        self.runs
            .iter()
            .map(|&(a, b)| TimeFrame::new(a, b + self.max_sample_period_s))
            .collect()
    }

    pub fn merge(&mut self, other: &GoodSectionsResult) -> Result<()> {
        let (mut earlier, later) = if self.coverage.entirely_before(&other.coverage) {
            (self.clone(), other.clone())
        } else if other.coverage.entirely_before(&self.coverage) {
            (other.clone(), self.clone())
        } else {
            return Err(Error::Invalid(
                "good-sections merge requires time-ordered accumulators".into(),
            ));
        };
        let mut runs = std::mem::take(&mut earlier.runs);
        let mut rest = later.runs.as_slice();
        if let (Some(last), Some(first)) = (runs.last_mut(), rest.first()) {
            if first.0 - last.1 <= self.max_sample_period_s {
                last.1 = first.1;
                rest = &rest[1..];
            }
        }
        runs.extend_from_slice(rest);
        let mut coverage = earlier.coverage;
        coverage.merge(&later.coverage)?;
        self.runs = runs;
        self.coverage = coverage;
        Ok(())
    }
}

/// Fixed-width power histogram. Values are quantized to the nearest bin
/// center `round(p / bin_width) * bin_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramResult {
    pub bin_width_w: f64,
    pub counts: Vec<u64>,
    pub total: u64,
    pub sum_w: KahanSum,
    pub coverage: Coverage,
}

impl HistogramResult {
    pub fn new(bin_width_w: f64) -> Self {
        HistogramResult {
            bin_width_w,
            counts: Vec::new(),
            total: 0,
            sum_w: KahanSum::default(),
            coverage: Coverage::default(),
        }
    }

    pub fn bin_of(&self, power_w: f64) -> usize {
        (power_w.max(0.0) / self.bin_width_w).round() as usize
    }

    pub fn record(&mut self, power_w: f64) {
        let bin = self.bin_of(power_w);
        if bin >= self.counts.len() {
            self.counts.resize(bin + 1, 0);
        }
        self.counts[bin] += 1;
        self.total += 1;
        self.sum_w.add(power_w);
    }

    pub fn from_chunk(chunk: &Chunk, bin_width_w: f64) -> Self {
        let mut h = HistogramResult::new(bin_width_w);
        for s in &chunk.samples {
            h.record(s.power_w);
        }
        h.coverage = Coverage::single(chunk.frame);
        h
    }

    pub fn merge(&mut self, other: &HistogramResult) -> Result<()> {
        if (self.bin_width_w - other.bin_width_w).abs() > f64::EPSILON {
            return Err(Error::Invalid("histogram merge with differing bins".into()));
        }
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (i, c) in other.counts.iter().enumerate() {
            self.counts[i] += c;
        }
        self.total += other.total;
        self.sum_w.merge(&other.sum_w);
        self.coverage.merge(&other.coverage)
    }

    /// Exact median over the quantized values; error bounded by half the bin
    /// width. For even counts, the mean of the two middle values.
    pub fn median_w(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::Undefined("median of empty histogram".into()));
        }
        let value = |rank: u64| -> f64 {
            let mut seen = 0;
            for (bin, c) in self.counts.iter().enumerate() {
                seen += c;
                if seen > rank {
                    return bin as f64 * self.bin_width_w;
                }
            }
            unreachable!("rank within total")
        };
        if self.total % 2 == 1 {
            Ok(value(self.total / 2))
        } else {
            Ok((value(self.total / 2 - 1) + value(self.total / 2)) / 2.0)
        }
    }

    pub fn mean_w(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::Undefined("mean of empty histogram".into()));
        }
        Ok(self.sum_w.value() / self.total as f64)
    }

    /// Shannon entropy in bits over the bin frequencies.
    pub fn entropy_bits(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::Undefined("entropy of empty histogram".into()));
        }
        let n = self.total as f64;
        let mut bits = 0.0;
        for &c in &self.counts {
            if c > 0 {
                let f = c as f64 / n;
                bits -= f * f.log2();
            }
        }
        Ok(bits.max(0.0))
    }
}

/// Per-hour-of-day histograms (building local time) for hourly median/mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyResult {
    pub hours: Vec<HistogramResult>,
    pub timezone: String,
    pub coverage: Coverage,
}

impl HourlyResult {
    pub fn new(timezone: &str) -> Self {
        HourlyResult {
            hours: (0..24).map(|_| HistogramResult::new(1.0)).collect(),
            timezone: timezone.to_string(),
            coverage: Coverage::default(),
        }
    }

    pub fn from_chunk(chunk: &Chunk, timezone: &str) -> Result<Self> {
        let tz: chrono_tz::Tz = timezone
            .parse()
            .map_err(|_| Error::Invalid(format!("unknown timezone {timezone:?}")))?;
        let mut r = HourlyResult::new(timezone);
        for s in &chunk.samples {
            let secs = s.timestamp.floor() as i64;
            let hour = Utc
                .timestamp_opt(secs, 0)
                .unwrap()
                .with_timezone(&tz)
                .hour() as usize;
            r.hours[hour].record(s.power_w);
        }
        r.coverage = Coverage::single(chunk.frame);
        Ok(r)
    }

    pub fn merge(&mut self, other: &HourlyResult) -> Result<()> {
        if self.timezone != other.timezone {
            return Err(Error::Invalid("hourly merge across timezones".into()));
        }
        for (a, b) in self.hours.iter_mut().zip(&other.hours) {
            // per-hour coverage is meaningless; track it at top level only
            let mut b = b.clone();
            b.coverage = Coverage::default();
            a.coverage = Coverage::default();
            a.merge(&b)?;
        }
        self.coverage.merge(&other.coverage)
    }

    /// 24-vector of watts; `None` for hours with no samples.
    pub fn per_hour(&self, statistic: HourlyStatistic) -> Vec<Option<f64>> {
        self.hours
            .iter()
            .map(|h| {
                if h.total == 0 {
                    None
                } else {
                    Some(match statistic {
                        HourlyStatistic::Median => h.median_w().unwrap(),
                        HourlyStatistic::Mean => h.mean_w().unwrap(),
                    })
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HourlyStatistic {
    Median,
    Mean,
}

/// Dropout-rate accumulator: expected vs observed sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutResult {
    pub n: u64,
    pub t_first: f64,
    pub t_last: f64,
    pub sample_period_s: f64,
    pub coverage: Coverage,
}

impl DropoutResult {
    pub fn from_chunk(chunk: &Chunk, sample_period_s: f64) -> Self {
        DropoutResult {
            n: chunk.samples.len() as u64,
            t_first: chunk.samples.first().map_or(f64::INFINITY, |s| s.timestamp),
            t_last: chunk
                .samples
                .last()
                .map_or(f64::NEG_INFINITY, |s| s.timestamp),
            sample_period_s,
            coverage: Coverage::single(chunk.frame),
        }
    }

    pub fn merge(&mut self, other: &DropoutResult) -> Result<()> {
        self.n += other.n;
        self.t_first = self.t_first.min(other.t_first);
        self.t_last = self.t_last.max(other.t_last);
        self.coverage.merge(&other.coverage)
    }

    /// `1 - observed / expected`, clamped to [0, 1]. Undefined below two
    /// samples.
    pub fn rate(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::Undefined(
                "dropout rate needs at least two samples".into(),
            ));
        }
        let expected = 1.0 + ((self.t_last - self.t_first) / self.sample_period_s).floor();
        Ok((1.0 - self.n as f64 / expected).clamp(0.0, 1.0))
    }
}

/// Sufficient statistics over aligned sample pairs (for Pearson r).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairStatsResult {
    pub n: u64,
    pub sx: KahanSum,
    pub sy: KahanSum,
    pub sxx: KahanSum,
    pub syy: KahanSum,
    pub sxy: KahanSum,
}

impl PairStatsResult {
    pub fn record(&mut self, x: f64, y: f64) {
        self.n += 1;
        self.sx.add(x);
        self.sy.add(y);
        self.sxx.add(x * x);
        self.syy.add(y * y);
        self.sxy.add(x * y);
    }

    pub fn merge(&mut self, other: &PairStatsResult) {
        self.n += other.n;
        self.sx.merge(&other.sx);
        self.sy.merge(&other.sy);
        self.sxx.merge(&other.sxx);
        self.syy.merge(&other.syy);
        self.sxy.merge(&other.sxy);
    }

    pub fn pearson_r(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::Undefined("correlation needs >= 2 pairs".into()));
        }
        let n = self.n as f64;
        let (sx, sy) = (self.sx.value(), self.sy.value());
        let var_x = n * self.sxx.value() - sx * sx;
        let var_y = n * self.syy.value() - sy * sy;
        if var_x <= 0.0 || var_y <= 0.0 {
            return Err(Error::Undefined(
                "correlation undefined for zero variance".into(),
            ));
        }
        Ok(((n * self.sxy.value() - sx * sy) / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Clamps power to `[0, max_power_w]` and drops NaN rows. Returns the number
/// of NaN rows dropped.
pub fn clip_chunk(chunk: &mut Chunk, max_power_w: f64) -> u64 {
    let before = chunk.samples.len();
    chunk.samples.retain(|s| !s.power_w.is_nan());
    let dropped = (before - chunk.samples.len()) as u64;
    for s in &mut chunk.samples {
        s.power_w = s.power_w.clamp(0.0, max_power_w);
    }
    for s in &mut chunk.look_ahead {
        if !s.power_w.is_nan() {
            s.power_w = s.power_w.clamp(0.0, max_power_w);
        }
    }
    dropped
}

/// Histogram over counts of meters switching on/off per time bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchHistogram {
    /// index = number of meters that changed state in a bucket
    pub buckets_by_switch_count: Vec<u64>,
    pub n_meters: usize,
    pub on_threshold_w: f64,
    pub bucket_s: f64,
}

/// Counts, per time bucket, how many meters' on/off state changed from the
/// previous bucket. Each meter's series must be resampled to the common
/// `bucket_s` grid; a meter missing from a bucket is treated as off.
pub fn simultaneous_switches(
    per_meter_buckets: &[BTreeMap<i64, f64>],
    on_threshold_w: f64,
    bucket_s: f64,
) -> SwitchHistogram {
    let n_meters = per_meter_buckets.len();
    let mut hist = SwitchHistogram {
        buckets_by_switch_count: vec![0; n_meters + 1],
        n_meters,
        on_threshold_w,
        bucket_s,
    };
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    for m in per_meter_buckets {
        if let (Some((&a, _)), Some((&b, _))) = (m.iter().next(), m.iter().next_back()) {
            lo = lo.min(a);
            hi = hi.max(b);
        }
    }
    if lo > hi {
        return hist;
    }
    let mut prev_state = vec![false; n_meters];
    for bucket in lo..=hi {
        let mut switched = 0usize;
        for (i, m) in per_meter_buckets.iter().enumerate() {
            let state = m.get(&bucket).is_some_and(|&p| p > on_threshold_w);
            if bucket > lo && state != prev_state[i] {
                switched += 1;
            }
            prev_state[i] = state;
        }
        if bucket > lo {
            hist.buckets_by_switch_count[switched] += 1;
        }
    }
    hist
}
