//! Single meters and meter groups, usable interchangeably.
//!
//! A `MeterGroup` supports metadata-driven selection, aligned summation of
//! several meters onto a common grid, and meter-level energy statistics, all
//! streaming chunk-by-chunk.

use std::collections::BTreeMap;

use crate::datastore::{Chunk, DatasetHandle, LoadParams, Sample, StreamKey};
use crate::error::{Error, Result};
use crate::metadata::{ElecMeterMeta, Vocabulary};
use crate::pipeline::{self, ClipNode, Node, NodeResult, TotalEnergyNode};
use crate::stats::{PairStatsResult, SwitchHistogram, DEFAULT_MAX_POWER_W};
use crate::timeframe::TimeFrame;

/// A single metered channel, bound to its on-disk stream.
#[derive(Clone)]
pub struct ElecMeter {
    pub handle: DatasetHandle,
    pub building: u32,
    pub meta: ElecMeterMeta,
}

impl ElecMeter {
    pub fn key(&self) -> StreamKey {
        StreamKey::raw(self.building, self.meta.instance)
    }
}

/// Ordered collection of meters from one dataset handle.
#[derive(Clone)]
pub struct MeterGroup {
    pub meters: Vec<ElecMeter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyPath {
    ApplianceType,
    Category,
    DeviceModel,
    SiteMeter,
    Building,
}

pub const VALID_PROPERTY_PATHS: &[&str] =
    &["type", "category", "device_model", "site_meter", "building"];

/// One conjunct: property must equal (or be in) the value set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub path: PropertyPath,
    pub values: Vec<String>,
}

/// Conjunction of predicates over metadata properties.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelectionQuery {
    pub predicates: Vec<Predicate>,
}

impl SelectionQuery {
    /// Parses the canonical textual form: `category=lighting,type=fridge`.
    pub fn parse(text: &str) -> Result<SelectionQuery> {
        let mut predicates = Vec::new();
        for part in text.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Query(format!("expected key=value, got {part:?}")))?;
            let path = match key.trim() {
                "type" => PropertyPath::ApplianceType,
                "category" => PropertyPath::Category,
                "device_model" => PropertyPath::DeviceModel,
                "site_meter" => PropertyPath::SiteMeter,
                "building" => PropertyPath::Building,
                other => {
                    return Err(Error::Query(format!(
                        "unknown property {other:?}; valid paths: {VALID_PROPERTY_PATHS:?}"
                    )))
                }
            };
            predicates.push(Predicate {
                path,
                values: vec![value.trim().to_string()],
            });
        }
        Ok(SelectionQuery { predicates })
    }

    fn matches(&self, meter: &ElecMeter) -> Result<bool> {
        let vocab = Vocabulary::builtin();
        for p in &self.predicates {
            let hit = match p.path {
                PropertyPath::ApplianceType => meter
                    .meta
                    .appliances
                    .iter()
                    .any(|a| p.values.contains(&a.appliance_type)),
                PropertyPath::Category => {
                    let mut any = false;
                    for a in &meter.meta.appliances {
                        let cats = vocab.category_of(&a.appliance_type)?;
                        if p.values.iter().any(|v| cats.contains(v)) {
                            any = true;
                            break;
                        }
                    }
                    any
                }
                PropertyPath::DeviceModel => p.values.contains(&meter.meta.device_model),
                PropertyPath::SiteMeter => p.values.contains(&meter.meta.site_meter.to_string()),
                PropertyPath::Building => p.values.contains(&meter.building.to_string()),
            };
            if !hit {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Per-meter energy summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterEnergy {
    pub kwh: f64,
    pub uptime_s: f64,
    /// true when the stream held no samples (energy is zero by convention)
    pub empty_stream: bool,
}

impl MeterGroup {
    /// All raw meters of one building.
    pub fn of_building(handle: &DatasetHandle, building: u32) -> Result<MeterGroup> {
        let b = handle.meta().building(building)?;
        Ok(MeterGroup {
            meters: b
                .meters
                .iter()
                .map(|m| ElecMeter {
                    handle: handle.clone(),
                    building,
                    meta: m.clone(),
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.meters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meters.is_empty()
    }

    /// Subgroup matching every predicate, original order preserved.
    pub fn select(&self, query: &SelectionQuery) -> Result<MeterGroup> {
        let mut meters = Vec::new();
        for m in &self.meters {
            if query.matches(m)? {
                meters.push(m.clone());
            }
        }
        Ok(MeterGroup { meters })
    }

    fn single_building(&self) -> Result<u32> {
        let mut buildings = self.meters.iter().map(|m| m.building);
        let Some(first) = buildings.next() else {
            return Err(Error::Invalid("empty meter group".into()));
        };
        if buildings.any(|b| b != first) {
            return Err(Error::Invalid(
                "operation requires a single-building group".into(),
            ));
        }
        Ok(first)
    }

    /// Site meters of the (single) building spanned by this group.
    pub fn mains(&self) -> Result<MeterGroup> {
        self.single_building()?;
        let mut meters: Vec<ElecMeter> = self
            .meters
            .iter()
            .filter(|m| m.meta.site_meter)
            .cloned()
            .collect();
        meters.sort_by_key(|m| m.meta.instance);
        Ok(MeterGroup { meters })
    }

    /// Direct children of the site meters (depth-1 submeters).
    pub fn submeters(&self) -> Result<MeterGroup> {
        self.single_building()?;
        let mains: Vec<u32> = self
            .meters
            .iter()
            .filter(|m| m.meta.site_meter)
            .map(|m| m.meta.instance)
            .collect();
        let meters = self
            .meters
            .iter()
            .filter(|m| m.meta.submeter_of.is_some_and(|p| mains.contains(&p)))
            .cloned()
            .collect();
        Ok(MeterGroup { meters })
    }

    /// Streams the aligned sum of all meters, resampled to `period_s`.
    ///
    /// Output timestamps sit on the shared epoch-aligned grid; a grid slot is
    /// emitted only when every meter has a (possibly forward-filled) value.
    pub fn load_summed(
        &self,
        chunk_rows: usize,
        period_s: f64,
        sections: Option<Vec<TimeFrame>>,
    ) -> Result<SummedChunkIter> {
        if self.meters.is_empty() {
            return Err(Error::Invalid("cannot sum an empty meter group".into()));
        }
        let mut streams = Vec::new();
        for m in &self.meters {
            let params = LoadParams {
                chunk_rows,
                sections: sections.clone(),
                look_ahead_rows: 0,
            };
            let chunks = m.handle.load(&m.key(), params)?;
            streams.push(Resampler::new(chunks, period_s, m.meta.max_sample_period_s).peekable());
        }
        Ok(SummedChunkIter {
            streams,
            period_s,
            chunk_rows,
            done: false,
        })
    }

    /// Per-meter total energy (via the Clip + TotalEnergy pipeline) and the
    /// group sum, in instance order.
    pub fn total_energy(&self) -> Result<(Vec<(u32, MeterEnergy)>, f64)> {
        let mut per_meter = Vec::new();
        let mut total = 0.0;
        for m in &self.meters {
            let e = meter_total_energy(m)?;
            total += e.kwh;
            per_meter.push((m.meta.instance, e));
        }
        Ok((per_meter, total))
    }

    /// Σ submeter energy / Σ mains energy, clamped to [0, 1].
    pub fn proportion_of_energy_submetered(&self) -> Result<(f64, bool)> {
        let (_, mains_kwh) = self.mains()?.total_energy()?;
        if mains_kwh <= 0.0 {
            return Err(Error::Undefined(
                "proportion undefined: mains energy is zero".into(),
            ));
        }
        let subs = self.submeters()?;
        if subs.is_empty() {
            return Ok((0.0, false));
        }
        let (_, sub_kwh) = subs.total_energy()?;
        let ratio = sub_kwh / mains_kwh;
        if ratio > 1.0 {
            log::warn!("submetered energy exceeds mains ({ratio:.3}); clamping to 1");
        }
        Ok((ratio.clamp(0.0, 1.0), ratio > 1.0))
    }

    /// Energy per appliance category; a meter with appliances in several
    /// categories contributes its full energy to each.
    pub fn energy_per_category(&self) -> Result<BTreeMap<String, f64>> {
        let vocab = Vocabulary::builtin();
        let mut out = BTreeMap::new();
        for m in &self.meters {
            let mut cats: Vec<String> = Vec::new();
            for a in &m.meta.appliances {
                for c in vocab.category_of(&a.appliance_type)? {
                    if !cats.contains(c) {
                        cats.push(c.clone());
                    }
                }
            }
            if cats.is_empty() {
                continue;
            }
            let e = meter_total_energy(m)?;
            for c in cats {
                *out.entry(c).or_insert(0.0) += e.kwh;
            }
        }
        Ok(out)
    }

    /// Histogram of per-bucket simultaneous on/off switches across the
    /// group's meters, streamed on a dense `bucket_s` grid.
    pub fn switch_histogram(
        &self,
        on_threshold_w: f64,
        bucket_s: f64,
        chunk_rows: usize,
    ) -> Result<SwitchHistogram> {
        let n_meters = self.meters.len();
        let mut streams = Vec::new();
        for m in &self.meters {
            let chunks = m
                .handle
                .load(&m.key(), LoadParams::with_chunk_rows(chunk_rows))?;
            streams.push(Resampler::new(chunks, bucket_s, m.meta.max_sample_period_s).peekable());
        }
        let mut hist = SwitchHistogram {
            buckets_by_switch_count: vec![0; n_meters + 1],
            n_meters,
            on_threshold_w,
            bucket_s,
        };
        // find first and walk densely; a meter absent from a bucket is off
        let mut cur: Option<i64> = None;
        for s in streams.iter_mut() {
            if let Some(Ok((b, _))) = s.peek() {
                cur = Some(cur.map_or(*b, |c: i64| c.min(*b)));
            }
        }
        let Some(mut bucket) = cur else {
            return Ok(hist);
        };
        let mut prev_state = vec![false; n_meters];
        let mut first = true;
        loop {
            let mut any_left = false;
            let mut switched = 0usize;
            for (i, s) in streams.iter_mut().enumerate() {
                let mut value: Option<f64> = None;
                while let Some(item) = s.peek() {
                    match item {
                        Ok((b, _)) if *b < bucket => {
                            s.next();
                        }
                        Ok((b, v)) if *b == bucket => {
                            value = Some(*v);
                            s.next();
                            break;
                        }
                        Ok(_) => break,
                        Err(_) => return Err(s.next().unwrap().unwrap_err()),
                    }
                }
                if s.peek().is_some() {
                    any_left = true;
                }
                let state = value.is_some_and(|p| p > on_threshold_w);
                if !first && state != prev_state[i] {
                    switched += 1;
                }
                prev_state[i] = state;
            }
            if !first {
                hist.buckets_by_switch_count[switched] += 1;
            }
            first = false;
            if !any_left {
                break;
            }
            bucket += 1;
        }
        Ok(hist)
    }
}

/// Total energy of one meter through the standard Clip + TotalEnergy
/// pipeline. Empty streams yield zero energy flagged `empty_stream`.
pub fn meter_total_energy(meter: &ElecMeter) -> Result<MeterEnergy> {
    let chunks = meter.handle.load(&meter.key(), LoadParams::default())?;
    let mut nodes: Vec<Box<dyn Node>> = vec![
        Box::new(ClipNode::new(DEFAULT_MAX_POWER_W)),
        Box::new(TotalEnergyNode::new(meter.meta.max_sample_period_s)),
    ];
    let results = pipeline::run(&pipeline::source_requirements(), chunks, &mut nodes, None)?;
    match results.get("total_energy") {
        Some(NodeResult::Energy(e)) => Ok(MeterEnergy {
            kwh: e.kwh(),
            uptime_s: e.uptime_s(),
            empty_stream: false,
        }),
        _ => {
            log::warn!(
                "meter {} stream is empty; energy is zero",
                meter.meta.instance
            );
            Ok(MeterEnergy {
                kwh: 0.0,
                uptime_s: 0.0,
                empty_stream: true,
            })
        }
    }
}

/// Streaming resampler onto the epoch-aligned grid `bucket * period_s`.
///
/// Bucket value = mean of raw samples in `[t, t + period_s)`; empty buckets
/// are forward-filled from the last raw sample for up to
/// `max_sample_period_s`, beyond that they are gaps (absent).
pub struct Resampler<I: Iterator<Item = Result<Chunk>>> {
    samples: FlattenSamples<I>,
    period_s: f64,
    max_sample_period_s: f64,
    pending: Option<Sample>,
    last_raw: Option<Sample>,
    bucket: Option<i64>,
    done: bool,
}

struct FlattenSamples<I: Iterator<Item = Result<Chunk>>> {
    chunks: I,
    current: Option<(Chunk, usize)>,
}

impl<I: Iterator<Item = Result<Chunk>>> FlattenSamples<I> {
    fn next_sample(&mut self) -> Result<Option<Sample>> {
        loop {
            if let Some((chunk, idx)) = &mut self.current {
                if *idx < chunk.samples.len() {
                    let s = chunk.samples[*idx];
                    *idx += 1;
                    return Ok(Some(s));
                }
                self.current = None;
            }
            match self.chunks.next() {
                Some(Ok(chunk)) => self.current = Some((chunk, 0)),
                Some(Err(e)) => return Err(e),
                None => return Ok(None),
            }
        }
    }
}

impl<I: Iterator<Item = Result<Chunk>>> Resampler<I> {
    pub fn new(chunks: I, period_s: f64, max_sample_period_s: f64) -> Self {
        Resampler {
            samples: FlattenSamples {
                chunks,
                current: None,
            },
            period_s,
            max_sample_period_s,
            pending: None,
            last_raw: None,
            bucket: None,
            done: false,
        }
    }

    fn take_sample(&mut self) -> Result<Option<Sample>> {
        if let Some(s) = self.pending.take() {
            return Ok(Some(s));
        }
        self.samples.next_sample()
    }

    fn next_value(&mut self) -> Result<Option<(i64, f64)>> {
        loop {
            if self.done {
                return Ok(None);
            }
            let bucket = match self.bucket {
                Some(b) => b,
                None => match self.take_sample()? {
                    Some(s) => {
                        let b = (s.timestamp / self.period_s).floor() as i64;
                        self.pending = Some(s);
                        self.bucket = Some(b);
                        b
                    }
                    None => {
                        self.done = true;
                        return Ok(None);
                    }
                },
            };
            let start = bucket as f64 * self.period_s;
            let end = start + self.period_s;
            let mut sum = 0.0;
            let mut n = 0u64;
            loop {
                match self.take_sample()? {
                    Some(s) if s.timestamp < end => {
                        sum += s.power_w;
                        n += 1;
                        self.last_raw = Some(s);
                    }
                    Some(s) => {
                        self.pending = Some(s);
                        break;
                    }
                    None => {
                        if n == 0 {
                            self.done = true;
                            return Ok(None);
                        }
                        self.done = true;
                        return Ok(Some((bucket, sum / n as f64)));
                    }
                }
            }
            self.bucket = Some(bucket + 1);
            if n > 0 {
                return Ok(Some((bucket, sum / n as f64)));
            }
            // empty bucket: forward-fill from the last raw sample if fresh
            if let Some(last) = self.last_raw {
                if start - last.timestamp <= self.max_sample_period_s {
                    return Ok(Some((bucket, last.power_w)));
                }
            }
            // gap: skip ahead to the bucket of the next raw sample
            if let Some(s) = self.pending {
                self.bucket = Some((s.timestamp / self.period_s).floor() as i64);
            }
        }
    }
}

impl<I: Iterator<Item = Result<Chunk>>> Iterator for Resampler<I> {
    type Item = Result<(i64, f64)>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_value().transpose()
    }
}

type MeterResampler = std::iter::Peekable<Resampler<crate::datastore::ChunkIter>>;

/// Chunked iterator over the aligned sum of several resampled meters.
pub struct SummedChunkIter {
    streams: Vec<MeterResampler>,
    period_s: f64,
    chunk_rows: usize,
    done: bool,
}

impl SummedChunkIter {
    /// Next grid slot where every meter has a value, as a summed sample.
    fn next_summed(&mut self) -> Result<Option<Sample>> {
        'outer: loop {
            // candidate bucket: max of current heads (sum needs all meters)
            let mut candidate: Option<i64> = None;
            for s in self.streams.iter_mut() {
                match s.peek() {
                    Some(Ok((b, _))) => {
                        candidate = Some(candidate.map_or(*b, |c: i64| c.max(*b)));
                    }
                    Some(Err(_)) => return Err(s.next().unwrap().unwrap_err()),
                    None => return Ok(None),
                }
            }
            let candidate = candidate.expect("nonempty group");
            let mut sum = 0.0;
            for s in self.streams.iter_mut() {
                loop {
                    match s.peek() {
                        Some(Ok((b, _))) if *b < candidate => {
                            s.next();
                        }
                        Some(Ok((b, v))) if *b == candidate => {
                            sum += *v;
                            break;
                        }
                        Some(Ok(_)) => continue 'outer, // this meter gapped; try later bucket
                        Some(Err(_)) => return Err(s.next().unwrap().unwrap_err()),
                        None => return Ok(None),
                    }
                }
            }
            for s in self.streams.iter_mut() {
                s.next(); // consume the candidate bucket everywhere
            }
            return Ok(Some(Sample::new(candidate as f64 * self.period_s, sum)));
        }
    }

    fn next_chunk(&mut self) -> Result<Option<Chunk>> {
        let mut samples = Vec::new();
        while samples.len() < self.chunk_rows {
            match self.next_summed()? {
                Some(s) => samples.push(s),
                None => break,
            }
        }
        if samples.is_empty() {
            self.done = true;
            return Ok(None);
        }
        let start = samples[0].timestamp;
        let end = samples[samples.len() - 1].timestamp + self.period_s;
        Ok(Some(Chunk::new(TimeFrame::new(start, end), samples)))
    }
}

impl Iterator for SummedChunkIter {
    type Item = Result<Chunk>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        self.next_chunk().transpose()
    }
}

/// Pearson correlation between two meters on a shared resample grid.
pub fn correlation(a: &ElecMeter, b: &ElecMeter, period_s: f64, chunk_rows: usize) -> Result<f64> {
    let ra = Resampler::new(
        a.handle
            .load(&a.key(), LoadParams::with_chunk_rows(chunk_rows))?,
        period_s,
        a.meta.max_sample_period_s,
    );
    let rb = Resampler::new(
        b.handle
            .load(&b.key(), LoadParams::with_chunk_rows(chunk_rows))?,
        period_s,
        b.meta.max_sample_period_s,
    );
    let mut stats = PairStatsResult::default();
    for pair in AlignedValues::new(ra, rb) {
        let (_, x, y) = pair?;
        stats.record(x, y);
    }
    stats.pearson_r()
}

/// Merge-join of two resampled streams on their common grid buckets.
pub struct AlignedValues<A, B>
where
    A: Iterator<Item = Result<(i64, f64)>>,
    B: Iterator<Item = Result<(i64, f64)>>,
{
    a: std::iter::Peekable<A>,
    b: std::iter::Peekable<B>,
}

impl<A, B> AlignedValues<A, B>
where
    A: Iterator<Item = Result<(i64, f64)>>,
    B: Iterator<Item = Result<(i64, f64)>>,
{
    pub fn new(a: A, b: B) -> Self {
        AlignedValues {
            a: a.peekable(),
            b: b.peekable(),
        }
    }
}

impl<A, B> Iterator for AlignedValues<A, B>
where
    A: Iterator<Item = Result<(i64, f64)>>,
    B: Iterator<Item = Result<(i64, f64)>>,
{
    type Item = Result<(i64, f64, f64)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let ka = match self.a.peek()? {
                Ok((k, _)) => *k,
                Err(_) => return Some(Err(self.a.next().unwrap().unwrap_err())),
            };
            let kb = match self.b.peek()? {
                Ok((k, _)) => *k,
                Err(_) => return Some(Err(self.b.next().unwrap().unwrap_err())),
            };
            match ka.cmp(&kb) {
                std::cmp::Ordering::Less => {
                    self.a.next();
                }
                std::cmp::Ordering::Greater => {
                    self.b.next();
                }
                std::cmp::Ordering::Equal => {
                    let (_, va) = self.a.next().unwrap().unwrap();
                    let (_, vb) = self.b.next().unwrap().unwrap();
                    return Some(Ok((ka, va, vb)));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunks_of(samples: Vec<Sample>) -> Vec<Result<Chunk>> {
        vec![Ok(Chunk::from_samples(samples))]
    }

    #[test]
    fn resample_means_within_bucket() {
        let samples = vec![
            Sample::new(0.0, 10.0),
            Sample::new(1.0, 20.0),
            Sample::new(2.0, 30.0),
            Sample::new(3.0, 40.0),
        ];
        let r: Vec<(i64, f64)> = Resampler::new(chunks_of(samples).into_iter(), 2.0, 10.0)
            .map(|x| x.unwrap())
            .collect();
        assert_eq!(r, vec![(0, 15.0), (1, 35.0)]);
    }

    #[test]
    fn resample_forward_fill_bounded() {
        // samples at 0 and 100 s, period 10 s, ffill bound 30 s
        let samples = vec![Sample::new(0.0, 50.0), Sample::new(100.0, 70.0)];
        let r: Vec<(i64, f64)> = Resampler::new(chunks_of(samples).into_iter(), 10.0, 30.0)
            .map(|x| x.unwrap())
            .collect();
        // buckets 1..3 forward-filled (10,20,30 s after sample 0), then gap
        assert_eq!(
            r,
            vec![(0, 50.0), (1, 50.0), (2, 50.0), (3, 50.0), (10, 70.0)]
        );
    }

    #[test]
    fn aligned_values_inner_join() {
        let a = vec![Ok((0i64, 1.0)), Ok((1, 2.0)), Ok((3, 3.0))];
        let b = vec![Ok((1i64, 10.0)), Ok((2, 20.0)), Ok((3, 30.0))];
        let pairs: Vec<(i64, f64, f64)> = AlignedValues::new(a.into_iter(), b.into_iter())
            .map(|x| x.unwrap())
            .collect();
        assert_eq!(pairs, vec![(1, 2.0, 10.0), (3, 3.0, 30.0)]);
    }

    #[test]
    fn query_parse_and_errors() {
        let q = SelectionQuery::parse("category=lighting,building=2").unwrap();
        assert_eq!(q.predicates.len(), 2);
        assert!(matches!(
            SelectionQuery::parse("colour=red"),
            Err(Error::Query(_))
        ));
    }
}
