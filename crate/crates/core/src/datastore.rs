//! Chunked on-disk storage of power time series.
//!
//! A dataset is a directory tree of CSV streams plus JSON metadata. Opening a
//! dataset reads metadata only; time-series rows are pulled lazily, one chunk
//! at a time, with instrumented counters so bounded residency is testable.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::{self, DatasetMeta};
use crate::timeframe::{validate_sections, TimeFrame};

pub const CSV_HEADER: &str = "timestamp,active_power_w";
pub const DEFAULT_CHUNK_ROWS: usize = 100_000;

/// One power reading: UTC timestamp in seconds (fractional allowed), active
/// power in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: f64,
    pub power_w: f64,
}

impl Sample {
    pub fn new(timestamp: f64, power_w: f64) -> Self {
        Sample { timestamp, power_w }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Raw,
    Estimate { run_id: String },
}

/// Identifies one on-disk stream.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub building: u32,
    pub meter: u32,
    pub role: Role,
}

impl StreamKey {
    pub fn raw(building: u32, meter: u32) -> Self {
        StreamKey {
            building,
            meter,
            role: Role::Raw,
        }
    }

    pub fn estimate(building: u32, meter: u32, run_id: &str) -> Self {
        StreamKey {
            building,
            meter,
            role: Role::Estimate {
                run_id: run_id.to_string(),
            },
        }
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.role {
            Role::Raw => write!(f, "building{}/elec/meter{}", self.building, self.meter),
            Role::Estimate { run_id } => write!(
                f,
                "building{}/estimates/{}/meter{}",
                self.building, run_id, self.meter
            ),
        }
    }
}

/// Process-wide I/O instrumentation for one dataset handle.
#[derive(Debug, Default)]
pub struct IoCounters {
    pub rows_read: AtomicU64,
    pub alive_chunks: AtomicU64,
    pub peak_alive_chunks: AtomicU64,
    pub resident_samples: AtomicU64,
    pub peak_resident_samples: AtomicU64,
}

impl IoCounters {
    fn chunk_born(self: &Arc<Self>, samples: u64) -> ResidencyGuard {
        let alive = self.alive_chunks.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_alive_chunks.fetch_max(alive, Ordering::SeqCst);
        let res = self.resident_samples.fetch_add(samples, Ordering::SeqCst) + samples;
        self.peak_resident_samples.fetch_max(res, Ordering::SeqCst);
        ResidencyGuard {
            counters: Arc::clone(self),
            samples,
        }
    }
}

/// Decrements residency counters when the owning chunk is dropped.
#[derive(Debug)]
pub struct ResidencyGuard {
    counters: Arc<IoCounters>,
    samples: u64,
}

impl Drop for ResidencyGuard {
    fn drop(&mut self) {
        self.counters.alive_chunks.fetch_sub(1, Ordering::SeqCst);
        self.counters
            .resident_samples
            .fetch_sub(self.samples, Ordering::SeqCst);
    }
}

/// A contiguous, time-sorted slice of one stream plus its covering frame.
///
/// `look_ahead` is a bounded preview of the rows after `frame`; it is never
/// part of any aggregate result.
#[derive(Debug)]
pub struct Chunk {
    pub frame: TimeFrame,
    pub samples: Vec<Sample>,
    pub look_ahead: Vec<Sample>,
    #[allow(dead_code)] // held for its Drop: decrements residency counters
    residency: Option<ResidencyGuard>,
}

impl Chunk {
    pub fn new(frame: TimeFrame, samples: Vec<Sample>) -> Self {
        Chunk {
            frame,
            samples,
            look_ahead: Vec::new(),
            residency: None,
        }
    }

    /// Builds a chunk whose frame tightly covers its samples.
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        assert!(!samples.is_empty(), "cannot frame an empty chunk");
        let start = samples[0].timestamp;
        let end = samples[samples.len() - 1].timestamp + 1e-6;
        Chunk::new(TimeFrame::new(start, end), samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn format_timestamp(t: f64) -> String {
    let secs = t.floor() as i64;
    let nanos = ((t - t.floor()) * 1e9).round() as u32;
    let dt: DateTime<Utc> = Utc.timestamp_opt(secs, nanos).unwrap();
    if nanos == 0 {
        dt.to_rfc3339_opts(SecondsFormat::Secs, true)
    } else {
        dt.to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

pub fn parse_timestamp(s: &str) -> std::result::Result<f64, String> {
    let dt = DateTime::parse_from_rfc3339(s).map_err(|e| format!("bad timestamp {s:?}: {e}"))?;
    Ok(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) / 1e9)
}

fn format_power(p: f64) -> String {
    // up to 3 fractional digits, trailing zeros trimmed
    let rounded = (p * 1000.0).round() / 1000.0;
    let mut s = format!("{rounded:.3}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

/// Load parameters for [`DatasetHandle::load`].
#[derive(Debug, Clone)]
pub struct LoadParams {
    pub chunk_rows: usize,
    pub sections: Option<Vec<TimeFrame>>,
    pub look_ahead_rows: usize,
}

impl Default for LoadParams {
    fn default() -> Self {
        LoadParams {
            chunk_rows: DEFAULT_CHUNK_ROWS,
            sections: None,
            look_ahead_rows: 0,
        }
    }
}

impl LoadParams {
    pub fn with_chunk_rows(chunk_rows: usize) -> Self {
        LoadParams {
            chunk_rows,
            ..Default::default()
        }
    }
}

struct WriterState {
    writer: BufWriter<File>,
    frame_end: f64,
    path: PathBuf,
}

struct HandleInner {
    root: PathBuf,
    meta: DatasetMeta,
    counters: Arc<IoCounters>,
    writers: Mutex<std::collections::HashMap<StreamKey, WriterState>>,
}

/// Open dataset. Metadata is in memory; time series stay on disk.
#[derive(Clone)]
pub struct DatasetHandle {
    inner: Arc<HandleInner>,
}

pub fn open_dataset(path: impl AsRef<Path>) -> Result<DatasetHandle> {
    let root = path.as_ref().to_path_buf();
    let meta = metadata::load_metadata(&root)?;
    Ok(DatasetHandle {
        inner: Arc::new(HandleInner {
            root,
            meta,
            counters: Arc::new(IoCounters::default()),
            writers: Mutex::new(std::collections::HashMap::new()),
        }),
    })
}

impl DatasetHandle {
    pub fn root(&self) -> &Path {
        &self.inner.root
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.inner.meta
    }

    pub fn counters(&self) -> &Arc<IoCounters> {
        &self.inner.counters
    }

    pub fn rows_read(&self) -> u64 {
        self.inner.counters.rows_read.load(Ordering::SeqCst)
    }

    pub fn stream_path(&self, key: &StreamKey) -> PathBuf {
        let b = self.inner.root.join(format!("building{}", key.building));
        match &key.role {
            Role::Raw => b.join("elec").join(format!("meter{}.csv", key.meter)),
            Role::Estimate { run_id } => b
                .join("estimates")
                .join(run_id)
                .join(format!("meter{}.csv", key.meter)),
        }
    }

    /// Lazily iterate a stream in chunks of at most `chunk_rows` samples.
    ///
    /// `sections`, when present, restricts output to those frames; rows
    /// outside are skipped during streaming without buffering.
    pub fn load(&self, key: &StreamKey, params: LoadParams) -> Result<ChunkIter> {
        let path = self.stream_path(key);
        if !path.is_file() {
            return Err(Error::StreamNotFound(key.clone()));
        }
        load_csv(&path, params, Arc::clone(&self.inner.counters))
    }

    /// Appends a chunk to a stream, creating it on first write.
    /// Writes must be monotonic in time.
    pub fn append(&self, key: &StreamKey, chunk: &Chunk) -> Result<()> {
        let mut writers = self.inner.writers.lock().unwrap();
        if !writers.contains_key(key) {
            let path = self.stream_path(key);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let existed = path.is_file();
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            let mut writer = BufWriter::new(file);
            let mut frame_end = f64::NEG_INFINITY;
            if !existed {
                writeln!(writer, "{CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
            } else {
                frame_end = last_timestamp_of(&path)?.map_or(f64::NEG_INFINITY, |t| t + 1e-6);
            }
            writers.insert(
                key.clone(),
                WriterState {
                    writer,
                    frame_end,
                    path,
                },
            );
        }
        let state = writers.get_mut(key).unwrap();
        if chunk.frame.start < state.frame_end {
            return Err(Error::OutOfOrderAppend {
                key: key.clone(),
                start: chunk.frame.start,
                stream_end: state.frame_end,
            });
        }
        for s in &chunk.samples {
            writeln!(
                state.writer,
                "{},{}",
                format_timestamp(s.timestamp),
                format_power(s.power_w)
            )
            .map_err(|e| Error::io(&state.path, e))?;
        }
        state.frame_end = chunk.frame.end;
        Ok(())
    }

    /// Flushes and closes all open writers, making appended data durable.
    pub fn finalize(&self) -> Result<()> {
        let mut writers = self.inner.writers.lock().unwrap();
        for (_, state) in writers.drain() {
            let mut w = state.writer;
            w.flush().map_err(|e| Error::io(&state.path, e))?;
        }
        Ok(())
    }

    /// Covering frame of a stream from its first and last row, without
    /// scanning the body (the tail is read from the end of the file).
    pub fn stream_timeframe(&self, key: &StreamKey) -> Result<Option<TimeFrame>> {
        let path = self.stream_path(key);
        if !path.is_file() {
            return Err(Error::StreamNotFound(key.clone()));
        }
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::io(&path, e))?; // header
        line.clear();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::io(&path, e))?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            return Ok(None);
        }
        let first = parse_row(trimmed).map_err(|message| Error::Parse {
            file: path.display().to_string(),
            line: 2,
            message,
        })?;

        // scan a bounded tail window for the last complete row
        use std::io::{Read, Seek, SeekFrom};
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let window = 4096.min(len);
        file.seek(SeekFrom::End(-(window as i64)))
            .map_err(|e| Error::io(&path, e))?;
        let mut tail = String::new();
        file.read_to_string(&mut tail)
            .map_err(|e| Error::io(&path, e))?;
        let last = tail
            .lines()
            .rev()
            .find_map(|l| parse_row(l.trim_end()).ok())
            .unwrap_or(first);
        Ok(Some(TimeFrame::new(first.timestamp, last.timestamp + 1e-6)))
    }

    /// All streams on disk, sorted by (building, meter, role).
    pub fn list_streams(&self) -> Result<Vec<StreamKey>> {
        let mut keys = Vec::new();
        for building in &self.inner.meta.buildings {
            let bdir = self
                .inner
                .root
                .join(format!("building{}", building.instance));
            let elec = bdir.join("elec");
            if elec.is_dir() {
                for entry in fs::read_dir(&elec).map_err(|e| Error::io(&elec, e))? {
                    let entry = entry.map_err(|e| Error::io(&elec, e))?;
                    if let Some(m) = parse_meter_file(&entry.file_name()) {
                        keys.push(StreamKey::raw(building.instance, m));
                    }
                }
            }
            let est = bdir.join("estimates");
            if est.is_dir() {
                for run in fs::read_dir(&est).map_err(|e| Error::io(&est, e))? {
                    let run = run.map_err(|e| Error::io(&est, e))?;
                    if !run.path().is_dir() {
                        continue;
                    }
                    let run_id = run.file_name().to_string_lossy().into_owned();
                    for entry in fs::read_dir(run.path()).map_err(|e| Error::io(run.path(), e))? {
                        let entry = entry.map_err(|e| Error::io(run.path(), e))?;
                        if let Some(m) = parse_meter_file(&entry.file_name()) {
                            keys.push(StreamKey::estimate(building.instance, m, &run_id));
                        }
                    }
                }
            }
        }
        keys.sort();
        Ok(keys)
    }
}

/// Streams a bare CSV file in chunks, independent of any dataset handle.
/// This is what lets the metrics functions run on hand-made streams.
pub fn load_csv(path: &Path, params: LoadParams, counters: Arc<IoCounters>) -> Result<ChunkIter> {
    if let Some(sections) = &params.sections {
        if !validate_sections(sections) {
            return Err(Error::Invalid(
                "sections must be sorted and pairwise disjoint".into(),
            ));
        }
    }
    assert!(params.chunk_rows >= 1, "chunk_rows must be >= 1");
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::io(path, e))?;
    if header.trim_end() != CSV_HEADER {
        return Err(Error::Parse {
            file: path.display().to_string(),
            line: 1,
            message: format!("expected header {CSV_HEADER:?}"),
        });
    }
    Ok(ChunkIter {
        reader,
        path: path.to_path_buf(),
        line: 1,
        params,
        counters,
        pending: std::collections::VecDeque::new(),
        eof: false,
        next_frame_start: None,
        last_timestamp: f64::NEG_INFINITY,
        done: false,
    })
}

fn parse_meter_file(name: &std::ffi::OsStr) -> Option<u32> {
    let name = name.to_str()?;
    name.strip_prefix("meter")?
        .strip_suffix(".csv")?
        .parse()
        .ok()
}

fn last_timestamp_of(path: &Path) -> Result<Option<f64>> {
    // only used when re-opening an existing stream for append; streams are
    // small at that point in practice, so a simple scan is fine
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut last = None;
    for line in reader.lines().skip(1) {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some((ts, _)) = line.split_once(',') {
            if let Ok(t) = parse_timestamp(ts) {
                last = Some(t);
            }
        }
    }
    Ok(last)
}

/// Streaming chunk iterator. Holds at most one chunk's worth of rows plus
/// the look-ahead buffer.
pub struct ChunkIter {
    reader: BufReader<File>,
    path: PathBuf,
    line: u64,
    params: LoadParams,
    counters: Arc<IoCounters>,
    /// rows already read (look-ahead from the previous chunk)
    pending: std::collections::VecDeque<Sample>,
    eof: bool,
    next_frame_start: Option<f64>,
    last_timestamp: f64,
    done: bool,
}

impl ChunkIter {
    /// Reads the next in-section row, or None at end of stream.
    fn next_row(&mut self) -> Result<Option<Sample>> {
        if let Some(s) = self.pending.pop_front() {
            return Ok(Some(s));
        }
        let mut buf = String::new();
        while !self.eof {
            buf.clear();
            let n = self
                .reader
                .read_line(&mut buf)
                .map_err(|e| Error::io(&self.path, e))?;
            if n == 0 {
                self.eof = true;
                return Ok(None);
            }
            self.line += 1;
            let complete = buf.ends_with('\n');
            let trimmed = buf.trim_end_matches(['\n', '\r']);
            if trimmed.is_empty() {
                continue;
            }
            let parsed = parse_row(trimmed);
            let sample = match parsed {
                Ok(s) => s,
                Err(msg) => {
                    if !complete {
                        // partial trailing row, e.g. after a crash: truncate
                        log::warn!(
                            "{}: truncated partial trailing row at line {}",
                            self.path.display(),
                            self.line
                        );
                        self.eof = true;
                        return Ok(None);
                    }
                    return Err(Error::Parse {
                        file: self.path.display().to_string(),
                        line: self.line,
                        message: msg,
                    });
                }
            };
            self.counters.rows_read.fetch_add(1, Ordering::SeqCst);
            if let Some(sections) = &self.params.sections {
                if !sections.iter().any(|s| s.contains(sample.timestamp)) {
                    continue;
                }
            }
            return Ok(Some(sample));
        }
        Ok(None)
    }

    fn build_chunk(&mut self) -> Result<Option<Chunk>> {
        let mut samples = Vec::with_capacity(self.params.chunk_rows.min(1 << 16));
        while samples.len() < self.params.chunk_rows {
            match self.next_row()? {
                Some(s) => {
                    if s.timestamp <= self.last_timestamp {
                        return Err(Error::Parse {
                            file: self.path.display().to_string(),
                            line: self.line,
                            message: format!(
                                "timestamps not strictly increasing at {}",
                                format_timestamp(s.timestamp)
                            ),
                        });
                    }
                    self.last_timestamp = s.timestamp;
                    samples.push(s);
                }
                None => break,
            }
        }
        if samples.is_empty() {
            self.done = true;
            return Ok(None);
        }
        // look-ahead rows are read once and replayed as the next chunk's rows
        let mut look_ahead = Vec::new();
        for _ in 0..self.params.look_ahead_rows {
            match self.next_row()? {
                Some(s) => look_ahead.push(s),
                None => break,
            }
        }
        for s in look_ahead.iter().rev() {
            self.pending.push_front(*s);
        }

        let start = self.next_frame_start.unwrap_or(samples[0].timestamp);
        let end = if let Some(next) = self.pending.front() {
            next.timestamp
        } else if self.peek_has_more()? {
            self.pending.front().unwrap().timestamp
        } else {
            samples[samples.len() - 1].timestamp + 1e-6
        };
        self.next_frame_start = Some(end);
        let guard = self
            .counters
            .chunk_born((samples.len() + look_ahead.len()) as u64);
        Ok(Some(Chunk {
            frame: TimeFrame::new(start, end),
            samples,
            look_ahead,
            residency: Some(guard),
        }))
    }

    /// Peeks one row ahead (into `pending`) to decide the closing frame edge.
    fn peek_has_more(&mut self) -> Result<bool> {
        match self.next_row()? {
            Some(s) => {
                self.pending.push_front(s);
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

fn parse_row(line: &str) -> std::result::Result<Sample, String> {
    let (ts, pw) = line
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated fields, got {line:?}"))?;
    let timestamp = parse_timestamp(ts)?;
    let power_w: f64 = pw
        .trim()
        .parse()
        .map_err(|e| format!("bad power {pw:?}: {e}"))?;
    if !timestamp.is_finite() {
        return Err("non-finite timestamp".into());
    }
    Ok(Sample { timestamp, power_w })
}

impl Iterator for ChunkIter {
    type Item = Result<Chunk>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        self.build_chunk().transpose()
    }
}
