//! Benchmark combinatorial-optimisation disaggregator.
//!
//! Each appliance is modelled as a small set of discrete power states learned
//! from its submeter. For every aggregate sample the state combination whose
//! summed power best matches the aggregate is chosen by exhaustive
//! enumeration, and the per-appliance estimates are streamed to disk.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datastore::{Chunk, DatasetHandle, LoadParams, Sample, StreamKey};
use crate::elec::MeterGroup;
use crate::error::{Error, Result};
use crate::pipeline::{self, ClipNode, GoodSectionsNode, HistogramNode, Node, NodeResult};
use crate::stats::{HistogramResult, DEFAULT_MAX_POWER_W};
use crate::timeframe::TimeFrame;

pub const MODEL_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k_max: usize,
    pub min_state_w: f64,
    pub combination_limit: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k_max: 3,
            min_state_w: 5.0,
            combination_limit: 1_000_000,
        }
    }
}

/// Discrete power states of one appliance, ascending, with 0 W first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceModel {
    pub meter_instance: u32,
    pub label: String,
    pub states_w: Vec<f64>,
}

impl ApplianceModel {
    fn validate(&self) -> Result<()> {
        if self.states_w.is_empty() {
            return Err(Error::Invalid(format!(
                "appliance {}: empty state list",
                self.label
            )));
        }
        if self.states_w[0] != 0.0 {
            return Err(Error::Invalid(format!(
                "appliance {}: first state must be 0 W",
                self.label
            )));
        }
        let ascending = self
            .states_w
            .windows(2)
            .all(|w| w[0] < w[1] && w[1].is_finite());
        if !ascending {
            return Err(Error::Invalid(format!(
                "appliance {}: states must be finite and strictly ascending",
                self.label
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct COModel {
    pub model_version: i64,
    pub appliances: Vec<ApplianceModel>,
    pub trained_on: String,
    pub building: u32,
    pub train_timeframe: TimeFrame,
    pub sample_period_s: f64,
}

impl COModel {
    pub fn combinations(&self) -> u128 {
        self.appliances
            .iter()
            .map(|a| a.states_w.len() as u128)
            .product()
    }

    pub fn validate(&self, limit: u64) -> Result<()> {
        if self.model_version != MODEL_VERSION {
            return Err(Error::Model {
                file: String::new(),
                message: format!("unsupported model_version {}", self.model_version),
            });
        }
        for a in &self.appliances {
            a.validate()?;
        }
        let combos = self.combinations();
        if combos > u128::from(limit) {
            return Err(Error::CombinationLimit {
                combinations: combos,
                limit,
            });
        }
        Ok(())
    }
}

/// Weighted 1-D k-means on 1 W-quantized power values.
///
/// Deterministic: centroids start at the 25/50/75 % quantiles of the nonzero
/// values (evenly spaced quantiles for other k) and run exactly 20 Lloyd
/// iterations. Centroids below `min_state_w` collapse into the 0 state and
/// centroids within 1 W of each other are merged.
pub fn learn_states(hist: &HistogramResult, config: &TrainConfig) -> Vec<f64> {
    let nonzero: Vec<(f64, u64)> = hist
        .counts
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &c)| c > 0)
        .map(|(bin, &c)| (bin as f64 * hist.bin_width_w, c))
        .collect();
    let total: u64 = nonzero.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return vec![0.0];
    }

    let quantile = |q: f64| -> f64 {
        let rank = ((total - 1) as f64 * q).round() as u64;
        let mut seen = 0;
        for &(v, c) in &nonzero {
            seen += c;
            if seen > rank {
                return v;
            }
        }
        nonzero.last().unwrap().0
    };
    let k = config.k_max.max(1);
    let mut centroids: Vec<f64> = (0..k)
        .map(|i| quantile((i + 1) as f64 / (k + 1) as f64))
        .collect();

    for _ in 0..20 {
        let mut sums = vec![0.0f64; k];
        let mut weights = vec![0u64; k];
        for &(v, c) in &nonzero {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, &cen) in centroids.iter().enumerate() {
                let d = (v - cen).abs();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            sums[best] += v * c as f64;
            weights[best] += c;
        }
        for i in 0..k {
            if weights[i] > 0 {
                centroids[i] = sums[i] / weights[i] as f64;
            }
        }
    }

    centroids.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut states = vec![0.0];
    for c in centroids {
        if c < config.min_state_w {
            continue; // merged into the 0 state
        }
        match states.last() {
            Some(&last) if (c - last).abs() <= 1.0 => continue,
            _ => states.push(c),
        }
    }
    states
}

/// Trains per-appliance state models from submeter data within `timeframe`.
pub fn train(
    submeters: &MeterGroup,
    timeframe: TimeFrame,
    sample_period_s: f64,
    config: &TrainConfig,
) -> Result<COModel> {
    if submeters.is_empty() {
        return Err(Error::Invalid(
            "cannot train on an empty meter group".into(),
        ));
    }
    let mut appliances = Vec::new();
    let mut building = 0;
    let mut dataset = String::new();
    for meter in &submeters.meters {
        building = meter.building;
        dataset = meter.handle.meta().name.clone();
        let params = LoadParams {
            sections: Some(vec![timeframe]),
            ..Default::default()
        };
        let chunks = meter.handle.load(&meter.key(), params)?;
        let mut nodes: Vec<Box<dyn Node>> = vec![
            Box::new(ClipNode::new(DEFAULT_MAX_POWER_W)),
            Box::new(GoodSectionsNode::new(meter.meta.max_sample_period_s)),
            Box::new(HistogramNode::new("power_histogram", 1.0)),
        ];
        let results = pipeline::run(&pipeline::source_requirements(), chunks, &mut nodes, None)?;
        let hist = match results.get("power_histogram") {
            Some(NodeResult::Histogram(h)) => h.clone(),
            _ => HistogramResult::new(1.0),
        };
        if hist.total < 100 {
            return Err(Error::Training {
                building: meter.building,
                meter: meter.meta.instance,
                message: format!(
                    "only {} samples in the training timeframe (need >= 100)",
                    hist.total
                ),
            });
        }
        appliances.push(ApplianceModel {
            meter_instance: meter.meta.instance,
            label: meter.meta.label(),
            states_w: learn_states(&hist, config),
        });
    }
    let model = COModel {
        model_version: MODEL_VERSION,
        appliances,
        trained_on: dataset,
        building,
        train_timeframe: timeframe,
        sample_period_s,
    };
    model.validate(config.combination_limit)?;
    Ok(model)
}

/// State combination minimizing `|y - Σ states|` by exhaustive enumeration.
///
/// Ties break toward the lower total assigned power, then the
/// lexicographically smaller index vector.
pub fn disaggregate_sample(y_w: f64, model: &COModel) -> Vec<usize> {
    let y = y_w.max(0.0);
    let n = model.appliances.len();
    let mut indices = vec![0usize; n];
    let mut best = indices.clone();
    let mut best_residual = f64::INFINITY;
    let mut best_total = f64::INFINITY;
    loop {
        let total: f64 = indices
            .iter()
            .zip(&model.appliances)
            .map(|(&c, a)| a.states_w[c])
            .sum();
        let residual = (y - total).abs();
        if residual < best_residual || (residual == best_residual && total < best_total) {
            best_residual = residual;
            best_total = total;
            best.copy_from_slice(&indices);
        }
        // advance mixed-radix counter, rightmost digit fastest (lex order)
        let mut pos = n;
        loop {
            if pos == 0 {
                return best;
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < model.appliances[pos].states_w.len() {
                break;
            }
            indices[pos] = 0;
        }
    }
}

/// Streams the summed mains through the model, writing one estimate stream
/// per appliance under `estimates/<run_id>/`.
pub fn disaggregate(
    mains: &MeterGroup,
    model: &COModel,
    handle: &DatasetHandle,
    run_id: &str,
    chunk_rows: usize,
    sections: Option<Vec<TimeFrame>>,
) -> Result<Vec<StreamKey>> {
    model.validate(u64::MAX)?;
    // estimates land next to the mains being explained, so a model trained
    // on one building can be applied to another
    let building = match mains.meters.first() {
        Some(m) => m.building,
        None => {
            return Err(Error::Invalid(
                "cannot disaggregate an empty meter group".into(),
            ))
        }
    };
    let keys: Vec<StreamKey> = model
        .appliances
        .iter()
        .map(|a| StreamKey::estimate(building, a.meter_instance, run_id))
        .collect();
    for key in &keys {
        ensure_stream(handle, key)?;
    }
    let summed = mains.load_summed(chunk_rows, model.sample_period_s, sections)?;
    for chunk in summed {
        let chunk = chunk?;
        log::info!(
            "disaggregating chunk {} ({} samples)",
            chunk.frame,
            chunk.len()
        );
        let mut per_appliance: Vec<Vec<Sample>> = model
            .appliances
            .iter()
            .map(|_| Vec::with_capacity(chunk.len()))
            .collect();
        for s in &chunk.samples {
            let assignment = disaggregate_sample(s.power_w, model);
            for (i, (&c, a)) in assignment.iter().zip(&model.appliances).enumerate() {
                per_appliance[i].push(Sample::new(s.timestamp, a.states_w[c]));
            }
        }
        for (key, samples) in keys.iter().zip(per_appliance) {
            let est = Chunk::new(chunk.frame, samples);
            handle.append(key, &est)?;
        }
    }
    handle.finalize()?;
    Ok(keys)
}

fn ensure_stream(handle: &DatasetHandle, key: &StreamKey) -> Result<()> {
    let path = handle.stream_path(key);
    if path.is_file() {
        return Ok(());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, format!("{}\n", crate::datastore::CSV_HEADER)).map_err(|e| Error::io(&path, e))
}

pub fn save_model(model: &COModel, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(model).expect("model serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<COModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: COModel = serde_json::from_str(&text).map_err(|e| Error::Model {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    model.validate(u64::MAX).map_err(|e| match e {
        Error::Model { message, .. } | Error::Invalid(message) => Error::Model {
            file: path.display().to_string(),
            message,
        },
        other => other,
    })?;
    Ok(model)
}
