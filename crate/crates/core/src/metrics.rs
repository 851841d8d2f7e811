//! Disaggregation accuracy metrics, streamed from disk.
//!
//! Estimate and ground-truth streams are resampled onto a shared grid and
//! compared pair-by-pair with mergeable accumulators, so arbitrarily large
//! runs can be evaluated. None of this needs the pipeline: two CSV streams
//! are enough.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datastore::{self, DatasetHandle, IoCounters, LoadParams, Role, StreamKey};
use crate::elec::{AlignedValues, Resampler};
use crate::error::{Error, Result};
use crate::stats::{KahanSum, DEFAULT_ON_THRESHOLD_W};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub period_s: f64,
    pub max_sample_period_s: f64,
    pub on_threshold_w: f64,
    pub chunk_rows: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            period_s: 10.0,
            max_sample_period_s: 30.0,
            on_threshold_w: DEFAULT_ON_THRESHOLD_W,
            chunk_rows: datastore::DEFAULT_CHUNK_ROWS,
        }
    }
}

/// Mergeable accumulator over aligned (estimate, truth) pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairAccumulator {
    pub n: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub abs_err: KahanSum,
    pub sq_err: KahanSum,
    pub est_joules: KahanSum,
    pub truth_joules: KahanSum,
    first: Option<(f64, f64, f64)>,
    last: Option<(f64, f64, f64)>,
}

impl PairAccumulator {
    pub fn record(
        &mut self,
        t: f64,
        estimate_w: f64,
        truth_w: f64,
        on_threshold_w: f64,
        max_sample_period_s: f64,
    ) {
        self.n += 1;
        let est_on = estimate_w > on_threshold_w;
        let truth_on = truth_w > on_threshold_w;
        match (est_on, truth_on) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
        let err = estimate_w - truth_w;
        self.abs_err.add(err.abs());
        self.sq_err.add(err * err);
        // rectangular energy integration with gap capping, like total_energy
        if let Some((pt, pe, ptr)) = self.last {
            let dt = (t - pt).min(max_sample_period_s);
            if dt > 0.0 {
                self.est_joules.add(pe * dt);
                self.truth_joules.add(ptr * dt);
            }
        }
        if self.first.is_none() {
            self.first = Some((t, estimate_w, truth_w));
        }
        self.last = Some((t, estimate_w, truth_w));
    }

    /// Merge with a later accumulator (disjoint, time-ordered).
    pub fn merge(&mut self, other: &PairAccumulator, max_sample_period_s: f64) -> Result<()> {
        let (Some(a_last), Some(b_first)) = (self.last, other.first) else {
            if other.first.is_some() {
                *self = other.clone();
            }
            return Ok(());
        };
        if a_last.0 >= b_first.0 {
            return Err(Error::Invalid(
                "pair accumulators must merge in time order".into(),
            ));
        }
        self.n += other.n;
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
        self.abs_err.merge(&other.abs_err);
        self.sq_err.merge(&other.sq_err);
        self.est_joules.merge(&other.est_joules);
        self.truth_joules.merge(&other.truth_joules);
        let dt = (b_first.0 - a_last.0).min(max_sample_period_s);
        if dt > 0.0 {
            self.est_joules.add(a_last.1 * dt);
            self.truth_joules.add(a_last.2 * dt);
        }
        self.last = other.last;
        Ok(())
    }

    /// Precision, recall and their harmonic mean, with zero-denominator
    /// conventions (empty denominators give 0).
    pub fn f1(&self) -> Result<(f64, f64, f64)> {
        if self.n == 0 {
            return Err(Error::Undefined("f1 over zero pairs".into()));
        }
        let precision = if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let recall = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok((f1, precision, recall))
    }

    pub fn mean_abs_error_w(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::Undefined("MAE over zero pairs".into()));
        }
        Ok(self.abs_err.value() / self.n as f64)
    }

    pub fn rms_error_w(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::Undefined("RMSE over zero pairs".into()));
        }
        Ok((self.sq_err.value() / self.n as f64).sqrt())
    }

    pub fn estimate_kwh(&self) -> f64 {
        self.est_joules.value() / 3.6e6
    }

    pub fn truth_kwh(&self) -> f64 {
        self.truth_joules.value() / 3.6e6
    }

    /// Signed energy error: estimate minus truth.
    pub fn error_total_energy_kwh(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::Undefined("energy error over zero pairs".into()));
        }
        Ok(self.estimate_kwh() - self.truth_kwh())
    }
}

/// Streams two CSV files aligned on the resample grid into an accumulator.
pub fn compare_streams(
    estimate_path: &Path,
    truth_path: &Path,
    config: &MetricsConfig,
) -> Result<PairAccumulator> {
    let counters = Arc::new(IoCounters::default());
    let est = Resampler::new(
        datastore::load_csv(
            estimate_path,
            LoadParams::with_chunk_rows(config.chunk_rows),
            Arc::clone(&counters),
        )?,
        config.period_s,
        config.max_sample_period_s,
    );
    let truth = Resampler::new(
        datastore::load_csv(
            truth_path,
            LoadParams::with_chunk_rows(config.chunk_rows),
            counters,
        )?,
        config.period_s,
        config.max_sample_period_s,
    );
    let mut acc = PairAccumulator::default();
    for pair in AlignedValues::new(est, truth) {
        let (bucket, e, t) = pair?;
        acc.record(
            bucket as f64 * config.period_s,
            e,
            t,
            config.on_threshold_w,
            config.max_sample_period_s,
        );
    }
    Ok(acc)
}

/// Σ over appliances of min(estimated energy fraction, true energy fraction).
pub fn fraction_energy_assigned_correctly(per_appliance: &[(f64, f64)]) -> Result<f64> {
    if per_appliance.is_empty() {
        return Err(Error::Undefined("FEAC over zero appliances".into()));
    }
    let est_total: f64 = per_appliance.iter().map(|(e, _)| e).sum();
    let truth_total: f64 = per_appliance.iter().map(|(_, t)| t).sum();
    if est_total <= 0.0 || truth_total <= 0.0 {
        return Err(Error::Undefined(
            "FEAC undefined when either side has zero total energy".into(),
        ));
    }
    Ok(per_appliance
        .iter()
        .map(|(e, t)| (e / est_total).min(t / truth_total))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceMetrics {
    pub label: String,
    pub n_pairs: u64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub error_total_energy_kwh: f64,
    pub mean_abs_error_w: f64,
    pub rms_error_w: f64,
    pub estimate_kwh: f64,
    pub truth_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingReport {
    pub building: u32,
    pub appliances: BTreeMap<u32, ApplianceMetrics>,
    pub fraction_energy_assigned_correctly: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    Some(Aggregate {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub buildings: Vec<BuildingReport>,
    /// cross-building aggregation, unweighted mean/min/max per metric
    pub aggregate: BTreeMap<String, Aggregate>,
}

/// Evaluates one estimate run against the raw submeter streams of the
/// requested buildings. Buildings whose run is missing get an error entry;
/// the report is still produced for the rest.
pub fn evaluate(
    handle: &DatasetHandle,
    run_id: &str,
    buildings: &[u32],
    config: &MetricsConfig,
) -> Result<MetricReport> {
    let mut reports = Vec::new();
    for &b in buildings {
        reports.push(evaluate_building(handle, run_id, b, config));
    }
    Ok(MetricReport::from_buildings(run_id, reports))
}

impl MetricReport {
    /// Builds the cross-building aggregate rows from per-building reports.
    pub fn from_buildings(run_id: &str, reports: Vec<BuildingReport>) -> MetricReport {
        let mut per_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &reports {
            if r.error.is_some() || r.appliances.is_empty() {
                continue;
            }
            let mean = |f: &dyn Fn(&ApplianceMetrics) -> f64| -> f64 {
                r.appliances.values().map(f).sum::<f64>() / r.appliances.len() as f64
            };
            per_metric.entry("f1").or_default().push(mean(&|m| m.f1));
            per_metric
                .entry("precision")
                .or_default()
                .push(mean(&|m| m.precision));
            per_metric
                .entry("recall")
                .or_default()
                .push(mean(&|m| m.recall));
            per_metric
                .entry("mean_abs_error_w")
                .or_default()
                .push(mean(&|m| m.mean_abs_error_w));
            per_metric
                .entry("rms_error_w")
                .or_default()
                .push(mean(&|m| m.rms_error_w));
            if let Some(feac) = r.fraction_energy_assigned_correctly {
                per_metric
                    .entry("fraction_energy_assigned_correctly")
                    .or_default()
                    .push(feac);
            }
        }
        let aggregate = per_metric
            .into_iter()
            .filter_map(|(k, v)| aggregate(&v).map(|a| (k.to_string(), a)))
            .collect();
        MetricReport {
            run_id: run_id.to_string(),
            buildings: reports,
            aggregate,
        }
    }
}

fn evaluate_building(
    handle: &DatasetHandle,
    run_id: &str,
    building: u32,
    config: &MetricsConfig,
) -> BuildingReport {
    match try_evaluate_building(handle, run_id, building, config) {
        Ok(report) => report,
        Err(e) => BuildingReport {
            building,
            appliances: BTreeMap::new(),
            fraction_energy_assigned_correctly: None,
            error: Some(e.to_string()),
        },
    }
}

fn try_evaluate_building(
    handle: &DatasetHandle,
    run_id: &str,
    building: u32,
    config: &MetricsConfig,
) -> Result<BuildingReport> {
    let bmeta = handle.meta().building(building)?;
    let estimate_meters: Vec<u32> = handle
        .list_streams()?
        .into_iter()
        .filter(|k| {
            k.building == building && matches!(&k.role, Role::Estimate { run_id: r } if r == run_id)
        })
        .map(|k| k.meter)
        .collect();
    if estimate_meters.is_empty() {
        return Err(Error::Invalid(format!(
            "no estimate streams for run {run_id:?} in building {building}"
        )));
    }
    let mut appliances = BTreeMap::new();
    let mut energies = Vec::new();
    for meter in estimate_meters {
        let est_path = handle.stream_path(&StreamKey::estimate(building, meter, run_id));
        let truth_path = handle.stream_path(&StreamKey::raw(building, meter));
        if !truth_path.is_file() {
            return Err(Error::StreamNotFound(StreamKey::raw(building, meter)));
        }
        let acc = compare_streams(&est_path, &truth_path, config)?;
        if acc.n == 0 {
            continue;
        }
        let (f1, precision, recall) = acc.f1()?;
        appliances.insert(
            meter,
            ApplianceMetrics {
                label: bmeta.meter(meter).map(|m| m.label()).unwrap_or_default(),
                n_pairs: acc.n,
                f1,
                precision,
                recall,
                error_total_energy_kwh: acc.error_total_energy_kwh()?,
                mean_abs_error_w: acc.mean_abs_error_w()?,
                rms_error_w: acc.rms_error_w()?,
                estimate_kwh: acc.estimate_kwh(),
                truth_kwh: acc.truth_kwh(),
            },
        );
        energies.push((acc.estimate_kwh(), acc.truth_kwh()));
    }
    let feac = fraction_energy_assigned_correctly(&energies).ok();
    Ok(BuildingReport {
        building,
        appliances,
        fraction_energy_assigned_correctly: feac,
        error: None,
    })
}
