//! Chunk-at-a-time processing pipeline.
//!
//! Nodes declare preconditions (requirements on upstream preprocessing) and
//! postconditions (what they guarantee downstream). Precondition checking
//! walks metadata only, so misconfigured pipelines are rejected before a
//! single time-series row is read.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datastore::{Chunk, DatasetHandle, StreamKey};
use crate::error::{Error, Result};
use crate::stats::{
    clip_chunk, DropoutResult, EnergyResult, GoodSectionsResult, HistogramResult, HourlyResult,
};

/// The closed requirement registry, version 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Requirement {
    Clipped,
    GapsLocated,
    SamplePeriodKnown,
    SortedTimestamps,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub name: String,
    pub preconditions: BTreeSet<Requirement>,
    pub postconditions: BTreeSet<Requirement>,
}

impl NodeSpec {
    pub fn new(name: &str, pre: &[Requirement], post: &[Requirement]) -> Self {
        NodeSpec {
            name: name.to_string(),
            preconditions: pre.iter().copied().collect(),
            postconditions: post.iter().copied().collect(),
        }
    }
}

/// One unmet requirement, reported before any I/O happens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: String,
    pub missing: Vec<Requirement>,
}

/// A statistic result as produced by a pipeline node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeResult {
    Energy(EnergyResult),
    GoodSections(GoodSectionsResult),
    Histogram(HistogramResult),
    Hourly(HourlyResult),
    Dropout(DropoutResult),
    Clip { nan_dropped: u64 },
}

impl NodeResult {
    /// Merges two accumulators of the same statistic over disjoint frames.
    pub fn merge(&mut self, other: &NodeResult) -> Result<()> {
        match (self, other) {
            (NodeResult::Energy(a), NodeResult::Energy(b)) => a.merge(b),
            (NodeResult::GoodSections(a), NodeResult::GoodSections(b)) => a.merge(b),
            (NodeResult::Histogram(a), NodeResult::Histogram(b)) => a.merge(b),
            (NodeResult::Hourly(a), NodeResult::Hourly(b)) => a.merge(b),
            (NodeResult::Dropout(a), NodeResult::Dropout(b)) => a.merge(b),
            (NodeResult::Clip { nan_dropped: a }, NodeResult::Clip { nan_dropped: b }) => {
                *a += b;
                Ok(())
            }
            _ => Err(Error::Invalid(
                "cannot merge results of different statistics".into(),
            )),
        }
    }
}

/// A pipeline stage: transforms chunks, accumulates a result, or both.
pub trait Node: Send {
    fn spec(&self) -> NodeSpec;
    fn process(&mut self, chunk: &mut Chunk) -> Result<()>;
    fn result(&self) -> Option<NodeResult>;
}

/// Clamps power to `[0, max_power_w]` and drops NaN rows. Grants `clipped`.
pub struct ClipNode {
    pub max_power_w: f64,
    nan_dropped: u64,
}

impl ClipNode {
    pub fn new(max_power_w: f64) -> Self {
        ClipNode {
            max_power_w,
            nan_dropped: 0,
        }
    }
}

impl Node for ClipNode {
    fn spec(&self) -> NodeSpec {
        NodeSpec::new("clip", &[], &[Requirement::Clipped])
    }

    fn process(&mut self, chunk: &mut Chunk) -> Result<()> {
        self.nan_dropped += clip_chunk(chunk, self.max_power_w);
        Ok(())
    }

    fn result(&self) -> Option<NodeResult> {
        Some(NodeResult::Clip {
            nan_dropped: self.nan_dropped,
        })
    }
}

pub struct TotalEnergyNode {
    max_sample_period_s: f64,
    acc: Option<EnergyResult>,
}

impl TotalEnergyNode {
    pub fn new(max_sample_period_s: f64) -> Self {
        TotalEnergyNode {
            max_sample_period_s,
            acc: None,
        }
    }
}

impl Node for TotalEnergyNode {
    fn spec(&self) -> NodeSpec {
        NodeSpec::new(
            "total_energy",
            &[Requirement::Clipped, Requirement::SortedTimestamps],
            &[],
        )
    }

    fn process(&mut self, chunk: &mut Chunk) -> Result<()> {
        let r = EnergyResult::from_chunk(chunk, self.max_sample_period_s)?;
        match &mut self.acc {
            Some(acc) => acc.merge(&r)?,
            None => self.acc = Some(r),
        }
        Ok(())
    }

    fn result(&self) -> Option<NodeResult> {
        self.acc.clone().map(NodeResult::Energy)
    }
}

/// Locates gap-free sections; annotates nothing but grants `gaps_located`.
pub struct GoodSectionsNode {
    max_sample_period_s: f64,
    acc: Option<GoodSectionsResult>,
}

impl GoodSectionsNode {
    pub fn new(max_sample_period_s: f64) -> Self {
        GoodSectionsNode {
            max_sample_period_s,
            acc: None,
        }
    }
}

impl Node for GoodSectionsNode {
    fn spec(&self) -> NodeSpec {
        NodeSpec::new(
            "good_sections",
            &[Requirement::SortedTimestamps],
            &[Requirement::GapsLocated],
        )
    }

    fn process(&mut self, chunk: &mut Chunk) -> Result<()> {
        let r = GoodSectionsResult::from_chunk(chunk, self.max_sample_period_s);
        match &mut self.acc {
            Some(acc) => acc.merge(&r)?,
            None => self.acc = Some(r),
        }
        Ok(())
    }

    fn result(&self) -> Option<NodeResult> {
        self.acc.clone().map(NodeResult::GoodSections)
    }
}

pub struct HistogramNode {
    name: String,
    bin_width_w: f64,
    acc: Option<HistogramResult>,
}

impl HistogramNode {
    pub fn new(name: &str, bin_width_w: f64) -> Self {
        HistogramNode {
            name: name.to_string(),
            bin_width_w,
            acc: None,
        }
    }
}

impl Node for HistogramNode {
    fn spec(&self) -> NodeSpec {
        NodeSpec::new(&self.name, &[Requirement::Clipped], &[])
    }

    fn process(&mut self, chunk: &mut Chunk) -> Result<()> {
        let r = HistogramResult::from_chunk(chunk, self.bin_width_w);
        match &mut self.acc {
            Some(acc) => acc.merge(&r)?,
            None => self.acc = Some(r),
        }
        Ok(())
    }

    fn result(&self) -> Option<NodeResult> {
        self.acc.clone().map(NodeResult::Histogram)
    }
}

pub struct HourlyNode {
    timezone: String,
    acc: Option<HourlyResult>,
}

impl HourlyNode {
    pub fn new(timezone: &str) -> Self {
        HourlyNode {
            timezone: timezone.to_string(),
            acc: None,
        }
    }
}

impl Node for HourlyNode {
    fn spec(&self) -> NodeSpec {
        NodeSpec::new("hourly", &[Requirement::Clipped], &[])
    }

    fn process(&mut self, chunk: &mut Chunk) -> Result<()> {
        let r = HourlyResult::from_chunk(chunk, &self.timezone)?;
        match &mut self.acc {
            Some(acc) => acc.merge(&r)?,
            None => self.acc = Some(r),
        }
        Ok(())
    }

    fn result(&self) -> Option<NodeResult> {
        self.acc.clone().map(NodeResult::Hourly)
    }
}

pub struct DropoutNode {
    sample_period_s: f64,
    acc: Option<DropoutResult>,
}

impl DropoutNode {
    pub fn new(sample_period_s: f64) -> Self {
        DropoutNode {
            sample_period_s,
            acc: None,
        }
    }
}

impl Node for DropoutNode {
    fn spec(&self) -> NodeSpec {
        NodeSpec::new(
            "dropout",
            &[
                Requirement::SamplePeriodKnown,
                Requirement::SortedTimestamps,
            ],
            &[],
        )
    }

    fn process(&mut self, chunk: &mut Chunk) -> Result<()> {
        let r = DropoutResult::from_chunk(chunk, self.sample_period_s);
        match &mut self.acc {
            Some(acc) => acc.merge(&r)?,
            None => self.acc = Some(r),
        }
        Ok(())
    }

    fn result(&self) -> Option<NodeResult> {
        self.acc.clone().map(NodeResult::Dropout)
    }
}

/// Requirements the datastore satisfies for every stream it serves.
pub fn source_requirements() -> BTreeSet<Requirement> {
    [
        Requirement::SortedTimestamps,
        Requirement::SamplePeriodKnown,
    ]
    .into_iter()
    .collect()
}

/// Walks nodes in order against metadata only; returns every unmet
/// requirement with the node that needs it. Reads zero rows.
pub fn check_preconditions(
    source_flags: &BTreeSet<Requirement>,
    nodes: &[Box<dyn Node>],
) -> Vec<Violation> {
    let mut effective = source_flags.clone();
    let mut violations = Vec::new();
    for node in nodes {
        let spec = node.spec();
        let missing: Vec<Requirement> = spec
            .preconditions
            .iter()
            .filter(|r| !effective.contains(r))
            .copied()
            .collect();
        if !missing.is_empty() {
            violations.push(Violation {
                node: spec.name.clone(),
                missing,
            });
        }
        effective.extend(spec.postconditions.iter().copied());
    }
    violations
}

/// Runs chunks through `nodes` in order, optionally appending every processed
/// chunk to `sink`. Preconditions are re-checked first; a violating pipeline
/// never touches the source iterator.
pub fn run(
    source_flags: &BTreeSet<Requirement>,
    source: impl Iterator<Item = Result<Chunk>>,
    nodes: &mut [Box<dyn Node>],
    sink: Option<(&DatasetHandle, &StreamKey)>,
) -> Result<BTreeMap<String, NodeResult>> {
    let violations = check_preconditions(source_flags, nodes);
    if !violations.is_empty() {
        return Err(Error::Preconditions(
            serde_json::to_string(&violations).unwrap(),
        ));
    }
    for chunk in source {
        let mut chunk = chunk?;
        for node in nodes.iter_mut() {
            node.process(&mut chunk).map_err(|e| {
                Error::Invalid(format!(
                    "node {} failed on chunk {}: {e}",
                    node.spec().name,
                    chunk.frame
                ))
            })?;
        }
        if let Some((handle, key)) = sink {
            handle.append(key, &chunk)?;
        }
    }
    let mut results = BTreeMap::new();
    for node in nodes.iter() {
        if let Some(r) = node.result() {
            results.insert(node.spec().name, r);
        }
    }
    Ok(results)
}
