//! Out-of-core toolkit for non-intrusive load monitoring.
//!
//! Household power time series are stored chunk-by-chunk on disk and every
//! computation (statistics, disaggregation, metrics) streams through those
//! chunks with mergeable accumulators, so datasets far larger than memory
//! can be processed with bounded residency.

pub mod convert;
pub mod datastore;
pub mod disagg;
pub mod elec;
pub mod error;
pub mod metadata;
pub mod metrics;
pub mod pipeline;
pub mod stats;
pub mod timeframe;

pub use datastore::{Chunk, DatasetHandle, LoadParams, Role, Sample, StreamKey};
pub use error::{Error, Result};
pub use timeframe::TimeFrame;
