//! Merge consistency: every on-disk statistic folded chunk-by-chunk must
//! equal an independent in-memory computation over the whole stream, for
//! any chunking. Counts and sections match exactly; compensated float sums
//! match to 1e-9 relative.

mod common;

use common::{write_dataset, MeterFixture};
use nilm_core::datastore::{LoadParams, Sample, StreamKey};
use nilm_core::elec::{MeterGroup, Resampler};
use nilm_core::stats::{
    DropoutResult, EnergyResult, GoodSectionsResult, HistogramResult, HourlyResult,
};
use nilm_core::DatasetHandle;

const MAX_PERIOD: f64 = 30.0;

fn rel_eq(a: f64, b: f64) {
    let scale = a.abs().max(b.abs()).max(1e-12);
    assert!(
        (a - b).abs() / scale <= 1e-9,
        "relative mismatch: {a} vs {b}"
    );
}

/// 10⁴ irregular samples: base period 10 s with occasional long gaps and a
/// deterministic, wide power distribution.
fn fixture_samples() -> Vec<(f64, f64)> {
    let mut t = 1_577_836_800.0; // 2020-01-01T00:00:00Z
    let mut out = Vec::with_capacity(10_000);
    for i in 0u64..10_000 {
        let h = i.wrapping_mul(2654435761) % 10_000;
        let power = (h % 3000) as f64 / 3.0 + ((h / 7) % 10) as f64 * 0.125;
        out.push((t, power));
        t += match h % 97 {
            0 => 400.0,    // a gap well beyond max_sample_period
            1..=5 => 35.0, // a mild overrun
            _ => 10.0,
        };
    }
    out
}

fn handle_with_fixture(dir: &tempfile::TempDir) -> DatasetHandle {
    write_dataset(dir.path(), &[MeterFixture::site(1, fixture_samples())])
}

/// Folds a statistic over all chunks of the stream at the given chunk size.
fn fold<T>(
    handle: &DatasetHandle,
    chunk_rows: usize,
    mut init: impl FnMut(&nilm_core::Chunk) -> T,
    mut merge: impl FnMut(&mut T, T),
) -> T {
    let mut iter = handle
        .load(
            &StreamKey::raw(1, 1),
            LoadParams::with_chunk_rows(chunk_rows),
        )
        .unwrap();
    let first = iter.next().unwrap().unwrap();
    let mut acc = init(&first);
    for chunk in iter {
        let part = init(&chunk.unwrap());
        merge(&mut acc, part);
    }
    acc
}

#[test]
fn energy_is_chunking_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let handle = handle_with_fixture(&dir);
    let samples = fixture_samples();
    // independent oracle: plain rectangular sum over the raw pairs
    let mut joules = 0.0;
    let mut uptime = 0.0;
    for w in samples.windows(2) {
        let dt = (w[1].0 - w[0].0).min(MAX_PERIOD);
        joules += w[0].1 * dt;
        uptime += dt;
    }
    for chunk_rows in [1, 7, 1000, 1_000_000] {
        let got = fold(
            &handle,
            chunk_rows,
            |c| EnergyResult::from_chunk(c, MAX_PERIOD).unwrap(),
            |a, b| a.merge(&b).unwrap(),
        );
        rel_eq(got.joules.value(), joules);
        rel_eq(got.uptime.value(), uptime);
    }
}

#[test]
fn good_sections_are_chunking_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let handle = handle_with_fixture(&dir);
    let samples = fixture_samples();
    // oracle: single linear scan over the raw timestamps
    let mut runs: Vec<(f64, f64)> = Vec::new();
    for &(t, _) in &samples {
        match runs.last_mut() {
            Some(r) if t - r.1 <= MAX_PERIOD => r.1 = t,
            _ => runs.push((t, t)),
        }
    }
    for chunk_rows in [1, 7, 1000, 1_000_000] {
        let got = fold(
            &handle,
            chunk_rows,
            |c| GoodSectionsResult::from_chunk(c, MAX_PERIOD),
            |a, b| a.merge(&b).unwrap(),
        );
        assert_eq!(got.runs, runs, "chunk_rows={chunk_rows}");
    }
}

#[test]
fn histogram_is_chunking_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let handle = handle_with_fixture(&dir);
    let samples = fixture_samples();
    let width = 10.0;
    let mut counts = std::collections::BTreeMap::new();
    for &(_, p) in &samples {
        *counts.entry((p / width).round() as usize).or_insert(0u64) += 1;
    }
    for chunk_rows in [1, 7, 1000, 1_000_000] {
        let got = fold(
            &handle,
            chunk_rows,
            |c| HistogramResult::from_chunk(c, width),
            |a, b| a.merge(&b).unwrap(),
        );
        assert_eq!(got.total, samples.len() as u64);
        for (bin, &count) in got.counts.iter().enumerate() {
            assert_eq!(count, counts.get(&bin).copied().unwrap_or(0), "bin {bin}");
        }
        rel_eq(got.sum_w.value(), samples.iter().map(|s| s.1).sum());
    }
}

#[test]
fn hourly_profile_is_chunking_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let handle = handle_with_fixture(&dir);
    let reference = fold(
        &handle,
        1_000_000,
        |c| HourlyResult::from_chunk(c, "UTC").unwrap(),
        |a, b| a.merge(&b).unwrap(),
    );
    for chunk_rows in [7, 1000] {
        let got = fold(
            &handle,
            chunk_rows,
            |c| HourlyResult::from_chunk(c, "UTC").unwrap(),
            |a, b| a.merge(&b).unwrap(),
        );
        for h in 0..24 {
            assert_eq!(got.hours[h].counts, reference.hours[h].counts, "hour {h}");
        }
    }
    // sanity: the hour assignment itself, against chrono-free arithmetic (UTC)
    let mut per_hour = [0u64; 24];
    for (t, _) in fixture_samples() {
        per_hour[((t as i64 % 86_400) / 3600) as usize] += 1;
    }
    for (h, (hist, &expect)) in reference.hours.iter().zip(&per_hour).enumerate() {
        assert_eq!(hist.total, expect, "hour {h}");
    }
}

#[test]
fn dropout_is_chunking_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let handle = handle_with_fixture(&dir);
    let samples = fixture_samples();
    let period = 10.0;
    let n = samples.len() as f64;
    let expected = (samples.last().unwrap().0 - samples[0].0) / period + 1.0;
    let oracle = (1.0 - n / expected).clamp(0.0, 1.0);
    for chunk_rows in [1, 7, 1000, 1_000_000] {
        let got = fold(
            &handle,
            chunk_rows,
            |c| DropoutResult::from_chunk(c, period),
            |a, b| a.merge(&b).unwrap(),
        );
        rel_eq(got.rate().unwrap(), oracle);
    }
}

#[test]
fn resampler_matches_in_memory_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let handle = handle_with_fixture(&dir);
    let samples = fixture_samples();
    let period = 60.0;

    // oracle: bucket means; an empty bucket is filled with the most recent
    // raw sample's power while the bucket start stays within the max sample
    // period of that raw sample, otherwise it is a gap
    let mut sums: std::collections::BTreeMap<i64, (f64, u32)> = Default::default();
    let mut last_raw_in: std::collections::BTreeMap<i64, (f64, f64)> = Default::default();
    for &(t, p) in &samples {
        let b = (t / period).floor() as i64;
        let e = sums.entry(b).or_insert((0.0, 0));
        e.0 += p;
        e.1 += 1;
        last_raw_in.insert(b, (t, p)); // samples are sorted, keeps the latest
    }
    let mut oracle: Vec<(i64, f64)> = Vec::new();
    let mut prev: Option<i64> = None;
    for (&b, &(s, n)) in &sums {
        if let Some(pb) = prev {
            let (lt, lp) = last_raw_in[&pb];
            let mut g = pb + 1;
            while g < b && g as f64 * period - lt <= MAX_PERIOD {
                oracle.push((g, lp));
                g += 1;
            }
        }
        oracle.push((b, s / n as f64));
        prev = Some(b);
    }

    for chunk_rows in [7, 1000] {
        let iter = handle
            .load(
                &StreamKey::raw(1, 1),
                LoadParams::with_chunk_rows(chunk_rows),
            )
            .unwrap();
        let got: Vec<(i64, f64)> = Resampler::new(iter, period, MAX_PERIOD)
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(got.len(), oracle.len(), "chunk_rows={chunk_rows}");
        for ((gb, gv), (ob, ov)) in got.iter().zip(&oracle) {
            assert_eq!(gb, ob);
            rel_eq(*gv, *ov);
        }
    }
}

fn two_meter_dataset(
    dir: &tempfile::TempDir,
    mains: Vec<(f64, f64)>,
    fridge: Vec<(f64, f64)>,
    light: Vec<(f64, f64)>,
) -> DatasetHandle {
    write_dataset(
        dir.path(),
        &[
            MeterFixture::site(1, mains),
            MeterFixture::appliance(2, "fridge", fridge),
            MeterFixture::appliance(3, "light", light),
        ],
    )
}

#[test]
fn fully_submetered_home_reports_proportion_one() {
    let dir = tempfile::tempdir().unwrap();
    let ts: Vec<f64> = (0..720).map(|i| i as f64 * 10.0).collect();
    let fridge: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 80.0)).collect();
    let light: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 120.0)).collect();
    let mains: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 200.0)).collect();
    let handle = two_meter_dataset(&dir, mains, fridge, light);
    let group = MeterGroup::of_building(&handle, 1).unwrap();
    let (p, warned) = group.proportion_of_energy_submetered().unwrap();
    rel_eq(p, 1.0);
    assert!(!warned);
}

#[test]
fn unmetered_load_lowers_the_submetered_proportion() {
    let dir = tempfile::tempdir().unwrap();
    let ts: Vec<f64> = (0..720).map(|i| i as f64 * 10.0).collect();
    // submeters carry 120 W of the 200 W mains draw -> 0.6
    let fridge: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 40.0)).collect();
    let light: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 80.0)).collect();
    let mains: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 200.0)).collect();
    let handle = two_meter_dataset(&dir, mains, fridge, light);
    let group = MeterGroup::of_building(&handle, 1).unwrap();
    let (p, _) = group.proportion_of_energy_submetered().unwrap();
    rel_eq(p, 0.6);
}

#[test]
fn idle_submeters_report_proportion_zero() {
    let dir = tempfile::tempdir().unwrap();
    let ts: Vec<f64> = (0..720).map(|i| i as f64 * 10.0).collect();
    let fridge: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 0.0)).collect();
    let light: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 0.0)).collect();
    let mains: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 150.0)).collect();
    let handle = two_meter_dataset(&dir, mains, fridge, light);
    let group = MeterGroup::of_building(&handle, 1).unwrap();
    let (p, _) = group.proportion_of_energy_submetered().unwrap();
    assert_eq!(p, 0.0);
}

#[test]
fn summed_stream_matches_in_memory_sum() {
    let dir = tempfile::tempdir().unwrap();
    let ts: Vec<f64> = (0..2000).map(|i| i as f64 * 10.0).collect();
    let fridge: Vec<(f64, f64)> = ts.iter().map(|&t| (t, (t / 10.0) % 90.0)).collect();
    let light: Vec<(f64, f64)> = ts.iter().map(|&t| (t, (t / 10.0) % 40.0 + 5.0)).collect();
    let mains: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 500.0)).collect();
    let handle = two_meter_dataset(&dir, mains, fridge.clone(), light.clone());
    let group = MeterGroup::of_building(&handle, 1)
        .unwrap()
        .submeters()
        .unwrap();
    let period = 10.0;
    let summed: Vec<Sample> = group
        .load_summed(128, period, None)
        .unwrap()
        .flat_map(|c| c.unwrap().samples)
        .collect();
    assert_eq!(summed.len(), ts.len());
    for (i, s) in summed.iter().enumerate() {
        let bucket = (ts[i] / period).floor() * period;
        assert_eq!(s.timestamp, bucket);
        rel_eq(s.power_w, fridge[i].1 + light[i].1);
    }
}
