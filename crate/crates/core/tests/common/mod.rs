//! Shared fixture helpers for the integration tests: hand-built datasets
//! written straight to disk in the native layout.
#![allow(dead_code)] // not every test binary uses every helper

use std::fs;
use std::path::Path;

use nilm_core::datastore::{format_timestamp, DatasetHandle};

/// One meter's metadata and samples. `site` makes it the site meter;
/// otherwise it is wired as a submeter of meter 1 with the given appliance.
pub struct MeterFixture {
    pub instance: u32,
    pub site: bool,
    pub appliance_type: Option<&'static str>,
    pub sample_period_s: f64,
    pub max_sample_period_s: f64,
    pub samples: Vec<(f64, f64)>,
}

impl MeterFixture {
    pub fn site(instance: u32, samples: Vec<(f64, f64)>) -> Self {
        MeterFixture {
            instance,
            site: true,
            appliance_type: None,
            sample_period_s: 10.0,
            max_sample_period_s: 30.0,
            samples,
        }
    }

    pub fn appliance(
        instance: u32,
        appliance_type: &'static str,
        samples: Vec<(f64, f64)>,
    ) -> Self {
        MeterFixture {
            instance,
            site: false,
            appliance_type: Some(appliance_type),
            sample_period_s: 10.0,
            max_sample_period_s: 30.0,
            samples,
        }
    }
}

/// Writes a single-building dataset and returns an opened handle.
pub fn write_dataset(root: &Path, meters: &[MeterFixture]) -> DatasetHandle {
    fs::write(
        root.join("dataset.json"),
        "{\"name\":\"fixture\",\"format_version\":1}\n",
    )
    .unwrap();
    let bdir = root.join("building1");
    fs::create_dir_all(bdir.join("elec")).unwrap();

    let meter_meta: Vec<serde_json::Value> = meters
        .iter()
        .map(|m| {
            let mut v = serde_json::json!({
                "instance": m.instance,
                "device_model": if m.site { "mains_meter" } else { "plug_meter" },
                "sample_period_s": m.sample_period_s,
                "max_sample_period_s": m.max_sample_period_s,
            });
            if m.site {
                v["site_meter"] = serde_json::json!(true);
            } else {
                v["submeter_of"] = serde_json::json!(1);
                if let Some(t) = m.appliance_type {
                    v["appliances"] = serde_json::json!([{"type": t, "instance": 1}]);
                }
            }
            v
        })
        .collect();
    fs::write(
        bdir.join("metadata.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "instance": 1,
            "timezone": "UTC",
            "meters": meter_meta,
        }))
        .unwrap(),
    )
    .unwrap();

    for m in meters {
        let mut csv = String::from("timestamp,active_power_w\n");
        for &(t, p) in &m.samples {
            csv.push_str(&format!("{},{p}\n", format_timestamp(t)));
        }
        fs::write(
            bdir.join("elec").join(format!("meter{}.csv", m.instance)),
            csv,
        )
        .unwrap();
    }
    nilm_core::datastore::open_dataset(root).unwrap()
}

/// Regularly spaced samples starting at `t0`.
pub fn regular(t0: f64, period: f64, powers: &[f64]) -> Vec<(f64, f64)> {
    powers
        .iter()
        .enumerate()
        .map(|(i, &p)| (t0 + i as f64 * period, p))
        .collect()
}
