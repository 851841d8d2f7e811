//! Dataset, building, meter and appliance metadata.
//!
//! Meters within a building form a wiring forest whose roots are the site
//! meters. Appliance type names come from a controlled vocabulary that maps
//! each type to one or more categories (a fridge is a "cold" appliance).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: i64 = 1;

const VOCABULARY_JSON: &str = include_str!("resources/appliance_types.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApplianceTypeEntry {
    pub name: String,
    pub categories: BTreeSet<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    pub vocabulary_version: i64,
    pub categories: Vec<String>,
    pub appliance_types: Vec<ApplianceTypeEntry>,
}

impl Vocabulary {
    /// The controlled vocabulary shipped with the toolkit.
    pub fn builtin() -> &'static Vocabulary {
        use std::sync::OnceLock;
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| {
            let v: Vocabulary =
                serde_json::from_str(VOCABULARY_JSON).expect("embedded vocabulary is valid JSON");
            v.validate().expect("embedded vocabulary is consistent");
            v
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cats: BTreeSet<&str> = self.categories.iter().map(|s| s.as_str()).collect();
        let mut seen = BTreeSet::new();
        for entry in &self.appliance_types {
            if !seen.insert(&entry.name) {
                return Err(Error::Invalid(format!(
                    "duplicate appliance type {:?}",
                    entry.name
                )));
            }
            if entry.categories.is_empty() {
                return Err(Error::Invalid(format!(
                    "appliance type {:?} has no categories",
                    entry.name
                )));
            }
            for c in &entry.categories {
                if !cats.contains(c.as_str()) {
                    return Err(Error::Invalid(format!(
                        "appliance type {:?} references unlisted category {:?}",
                        entry.name, c
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, appliance_type: &str) -> Result<&ApplianceTypeEntry> {
        self.appliance_types
            .iter()
            .find(|e| e.name == appliance_type)
            .ok_or_else(|| Error::UnknownApplianceType {
                name: appliance_type.to_string(),
                suggestion: self.nearest(appliance_type),
            })
    }

    /// Category set for an appliance type; errors on unknown types with a
    /// nearest-match suggestion.
    pub fn category_of(&self, appliance_type: &str) -> Result<&BTreeSet<String>> {
        Ok(&self.entry(appliance_type)?.categories)
    }

    fn nearest(&self, name: &str) -> Option<String> {
        self.appliance_types
            .iter()
            .map(|e| (edit_distance(name, &e.name), &e.name))
            .filter(|(d, _)| *d <= 2)
            .min_by_key(|(d, _)| *d)
            .map(|(_, n)| n.clone())
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            cur[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplianceRef {
    #[serde(rename = "type")]
    pub appliance_type: String,
    pub instance: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElecMeterMeta {
    pub instance: u32,
    pub device_model: String,
    pub sample_period_s: f64,
    pub max_sample_period_s: f64,
    #[serde(default)]
    pub site_meter: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submeter_of: Option<u32>,
    #[serde(default)]
    pub appliances: Vec<ApplianceRef>,
    /// Unknown fields are preserved for round-trips but otherwise ignored.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl ElecMeterMeta {
    /// Label used for estimate streams and reports: first appliance type,
    /// else the device model.
    pub fn label(&self) -> String {
        self.appliances
            .first()
            .map(|a| a.appliance_type.clone())
            .unwrap_or_else(|| self.device_model.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildingMeta {
    pub instance: u32,
    pub timezone: String,
    pub meters: Vec<ElecMeterMeta>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl BuildingMeta {
    pub fn meter(&self, instance: u32) -> Result<&ElecMeterMeta> {
        self.meters
            .iter()
            .find(|m| m.instance == instance)
            .ok_or(Error::MeterNotFound {
                building: self.instance,
                meter: instance,
            })
    }

    /// Site meters in instance order. Errors if the building has none.
    pub fn mains_meters(&self) -> Result<Vec<u32>> {
        let mut mains: Vec<u32> = self
            .meters
            .iter()
            .filter(|m| m.site_meter)
            .map(|m| m.instance)
            .collect();
        if mains.is_empty() {
            return Err(Error::NoSiteMeter {
                building: self.instance,
            });
        }
        mains.sort_unstable();
        Ok(mains)
    }

    /// All meters transitively submetered under `meter_instance`, preorder.
    pub fn descendants(&self, meter_instance: u32) -> Result<Vec<u32>> {
        self.meter(meter_instance)?;
        let mut children: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for m in &self.meters {
            if let Some(parent) = m.submeter_of {
                children.entry(parent).or_default().push(m.instance);
            }
        }
        for v in children.values_mut() {
            v.sort_unstable();
        }
        let mut out = Vec::new();
        let mut stack: Vec<u32> = children.get(&meter_instance).cloned().unwrap_or_default();
        stack.reverse();
        while let Some(m) = stack.pop() {
            out.push(m);
            if let Some(kids) = children.get(&m) {
                for k in kids.iter().rev() {
                    stack.push(*k);
                }
            }
        }
        Ok(out)
    }

    fn validate(&self, vocab: &Vocabulary, file: &str) -> Result<()> {
        let mut instances = BTreeSet::new();
        for m in &self.meters {
            if m.instance == 0 || !instances.insert(m.instance) {
                return Err(Error::Metadata {
                    file: file.to_string(),
                    message: format!("meter instance {} invalid or duplicated", m.instance),
                });
            }
            if m.sample_period_s <= 0.0 || m.max_sample_period_s < m.sample_period_s {
                return Err(Error::Metadata {
                    file: file.to_string(),
                    message: format!(
                        "meter {}: require 0 < sample_period_s <= max_sample_period_s",
                        m.instance
                    ),
                });
            }
            if m.site_meter == m.submeter_of.is_some() {
                return Err(Error::Metadata {
                    file: file.to_string(),
                    message: format!(
                        "meter {}: exactly one of site_meter / submeter_of is required",
                        m.instance
                    ),
                });
            }
            for a in &m.appliances {
                vocab.entry(&a.appliance_type)?;
            }
        }
        for m in &self.meters {
            if let Some(parent) = m.submeter_of {
                if !instances.contains(&parent) {
                    return Err(Error::Metadata {
                        file: file.to_string(),
                        message: format!(
                            "meter {} submetered under unknown meter {} (cross-building wiring is not supported)",
                            m.instance, parent
                        ),
                    });
                }
            }
        }
        self.check_forest()?;
        Ok(())
    }

    /// submeter_of edges must form a forest rooted at the site meters.
    fn check_forest(&self) -> Result<()> {
        let parent: HashMap<u32, Option<u32>> = self
            .meters
            .iter()
            .map(|m| (m.instance, m.submeter_of))
            .collect();
        for m in &self.meters {
            let mut seen = vec![m.instance];
            let mut cur = m.submeter_of;
            while let Some(p) = cur {
                if seen.contains(&p) {
                    seen.push(p);
                    let start = seen.iter().position(|&x| x == p).unwrap();
                    let mut cycle: Vec<u32> = seen[start..seen.len() - 1].to_vec();
                    cycle.sort_unstable();
                    return Err(Error::WiringCycle {
                        building: self.instance,
                        cycle,
                    });
                }
                seen.push(p);
                cur = parent.get(&p).copied().flatten();
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub format_version: i64,
    #[serde(skip)]
    pub buildings: Vec<BuildingMeta>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl DatasetMeta {
    pub fn building(&self, instance: u32) -> Result<&BuildingMeta> {
        self.buildings
            .iter()
            .find(|b| b.instance == instance)
            .ok_or_else(|| Error::Invalid(format!("unknown building {instance}")))
    }
}

/// Loads and fully validates dataset metadata from `<root>/dataset.json` and
/// every `<root>/building<N>/metadata.json`. No time-series rows are touched.
pub fn load_metadata(root: &Path) -> Result<DatasetMeta> {
    let ds_path = root.join("dataset.json");
    if !ds_path.is_file() {
        return Err(Error::MissingMetadata(ds_path));
    }
    let text = fs::read_to_string(&ds_path).map_err(|e| Error::io(&ds_path, e))?;
    let mut meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Metadata {
        file: ds_path.display().to_string(),
        message: e.to_string(),
    })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: meta.format_version,
            supported: FORMAT_VERSION,
        });
    }

    let vocab = Vocabulary::builtin();
    let mut buildings = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(root, e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name();
        let Some(n) = name
            .to_str()
            .and_then(|s| s.strip_prefix("building"))
            .and_then(|s| s.parse::<u32>().ok())
        else {
            continue;
        };
        let bpath = entry.path().join("metadata.json");
        if !bpath.is_file() {
            return Err(Error::MissingMetadata(bpath));
        }
        let text = fs::read_to_string(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let bfile = bpath.display().to_string();
        let building: BuildingMeta = serde_json::from_str(&text).map_err(|e| Error::Metadata {
            file: bfile.clone(),
            message: e.to_string(),
        })?;
        if building.instance != n {
            return Err(Error::Metadata {
                file: bfile,
                message: format!(
                    "building instance {} does not match directory building{}",
                    building.instance, n
                ),
            });
        }
        building.validate(vocab, &bfile)?;
        buildings.push(building);
    }
    buildings.sort_by_key(|b| b.instance);
    let mut seen = BTreeSet::new();
    for b in &buildings {
        if !seen.insert(b.instance) {
            return Err(Error::Metadata {
                file: ds_path.display().to_string(),
                message: format!("duplicate building instance {}", b.instance),
            });
        }
    }
    meta.buildings = buildings;
    Ok(meta)
}
