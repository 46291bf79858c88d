//! Raw episode records and their delimited-text formats.
//!
//! Two comma-separated UTF-8 files with a mandatory header row:
//!
//! * episode headers: `episode_id,age,gender,ethnicity,care_unit,discharge_time,outcome_time,label`
//!   (`care_unit` and `outcome_time` may be empty, `label` is `0` or `1`);
//! * measurements: `episode_id,hour_offset,feature_name,value`.
//!
//! Malformed records are rejected individually with a diagnostic; loading
//! continues with the remaining records.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::registry::FeatureRegistry;
use crate::error::{Error, Result};

pub const EPISODE_HEADER: [&str; 8] = [
    "episode_id",
    "age",
    "gender",
    "ethnicity",
    "care_unit",
    "discharge_time",
    "outcome_time",
    "label",
];

pub const MEASUREMENT_HEADER: [&str; 4] = ["episode_id", "hour_offset", "feature_name", "value"];

/// Ages at or below this are excluded.
pub const MIN_AGE_EXCLUSIVE: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub hour_offset: f64,
    pub feature: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEpisode {
    pub episode_id: String,
    pub age: f64,
    pub gender: String,
    pub ethnicity: String,
    pub care_unit: Option<String>,
    pub measurements: Vec<Measurement>,
    pub outcome_time: Option<f64>,
    pub discharge_time: f64,
    pub label: bool,
}

impl RawEpisode {
    /// Patient identifier: everything before the last `-` of the episode id.
    pub fn patient_id(&self) -> &str {
        match self.episode_id.rfind('-') {
            Some(i) if i > 0 => &self.episode_id[..i],
            _ => &self.episode_id,
        }
    }

    /// Earliest of outcome and discharge.
    pub fn end_time(&self) -> f64 {
        match self.outcome_time {
            Some(t) => t.min(self.discharge_time),
            None => self.discharge_time,
        }
    }

    /// Record-level problems, empty when the episode is well formed.
    pub fn validate(&self, registry: &FeatureRegistry) -> Vec<String> {
        let mut issues = Vec::new();
        if self.episode_id.is_empty() {
            issues.push("empty episode_id".to_string());
        }
        if !self.age.is_finite() || self.age < 0.0 {
            issues.push(format!("invalid age {}", self.age));
        }
        if !self.discharge_time.is_finite() || self.discharge_time <= 0.0 {
            issues.push(format!("discharge_time must be > 0, got {}", self.discharge_time));
        }
        if let Some(t) = self.outcome_time {
            if !t.is_finite() || t < 0.0 {
                issues.push(format!("invalid outcome_time {t}"));
            }
            if !self.label {
                issues.push("outcome_time present but label is 0".to_string());
            }
        }
        for m in &self.measurements {
            if let Some(reason) = measurement_issue(m, registry) {
                issues.push(reason);
            }
        }
        issues
    }
}

fn measurement_issue(m: &Measurement, registry: &FeatureRegistry) -> Option<String> {
    if !m.hour_offset.is_finite() || m.hour_offset < 0.0 {
        return Some(format!("negative or non-finite hour_offset {}", m.hour_offset));
    }
    if !registry.contains(&m.feature) {
        return Some(format!("feature `{}` not in registry", m.feature));
    }
    if !m.value.is_finite() {
        return Some(format!("non-finite value for `{}`", m.feature));
    }
    None
}

/// A rejected input record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordIssue {
    pub source: String,
    /// 1-based line number in the source file, 0 when not file-backed.
    pub line: u64,
    pub episode_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub episodes: Vec<RawEpisode>,
    pub rejects: Vec<RecordIssue>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeRow {
    episode_id: String,
    age: String,
    gender: String,
    ethnicity: String,
    care_unit: String,
    discharge_time: String,
    outcome_time: String,
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementRow {
    episode_id: String,
    hour_offset: String,
    feature_name: String,
    value: String,
}

fn parse_f64(field: &str, name: &str) -> std::result::Result<f64, String> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("cannot parse {name} `{field}`"))
}

fn check_header(reader_headers: &csv::StringRecord, expected: &[&str], source: &str) -> Result<()> {
    let got: Vec<&str> = reader_headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::invalid(format!(
            "{source}: header must be `{}`, got `{}`",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

impl EpisodeRow {
    fn parse(self) -> std::result::Result<RawEpisode, String> {
        let label = match self.label.trim() {
            "0" => false,
            "1" => true,
            other => return Err(format!("label must be 0 or 1, got `{other}`")),
        };
        let outcome_time = match self.outcome_time.trim() {
            "" => None,
            s => Some(parse_f64(s, "outcome_time")?),
        };
        let care_unit = match self.care_unit.trim() {
            "" => None,
            s => Some(s.to_string()),
        };
        Ok(RawEpisode {
            episode_id: self.episode_id.trim().to_string(),
            age: parse_f64(&self.age, "age")?,
            gender: self.gender.trim().to_string(),
            ethnicity: self.ethnicity.trim().to_string(),
            care_unit,
            measurements: Vec::new(),
            outcome_time,
            discharge_time: parse_f64(&self.discharge_time, "discharge_time")?,
            label,
        })
    }
}

/// Reads episode headers and measurements, validating every record.
pub fn read_raw_episodes<R1: Read, R2: Read>(
    episodes: R1,
    measurements: R2,
    registry: &FeatureRegistry,
) -> Result<LoadOutcome> {
    let mut out = LoadOutcome::default();
    let mut index: HashMap<String, usize> = HashMap::new();

    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(episodes);
    check_header(rdr.headers()?, &EPISODE_HEADER, "episodes")?;
    for (i, row) in rdr.deserialize::<EpisodeRow>().enumerate() {
        let line = i as u64 + 2;
        let reject = |id: Option<String>, reason: String| RecordIssue {
            source: "episodes".into(),
            line,
            episode_id: id,
            reason,
        };
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(reject(None, e.to_string()));
                continue;
            }
        };
        let id = row.episode_id.trim().to_string();
        match row.parse() {
            Err(reason) => out.rejects.push(reject(Some(id), reason)),
            Ok(ep) => {
                let issues = ep.validate(registry);
                if !issues.is_empty() {
                    out.rejects.push(reject(Some(id), issues.join("; ")));
                } else if index.contains_key(&ep.episode_id) {
                    out.rejects.push(reject(Some(id), "duplicate episode_id".into()));
                } else {
                    index.insert(ep.episode_id.clone(), out.episodes.len());
                    out.episodes.push(ep);
                }
            }
        }
    }

    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(measurements);
    check_header(rdr.headers()?, &MEASUREMENT_HEADER, "measurements")?;
    for (i, row) in rdr.deserialize::<MeasurementRow>().enumerate() {
        let line = i as u64 + 2;
        let reject = |id: Option<String>, reason: String| RecordIssue {
            source: "measurements".into(),
            line,
            episode_id: id,
            reason,
        };
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(reject(None, e.to_string()));
                continue;
            }
        };
        let id = row.episode_id.trim().to_string();
        let Some(&slot) = index.get(&id) else {
            out.rejects.push(reject(Some(id), "measurement for unknown or rejected episode".into()));
            continue;
        };
        let parsed = parse_f64(&row.hour_offset, "hour_offset").and_then(|t| {
            parse_f64(&row.value, "value").map(|v| Measurement {
                hour_offset: t,
                feature: row.feature_name.trim().to_string(),
                value: v,
            })
        });
        match parsed {
            Err(reason) => out.rejects.push(reject(Some(id), reason)),
            Ok(m) => match measurement_issue(&m, registry) {
                Some(reason) => out.rejects.push(reject(Some(id), reason)),
                None => out.episodes[slot].measurements.push(m),
            },
        }
    }
    Ok(out)
}

pub fn read_raw_files(
    episodes_path: &Path,
    measurements_path: &Path,
    registry: &FeatureRegistry,
) -> Result<LoadOutcome> {
    let e = std::fs::File::open(episodes_path)?;
    let m = std::fs::File::open(measurements_path)?;
    read_raw_episodes(std::io::BufReader::new(e), std::io::BufReader::new(m), registry)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes episodes in the two-file raw format. Output is byte-deterministic.
pub fn write_raw_episodes<W1: Write, W2: Write>(
    episodes: &[RawEpisode],
    episodes_out: W1,
    measurements_out: W2,
) -> Result<()> {
    // Header row comes from the row struct's field names.
    let mut w = csv::Writer::from_writer(episodes_out);
    for ep in episodes {
        w.serialize(EpisodeRow {
            episode_id: ep.episode_id.clone(),
            age: ep.age.to_string(),
            gender: ep.gender.clone(),
            ethnicity: ep.ethnicity.clone(),
            care_unit: ep.care_unit.clone().unwrap_or_default(),
            discharge_time: ep.discharge_time.to_string(),
            outcome_time: fmt_opt(ep.outcome_time),
            label: if ep.label { "1" } else { "0" }.to_string(),
        })?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(measurements_out);
    w.write_record(MEASUREMENT_HEADER)?;
    for ep in episodes {
        for m in &ep.measurements {
            w.write_record([
                ep.episode_id.as_str(),
                &m.hour_offset.to_string(),
                &m.feature,
                &m.value.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct InclusionOutcome {
    pub kept: Vec<RawEpisode>,
    pub excluded: Vec<RecordIssue>,
}

/// Keeps each patient's first stay (order of appearance) when the patient
/// was older than 15 at that stay. Malformed episodes are rejected with a
/// diagnostic and do not count as a first stay.
pub fn apply_inclusion(episodes: Vec<RawEpisode>, registry: &FeatureRegistry) -> InclusionOutcome {
    let mut out = InclusionOutcome::default();
    let mut seen: HashSet<String> = HashSet::new();
    for ep in episodes {
        let issue = |reason: String| RecordIssue {
            source: "inclusion".into(),
            line: 0,
            episode_id: Some(ep.episode_id.clone()),
            reason,
        };
        let problems = ep.validate(registry);
        if !problems.is_empty() {
            out.excluded.push(issue(format!("malformed: {}", problems.join("; "))));
            continue;
        }
        if !seen.insert(ep.patient_id().to_string()) {
            out.excluded.push(issue("not the patient's first stay".into()));
            continue;
        }
        if ep.age <= MIN_AGE_EXCLUSIVE {
            out.excluded.push(issue(format!("age {} not over {MIN_AGE_EXCLUSIVE}", ep.age)));
            continue;
        }
        out.kept.push(ep);
    }
    out
}
