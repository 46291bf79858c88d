use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 29 time-varying vitals and labs, in canonical column order.
pub const STANDARD_FEATURES: [&str; 29] = [
    "anion_gap",
    "bicarbonate",
    "blood_ph",
    "blood_urea_nitrogen",
    "chloride",
    "creatinine",
    "diastolic_bp",
    "fio2",
    "gcs_total",
    "glucose",
    "heart_rate",
    "hematocrit",
    "hemoglobin",
    "inr",
    "lactate",
    "magnesium",
    "mean_bp",
    "oxygen_saturation",
    "ptt",
    "phosphate",
    "platelets",
    "potassium",
    "prothrombin_time",
    "respiratory_rate",
    "sodium",
    "systolic_bp",
    "temperature",
    "weight",
    "wbc",
];

/// Ordered set of recognised time-varying feature names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    names: Vec<String>,
}

impl Default for FeatureRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl FeatureRegistry {
    pub fn standard() -> Self {
        Self {
            names: STANDARD_FEATURES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::invalid("feature registry is empty"));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate feature `{n}` in registry")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }
}
