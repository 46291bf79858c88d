//! Synthetic ICU populations with planted cohorts.
//!
//! Every episode follows its cohort's piecewise-linear trajectory in
//! z-units for each feature, shifted by an episode-level random level and
//! slope and observed hourly through Bernoulli sampling with per-hour
//! noise. Sampling thins out after the dropout hour. The label is drawn
//! from a cohort-specific logistic function of the final level and slope
//! of a few outcome features; each cohort's intercept is solved so the
//! expected prevalence matches its target.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::adjusted_rand_index;
use crate::error::{Error, Result};
use crate::ingestion::{write_raw_episodes, FeatureRegistry, Measurement, RawEpisode};
use crate::nn::sigmoid;
use crate::seed;

pub const EPISODES_FILE: &str = "episodes.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

const Z_BOUND: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// Probability of a measurement in any hour before the dropout hour.
    pub obs_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub size: usize,
    pub prevalence: f64,
    /// Per feature, z-units at hour 0.
    pub level: Vec<f64>,
    /// Per feature, z-units per hour before the knot.
    pub slope: Vec<f64>,
    /// Per feature, z-units per hour after the knot.
    pub late_slope: Vec<f64>,
    /// Per outcome feature, logit weight on the level at the summary hour.
    pub outcome_level: Vec<f64>,
    /// Per outcome feature, logit weight on the slope (z per day).
    pub outcome_slope: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrasSpec {
    /// Second stays of core patients (excluded as non-first stays).
    pub readmissions: usize,
    /// Patients aged 15 or younger.
    pub pediatric: usize,
    /// Episodes that end before any prediction time.
    pub early_exits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub seed: u64,
    pub features: Vec<FeatureSpec>,
    pub cohorts: Vec<CohortSpec>,
    pub outcome_features: Vec<String>,
    /// Hours with measurements.
    pub horizon_hours: usize,
    pub knot_hour: f64,
    /// Hour whose latent level enters the outcome.
    pub summary_hour: f64,
    pub dropout_hour: usize,
    /// Sampling-rate multiplier from the dropout hour on.
    pub dropout_factor: f64,
    /// Per-measurement noise, z-units.
    pub noise: f64,
    pub episode_level_sd: f64,
    /// z-units per hour.
    pub episode_slope_sd: f64,
    /// Scales every cohort's level and slope pattern.
    pub separation: f64,
    pub extras: ExtrasSpec,
}

const BASE_FEATURES: [(&str, f64, f64, f64); 29] = [
    ("anion_gap", 14.0, 4.0, 0.2),
    ("bicarbonate", 24.0, 4.0, 0.2),
    ("blood_ph", 7.38, 0.07, 0.2),
    ("blood_urea_nitrogen", 25.0, 18.0, 0.2),
    ("chloride", 104.0, 6.0, 0.2),
    ("creatinine", 1.4, 1.2, 0.2),
    ("diastolic_bp", 60.0, 13.0, 0.9),
    ("fio2", 0.5, 0.2, 0.3),
    ("gcs_total", 12.0, 3.5, 0.3),
    ("glucose", 140.0, 50.0, 0.3),
    ("heart_rate", 88.0, 18.0, 0.9),
    ("hematocrit", 31.0, 5.0, 0.2),
    ("hemoglobin", 10.5, 1.8, 0.2),
    ("inr", 1.4, 0.6, 0.2),
    ("lactate", 2.2, 1.6, 0.2),
    ("magnesium", 2.0, 0.35, 0.2),
    ("mean_bp", 78.0, 14.0, 0.9),
    ("oxygen_saturation", 97.0, 3.0, 0.9),
    ("ptt", 35.0, 14.0, 0.2),
    ("phosphate", 3.5, 1.2, 0.2),
    ("platelets", 210.0, 100.0, 0.2),
    ("potassium", 4.1, 0.6, 0.2),
    ("prothrombin_time", 15.0, 4.0, 0.2),
    ("respiratory_rate", 19.0, 5.0, 0.9),
    ("sodium", 139.0, 5.0, 0.2),
    ("systolic_bp", 120.0, 21.0, 0.9),
    ("temperature", 36.9, 0.8, 0.9),
    ("weight", 82.0, 22.0, 0.05),
    ("wbc", 11.0, 6.0, 0.2),
];

/// Cohort proportions and prevalences of the default population.
pub const DEFAULT_SHARES: [f64; 3] = [0.363, 0.197, 0.440];
pub const DEFAULT_PREVALENCES: [f64; 3] = [0.034, 0.017, 0.124];

fn split_sizes(n: usize, shares: &[f64]) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let mut sizes: Vec<usize> = shares.iter().map(|s| (n as f64 * s / total).floor() as usize).collect();
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = n as f64 * shares[a] / total - sizes[a] as f64;
        let fb = n as f64 * shares[b] / total - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    sizes
}

impl PopulationSpec {
    /// Three cohorts: heart rate falls in cohort 0 and rises in cohorts 1
    /// and 2, with cohort 2 also carrying raised lactate. Outcome weights
    /// on heart rate, mean BP and lactate have opposing signs across
    /// cohorts.
    pub fn default_with_size(n: usize, seed: u64) -> Self {
        let features: Vec<FeatureSpec> = BASE_FEATURES
            .iter()
            .map(|&(name, mean, sd, obs_rate)| FeatureSpec { name: name.into(), mean, sd, obs_rate })
            .collect();
        let nf = features.len();
        let idx = |name: &str| features.iter().position(|f| f.name == name).unwrap();
        let (hr, lac) = (idx("heart_rate"), idx("lactate"));
        let sizes = split_sizes(n, &DEFAULT_SHARES);
        let outcome_level = [[1.2, -0.8, 1.0], [-1.2, 0.8, -1.0], [-1.0, 1.0, 1.2]];
        let outcome_slope = [[1.0, -0.5, 0.5], [-1.0, 0.5, -0.5], [-0.8, 0.6, 0.4]];
        let cohorts = (0..3)
            .map(|c| {
                let cf = c as f64;
                let mut level: Vec<f64> = (0..nf).map(|f| 0.8 * (1.3 * f as f64 + 2.1 * cf + 0.4).sin()).collect();
                let mut slope: Vec<f64> =
                    (0..nf).map(|f| (0.7 * f as f64 + 1.9 * cf).cos() / 24.0).collect();
                slope[hr] = [-1.5, 1.5, 1.0][c] / 24.0;
                level[hr] = [0.8, -0.8, 0.0][c];
                if c == 2 {
                    level[lac] = 1.0;
                }
                CohortSpec {
                    size: sizes[c],
                    prevalence: DEFAULT_PREVALENCES[c],
                    level,
                    slope,
                    late_slope: vec![0.0; nf],
                    outcome_level: outcome_level[c].to_vec(),
                    outcome_slope: outcome_slope[c].to_vec(),
                }
            })
            .collect();
        let extra = |frac: f64| ((n as f64 * frac).round() as usize).max(1);
        PopulationSpec {
            seed,
            features,
            cohorts,
            outcome_features: vec!["heart_rate".into(), "mean_bp".into(), "lactate".into()],
            horizon_hours: 48,
            knot_hour: 24.0,
            summary_hour: 23.0,
            dropout_hour: 24,
            dropout_factor: 0.5,
            noise: 0.5,
            episode_level_sd: 0.5,
            episode_slope_sd: 0.5 / 24.0,
            separation: 1.0,
            extras: ExtrasSpec { readmissions: extra(0.02), pediatric: extra(0.01), early_exits: extra(0.02) },
        }
    }

    pub fn n_core(&self) -> usize {
        self.cohorts.iter().map(|c| c.size).sum()
    }

    pub fn validate(&self, registry: &FeatureRegistry) -> Result<()> {
        let nf = self.features.len();
        if nf == 0 || self.cohorts.is_empty() {
            return Err(Error::invalid("population needs features and cohorts"));
        }
        for f in &self.features {
            if !registry.contains(&f.name) {
                return Err(Error::UnknownFeature(f.name.clone()));
            }
            if !(f.sd > 0.0) || !(0.0..=1.0).contains(&f.obs_rate) || !f.mean.is_finite() {
                return Err(Error::invalid(format!("feature `{}`: bad mean/sd/rate", f.name)));
            }
        }
        for of in &self.outcome_features {
            if !self.features.iter().any(|f| &f.name == of) {
                return Err(Error::invalid(format!("outcome feature `{of}` is not generated")));
            }
        }
        let no = self.outcome_features.len();
        for (c, co) in self.cohorts.iter().enumerate() {
            if co.size == 0 {
                return Err(Error::invalid(format!("cohort {c} is empty")));
            }
            if !(co.prevalence > 0.0 && co.prevalence < 1.0) {
                return Err(Error::invalid(format!("cohort {c}: prevalence {} outside (0, 1)", co.prevalence)));
            }
            if co.level.len() != nf || co.slope.len() != nf || co.late_slope.len() != nf {
                return Err(Error::invalid(format!("cohort {c}: trajectory vectors must have {nf} entries")));
            }
            if co.outcome_level.len() != no || co.outcome_slope.len() != no {
                return Err(Error::invalid(format!("cohort {c}: outcome weights must have {no} entries")));
            }
        }
        if self.extras.readmissions > self.n_core() {
            return Err(Error::invalid("more readmissions than core patients"));
        }
        if self.horizon_hours == 0
            || !(0.0..=1.0).contains(&self.dropout_factor)
            || self.noise < 0.0
            || self.episode_level_sd < 0.0
            || self.episode_slope_sd < 0.0
            || !(self.separation >= 0.0)
        {
            return Err(Error::invalid("bad observation or noise settings"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub episode_id: String,
    pub cohort_id: usize,
    pub risk: f64,
}

/// Episode-level latent parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub cohort: usize,
    pub level_shift: Vec<f64>,
    pub slope_shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEpisodeSet {
    pub episodes: Vec<RawEpisode>,
    pub truth: Vec<GroundTruth>,
    pub latent: Vec<Latent>,
    pub intercepts: Vec<f64>,
}

fn latent_z(spec: &PopulationSpec, lat: &Latent, f: usize, t: f64) -> f64 {
    let co = &spec.cohorts[lat.cohort];
    let s = spec.separation;
    let early = t.min(spec.knot_hour);
    let late = (t - spec.knot_hour).max(0.0);
    let z = s * (co.level[f] + co.slope[f] * early + co.late_slope[f] * late)
        + lat.level_shift[f]
        + lat.slope_shift[f] * t;
    z.clamp(-Z_BOUND, Z_BOUND)
}

impl SyntheticEpisodeSet {
    /// Noise-free latent z-value of feature `f` for episode `i` at hour `t`.
    pub fn latent_z(&self, spec: &PopulationSpec, i: usize, f: usize, t: f64) -> f64 {
        latent_z(spec, &self.latent[i], f, t)
    }

    pub fn truth_map(&self) -> HashMap<&str, usize> {
        self.truth.iter().map(|g| (g.episode_id.as_str(), g.cohort_id)).collect()
    }

    pub fn write_ground_truth<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for g in &self.truth {
            w.serialize(g)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the two raw files and the ground-truth sidecar into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let ep = std::io::BufWriter::new(std::fs::File::create(dir.join(EPISODES_FILE))?);
        let ms = std::io::BufWriter::new(std::fs::File::create(dir.join(MEASUREMENTS_FILE))?);
        write_raw_episodes(&self.episodes, ep, ms)?;
        self.write_ground_truth(std::io::BufWriter::new(std::fs::File::create(dir.join(GROUND_TRUTH_FILE))?))
    }
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Summary inputs of the outcome model: per outcome feature, latent level
/// at the summary hour and slope in z per day over the first day.
fn outcome_summary(spec: &PopulationSpec, lat: &Latent, outcome_idx: &[usize]) -> Vec<(f64, f64)> {
    outcome_idx
        .iter()
        .map(|&f| {
            let l = latent_z(spec, lat, f, spec.summary_hour);
            let s = (l - latent_z(spec, lat, f, 0.0)) / spec.summary_hour.max(1.0) * 24.0;
            (l, s)
        })
        .collect()
}

fn cohort_logit(co: &CohortSpec, summary: &[(f64, f64)]) -> f64 {
    summary
        .iter()
        .enumerate()
        .map(|(j, &(l, s))| co.outcome_level[j] * l + co.outcome_slope[j] * s)
        .sum()
}

/// Intercept giving mean predicted risk equal to `target`.
fn solve_intercept(logits: &[f64], target: f64) -> Result<f64> {
    let mean_risk = |b: f64| logits.iter().map(|&x| sigmoid(x + b)).sum::<f64>() / logits.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    if mean_risk(lo) > target || mean_risk(hi) < target {
        return Err(Error::invalid(format!("prevalence {target} is unreachable under the outcome model")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_risk(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Core,
    Readmission,
    Pediatric,
    EarlyExit,
}

const ETHNICITIES: [(&str, f64); 6] = [
    ("WHITE", 0.70),
    ("BLACK", 0.09),
    ("HISPANIC", 0.04),
    ("ASIAN", 0.03),
    ("OTHER", 0.10),
    ("UNKNOWN", 0.04),
];
const CARE_UNITS: [&str; 5] = ["MICU", "SICU", "CCU", "CSRU", "TSICU"];

fn pick<'a, R: Rng>(rng: &mut R, items: &[(&'a str, f64)]) -> &'a str {
    let mut r: f64 = rng.random();
    for &(name, p) in items {
        if r < p {
            return name;
        }
        r -= p;
    }
    items[items.len() - 1].0
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Generates a population. Identical specs give identical output.
pub fn generate_population(spec: &PopulationSpec) -> Result<SyntheticEpisodeSet> {
    let registry = FeatureRegistry::standard();
    spec.validate(&registry)?;
    let nf = spec.features.len();
    let outcome_idx: Vec<usize> = spec
        .outcome_features
        .iter()
        .map(|of| spec.features.iter().position(|f| &f.name == of).unwrap())
        .collect();
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    // Layout: core episodes cohort by cohort, then the extras.
    let mut plan: Vec<(Kind, usize)> = Vec::new();
    for (c, co) in spec.cohorts.iter().enumerate() {
        plan.extend(std::iter::repeat_n((Kind::Core, c), co.size));
    }
    let n_core = plan.len();
    let mut kind_rng = seed::derived_rng(spec.seed, 1);
    let cohort_of = |rng: &mut seed::Rng| -> usize {
        let r = rng.random_range(0..n_core);
        plan_cohort(&spec.cohorts, r)
    };
    let extras = &spec.extras;
    let mut extra_plan = Vec::new();
    for (kind, count) in [
        (Kind::Readmission, extras.readmissions),
        (Kind::Pediatric, extras.pediatric),
        (Kind::EarlyExit, extras.early_exits),
    ] {
        for _ in 0..count {
            extra_plan.push((kind, cohort_of(&mut kind_rng)));
        }
    }
    plan.extend(extra_plan);

    let latent: Vec<Latent> = plan
        .iter()
        .enumerate()
        .map(|(i, &(_, c))| {
            let mut rng = seed::derived_rng(spec.seed, 1_000_000 + i as u64);
            let mut draw = |sd: f64| (0..nf).map(|_| sd * std_normal.sample(&mut rng)).collect::<Vec<f64>>();
            let level_shift = draw(spec.episode_level_sd);
            let slope_shift = draw(spec.episode_slope_sd);
            Latent { cohort: c, level_shift, slope_shift }
        })
        .collect();

    let logits: Vec<f64> = latent
        .iter()
        .map(|lat| cohort_logit(&spec.cohorts[lat.cohort], &outcome_summary(spec, lat, &outcome_idx)))
        .collect();
    let intercepts = spec
        .cohorts
        .iter()
        .enumerate()
        .map(|(c, co)| {
            let own: Vec<f64> = (0..n_core).filter(|&i| plan[i].1 == c).map(|i| logits[i]).collect();
            solve_intercept(&own, co.prevalence)
        })
        .collect::<Result<Vec<f64>>>()?;

    let core_ids: Vec<String> = (0..n_core).map(|i| format!("P{i:06}")).collect();
    let mut readmitted = rand::seq::index::sample(&mut seed::derived_rng(spec.seed, 2), n_core, extras.readmissions).into_iter();
    let mut episodes = Vec::with_capacity(plan.len());
    let mut truth = Vec::with_capacity(plan.len());
    for (i, (&(kind, c), lat)) in plan.iter().zip(&latent).enumerate() {
        let mut rng = seed::derived_rng(spec.seed, 2_000_000 + i as u64);
        let risk = sigmoid(logits[i] + intercepts[c]);
        let label = rng.random_bool(risk);
        let episode_id = match kind {
            Kind::Core => format!("{}-a", core_ids[i]),
            Kind::Readmission => format!("{}-b", core_ids[readmitted.next().unwrap()]),
            Kind::Pediatric | Kind::EarlyExit => format!("X{i:06}-a"),
        };
        let age = match kind {
            Kind::Pediatric => rng.random_range(1.0..15.0f64).floor(),
            _ => (65.0 + 15.0 * std_normal.sample(&mut rng)).clamp(18.0, 95.0).round(),
        };
        let gender = if rng.random_bool(0.55) { "M" } else { "F" }.to_string();
        let ethnicity = pick(&mut rng, &ETHNICITIES).to_string();
        let care_unit = Some(CARE_UNITS[rng.random_range(0..CARE_UNITS.len())].to_string());

        let (outcome_time, discharge_time) = if kind == Kind::EarlyExit {
            let t = round4(rng.random_range(12.0..30.0));
            (label.then_some(t), t)
        } else if label {
            let t = round4(rng.random_range(40.0..160.0));
            (Some(t), round4(t + rng.random_range(0.0..2.0)))
        } else {
            (None, round4(rng.random_range(72.0..240.0)))
        };
        let last_hour = (discharge_time.floor() as usize).min(spec.horizon_hours);

        let mut measurements = Vec::new();
        for h in 0..last_hour {
            let damp = if h >= spec.dropout_hour { spec.dropout_factor } else { 1.0 };
            for (f, fs) in spec.features.iter().enumerate() {
                if !rng.random_bool((fs.obs_rate * damp).clamp(0.0, 1.0)) {
                    continue;
                }
                let offset = if h == 0 { rng.random_range(0.0..0.45) } else { h as f64 + rng.random_range(-0.45..0.45) };
                let z = latent_z(spec, lat, f, offset) + spec.noise * std_normal.sample(&mut rng);
                measurements.push(Measurement {
                    hour_offset: round4(offset),
                    feature: fs.name.clone(),
                    value: round4(fs.mean + fs.sd * z),
                });
            }
        }
        truth.push(GroundTruth { episode_id: episode_id.clone(), cohort_id: c, risk });
        episodes.push(RawEpisode {
            episode_id,
            age,
            gender,
            ethnicity,
            care_unit,
            measurements,
            outcome_time,
            discharge_time,
            label,
        });
    }
    Ok(SyntheticEpisodeSet { episodes, truth, latent, intercepts })
}

fn plan_cohort(cohorts: &[CohortSpec], mut r: usize) -> usize {
    for (c, co) in cohorts.iter().enumerate() {
        if r < co.size {
            return c;
        }
        r -= co.size;
    }
    cohorts.len() - 1
}

/// Adjusted Rand index between assigned cohorts and the planted ones over
/// the episodes present in both.
pub fn evaluate_recovery<'a, I>(assignments: I, truth: &[GroundTruth]) -> Result<f64>
where
    I: IntoIterator<Item = (&'a str, usize)>,
{
    let planted: HashMap<&str, usize> = truth.iter().map(|g| (g.episode_id.as_str(), g.cohort_id)).collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (id, c) in assignments {
        if let Some(&t) = planted.get(id) {
            a.push(c);
            b.push(t);
        }
    }
    if a.is_empty() {
        return Err(Error::invalid("assignments and ground truth share no episodes"));
    }
    adjusted_rand_index(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{apply_inclusion, read_raw_episodes};

    fn small(n: usize, seed: u64) -> PopulationSpec {
        PopulationSpec::default_with_size(n, seed)
    }

    #[test]
    fn default_sizes_and_validation() {
        let s = small(3000, 0);
        assert_eq!(s.cohorts.iter().map(|c| c.size).collect::<Vec<_>>(), vec![1089, 591, 1320]);
        s.validate(&FeatureRegistry::standard()).unwrap();
        let mut bad = s.clone();
        bad.cohorts[0].prevalence = 1.0;
        assert!(generate_population(&bad).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_population(&small(60, 4)).unwrap();
        let b = generate_population(&small(60, 4)).unwrap();
        assert_eq!(a.episodes, b.episodes);
        let c = generate_population(&small(60, 5)).unwrap();
        assert_ne!(a.episodes, c.episodes);
    }

    #[test]
    fn prevalence_within_two_standard_errors() {
        let spec = small(5000, 0);
        let set = generate_population(&spec).unwrap();
        for (c, co) in spec.cohorts.iter().enumerate() {
            let risks: Vec<f64> = set.truth[..spec.n_core()].iter().filter(|t| t.cohort_id == c).map(|t| t.risk).collect();
            assert!((risks.iter().sum::<f64>() / risks.len() as f64 - co.prevalence).abs() < 1e-9);
            let labels: Vec<bool> = set
                .truth
                .iter()
                .zip(&set.episodes)
                .take(spec.n_core())
                .filter(|(t, _)| t.cohort_id == c)
                .map(|(_, e)| e.label)
                .collect();
            let p = co.prevalence;
            let se = (p * (1.0 - p) / labels.len() as f64).sqrt();
            let emp = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
            assert!((emp - p).abs() <= 2.0 * se, "cohort {c}: {emp} vs {p}");
        }
    }

    #[test]
    fn zero_noise_gives_identical_trajectories_within_cohort() {
        let mut spec = small(30, 2);
        spec.noise = 0.0;
        spec.episode_level_sd = 0.0;
        spec.episode_slope_sd = 0.0;
        let set = generate_population(&spec).unwrap();
        let hr = spec.features.iter().position(|f| f.name == "heart_rate").unwrap();
        for c in 0..3 {
            let members: Vec<usize> = (0..set.latent.len()).filter(|&i| set.latent[i].cohort == c).collect();
            for t in 0..48 {
                let v0 = set.latent_z(&spec, members[0], hr, t as f64);
                for &m in &members[1..] {
                    assert_eq!(set.latent_z(&spec, m, hr, t as f64), v0);
                }
            }
        }
        let first = set.latent_z(&spec, 0, hr, 0.0);
        assert!(set.latent_z(&spec, 0, hr, 23.0) < first);
    }

    #[test]
    fn round_trip_through_ingestion() {
        let spec = small(200, 3);
        let set = generate_population(&spec).unwrap();
        let mut ep = Vec::new();
        let mut ms = Vec::new();
        write_raw_episodes(&set.episodes, &mut ep, &mut ms).unwrap();
        let reg = FeatureRegistry::standard();
        let loaded = read_raw_episodes(&ep[..], &ms[..], &reg).unwrap();
        assert!(loaded.rejects.is_empty(), "{:?}", &loaded.rejects[..1]);
        assert_eq!(loaded.episodes.len(), set.episodes.len());
        let inc = apply_inclusion(loaded.episodes, &reg);
        assert_eq!(inc.kept.len(), spec.n_core() + spec.extras.early_exits);
        assert_eq!(inc.excluded.len(), spec.extras.readmissions + spec.extras.pediatric);

        let mut gt = Vec::new();
        set.write_ground_truth(&mut gt).unwrap();
        let text = String::from_utf8(gt).unwrap();
        assert!(text.starts_with("episode_id,cohort_id,risk\n"));
        let exported = String::from_utf8(ep).unwrap();
        assert!(!exported.contains("cohort"));
    }

    /// Mean z per feature over hours 0-11 and 12-23, zero when unobserved.
    fn summary_vectors(spec: &PopulationSpec, set: &SyntheticEpisodeSet) -> Vec<Vec<f64>> {
        let nf = spec.features.len();
        set.episodes
            .iter()
            .map(|e| {
                let mut sum = vec![0.0; 2 * nf];
                let mut cnt = vec![0usize; 2 * nf];
                for m in &e.measurements {
                    if m.hour_offset >= 23.5 {
                        continue;
                    }
                    let f = spec.features.iter().position(|x| x.name == m.feature).unwrap();
                    let slot = f + if m.hour_offset >= 11.5 { nf } else { 0 };
                    sum[slot] += (m.value - spec.features[f].mean) / spec.features[f].sd;
                    cnt[slot] += 1;
                }
                sum.iter().zip(&cnt).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
            })
            .collect()
    }

    #[test]
    fn separation_dial_orders_recovery() {
        use crate::cohort::{assign_all, fit_gmm, GmmConfig};
        let mut medians = Vec::new();
        for sep in [0.0, 0.25, 0.5, 1.0] {
            let mut scores: Vec<f64> = (0..5)
                .map(|s| {
                    let mut spec = small(300, 40 + s);
                    spec.separation = sep;
                    let set = generate_population(&spec).unwrap();
                    let x = summary_vectors(&spec, &set);
                    let g = fit_gmm(&x, 3, &GmmConfig { restarts: 3, ..Default::default() }, s).unwrap();
                    let ids: Vec<String> = set.truth.iter().map(|t| t.episode_id.clone()).collect();
                    let asg = assign_all(&g, &ids, &x).unwrap();
                    evaluate_recovery(asg.rows.iter().map(|r| (r.episode_id.as_str(), r.cohort_id)), &set.truth).unwrap()
                })
                .collect();
            scores.sort_by(f64::total_cmp);
            medians.push(scores[2]);
        }
        assert!(medians.windows(2).all(|w| w[1] >= w[0]), "{medians:?}");
        assert!(medians[0] < 0.1 && medians[3] > 0.9, "{medians:?}");
    }

    #[test]
    fn recovery_scores() {
        let set = generate_population(&small(100, 6)).unwrap();
        let perfect = set.truth.iter().map(|g| (g.episode_id.as_str(), (g.cohort_id + 1) % 3));
        assert_eq!(evaluate_recovery(perfect, &set.truth).unwrap(), 1.0);
        assert!(evaluate_recovery([("nope", 0), ("nada", 1)], &set.truth).is_err());
    }
}
