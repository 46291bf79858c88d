//! Pipeline stages. Each stage reads upstream artifacts, writes its own
//! atomically and records them in the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cohort_mtl::autoencoder::{encode_batch, select_embedding_size, train_autoencoder, EmbeddingSizeChoice, SeqAutoencoder};
use cohort_mtl::cohort::{
    assign_all, fit_gmm, select_num_clusters, static_columns, CohortAssignment, GmmModel, StaticAdjustment,
};
use cohort_mtl::evaluation::{compare_models, evaluate, ComparisonTable, EvalReport, GroupedPredictions, ThresholdMode};
use cohort_mtl::ingestion::{apply_inclusion, build_task_dataset, read_raw_files, write_raw_episodes, FeatureRegistry, Split, TaskDataset};
use cohort_mtl::nn::TrainCurve;
use cohort_mtl::predictors::{grid_search, predict_batch, train_model, GridResult, Hyper, RiskModel, Sample, Variant};
use cohort_mtl::seed::derive_seed;
use cohort_mtl::synth::{generate_population, EPISODES_FILE, GROUND_TRUTH_FILE, MEASUREMENTS_FILE};
use serde::{Deserialize, Serialize};

use crate::artifacts::{envelope_bytes, file_sha256, read_envelope, sha256_hex, write_atomic, ArtifactRecord, RunManifest, StageRecord};
use crate::config::{ExperimentConfig, HyperMode};
use crate::error::{CliError, CliResult};
use crate::plots::{centroid_trajectories, trajectories_csv, trajectories_svg, Trajectory};
use crate::report::{render_report, ReportDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    Embed,
    Cluster,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Synth, Stage::Ingest, Stage::Embed, Stage::Cluster, Stage::Train, Stage::Evaluate, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self, cfg: &ExperimentConfig) -> Vec<Stage> {
        match self {
            Stage::Synth => vec![],
            Stage::Ingest if cfg.data.episodes.is_some() => vec![],
            Stage::Ingest => vec![Stage::Synth],
            Stage::Embed => vec![Stage::Ingest],
            Stage::Cluster => vec![Stage::Ingest, Stage::Embed],
            Stage::Train => vec![Stage::Ingest, Stage::Cluster],
            Stage::Evaluate => vec![Stage::Ingest, Stage::Cluster, Stage::Train],
            Stage::Report => vec![Stage::Ingest, Stage::Cluster, Stage::Train, Stage::Evaluate],
        }
    }

    /// Stages a full run executes, in order.
    pub fn plan(cfg: &ExperimentConfig) -> Vec<Stage> {
        Stage::ALL.into_iter().filter(|s| *s != Stage::Synth || cfg.data.episodes.is_none()).collect()
    }
}

pub mod files {
    pub const DATASET: &str = "ingest/dataset.json";
    pub const REJECTS: &str = "ingest/rejects.csv";
    pub const AUTOENCODER: &str = "embed/autoencoder.json";
    pub const EMBEDDINGS: &str = "embed/embeddings.csv";
    pub const GMM: &str = "cluster/gmm.json";
    pub const ASSIGNMENTS: &str = "cluster/assignments.csv";
    pub const CENTROIDS_CSV: &str = "cluster/centroids.csv";
    pub const CENTROIDS_SVG: &str = "cluster/centroids.svg";
    pub const EVALUATION: &str = "evaluate/evaluation.json";
    pub const REPORT_MD: &str = "report/report.md";
    pub const REPORT_JSON: &str = "report/report.json";

    pub fn model(v: cohort_mtl::predictors::Variant) -> String {
        format!("train/{}.json", v.name())
    }

    pub fn predictions(v: cohort_mtl::predictors::Variant) -> String {
        format!("train/predictions_{}.csv", v.name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedArtifact {
    pub model: SeqAutoencoder,
    pub choice: EmbeddingSizeChoice,
    /// Training curve per candidate size.
    pub curves: Vec<(usize, TrainCurve)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub validation_macro_auc: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub k: usize,
    pub selection: Vec<KScore>,
    pub adjustment: StaticAdjustment,
    pub model: GmmModel,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainArtifact {
    pub variant: Variant,
    pub hyper: Hyper,
    pub grid: Option<GridResult>,
    pub model: RiskModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub episode_id: String,
    pub split: Split,
    pub cohort_id: usize,
    pub probability: f64,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    pub k: usize,
    pub baseline: Variant,
    pub reports: Vec<(Variant, EvalReport)>,
    /// `(candidate, comparison against the baseline)`.
    pub comparisons: Vec<(Variant, ComparisonTable)>,
}

/// Stage runner bound to one config and stage directory.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    pub force: bool,
    digest: String,
    manifest: RunManifest,
}

/// What happened to a requested stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

struct Produced {
    files: Vec<(String, Vec<u8>)>,
}

impl Produced {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, rel: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((rel.into(), bytes));
    }
}

impl Pipeline {
    /// Opens `dir`. An existing manifest from a different config is refused
    /// unless `force`, which discards it.
    pub fn open(cfg: ExperimentConfig, dir: &Path, force: bool) -> CliResult<Self> {
        let digest = cfg.digest();
        let manifest = match RunManifest::load(dir)? {
            Some(m) if m.config_digest == digest => m,
            Some(_) if !force => return Err(CliError::DigestMismatch(dir.display().to_string())),
            _ => RunManifest::new(&digest, cfg.seed),
        };
        Ok(Self { cfg, dir: dir.to_path_buf(), force, digest, manifest })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn stage_seed(&self, s: Stage) -> u64 {
        derive_seed(self.cfg.seed, s.stream())
    }

    /// A stage is fresh when its artifacts are intact and every upstream
    /// stage is fresh with the fingerprint this stage recorded.
    fn fresh(&self, stage: Stage) -> Option<&StageRecord> {
        let rec = self.manifest.intact(&self.dir, stage.name())?;
        for up in stage.upstream(&self.cfg) {
            let u = self.fresh(up)?;
            if rec.inputs.get(up.name()) != Some(&u.fingerprint()) {
                return None;
            }
        }
        Some(rec)
    }

    fn input_fingerprints(&self, stage: Stage) -> CliResult<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        // Nearest stage first, so the error names the step to run next.
        for up in stage.upstream(&self.cfg).into_iter().rev() {
            let rec = self.fresh(up).ok_or_else(|| CliError::MissingUpstream {
                stage: up.name(),
                detail: format!("needed by '{}' in {}; absent or out of date", stage.name(), self.dir.display()),
            })?;
            inputs.insert(up.name().to_string(), rec.fingerprint());
        }
        if stage == Stage::Ingest {
            if let (Some(e), Some(m)) = (&self.cfg.data.episodes, &self.cfg.data.measurements) {
                for p in [e, m] {
                    let h = file_sha256(p).map_err(|_| CliError::Config(format!("cannot read data file {}", p.display())))?;
                    inputs.insert(p.display().to_string(), h);
                }
            }
        }
        Ok(inputs)
    }

    /// Runs `stage` unless its recorded artifacts are intact and were built
    /// from the current upstream artifacts.
    pub fn run(&mut self, stage: Stage) -> CliResult<Outcome> {
        let inputs = self.input_fingerprints(stage)?;
        if !self.force {
            if let Some(rec) = self.manifest.intact(&self.dir, stage.name()) {
                if rec.inputs == inputs {
                    log::info!("{}: up to date", stage.name());
                    return Ok(Outcome::UpToDate);
                }
            }
        }
        let t0 = Instant::now();
        log::info!("{}: running", stage.name());
        let produced = match stage {
            Stage::Synth => self.synth()?,
            Stage::Ingest => self.ingest()?,
            Stage::Embed => self.embed()?,
            Stage::Cluster => self.cluster()?,
            Stage::Train => self.train()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::Report => self.report()?,
        };
        let mut artifacts = Vec::new();
        for (rel, bytes) in &produced.files {
            write_atomic(&self.dir.join(rel), bytes)?;
            artifacts.push(ArtifactRecord { path: rel.clone(), sha256: sha256_hex(bytes) });
        }
        let rec = StageRecord { seed: self.stage_seed(stage), inputs, artifacts, seconds: t0.elapsed().as_secs_f64() };
        self.manifest.stages.insert(stage.name().to_string(), rec);
        self.manifest.save(&self.dir)?;
        log::info!("{}: done in {:.1}s", stage.name(), t0.elapsed().as_secs_f64());
        Ok(Outcome::Ran)
    }

    pub fn run_all(&mut self) -> CliResult<()> {
        for s in Stage::plan(&self.cfg) {
            self.run(s)?;
        }
        Ok(())
    }

    fn envelope<T: Serialize>(&self, stage: Stage, payload: &T) -> Vec<u8> {
        envelope_bytes(&self.digest, stage.name(), payload)
    }

    pub fn load_dataset(&self) -> CliResult<TaskDataset> {
        read_envelope(&self.path(files::DATASET), &self.digest)
    }

    pub fn load_cluster(&self) -> CliResult<ClusterArtifact> {
        read_envelope(&self.path(files::GMM), &self.digest)
    }

    pub fn load_assignments(&self) -> CliResult<CohortAssignment> {
        let path = self.path(files::ASSIGNMENTS);
        let k = self.load_cluster()?.k;
        let mut r = csv::Reader::from_path(&path).map_err(|e| artifact_err(&path, e))?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| artifact_err(&path, e))?;
            let parse = |i: usize| rec.get(i).and_then(|v| v.parse::<f64>().ok());
            let cohort_id = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| artifact_err(&path, "bad cohort id"))?;
            let responsibilities = (0..k).map(|j| parse(2 + j)).collect::<Option<Vec<f64>>>().ok_or_else(|| artifact_err(&path, "bad responsibilities"))?;
            rows.push(cohort_mtl::cohort::AssignmentRow { episode_id: rec[0].to_string(), cohort_id, responsibilities });
        }
        Ok(CohortAssignment { k, rows })
    }

    pub fn load_embeddings(&self) -> CliResult<Vec<(String, Vec<f64>)>> {
        let path = self.path(files::EMBEDDINGS);
        let mut r = csv::Reader::from_path(&path).map_err(|e| artifact_err(&path, e))?;
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| artifact_err(&path, e))?;
            let v = rec.iter().skip(1).map(|x| x.parse::<f64>()).collect::<Result<Vec<f64>, _>>().map_err(|e| artifact_err(&path, e))?;
            out.push((rec[0].to_string(), v));
        }
        Ok(out)
    }

    pub fn load_predictions(&self, v: Variant) -> CliResult<Vec<PredictionRow>> {
        let path = self.path(&files::predictions(v));
        let mut r = csv::Reader::from_path(&path).map_err(|_| CliError::MissingUpstream {
            stage: Stage::Train.name(),
            detail: format!("no predictions for {}", v.name()),
        })?;
        r.deserialize().map(|row| row.map_err(|e| artifact_err(&path, e))).collect()
    }

    pub fn load_evaluation(&self) -> CliResult<EvaluationArtifact> {
        read_envelope(&self.path(files::EVALUATION), &self.digest)
    }

    fn synth(&self) -> CliResult<Produced> {
        let spec = self.cfg.population_spec(self.stage_seed(Stage::Synth));
        let set = generate_population(&spec)?;
        let (mut ep, mut ms, mut gt) = (Vec::new(), Vec::new(), Vec::new());
        write_raw_episodes(&set.episodes, &mut ep, &mut ms)?;
        set.write_ground_truth(&mut gt)?;
        let mut p = Produced::new();
        p.add(format!("synth/{EPISODES_FILE}"), ep);
        p.add(format!("synth/{MEASUREMENTS_FILE}"), ms);
        p.add(format!("synth/{GROUND_TRUTH_FILE}"), gt);
        Ok(p)
    }

    fn raw_paths(&self) -> (PathBuf, PathBuf) {
        match (&self.cfg.data.episodes, &self.cfg.data.measurements) {
            (Some(e), Some(m)) => (e.clone(), m.clone()),
            _ => (self.path(&format!("synth/{EPISODES_FILE}")), self.path(&format!("synth/{MEASUREMENTS_FILE}"))),
        }
    }

    fn ingest(&self) -> CliResult<Produced> {
        let reg = FeatureRegistry::standard();
        let (e, m) = self.raw_paths();
        let loaded = read_raw_files(&e, &m, &reg)?;
        for r in &loaded.rejects {
            log::warn!("rejected {}:{} {:?}: {}", r.source, r.line, r.episode_id, r.reason);
        }
        let inc = apply_inclusion(loaded.episodes, &reg);
        log::info!("inclusion kept {} episodes, excluded {}", inc.kept.len(), inc.excluded.len());
        let ds = build_task_dataset(&inc.kept, &reg, &self.cfg.task_config(self.stage_seed(Stage::Ingest)))?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source", "line", "episode_id", "reason"]).map_err(|e| artifact_err(Path::new(files::REJECTS), e))?;
        for r in loaded.rejects.iter().chain(&inc.excluded) {
            w.write_record([r.source.as_str(), &r.line.to_string(), r.episode_id.as_deref().unwrap_or(""), &r.reason])
                .map_err(|e| artifact_err(Path::new(files::REJECTS), e))?;
        }
        let rejects = w.into_inner().map_err(|e| artifact_err(Path::new(files::REJECTS), e))?;
        let mut p = Produced::new();
        p.add(files::DATASET, self.envelope(Stage::Ingest, &ds));
        p.add(files::REJECTS, rejects);
        Ok(p)
    }

    fn embed(&self) -> CliResult<Produced> {
        let ds = self.load_dataset()?;
        let train = ds.tensors(&ds.indices(Split::Train));
        let val = ds.tensors(&ds.indices(Split::Val));
        let seed = self.stage_seed(Stage::Embed);
        let mut models = Vec::new();
        let mut curves = Vec::new();
        for &d in &self.cfg.autoencoder.d_candidates {
            let (m, c) = train_autoencoder(&train, &val, d, &self.cfg.autoencoder_config(), derive_seed(seed, d as u64))?;
            log::info!("autoencoder d={d}: {} epochs, best validation loss {:.6}", c.epochs(), c.best_val_loss());
            curves.push((d, c));
            models.push(m);
        }
        let losses: Vec<(usize, f64)> = curves.iter().map(|(d, c)| (*d, c.best_val_loss())).collect();
        let choice = select_embedding_size(&losses)?;
        if let Some(w) = &choice.warning {
            log::warn!("embedding size: {w}");
        }
        let idx = self.cfg.autoencoder.d_candidates.iter().position(|&d| d == choice.size).expect("chosen from candidates");
        let model = models.swap_remove(idx);

        let all: Vec<_> = ds.columns.tensor.iter().collect();
        let emb = encode_batch(&model, &all)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["episode_id".to_string()];
        header.extend((0..choice.size).map(|j| format!("e{j}")));
        let err = |e: csv::Error| artifact_err(Path::new(files::EMBEDDINGS), e);
        w.write_record(&header).map_err(err)?;
        for (id, e) in ds.columns.episode_id.iter().zip(&emb) {
            let mut row = vec![id.clone()];
            row.extend(e.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(err)?;
        }
        let csv_bytes = w.into_inner().map_err(|e| artifact_err(Path::new(files::EMBEDDINGS), e))?;
        let mut p = Produced::new();
        p.add(files::AUTOENCODER, self.envelope(Stage::Embed, &EmbedArtifact { model, choice, curves }));
        p.add(files::EMBEDDINGS, csv_bytes);
        Ok(p)
    }

    fn cluster(&self) -> CliResult<Produced> {
        let ds = self.load_dataset()?;
        let emb = self.load_embeddings()?;
        if emb.len() != ds.len() || emb.iter().zip(&ds.columns.episode_id).any(|(e, id)| &e.0 != id) {
            return Err(CliError::Artifact { path: files::EMBEDDINGS.into(), detail: "episodes differ from the dataset".into() });
        }
        let emb: Vec<Vec<f64>> = emb.into_iter().map(|e| e.1).collect();
        let off = ds.layout.static_offset();
        let statics: Vec<Vec<u32>> = ds.columns.tensor.iter().map(|t| static_columns(t, off)).collect();
        let seed = self.stage_seed(Stage::Cluster);
        let gcfg = self.cfg.gmm_config();
        let dim = emb[0].len();
        let tr_idx = ds.indices(Split::Train);
        let va_idx = ds.indices(Split::Val);
        let pick = |idx: &[usize], v: &[Vec<f64>]| idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let pick_s = |idx: &[usize]| idx.iter().map(|&i| statics[i].clone()).collect::<Vec<_>>();
        let adjust = |idx: &[usize]| -> CliResult<StaticAdjustment> {
            Ok(if self.cfg.gmm.adjust_statics {
                StaticAdjustment::fit(&pick_s(idx), &pick(idx, &emb))?
            } else {
                StaticAdjustment::identity(dim)
            })
        };

        let ks = &self.cfg.gmm.k_candidates;
        let mut selection = Vec::new();
        let k = if ks.len() == 1 {
            ks[0]
        } else {
            let adj = adjust(&tr_idx)?;
            let z = adj.apply_all(&statics, &emb)?;
            let hyper = Hyper { trunk: self.cfg.gmm.selection_trunk, dense: self.cfg.gmm.selection_dense };
            for &k in ks {
                let score = fit_gmm(&pick(&tr_idx, &z), k, &gcfg, derive_seed(seed, k as u64))
                    .and_then(|g| assign_all(&g, &ds.columns.episode_id, &z))
                    .and_then(|a| {
                        let coh = a.cohort_ids();
                        let tr = samples(&ds, &tr_idx, &coh);
                        let va = samples(&ds, &va_idx, &coh);
                        let m = train_model(self.cfg.gmm.selection_variant, &tr, &va, k, hyper, &self.cfg.train_config(), derive_seed(seed, 100 + k as u64))?;
                        let p = predict_batch(&m, &va)?;
                        let g = GroupedPredictions::from_parts(&p, &labels(&va), &va.iter().map(|s| s.cohort).collect::<Vec<_>>(), k)?;
                        cohort_mtl::evaluation::macro_metric(&g, cohort_mtl::evaluation::Metric::Auc, self.cfg.evaluation.sensitivity)
                    });
                match score {
                    Ok(s) => {
                        log::info!("K={k}: validation macro AUC {s:.4}");
                        selection.push(KScore { k, validation_macro_auc: Some(s), note: None });
                    }
                    Err(e) => {
                        log::warn!("K={k} excluded from selection: {e}");
                        selection.push(KScore { k, validation_macro_auc: None, note: Some(e.to_string()) });
                    }
                }
            }
            let scored: Vec<(usize, f64)> = selection.iter().filter_map(|s| s.validation_macro_auc.map(|a| (s.k, a))).collect();
            select_num_clusters(&scored)?
        };

        // Refit on the full training portion (train + validation).
        let full: Vec<usize> = tr_idx.iter().chain(&va_idx).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let adjustment = adjust(&full)?;
        let z = adjustment.apply_all(&statics, &emb)?;
        let model = fit_gmm(&pick(&full, &z), k, &gcfg, derive_seed(seed, 1000 + k as u64))?;
        let assignment = assign_all(&model, &ds.columns.episode_id, &z)?;
        log::info!("K={k}, cohort sizes {:?}", assignment.cohort_sizes());

        let all: Vec<_> = ds.columns.tensor.iter().collect();
        let trajectories = centroid_trajectories(&ds.layout, &all, &assignment.cohort_ids(), k, &self.cfg.plots.features);
        let mut asg = Vec::new();
        assignment.write_csv(&mut asg)?;
        let mut p = Produced::new();
        p.add(files::CENTROIDS_CSV, trajectories_csv(&trajectories).into_bytes());
        p.add(files::CENTROIDS_SVG, trajectories_svg(&trajectories).into_bytes());
        p.add(files::GMM, self.envelope(Stage::Cluster, &ClusterArtifact { k, selection, adjustment, model, trajectories }));
        p.add(files::ASSIGNMENTS, asg);
        Ok(p)
    }

    fn cohorts_for_dataset(&self, ds: &TaskDataset) -> CliResult<(usize, Vec<usize>)> {
        let asg = self.load_assignments()?;
        let map = asg.by_episode();
        let coh = ds
            .columns
            .episode_id
            .iter()
            .map(|id| map.get(id.as_str()).copied())
            .collect::<Option<Vec<usize>>>()
            .ok_or_else(|| CliError::Artifact { path: files::ASSIGNMENTS.into(), detail: "episode without a cohort".into() })?;
        Ok((asg.k, coh))
    }

    fn train(&self) -> CliResult<Produced> {
        let ds = self.load_dataset()?;
        let (k, coh) = self.cohorts_for_dataset(&ds)?;
        let tcfg = self.cfg.train_config();
        let seed = self.stage_seed(Stage::Train);
        let tr = samples(&ds, &ds.indices(Split::Train), &coh);
        let va = samples(&ds, &ds.indices(Split::Val), &coh);
        let pool: Vec<Sample> = tr.iter().chain(&va).copied().collect();
        let mut p = Produced::new();
        for (vi, &variant) in self.cfg.predictor.variants.iter().enumerate() {
            let vseed = derive_seed(seed, vi as u64);
            let (hyper, grid) = match self.cfg.predictor.hyper_mode {
                HyperMode::Fixed => (self.cfg.fixed_hyper(variant).expect("validated"), None),
                HyperMode::Grid => {
                    let g = grid_search(variant, &pool, k, &tcfg, derive_seed(vseed, 0))?;
                    (g.best, Some(g))
                }
            };
            let model = train_model(variant, &tr, &va, k, hyper, &tcfg, derive_seed(vseed, 1))?;
            log::info!("{}: {hyper:?}, {} parameters", variant.name(), model.n_params());
            let mut w = csv::Writer::from_writer(Vec::new());
            let path = files::predictions(variant);
            for split in [Split::Val, Split::Test] {
                let idx = ds.indices(split);
                let s = samples(&ds, &idx, &coh);
                let probs = predict_batch(&model, &s)?;
                for ((&i, smp), prob) in idx.iter().zip(&s).zip(probs) {
                    w.serialize(PredictionRow {
                        episode_id: ds.columns.episode_id[i].clone(),
                        split,
                        cohort_id: smp.cohort,
                        probability: prob,
                        label: smp.label as u8,
                    })
                    .map_err(|e| artifact_err(Path::new(&path), e))?;
                }
            }
            p.add(path.clone(), w.into_inner().map_err(|e| artifact_err(Path::new(&path), e))?);
            p.add(files::model(variant), self.envelope(Stage::Train, &TrainArtifact { variant, hyper, grid, model }));
        }
        Ok(p)
    }

    fn grouped(&self, rows: &[PredictionRow], split: Split, k: usize) -> CliResult<GroupedPredictions> {
        let r: Vec<&PredictionRow> = rows.iter().filter(|r| r.split == split).collect();
        let scores: Vec<f64> = r.iter().map(|x| x.probability).collect();
        let labels: Vec<bool> = r.iter().map(|x| x.label == 1).collect();
        let cohorts: Vec<usize> = r.iter().map(|x| x.cohort_id).collect();
        Ok(GroupedPredictions::from_parts(&scores, &labels, &cohorts, k)?)
    }

    fn evaluate(&self) -> CliResult<Produced> {
        let k = self.load_cluster()?.k;
        let ecfg = self.cfg.eval_config();
        let seed = self.stage_seed(Stage::Evaluate);
        let mut test = BTreeMap::new();
        let mut val = BTreeMap::new();
        for &v in &self.cfg.predictor.variants {
            let rows = self.load_predictions(v)?;
            test.insert(v.name(), self.grouped(&rows, Split::Test, k)?);
            val.insert(v.name(), self.grouped(&rows, Split::Val, k)?);
        }
        let use_val = ecfg.threshold_mode == ThresholdMode::Validation;
        let mut reports = Vec::new();
        for &v in &self.cfg.predictor.variants {
            let r = evaluate(&test[v.name()], use_val.then(|| &val[v.name()]), &ecfg, seed)?;
            reports.push((v, r));
        }
        let base = self.cfg.predictor.baseline;
        let mut comparisons = Vec::new();
        for &v in self.cfg.predictor.variants.iter().filter(|&&v| v != base) {
            let validation = use_val.then(|| (&val[v.name()], &val[base.name()]));
            let t = compare_models(&test[v.name()], &test[base.name()], validation, &ecfg, seed)?;
            comparisons.push((v, t));
        }
        let mut p = Produced::new();
        p.add(files::EVALUATION, self.envelope(Stage::Evaluate, &EvaluationArtifact { k, baseline: base, reports, comparisons }));
        Ok(p)
    }

    fn report(&self) -> CliResult<Produced> {
        let eval = self.load_evaluation()?;
        let cluster = self.load_cluster()?;
        let ds = self.load_dataset()?;
        let doc = ReportDocument::build(&self.cfg, &self.digest, &ds, &cluster, &eval);
        let mut json = serde_json::to_vec_pretty(&doc).expect("report serializes");
        json.push(b'\n');
        let mut p = Produced::new();
        p.add(files::REPORT_MD, render_report(&doc).into_bytes());
        p.add(files::REPORT_JSON, json);
        Ok(p)
    }
}

fn artifact_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Artifact { path: path.display().to_string(), detail: e.to_string() }
}

fn samples<'a>(ds: &'a TaskDataset, idx: &[usize], cohorts: &[usize]) -> Vec<Sample<'a>> {
    idx.iter()
        .map(|&i| Sample { tensor: &ds.columns.tensor[i], label: ds.columns.label[i], cohort: cohorts[i] })
        .collect()
}

fn labels(s: &[Sample<'_>]) -> Vec<bool> {
    s.iter().map(|x| x.label).collect()
}
