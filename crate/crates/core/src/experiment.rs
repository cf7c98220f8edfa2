//! End-to-end runs: ingest, train both models, audit, compare, and write
//! every artifact plus a manifest into one directory.
//!
//! All randomness derives from `root_seed` through named substreams, so a
//! run is fully determined by its config and input files. The manifest
//! records the config, input hashes, derived seeds and output hashes; feeding
//! it back to [`ExperimentConfig::from_manifest`] reproduces the outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ingest, DatasetSchema, IngestOptions, IngestReport};
use crate::eval::{
    build_proxy_labels, roc, sensitivity_distributions, HarnessError, ProxyLabeling, RocCurve, ScoreKind,
    SensitivityDistributions, DEFAULT_BINS,
};
use crate::metrics::{compute_group_metrics, threshold_predictions, GroupMetricsReport, DEFAULT_THRESHOLD, REPORT_COLUMNS};
use crate::model_file;
use crate::nn::{ModelKind, ModelSpec, TrainedModel};
use crate::rng::derive_seed;
use crate::sensitivity::{audit_dataset, SensitivityConfig, SensitivityResult};
use crate::train::{self, MitigationConfig, TrainConfig, TrainingLog};
use crate::Error;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSettings {
    pub n_samples: usize,
    pub sigma: f64,
    pub perturb_protected: bool,
}

impl Default for AuditSettings {
    fn default() -> Self {
        let d = SensitivityConfig::default();
        Self {
            n_samples: d.n_samples,
            sigma: d.sigma,
            perturb_protected: d.perturb_protected,
        }
    }
}

/// Everything that determines an experiment's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    /// Overrides the schema's protected column.
    #[serde(default)]
    pub protected: Option<String>,
    pub model: ModelKind,
    pub root_seed: u64,
    pub test_fraction: f64,
    pub threshold: f64,
    pub bins: usize,
    pub training: TrainingSettings,
    pub mitigation: MitigationConfig,
    pub audit: AuditSettings,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>, schema: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            schema: schema.into(),
            protected: None,
            model: ModelKind::LinearNet,
            root_seed: 0,
            test_fraction: crate::data::DEFAULT_TEST_FRACTION,
            threshold: DEFAULT_THRESHOLD,
            bins: DEFAULT_BINS,
            training: TrainingSettings::default(),
            mitigation: MitigationConfig::default(),
            audit: AuditSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))
    }

    /// The config recorded in a previous run's manifest.
    pub fn from_manifest(path: &Path) -> Result<Self, Error> {
        Ok(Manifest::load(path)?.config)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.model.is_adversary() {
            return Err(Error::Config(format!("main model cannot be {}", self.model)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> DerivedSeeds {
        DerivedSeeds::from_root(self.root_seed)
    }

    fn train_config(&self, seeds: &DerivedSeeds, mitigated: bool) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            seed: seeds.training,
            mitigation: mitigated.then(|| self.mitigation.clone()),
            ..TrainConfig::default()
        }
    }

    fn sensitivity_config(&self, seeds: &DerivedSeeds) -> SensitivityConfig {
        SensitivityConfig {
            n_samples: self.audit.n_samples,
            sigma: self.audit.sigma,
            noise_seed: seeds.noise,
            perturb_protected: self.audit.perturb_protected,
            retain_samples: false,
        }
    }
}

/// Seeds handed to each random consumer. Both main models share the
/// initialisation and training streams, so they differ only by mitigation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    pub root: u64,
    pub split: u64,
    pub model_init: u64,
    pub adversary_init: u64,
    pub training: u64,
    pub noise: u64,
}

impl DerivedSeeds {
    pub fn from_root(r: u64) -> Self {
        Self {
            root: r,
            split: derive_seed(r, "split"),
            model_init: derive_seed(r, "model-init"),
            adversary_init: derive_seed(r, "adversary-init"),
            training: derive_seed(r, "training"),
            noise: derive_seed(r, "noise"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub total_rows: usize,
    pub cleaned_rows: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub input_dim: usize,
    pub protected_feature: String,
    pub dropped_constant: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub seeds: DerivedSeeds,
    pub inputs: Vec<FileHash>,
    pub dataset: DatasetSummary,
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(MANIFEST_FORMAT_VERSION) => {}
            other => {
                return Err(Error::Config(format!(
                    "manifest {}: unsupported format version {other:?}",
                    path.display()
                )))
            }
        }
        serde_json::from_value(value).map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))
    }
}

/// Results of one model within an experiment.
#[derive(Debug, Clone)]
pub struct ModelOutcome {
    pub name: &'static str,
    pub model: TrainedModel,
    pub log: TrainingLog,
    pub test_accuracy: f64,
    pub group_metrics: GroupMetricsReport,
    pub audits: Vec<SensitivityResult>,
    pub distributions: Vec<SensitivityDistributions>,
    /// `None` when every test prediction got the same proxy label.
    pub rocs: Vec<(ScoreKind, Option<RocCurve>)>,
}

impl ModelOutcome {
    pub fn distribution(&self, score: ScoreKind) -> &SensitivityDistributions {
        self.distributions.iter().find(|d| d.score == score).expect("both scores computed")
    }

    pub fn roc(&self, score: ScoreKind) -> Option<&RocCurve> {
        self.rocs.iter().find(|r| r.0 == score).and_then(|r| r.1.as_ref())
    }

    pub fn median_smooth(&self) -> f64 {
        let v: Vec<f64> = self.audits.iter().map(|a| a.smooth).collect();
        crate::eval::median(&v)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub report: IngestReport,
    pub labeling: ProxyLabeling,
    pub unmitigated: ModelOutcome,
    pub mitigated: ModelOutcome,
    pub adversary: TrainedModel,
}

const SCORES: [ScoreKind; 2] = [ScoreKind::Plain, ScoreKind::Smooth];
const MODEL_NAMES: [&str; 2] = ["unmitigated", "mitigated"];

/// File names written by a run, relative to the output directory.
pub fn output_files() -> Vec<String> {
    let mut v = vec!["proxy_labels.csv".to_string(), "summary.csv".to_string(), "adversary.json".to_string()];
    for m in MODEL_NAMES {
        v.push(format!("model_{m}.json"));
        v.push(format!("train_log_{m}.csv"));
        v.push(format!("audit_{m}.csv"));
        v.push(format!("group_metrics_{m}.txt"));
        for s in SCORES {
            v.push(format!("histogram_{m}_{s}.csv"));
            v.push(format!("roc_{m}_{s}.csv"));
        }
    }
    v.sort();
    v
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<(), Error>) -> Result<(), Error> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(Error::io(path))
}

/// Loads a model written by an earlier run if it matches `spec`.
fn resume_model(path: &Path, spec: &ModelSpec, mitigated: bool) -> Option<TrainedModel> {
    let m = model_file::load(path).ok()?;
    (m.spec == *spec && m.meta.mitigated == mitigated).then_some(m)
}

/// Runs the full pipeline into `out_dir`.
///
/// Refuses to overwrite earlier results unless `resume` is set; when resuming,
/// model files that still match the config are reused instead of retrained.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, resume: bool) -> Result<ExperimentBundle, Error> {
    config.validate()?;
    let existing: Vec<String> = output_files()
        .into_iter()
        .chain([MANIFEST_FILE.to_string()])
        .filter(|f| out_dir.join(f).exists())
        .collect();
    if !existing.is_empty() && !resume {
        return Err(HarnessError::Collision(existing.join(", ")).into());
    }
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;

    let seeds = config.seeds();
    let mut schema = DatasetSchema::load(&config.schema)?;
    if let Some(p) = &config.protected {
        schema = schema.with_protected(p)?;
    }
    let (train_set, test_set, report) = ingest(
        &config.dataset,
        &schema,
        &IngestOptions {
            split_seed: seeds.split,
            test_fraction: config.test_fraction,
        },
    )?;
    log::info!(
        "{}: {} cleaned rows, {} train / {} test, {} features",
        schema.name,
        report.cleaned_rows(),
        train_set.len(),
        test_set.len(),
        train_set.input_dim()
    );

    let spec = ModelSpec {
        kind: config.model,
        input_dim: train_set.input_dim(),
        protected_attr_count: 1,
        seed: seeds.model_init,
    };
    let adv_spec = spec.adversary(seeds.adversary_init);

    let model_path = |m: &str| out_dir.join(format!("model_{m}.json"));
    let reuse = |m: &str, s: &ModelSpec, mitigated: bool| {
        if resume {
            resume_model(&model_path(m), s, mitigated)
        } else {
            None
        }
    };

    let (unmitigated, log_u) = match reuse("unmitigated", &spec, false) {
        Some(m) => {
            log::info!("reusing unmitigated model");
            (m, None)
        }
        None => {
            log::info!("training unmitigated {} model", spec.kind);
            let (m, l) = train::train(TrainedModel::build(spec)?, &train_set, &config.train_config(&seeds, false))?;
            (m, Some(l))
        }
    };
    let (mitigated, adversary, log_m) = match (
        reuse("mitigated", &spec, true),
        resume.then(|| resume_model(&out_dir.join("adversary.json"), &adv_spec, false)).flatten(),
    ) {
        (Some(m), Some(a)) => {
            log::info!("reusing mitigated model");
            (m, a, None)
        }
        _ => {
            log::info!("training mitigated {} model (lambda {})", spec.kind, config.mitigation.lambda);
            let (m, a, l) = train::train_mitigated(
                TrainedModel::build(spec)?,
                TrainedModel::build(adv_spec)?,
                &train_set,
                &config.train_config(&seeds, true),
            )?;
            (m, a, Some(l))
        }
    };

    let labeling = build_proxy_labels(&unmitigated, &mitigated, &test_set, config.threshold)?;
    log::info!("proxy labels: {} match, {} not match", labeling.matches, labeling.mismatches);

    let sens_cfg = config.sensitivity_config(&seeds);
    let mut outcomes = Vec::new();
    for (name, model, log) in [("unmitigated", unmitigated, log_u), ("mitigated", mitigated, log_m)] {
        let probs = model.predict_rows(&test_set.features)?;
        let preds = threshold_predictions(&probs, &test_set.labels, &test_set.privileged, config.threshold)?;
        let group_metrics = compute_group_metrics(&preds)?;
        let test_accuracy = train::accuracy(&model, &test_set)?;
        log::info!("auditing {name} model on {} test rows", test_set.len());
        let audits = audit_dataset(&model.network, &test_set, &sens_cfg)?;
        let mut distributions = Vec::new();
        let mut rocs = Vec::new();
        for s in SCORES {
            distributions.push(sensitivity_distributions(&labeling, &audits, s, config.bins)?);
            rocs.push((
                s,
                match roc(&labeling, &audits, s) {
                    Ok(r) => Some(r),
                    Err(HarnessError::SingleClass(msg)) => {
                        log::warn!("{name} {s} ROC undefined: {msg}");
                        None
                    }
                    Err(e) => return Err(e.into()),
                },
            ));
        }
        outcomes.push(ModelOutcome {
            name,
            model,
            log: log.unwrap_or_default(),
            test_accuracy,
            group_metrics,
            audits,
            distributions,
            rocs,
        });
    }
    let mitigated = outcomes.pop().expect("two outcomes");
    let unmitigated = outcomes.pop().expect("two outcomes");

    // Artifacts.
    let out = |f: &str| out_dir.join(f);
    write_file(&out("proxy_labels.csv"), |b| Ok(labeling.write_csv(b)?))?;
    model_file::save(&adversary, &out("adversary.json"))?;
    for o in [&unmitigated, &mitigated] {
        model_file::save(&o.model, &model_path(o.name))?;
        let log_path = out(&format!("train_log_{}.csv", o.name));
        if !o.log.epochs.is_empty() || !log_path.exists() {
            write_file(&log_path, |b| Ok(o.log.write_csv(b)?))?;
        }
        write_file(&out(&format!("audit_{}.csv", o.name)), |b| {
            write_audit_csv(b, &o.audits, &test_set.labels, &labeling, &sens_cfg)
        })?;
        write_file(&out(&format!("group_metrics_{}.txt", o.name)), |b| {
            b.extend_from_slice(o.group_metrics.to_text().as_bytes());
            Ok(())
        })?;
        for d in &o.distributions {
            write_file(&out(&format!("histogram_{}_{}.csv", o.name, d.score)), |b| {
                Ok(d.histogram.write_csv(b)?)
            })?;
        }
        for (s, r) in &o.rocs {
            write_file(&out(&format!("roc_{}_{s}.csv", o.name)), |b| match r {
                Some(r) => Ok(r.write_csv(b)?),
                None => {
                    writeln!(b, "fpr,tpr").expect("vec write");
                    Ok(())
                }
            })?;
        }
    }
    write_file(&out("summary.csv"), |b| write_summary(b, &labeling, &[&unmitigated, &mitigated]))?;

    let mut inputs = Vec::new();
    for p in [&config.dataset, &config.schema] {
        inputs.push(FileHash {
            path: p.display().to_string(),
            sha256: sha256_file(p)?,
        });
    }
    let mut outputs = Vec::new();
    for f in output_files() {
        outputs.push(FileHash {
            sha256: sha256_file(&out(&f))?,
            path: f,
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        config: config.clone(),
        seeds,
        inputs,
        dataset: DatasetSummary {
            total_rows: report.total_rows,
            cleaned_rows: report.cleaned_rows(),
            train_rows: train_set.len(),
            test_rows: test_set.len(),
            input_dim: train_set.input_dim(),
            protected_feature: test_set.protected_name().to_string(),
            dropped_constant: report.dropped_constant.clone(),
        },
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(out(MANIFEST_FILE), text).map_err(Error::io(&out(MANIFEST_FILE)))?;

    Ok(ExperimentBundle {
        dir: out_dir.to_path_buf(),
        manifest,
        report,
        labeling,
        unmitigated,
        mitigated,
        adversary,
    })
}

pub const AUDIT_COLUMNS: [&str; 9] = [
    "example_id",
    "prediction",
    "label",
    "proxy_label",
    "plain_sensitivity",
    "smooth_sensitivity",
    "n",
    "sigma",
    "noise_seed",
];

/// Audit rows; `labels` and `labeling` may be empty or aligned with `audits`.
pub fn write_audit_csv<W: Write>(
    out: W,
    audits: &[SensitivityResult],
    labels: &[u8],
    labeling: &ProxyLabeling,
    cfg: &SensitivityConfig,
) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AUDIT_COLUMNS)?;
    for (i, a) in audits.iter().enumerate() {
        let proxy = labeling.labels.get(i).map(|l| {
            debug_assert_eq!(l.example_id, a.example_id);
            l.class.to_string()
        });
        w.write_record([
            a.example_id.to_string(),
            a.prediction.to_string(),
            labels.get(i).map(|y| y.to_string()).unwrap_or_default(),
            proxy.unwrap_or_default(),
            a.plain.to_string(),
            a.smooth.to_string(),
            cfg.n_samples.to_string(),
            cfg.sigma.to_string(),
            cfg.noise_seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<audit csv>".into(),
        source: e,
    })?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into())
}

fn write_summary<W: Write>(out: W, labeling: &ProxyLabeling, outcomes: &[&ModelOutcome]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model", "test_accuracy", "match", "not_match"];
    header.extend(REPORT_COLUMNS);
    header.extend([
        "median_smooth_sensitivity",
        "fair_mean_plain",
        "unfair_mean_plain",
        "fair_mean_smooth",
        "unfair_mean_smooth",
        "fair_median_smooth",
        "unfair_median_smooth",
        "auc_plain",
        "auc_smooth",
    ]);
    w.write_record(&header)?;
    for o in outcomes {
        let (p, s) = (o.distribution(ScoreKind::Plain), o.distribution(ScoreKind::Smooth));
        let mut row = vec![
            o.name.to_string(),
            o.test_accuracy.to_string(),
            labeling.matches.to_string(),
            labeling.mismatches.to_string(),
        ];
        row.extend(o.group_metrics.values());
        row.extend([
            o.median_smooth().to_string(),
            opt(p.fair.mean),
            opt(p.unfair.mean),
            opt(s.fair.mean),
            opt(s.unfair.mean),
            opt(s.fair.median),
            opt(s.unfair.median),
            opt(o.roc(ScoreKind::Plain).map(|r| r.auc)),
            opt(o.roc(ScoreKind::Smooth).map(|r| r.auc)),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<summary csv>".into(),
        source: e,
    })?;
    Ok(())
}
