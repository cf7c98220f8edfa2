use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairaudit::data::{self, DatasetSchema, IngestOptions};
use fairaudit::eval::{self, ProxyLabeling, ScoreKind};
use fairaudit::experiment::{self, DerivedSeeds, ExperimentConfig};
use fairaudit::metrics::{compute_group_metrics, threshold_predictions, DEFAULT_THRESHOLD};
use fairaudit::model_file;
use fairaudit::nn::{ModelKind, ModelSpec, TrainedModel};
use fairaudit::sensitivity::{audit_dataset, SensitivityConfig};
use fairaudit::train::{self, MitigationConfig, TrainConfig};
use fairaudit::{Dataset, Error};

#[derive(Parser)]
#[command(name = "fairaudit", version, about = "Audit classifiers for sensitivity to protected attributes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, encode, normalize and split a CSV into train/test dataset files
    Ingest(IngestArgs),
    /// Train an unmitigated classifier
    Train(TrainArgs),
    /// Train a classifier with an adversary on its output
    TrainFair(TrainFairArgs),
    /// Plain and smooth sensitivity of every row to the protected column
    Audit(AuditArgs),
    /// Disparate impact, parity, opportunity and odds differences
    GroupMetrics(GroupMetricsArgs),
    /// Label predictions fair/unfair by agreement of two models
    ProxyLabels(ProxyLabelsArgs),
    /// ROC of a sensitivity score against proxy labels
    Roc(RocArgs),
    /// Run the whole pipeline into one directory
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Protected column to audit instead of the schema default
    #[arg(long)]
    protected: Option<String>,
    /// Root seed; the split uses its "split" substream
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = data::DEFAULT_TEST_FRACTION)]
    test_fraction: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainOpts {
    /// Training split written by `ingest`
    #[arg(long)]
    train: PathBuf,
    /// linear-net or conv-net
    #[arg(long, default_value = "linear-net")]
    model: ModelKind,
    /// Root seed; initialisation and shuffling use its substreams
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch training log CSV
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct TrainFairArgs {
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, default_value_t = MitigationConfig::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = MitigationConfig::default().adversary_steps)]
    adversary_steps: usize,
    #[arg(long, default_value_t = MitigationConfig::default().adversary_lr)]
    adversary_lr: f64,
    /// Where to write the trained adversary
    #[arg(long)]
    adversary_out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset file written by `ingest`
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = SensitivityConfig::default().n_samples)]
    n: usize,
    #[arg(long, default_value_t = SensitivityConfig::default().sigma)]
    sigma: f64,
    /// Root seed; the noise uses its "noise" substream
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave the protected column itself unperturbed
    #[arg(long)]
    fixed_protected: bool,
    /// Proxy labels to include in the output
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GroupMetricsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// CSV report; the text report always goes to stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProxyLabelsArgs {
    #[arg(long)]
    unmitigated: PathBuf,
    #[arg(long)]
    mitigated: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RocArgs {
    /// Audit CSV written by `audit`
    #[arg(long)]
    audit: PathBuf,
    /// Proxy label CSV written by `proxy-labels`
    #[arg(long)]
    labels: PathBuf,
    /// plain or smooth
    #[arg(long, default_value = "smooth")]
    score: ScoreKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, required_unless_present_any = ["config", "manifest"])]
    dataset: Option<PathBuf>,
    #[arg(long, required_unless_present_any = ["config", "manifest"])]
    schema: Option<PathBuf>,
    /// TOML experiment config; flags given alongside override it
    #[arg(long, conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Rerun the config recorded in an earlier manifest, ignoring other flags
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    protected: Option<String>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Reuse matching models in `out_dir` and overwrite the rest
    #[arg(long)]
    resume: bool,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<(), Error>) -> Result<(), Error> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(io(path))
}

fn ingest(a: IngestArgs) -> Result<(), Error> {
    let mut schema = DatasetSchema::load(&a.schema)?;
    if let Some(p) = &a.protected {
        schema = schema.with_protected(p)?;
    }
    let opts = IngestOptions {
        split_seed: DerivedSeeds::from_root(a.seed).split,
        test_fraction: a.test_fraction,
    };
    let (train, test, report) = data::ingest(&a.dataset, &schema, &opts)?;
    fs::create_dir_all(&a.out_dir).map_err(io(&a.out_dir))?;
    data::save_dataset(&train, &a.out_dir.join("train.dataset"))?;
    data::save_dataset(&test, &a.out_dir.join("test.dataset"))?;
    println!("total_rows = {}", report.total_rows);
    println!("filtered_rows = {}", report.filtered_rows);
    println!("missing_rows = {}", report.missing_rows);
    println!("cleaned_rows = {}", report.cleaned_rows());
    println!("train_rows = {}", train.len());
    println!("test_rows = {}", test.len());
    println!("features = {}", train.input_dim());
    println!("protected_feature = {}", train.protected_name());
    Ok(())
}

fn train_setup(o: &TrainOpts, mitigation: Option<MitigationConfig>) -> Result<(Dataset, ModelSpec, TrainConfig, DerivedSeeds), Error> {
    let data = data::load_dataset(&o.train)?;
    let seeds = DerivedSeeds::from_root(o.seed);
    let spec = match o.model {
        ModelKind::LinearNet => ModelSpec::linear(data.input_dim(), seeds.model_init),
        ModelKind::ConvNet => ModelSpec::conv(data.input_dim(), seeds.model_init),
        other => return Err(Error::Config(format!("cannot train {other} directly"))),
    };
    let cfg = TrainConfig {
        epochs: o.epochs,
        batch_size: o.batch_size,
        learning_rate: o.learning_rate,
        seed: seeds.training,
        mitigation,
        ..TrainConfig::default()
    };
    Ok((data, spec, cfg, seeds))
}

fn finish_training(o: &TrainOpts, model: &TrainedModel, log: &train::TrainingLog, data: &Dataset) -> Result<(), Error> {
    model_file::save(model, &o.out)?;
    if let Some(p) = &o.log {
        write_with(p, |b| Ok(log.write_csv(b)?))?;
    }
    println!("final_loss = {}", model.meta.final_loss.map_or("none".into(), |l| l.to_string()));
    println!("train_accuracy = {}", train::accuracy(model, data)?);
    Ok(())
}

fn train_plain(a: TrainArgs) -> Result<(), Error> {
    let (data, spec, cfg, _) = train_setup(&a.opts, None)?;
    let (model, log) = train::train(TrainedModel::build(spec)?, &data, &cfg)?;
    finish_training(&a.opts, &model, &log, &data)
}

fn train_fair(a: TrainFairArgs) -> Result<(), Error> {
    let mitigation = MitigationConfig {
        lambda: a.lambda,
        adversary_steps: a.adversary_steps,
        adversary_lr: a.adversary_lr,
    };
    let (data, spec, cfg, seeds) = train_setup(&a.opts, Some(mitigation))?;
    let adversary = TrainedModel::build(spec.adversary(seeds.adversary_init))?;
    let (model, adversary, log) = train::train_mitigated(TrainedModel::build(spec)?, adversary, &data, &cfg)?;
    if let Some(p) = &a.adversary_out {
        model_file::save(&adversary, p)?;
    }
    finish_training(&a.opts, &model, &log, &data)
}

fn audit(a: AuditArgs) -> Result<(), Error> {
    let model = model_file::load(&a.model)?;
    let data = data::load_dataset(&a.data)?;
    let cfg = SensitivityConfig {
        n_samples: a.n,
        sigma: a.sigma,
        noise_seed: DerivedSeeds::from_root(a.seed).noise,
        perturb_protected: !a.fixed_protected,
        retain_samples: false,
    };
    let labeling = match &a.labels {
        Some(p) => {
            let l = ProxyLabeling::read_csv(fs::File::open(p).map_err(io(p))?)?;
            if l.labels.iter().map(|x| x.example_id).ne(data.example_ids.iter().copied()) {
                return Err(eval::HarnessError::IdMismatch(format!("{} does not match {}", p.display(), a.data.display())).into());
            }
            l
        }
        None => ProxyLabeling::default(),
    };
    let audits = audit_dataset(&model.network, &data, &cfg)?;
    write_with(&a.out, |b| experiment::write_audit_csv(b, &audits, &data.labels, &labeling, &cfg))
}

fn group_metrics(a: GroupMetricsArgs) -> Result<(), Error> {
    let model = model_file::load(&a.model)?;
    let data = data::load_dataset(&a.data)?;
    let probs = model.predict_rows(&data.features)?;
    let report = compute_group_metrics(&threshold_predictions(&probs, &data.labels, &data.privileged, a.threshold)?)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.out {
        write_with(p, |b| Ok(report.write_csv(b)?))?;
    }
    Ok(())
}

fn proxy_labels(a: ProxyLabelsArgs) -> Result<(), Error> {
    let u = model_file::load(&a.unmitigated)?;
    let m = model_file::load(&a.mitigated)?;
    let data = data::load_dataset(&a.data)?;
    let labeling = eval::build_proxy_labels(&u, &m, &data, a.threshold)?;
    write_with(&a.out, |b| Ok(labeling.write_csv(b)?))?;
    println!("match = {}", labeling.matches);
    println!("not_match = {}", labeling.mismatches);
    Ok(())
}

fn roc(a: RocArgs) -> Result<(), Error> {
    let audits = eval::read_audit_csv(fs::File::open(&a.audit).map_err(io(&a.audit))?)?;
    let labeling = ProxyLabeling::read_csv(fs::File::open(&a.labels).map_err(io(&a.labels))?)?;
    let curve = eval::roc(&labeling, &audits, a.score)?;
    write_with(&a.out, |b| Ok(curve.write_csv(b)?))?;
    println!("auc = {}", curve.auc);
    Ok(())
}

fn run_experiment(a: ExperimentArgs) -> Result<(), Error> {
    let cfg = if let Some(m) = &a.manifest {
        ExperimentConfig::from_manifest(m)?
    } else {
        let mut cfg = match &a.config {
            Some(p) => ExperimentConfig::from_toml(&fs::read_to_string(p).map_err(io(p))?)?,
            None => ExperimentConfig::new(a.dataset.clone().unwrap_or_default(), a.schema.clone().unwrap_or_default()),
        };
        if let Some(v) = a.dataset {
            cfg.dataset = v;
        }
        if let Some(v) = a.schema {
            cfg.schema = v;
        }
        if a.protected.is_some() {
            cfg.protected = a.protected;
        }
        if let Some(v) = a.model {
            cfg.model = v;
        }
        if let Some(v) = a.seed {
            cfg.root_seed = v;
        }
        if let Some(v) = a.epochs {
            cfg.training.epochs = v;
        }
        if let Some(v) = a.lambda {
            cfg.mitigation.lambda = v;
        }
        if let Some(v) = a.n {
            cfg.audit.n_samples = v;
        }
        if let Some(v) = a.sigma {
            cfg.audit.sigma = v;
        }
        cfg
    };
    let bundle = experiment::run_experiment(&cfg, &a.out_dir, a.resume)?;
    println!("match = {}", bundle.labeling.matches);
    println!("not_match = {}", bundle.labeling.mismatches);
    for o in [&bundle.unmitigated, &bundle.mitigated] {
        let s = o.distribution(ScoreKind::Smooth);
        println!(
            "{}: accuracy {:.4}, SPD {}, DI {}, smooth fair/unfair mean {:?}/{:?}, AUC {:?}",
            o.name,
            o.test_accuracy,
            o.group_metrics.statistical_parity_difference,
            o.group_metrics.disparate_impact,
            s.fair.mean,
            s.unfair.mean,
            o.roc(ScoreKind::Smooth).map(|r| r.auc)
        );
    }
    println!("manifest = {}", a.out_dir.join(experiment::MANIFEST_FILE).display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train_plain(a),
        Command::TrainFair(a) => train_fair(a),
        Command::Audit(a) => audit(a),
        Command::GroupMetrics(a) => group_metrics(a),
        Command::ProxyLabels(a) => proxy_labels(a),
        Command::Roc(a) => roc(a),
        Command::Experiment(a) => run_experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
