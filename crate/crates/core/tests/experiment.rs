use std::fs;
use std::path::PathBuf;

use fairaudit::experiment::{output_files, run_experiment, sha256_file, ExperimentConfig, Manifest, MANIFEST_FILE};
use fairaudit::{Error, HarnessError};

fn compas_config(epochs: usize) -> ExperimentConfig {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let mut cfg = ExperimentConfig::new(data.join("compas-scores-two-years.csv"), data.join("compas.schema.toml"));
    cfg.training.epochs = epochs;
    cfg.audit.n_samples = 10;
    cfg.root_seed = 3;
    cfg
}

#[test]
fn pipeline_writes_every_artifact_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = compas_config(2);
    let bundle = run_experiment(&cfg, &a, false).unwrap();

    let manifest = Manifest::load(&a.join(MANIFEST_FILE)).unwrap();
    let listed: Vec<&str> = manifest.outputs.iter().map(|o| o.path.as_str()).collect();
    assert_eq!(listed, output_files());
    for o in &manifest.outputs {
        assert_eq!(sha256_file(&a.join(&o.path)).unwrap(), o.sha256);
    }
    assert_eq!(manifest.inputs.len(), 2);
    assert_eq!(manifest.dataset.cleaned_rows, 6172);
    assert_eq!(bundle.labeling.len(), 1235);
    assert_eq!(bundle.labeling.matches + bundle.labeling.mismatches, 1235);
    let test_ids: Vec<u64> = bundle.labeling.labels.iter().map(|l| l.example_id).collect();
    assert!(bundle.unmitigated.audits.iter().map(|r| r.example_id).eq(test_ids.iter().copied()));

    let again = ExperimentConfig::from_manifest(&a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(again, cfg);
    run_experiment(&again, &b, false).unwrap();
    for f in output_files().iter().map(String::as_str).chain([MANIFEST_FILE]) {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn existing_outputs_need_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = compas_config(1);
    run_experiment(&cfg, dir.path(), false).unwrap();
    let before = fs::read(dir.path().join("summary.csv")).unwrap();
    let err = run_experiment(&cfg, dir.path(), false).unwrap_err();
    assert!(matches!(err, Error::Harness(HarnessError::Collision(_))));
    assert_eq!(err.exit_code(), fairaudit::exit::CONFIG);

    fs::remove_file(dir.path().join("summary.csv")).unwrap();
    run_experiment(&cfg, dir.path(), true).unwrap();
    assert_eq!(fs::read(dir.path().join("summary.csv")).unwrap(), before);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = compas_config(5);
    let text = toml::to_string(&cfg).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    assert!(ExperimentConfig::from_toml("dataset = 3").is_err());
}
