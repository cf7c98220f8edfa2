//! Versioned JSON model files.
//!
//! Layout: `format_version`, `spec`, `training_meta`, then the weight records
//! `{name, shape, values}` in storage order. Keys are written in a fixed order
//! and floats as shortest round-trip decimals, so files are byte-stable.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{ModelError, ModelSpec, NamedTensor, Network, TrainedModel, TrainingMeta};
use crate::tensor::Tensor;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    spec: ModelSpec,
    training_meta: TrainingMeta,
    weights: Vec<WeightRecord>,
}

pub fn to_string(model: &TrainedModel) -> String {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        spec: model.spec,
        training_meta: model.meta.clone(),
        weights: model
            .network
            .params()
            .iter()
            .map(|p| WeightRecord {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                values: p.tensor.data().to_vec(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
    s.push('\n');
    s
}

pub fn from_str(text: &str) -> Result<TrainedModel, ModelError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    match raw.get("format_version") {
        Some(v) if v.as_u64() == Some(MODEL_FORMAT_VERSION as u64) => {}
        Some(v) => {
            return Err(ModelError::Version {
                found: v.to_string(),
                expected: MODEL_FORMAT_VERSION,
            })
        }
        None => return Err(ModelError::Corrupt("missing format_version".into())),
    }
    let file: ModelFile = serde_json::from_value(raw).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    file.spec.validate()?;

    let mut params = Vec::with_capacity(file.weights.len());
    for w in file.weights {
        let tensor = Tensor::new(w.shape.clone(), w.values).map_err(|_| {
            ModelError::ShapeMismatch(format!("{}: value count does not match shape {:?}", w.name, w.shape))
        })?;
        params.push(NamedTensor { name: w.name, tensor });
    }
    let network = Network::from_params(file.spec.architecture(), file.spec.input_dim, params)?;
    Ok(TrainedModel {
        spec: file.spec,
        network,
        meta: file.training_meta,
    })
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, to_string(model)).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<TrainedModel, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained_looking(seed: u64) -> TrainedModel {
        let mut m = TrainedModel::build(ModelSpec::linear(5, seed)).unwrap();
        m.meta.epochs = 3;
        m.meta.final_loss = Some(0.1234567890123);
        m
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let m = trained_looking(9);
        let first = to_string(&m);
        let back = from_str(&first).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_string(&back), first);
        let x = [0.5, -0.25, 1.0, 0.0, 3.0];
        assert_eq!(back.predict(&x).unwrap().to_bits(), m.predict(&x).unwrap().to_bits());
    }

    #[test]
    fn tampered_value_count_is_a_shape_error() {
        let text = to_string(&trained_looking(1));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["weights"][2]["values"].as_array_mut().unwrap().pop();
        let err = from_str(&v.to_string()).unwrap_err();
        assert!(matches!(err, ModelError::ShapeMismatch(_)), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["weights"].as_array_mut().unwrap().pop();
        assert!(matches!(from_str(&v.to_string()), Err(ModelError::ShapeMismatch(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = to_string(&trained_looking(1)).replacen("\"format_version\": 1", "\"format_version\": 7", 1);
        assert!(matches!(from_str(&text), Err(ModelError::Version { .. })));
    }

    #[test]
    fn garbage_is_corrupt() {
        assert!(matches!(from_str("{not json"), Err(ModelError::Corrupt(_))));
        assert!(matches!(from_str("{}"), Err(ModelError::Corrupt(_))));
    }

    #[test]
    fn files_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = TrainedModel::build(ModelSpec::conv(3, 4)).unwrap();
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }
}
