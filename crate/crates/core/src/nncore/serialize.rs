//! Model files: a JSON manifest plus a sidecar blob of little-endian `f64` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerKind};
use super::model::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MODEL_FORMAT: &str = "mofhei-model";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    schema_version: u32,
    scalar: String,
    input_shape: Vec<usize>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    blob: BlobRef,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobRef {
    file: String,
    encoding: String,
    values: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    kind: LayerKind,
    trainable: bool,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

/// Path of the weight blob that accompanies a manifest.
pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().unwrap_or_default().to_os_string();
    name.push(".bin");
    manifest.with_file_name(name)
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob_file = blob_path(path);
    let mut blob = Vec::with_capacity(model.param_count() * 8);
    let mut offset = 0;
    let layers = model
        .layers()
        .iter()
        .map(|l| LayerEntry {
            kind: l.kind.clone(),
            trainable: l.trainable,
            input_shape: l.input_shape().to_vec(),
            output_shape: l.output_shape().to_vec(),
            params: l
                .params
                .iter()
                .map(|p| {
                    for v in p.data() {
                        blob.extend_from_slice(&v.as_f64().to_le_bytes());
                    }
                    let e = ParamEntry {
                        shape: p.shape().to_vec(),
                        offset,
                        count: p.len(),
                    };
                    offset += p.len();
                    e
                })
                .collect(),
        })
        .collect();
    let manifest = Manifest {
        format: MODEL_FORMAT.into(),
        schema_version: SCHEMA_VERSION,
        scalar: T::NAME.into(),
        input_shape: model.input_shape().to_vec(),
        metadata: model.metadata.clone(),
        blob: BlobRef {
            file: blob_file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            encoding: "f64-le".into(),
            values: offset,
        },
        layers,
    };
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse(0, e.to_string()))?;
    fs::write(&blob_file, &blob)?;
    fs::write(path, text)?;
    Ok(())
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)) as u64
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(byte_offset(&text, e.line(), e.column()), e.to_string()))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
        return Err(Error::parse(0, format!("not a {MODEL_FORMAT} manifest")));
    }
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if version != SCHEMA_VERSION {
        return Err(Error::Version {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(byte_offset(&text, e.line(), e.column()), e.to_string()))?;
    if manifest.blob.encoding != "f64-le" {
        return Err(Error::parse(
            0,
            format!("unknown blob encoding {}", manifest.blob.encoding),
        ));
    }
    let blob_file = path.with_file_name(&manifest.blob.file);
    let blob = fs::read(&blob_file)?;
    let need = manifest.blob.values * 8;
    if blob.len() != need {
        return Err(Error::parse(
            blob.len().min(need) as u64,
            format!(
                "weight blob {} holds {} bytes, manifest declares {need}",
                blob_file.display(),
                blob.len()
            ),
        ));
    }
    let value_at =
        |i: usize| f64::from_le_bytes(blob[i * 8..i * 8 + 8].try_into().expect("8 bytes"));

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in manifest.layers {
        let mut params = Vec::with_capacity(entry.params.len());
        for p in entry.params {
            if p.offset + p.count > manifest.blob.values {
                return Err(Error::parse(
                    (p.offset * 8) as u64,
                    "parameter extends past the end of the blob",
                ));
            }
            let data = (p.offset..p.offset + p.count)
                .map(|i| T::of(value_at(i)))
                .collect();
            params.push(Tensor::new(p.shape, data)?);
        }
        let mut layer = Layer::with_params(entry.kind, &entry.input_shape, params)?;
        if layer.output_shape() != entry.output_shape.as_slice() {
            return Err(Error::parse(
                0,
                format!("layer output shape {:?} inconsistent", entry.output_shape),
            ));
        }
        layer.trainable = entry.trainable;
        layers.push(layer);
    }
    let mut model = Model::from_layers(&manifest.input_shape, layers)?;
    model.metadata = manifest.metadata;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::conv::Padding;
    use crate::nncore::model::ModelBuilder;

    fn lenet() -> Model<f64> {
        ModelBuilder::new(&[28, 28, 1])
            .conv(6, 5, 1, Padding::Same)
            .relu()
            .max_pool(2)
            .conv(16, 5, 1, Padding::Valid)
            .relu()
            .max_pool(2)
            .conv(120, 5, 1, Padding::Valid)
            .relu()
            .flatten()
            .dense(84)
            .layer(LayerKind::BatchNorm {
                epsilon: 1e-3,
                momentum: 0.99,
            })
            .relu()
            .layer(LayerKind::Dropout { rate: 0.25 })
            .dense(10)
            .softmax()
            .build(11)
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lenet.mofhei");
        let mut m = lenet();
        m.metadata.insert("stage".into(), "original".into());
        m.layer_mut(0).trainable = false;
        save_model(&m, &path).unwrap();
        let back: Model<f64> = load_model(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn empty_model_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.mofhei");
        let m = Model::<f64>::empty(&[5]);
        save_model(&m, &path).unwrap();
        assert_eq!(load_model::<f64>(&path).unwrap(), m);
    }

    #[test]
    fn f32_model_round_trips_through_f64_blob() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.mofhei");
        let m: Model<f32> = ModelBuilder::new(&[3])
            .dense(4)
            .poly(2)
            .dense(2)
            .build(2)
            .unwrap();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model::<f32>(&path).unwrap(), m);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lenet.mofhei");
        save_model(&lenet(), &path).unwrap();
        let blob = blob_path(&path);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() / 2 + 3]).unwrap();
        match load_model::<f64>(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, bytes.len() / 2 + 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_manifest_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mofhei");
        fs::write(&path, "{\n  \"format\": \"mofhei-model\",\n  oops\n}").unwrap();
        match load_model::<f64>(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 32),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mofhei");
        save_model(&Model::<f64>::empty(&[2]), &path).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 7");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_model::<f64>(&path),
            Err(Error::Version {
                found: 7,
                expected: 1
            })
        ));
    }
}
