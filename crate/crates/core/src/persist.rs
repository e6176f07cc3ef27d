//! Model files.
//!
//! A model is stored as a single JSON document:
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "config": { "iters": .., "hists": .., "depth": .., "lr": .., ... },
//!   "scaler": { "min": [..], "max": [..] },
//!   "training_curve": [..],
//!   "stages": [                       // iters entries
//!     [                               // hists entries
//!       { "rotation": { "dim": d, "entries": [.. row-major ..] },
//!         "tree": { "depth": p, "root": { "lower": [..], "upper": [..] },
//!                   "split_dims": [..], "split_thresholds": [..] },
//!         "leaf_values": [..] }
//!     ]
//!   ]
//! }
//! ```
//!
//! Floats are written in their shortest round-trip decimal form and parsed
//! with correct rounding, so a reloaded model predicts bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boosting::{GbbheModel, TrainConfig};
use crate::data::ScalingParams;
use crate::error::{Error, Result};
use crate::learner::BinaryHistogramRegressor;
use crate::partition::{Cell, PartitionTree};
use crate::rotation::RotationMatrix;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u64,
    config: TrainConfig,
    scaler: ScalingParams,
    #[serde(default)]
    training_curve: Vec<f64>,
    stages: Vec<Vec<LearnerFile>>,
}

#[derive(Serialize, Deserialize)]
struct LearnerFile {
    rotation: RotationFile,
    tree: TreeFile,
    leaf_values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RotationFile {
    dim: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    depth: u32,
    root: CellFile,
    split_dims: Vec<usize>,
    split_thresholds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CellFile {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ModelFile {
    fn from_model(model: &GbbheModel) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            config: model.config().clone(),
            scaler: model.scaler().clone(),
            training_curve: model.training_curve().to_vec(),
            stages: model
                .stages()
                .iter()
                .map(|stage| stage.iter().map(LearnerFile::from_learner).collect())
                .collect(),
        }
    }

    fn into_model(self) -> Result<GbbheModel> {
        let config = self.config;
        config
            .validate()
            .map_err(|e| Error::corrupt("config", e.to_string()))?;
        self.scaler
            .validate()
            .map_err(|e| Error::corrupt("scaler", e.to_string()))?;
        if self.stages.len() != config.iters {
            return Err(Error::corrupt(
                "stages",
                format!("expected {} stages, found {}", config.iters, self.stages.len()),
            ));
        }
        if !self.training_curve.is_empty() && self.training_curve.len() != config.iters {
            return Err(Error::corrupt(
                "training_curve",
                format!("expected {} entries, found {}", config.iters, self.training_curve.len()),
            ));
        }
        let d = self.scaler.dim();
        let mut stages = Vec::with_capacity(self.stages.len());
        for (t, stage) in self.stages.into_iter().enumerate() {
            if stage.len() != config.hists {
                return Err(Error::corrupt(
                    format!("stages[{t}]"),
                    format!("expected {} learners, found {}", config.hists, stage.len()),
                ));
            }
            let learners = stage
                .into_iter()
                .enumerate()
                .map(|(k, l)| l.into_learner(&format!("stages[{t}][{k}]"), &config, d))
                .collect::<Result<Vec<_>>>()?;
            stages.push(learners);
        }
        GbbheModel::from_parts(config, self.scaler, stages, self.training_curve)
            .map_err(|e| Error::corrupt("model", e.to_string()))
    }
}

impl LearnerFile {
    fn from_learner(f: &BinaryHistogramRegressor) -> Self {
        let tree = f.tree();
        LearnerFile {
            rotation: RotationFile {
                dim: f.rotation().dim(),
                entries: f.rotation().to_row_major(),
            },
            tree: TreeFile {
                depth: tree.depth(),
                root: CellFile {
                    lower: tree.root().lower().to_vec(),
                    upper: tree.root().upper().to_vec(),
                },
                split_dims: tree.split_dims().to_vec(),
                split_thresholds: tree.split_thresholds().to_vec(),
            },
            leaf_values: f.leaf_values().to_vec(),
        }
    }

    fn into_learner(self, path: &str, config: &TrainConfig, d: usize) -> Result<BinaryHistogramRegressor> {
        let corrupt = |field: &str, e: Error| Error::corrupt(format!("{path}.{field}"), e.to_string());
        if self.rotation.dim != d {
            return Err(Error::corrupt(
                format!("{path}.rotation.dim"),
                format!("expected {d}, found {}", self.rotation.dim),
            ));
        }
        let rotation = RotationMatrix::from_row_major(self.rotation.dim, self.rotation.entries)
            .map_err(|e| corrupt("rotation", e))?;
        if self.tree.depth != config.depth {
            return Err(Error::corrupt(
                format!("{path}.tree.depth"),
                format!("expected {}, found {}", config.depth, self.tree.depth),
            ));
        }
        let root = Cell::new(self.tree.root.lower, self.tree.root.upper)
            .map_err(|e| corrupt("tree.root", e))?;
        if root.dim() != d {
            return Err(Error::corrupt(
                format!("{path}.tree.root"),
                format!("expected dimension {d}, found {}", root.dim()),
            ));
        }
        let tree = PartitionTree::from_parts(
            self.tree.depth,
            root,
            self.tree.split_dims,
            self.tree.split_thresholds,
        )
        .map_err(|e| corrupt("tree", e))?;
        if self.leaf_values.len() != tree.n_leaves() {
            return Err(Error::corrupt(
                format!("{path}.leaf_values"),
                format!("expected {} values, found {}", tree.n_leaves(), self.leaf_values.len()),
            ));
        }
        BinaryHistogramRegressor::from_parts(rotation, tree, self.leaf_values, config.oob_policy)
            .map_err(|e| corrupt("leaf_values", e))
    }
}

pub fn write_model<W: Write>(model: &GbbheModel, out: W) -> Result<()> {
    let mut out = out;
    serde_json::to_writer(&mut out, &ModelFile::from_model(model))?;
    out.write_all(b"\n").map_err(serde_json::Error::io)?;
    Ok(())
}

pub fn read_model<R: Read>(input: R) -> Result<GbbheModel> {
    let value: serde_json::Value = serde_json::from_reader(input)?;
    match value.get("format_version").map(|v| v.as_u64()) {
        Some(Some(FORMAT_VERSION)) => {}
        Some(Some(other)) => return Err(Error::Version(other)),
        Some(None) => return Err(Error::corrupt("format_version", "not an unsigned integer")),
        None => return Err(Error::corrupt("format_version", "missing")),
    }
    let file: ModelFile = serde_json::from_value(value)?;
    file.into_model()
}

pub fn save_model(model: &GbbheModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_model(model, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GbbheModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::train;
    use crate::rng::stream;
    use ndarray::Array2;
    use rand::Rng;

    fn model(iters: usize, hists: usize) -> GbbheModel {
        let mut rng = stream(1);
        let x = Array2::from_shape_simple_fn((64, 3), || rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let config = TrainConfig { iters, hists, depth: 3, learning_rate: 0.3, ..TrainConfig::default() };
        train(x.view(), &y, &config).unwrap()
    }

    fn to_value(m: &GbbheModel) -> serde_json::Value {
        let mut buf = Vec::new();
        write_model(m, &mut buf).unwrap();
        serde_json::from_slice(&buf).unwrap()
    }

    #[test]
    fn layout() {
        let m = model(2, 3);
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        assert!(buf.starts_with(br#"{"format_version":1,"#));
        let v = to_value(&m);
        let stages = v["stages"].as_array().unwrap();
        assert_eq!(stages.len(), 2);
        assert!(stages.iter().all(|s| s.as_array().unwrap().len() == 3));
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model(3, 2);
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back.stages(), m.stages());
        assert_eq!(back.config(), m.config());
        assert_eq!(back.training_curve(), m.training_curve());
    }

    #[test]
    fn unknown_version() {
        let mut v = to_value(&model(1, 1));
        v["format_version"] = 99.into();
        let err = read_model(v.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Version(99)));
    }

    #[test]
    fn truncated_leaf_values_name_the_field() {
        let mut v = to_value(&model(1, 1));
        v["stages"][0][0]["leaf_values"].as_array_mut().unwrap().pop();
        match read_model(v.to_string().as_bytes()).unwrap_err() {
            Error::Corrupt { path, .. } => assert_eq!(path, "stages[0][0].leaf_values"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn other_corruptions() {
        let base = to_value(&model(2, 2));

        let mut v = base.clone();
        v["stages"][1].as_array_mut().unwrap().pop();
        assert!(matches!(read_model(v.to_string().as_bytes()), Err(Error::Corrupt { path, .. }) if path == "stages[1]"));

        let mut v = base.clone();
        v["stages"][0][1]["rotation"]["entries"][0] = 5.0.into();
        assert!(matches!(read_model(v.to_string().as_bytes()), Err(Error::Corrupt { path, .. }) if path == "stages[0][1].rotation"));

        let mut v = base.clone();
        v["stages"][1][0]["tree"]["split_dims"][0] = 17.into();
        assert!(matches!(read_model(v.to_string().as_bytes()), Err(Error::Corrupt { path, .. }) if path == "stages[1][0].tree"));

        let mut v = base;
        v.as_object_mut().unwrap().remove("format_version");
        assert!(matches!(read_model(v.to_string().as_bytes()), Err(Error::Corrupt { path, .. }) if path == "format_version"));
    }
}
