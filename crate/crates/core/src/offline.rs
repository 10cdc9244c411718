//! Offline phase: turn a labeled training set into a [`Model`] holding one
//! trained map per class together with all class and neuron statistics, and
//! persist it as a versioned JSON document.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::som::{BatchTrainConfig, SomGrid};
use crate::stats::{average_outputs, CountMatrix, NeuronStats, ProbMatrix};
use crate::types::{batch_label_cardinality, scale_features, DatasetMeta, Instance, LabelCardinality, LabelSet};

pub const MODEL_FORMAT: &str = "somstream-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub grid_dim: usize,
    pub som: BatchTrainConfig,
    /// Min-max scale features with the training-set range before anything else.
    pub scale_features: bool,
}

impl OfflineConfig {
    pub fn new(grid_dim: usize, rng_seed: u64) -> Self {
        OfflineConfig {
            grid_dim,
            som: BatchTrainConfig::for_grid(grid_dim, rng_seed),
            scale_features: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub meta: DatasetMeta,
    pub scale_features: bool,
    /// One map per class, indexed by class.
    pub maps: Vec<SomGrid>,
    pub counts: CountMatrix,
    pub probs: ProbMatrix,
    pub cardinality: LabelCardinality,
    pub neuron_stats: NeuronStats,
    /// Neighbors consulted when ranking classes; odd.
    pub k: usize,
}

impl Model {
    pub fn n_classes(&self) -> usize {
        self.maps.len()
    }

    pub fn n_features(&self) -> usize {
        self.meta.n_features
    }

    pub fn map_sizes(&self) -> Vec<usize> {
        self.maps.iter().map(SomGrid::len).collect()
    }

    /// Prepares raw features for the maps: scaled when the model was trained
    /// with scaling, copied otherwise.
    pub fn prepare(&self, raw: &[f64], out: &mut [f64]) -> Result<()> {
        if self.scale_features {
            crate::types::scale_into(raw, &self.meta, out)
        } else if raw.len() != out.len() || raw.len() != self.meta.n_features {
            Err(Error::usage("feature length mismatch"))
        } else {
            out.copy_from_slice(raw);
            Ok(())
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.meta.n_classes;
        let bad = |m: String| Err(Error::usage(m));
        if self.maps.len() != n {
            return bad(format!("{} maps for {n} classes", self.maps.len()));
        }
        if self.maps.iter().any(SomGrid::is_empty) {
            return bad("empty map".into());
        }
        if self.maps.iter().any(|m| m.n_features() != self.meta.n_features) {
            return bad("map weight length differs from feature count".into());
        }
        let smallest = self.maps.iter().map(SomGrid::len).min().unwrap_or(0);
        if self.k.is_multiple_of(2) || self.k > smallest {
            return bad(format!("k = {} invalid for smallest map of {smallest}", self.k));
        }
        if self.counts.n_classes() != n {
            return bad("count matrix size differs from class count".into());
        }
        self.counts.check_invariants()?;
        if self.probs != ProbMatrix::from_counts(&self.counts)? {
            return bad("probabilities inconsistent with counts".into());
        }
        if !(0.0..=n as f64).contains(&self.cardinality.z) {
            return bad(format!("label cardinality {} out of range", self.cardinality.z));
        }
        let ns = &self.neuron_stats;
        for (j, map) in self.maps.iter().enumerate() {
            if ns.avg_output[j].len() != map.len()
                || ns.threshold[j].len() != map.len()
                || ns.hits[j].len() != map.len()
            {
                return bad(format!("neuron statistics shape mismatch in map {j}"));
            }
            for b in 0..map.len() {
                let (a, t) = (ns.avg_output[j][b], ns.threshold[j][b]);
                if !(a.is_finite() && a >= 0.0 && t.is_finite() && t >= 0.0) {
                    return bad(format!("non-finite or negative statistic at map {j} neuron {b}"));
                }
                if t != crate::stats::neuron_threshold(j, &self.probs, a) {
                    return bad(format!("stale threshold at map {j} neuron {b}"));
                }
            }
        }
        Ok(())
    }
}

/// Splits features into one subset per class; a multi-label instance lands in
/// every subset it belongs to.
pub fn build_class_subsets(dataset: &[Instance], n: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut subsets = vec![Vec::new(); n];
    for inst in dataset {
        let y = labels_of(inst)?;
        y.check_bounds(n).map_err(|_| Error::Data {
            sequence_id: inst.sequence_id,
            message: format!("label index out of range for {n} classes"),
        })?;
        for c in y.iter() {
            subsets[c].push(inst.features.clone());
        }
    }
    Ok(subsets)
}

fn labels_of(inst: &Instance) -> Result<&LabelSet> {
    match &inst.truth {
        Some(y) if !y.is_empty() => Ok(y),
        _ => Err(Error::Data {
            sequence_id: inst.sequence_id,
            message: "training instance has no labels".into(),
        }),
    }
}

/// `k` is the size of the smallest map, reduced by one when even, at least 1.
pub fn knn_k(map_sizes: &[usize]) -> usize {
    let smallest = map_sizes.iter().copied().min().unwrap_or(1);
    let k = if smallest % 2 == 0 { smallest - 1 } else { smallest };
    k.max(1)
}

fn class_seed(seed: u64, class: usize) -> u64 {
    seed ^ (class as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn train_offline(dataset: &[Instance], n_classes: usize, cfg: &OfflineConfig) -> Result<Model> {
    cfg.som.validate()?;
    if cfg.grid_dim == 0 {
        return Err(Error::Config("grid dimension must be at least 1".into()));
    }
    let Some(first) = dataset.first() else {
        return Err(Error::Config("offline training set is empty".into()));
    };
    let n_features = first.features.len();
    for inst in dataset {
        inst.check_features(n_features)?;
    }

    let labelsets = dataset.iter().map(labels_of).collect::<Result<Vec<_>>>()?;
    let counts = CountMatrix::build(labelsets.iter().copied(), n_classes)?;
    let missing: Vec<usize> = (0..n_classes).filter(|&j| counts.t[j][j] == 0).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "classes without training instances: {missing:?}"
        )));
    }
    let probs = ProbMatrix::from_counts(&counts)?;
    let cardinality = batch_label_cardinality(labelsets.iter().copied())?;

    let meta = if cfg.scale_features {
        DatasetMeta::fit(dataset.iter().map(|i| i.features.as_slice()), n_features, n_classes)?
    } else {
        DatasetMeta::unit(n_features, n_classes)
    };
    let prepared: Vec<Instance> = if cfg.scale_features {
        dataset
            .iter()
            .map(|i| {
                Ok(Instance::new(i.sequence_id, scale_features(&i.features, &meta)?, i.truth.clone()))
            })
            .collect::<Result<_>>()?
    } else {
        dataset.to_vec()
    };
    let subsets = build_class_subsets(&prepared, n_classes)?;

    let trained: Vec<(SomGrid, Vec<f64>, Vec<u64>)> = subsets
        .par_iter()
        .enumerate()
        .map(|(j, xs)| {
            let seed = class_seed(cfg.som.rng_seed, j);
            let mut grid = SomGrid::init(cfg.grid_dim, xs, seed)?;
            grid.batch_train(xs, &cfg.som)?;
            grid.prune();
            let (avg, mapped) = average_outputs(&grid, xs);
            Ok((grid, avg, mapped))
        })
        .collect::<Result<_>>()?;

    let mut maps = Vec::with_capacity(n_classes);
    let mut avg_output = Vec::with_capacity(n_classes);
    let mut hits = Vec::with_capacity(n_classes);
    for (grid, avg, mapped) in trained {
        maps.push(grid);
        avg_output.push(avg);
        hits.push(mapped);
    }
    let neuron_stats = NeuronStats::new(avg_output, hits, &probs);
    let k = knn_k(&maps.iter().map(SomGrid::len).collect::<Vec<_>>());

    Ok(Model {
        meta,
        scale_features: cfg.scale_features,
        maps,
        counts,
        probs,
        cardinality,
        neuron_stats,
        k,
    })
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    format_version: u32,
    model: &'a Model,
}

#[derive(Deserialize)]
struct ModelHeader {
    format: String,
    format_version: u32,
}

#[derive(Deserialize)]
struct ModelFile {
    model: Model,
}

pub fn model_to_string(model: &Model) -> String {
    let doc = ModelFileRef {
        format: MODEL_FORMAT,
        format_version: MODEL_FORMAT_VERSION,
        model,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("model serializes");
    s.push('\n');
    s
}

pub fn model_from_str(text: &str, source_name: &str) -> Result<Model> {
    let parse_err = |e: serde_json::Error| Error::Parse {
        source_name: source_name.to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    };
    let header: ModelHeader = serde_json::from_str(text).map_err(parse_err)?;
    if header.format != MODEL_FORMAT {
        return Err(Error::Parse {
            source_name: source_name.to_string(),
            line: 1,
            message: format!("not a model file (format `{}`)", header.format),
        });
    }
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_str(text).map_err(parse_err)?;
    Ok(file.model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, model_to_string(model).as_bytes())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text, &path.display().to_string())
}
