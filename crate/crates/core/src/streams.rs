//! Stream sources: a spherical-cluster generator with optional drift, a
//! delimited-text reader and writer, and the offline/online split.
//!
//! Stream files are CSV with a header. Feature columns are named `f0..f{m-1}`
//! and label columns `y0..y{n-1}` holding 0/1 indicators.

use std::fs;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{distance, Instance, LabelSet};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    #[default]
    None,
    /// Every `sd` instances each center moves `drift_step` along its own
    /// fixed random unit direction.
    Displacement,
    /// Every `sd` instances all centers rotate by `drift_step` radians about
    /// the origin in the plane of the first two features.
    Rotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphericalStreamConfig {
    pub n_classes: usize,
    pub n_features: usize,
    pub cluster_centers: Vec<Vec<f64>>,
    pub cluster_radii: Vec<f64>,
    pub stream_length: usize,
    #[serde(default)]
    pub sd: usize,
    #[serde(default)]
    pub drift_kind: DriftKind,
    #[serde(default)]
    pub drift_step: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SphericalStreamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes == 0 || self.n_features == 0 {
            return bad("n_classes and n_features must be positive".into());
        }
        if self.cluster_centers.len() != self.n_classes {
            return bad(format!(
                "cluster_centers has {} entries for {} classes",
                self.cluster_centers.len(),
                self.n_classes
            ));
        }
        if self.cluster_centers.iter().any(|c| c.len() != self.n_features) {
            return bad(format!("every cluster center needs {} coordinates", self.n_features));
        }
        if self.cluster_centers.iter().flatten().any(|v| !v.is_finite()) {
            return bad("cluster_centers must be finite".into());
        }
        if self.cluster_radii.len() != self.n_classes {
            return bad(format!(
                "cluster_radii has {} entries for {} classes",
                self.cluster_radii.len(),
                self.n_classes
            ));
        }
        if self.cluster_radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("cluster_radii must be positive".into());
        }
        if self.drift_kind != DriftKind::None {
            if self.sd == 0 {
                return bad("sd must be at least 1 when drift is enabled".into());
            }
            if !(self.drift_step > 0.0 && self.drift_step.is_finite()) {
                return bad("drift_step must be positive when drift is enabled".into());
            }
        }
        if self.drift_kind == DriftKind::Rotation && self.n_features < 2 {
            return bad("rotation drift needs at least two features".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("generator config serializes")
    }
}

/// Iterator over a generated spherical-cluster stream. Each instance is
/// labeled with every cluster whose ball contains it.
#[derive(Debug, Clone)]
pub struct SphericalStream {
    cfg: SphericalStreamConfig,
    rng: ChaCha8Rng,
    centers: Vec<Vec<f64>>,
    directions: Vec<Vec<f64>>,
    emitted: usize,
}

impl SphericalStream {
    pub fn new(cfg: SphericalStreamConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let directions = if cfg.drift_kind == DriftKind::Displacement {
            (0..cfg.n_classes)
                .map(|_| unit_vector(&mut rng, cfg.n_features))
                .collect()
        } else {
            Vec::new()
        };
        Ok(SphericalStream {
            centers: cfg.cluster_centers.clone(),
            cfg,
            rng,
            directions,
            emitted: 0,
        })
    }

    /// Current cluster centers (after any drift applied so far).
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn config(&self) -> &SphericalStreamConfig {
        &self.cfg
    }

    fn drift(&mut self) {
        match self.cfg.drift_kind {
            DriftKind::None => {}
            DriftKind::Displacement => {
                for (c, dir) in self.centers.iter_mut().zip(&self.directions) {
                    for (v, d) in c.iter_mut().zip(dir) {
                        *v += self.cfg.drift_step * d;
                    }
                }
            }
            DriftKind::Rotation => {
                let (s, co) = self.cfg.drift_step.sin_cos();
                for c in &mut self.centers {
                    let (a, b) = (c[0], c[1]);
                    c[0] = co * a - s * b;
                    c[1] = s * a + co * b;
                }
            }
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl Iterator for SphericalStream {
    type Item = Instance;

    fn next(&mut self) -> Option<Instance> {
        if self.emitted >= self.cfg.stream_length {
            return None;
        }
        let m = self.cfg.n_features;
        let chosen = self.rng.random_range(0..self.cfg.n_classes);
        let dir = unit_vector(&mut self.rng, m);
        let u: f64 = self.rng.random();
        let r = self.cfg.cluster_radii[chosen] * u.powf(1.0 / m as f64);
        let point: Vec<f64> = self.centers[chosen]
            .iter()
            .zip(&dir)
            .map(|(c, d)| c + r * d)
            .collect();
        let mut labels: LabelSet = self
            .centers
            .iter()
            .zip(&self.cfg.cluster_radii)
            .enumerate()
            .filter(|(_, (c, &rad))| distance(&point, c) <= rad)
            .map(|(j, _)| j)
            .collect();
        // Rounding can put a boundary sample a hair outside its own ball.
        labels.insert(chosen);

        let inst = Instance::new(self.emitted as u64, point, Some(labels));
        self.emitted += 1;
        if self.cfg.drift_kind != DriftKind::None && self.emitted.is_multiple_of(self.cfg.sd) {
            self.drift();
        }
        Some(inst)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.cfg.stream_length - self.emitted;
        (left, Some(left))
    }
}

pub fn generate_spherical(cfg: &SphericalStreamConfig) -> Result<Vec<Instance>> {
    Ok(SphericalStream::new(cfg.clone())?.collect())
}

/// Which columns of a delimited file hold features and which hold labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSchema {
    pub feature_columns: Vec<String>,
    pub label_columns: Vec<String>,
}

impl StreamSchema {
    /// The default schema for `m` features and `n` labels: `f0..`, `y0..`.
    pub fn standard(n_features: usize, n_classes: usize) -> Self {
        StreamSchema {
            feature_columns: (0..n_features).map(|i| format!("f{i}")).collect(),
            label_columns: (0..n_classes).map(|i| format!("y{i}")).collect(),
        }
    }

    /// Infers the schema from `f<i>` / `y<i>` header names.
    pub fn infer(header: &[&str]) -> Result<Self> {
        let is_indexed = |name: &str, prefix: char| {
            name.strip_prefix(prefix)
                .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        };
        let mut feature_columns = Vec::new();
        let mut label_columns = Vec::new();
        for &h in header {
            if is_indexed(h, 'f') {
                feature_columns.push(h.to_string());
            } else if is_indexed(h, 'y') {
                label_columns.push(h.to_string());
            } else {
                return Err(Error::Parse {
                    source_name: "header".into(),
                    line: 1,
                    message: format!("column `{h}` is neither a feature (f<i>) nor a label (y<i>)"),
                });
            }
        }
        if feature_columns.is_empty() || label_columns.is_empty() {
            return Err(Error::Parse {
                source_name: "header".into(),
                line: 1,
                message: "need at least one feature and one label column".into(),
            });
        }
        Ok(StreamSchema {
            feature_columns,
            label_columns,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFrequency {
    pub positives: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedStream {
    pub n_features: usize,
    pub n_classes: usize,
    pub instances: Vec<Instance>,
    pub label_frequency: Vec<LabelFrequency>,
}

impl LoadedStream {
    /// Labels that never occur in the file.
    pub fn zero_labels(&self) -> Vec<usize> {
        self.label_frequency
            .iter()
            .enumerate()
            .filter(|(_, f)| f.positives == 0)
            .map(|(j, _)| j)
            .collect()
    }
}

fn label_frequency(instances: &[Instance], n_classes: usize) -> Vec<LabelFrequency> {
    let mut pos = vec![0u64; n_classes];
    for y in instances.iter().filter_map(|i| i.truth.as_ref()) {
        for c in y.iter() {
            pos[c] += 1;
        }
    }
    let total = instances.len().max(1) as f64;
    pos.into_iter()
        .map(|p| LabelFrequency {
            positives: p,
            fraction: p as f64 / total,
        })
        .collect()
}

/// Reads a stream file. With `schema = None` the schema is inferred from the header.
pub fn load_delimited(path: &Path, schema: Option<&StreamSchema>) -> Result<LoadedStream> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_delimited(&text, &path.display().to_string(), schema)
}

pub fn parse_delimited(text: &str, source_name: &str, schema: Option<&StreamSchema>) -> Result<LoadedStream> {
    let parse_err = |line: u64, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let inferred;
    let schema = match schema {
        Some(s) => s,
        None => {
            inferred = StreamSchema::infer(&header_refs).map_err(|e| match e {
                Error::Parse { line, message, .. } => parse_err(line, message),
                other => other,
            })?;
            &inferred
        }
    };
    let locate = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
    };
    let feat_idx = schema.feature_columns.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let label_idx = schema.label_columns.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;

    let mut instances = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(row as u64 + 2, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let features = feat_idx
            .iter()
            .map(|&i| {
                let cell = &record[i];
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(parse_err(line, format!("column `{}`: `{cell}` is not a finite number", header[i]))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut labels = LabelSet::empty();
        for (c, &i) in label_idx.iter().enumerate() {
            match &record[i] {
                "1" => labels.insert(c),
                "0" => {}
                other => {
                    return Err(parse_err(
                        line,
                        format!("column `{}`: label indicator must be 0 or 1, got `{other}`", header[i]),
                    ))
                }
            }
        }
        instances.push(Instance::new(row as u64, features, Some(labels)));
    }
    let n_classes = label_idx.len();
    let label_frequency = label_frequency(&instances, n_classes);
    Ok(LoadedStream {
        n_features: feat_idx.len(),
        n_classes,
        instances,
        label_frequency,
    })
}

/// Serializes instances in the standard stream-file layout.
pub fn stream_to_string(instances: &[Instance], n_features: usize, n_classes: usize) -> Result<String> {
    let schema = StreamSchema::standard(n_features, n_classes);
    let mut out = String::new();
    let header: Vec<&str> = schema
        .feature_columns
        .iter()
        .chain(&schema.label_columns)
        .map(String::as_str)
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for inst in instances {
        inst.check_features(n_features)?;
        let empty = LabelSet::empty();
        let y = inst.truth.as_ref().unwrap_or(&empty);
        y.check_bounds(n_classes)?;
        let mut cells: Vec<String> = inst.features.iter().map(|v| format!("{v:?}")).collect();
        cells.extend((0..n_classes).map(|c| if y.contains(c) { "1" } else { "0" }.to_string()));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_stream(path: &Path, instances: &[Instance], n_features: usize, n_classes: usize) -> Result<()> {
    crate::fsutil::write_atomic(path, stream_to_string(instances, n_features, n_classes)?.as_bytes())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// The first `floor(fraction * len)` rows.
    #[default]
    Head,
    /// Round-robin over classes so each class contributes about equally.
    Stratified,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(SplitMode::Head),
            "stratified" => Ok(SplitMode::Stratified),
            other => Err(Error::Config(format!(
                "unknown split mode `{other}` (expected head or stratified)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Instance>,
    /// The remaining rows in their original order.
    pub stream: Vec<Instance>,
    /// Classes with no instance in `train`.
    pub missing_classes: Vec<usize>,
}

pub fn split_offline(instances: Vec<Instance>, n_classes: usize, fraction: f64, mode: SplitMode) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("offline fraction {fraction} outside (0, 1)")));
    }
    let target = (fraction * instances.len() as f64).floor() as usize;
    let selected: Vec<bool> = match mode {
        SplitMode::Head => (0..instances.len()).map(|i| i < target).collect(),
        SplitMode::Stratified => stratified_selection(&instances, n_classes, target),
    };
    let mut train = Vec::with_capacity(target);
    let mut stream = Vec::with_capacity(instances.len() - target);
    for (inst, sel) in instances.into_iter().zip(selected) {
        if sel {
            train.push(inst);
        } else {
            stream.push(inst);
        }
    }
    let mut present = vec![false; n_classes];
    for y in train.iter().filter_map(|i| i.truth.as_ref()) {
        for c in y.iter().filter(|&c| c < n_classes) {
            present[c] = true;
        }
    }
    let missing_classes: Vec<usize> = (0..n_classes).filter(|&c| !present[c]).collect();
    if !missing_classes.is_empty() {
        warn!("classes absent from the offline split: {missing_classes:?}");
    }
    Ok(Split {
        train,
        stream,
        missing_classes,
    })
}

fn stratified_selection(instances: &[Instance], n_classes: usize, target: usize) -> Vec<bool> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, inst) in instances.iter().enumerate() {
        if let Some(y) = &inst.truth {
            for c in y.iter().filter(|&c| c < n_classes) {
                by_class[c].push(i);
            }
        }
    }
    let mut selected = vec![false; instances.len()];
    let mut cursor = vec![0usize; n_classes];
    let mut taken = 0;
    while taken < target {
        let mut progressed = false;
        for c in 0..n_classes {
            if taken == target {
                break;
            }
            let rows = &by_class[c];
            while cursor[c] < rows.len() && selected[rows[cursor[c]]] {
                cursor[c] += 1;
            }
            if let Some(&row) = rows.get(cursor[c]) {
                selected[row] = true;
                taken += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    selected
}
