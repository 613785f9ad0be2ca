//! Datasets: CSV ingestion, toy generators, splitting and standardization.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bnn::Target;
use crate::error::{Error, Result};
use crate::math::RngStream;

const STD_FLOOR: f64 = 1e-8;

/// Per-feature standardization statistics, fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    /// Present for real-valued targets.
    pub target_mean: Option<Vec<f64>>,
    pub target_std: Option<Vec<f64>>,
}

impl Normalization {
    pub fn fit(inputs: &[Vec<f64>], targets: &[Target]) -> Result<Self> {
        let (input_mean, input_std) = column_stats(inputs)?;
        let real: Option<Vec<Vec<f64>>> = targets
            .iter()
            .map(|t| match t {
                Target::Real(y) => Some(y.clone()),
                _ => None,
            })
            .collect();
        let (target_mean, target_std) = match real {
            Some(ys) if !ys.is_empty() => {
                let (m, s) = column_stats(&ys)?;
                (Some(m), Some(s))
            }
            _ => (None, None),
        };
        Ok(Normalization {
            input_mean,
            input_std,
            target_mean,
            target_std,
        })
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn normalize_target(&self, t: &Target) -> Target {
        match (t, &self.target_mean, &self.target_std) {
            (Target::Real(y), Some(m), Some(s)) => {
                Target::Real(y.iter().zip(m).zip(s).map(|((v, m), s)| (v - m) / s).collect())
            }
            _ => t.clone(),
        }
    }

    /// Maps a prediction in standardized units back to original units.
    pub fn denormalize_target(&self, y: &[f64]) -> Vec<f64> {
        match (&self.target_mean, &self.target_std) {
            (Some(m), Some(s)) => y.iter().zip(m).zip(s).map(|((v, m), s)| v * s + m).collect(),
            _ => y.to_vec(),
        }
    }

    /// Scale factor of each target coordinate (1 when targets are not real).
    pub fn target_scale(&self, k: usize) -> f64 {
        self.target_std.as_ref().map_or(1.0, |s| s[k])
    }
}

fn column_stats(rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = rows.first().ok_or_else(|| Error::Dataset("no rows to fit statistics on".into()))?;
    let d = first.len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    Ok((mean, std))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
    pub feature_names: Vec<String>,
    /// Original label text per class index; empty for real targets.
    pub class_labels: Vec<String>,
    /// Set once the dataset has been standardized.
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Target>, feature_names: Vec<String>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Dataset(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return Err(Error::Dataset("inputs have differing widths".into()));
            }
            if feature_names.len() != first.len() {
                return Err(Error::Dataset("feature names do not match the input width".into()));
            }
        }
        Ok(Dataset {
            inputs,
            targets,
            feature_names,
            class_labels: Vec::new(),
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Width of real targets, or number of classes. The label table counts
    /// too, so a split that misses a class keeps the full output width.
    pub fn output_dim(&self) -> usize {
        self.targets
            .iter()
            .map(|t| match t {
                Target::Real(y) => y.len(),
                Target::Class(c) => c + 1,
                Target::Single { index, .. } => index + 1,
            })
            .chain(self.is_classification().then_some(self.class_labels.len()))
            .max()
            .unwrap_or(0)
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.targets.first(), Some(Target::Class(_)))
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            class_labels: self.class_labels.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Applies `norm` to every row and records it.
    pub fn normalized(&self, norm: &Normalization) -> Dataset {
        Dataset {
            inputs: self.inputs.iter().map(|x| norm.normalize_input(x)).collect(),
            targets: self.targets.iter().map(|t| norm.normalize_target(t)).collect(),
            feature_names: self.feature_names.clone(),
            class_labels: self.class_labels.clone(),
            normalization: Some(norm.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Real,
    Class,
}

/// How to read a CSV file. Columns are named by header text or by 0-based
/// position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target_column: String,
    pub target_kind: TargetKind,
    pub categorical_columns: Vec<String>,
    pub has_header: bool,
}

impl CsvSchema {
    pub fn new(target_column: impl Into<String>, target_kind: TargetKind) -> Self {
        CsvSchema {
            target_column: target_column.into(),
            target_kind,
            categorical_columns: Vec::new(),
            has_header: true,
        }
    }
}

fn resolve_column(name: &str, header: &[String], width: usize, path: &Path) -> Result<usize> {
    if let Some(i) = header.iter().position(|h| h == name) {
        return Ok(i);
    }
    match name.parse::<usize>() {
        Ok(i) if i < width => Ok(i),
        _ => Err(data_err(path, format!("unknown column '{name}'"))),
    }
}

fn data_err(path: &Path, message: String) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        message,
    }
}

/// Loads a CSV file. Categorical columns are one-hot encoded in order of
/// first appearance. Class labels that are all non-negative integers are used
/// as class indices directly; otherwise labels are numbered in order of first
/// appearance.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(path, e.to_string()))?;
    let header: Vec<String> = if schema.has_header {
        reader
            .headers()
            .map_err(|e| data_err(path, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| data_err(path, e.to_string()))?;
        let line = rec.position().map_or(rows.len() + 1, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    let width = match rows.first() {
        Some((_, r)) => r.len(),
        None => return Err(data_err(path, "no data rows".into())),
    };
    if schema.has_header && header.len() != width {
        return Err(data_err(path, "header width differs from the data rows".into()));
    }
    let names: Vec<String> = if schema.has_header {
        header.clone()
    } else {
        (0..width).map(|i| format!("c{i}")).collect()
    };

    let target = resolve_column(&schema.target_column, &header, width, path)?;
    let mut categorical = vec![false; width];
    for c in &schema.categorical_columns {
        categorical[resolve_column(c, &header, width, path)?] = true;
    }
    if categorical[target] {
        return Err(data_err(path, "the target column cannot also be categorical".into()));
    }

    // first-appearance category tables
    let mut levels: Vec<Vec<String>> = vec![Vec::new(); width];
    let mut lookup: Vec<HashMap<String, usize>> = vec![HashMap::new(); width];
    for (_, r) in &rows {
        for c in (0..width).filter(|&c| categorical[c]) {
            if !lookup[c].contains_key(&r[c]) {
                lookup[c].insert(r[c].clone(), levels[c].len());
                levels[c].push(r[c].clone());
            }
        }
    }

    let mut feature_names = Vec::new();
    for c in (0..width).filter(|&c| c != target) {
        if categorical[c] {
            feature_names.extend(levels[c].iter().map(|l| format!("{}={}", names[c], l)));
        } else {
            feature_names.push(names[c].clone());
        }
    }

    let labels = match schema.target_kind {
        TargetKind::Class => Some(class_encoding(rows.iter().map(|(_, r)| r[target].as_str()))),
        TargetKind::Real => None,
    };

    let mut inputs = Vec::with_capacity(rows.len());
    let mut targets = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        let parse = |c: usize| -> Result<f64> {
            r[c].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| data_err(path, format!("row {line}: cannot parse '{}' in column '{}'", r[c], names[c])))
        };
        let mut x = Vec::with_capacity(feature_names.len());
        for c in (0..width).filter(|&c| c != target) {
            if categorical[c] {
                let hit = lookup[c][&r[c]];
                x.extend((0..levels[c].len()).map(|i| if i == hit { 1.0 } else { 0.0 }));
            } else {
                x.push(parse(c)?);
            }
        }
        inputs.push(x);
        targets.push(match &labels {
            Some((map, _)) => Target::Class(map[&r[target]]),
            None => Target::Real(vec![parse(target)?]),
        });
    }
    let mut d = Dataset::new(inputs, targets, feature_names)?;
    if let Some((_, names)) = labels {
        d.class_labels = names;
    }
    Ok(d)
}

fn class_encoding<'a>(labels: impl Iterator<Item = &'a str> + Clone) -> (HashMap<String, usize>, Vec<String>) {
    let numeric: Option<Vec<(String, usize)>> =
        labels.clone().map(|l| l.parse::<usize>().ok().map(|v| (l.to_string(), v))).collect();
    if let Some(pairs) = numeric {
        let classes = pairs.iter().map(|p| p.1 + 1).max().unwrap_or(0);
        return (pairs.into_iter().collect(), (0..classes).map(|c| c.to_string()).collect());
    }
    let mut map = HashMap::new();
    let mut names = Vec::new();
    for l in labels {
        if !map.contains_key(l) {
            map.insert(l.to_string(), names.len());
            names.push(l.to_string());
        }
    }
    (map, names)
}

/// Noise-free curve of the toy regression task.
pub fn regression_curve(z: f64) -> f64 {
    z + (4.0 * z).sin() + (13.0 * z).sin()
}

pub const REGRESSION_NOISE_STD: f64 = 0.03;

/// Twenty points: twelve with `x ~ U(0, 0.6)`, eight with `x ~ U(0.8, 1)`,
/// `y = regression_curve(x + ε)` with `ε ~ N(0, 0.03²)`.
pub fn synthetic_regression(stream: &mut RngStream) -> Dataset {
    let mut inputs = Vec::with_capacity(20);
    let mut targets = Vec::with_capacity(20);
    for i in 0..20 {
        let x = if i < 12 {
            stream.uniform_range(0.0, 0.6)
        } else {
            stream.uniform_range(0.8, 1.0)
        };
        let z = x + REGRESSION_NOISE_STD * stream.normal();
        inputs.push(vec![x]);
        targets.push(Target::Real(vec![regression_curve(z)]));
    }
    Dataset::new(inputs, targets, vec!["x".into()]).expect("consistent by construction")
}

/// Ten points: five in `[-3,-1]²` labelled 0, five in `[1,3]²` labelled 1.
pub fn synthetic_classification(stream: &mut RngStream) -> Dataset {
    let mut inputs = Vec::with_capacity(10);
    let mut targets = Vec::with_capacity(10);
    for (label, lo, hi) in [(0, -3.0, -1.0), (1, 1.0, 3.0)] {
        for _ in 0..5 {
            inputs.push(vec![stream.uniform_range(lo, hi), stream.uniform_range(lo, hi)]);
            targets.push(Target::Class(label));
        }
    }
    Dataset::new(inputs, targets, vec!["x1".into(), "x2".into()]).expect("consistent by construction")
}

/// Random split, then standardization with statistics of the training part.
pub fn split_and_normalize(dataset: &Dataset, train_fraction: f64, stream: &mut RngStream) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config("train fraction must lie in (0, 1)".into()));
    }
    let n = dataset.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Dataset(format!("{n} rows cannot be split at {train_fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    stream.shuffle(&mut idx);
    let (train_idx, test_idx) = idx.split_at(n_train);
    let train = dataset.subset(train_idx);
    let test = dataset.subset(test_idx);
    let norm = Normalization::fit(&train.inputs, &train.targets)?;
    Ok((train.normalized(&norm), test.normalized(&norm)))
}
