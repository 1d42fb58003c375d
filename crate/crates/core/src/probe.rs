//! Bias-free L2-regularized logistic regression on frozen embeddings.
//!
//! Labels follow the convention real = `true` (1), generated = `false` (0). The model
//! has no intercept, so the decision is the sign of `w . x`; a score of exactly 0.5
//! (`w . x == 0`) is classified as real.
//!
//! The objective is the mean log-loss plus `|w|^2 / (2 C N)`, which is the usual
//! `C`-parameterization divided by `C N`, so `C` values carry their familiar meaning.
//! Training starts from zero and runs a deterministic L-BFGS, so identical inputs
//! give bit-identical weights.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, EmbeddingMatrix};
use crate::optim;

pub const DEFAULT_TOL: f64 = 1e-6;

/// Features with binary labels (`true` = real).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: EmbeddingMatrix,
    pub labels: Vec<bool>,
}

impl LabeledSet {
    pub fn new(features: EmbeddingMatrix, labels: Vec<bool>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dims(features.rows(), labels.len(), "labels vs rows"));
        }
        Ok(Self { features, labels })
    }

    /// Real rows first, then fake rows.
    pub fn from_cells(real: &EmbeddingMatrix, fake: &EmbeddingMatrix) -> Result<Self> {
        let features = EmbeddingMatrix::vstack(&[real, fake])?;
        let mut labels = vec![true; real.rows()];
        labels.resize(real.rows() + fake.rows(), false);
        Self::new(features, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_real(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let r = self.n_real();
        r > 0 && r < self.len()
    }

    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_columns(columns)?,
            labels: self.labels.clone(),
        })
    }

    pub fn concat(&self, other: &LabeledSet) -> Result<Self> {
        let features = EmbeddingMatrix::vstack(&[&self.features, &other.features])?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Self::new(features, labels)
    }

    /// Rows scaled to unit L2 norm; zero rows are left as they are.
    pub fn l2_normalize_rows(&self) -> Result<Self> {
        let features = self.features.map_rows(|r| {
            let n = dot(r, r).sqrt();
            if n > 0.0 {
                r.iter().map(|v| v / n).collect()
            } else {
                r.to_vec()
            }
        })?;
        Self::new(features, self.labels.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub c_reg: f64,
    pub max_iter: usize,
}

/// Hyperparameter grid. The default is the full 8 x 6 grid used for the
/// published baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub c_values: Vec<f64>,
    pub max_iter_values: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            c_values: vec![0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 10.0],
            max_iter_values: vec![10, 50, 100, 500, 1000, 5000],
        }
    }
}

impl GridSpec {
    pub fn new(c_values: Vec<f64>, max_iter_values: Vec<usize>) -> Result<Self> {
        let grid = Self {
            c_values,
            max_iter_values,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn single(c_reg: f64, max_iter: usize) -> Self {
        Self {
            c_values: vec![c_reg],
            max_iter_values: vec![max_iter],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_values.is_empty() || self.max_iter_values.is_empty() {
            return Err(Error::BadSchema("grid lists must be non-empty".into()));
        }
        if self.c_values.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::BadSchema("c_values must be positive and finite".into()));
        }
        if self.max_iter_values.contains(&0) {
            return Err(Error::BadSchema("max_iter_values must be positive".into()));
        }
        Ok(())
    }

    /// Grid cells in tie-break order: ascending `c_reg`, then ascending `max_iter`.
    pub fn cells(&self) -> Vec<Hyperparams> {
        let mut cs = self.c_values.clone();
        cs.sort_by(f64::total_cmp);
        cs.dedup();
        let mut its = self.max_iter_values.clone();
        its.sort_unstable();
        its.dedup();
        cs.iter()
            .flat_map(|&c_reg| its.iter().map(move |&max_iter| Hyperparams { c_reg, max_iter }))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let grid: GridSpec = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        grid.validate()?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub n_real: usize,
    pub n_fake: usize,
    pub iterations: usize,
    pub converged: bool,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// A trained bias-free linear detector. `weights` live in the (possibly masked)
/// feature space named by `feature_mask`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    #[serde(flatten)]
    pub hyperparams: Hyperparams,
    pub feature_mask: Option<Vec<usize>>,
    pub train_meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(flatten)]
    model: LinearModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn to_json(&self, source: Option<&str>) -> String {
        let file = ModelFile {
            model: self.clone(),
            source: source.map(str::to_string),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>, source: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json(source) + "\n").map_err(|e| Error::io(path, e))
    }

    /// Loads a model file, returning the model and its optional `source` tag.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<String>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        if file.model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::BadSchema("model weights must be finite".into()));
        }
        Ok((file.model, file.source))
    }

    /// Raw margins `w . x`.
    pub fn margins(&self, features: &EmbeddingMatrix) -> Result<Vec<f64>> {
        if features.cols() != self.weights.len() {
            return Err(Error::dims(self.weights.len(), features.cols(), "model weights vs features"));
        }
        Ok(features.iter_rows().map(|r| dot(&self.weights, r)).collect())
    }

    /// Predicted labels, `true` = real; a zero margin counts as real.
    pub fn predict(&self, features: &EmbeddingMatrix) -> Result<Vec<bool>> {
        Ok(self.margins(features)?.into_iter().map(|m| m >= 0.0).collect())
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// The training objective at `w`, writing its gradient into `grad`.
pub fn objective(set: &LabeledSet, c_reg: f64, w: &[f64], grad: &mut [f64]) -> f64 {
    let n = set.len() as f64;
    let lambda = 1.0 / (c_reg * n);
    grad.iter_mut().zip(w).for_each(|(g, wi)| *g = lambda * wi);
    let mut loss = 0.0;
    for (row, &real) in set.features.iter_rows().zip(&set.labels) {
        let y = if real { 1.0 } else { -1.0 };
        let z = y * dot(w, row);
        loss += softplus(-z);
        // d/dw softplus(-y w.x) = -y sigmoid(-z) x
        let coef = -y * sigmoid(-z) / n;
        grad.iter_mut().zip(row).for_each(|(g, x)| *g += coef * x);
    }
    loss / n + 0.5 * lambda * dot(w, w)
}

pub fn train_logreg(train: &LabeledSet, c_reg: f64, max_iter: usize, tol: f64) -> Result<LinearModel> {
    if train.dim() == 0 {
        return Err(Error::Degenerate("no features".into()));
    }
    if !train.has_both_classes() {
        return Err(Error::SingleClass);
    }
    if !(c_reg.is_finite() && c_reg > 0.0) {
        return Err(Error::OutOfRange(format!("c_reg must be positive, got {c_reg}")));
    }
    if max_iter == 0 || tol.is_nan() || tol <= 0.0 {
        return Err(Error::OutOfRange("max_iter and tol must be positive".into()));
    }
    let min = optim::lbfgs(
        |w, g| objective(train, c_reg, w, g),
        vec![0.0; train.dim()],
        max_iter,
        tol,
    );
    let n_real = train.n_real();
    Ok(LinearModel {
        weights: min.x,
        hyperparams: Hyperparams { c_reg, max_iter },
        feature_mask: None,
        train_meta: TrainMeta {
            domain: None,
            n_real,
            n_fake: train.len() - n_real,
            iterations: min.iterations,
            converged: min.converged,
            extra: BTreeMap::new(),
        },
    })
}

/// `sigma(w . x)` per row: the probability of the real class.
pub fn predict_scores(model: &LinearModel, features: &EmbeddingMatrix) -> Result<Vec<f64>> {
    Ok(model.margins(features)?.into_iter().map(sigmoid).collect())
}

pub fn accuracy(model: &LinearModel, test: &LabeledSet) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptySet("test set".into()));
    }
    let predicted = model.predict(&test.features)?;
    let correct = predicted
        .iter()
        .zip(&test.labels)
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Final model, refit on train and validation together.
    pub model: LinearModel,
    pub chosen: Hyperparams,
    /// Validation accuracy per grid cell, in tie-break order.
    pub val_scores: Vec<(Hyperparams, f64)>,
}

/// Index of the first maximum; earlier entries win ties.
pub(crate) fn first_argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Picks the grid cell with the best validation accuracy, then refits on train and
/// validation together with that cell.
pub fn grid_search(train: &LabeledSet, val: &LabeledSet, grid: &GridSpec, tol: f64) -> Result<GridResult> {
    grid.validate()?;
    if train.dim() != val.dim() {
        return Err(Error::dims(train.dim(), val.dim(), "train vs val features"));
    }
    if !val.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let cells = grid.cells();
    let val_scores = cells
        .par_iter()
        .map(|hp| {
            let model = train_logreg(train, hp.c_reg, hp.max_iter, tol)?;
            Ok((*hp, accuracy(&model, val)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = first_argmax(val_scores.iter().map(|(_, a)| *a)).expect("grid is non-empty");
    let chosen = val_scores[best].0;
    let merged = train.concat(val)?;
    let model = train_logreg(&merged, chosen.c_reg, chosen.max_iter, tol)?;
    Ok(GridResult {
        model,
        chosen,
        val_scores,
    })
}
