//! Residual directions: the difference between the unit-normalized mean fake
//! embedding and the unit-normalized mean real embedding, and the one-feature
//! classifier built on the projection `e . resid`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, EmbeddingMatrix};
use crate::probe::{self, GridSpec, LabeledSet, LinearModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSource {
    Residual,
    LrWeights,
    HeadProjection,
}

impl DirectionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DirectionSource::Residual => "residual",
            DirectionSource::LrWeights => "lr_weights",
            DirectionSource::HeadProjection => "head_projection",
        }
    }
}

/// A vector in embedding space used for cosine scoring and lexicon lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub vector: Vec<f64>,
    pub source: DirectionSource,
    pub domain_id: Option<String>,
    pub degenerate: bool,
}

impl Direction {
    pub fn new(vector: Vec<f64>, source: DirectionSource) -> Self {
        let degenerate = norm(&vector) == 0.0;
        Self {
            vector,
            source,
            domain_id: None,
            degenerate,
        }
    }

    pub fn from_model(model: &LinearModel) -> Self {
        let mut d = Self::new(model.weights.clone(), DirectionSource::LrWeights);
        d.domain_id = model.train_meta.domain.clone();
        d
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub(crate) fn require_usable(&self, dim: usize) -> Result<()> {
        if self.vector.len() != dim {
            return Err(Error::dims(dim, self.vector.len(), "direction vs features"));
        }
        if self.degenerate {
            return Err(Error::DegenerateDirection);
        }
        Ok(())
    }
}

/// Unit-normalizes `v`, mapping the zero vector to itself. Returns whether `v` was zero.
fn norm_or_zero(v: Vec<f64>) -> (Vec<f64>, bool) {
    let n = norm(&v);
    if n == 0.0 {
        (v, true)
    } else {
        (v.into_iter().map(|x| x / n).collect(), false)
    }
}

/// `Norm[mean(fake)] - Norm[mean(real)]`. Normalization applies to the means, not
/// to individual rows.
pub fn compute_residual(fake: &EmbeddingMatrix, real: &EmbeddingMatrix) -> Result<Direction> {
    if fake.cols() != real.cols() {
        return Err(Error::dims(real.cols(), fake.cols(), "fake vs real columns"));
    }
    if fake.rows() == 0 || real.rows() == 0 {
        return Err(Error::EmptySet("residual needs fake and real rows".into()));
    }
    let (fake_unit, fake_zero) = norm_or_zero(fake.mean_row());
    let (real_unit, real_zero) = norm_or_zero(real.mean_row());
    let vector: Vec<f64> = fake_unit.iter().zip(&real_unit).map(|(f, r)| f - r).collect();
    let degenerate = fake_zero || real_zero || vector.iter().all(|&v| v == 0.0);
    Ok(Direction {
        vector,
        source: DirectionSource::Residual,
        domain_id: None,
        degenerate,
    })
}

/// Cosine similarity of every row with `dir`.
pub fn residual_scores(dir: &Direction, features: &EmbeddingMatrix) -> Result<Vec<f64>> {
    dir.require_usable(features.cols())?;
    let dn = norm(&dir.vector);
    features
        .iter_rows()
        .enumerate()
        .map(|(i, r)| {
            let rn = norm(r);
            if rn == 0.0 {
                return Err(Error::ZeroRow(i));
            }
            Ok((dot(r, &dir.vector) / (rn * dn)).clamp(-1.0, 1.0))
        })
        .collect()
}

/// Replaces every row by its scalar projection `e . resid`.
pub fn project(dir: &Direction, set: &LabeledSet) -> Result<LabeledSet> {
    dir.require_usable(set.dim())?;
    let values: Vec<f64> = set
        .features
        .iter_rows()
        .map(|r| dot(r, &dir.vector))
        .collect();
    LabeledSet::new(
        EmbeddingMatrix::new(values.len(), 1, values)?,
        set.labels.clone(),
    )
}

/// One-feature detector: bias-free LR on `e . resid`.
#[derive(Debug, Clone)]
pub struct ResidualClassifier {
    pub direction: Direction,
    /// LR over the single projected feature.
    pub model: LinearModel,
    /// Decision threshold on the cosine score. A bias-free 1-d model always splits
    /// at zero; `real_above` says which side is classified real.
    pub threshold: f64,
    pub real_above: bool,
}

impl ResidualClassifier {
    pub fn predict(&self, features: &EmbeddingMatrix) -> Result<Vec<bool>> {
        let projected = project(
            &self.direction,
            &LabeledSet::new(features.clone(), vec![false; features.rows()])?,
        )?;
        self.model.predict(&projected.features)
    }

    pub fn accuracy(&self, test: &LabeledSet) -> Result<f64> {
        let projected = project(&self.direction, test)?;
        probe::accuracy(&self.model, &projected)
    }

    /// The direction in model-file form: weights are the residual vector, the 1-d fit
    /// is recorded in `train_meta`.
    pub fn to_model_file(&self) -> LinearModel {
        let mut meta = self.model.train_meta.clone();
        meta.domain = self.direction.domain_id.clone();
        meta.extra.insert("scalar_weight".into(), json!(self.model.weights[0]));
        meta.extra.insert("threshold".into(), json!(self.threshold));
        meta.extra.insert("real_above".into(), json!(self.real_above));
        meta.extra.insert("degenerate".into(), json!(self.direction.degenerate));
        LinearModel {
            weights: self.direction.vector.clone(),
            hyperparams: self.model.hyperparams,
            feature_mask: self.model.feature_mask.clone(),
            train_meta: meta,
        }
    }
}

/// Fits the 1-d LR on projections of both classes via grid search.
pub fn fit_residual_classifier(
    dir: &Direction,
    train: &LabeledSet,
    val: &LabeledSet,
    grid: &GridSpec,
    tol: f64,
) -> Result<ResidualClassifier> {
    let train_p = project(dir, train)?;
    let val_p = project(dir, val)?;
    let fit = probe::grid_search(&train_p, &val_p, grid, tol)?;
    let real_above = fit.model.weights[0] >= 0.0;
    Ok(ResidualClassifier {
        direction: dir.clone(),
        model: fit.model,
        threshold: 0.0,
        real_above,
    })
}
