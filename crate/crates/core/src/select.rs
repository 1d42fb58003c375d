//! Greedy backward feature removal for cross-domain transfer.
//!
//! For an ordered pair of search domains `(D1, D2)`, each step trains one
//! classifier per remaining feature with that feature dropped (on D1's train
//! cells), scores it on D2's test cells, and removes the feature whose drop gives
//! the best out-of-domain accuracy. Hyperparameters stay fixed at the winner of the
//! full-feature grid search on D1.
//!
//! Two opposite traces are combined by cutting each at its best-scoring step
//! (inclusive) and taking the union of the features that survive either cut.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Domain;
use crate::error::{Error, Result};
use crate::probe::{self, first_argmax, GridSpec, Hyperparams, LabeledSet};
use crate::transfer::{self, Detector, TransferMatrix};

/// Removal order and out-of-domain scores for one search direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    /// `[source, target]` domain ids.
    pub direction: [String; 2],
    pub baseline_score: f64,
    pub removed: Vec<usize>,
    /// `scores[t]` is the accuracy after removing `removed[..=t]`.
    pub scores: Vec<f64>,
    pub hyperparams: Hyperparams,
    pub original_dim: usize,
    pub max_steps: usize,
    pub completed_steps: usize,
    /// How the best step cuts the trace; always `"inclusive"`.
    pub prefix_rule: String,
}

impl SelectionTrace {
    pub fn new(
        direction: [String; 2],
        original_dim: usize,
        hyperparams: Hyperparams,
        baseline_score: f64,
        max_steps: usize,
    ) -> Self {
        Self {
            direction,
            baseline_score,
            removed: Vec::new(),
            scores: Vec::new(),
            hyperparams,
            original_dim,
            max_steps,
            completed_steps: 0,
            prefix_rule: "inclusive".into(),
        }
    }

    /// Features not yet removed, ascending.
    pub fn remaining(&self) -> Vec<usize> {
        let mut gone = vec![false; self.original_dim];
        for &r in &self.removed {
            gone[r] = true;
        }
        (0..self.original_dim).filter(|&i| !gone[i]).collect()
    }

    /// Step with the highest score; ties go to the earliest step.
    pub fn best_step(&self) -> Option<usize> {
        first_argmax(self.scores.iter().copied())
    }

    /// Features left after cutting at the best step.
    pub fn survivors(&self) -> Vec<usize> {
        let cut = self.best_step().map_or(0, |a| a + 1);
        let mut gone = vec![false; self.original_dim];
        for &r in &self.removed[..cut] {
            gone[r] = true;
        }
        (0..self.original_dim).filter(|&i| !gone[i]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.removed.len() != self.scores.len() || self.completed_steps != self.removed.len() {
            return Err(Error::BadSchema(
                "trace removed/scores/completed_steps disagree".into(),
            ));
        }
        let mut seen = vec![false; self.original_dim];
        for &r in &self.removed {
            if r >= self.original_dim || seen[r] {
                return Err(Error::BadSchema(format!("trace removes invalid feature {r}")));
            }
            seen[r] = true;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_atomic(path.as_ref(), &serde_json::to_string_pretty(self).expect("trace serializes"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let trace: Self = read_json(path.as_ref())?;
        trace.validate()?;
        Ok(trace)
    }
}

/// Final feature subset, original indices ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub kept: Vec<usize>,
    pub original_dim: usize,
    #[serde(default)]
    pub search_pair: Vec<String>,
}

impl FeatureMask {
    pub fn all(dim: usize) -> Self {
        Self {
            kept: (0..dim).collect(),
            original_dim: dim,
            search_pair: Vec::new(),
        }
    }

    pub fn new(mut kept: Vec<usize>, original_dim: usize) -> Result<Self> {
        kept.sort_unstable();
        kept.dedup();
        if kept.is_empty() {
            return Err(Error::Degenerate("feature mask keeps nothing".into()));
        }
        if kept.last().is_some_and(|&k| k >= original_dim) {
            return Err(Error::OutOfRange(format!(
                "mask index outside dimension {original_dim}"
            )));
        }
        Ok(Self {
            kept,
            original_dim,
            search_pair: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.kept.clone(), self.original_dim).and_then(|m| {
            if m.kept == self.kept {
                Ok(())
            } else {
                Err(Error::BadSchema("mask indices must be sorted and unique".into()))
            }
        })
    }

    pub fn apply(&self, set: &LabeledSet) -> Result<LabeledSet> {
        if set.dim() != self.original_dim {
            return Err(Error::dims(self.original_dim, set.dim(), "mask vs features"));
        }
        set.select_columns(&self.kept)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_atomic(path.as_ref(), &serde_json::to_string_pretty(self).expect("mask serializes"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mask: Self = read_json(path.as_ref())?;
        mask.validate()?;
        Ok(mask)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub(crate) fn write_json_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, format!("{text}\n")).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `ceil(0.95 d)`, capped at `d - 1`.
pub fn default_max_steps(dim: usize) -> usize {
    ((0.95 * dim as f64).ceil() as usize).min(dim.saturating_sub(1))
}

/// One search direction: train cells of the source, test cells of the target.
pub struct GreedySearch<'a> {
    pub train: &'a LabeledSet,
    pub target: &'a LabeledSet,
    pub hyperparams: Hyperparams,
    pub tol: f64,
    pub checkpoint: Option<PathBuf>,
}

impl GreedySearch<'_> {
    fn score(&self, keep: &[usize]) -> Result<f64> {
        let train = self.train.select_columns(keep)?;
        let target = self.target.select_columns(keep)?;
        let model = probe::train_logreg(
            &train,
            self.hyperparams.c_reg,
            self.hyperparams.max_iter,
            self.tol,
        )?;
        probe::accuracy(&model, &target)
    }

    pub fn baseline(&self) -> Result<f64> {
        let all: Vec<usize> = (0..self.train.dim()).collect();
        self.score(&all)
    }

    /// Scores of dropping each of `current` (ascending) in turn.
    pub fn drop_one_scores(&self, current: &[usize]) -> Result<Vec<f64>> {
        if current.len() < 2 {
            return Err(Error::Degenerate("no feature left to remove".into()));
        }
        (0..current.len())
            .into_par_iter()
            .map(|j| {
                let keep: Vec<usize> = current
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .map(|(_, &f)| f)
                    .collect();
                self.score(&keep)
            })
            .collect()
    }

    /// Extends `trace` until it holds `trace.max_steps` removals, checkpointing
    /// after every step when a checkpoint path is set.
    pub fn run(&self, mut trace: SelectionTrace) -> Result<SelectionTrace> {
        trace.validate()?;
        if trace.original_dim != self.train.dim() || self.target.dim() != self.train.dim() {
            return Err(Error::dims(trace.original_dim, self.train.dim(), "trace vs search data"));
        }
        if trace.max_steps >= trace.original_dim {
            return Err(Error::OutOfRange(format!(
                "max_steps {} must be below the dimension {}",
                trace.max_steps, trace.original_dim
            )));
        }
        while trace.completed_steps < trace.max_steps {
            let current = trace.remaining();
            let scores = self.drop_one_scores(&current)?;
            let best = first_argmax(scores.iter().copied()).expect("non-empty");
            trace.removed.push(current[best]);
            trace.scores.push(scores[best]);
            trace.completed_steps += 1;
            if let Some(path) = &self.checkpoint {
                trace.save(path)?;
            }
        }
        Ok(trace)
    }
}

/// Tunes hyperparameters on the source's full features, then runs the search
/// from `source` to `target` for `max_steps` steps.
pub fn greedy_search(
    source: &Domain,
    target: &Domain,
    grid: &GridSpec,
    max_steps: usize,
    tol: f64,
) -> Result<SelectionTrace> {
    let (train, val) = source.train_val()?;
    let target_set = target.test_set()?;
    if train.dim() != target_set.dim() {
        return Err(Error::dims(train.dim(), target_set.dim(), "search domains"));
    }
    let hyperparams = probe::grid_search(&train, &val, grid, tol)?.chosen;
    let search = GreedySearch {
        train: &train,
        target: &target_set,
        hyperparams,
        tol,
        checkpoint: None,
    };
    let trace = SelectionTrace::new(
        [source.id().to_string(), target.id().to_string()],
        train.dim(),
        hyperparams,
        search.baseline()?,
        max_steps,
    );
    search.run(trace)
}

/// Union of the features surviving each trace's best cut.
pub fn combine_traces(t12: &SelectionTrace, t21: &SelectionTrace) -> Result<FeatureMask> {
    if t12.original_dim != t21.original_dim {
        return Err(Error::dims(t12.original_dim, t21.original_dim, "trace dimensions"));
    }
    if t12.direction[0] != t21.direction[1] || t12.direction[1] != t21.direction[0] {
        return Err(Error::BadSchema(format!(
            "traces {:?} and {:?} are not opposite directions of one pair",
            t12.direction, t21.direction
        )));
    }
    let mut kept = t12.survivors();
    kept.extend(t21.survivors());
    let mut mask = FeatureMask::new(kept, t12.original_dim)?;
    mask.search_pair = t12.direction.to_vec();
    Ok(mask)
}

/// Transfer matrix of the masked detector over held-out domains.
pub fn evaluate_mask(
    mask: &FeatureMask,
    eval_domains: &[&Domain],
    grid: &GridSpec,
    tol: f64,
) -> Result<TransferMatrix> {
    if let Some(d) = eval_domains
        .iter()
        .find(|d| mask.search_pair.iter().any(|s| s == d.id()))
    {
        return Err(Error::OutOfRange(format!(
            "evaluation domain {:?} was used for the search",
            d.id()
        )));
    }
    transfer::build_matrix(eval_domains, &Detector::Masked(mask), grid, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(dir: [&str; 2], removed: Vec<usize>, scores: Vec<f64>, d: usize) -> SelectionTrace {
        let mut t = SelectionTrace::new(
            [dir[0].into(), dir[1].into()],
            d,
            Hyperparams { c_reg: 1.0, max_iter: 10 },
            0.5,
            d - 1,
        );
        t.completed_steps = removed.len();
        t.removed = removed;
        t.scores = scores;
        t
    }

    #[test]
    fn empty_traces_keep_everything() {
        let a = trace(["x", "y"], vec![], vec![], 5);
        let b = trace(["y", "x"], vec![], vec![], 5);
        assert_eq!(combine_traces(&a, &b).unwrap().kept, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn cut_is_inclusive_at_best_step() {
        let t = trace(["x", "y"], vec![4, 1, 0], vec![0.6, 0.8, 0.7], 5);
        assert_eq!(t.best_step(), Some(1));
        assert_eq!(t.survivors(), vec![0, 2, 3]);
    }

    #[test]
    fn ties_cut_at_earliest_step() {
        let t = trace(["x", "y"], vec![4, 1, 0], vec![0.8, 0.8, 0.8], 5);
        assert_eq!(t.survivors(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn union_keeps_features_removed_by_only_one_trace() {
        let a = trace(["x", "y"], vec![2], vec![0.9], 8);
        let b = trace(["y", "x"], vec![5], vec![0.9], 8);
        assert_eq!(combine_traces(&a, &b).unwrap().kept, (0..8).collect::<Vec<_>>());
        let a = trace(["x", "y"], vec![2, 5], vec![0.7, 0.9], 8);
        let b = trace(["y", "x"], vec![5, 2, 3], vec![0.8, 0.9, 0.6], 8);
        assert_eq!(combine_traces(&a, &b).unwrap().kept, vec![0, 1, 3, 4, 6, 7]);
    }

    #[test]
    fn combine_rejects_mismatched_traces() {
        let a = trace(["x", "y"], vec![], vec![], 5);
        let b = trace(["y", "x"], vec![], vec![], 6);
        assert!(matches!(combine_traces(&a, &b), Err(Error::DimMismatch { .. })));
        let c = trace(["x", "z"], vec![], vec![], 5);
        assert!(combine_traces(&a, &c).is_err());
    }

    #[test]
    fn default_max_steps_caps_at_dim_minus_one() {
        assert_eq!(default_max_steps(32), 31);
        assert_eq!(default_max_steps(3), 2);
        assert_eq!(default_max_steps(768), 730);
        assert_eq!(default_max_steps(1), 0);
    }

    #[test]
    fn trace_validation() {
        let mut t = trace(["x", "y"], vec![1, 1], vec![0.5, 0.5], 4);
        assert!(t.validate().is_err());
        t.removed = vec![1, 7];
        assert!(t.validate().is_err());
        t.removed = vec![1, 2];
        assert!(t.validate().is_ok());
    }

    #[test]
    fn mask_rejects_bad_indices() {
        assert!(FeatureMask::new(vec![], 3).is_err());
        assert!(FeatureMask::new(vec![3], 3).is_err());
        assert_eq!(FeatureMask::new(vec![2, 0, 2], 3).unwrap().kept, vec![0, 2]);
    }
}
