//! Train-on-one, test-on-every-domain accuracy matrices and their summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Domain, DomainKind, HeadTensor};
use crate::error::{Error, Result};
use crate::heads::{self, HeadId};
use crate::probe::{self, GridSpec, LabeledSet, LinearModel};
use crate::residual::{self, ResidualClassifier};
use crate::select::FeatureMask;

/// Which detector produced a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorTag {
    Baseline,
    Residual,
    Masked,
    Heads,
}

impl DetectorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorTag::Baseline => "baseline",
            DetectorTag::Residual => "residual",
            DetectorTag::Masked => "masked",
            DetectorTag::Heads => "heads",
        }
    }
}

/// How to build the per-domain classifier.
#[derive(Debug, Clone, Copy)]
pub enum Detector<'a> {
    /// Grid-searched LR on all embedding coordinates.
    Baseline,
    /// One-feature LR on the projection onto the training domain's residual.
    Residual,
    /// Grid-searched LR on the coordinates kept by a mask.
    Masked(&'a FeatureMask),
    /// Grid-searched LR on concatenated head slices.
    Heads {
        heads: &'a [HeadId],
        tensors: &'a BTreeMap<String, Arc<HeadTensor>>,
    },
}

impl Detector<'_> {
    pub fn tag(&self) -> DetectorTag {
        match self {
            Detector::Baseline => DetectorTag::Baseline,
            Detector::Residual => DetectorTag::Residual,
            Detector::Masked(_) => DetectorTag::Masked,
            Detector::Heads { .. } => DetectorTag::Heads,
        }
    }
}

/// `cells[i][j]`: accuracy on domain `j`'s test cells of the detector trained on
/// domain `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub domain_ids: Vec<String>,
    pub kinds: Vec<DomainKind>,
    pub cells: Vec<Vec<f64>>,
    pub detector: DetectorTag,
}

impl TransferMatrix {
    pub fn len(&self) -> usize {
        self.domain_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain_ids.is_empty()
    }

    pub fn get(&self, train: usize, test: usize) -> f64 {
        self.cells[train][test]
    }
}

enum Fitted {
    Linear(LinearModel),
    Masked(LinearModel, Vec<usize>),
    Residual(ResidualClassifier),
    Heads(LinearModel),
}

fn head_tensor<'t>(
    tensors: &'t BTreeMap<String, Arc<HeadTensor>>,
    domain: &Domain,
) -> Result<&'t HeadTensor> {
    tensors
        .get(domain.id())
        .map(|t| t.as_ref())
        .ok_or_else(|| Error::BadSchema(format!("no head tensor for domain {:?}", domain.id())))
}

fn fit(detector: &Detector, domain: &Domain, grid: &GridSpec, tol: f64) -> Result<Fitted> {
    match detector {
        Detector::Baseline => {
            let (train, val) = domain.train_val()?;
            Ok(Fitted::Linear(probe::grid_search(&train, &val, grid, tol)?.model))
        }
        Detector::Masked(mask) => {
            let (train, val) = domain.train_val()?;
            let (train, val) = (mask.apply(&train)?, mask.apply(&val)?);
            let mut model = probe::grid_search(&train, &val, grid, tol)?.model;
            model.feature_mask = Some(mask.kept.clone());
            Ok(Fitted::Masked(model, mask.kept.clone()))
        }
        Detector::Residual => {
            let (train, val) = domain.train_val()?;
            let (real, fake) = split_classes(&train)?;
            let mut dir = residual::compute_residual(&fake, &real)?;
            dir.domain_id = Some(domain.id().to_string());
            Ok(Fitted::Residual(residual::fit_residual_classifier(
                &dir, &train, &val, grid, tol,
            )?))
        }
        Detector::Heads { heads, tensors } => {
            let tensor = head_tensor(tensors, domain)?;
            Ok(Fitted::Heads(heads::train_on_heads(heads, domain, tensor, grid, tol)?.model))
        }
    }
}

/// Real and fake rows of a labeled set, in their original order.
pub(crate) fn split_classes(
    set: &LabeledSet,
) -> Result<(crate::matrix::EmbeddingMatrix, crate::matrix::EmbeddingMatrix)> {
    let pick = |want: bool| -> Vec<&[f64]> {
        set.features
            .iter_rows()
            .zip(&set.labels)
            .filter(|(_, &l)| l == want)
            .map(|(r, _)| r)
            .collect()
    };
    let (real, fake) = (pick(true), pick(false));
    if real.is_empty() || fake.is_empty() {
        return Err(Error::SingleClass);
    }
    Ok((
        crate::matrix::EmbeddingMatrix::from_rows(&real)?,
        crate::matrix::EmbeddingMatrix::from_rows(&fake)?,
    ))
}

fn score(fitted: &Fitted, detector: &Detector, domain: &Domain) -> Result<f64> {
    match (fitted, detector) {
        (Fitted::Linear(m), _) => probe::accuracy(m, &domain.test_set()?),
        (Fitted::Masked(m, kept), _) => {
            probe::accuracy(m, &domain.test_set()?.select_columns(kept)?)
        }
        (Fitted::Residual(c), _) => c.accuracy(&domain.test_set()?),
        (Fitted::Heads(m), Detector::Heads { heads, tensors }) => {
            let tensor = head_tensor(tensors, domain)?;
            let (_, _, test) = heads::head_sets(domain, tensor, heads)?;
            probe::accuracy(m, &test)
        }
        (Fitted::Heads(_), _) => unreachable!("head model without head detector"),
    }
}

/// Trains the detector on each domain and scores it on every domain's test cells.
/// Rows are computed in parallel; the result does not depend on the thread count.
pub fn build_matrix(
    domains: &[&Domain],
    detector: &Detector,
    grid: &GridSpec,
    tol: f64,
) -> Result<TransferMatrix> {
    if domains.is_empty() {
        return Err(Error::EmptySet("transfer matrix needs at least one domain".into()));
    }
    let dim = domains[0].dim();
    if let Some(d) = domains.iter().find(|d| d.dim() != dim) {
        return Err(Error::dims(dim, d.dim(), format!("domain {:?}", d.id())));
    }
    if let Detector::Masked(mask) = detector {
        if mask.original_dim != dim {
            return Err(Error::dims(dim, mask.original_dim, "mask vs domains"));
        }
    }
    let cells = domains
        .par_iter()
        .map(|train| {
            let fitted = fit(detector, train, grid, tol)?;
            domains
                .iter()
                .map(|test| score(&fitted, detector, test))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferMatrix {
        domain_ids: domains.iter().map(|d| d.id().to_string()).collect(),
        kinds: domains.iter().map(|d| d.kind()).collect(),
        cells,
        detector: detector.tag(),
    })
}

/// Means over cell groups of a transfer matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub detector: DetectorTag,
    pub a_all: f64,
    pub a_gan: f64,
    pub a_diff: f64,
    pub a_gan_to_diff: f64,
    pub a_diff_to_gan: f64,
    pub exclude_diagonal: bool,
}

fn group_mean(
    m: &TransferMatrix,
    exclude_diagonal: bool,
    name: &'static str,
    keep: impl Fn(DomainKind, DomainKind) -> bool,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, row) in m.cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if exclude_diagonal && i == j {
                continue;
            }
            if keep(m.kinds[i], m.kinds[j]) {
                sum += v;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptySubset(name));
    }
    Ok(sum / n as f64)
}

/// Group means of `m`. With `exclude_diagonal`, cells where a domain is tested on
/// itself are left out of every group.
pub fn summarize(m: &TransferMatrix, exclude_diagonal: bool) -> Result<SummaryMetrics> {
    use DomainKind::{Diffusion, Gan};
    Ok(SummaryMetrics {
        detector: m.detector,
        a_all: group_mean(m, exclude_diagonal, "a_all", |_, _| true)?,
        a_gan: group_mean(m, exclude_diagonal, "a_gan", |a, b| a == Gan && b == Gan)?,
        a_diff: group_mean(m, exclude_diagonal, "a_diff", |a, b| {
            a == Diffusion && b == Diffusion
        })?,
        a_gan_to_diff: group_mean(m, exclude_diagonal, "a_gan_to_diff", |a, b| {
            a == Gan && b == Diffusion
        })?,
        a_diff_to_gan: group_mean(m, exclude_diagonal, "a_diff_to_gan", |a, b| {
            a == Diffusion && b == Gan
        })?,
        exclude_diagonal,
    })
}

/// Formats `v` with six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Square CSV: header row and first column carry domain ids.
pub fn matrix_csv(m: &TransferMatrix) -> String {
    let mut out = String::from("train\\test");
    for id in &m.domain_ids {
        out.push(',');
        out.push_str(&csv_field(id));
    }
    out.push('\n');
    for (id, row) in m.domain_ids.iter().zip(&m.cells) {
        out.push_str(&csv_field(id));
        for &v in row {
            out.push(',');
            out.push_str(&sig6(v));
        }
        out.push('\n');
    }
    out
}

/// One row per cell: `train,test,train_kind,test_kind,accuracy`.
pub fn long_csv(m: &TransferMatrix) -> String {
    let mut out = String::from("train,test,train_kind,test_kind,accuracy\n");
    for (i, row) in m.cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&m.domain_ids[i]),
                csv_field(&m.domain_ids[j]),
                m.kinds[i],
                m.kinds[j],
                sig6(v)
            );
        }
    }
    out
}

/// Summary JSON in which groups with no cells are `null`, for matrices whose
/// domains do not cover both kinds.
pub fn partial_summary_json(m: &TransferMatrix, exclude_diagonal: bool) -> String {
    use DomainKind::{Diffusion, Gan};
    let g = |name, keep: fn(DomainKind, DomainKind) -> bool| group_mean(m, exclude_diagonal, name, keep).ok();
    let v = serde_json::json!({
        "detector": m.detector,
        "a_all": g("a_all", |_, _| true),
        "a_gan": g("a_gan", |a, b| a == Gan && b == Gan),
        "a_diff": g("a_diff", |a, b| a == Diffusion && b == Diffusion),
        "a_gan_to_diff": g("a_gan_to_diff", |a, b| a == Gan && b == Diffusion),
        "a_diff_to_gan": g("a_diff_to_gan", |a, b| a == Diffusion && b == Gan),
        "exclude_diagonal": exclude_diagonal,
    });
    serde_json::to_string_pretty(&v).expect("summary serializes")
}

pub fn summary_json(s: &SummaryMetrics) -> String {
    serde_json::to_string_pretty(s).expect("summary serializes")
}

/// Paths written by [`export_report`].
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub matrix_csv: PathBuf,
    pub long_csv: PathBuf,
    pub summary_json: PathBuf,
}

/// Writes `<stem>_matrix.csv`, `<stem>_long.csv` and `<stem>_summary.json` into
/// the existing directory `dir`.
pub fn export_report(
    m: &TransferMatrix,
    s: &SummaryMetrics,
    dir: &Path,
    stem: &str,
) -> Result<ReportPaths> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "report directory does not exist"),
        ));
    }
    let paths = ReportPaths {
        matrix_csv: dir.join(format!("{stem}_matrix.csv")),
        long_csv: dir.join(format!("{stem}_long.csv")),
        summary_json: dir.join(format!("{stem}_summary.json")),
    };
    for (path, text) in [
        (&paths.matrix_csv, matrix_csv(m)),
        (&paths.long_csv, long_csv(m)),
        (&paths.summary_json, summary_json(s) + "\n"),
    ] {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(paths)
}
