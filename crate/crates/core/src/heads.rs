//! Attention-head probes. Heads are ranked by how well a probe on one head's
//! contribution transfers to a validation domain; the top heads then form a
//! detector. A head's fake-minus-real direction can be read through a joint-space
//! lexicon.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Cell, Domain, HeadTensor, Lexicon, LexiconSpace};
use crate::error::{Error, Result};
use crate::interpret::{self, Order, Report};
use crate::matrix::{normalized, EmbeddingMatrix};
use crate::probe::{self, GridResult, GridSpec, LabeledSet};
use crate::residual::{Direction, DirectionSource};
use crate::select::{read_json, write_json_atomic};
use crate::transfer::{self, Detector, TransferMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl std::fmt::Display for HeadId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHead {
    pub layer: usize,
    pub head: usize,
    pub val_acc: f64,
}

impl RankedHead {
    pub fn id(&self) -> HeadId {
        HeadId::new(self.layer, self.head)
    }
}

/// Heads sorted by validation accuracy, best first; ties by `(layer, head)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRanking {
    pub train: String,
    pub val: String,
    pub ranking: Vec<RankedHead>,
}

impl HeadRanking {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_atomic(
            path.as_ref(),
            &serde_json::to_string_pretty(self).expect("ranking serializes"),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

fn check_tensor(domain: &Domain, tensor: &HeadTensor) -> Result<()> {
    if tensor.images() != domain.head_row_count() {
        return Err(Error::ShapeMismatch(format!(
            "head tensor of {:?} has {} images, domain cells hold {}",
            domain.id(),
            tensor.images(),
            domain.head_row_count()
        )));
    }
    Ok(())
}

/// Train, validation and test sets over the concatenated slices of `heads`.
pub fn head_sets(
    domain: &Domain,
    tensor: &HeadTensor,
    heads: &[HeadId],
) -> Result<(LabeledSet, LabeledSet, LabeledSet)> {
    check_tensor(domain, tensor)?;
    let rows = domain.head_rows();
    let pairs: Vec<(usize, usize)> = heads.iter().map(|h| (h.layer, h.head)).collect();
    domain.sets_with(|cell| {
        let range = rows
            .get(&cell)
            .cloned()
            .ok_or_else(|| Error::BadSchema(format!("domain lacks cell {}", cell.name())))?;
        tensor.features(range, &pairs)
    })
}

/// Grid-searched probe on the given heads of one domain.
pub fn train_on_heads(
    heads: &[HeadId],
    domain: &Domain,
    tensor: &HeadTensor,
    grid: &GridSpec,
    tol: f64,
) -> Result<GridResult> {
    let (train, val, _) = head_sets(domain, tensor, heads)?;
    let mut fit = probe::grid_search(&train, &val, grid, tol)?;
    fit.model.train_meta.domain = Some(domain.id().to_string());
    fit.model.train_meta.extra.insert(
        "heads".into(),
        serde_json::to_value(heads).expect("heads serialize"),
    );
    Ok(fit)
}

/// Trains one probe per head on `train` and scores it on `val`'s test cells.
pub fn rank_heads(
    train: (&Domain, &HeadTensor),
    val: (&Domain, &HeadTensor),
    grid: &GridSpec,
    tol: f64,
) -> Result<HeadRanking> {
    let (td, tt) = train;
    let (vd, vt) = val;
    if tt.layers() != vt.layers() || tt.heads_per_layer() != vt.heads_per_layer() || tt.dim() != vt.dim()
    {
        return Err(Error::ShapeMismatch(format!(
            "head tensors {:?} and {:?} differ in layout",
            tt.shape(),
            vt.shape()
        )));
    }
    let all: Vec<HeadId> = (0..tt.layers())
        .flat_map(|l| (0..tt.heads_per_layer()).map(move |h| HeadId::new(l, h)))
        .collect();
    let mut ranking = all
        .par_iter()
        .map(|&h| {
            let model = train_on_heads(&[h], td, tt, grid, tol)?.model;
            let (_, _, test) = head_sets(vd, vt, &[h])?;
            Ok(RankedHead {
                layer: h.layer,
                head: h.head,
                val_acc: probe::accuracy(&model, &test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranking.sort_by(|a, b| {
        b.val_acc
            .total_cmp(&a.val_acc)
            .then((a.layer, a.head).cmp(&(b.layer, b.head)))
    });
    Ok(HeadRanking {
        train: td.id().to_string(),
        val: vd.id().to_string(),
        ranking,
    })
}

/// The `k` best heads of a ranking.
pub fn select_top(ranking: &HeadRanking, k: usize) -> Result<Vec<HeadId>> {
    if k == 0 || k > ranking.ranking.len() {
        return Err(Error::OutOfRange(format!(
            "k = {k} outside 1..={}",
            ranking.ranking.len()
        )));
    }
    Ok(ranking.ranking[..k].iter().map(RankedHead::id).collect())
}

/// Transfer matrix of the head detector over every domain except the one used to
/// rank heads.
pub fn head_transfer_eval(
    heads: &[HeadId],
    domains: &[&Domain],
    tensors: &std::collections::BTreeMap<String, std::sync::Arc<HeadTensor>>,
    val_domain: &str,
    grid: &GridSpec,
    tol: f64,
) -> Result<TransferMatrix> {
    let eval: Vec<&Domain> = domains.iter().copied().filter(|d| d.id() != val_domain).collect();
    transfer::build_matrix(&eval, &Detector::Heads { heads, tensors }, grid, tol)
}

/// `Norm[P m_fake] - Norm[P m_real]`, where `m_*` are the head's mean slices over
/// the domain's training cells and `P` the joint-space projection.
pub fn head_direction(head: HeadId, domain: &Domain, tensor: &HeadTensor) -> Result<Direction> {
    check_tensor(domain, tensor)?;
    let rows = domain.head_rows();
    let pair = [(head.layer, head.head)];
    let projected_mean = |cell: Cell| -> Result<Vec<f64>> {
        let m = tensor.features(rows[&cell].clone(), &pair)?.mean_row();
        let p = &tensor.projection;
        Ok((0..p.cols())
            .map(|j| m.iter().enumerate().map(|(i, v)| v * p.row(i)[j]).sum())
            .collect())
    };
    let fake = normalized(&projected_mean(Cell::FakeTrain)?);
    let real = normalized(&projected_mean(Cell::RealTrain)?);
    let (Some(fake), Some(real)) = (fake, real) else {
        return Err(Error::DegenerateDirection);
    };
    let mut dir = Direction::new(
        fake.iter().zip(&real).map(|(f, r)| f - r).collect(),
        DirectionSource::HeadProjection,
    );
    if dir.degenerate {
        return Err(Error::DegenerateDirection);
    }
    dir.domain_id = Some(domain.id().to_string());
    Ok(dir)
}

/// Nearest and farthest joint-space lexicon entries to a head's direction.
pub fn interpret_head(
    head: HeadId,
    domain: &Domain,
    tensor: &HeadTensor,
    lex: &Lexicon,
    k: usize,
) -> Result<Report> {
    if lex.space() != LexiconSpace::Joint {
        return Err(Error::SpaceMismatch {
            expected: LexiconSpace::Joint.to_string(),
            found: lex.space().to_string(),
        });
    }
    if head.layer >= tensor.layers() || head.head >= tensor.heads_per_layer() {
        return Err(Error::OutOfRange(format!("head {head} outside tensor")));
    }
    let dir = head_direction(head, domain, tensor)?;
    let mut report = Report::new(format!("Head {head} of {}", domain.id()));
    report.nearest = Some(interpret::nearest_entries(&dir, lex, k, Order::Nearest)?);
    report.farthest = Some(interpret::nearest_entries(&dir, lex, k, Order::Farthest)?);
    Ok(report)
}

/// Pre-projection embeddings rebuilt from a head tensor.
pub fn reconstructed(tensor: &HeadTensor) -> Result<EmbeddingMatrix> {
    let data: Vec<f64> = (0..tensor.images()).flat_map(|i| tensor.reconstruct(i)).collect();
    EmbeddingMatrix::new(tensor.images(), tensor.dim(), data)
}
