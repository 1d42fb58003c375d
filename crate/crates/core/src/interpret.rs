//! Explaining directions by their nearest and farthest lexicon entries.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Lexicon;
use crate::error::{Error, Result};
use crate::matrix::{dot, norm};
use crate::probe::LinearModel;
use crate::residual::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Nearest,
    Farthest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Match {
    pub rank: usize,
    pub entry: String,
    pub cosine: f64,
    /// Row of the entry in the lexicon.
    pub index: usize,
}

fn cosines(dir: &Direction, lex: &Lexicon) -> Result<Vec<f64>> {
    dir.require_usable(lex.dim())?;
    let dn = norm(&dir.vector);
    let rows = lex.unit_rows();
    Ok((0..rows.rows())
        .into_par_iter()
        .map(|i| dot(&dir.vector, rows.row(i)) / dn)
        .collect())
}

/// Top-`k` entries by cosine with `dir`; ties go to the lower row index.
pub fn nearest_entries(dir: &Direction, lex: &Lexicon, k: usize, order: Order) -> Result<Vec<Match>> {
    let cos = cosines(dir, lex)?;
    if k > cos.len() {
        return Err(Error::OutOfRange(format!(
            "k = {k} exceeds lexicon size {}",
            cos.len()
        )));
    }
    let mut idx: Vec<usize> = (0..cos.len()).collect();
    match order {
        Order::Nearest => idx.sort_by(|&a, &b| cos[b].total_cmp(&cos[a]).then(a.cmp(&b))),
        Order::Farthest => idx.sort_by(|&a, &b| cos[a].total_cmp(&cos[b]).then(a.cmp(&b))),
    }
    Ok(idx
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(r, i)| Match {
            rank: r + 1,
            entry: lex.entries()[i].clone(),
            cosine: cos[i],
            index: i,
        })
        .collect())
}

pub fn max_similarity(dir: &Direction, lex: &Lexicon) -> Result<f64> {
    let cos = cosines(dir, lex)?;
    cos.into_iter()
        .reduce(f64::max)
        .ok_or_else(|| Error::EmptySet("lexicon".into()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub title: String,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nearest: Option<Vec<Match>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub farthest: Option<Vec<Match>>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            notes: Vec::new(),
            nearest: None,
            farthest: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("## {}\n\n", self.title);
        for n in &self.notes {
            out.push_str(&format!("> {n}\n"));
        }
        if !self.notes.is_empty() {
            out.push('\n');
        }
        for (label, rows) in [("Nearest", &self.nearest), ("Farthest", &self.farthest)] {
            let Some(rows) = rows else { continue };
            out.push_str(&format!("### {label}\n\n| rank | entry | cosine |\n|---:|---|---:|\n"));
            for m in rows {
                out.push_str(&format!(
                    "| {} | {} | {:.3} |\n",
                    m.rank,
                    m.entry.replace('|', "\\|"),
                    m.cosine
                ));
            }
            out.push('\n');
        }
        out
    }
}

/// Ranks lexicon entries against a model's weight vector. When the model was
/// trained on a feature subset, lexicon rows are restricted to the same
/// coordinates first.
pub fn interpret_model(model: &LinearModel, lex: &Lexicon, k: usize, order: Order) -> Result<Report> {
    let dir = Direction::from_model(model);
    let mut report = Report::new(format!(
        "Lexicon entries {} the model weights",
        match order {
            Order::Nearest => "nearest to",
            Order::Farthest => "farthest from",
        }
    ));
    let masked;
    let lex = match &model.feature_mask {
        Some(mask) => {
            report.notes.push(format!(
                "model uses {} selected coordinates; lexicon rows are restricted to the same coordinates",
                mask.len()
            ));
            masked = lex.restrict(mask)?;
            &masked
        }
        None => lex,
    };
    let matches = nearest_entries(&dir, lex, k, order)?;
    match order {
        Order::Nearest => report.nearest = Some(matches),
        Order::Farthest => report.farthest = Some(matches),
    }
    Ok(report)
}
