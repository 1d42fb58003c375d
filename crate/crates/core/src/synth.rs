//! Seeded synthetic datasets with known structure, and a writer that lays them out
//! on disk in manifest form.
//!
//! All generators are deterministic in their seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::dataset::{
    Cell, Domain, DomainKind, DomainRecord, HeadTensor, Lexicon, LexiconSpace,
};
use crate::error::{Error, Result};
use crate::heads::{self, HeadId};
use crate::matrix::{EmbeddingMatrix, normalized};
use crate::npy::{self, Dtype};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows x cols` matrix of unit Gaussians shifted by `mean`.
pub fn gaussian(rng: &mut impl Rng, rows: usize, mean: &[f64]) -> Result<EmbeddingMatrix> {
    let cols = mean.len();
    let data = (0..rows * cols)
        .map(|k| mean[k % cols] + rng.sample::<f64, _>(StandardNormal))
        .collect();
    EmbeddingMatrix::new(rows, cols, data)
}

/// Uniformly random unit vector.
pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

/// A domain built from in-memory cells; the record names no files.
pub fn domain_from_cells(
    id: &str,
    kind: DomainKind,
    cells: BTreeMap<Cell, Arc<EmbeddingMatrix>>,
) -> Result<Domain> {
    Domain::new(
        DomainRecord {
            id: id.to_string(),
            kind,
            display_name: id.to_string(),
            files: BTreeMap::new(),
        },
        cells,
    )
}

/// Rows per class in each split. `val = 0` omits the val cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    fn of(&self, cell: Cell) -> usize {
        match cell {
            Cell::RealTrain | Cell::FakeTrain => self.train,
            Cell::RealVal | Cell::FakeVal => self.val,
            Cell::RealTest | Cell::FakeTest => self.test,
        }
    }

    fn cells(&self) -> Vec<Cell> {
        Cell::HEAD_ORDER
            .into_iter()
            .filter(|&c| self.of(c) > 0)
            .collect()
    }
}

/// One shared signal coordinate plus per-domain spurious coordinates.
///
/// Rows are unit Gaussian. Real rows have mean `+signal` on coordinate 0 and fake
/// rows `-signal`. On each spurious coordinate real rows have mean
/// `-sign * spurious / 2` and fake rows `+sign * spurious / 2`, with the sign chosen
/// per domain. A probe trained on one domain leans on the spurious coordinates and
/// fails wherever their signs flip.
#[derive(Debug, Clone)]
pub struct SpuriousFixture {
    pub dim: usize,
    pub signal: f64,
    pub spurious: f64,
    pub spurious_dims: Vec<usize>,
    pub sizes: SplitSizes,
    /// `(id, kind, sign per spurious coordinate)`.
    pub domains: Vec<(String, DomainKind, Vec<f64>)>,
    pub seed: u64,
}

impl Default for SpuriousFixture {
    /// Four domains, `d = 32`, 1000 rows per class for training and testing.
    fn default() -> Self {
        let d = |id: &str, kind, signs: [f64; 3]| (id.to_string(), kind, signs.to_vec());
        Self {
            dim: 32,
            signal: 2.5,
            spurious: 3.0,
            spurious_dims: vec![1, 2, 3],
            sizes: SplitSizes {
                train: 1000,
                val: 300,
                test: 1000,
            },
            domains: vec![
                d("gan_a", DomainKind::Gan, [1.0, 1.0, 1.0]),
                d("diff_a", DomainKind::Diffusion, [-1.0, -1.0, -1.0]),
                d("gan_b", DomainKind::Gan, [1.0, -1.0, 1.0]),
                d("diff_b", DomainKind::Diffusion, [-1.0, 1.0, -1.0]),
            ],
            seed: 7,
        }
    }
}

impl SpuriousFixture {
    pub fn build(&self) -> Result<Vec<Domain>> {
        if self.spurious_dims.iter().any(|&s| s == 0 || s >= self.dim) {
            return Err(Error::OutOfRange("spurious coordinates must lie in 1..dim".into()));
        }
        let mut rng = rng(self.seed);
        self.domains
            .iter()
            .map(|(id, kind, signs)| {
                if signs.len() != self.spurious_dims.len() {
                    return Err(Error::dims(self.spurious_dims.len(), signs.len(), "spurious signs"));
                }
                let mean = |real: bool| {
                    let side = if real { 1.0 } else { -1.0 };
                    let mut m = vec![0.0; self.dim];
                    m[0] = side * self.signal;
                    for (&k, s) in self.spurious_dims.iter().zip(signs) {
                        m[k] = -side * s * self.spurious / 2.0;
                    }
                    m
                };
                let (real_mean, fake_mean) = (mean(true), mean(false));
                let mut cells = BTreeMap::new();
                for cell in self.sizes.cells() {
                    let m = if cell.is_real() { &real_mean } else { &fake_mean };
                    cells.insert(cell, Arc::new(gaussian(&mut rng, self.sizes.of(cell), m)?));
                }
                domain_from_cells(id, *kind, cells)
            })
            .collect()
    }
}

/// Head tensors in which only the listed heads carry the real/fake signal.
///
/// Each head slice is unit Gaussian noise; an informative head `(id, s)` adds `+s * u`
/// for real rows and `-s * u` for fake rows along a fixed unit direction `u`.
/// Domain embeddings are the projected reconstructions, so the embedding cells and
/// the tensor describe the same images.
#[derive(Debug, Clone)]
pub struct HeadFixture {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub joint_dim: usize,
    pub informative: Vec<(HeadId, f64)>,
    pub sizes: SplitSizes,
    pub domains: Vec<(String, DomainKind)>,
    pub seed: u64,
}

impl Default for HeadFixture {
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 4,
            dim: 8,
            joint_dim: 6,
            informative: vec![(HeadId::new(1, 2), 2.5)],
            sizes: SplitSizes {
                train: 200,
                val: 100,
                test: 500,
            },
            domains: vec![
                ("gan_a".into(), DomainKind::Gan),
                ("diff_a".into(), DomainKind::Diffusion),
                ("gan_b".into(), DomainKind::Gan),
            ],
            seed: 11,
        }
    }
}

/// Domains with their head tensors and pre-projection reference embeddings.
pub struct HeadDataset {
    pub domains: Vec<Domain>,
    pub tensors: BTreeMap<String, Arc<HeadTensor>>,
    pub references: BTreeMap<String, EmbeddingMatrix>,
}

impl HeadFixture {
    pub fn build(&self) -> Result<HeadDataset> {
        let mut rng = rng(self.seed);
        let directions: BTreeMap<HeadId, Vec<f64>> = self
            .informative
            .iter()
            .map(|&(h, s)| {
                let u = unit_vector(&mut rng, self.dim);
                (h, u.into_iter().map(|v| s * v).collect())
            })
            .collect();
        let projection = gaussian(&mut rng, self.dim, &vec![0.0; self.joint_dim])?;
        let base: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();

        let mut out = HeadDataset {
            domains: Vec::new(),
            tensors: BTreeMap::new(),
            references: BTreeMap::new(),
        };
        for (id, kind) in &self.domains {
            let cells = self.sizes.cells();
            let images: usize = cells.iter().map(|&c| self.sizes.of(c)).sum();
            let per_image = self.layers * self.heads * self.dim;
            let mut data = Vec::with_capacity(images * per_image);
            for &cell in &cells {
                let sign = if cell.is_real() { 1.0 } else { -1.0 };
                for _ in 0..self.sizes.of(cell) {
                    for l in 0..self.layers {
                        for h in 0..self.heads {
                            let shift = directions.get(&HeadId::new(l, h));
                            for k in 0..self.dim {
                                let noise: f64 = rng.sample(StandardNormal);
                                data.push(noise + shift.map_or(0.0, |u| sign * u[k]));
                            }
                        }
                    }
                }
            }
            let mlp_data: Vec<f64> = (0..images * self.dim)
                .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let tensor = HeadTensor::new(
                [images, self.layers, self.heads, self.dim],
                data,
                projection.clone(),
                base.clone(),
                EmbeddingMatrix::new(images, self.dim, mlp_data)?,
            )?;
            let reference = heads::reconstructed(&tensor)?;
            let joint = project_rows(&reference, &projection)?;
            let mut domain_cells = BTreeMap::new();
            let mut start = 0;
            for &cell in &cells {
                let n = self.sizes.of(cell);
                domain_cells.insert(cell, Arc::new(joint.slice_rows(start, start + n)?));
                start += n;
            }
            out.domains.push(domain_from_cells(id, *kind, domain_cells)?);
            out.tensors.insert(id.clone(), Arc::new(tensor));
            out.references.insert(id.clone(), reference);
        }
        Ok(out)
    }
}

/// `rows * p` for an `n x d` matrix and a `d x k` projection.
pub fn project_rows(rows: &EmbeddingMatrix, p: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if rows.cols() != p.rows() {
        return Err(Error::dims(p.rows(), rows.cols(), "rows vs projection"));
    }
    let k = p.cols();
    rows.map_rows(|r| {
        let mut out = vec![0.0; k];
        for (v, prow) in r.iter().zip(p.iter_rows()) {
            for (o, pv) in out.iter_mut().zip(prow) {
                *o += v * pv;
            }
        }
        out
    })
}

/// `v` random unit rows named `w000`, `w001`, ...
pub fn random_lexicon(seed: u64, v: usize, dim: usize, space: LexiconSpace) -> Result<Lexicon> {
    let mut rng = rng(seed);
    let data = (0..v).flat_map(|_| unit_vector(&mut rng, dim)).collect();
    let names = (0..v).map(|i| format!("w{i:03}")).collect();
    Lexicon::new(names, EmbeddingMatrix::new(v, dim, data)?, space)
}

/// Everything [`write_dataset`] lays out.
#[derive(Default)]
pub struct DatasetFiles<'a> {
    pub name: &'a str,
    pub domains: &'a [Domain],
    pub lexicons: BTreeMap<String, &'a Lexicon>,
    pub tensors: BTreeMap<String, &'a HeadTensor>,
    pub references: BTreeMap<String, &'a EmbeddingMatrix>,
}

/// Writes NPY files and `manifest.json` under `dir`, returning the manifest path.
/// Cells shared between domains are written once.
pub fn write_dataset(dir: &Path, files: &DatasetFiles, dtype: Dtype) -> Result<PathBuf> {
    let Some(first) = files.domains.first() else {
        return Err(Error::EmptySet("no domains to write".into()));
    };
    let dim = first.dim();
    std::fs::create_dir_all(dir.join("cells")).map_err(|e| Error::io(dir, e))?;
    let mut written: Vec<(*const EmbeddingMatrix, String)> = Vec::new();
    let mut domains = Vec::new();
    for d in files.domains {
        let mut entry = serde_json::Map::new();
        for cell in Cell::HEAD_ORDER {
            let Some(m) = d.cell(cell) else { continue };
            let ptr = Arc::as_ptr(m);
            let rel = match written.iter().find(|(p, _)| *p == ptr) {
                Some((_, rel)) => rel.clone(),
                None => {
                    // real cells are usually shared, so they get domain-free names
                    let mut rel = if cell.is_real() {
                        format!("cells/{}.npy", cell.name())
                    } else {
                        format!("cells/{}_{}.npy", d.id(), cell.name())
                    };
                    if written.iter().any(|(_, r)| *r == rel) {
                        rel = format!("cells/{}_{}.npy", d.id(), cell.name());
                    }
                    m.save(dir.join(&rel), dtype)?;
                    written.push((ptr, rel.clone()));
                    rel
                }
            };
            entry.insert(cell.name().into(), json!(rel));
        }
        domains.push(json!({
            "id": d.id(),
            "kind": d.kind(),
            "display_name": d.record.display_name,
            "files": entry,
        }));
    }

    let mut lexicons = serde_json::Map::new();
    for (name, lex) in &files.lexicons {
        let matrix = format!("lexicon_{name}.npy");
        let entries = format!("lexicon_{name}.txt");
        lex.unit_rows().save(dir.join(&matrix), dtype)?;
        let text = lex.entries().join("\n") + "\n";
        std::fs::write(dir.join(&entries), text).map_err(|e| Error::io(dir.join(&entries), e))?;
        lexicons.insert(
            name.clone(),
            json!({ "matrix": matrix, "entries": entries, "space": lex.space() }),
        );
    }

    let mut tensors = serde_json::Map::new();
    if !files.tensors.is_empty() {
        std::fs::create_dir_all(dir.join("heads")).map_err(|e| Error::io(dir, e))?;
    }
    for (id, t) in &files.tensors {
        let rel = |part: &str| format!("heads/{id}_{part}.npy");
        let shape = t.shape();
        npy::write_npy(dir.join(rel("data")), &shape, t.raw(), dtype)?;
        t.projection.save(dir.join(rel("projection")), dtype)?;
        npy::write_npy(dir.join(rel("base")), &[t.dim()], &t.base_term, dtype)?;
        t.mlp_sum.save(dir.join(rel("mlp")), dtype)?;
        let mut entry = json!({
            "data": rel("data"),
            "projection": rel("projection"),
            "base": rel("base"),
            "mlp": rel("mlp"),
        });
        if let Some(r) = files.references.get(id) {
            r.save(dir.join(rel("reference")), dtype)?;
            entry["reference"] = json!(rel("reference"));
        }
        tensors.insert(id.clone(), entry);
    }

    let manifest = json!({
        "name": files.name,
        "dim": dim,
        "encoder_tag": "synthetic",
        "domains": domains,
        "lexicons": lexicons,
        "head_tensors": tensors,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// The small bundled dataset: two domains over a head fixture with a joint-space
/// lexicon.
pub fn tiny_fixture() -> Result<(HeadDataset, Lexicon)> {
    let heads = HeadFixture {
        layers: 2,
        heads: 2,
        dim: 6,
        joint_dim: 4,
        informative: vec![(HeadId::new(1, 0), 2.0)],
        sizes: SplitSizes {
            train: 24,
            val: 8,
            test: 16,
        },
        domains: vec![
            ("gan_a".into(), DomainKind::Gan),
            ("diff_a".into(), DomainKind::Diffusion),
        ],
        seed: 3,
    }
    .build()?;
    let lex = random_lexicon(5, 12, 4, LexiconSpace::Joint)?;
    Ok((heads, lex))
}

/// Writes [`tiny_fixture`] to `dir` in f32, returning the manifest path.
pub fn write_tiny_fixture(dir: &Path) -> Result<PathBuf> {
    let (heads, lex) = tiny_fixture()?;
    write_dataset(
        dir,
        &DatasetFiles {
            name: "tiny",
            domains: &heads.domains,
            lexicons: BTreeMap::from([("words".to_string(), &lex)]),
            tensors: heads.tensors.iter().map(|(k, v)| (k.clone(), v.as_ref())).collect(),
            references: heads.references.iter().map(|(k, v)| (k.clone(), v)).collect(),
        },
        Dtype::F32,
    )
}
