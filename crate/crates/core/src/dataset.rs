//! Manifest-driven loading of embedding datasets, head tensors and lexicons.
//!
//! Everything is validated eagerly when a [`Dataset`] is opened: every referenced
//! file is parsed, column counts are checked against the manifest's `dim`, head
//! tensors are shape-checked (and reconstruction-checked when a reference is
//! named), and lexicon entries are checked for uniqueness. A dataset that opens
//! successfully satisfies the shape preconditions of every downstream operation.
//!
//! Real cells are commonly shared between domains (same file path). Matrices are
//! cached by canonical path so shared cells are held once and handed out as
//! [`Arc`]s.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, EmbeddingMatrix};
use crate::npy;
use crate::probe::LabeledSet;

/// Tolerance on the per-image max-abs error of the head decomposition identity.
pub const RECONSTRUCTION_TOL: f64 = 1e-3;

/// Fraction of each train cell held out for validation when a domain has no val cells.
pub const FALLBACK_VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Gan,
    Diffusion,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainKind::Gan => "gan",
            DomainKind::Diffusion => "diffusion",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    RealTrain,
    FakeTrain,
    RealVal,
    FakeVal,
    RealTest,
    FakeTest,
}

impl Cell {
    /// Row order of a domain's head tensor: the cells present, in this order.
    pub const HEAD_ORDER: [Cell; 6] = [
        Cell::RealTrain,
        Cell::FakeTrain,
        Cell::RealVal,
        Cell::FakeVal,
        Cell::RealTest,
        Cell::FakeTest,
    ];

    pub const REQUIRED: [Cell; 4] = [
        Cell::RealTrain,
        Cell::FakeTrain,
        Cell::RealTest,
        Cell::FakeTest,
    ];

    pub fn is_real(self) -> bool {
        matches!(self, Cell::RealTrain | Cell::RealVal | Cell::RealTest)
    }

    pub fn name(self) -> &'static str {
        match self {
            Cell::RealTrain => "real_train",
            Cell::FakeTrain => "fake_train",
            Cell::RealVal => "real_val",
            Cell::FakeVal => "fake_val",
            Cell::RealTest => "real_test",
            Cell::FakeTest => "fake_test",
        }
    }
}

impl FromStr for Cell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Cell::HEAD_ORDER
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::BadSchema(format!("unknown cell {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconSpace {
    Joint,
    Image,
}

impl fmt::Display for LexiconSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LexiconSpace::Joint => "joint",
            LexiconSpace::Image => "image",
        })
    }
}

// ---- on-disk manifest schema ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub encoder_tag: String,
    pub domains: Vec<DomainEntry>,
    #[serde(default)]
    pub lexicons: BTreeMap<String, LexiconEntry>,
    #[serde(default)]
    pub head_tensors: BTreeMap<String, HeadTensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub id: String,
    pub kind: DomainKind,
    #[serde(default)]
    pub display_name: String,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconEntry {
    pub matrix: String,
    pub entries: String,
    pub space: LexiconSpace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadTensorEntry {
    pub data: String,
    pub projection: String,
    pub base: String,
    pub mlp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

// ---- validated, path-resolved manifest ----

#[derive(Debug, Clone)]
pub struct DomainRecord {
    pub id: String,
    pub kind: DomainKind,
    pub display_name: String,
    pub files: BTreeMap<Cell, PathBuf>,
}

impl DomainRecord {
    pub fn has_val(&self) -> bool {
        self.files.contains_key(&Cell::RealVal)
    }
}

#[derive(Debug, Clone)]
pub struct LexiconRef {
    pub matrix: PathBuf,
    pub entries: PathBuf,
    pub space: LexiconSpace,
}

#[derive(Debug, Clone)]
pub struct HeadTensorRef {
    pub data: PathBuf,
    pub projection: PathBuf,
    pub base: PathBuf,
    pub mlp: PathBuf,
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub name: String,
    pub dim: usize,
    pub encoder_tag: String,
    pub domains: Vec<DomainRecord>,
    pub lexicons: BTreeMap<String, LexiconRef>,
    pub head_tensors: BTreeMap<String, HeadTensorRef>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn domain(&self, id: &str) -> Result<&DomainRecord> {
        self.domains
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::UnknownDomain(id.to_string()))
    }

    /// Parses and resolves the manifest schema without touching referenced files.
    pub fn parse(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ManifestFile =
            serde_json::from_str(&text).map_err(|e| Error::BadSchema(e.to_string()))?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::resolve(file, base_dir)
    }

    fn resolve(file: ManifestFile, base_dir: PathBuf) -> Result<Self> {
        if file.dim == 0 {
            return Err(Error::BadSchema("dim must be positive".into()));
        }
        if file.domains.is_empty() {
            return Err(Error::BadSchema("manifest lists no domains".into()));
        }
        let join = |rel: &str| base_dir.join(rel);

        let mut seen = std::collections::HashSet::new();
        let mut domains = Vec::with_capacity(file.domains.len());
        for d in file.domains {
            if d.id.trim().is_empty() {
                return Err(Error::BadSchema("empty domain id".into()));
            }
            if !seen.insert(d.id.clone()) {
                return Err(Error::BadSchema(format!("duplicate domain id {:?}", d.id)));
            }
            let mut files = BTreeMap::new();
            for (cell, rel) in &d.files {
                files.insert(cell.parse::<Cell>()?, join(rel));
            }
            for cell in Cell::REQUIRED {
                if !files.contains_key(&cell) {
                    return Err(Error::BadSchema(format!(
                        "domain {:?} lacks cell {}",
                        d.id,
                        cell.name()
                    )));
                }
            }
            if files.contains_key(&Cell::RealVal) != files.contains_key(&Cell::FakeVal) {
                return Err(Error::BadSchema(format!(
                    "domain {:?} must give both val cells or neither",
                    d.id
                )));
            }
            let display_name = if d.display_name.is_empty() {
                d.id.clone()
            } else {
                d.display_name
            };
            domains.push(DomainRecord {
                id: d.id,
                kind: d.kind,
                display_name,
                files,
            });
        }

        let lexicons = file
            .lexicons
            .into_iter()
            .map(|(name, l)| {
                (
                    name,
                    LexiconRef {
                        matrix: join(&l.matrix),
                        entries: join(&l.entries),
                        space: l.space,
                    },
                )
            })
            .collect();

        let mut head_tensors = BTreeMap::new();
        for (id, h) in file.head_tensors {
            if !seen.contains(&id) {
                return Err(Error::BadSchema(format!(
                    "head tensor for unknown domain {id:?}"
                )));
            }
            head_tensors.insert(
                id,
                HeadTensorRef {
                    data: join(&h.data),
                    projection: join(&h.projection),
                    base: join(&h.base),
                    mlp: join(&h.mlp),
                    reference: h.reference.as_deref().map(join),
                },
            );
        }

        Ok(Manifest {
            name: file.name,
            dim: file.dim,
            encoder_tag: file.encoder_tag,
            domains,
            lexicons,
            head_tensors,
            base_dir,
        })
    }
}

/// Parses the manifest and eagerly validates everything it references.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    Ok(Dataset::open(path)?.manifest)
}

fn ensure_exists(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(())
}

// ---- head tensors ----

/// Per-head additive contributions to the class-token representation of each image,
/// plus the pieces needed to rebuild the pre-projection embedding.
#[derive(Debug, Clone)]
pub struct HeadTensor {
    images: usize,
    layers: usize,
    heads: usize,
    dim: usize,
    data: Vec<f64>,
    /// `dim x d_joint` map from the residual stream into the joint space.
    pub projection: EmbeddingMatrix,
    pub base_term: Vec<f64>,
    /// `images x dim` summed MLP contributions.
    pub mlp_sum: EmbeddingMatrix,
}

impl HeadTensor {
    pub fn new(
        shape: [usize; 4],
        data: Vec<f64>,
        projection: EmbeddingMatrix,
        base_term: Vec<f64>,
        mlp_sum: EmbeddingMatrix,
    ) -> Result<Self> {
        let [images, layers, heads, dim] = shape;
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!("zero-sized head tensor {shape:?}")));
        }
        if data.len() != images * layers * heads * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not fill a {shape:?} head tensor",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if projection.rows() != dim {
            return Err(Error::ShapeMismatch(format!(
                "projection has {} rows, head dim is {dim}",
                projection.rows()
            )));
        }
        if base_term.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "base term has length {}, head dim is {dim}",
                base_term.len()
            )));
        }
        if let Some(index) = base_term.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if mlp_sum.rows() != images || mlp_sum.cols() != dim {
            return Err(Error::ShapeMismatch(format!(
                "mlp sum is {}x{}, expected {images}x{dim}",
                mlp_sum.rows(),
                mlp_sum.cols()
            )));
        }
        Ok(Self {
            images,
            layers,
            heads,
            dim,
            data,
            projection,
            base_term,
            mlp_sum,
        })
    }

    pub fn from_files(paths: &HeadTensorRef) -> Result<Self> {
        for p in [&paths.data, &paths.projection, &paths.base, &paths.mlp] {
            ensure_exists(p)?;
        }
        let data = npy::read_npy(&paths.data)?;
        data.expect_rank(4)?;
        let shape = [data.shape[0], data.shape[1], data.shape[2], data.shape[3]];
        let projection = matrix::load_matrix(&paths.projection)?;
        let base = npy::read_npy(&paths.base)?;
        base.expect_rank(1)?;
        let mlp = matrix::load_matrix(&paths.mlp)?;
        let tensor = Self::new(shape, data.data, projection, base.data, mlp)?;
        if let Some(reference) = &paths.reference {
            ensure_exists(reference)?;
            tensor.check_reconstruction(&matrix::load_matrix(reference)?)?;
        }
        Ok(tensor)
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads_per_layer(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn joint_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.images, self.layers, self.heads, self.dim]
    }

    pub fn slice(&self, image: usize, layer: usize, head: usize) -> &[f64] {
        let start = ((image * self.layers + layer) * self.heads + head) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn slice_mut(&mut self, image: usize, layer: usize, head: usize) -> &mut [f64] {
        let start = ((image * self.layers + layer) * self.heads + head) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// `base + sum of all heads + mlp` for one image.
    pub fn reconstruct(&self, image: usize) -> Vec<f64> {
        let mut out = self.base_term.clone();
        for l in 0..self.layers {
            for h in 0..self.heads {
                for (o, v) in out.iter_mut().zip(self.slice(image, l, h)) {
                    *o += v;
                }
            }
        }
        for (o, v) in out.iter_mut().zip(self.mlp_sum.row(image)) {
            *o += v;
        }
        out
    }

    /// Checks the decomposition identity against pre-projection reference embeddings,
    /// returning the worst per-image max-abs error.
    pub fn check_reconstruction(&self, reference: &EmbeddingMatrix) -> Result<f64> {
        if reference.rows() != self.images || reference.cols() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "reference is {}x{}, expected {}x{}",
                reference.rows(),
                reference.cols(),
                self.images,
                self.dim
            )));
        }
        let mut worst = (0.0f64, 0usize);
        for i in 0..self.images {
            let rebuilt = self.reconstruct(i);
            let err = rebuilt
                .iter()
                .zip(reference.row(i))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if err > worst.0 {
                worst = (err, i);
            }
        }
        if worst.0 > RECONSTRUCTION_TOL {
            return Err(Error::ReconstructionFailure {
                max_error: worst.0,
                row: worst.1,
            });
        }
        Ok(worst.0)
    }

    /// Concatenated features of the listed heads for images `rows`.
    pub fn features(
        &self,
        rows: std::ops::Range<usize>,
        heads: &[(usize, usize)],
    ) -> Result<EmbeddingMatrix> {
        if heads.is_empty() {
            return Err(Error::Degenerate("no heads selected".into()));
        }
        for &(l, h) in heads {
            if l >= self.layers || h >= self.heads {
                return Err(Error::OutOfRange(format!(
                    "head ({l}, {h}) outside {}x{} tensor",
                    self.layers, self.heads
                )));
            }
        }
        if rows.end > self.images || rows.is_empty() {
            return Err(Error::OutOfRange(format!(
                "image range {rows:?} of a {}-image tensor",
                self.images
            )));
        }
        let cols = heads.len() * self.dim;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for i in rows.clone() {
            for &(l, h) in heads {
                data.extend_from_slice(self.slice(i, l, h));
            }
        }
        EmbeddingMatrix::new(rows.len(), cols, data)
    }
}

/// Loads and validates the head tensor the manifest names for `domain_id`.
pub fn load_head_tensor(manifest: &Manifest, domain_id: &str) -> Result<HeadTensor> {
    let paths = manifest.head_tensors.get(domain_id).ok_or_else(|| {
        Error::BadSchema(format!("manifest has no head tensor for {domain_id:?}"))
    })?;
    HeadTensor::from_files(paths)
}

// ---- lexicons ----

/// Text entries with their embeddings; rows are unit-normalized on construction.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<String>,
    unit_rows: EmbeddingMatrix,
    space: LexiconSpace,
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Lexicon {
    pub fn new(entries: Vec<String>, matrix: EmbeddingMatrix, space: LexiconSpace) -> Result<Self> {
        if entries.len() != matrix.rows() {
            return Err(Error::dims(matrix.rows(), entries.len(), "lexicon entries vs rows"));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(normalize_whitespace(e)) {
                return Err(Error::BadSchema(format!("duplicate lexicon entry {e:?}")));
            }
        }
        let mut data = Vec::with_capacity(matrix.as_slice().len());
        for (i, row) in matrix.iter_rows().enumerate() {
            let unit = matrix::normalized(row).ok_or(Error::ZeroRow(i))?;
            data.extend(unit);
        }
        let unit_rows = EmbeddingMatrix::new(matrix.rows(), matrix.cols(), data)?;
        Ok(Self {
            entries,
            unit_rows,
            space,
        })
    }

    pub fn from_files(paths: &LexiconRef) -> Result<Self> {
        ensure_exists(&paths.matrix)?;
        ensure_exists(&paths.entries)?;
        let matrix = matrix::load_matrix(&paths.matrix)?;
        let text =
            std::fs::read_to_string(&paths.entries).map_err(|e| Error::io(&paths.entries, e))?;
        let entries = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect();
        Self::new(entries, matrix, paths.space)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.unit_rows.cols()
    }

    pub fn space(&self) -> LexiconSpace {
        self.space
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn unit_rows(&self) -> &EmbeddingMatrix {
        &self.unit_rows
    }

    /// The lexicon restricted to `columns`, rows re-normalized in the subspace.
    pub fn restrict(&self, columns: &[usize]) -> Result<Self> {
        let sub = self.unit_rows.select_columns(columns)?;
        Self::new(self.entries.clone(), sub, self.space)
    }
}

// ---- loaded dataset ----

#[derive(Debug, Clone)]
pub struct Domain {
    pub record: DomainRecord,
    cells: BTreeMap<Cell, Arc<EmbeddingMatrix>>,
}

impl Domain {
    pub fn new(record: DomainRecord, cells: BTreeMap<Cell, Arc<EmbeddingMatrix>>) -> Result<Self> {
        for cell in Cell::REQUIRED {
            if !cells.contains_key(&cell) {
                return Err(Error::BadSchema(format!(
                    "domain {:?} lacks cell {}",
                    record.id,
                    cell.name()
                )));
            }
        }
        Ok(Self { record, cells })
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn kind(&self) -> DomainKind {
        self.record.kind
    }

    pub fn cell(&self, cell: Cell) -> Option<&Arc<EmbeddingMatrix>> {
        self.cells.get(&cell)
    }

    pub fn dim(&self) -> usize {
        self.cells[&Cell::RealTrain].cols()
    }

    fn required(&self, cell: Cell) -> &EmbeddingMatrix {
        &self.cells[&cell]
    }

    /// Row ranges of each present cell inside this domain's head tensor.
    pub fn head_rows(&self) -> BTreeMap<Cell, std::ops::Range<usize>> {
        let mut out = BTreeMap::new();
        let mut start = 0;
        for cell in Cell::HEAD_ORDER {
            if let Some(m) = self.cells.get(&cell) {
                out.insert(cell, start..start + m.rows());
                start += m.rows();
            }
        }
        out
    }

    pub fn head_row_count(&self) -> usize {
        Cell::HEAD_ORDER
            .iter()
            .filter_map(|c| self.cells.get(c))
            .map(|m| m.rows())
            .sum()
    }

    /// Train and validation sets. Without val cells, the last
    /// [`FALLBACK_VAL_FRACTION`] of each train cell is held out.
    pub fn train_val(&self) -> Result<(LabeledSet, LabeledSet)> {
        let (rt, ft) = (self.required(Cell::RealTrain), self.required(Cell::FakeTrain));
        match (self.cells.get(&Cell::RealVal), self.cells.get(&Cell::FakeVal)) {
            (Some(rv), Some(fv)) => Ok((LabeledSet::from_cells(rt, ft)?, LabeledSet::from_cells(rv, fv)?)),
            _ => {
                let (rt_a, rt_b) = split_tail(rt)?;
                let (ft_a, ft_b) = split_tail(ft)?;
                Ok((
                    LabeledSet::from_cells(&rt_a, &ft_a)?,
                    LabeledSet::from_cells(&rt_b, &ft_b)?,
                ))
            }
        }
    }

    /// Train, validation and test sets over features produced by `features` for each
    /// cell, with the same fallback split as [`Domain::train_val`]. Used to view a
    /// domain through per-cell features other than its embeddings, such as head slices.
    pub fn sets_with<F>(&self, features: F) -> Result<(LabeledSet, LabeledSet, LabeledSet)>
    where
        F: Fn(Cell) -> Result<EmbeddingMatrix>,
    {
        let test = LabeledSet::from_cells(&features(Cell::RealTest)?, &features(Cell::FakeTest)?)?;
        let (rt, ft) = (features(Cell::RealTrain)?, features(Cell::FakeTrain)?);
        if self.cells.contains_key(&Cell::RealVal) && self.cells.contains_key(&Cell::FakeVal) {
            let val = LabeledSet::from_cells(&features(Cell::RealVal)?, &features(Cell::FakeVal)?)?;
            return Ok((LabeledSet::from_cells(&rt, &ft)?, val, test));
        }
        let (rt_a, rt_b) = split_tail(&rt)?;
        let (ft_a, ft_b) = split_tail(&ft)?;
        Ok((
            LabeledSet::from_cells(&rt_a, &ft_a)?,
            LabeledSet::from_cells(&rt_b, &ft_b)?,
            test,
        ))
    }

    pub fn test_set(&self) -> Result<LabeledSet> {
        LabeledSet::from_cells(self.required(Cell::RealTest), self.required(Cell::FakeTest))
    }

    /// Every row of the domain stacked in head-tensor order.
    pub fn all_rows(&self) -> Result<EmbeddingMatrix> {
        let parts: Vec<&EmbeddingMatrix> = Cell::HEAD_ORDER
            .iter()
            .filter_map(|c| self.cells.get(c).map(|m| m.as_ref()))
            .collect();
        EmbeddingMatrix::vstack(&parts)
    }
}

/// Splits off the tail of a cell for validation; a single-row cell serves as both.
fn split_tail(m: &EmbeddingMatrix) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let n = m.rows();
    if n < 2 {
        return Ok((m.clone(), m.clone()));
    }
    let held = ((n as f64 * FALLBACK_VAL_FRACTION).floor() as usize).clamp(1, n - 1);
    Ok((m.slice_rows(0, n - held)?, m.slice_rows(n - held, n)?))
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub domains: Vec<Domain>,
    pub lexicons: BTreeMap<String, Arc<Lexicon>>,
    pub head_tensors: BTreeMap<String, Arc<HeadTensor>>,
}

impl Dataset {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let manifest = Manifest::parse(path)?;
        Self::from_manifest(manifest)
    }

    pub fn from_manifest(manifest: Manifest) -> Result<Self> {
        let mut cache: HashMap<PathBuf, Arc<EmbeddingMatrix>> = HashMap::new();
        let mut domains = Vec::with_capacity(manifest.domains.len());
        for record in &manifest.domains {
            let mut cells = BTreeMap::new();
            for (&cell, path) in &record.files {
                ensure_exists(path)?;
                let key = path.canonicalize().map_err(|e| Error::io(path, e))?;
                let m = match cache.get(&key) {
                    Some(m) => Arc::clone(m),
                    None => {
                        let m = Arc::new(matrix::load_matrix(path)?);
                        cache.insert(key, Arc::clone(&m));
                        m
                    }
                };
                if m.cols() != manifest.dim {
                    return Err(Error::dims(
                        manifest.dim,
                        m.cols(),
                        format!("{} of domain {:?}", cell.name(), record.id),
                    ));
                }
                cells.insert(cell, m);
            }
            domains.push(Domain::new(record.clone(), cells)?);
        }

        let mut lexicons = BTreeMap::new();
        for (name, r) in &manifest.lexicons {
            lexicons.insert(name.clone(), Arc::new(Lexicon::from_files(r)?));
        }

        let mut head_tensors = BTreeMap::new();
        for (id, r) in &manifest.head_tensors {
            let tensor = HeadTensor::from_files(r)?;
            let domain = domains.iter().find(|d| d.id() == id).expect("resolved id");
            if tensor.images() != domain.head_row_count() {
                return Err(Error::ShapeMismatch(format!(
                    "head tensor of {id:?} has {} images, domain cells hold {}",
                    tensor.images(),
                    domain.head_row_count()
                )));
            }
            head_tensors.insert(id.clone(), Arc::new(tensor));
        }

        Ok(Self {
            manifest,
            domains,
            lexicons,
            head_tensors,
        })
    }

    pub fn domain(&self, id: &str) -> Result<&Domain> {
        self.domains
            .iter()
            .find(|d| d.id() == id)
            .ok_or_else(|| Error::UnknownDomain(id.to_string()))
    }

    pub fn lexicon(&self, name: &str) -> Result<&Arc<Lexicon>> {
        self.lexicons
            .get(name)
            .ok_or_else(|| Error::BadSchema(format!("manifest has no lexicon {name:?}")))
    }

    pub fn head_tensor(&self, id: &str) -> Result<&Arc<HeadTensor>> {
        self.head_tensors
            .get(id)
            .ok_or_else(|| Error::BadSchema(format!("manifest has no head tensor for {id:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_names_round_trip() {
        for c in Cell::HEAD_ORDER {
            assert_eq!(c.name().parse::<Cell>().unwrap(), c);
        }
        assert!("train".parse::<Cell>().is_err());
    }

    #[test]
    fn lexicon_rejects_duplicates_after_whitespace_normalization() {
        let m = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let err = Lexicon::new(
            vec!["a  photo".into(), " a photo".into()],
            m,
            LexiconSpace::Joint,
        );
        assert!(matches!(err, Err(Error::BadSchema(_))));
    }

    #[test]
    fn lexicon_rows_are_unit() {
        let m = EmbeddingMatrix::from_rows(&[[3.0, 4.0], [0.0, 2.0]]).unwrap();
        let lex = Lexicon::new(vec!["a".into(), "b".into()], m, LexiconSpace::Image).unwrap();
        assert_eq!(lex.unit_rows().row(0), &[0.6, 0.8]);
        assert_eq!(lex.unit_rows().row(1), &[0.0, 1.0]);
    }

    #[test]
    fn split_tail_holds_out_a_fifth() {
        let m = EmbeddingMatrix::zeros(10, 2).unwrap();
        let (a, b) = split_tail(&m).unwrap();
        assert_eq!((a.rows(), b.rows()), (8, 2));
        let m = EmbeddingMatrix::zeros(3, 2).unwrap();
        let (a, b) = split_tail(&m).unwrap();
        assert_eq!((a.rows(), b.rows()), (2, 1));
    }

    fn tiny_tensor() -> HeadTensor {
        // 2 images, 1 layer, 2 heads, dim 2
        let data = vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0, 1.0, -1.0];
        let projection = EmbeddingMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let mlp = EmbeddingMatrix::from_rows(&[[0.5, 0.5], [0.0, 0.0]]).unwrap();
        HeadTensor::new([2, 1, 2, 2], data, projection, vec![0.1, 0.2], mlp).unwrap()
    }

    #[test]
    fn reconstruction_identity() {
        let t = tiny_tensor();
        assert_eq!(t.reconstruct(0), vec![1.6, 1.7]);
        let reference = EmbeddingMatrix::from_rows(&[t.reconstruct(0), t.reconstruct(1)]).unwrap();
        assert!(t.check_reconstruction(&reference).unwrap() <= RECONSTRUCTION_TOL);

        let mut broken = t.clone();
        broken.slice_mut(1, 0, 0).iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(
            broken.check_reconstruction(&reference),
            Err(Error::ReconstructionFailure { row: 1, .. })
        ));
    }

    #[test]
    fn head_features_concatenate_in_order() {
        let t = tiny_tensor();
        let f = t.features(0..2, &[(0, 1), (0, 0)]).unwrap();
        assert_eq!(f.row(0), &[0.0, 1.0, 1.0, 0.0]);
        assert!(t.features(0..2, &[(1, 0)]).is_err());
    }

    #[test]
    fn head_tensor_shape_errors() {
        let projection = EmbeddingMatrix::zeros(3, 3).unwrap();
        let mlp = EmbeddingMatrix::zeros(2, 2).unwrap();
        let r = HeadTensor::new([2, 1, 2, 2], vec![0.0; 8], projection, vec![0.0; 2], mlp);
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }
}
