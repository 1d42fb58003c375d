//! Command-line front end. Every stage reads the manifest and writes JSON/CSV under
//! `--out` in `models/`, `traces/`, `masks/` and `reports/`. Logs go to stderr.
//!
//! Exit codes: 0 on success, 1 for data errors, 2 for usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{Dataset, Domain};
use crate::error::Error;
use crate::geometry::{self, GeometryOptions};
use crate::heads::{self, HeadRanking};
use crate::interpret::{self, Order};
use crate::probe::{self, GridSpec, LinearModel, DEFAULT_TOL};
use crate::residual;
use crate::select::{self, FeatureMask, GreedySearch, SelectionTrace};
use crate::transfer::{self, Detector, TransferMatrix};

#[derive(Debug, Parser)]
#[command(name = "genprobe", version, about = "Linear probes for generated-image detection on frozen embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Hyperparameter grid (JSON with `c_values` and `max_iter_values`).
    #[arg(long, global = true)]
    pub grid: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for sampled pairwise cosines.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Leave in-domain cells out of transfer summaries.
    #[arg(long, global = true)]
    pub exclude_diagonal: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and check every file the manifest references.
    Validate,
    /// Grid-searched baseline probe on one domain.
    Train {
        #[arg(long)]
        domain: String,
    },
    /// Residual direction and its one-feature detector for one domain.
    Residual {
        #[arg(long)]
        domain: String,
    },
    /// Lexicon entries nearest (or farthest) to a model's weights.
    Interpret {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lexicon: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        farthest: bool,
    },
    /// Greedy feature removal in both directions of a domain pair.
    SelectFeatures {
        /// Two domain ids, comma-separated.
        #[arg(long, value_delimiter = ',')]
        pair: Vec<String>,
        /// Continue from a saved trace; may be given once per direction.
        #[arg(long)]
        resume: Vec<PathBuf>,
        /// Removal steps per direction (default: 95% of the dimension).
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Transfer matrix of a feature mask over held-out domains.
    ApplyMask {
        #[arg(long)]
        mask: PathBuf,
        /// Evaluation domains (default: all outside the mask's search pair).
        #[arg(long, value_delimiter = ',')]
        domains: Vec<String>,
    },
    /// Rank attention heads and evaluate the top k.
    SelectHeads {
        #[arg(long)]
        train: String,
        #[arg(long)]
        val: String,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
    },
    /// Train-on-one, test-on-all accuracy matrix and its summary.
    EvalTransfer {
        #[arg(long, value_enum)]
        detector: DetectorArg,
        /// Feature mask for the masked detector.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Head ranking for the heads detector.
        #[arg(long)]
        ranking: Option<PathBuf>,
        /// Heads used by the heads detector.
        #[arg(short, long, default_value_t = 3)]
        k: usize,
        /// Domains to include (default: all).
        #[arg(long, value_delimiter = ',')]
        domains: Vec<String>,
    },
    /// IsoScore and mean cosine of a domain's embeddings, before and after a mask.
    Geometry {
        #[arg(long)]
        domain: String,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Subtract the mean before measuring cosines.
        #[arg(long)]
        center: bool,
        #[arg(long, default_value_t = geometry::DEFAULT_MAX_PAIRS)]
        max_pairs: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Baseline,
    Residual,
    Masked,
    Heads,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Ctx<'a> {
    global: &'a Global,
    data: Dataset,
    grid: GridSpec,
}

impl Ctx<'_> {
    fn dir(&self, sub: &str) -> Result<PathBuf, Failure> {
        let dir = self.global.out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn domains(&self, ids: &[String]) -> Result<Vec<&Domain>, Failure> {
        if ids.is_empty() {
            return Ok(self.data.domains.iter().collect());
        }
        Ok(ids.iter().map(|id| self.data.domain(id)).collect::<crate::Result<_>>()?)
    }

    fn report(&self, m: &TransferMatrix, stem: &str) -> Outcome {
        let dir = self.dir("reports")?;
        match transfer::summarize(m, self.global.exclude_diagonal) {
            Ok(summary) => {
                let paths = transfer::export_report(m, &summary, &dir, stem)?;
                eprintln!("{stem}: a_all = {:.4} ({})", summary.a_all, paths.summary_json.display());
            }
            Err(Error::EmptySubset(group)) => {
                eprintln!("{stem}: no cells for {group}; writing null for empty groups");
                write_text(&dir.join(format!("{stem}_matrix.csv")), &transfer::matrix_csv(m))?;
                write_text(&dir.join(format!("{stem}_long.csv")), &transfer::long_csv(m))?;
                write_text(
                    &dir.join(format!("{stem}_summary.json")),
                    &(transfer::partial_summary_json(m, self.global.exclude_diagonal) + "\n"),
                )?;
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn execute(cli: &Cli) -> Outcome {
    let g = &cli.global;
    let manifest = g
        .manifest
        .as_ref()
        .ok_or_else(|| Failure::Usage("--manifest is required".into()))?;
    let grid = match &g.grid {
        Some(p) => GridSpec::load(p)?,
        None => GridSpec::default(),
    };
    let data = Dataset::open(manifest)?;
    let ctx = Ctx { global: g, data, grid };
    let tol = DEFAULT_TOL;

    match &cli.command {
        Command::Validate => {
            let d = &ctx.data;
            eprintln!(
                "manifest {:?}: dim {}, {} domains, {} lexicons, {} head tensors",
                d.manifest.name,
                d.manifest.dim,
                d.domains.len(),
                d.lexicons.len(),
                d.head_tensors.len()
            );
            for dom in &d.domains {
                eprintln!("  {} ({}): {} rows", dom.id(), dom.kind(), dom.head_row_count());
            }
            Ok(())
        }

        Command::Train { domain } => {
            let dom = ctx.data.domain(domain)?;
            let (train, val) = dom.train_val()?;
            let mut fit = probe::grid_search(&train, &val, &ctx.grid, tol)?;
            fit.model.train_meta.domain = Some(domain.clone());
            let test_acc = probe::accuracy(&fit.model, &dom.test_set()?)?;
            fit.model
                .train_meta
                .extra
                .insert("test_accuracy".into(), serde_json::json!(test_acc));
            let path = ctx.dir("models")?.join(format!("{domain}_baseline.json"));
            fit.model.save(&path, Some("baseline"))?;
            eprintln!(
                "{domain}: C = {}, max_iter = {}, test accuracy {test_acc:.4}",
                fit.chosen.c_reg, fit.chosen.max_iter
            );
            Ok(())
        }

        Command::Residual { domain } => {
            let dom = ctx.data.domain(domain)?;
            let (train, val) = dom.train_val()?;
            let (real, fake) = transfer::split_classes(&train)?;
            let mut dir = residual::compute_residual(&fake, &real)?;
            dir.domain_id = Some(domain.clone());
            if dir.degenerate {
                return Err(Error::DegenerateDirection.into());
            }
            let clf = residual::fit_residual_classifier(&dir, &train, &val, &ctx.grid, tol)?;
            let test_acc = clf.accuracy(&dom.test_set()?)?;
            let mut model = clf.to_model_file();
            model
                .train_meta
                .extra
                .insert("test_accuracy".into(), serde_json::json!(test_acc));
            let path = ctx.dir("models")?.join(format!("{domain}_residual.json"));
            model.save(&path, Some("residual"))?;
            eprintln!("{domain}: residual detector test accuracy {test_acc:.4}");
            Ok(())
        }

        Command::Interpret { model, lexicon, k, farthest } => {
            let (m, _) = LinearModel::load(model)?;
            let lex = ctx.data.lexicon(lexicon)?;
            if *k > lex.len() {
                return Err(Failure::Usage(format!(
                    "-k {k} exceeds the size of lexicon {lexicon:?} ({})",
                    lex.len()
                )));
            }
            let order = if *farthest { Order::Farthest } else { Order::Nearest };
            let report = interpret::interpret_model(&m, lex, *k, order)?;
            let stem = model
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into());
            let which = if *farthest { "farthest" } else { "nearest" };
            let dir = ctx.dir("reports")?;
            let base = format!("interpret_{stem}_{lexicon}_{which}");
            write_text(&dir.join(format!("{base}.md")), &report.to_markdown())?;
            write_text(&dir.join(format!("{base}.json")), &(report.to_json() + "\n"))
        }

        Command::SelectFeatures { pair, resume, max_steps } => {
            let [a, b] = pair.as_slice() else {
                return Err(Failure::Usage("--pair takes exactly two domain ids".into()));
            };
            if a == b {
                return Err(Failure::Usage("--pair needs two different domains".into()));
            }
            let (da, db) = (ctx.data.domain(a)?, ctx.data.domain(b)?);
            let dim = da.dim();
            let steps = max_steps.unwrap_or_else(|| select::default_max_steps(dim));
            if steps >= dim {
                return Err(Failure::Usage(format!(
                    "--max-steps {steps} must be below the dimension {dim}"
                )));
            }
            let mut resumed: Vec<SelectionTrace> =
                resume.iter().map(SelectionTrace::load).collect::<crate::Result<_>>()?;
            let traces_dir = ctx.dir("traces")?;
            let mut traces = Vec::new();
            for (src, dst) in [(da, db), (db, da)] {
                let direction = [src.id().to_string(), dst.id().to_string()];
                let (train, val) = src.train_val()?;
                let target = dst.test_set()?;
                let start = match resumed.iter().position(|t| t.direction == direction) {
                    Some(i) => {
                        let mut t = resumed.swap_remove(i);
                        t.max_steps = steps;
                        eprintln!("resuming {} -> {} at step {}", src.id(), dst.id(), t.completed_steps);
                        t
                    }
                    None => {
                        let hp = probe::grid_search(&train, &val, &ctx.grid, tol)?.chosen;
                        let probe_search = GreedySearch {
                            train: &train,
                            target: &target,
                            hyperparams: hp,
                            tol,
                            checkpoint: None,
                        };
                        SelectionTrace::new(direction.clone(), dim, hp, probe_search.baseline()?, steps)
                    }
                };
                if start.completed_steps > steps {
                    return Err(Failure::Usage(format!(
                        "trace already has {} steps, more than --max-steps {steps}",
                        start.completed_steps
                    )));
                }
                let search = GreedySearch {
                    train: &train,
                    target: &target,
                    hyperparams: start.hyperparams,
                    tol,
                    checkpoint: Some(traces_dir.join(format!("{}_to_{}.json", src.id(), dst.id()))),
                };
                let trace = search.run(start)?;
                trace.save(search.checkpoint.as_ref().expect("set above"))?;
                eprintln!(
                    "{} -> {}: baseline {:.4}, best {:.4} after {} removals",
                    src.id(),
                    dst.id(),
                    trace.baseline_score,
                    trace.best_step().map_or(trace.baseline_score, |s| trace.scores[s]),
                    trace.best_step().map_or(0, |s| s + 1)
                );
                traces.push(trace);
            }
            if !resumed.is_empty() {
                return Err(Failure::Usage(format!(
                    "resumed trace {:?} does not belong to pair {a},{b}",
                    resumed[0].direction
                )));
            }
            let mask = select::combine_traces(&traces[0], &traces[1])?;
            let path = ctx.dir("masks")?.join(format!("{a}_{b}.json"));
            mask.save(&path)?;
            eprintln!("mask keeps {} of {dim} features ({})", mask.kept.len(), path.display());
            Ok(())
        }

        Command::ApplyMask { mask, domains } => {
            let mask = FeatureMask::load(mask)?;
            let eval: Vec<&Domain> = if domains.is_empty() {
                ctx.data
                    .domains
                    .iter()
                    .filter(|d| !mask.search_pair.iter().any(|s| s == d.id()))
                    .collect()
            } else {
                ctx.domains(domains)?
            };
            if eval.is_empty() {
                return Err(Failure::Usage("no evaluation domains outside the search pair".into()));
            }
            let m = select::evaluate_mask(&mask, &eval, &ctx.grid, tol)?;
            ctx.report(&m, "masked_eval")
        }

        Command::SelectHeads { train, val, k } => {
            if train == val {
                return Err(Failure::Usage("--train and --val must differ".into()));
            }
            let (td, vd) = (ctx.data.domain(train)?, ctx.data.domain(val)?);
            let (tt, vt) = (ctx.data.head_tensor(train)?, ctx.data.head_tensor(val)?);
            let total = tt.layers() * tt.heads_per_layer();
            if *k == 0 || *k > total {
                return Err(Failure::Usage(format!("-k must be in 1..={total}")));
            }
            let ranking = heads::rank_heads((td, tt), (vd, vt), &ctx.grid, tol)?;
            let path = ctx.dir("reports")?.join(format!("heads_ranking_{train}_{val}.json"));
            ranking.save(&path)?;
            let top = heads::select_top(&ranking, *k)?;
            let names: Vec<String> = top.iter().map(|h| h.to_string()).collect();
            eprintln!("top {k} heads: {}", names.join(", "));
            let fit = heads::train_on_heads(&top, td, tt, &ctx.grid, tol)?;
            fit.model
                .save(ctx.dir("models")?.join(format!("{train}_heads.json")), Some("heads"))?;
            let with_tensors: Vec<&Domain> = ctx
                .data
                .domains
                .iter()
                .filter(|d| ctx.data.head_tensors.contains_key(d.id()))
                .collect();
            let m = heads::head_transfer_eval(&top, &with_tensors, &ctx.data.head_tensors, val, &ctx.grid, tol)?;
            ctx.report(&m, "heads_eval")
        }

        Command::EvalTransfer { detector, mask, ranking, k, domains } => {
            let doms = ctx.domains(domains)?;
            let (m, stem) = match detector {
                DetectorArg::Baseline => (
                    transfer::build_matrix(&doms, &Detector::Baseline, &ctx.grid, tol)?,
                    "baseline",
                ),
                DetectorArg::Residual => (
                    transfer::build_matrix(&doms, &Detector::Residual, &ctx.grid, tol)?,
                    "residual",
                ),
                DetectorArg::Masked => {
                    let path = mask
                        .as_ref()
                        .ok_or_else(|| Failure::Usage("--detector masked needs --mask".into()))?;
                    let mask = FeatureMask::load(path)?;
                    (
                        transfer::build_matrix(&doms, &Detector::Masked(&mask), &ctx.grid, tol)?,
                        "masked",
                    )
                }
                DetectorArg::Heads => {
                    let path = ranking
                        .as_ref()
                        .ok_or_else(|| Failure::Usage("--detector heads needs --ranking".into()))?;
                    let ranking = HeadRanking::load(path)?;
                    if *k == 0 || *k > ranking.ranking.len() {
                        return Err(Failure::Usage(format!(
                            "-k must be in 1..={}",
                            ranking.ranking.len()
                        )));
                    }
                    let top = heads::select_top(&ranking, *k)?;
                    let doms: Vec<&Domain> = if domains.is_empty() {
                        doms.into_iter()
                            .filter(|d| ctx.data.head_tensors.contains_key(d.id()))
                            .collect()
                    } else {
                        doms
                    };
                    (
                        heads::head_transfer_eval(
                            &top,
                            &doms,
                            &ctx.data.head_tensors,
                            &ranking.val,
                            &ctx.grid,
                            tol,
                        )?,
                        "heads",
                    )
                }
            };
            ctx.report(&m, stem)
        }

        Command::Geometry { domain, mask, center, max_pairs } => {
            let dom = ctx.data.domain(domain)?;
            let points = dom.all_rows()?;
            let mask = match mask {
                Some(p) => FeatureMask::load(p)?,
                None => FeatureMask::all(points.cols()),
            };
            if *max_pairs == 0 {
                return Err(Failure::Usage("--max-pairs must be positive".into()));
            }
            let opts = GeometryOptions {
                max_pairs: *max_pairs,
                seed: g.seed,
                center: *center,
            };
            let report = geometry::isotropy_report(&points, &mask, &opts)?;
            let path = ctx.dir("reports")?.join(format!("geometry_{domain}.json"));
            write_text(
                &path,
                &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
            )
        }
    }
}
