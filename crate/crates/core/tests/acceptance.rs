//! End-to-end acceptance checks on synthetic fixtures. Prints one PASS/FAIL line per
//! check and exits non-zero if any fails.

// oracles are written as plain index loops on purpose
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use genprobe::dataset::{Cell, DomainKind};
use genprobe::geometry;
use genprobe::heads::{self, HeadId};
use genprobe::matrix::EmbeddingMatrix;
use genprobe::probe::{self, GridSpec, Hyperparams, LabeledSet};
use genprobe::residual;
use genprobe::select::{self, FeatureMask, GreedySearch, SelectionTrace};
use genprobe::synth::{self, HeadFixture, SpuriousFixture, SplitSizes};
use genprobe::transfer::{self, Detector, DetectorTag, TransferMatrix};

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn gaussian_set(rng: &mut ChaCha8Rng, n: usize, real_mean: &[f64], fake_mean: &[f64]) -> LabeledSet {
    let real = synth::gaussian(rng, n, real_mean).unwrap();
    let fake = synth::gaussian(rng, n, fake_mean).unwrap();
    LabeledSet::from_cells(&real, &fake).unwrap()
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

// ---- LR correctness ----

/// Mean log-loss plus `|w|^2 / (2 c N)` and its gradient, written out directly.
fn oracle_objective(set: &LabeledSet, c: f64, w: &[f64]) -> (f64, Vec<f64>) {
    let n = set.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; w.len()];
    for (row, &label) in set.features.iter_rows().zip(&set.labels) {
        let z: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
        let y = if label { 1.0 } else { 0.0 };
        let p = 1.0 / (1.0 + (-z).exp());
        // log(1 + e^z) - y z, stable for both signs
        loss += if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() } - y * z;
        for (g, x) in grad.iter_mut().zip(row) {
            *g += (p - y) * x;
        }
    }
    let lambda = 1.0 / (c * n);
    let mut value = loss / n;
    for (g, wi) in grad.iter_mut().zip(w) {
        *g = *g / n + lambda * wi;
        value += 0.5 * lambda * wi * wi;
    }
    (value, grad)
}

/// Nesterov-accelerated gradient descent with the strongly convex momentum schedule.
fn gradient_descent(set: &LabeledSet, c: f64) -> Vec<f64> {
    let n = set.len() as f64;
    let lambda = 1.0 / (c * n);
    let lipschitz = set
        .features
        .iter_rows()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / (4.0 * n)
        + lambda;
    let step = 1.0 / lipschitz;
    let kappa = (lipschitz / lambda).sqrt();
    let momentum = (kappa - 1.0) / (kappa + 1.0);
    let mut w = vec![0.0; set.dim()];
    let mut prev = w.clone();
    for _ in 0..2_000_000 {
        let look: Vec<f64> = w.iter().zip(&prev).map(|(a, b)| a + momentum * (a - b)).collect();
        let (_, g) = oracle_objective(set, c, &look);
        let (_, g_here) = oracle_objective(set, c, &w);
        // strong convexity: |w - w*| <= |g| / lambda, far below the tolerance checked later
        if g_here.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-10 {
            return w;
        }
        prev = std::mem::replace(&mut w, look.iter().zip(&g).map(|(y, gi)| y - step * gi).collect());
    }
    panic!("gradient descent did not converge");
}

fn lr_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_rel, mut worst_fd) = (0.0f64, 0.0f64);
    for inst in 0..20 {
        let shift = normal_vec(&mut rng, 10, 0.5);
        let neg: Vec<f64> = shift.iter().map(|v| -v).collect();
        let n = 100 + 20 * (inst % 5);
        let set = gaussian_set(&mut rng, n, &shift, &neg);
        let c = [0.01, 0.1, 1.0, 0.05][inst % 4];

        let model = probe::train_logreg(&set, c, 100_000, 1e-11).map_err(|e| e.to_string())?;
        ensure!(model.train_meta.converged, "instance {inst} did not converge");
        let oracle = gradient_descent(&set, c);
        let diff: f64 = model.weights.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_rel = worst_rel.max(diff / scale);

        // finite differences of the library objective at a random point and at the fit
        for w in [normal_vec(&mut rng, 10, 0.7), model.weights.clone()] {
            let mut g = vec![0.0; 10];
            probe::objective(&set, c, &w, &mut g);
            let (_, g_oracle) = oracle_objective(&set, c, &w);
            for k in 0..10 {
                let h = 1e-5;
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[k] += h;
                wm[k] -= h;
                let mut scratch = vec![0.0; 10];
                let fd = (probe::objective(&set, c, &wp, &mut scratch)
                    - probe::objective(&set, c, &wm, &mut scratch))
                    / (2.0 * h);
                worst_fd = worst_fd.max((fd - g[k]).abs() / g[k].abs().max(1.0));
                ensure!((g[k] - g_oracle[k]).abs() < 1e-12, "gradient differs from oracle at instance {inst}");
            }
        }
    }
    ensure!(worst_rel <= 1e-4, "weights relative error {worst_rel:.2e} > 1e-4");
    ensure!(worst_fd <= 1e-5, "finite-difference error {worst_fd:.2e} > 1e-5");
    Ok(format!("max weight rel err {worst_rel:.1e}, max gradient err {worst_fd:.1e}"))
}

// ---- grid search ----

const REFERENCE_C: [f64; 8] = [0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 10.0];
const REFERENCE_ITERS: [usize; 6] = [10, 50, 100, 500, 1000, 5000];

fn grid_fidelity() -> Check {
    let grid = GridSpec::default();
    ensure!(grid.c_values == REFERENCE_C, "default C values {:?}", grid.c_values);
    ensure!(grid.max_iter_values == REFERENCE_ITERS, "default iteration caps {:?}", grid.max_iter_values);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut distinct = std::collections::BTreeSet::new();
    for f in 0..5 {
        let d = 6;
        let shift = normal_vec(&mut rng, d, 0.35);
        let neg: Vec<f64> = shift.iter().map(|v| -v).collect();
        let train = gaussian_set(&mut rng, 30 + 10 * f, &shift, &neg);
        let val = gaussian_set(&mut rng, 40, &shift, &neg);

        let mut best: Option<(f64, usize, f64)> = None;
        for &c in &REFERENCE_C {
            for &it in &REFERENCE_ITERS {
                let m = probe::train_logreg(&train, c, it, probe::DEFAULT_TOL).unwrap();
                let acc = probe::accuracy(&m, &val).unwrap();
                if best.is_none_or(|(_, _, b)| acc > b) {
                    best = Some((c, it, acc));
                }
            }
        }
        let (c, it, _) = best.unwrap();
        let got = probe::grid_search(&train, &val, &grid, probe::DEFAULT_TOL).map_err(|e| e.to_string())?;
        ensure!(
            got.chosen == Hyperparams { c_reg: c, max_iter: it },
            "fixture {f}: grid search chose {:?}, exhaustive loop chose ({c}, {it})",
            got.chosen
        );
        let refit = probe::train_logreg(&train.concat(&val).unwrap(), c, it, probe::DEFAULT_TOL).unwrap();
        ensure!(refit.weights == got.model.weights, "fixture {f}: final model is not the train+val refit");
        distinct.insert(format!("{c}/{it}"));
    }
    Ok(format!("5/5 fixtures agree; chosen cells {distinct:?}"))
}

// ---- residual ----

fn residual_oracle(fake: &EmbeddingMatrix, real: &EmbeddingMatrix) -> Vec<f64> {
    let unit_mean = |m: &EmbeddingMatrix| {
        let mut mean = vec![0.0; m.cols()];
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                mean[j] += m.row(i)[j];
            }
        }
        for v in mean.iter_mut() {
            *v /= m.rows() as f64;
        }
        let mut sq = 0.0;
        for v in &mean {
            sq += v * v;
        }
        let n = sq.sqrt();
        mean.into_iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    let (f, r) = (unit_mean(fake), unit_mean(real));
    (0..f.len()).map(|j| f[j] - r[j]).collect()
}

fn residual_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let d = 3 + inst % 8;
        let (fm, rm) = (normal_vec(&mut rng, d, 1.0), normal_vec(&mut rng, d, 1.0));
        let fake = synth::gaussian(&mut rng, 5 + inst, &fm).unwrap();
        let real = synth::gaussian(&mut rng, 7 + 2 * inst, &rm).unwrap();
        let got = residual::compute_residual(&fake, &real).map_err(|e| e.to_string())?;
        let want = residual_oracle(&fake, &real);
        for (a, b) in got.vector.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }

        let swapped = residual::compute_residual(&real, &fake).unwrap();
        ensure!(
            swapped.vector.iter().zip(&got.vector).all(|(a, b)| *a == -*b),
            "antisymmetry fails at instance {inst}"
        );

        // power-of-two scales are exact in floating point, so the result must not move at all
        let (sf, sr) = (2f64.powi(inst as i32 % 7 - 3), 2f64.powi(5 - inst as i32 % 4));
        let fake_s = fake.map_rows(|r| r.iter().map(|v| v * sf).collect()).unwrap();
        let real_s = real.map_rows(|r| r.iter().map(|v| v * sr).collect()).unwrap();
        let scaled = residual::compute_residual(&fake_s, &real_s).unwrap();
        ensure!(scaled.vector == got.vector, "power-of-two scale changes the residual at instance {inst}");

        let s = rng.random_range(0.01..100.0);
        let fake_s = fake.map_rows(|r| r.iter().map(|v| v * s).collect()).unwrap();
        let scaled = residual::compute_residual(&fake_s, &real).unwrap();
        for (a, b) in scaled.vector.iter().zip(&got.vector) {
            ensure!((a - b).abs() <= 1e-12, "scale {s} moves the residual by {:.1e}", (a - b).abs());
        }
    }
    ensure!(worst <= 1e-12, "max deviation from scalar oracle {worst:.1e}");
    Ok(format!("20/20 instances, max deviation {worst:.1e}"))
}

// ---- greedy search ----

fn off_diagonal_mean(m: &TransferMatrix) -> f64 {
    let n = m.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += m.get(i, j);
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

fn greedy_recovery() -> Check {
    let fixture = SpuriousFixture::default();
    let domains = fixture.build().unwrap();
    let by_id: BTreeMap<&str, _> = domains.iter().map(|d| (d.id(), d)).collect();
    let (d1, d2) = (by_id["gan_a"], by_id["diff_a"]);
    let grid = GridSpec::default();
    let tol = probe::DEFAULT_TOL;
    let steps = select::default_max_steps(fixture.dim);
    let t12 = select::greedy_search(d1, d2, &grid, steps, tol).map_err(|e| e.to_string())?;
    let t21 = select::greedy_search(d2, d1, &grid, steps, tol).map_err(|e| e.to_string())?;
    let mask = select::combine_traces(&t12, &t21).map_err(|e| e.to_string())?;
    for s in &fixture.spurious_dims {
        ensure!(!mask.kept.contains(s), "spurious coordinate {s} survived: kept {:?}", mask.kept);
    }
    ensure!(mask.kept.contains(&0), "signal coordinate removed");

    let eval = [by_id["gan_b"], by_id["diff_b"]];
    let baseline = transfer::build_matrix(&eval, &Detector::Baseline, &grid, tol).unwrap();
    let masked = select::evaluate_mask(&mask, &eval, &grid, tol).unwrap();
    let (b, m) = (off_diagonal_mean(&baseline), off_diagonal_mean(&masked));
    ensure!(b <= 0.75, "baseline off-diagonal accuracy {b:.4} > 0.75");
    ensure!(m >= 0.95, "masked off-diagonal accuracy {m:.4} < 0.95");
    Ok(format!(
        "kept {} of {} dims, off-diagonal accuracy {b:.4} -> {m:.4}",
        mask.kept.len(),
        fixture.dim
    ))
}

fn step_one_optimality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let grid = GridSpec::default();
    let tol = probe::DEFAULT_TOL;
    let mut firsts = Vec::new();
    for f in 0..10u64 {
        let dim = rng.random_range(6..=16);
        let n_spur = rng.random_range(1..=3);
        let mut dims: Vec<usize> = (1..dim).collect();
        for i in 0..n_spur {
            let j = rng.random_range(i..dims.len());
            dims.swap(i, j);
        }
        dims.truncate(n_spur);
        let signs = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n_spur).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
        };
        let fixture = SpuriousFixture {
            dim,
            signal: rng.random_range(0.8..2.0),
            spurious: rng.random_range(0.5..2.5),
            spurious_dims: dims,
            sizes: SplitSizes { train: 150, val: 50, test: 150 },
            domains: vec![
                ("a".into(), DomainKind::Gan, signs(&mut rng)),
                ("b".into(), DomainKind::Diffusion, signs(&mut rng)),
            ],
            seed: 900 + f,
        };
        let ds = fixture.build().unwrap();
        let (train, val) = ds[0].train_val().unwrap();
        let target = ds[1].test_set().unwrap();
        let hp = probe::grid_search(&train, &val, &grid, tol).unwrap().chosen;

        let mut best: Option<(usize, f64)> = None;
        for drop in 0..dim {
            let keep: Vec<usize> = (0..dim).filter(|&k| k != drop).collect();
            let m = probe::train_logreg(&train.select_columns(&keep).unwrap(), hp.c_reg, hp.max_iter, tol).unwrap();
            let acc = probe::accuracy(&m, &target.select_columns(&keep).unwrap()).unwrap();
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((drop, acc));
            }
        }
        let search = GreedySearch { train: &train, target: &target, hyperparams: hp, tol, checkpoint: None };
        let trace = SelectionTrace::new(["a".into(), "b".into()], dim, hp, search.baseline().unwrap(), 1);
        let trace = search.run(trace).map_err(|e| e.to_string())?;
        let (want, acc) = best.unwrap();
        ensure!(
            trace.removed[0] == want && trace.scores[0] == acc,
            "fixture {f}: search removed {} ({:.4}), brute force {want} ({acc:.4})",
            trace.removed[0],
            trace.scores[0]
        );
        firsts.push(want);
    }
    Ok(format!("10/10 fixtures agree, first removals {firsts:?}"))
}

// ---- heads ----

fn exhaustive_ranking(
    hd: &synth::HeadDataset,
    train: usize,
    val: usize,
    grid: &GridSpec,
) -> Vec<(HeadId, f64)> {
    let (td, vd) = (&hd.domains[train], &hd.domains[val]);
    let (tt, vt) = (&hd.tensors[td.id()], &hd.tensors[vd.id()]);
    let (tr, vr) = (td.head_rows(), vd.head_rows());
    let mut out = Vec::new();
    for l in 0..tt.layers() {
        for h in 0..tt.heads_per_layer() {
            let f = |t: &genprobe::HeadTensor, rows: &BTreeMap<Cell, std::ops::Range<usize>>, c: Cell| {
                t.features(rows[&c].clone(), &[(l, h)]).unwrap()
            };
            let train_set = LabeledSet::from_cells(&f(tt, &tr, Cell::RealTrain), &f(tt, &tr, Cell::FakeTrain)).unwrap();
            let val_set = LabeledSet::from_cells(&f(tt, &tr, Cell::RealVal), &f(tt, &tr, Cell::FakeVal)).unwrap();
            let test_set = LabeledSet::from_cells(&f(vt, &vr, Cell::RealTest), &f(vt, &vr, Cell::FakeTest)).unwrap();
            let model = probe::grid_search(&train_set, &val_set, grid, probe::DEFAULT_TOL).unwrap().model;
            out.push((HeadId::new(l, h), probe::accuracy(&model, &test_set).unwrap()));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

fn head_selection() -> Check {
    let grid = GridSpec::default();
    let fixtures = [
        HeadFixture::default(),
        HeadFixture {
            layers: 2,
            heads: 3,
            informative: vec![
                (HeadId::new(0, 1), 1.2),
                (HeadId::new(1, 2), 0.8),
                (HeadId::new(1, 0), 0.5),
                (HeadId::new(0, 0), 0.25),
            ],
            seed: 21,
            ..Default::default()
        },
        HeadFixture {
            layers: 4,
            heads: 3,
            informative: vec![(HeadId::new(3, 0), 1.5), (HeadId::new(0, 2), 1.0), (HeadId::new(2, 1), 0.6)],
            seed: 22,
            ..Default::default()
        },
    ];
    let mut notes = Vec::new();
    for (f, fx) in fixtures.iter().enumerate() {
        let hd = fx.build().unwrap();
        let (td, vd) = (&hd.domains[0], &hd.domains[1]);
        let ranking = heads::rank_heads(
            (td, &hd.tensors[td.id()]),
            (vd, &hd.tensors[vd.id()]),
            &grid,
            probe::DEFAULT_TOL,
        )
        .map_err(|e| e.to_string())?;
        let oracle = exhaustive_ranking(&hd, 0, 1, &grid);
        let top = heads::select_top(&ranking, 3).unwrap();
        let want: Vec<HeadId> = oracle[..3].iter().map(|p| p.0).collect();
        ensure!(top == want, "fixture {f}: top-3 {top:?}, exhaustive {want:?}");
        if f == 0 {
            let first = &ranking.ranking[0];
            ensure!(first.id() == HeadId::new(1, 2), "informative head ranked {:?}", first.id());
            ensure!(first.val_acc >= 0.95, "informative head val accuracy {:.4}", first.val_acc);
            let rest = ranking.ranking[1..].iter().map(|r| r.val_acc).fold(0.0, f64::max);
            ensure!(rest <= 0.6, "best uninformative head val accuracy {rest:.4}");
            notes.push(format!("informative {:.3}, others <= {rest:.3}", first.val_acc));
        }
    }
    Ok(format!("3/3 fixtures match exhaustive top-3; {}", notes.join("")))
}

// ---- transfer metrics ----

fn transfer_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let mut kinds = vec![DomainKind::Gan; 6];
        kinds.extend([DomainKind::Diffusion; 5]);
        if inst % 2 == 1 {
            for i in (1..11).rev() {
                kinds.swap(i, rng.random_range(0..=i));
            }
        }
        let cells: Vec<Vec<f64>> = (0..11).map(|_| (0..11).map(|_| rng.random_range(0.3..1.0)).collect()).collect();
        let m = TransferMatrix {
            domain_ids: (0..11).map(|i| format!("g{i}")).collect(),
            kinds: kinds.clone(),
            cells: cells.clone(),
            detector: DetectorTag::Baseline,
        };
        for exclude in [false, true] {
            let s = transfer::summarize(&m, exclude).map_err(|e| e.to_string())?;
            let idx = |k: Option<DomainKind>| -> Vec<usize> {
                (0..11).filter(|&i| k.is_none_or(|k| kinds[i] == k)).collect()
            };
            let mean = |a: &[usize], b: &[usize]| {
                let (mut sum, mut n) = (0.0, 0.0);
                for &i in a {
                    for &j in b {
                        if !(exclude && i == j) {
                            sum += cells[i][j];
                            n += 1.0;
                        }
                    }
                }
                sum / n
            };
            let (all, gan, diff) = (idx(None), idx(Some(DomainKind::Gan)), idx(Some(DomainKind::Diffusion)));
            for (got, want) in [
                (s.a_all, mean(&all, &all)),
                (s.a_gan, mean(&gan, &gan)),
                (s.a_diff, mean(&diff, &diff)),
                (s.a_gan_to_diff, mean(&gan, &diff)),
                (s.a_diff_to_gan, mean(&diff, &gan)),
            ] {
                worst = worst.max((got - want).abs());
            }
        }
    }
    ensure!(worst <= 1e-12, "max deviation {worst:.1e}");
    Ok(format!("20 random 11x11 matrices, both diagonal modes, max deviation {worst:.1e}"))
}

// ---- isoscore ----

fn isoscore_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let iso = synth::gaussian(&mut rng, 50_000, &[0.0; 10]).unwrap();
    let s_iso = geometry::isoscore(&iso).unwrap();
    ensure!(s_iso >= 0.95, "isotropic cloud scores {s_iso:.4}");

    let dir = synth::unit_vector(&mut rng, 10);
    let line: Vec<Vec<f64>> = (0..500)
        .map(|_| {
            let t: f64 = rng.sample(StandardNormal);
            dir.iter().map(|v| t * v).collect()
        })
        .collect();
    let s_line = geometry::isoscore(&EmbeddingMatrix::from_rows(&line).unwrap()).unwrap();
    ensure!(s_line <= 0.05, "rank-1 cloud scores {s_line:.4}");

    // anisotropic cloud and a random rotation of it
    let scales: Vec<f64> = (0..10).map(|i| 0.3 + 0.4 * i as f64).collect();
    let aniso = synth::gaussian(&mut rng, 2000, &[0.0; 10])
        .unwrap()
        .map_rows(|r| r.iter().zip(&scales).map(|(v, s)| v * s).collect())
        .unwrap();
    let q = DMatrix::from_fn(10, 10, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let rotated = aniso
        .map_rows(|r| (0..10).map(|j| (0..10).map(|k| r[k] * q[(k, j)]).sum()).collect())
        .unwrap();
    let (a, b) = (geometry::isoscore(&aniso).unwrap(), geometry::isoscore(&rotated).unwrap());
    ensure!((a - b).abs() <= 1e-6, "rotation moves IsoScore by {:.1e}", (a - b).abs());

    // one rogue coordinate with a large offset and variance
    let mut mean = vec![0.0; 16];
    mean[5] = 8.0;
    let rogue = synth::gaussian(&mut rng, 2000, &mean)
        .unwrap()
        .map_rows(|r| {
            let mut r = r.to_vec();
            r[5] = 8.0 + 4.0 * (r[5] - 8.0);
            r
        })
        .unwrap();
    let mask = FeatureMask::new((0..16).filter(|&k| k != 5).collect(), 16).unwrap();
    let rep = geometry::isotropy_report(&rogue, &mask, &Default::default()).unwrap();
    ensure!(
        rep.isoscore_after > rep.isoscore_before,
        "masking the rogue coordinate does not raise IsoScore ({:.4} -> {:.4})",
        rep.isoscore_before,
        rep.isoscore_after
    );
    ensure!(
        rep.mean_cosine_after < rep.mean_cosine_before,
        "masking the rogue coordinate does not lower mean cosine ({:.4} -> {:.4})",
        rep.mean_cosine_before,
        rep.mean_cosine_after
    );
    Ok(format!(
        "isotropic {s_iso:.4}, rank-1 {s_line:.1e}, rotation delta {:.1e}, rogue mask IsoScore {:.3}->{:.3}, cosine {:.3}->{:.3}",
        (a - b).abs(),
        rep.isoscore_before,
        rep.isoscore_after,
        rep.mean_cosine_before,
        rep.mean_cosine_after
    ))
}

// ---- determinism ----

fn pipeline(tiny: &std::path::Path, spur: &std::path::Path, out: &std::path::Path, threads: &str) {
    let o = out.to_str().unwrap();
    let t = tiny.to_str().unwrap();
    let s = spur.to_str().unwrap();
    let run = |manifest: &str, rest: &[&str]| {
        let mut args = vec!["--manifest", manifest, "--out", o, "--threads", threads, "--seed", "5"];
        args.extend_from_slice(rest);
        common::genprobe_ok(&args);
    };
    let model = out.join("models/gan_a_baseline.json");
    let mask = out.join("masks/gan_a_diff_a.json");
    run(t, &["validate"]);
    run(t, &["train", "--domain", "gan_a"]);
    run(t, &["residual", "--domain", "diff_a"]);
    run(t, &["interpret", "--model", model.to_str().unwrap(), "--lexicon", "words", "-k", "5"]);
    run(t, &["interpret", "--model", model.to_str().unwrap(), "--lexicon", "words", "-k", "5", "--farthest"]);
    run(t, &["select-heads", "--train", "gan_a", "--val", "diff_a", "-k", "2"]);
    run(t, &["eval-transfer", "--detector", "residual"]);
    run(s, &["select-features", "--pair", "gan_a,diff_a"]);
    run(s, &["apply-mask", "--mask", mask.to_str().unwrap()]);
    run(s, &["eval-transfer", "--detector", "baseline"]);
    run(s, &["eval-transfer", "--detector", "masked", "--mask", mask.to_str().unwrap()]);
    run(s, &["geometry", "--domain", "gan_b", "--mask", mask.to_str().unwrap(), "--max-pairs", "5000"]);
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let tiny = synth::write_tiny_fixture(&tmp.path().join("tiny")).unwrap();
    let spur = common::write_spurious(&tmp.path().join("spur"), &common::small_spurious());
    let runs = [("a", "1"), ("b", "1"), ("c", "8")];
    let mut snaps = Vec::new();
    for (name, threads) in runs {
        let out = tmp.path().join(name);
        pipeline(&tiny, &spur, &out, threads);
        snaps.push(common::snapshot(&out));
    }
    ensure!(snaps[0].len() >= 20, "pipeline wrote only {} files", snaps[0].len());
    for (i, label) in [(1, "second run"), (2, "--threads 8")] {
        ensure!(
            snaps[i].keys().eq(snaps[0].keys()),
            "{label} wrote a different file set"
        );
        for (path, bytes) in &snaps[0] {
            ensure!(&snaps[i][path] == bytes, "{label} differs in {}", path.display());
        }
    }
    Ok(format!("{} output files byte-identical across 3 runs", snaps[0].len()))
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    let msg = p
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default();
    format!("panicked: {msg}")
}

fn main() {
    let checks: [(&str, fn() -> Check, Duration); 9] = [
        ("lr-correctness", lr_correctness, Duration::from_secs(60)),
        ("grid-search-fidelity", grid_fidelity, Duration::from_secs(120)),
        ("residual-oracle", residual_check, Duration::from_secs(60)),
        ("greedy-recovers-ground-truth", greedy_recovery, Duration::from_secs(600)),
        ("step-one-greedy-optimality", step_one_optimality, Duration::from_secs(120)),
        ("head-selection-oracle", head_selection, Duration::from_secs(300)),
        ("transfer-metrics", transfer_metrics, Duration::from_secs(60)),
        ("isoscore", isoscore_check, Duration::from_secs(120)),
        ("cli-determinism", determinism, Duration::from_secs(600)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check, budget) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| Err(panic_message(p)));
        let elapsed = start.elapsed();
        let result = result.and_then(|msg| {
            if elapsed > budget {
                Err(format!("took {elapsed:.1?}, budget {budget:?} ({msg})"))
            } else {
                Ok(msg)
            }
        });
        match result {
            Ok(msg) => println!("[PASS] {name} ({:.1}s): {msg}", elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {name} ({:.1}s): {msg}", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
