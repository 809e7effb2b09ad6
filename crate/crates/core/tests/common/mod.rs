//! Reference implementations used as test oracles. None of them share code
//! with the library beyond its public data types.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagcomplete::{FactorModel, Hyperparams, StructureMatrix, TaggingMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Random 0/1 matrix with at least one 1 per row.
pub fn random_binary(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> TaggingMatrix {
    let mut pairs = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if rng.random::<f64>() < density {
                pairs.push((i, j));
            }
        }
        pairs.push((i, rng.random_range(0..cols)));
    }
    TaggingMatrix::from_pairs(rows, cols, pairs).unwrap()
}

// ---------------------------------------------------------------------------
// lasso

/// Exhaustive minimization of `wᵀGw − 2cᵀw + t + l1·‖w‖₁` over all sign
/// patterns in {−1, 0, +1}^p. Each pattern fixes the sign of the active
/// coordinates, which makes the problem a linear system; sign-inconsistent
/// solutions are discarded. Returns (weights, objective).
pub fn enumerate_lasso(
    gram: &Array2<f64>,
    corr: &Array1<f64>,
    target_sq: f64,
    l1: f64,
    excluded: Option<usize>,
) -> (Vec<f64>, f64) {
    let p = corr.len();
    let eval = |w: &[f64]| -> f64 {
        let mut q = 0.0;
        for i in 0..p {
            for j in 0..p {
                q += w[i] * gram[[i, j]] * w[j];
            }
        }
        let lin: f64 = (0..p).map(|i| corr[i] * w[i]).sum();
        q - 2.0 * lin + target_sq + l1 * w.iter().map(|x| x.abs()).sum::<f64>()
    };
    let mut best_w = vec![0.0; p];
    let mut best = eval(&best_w);
    let patterns = 3usize.pow(p as u32);
    for code in 0..patterns {
        let mut signs = vec![0i8; p];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i8 - 1;
            c /= 3;
        }
        if let Some(x) = excluded {
            if signs[x] != 0 {
                continue;
            }
        }
        let active: Vec<usize> = (0..p).filter(|&j| signs[j] != 0).collect();
        if active.is_empty() {
            continue;
        }
        let a = active.len();
        let g = DMatrix::from_fn(a, a, |i, j| gram[[active[i], active[j]]]);
        let rhs = DVector::from_fn(a, |i, _| corr[active[i]] - 0.5 * l1 * signs[active[i]] as f64);
        let Ok(sol) = g.clone().svd(true, true).solve(&rhs, 1e-12) else {
            continue;
        };
        if (&g * &sol - &rhs).norm() > 1e-9 * (1.0 + rhs.norm()) {
            continue;
        }
        let consistent = active
            .iter()
            .enumerate()
            .all(|(i, &j)| sol[i] == 0.0 || sol[i].signum() as i8 == signs[j]);
        if !consistent {
            continue;
        }
        let mut w = vec![0.0; p];
        for (i, &j) in active.iter().enumerate() {
            w[j] = sol[i];
        }
        let val = eval(&w);
        if val < best {
            best = val;
            best_w = w;
        }
    }
    (best_w, best)
}

/// A random positive semidefinite lasso problem built from a design matrix.
pub fn random_design(rng: &mut ChaCha8Rng, rows: usize, p: usize) -> (Array2<f64>, Array1<f64>) {
    let a = random_matrix(rng, rows, p, 1.0);
    let b = Array1::from_shape_fn(rows, |_| rng.random_range(-2.0..2.0));
    (a, b)
}

// ---------------------------------------------------------------------------
// kNN

/// Sorts every other index by (distance, index) with a plain O(n²) scan.
pub fn brute_knn(vectors: &Array2<f64>, k: usize, cosine: bool) -> Vec<Vec<usize>> {
    let n = vectors.nrows();
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = Vec::new();
            for j in 0..n {
                if j == i {
                    continue;
                }
                let (mut dot, mut na, mut nb, mut sq) = (0.0, 0.0, 0.0, 0.0);
                for c in 0..vectors.ncols() {
                    let (x, y) = (vectors[[i, c]], vectors[[j, c]]);
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                    sq += (x - y) * (x - y);
                }
                let d = if cosine {
                    if na == 0.0 || nb == 0.0 {
                        1.0
                    } else {
                        1.0 - dot / (na.sqrt() * nb.sqrt())
                    }
                } else {
                    sq.sqrt()
                };
                all.push((d, j));
            }
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// objective and reinitialization, via nalgebra

pub fn dense_objective(
    d: &Array2<f64>,
    s: &Array2<f64>,
    t: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    e: &Array2<f64>,
    hp: &Hyperparams,
) -> f64 {
    let (d, s, t, u, v, e) = (to_na(d), to_na(s), to_na(t), to_na(u), to_na(v), to_na(e));
    let resid = (&d - &e - &u * &v).norm_squared();
    let fs = (&u - &s * &u).norm_squared();
    let ts = (&v - &v * &t).norm_squared();
    let l1v: f64 = v.iter().map(|x| x.abs()).sum();
    let l1e: f64 = e.iter().map(|x| x.abs()).sum();
    resid + hp.gamma * fs + hp.lambda * ts + 2.0 * hp.eta * l1v + hp.beta * l1e
}

pub fn model_objective(
    d: &TaggingMatrix,
    s: &StructureMatrix,
    t: &StructureMatrix,
    m: &FactorModel,
    hp: &Hyperparams,
) -> f64 {
    dense_objective(
        &d.to_dense(),
        &s.coeffs().to_dense(),
        &t.coeffs().to_dense(),
        &m.u,
        &m.v,
        &m.e,
        hp,
    )
}

pub fn dense_reinit(d: &Array2<f64>, s: &Array2<f64>, t: &Array2<f64>) -> DMatrix<f64> {
    let (d, s, t) = (to_na(d), to_na(s), to_na(t));
    (&s * &d + &d * &t) * 0.5
}

// ---------------------------------------------------------------------------
// 1-D minimization

/// Minimizes `f` over `[lo, hi]`: a uniform grid brackets the minimum and
/// golden-section search refines it. Returns (argmin, min).
pub fn grid_golden<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> (f64, f64) {
    const GRID: usize = 400;
    if hi <= lo {
        return (lo, f(lo));
    }
    let step = (hi - lo) / GRID as f64;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..=GRID {
        let val = f(lo + step * i as f64);
        if val < best_val {
            best_val = val;
            best = i;
        }
    }
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = (lo + step * (best + 1) as f64).min(hi);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut dd = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(dd));
    for _ in 0..200 {
        if fc < fd {
            b = dd;
            dd = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = dd;
            fc = fd;
            dd = a + ratio * (b - a);
            fd = f(dd);
        }
        if b - a < 1e-13 {
            break;
        }
    }
    let mut x = 0.5 * (a + b);
    let mut fx = f(x);
    // the grid endpoint may be the true minimizer on a constrained interval
    for cand in [lo, hi, lo + step * best as f64] {
        let v = f(cand);
        if v < fx {
            x = cand;
            fx = v;
        }
    }
    (x, fx)
}

// ---------------------------------------------------------------------------
// metrics

/// Hits between a predicted list and a truth list, by set intersection.
pub fn hits(pred: &[usize], truth: &[usize]) -> usize {
    use std::collections::HashSet;
    let p: HashSet<_> = pred.iter().collect();
    truth.iter().filter(|t| p.contains(t)).count()
}

/// Sorts all candidates of a score row with a full sort.
pub fn full_sort_top(row: &[f64], exclude: &[usize], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|j| !exclude.contains(j)).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(n);
    idx
}
