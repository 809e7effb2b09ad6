//! Local linear reconstruction structures.
//!
//! S (N×N) reconstructs every image's feature row from the rows of its
//! nearest neighbours; T (M×M) reconstructs every tag column of D from its
//! nearest tag columns. Both are lasso fits with a zero diagonal, restricted
//! to the k nearest neighbours of each item.

use std::cmp::Ordering;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lasso::{self, solve_lasso, verify_kkt, LassoProblem};
use crate::sparse::SparseMatrix;
use crate::types::{FeatureMatrix, Hyperparams, Orientation, StructureMatrix, TaggingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 − cos θ`; a zero vector is at distance 1 from everything.
    Cosine,
}

/// Exact k-nearest-neighbour lists, self excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    k: usize,
    lists: Vec<Vec<(usize, f64)>>,
}

impl NeighborIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// (neighbour, distance) pairs by ascending distance, ties by index.
    pub fn neighbors(&self, item: usize) -> &[(usize, f64)] {
        &self.lists[item]
    }

    pub fn neighbor_ids(&self, item: usize) -> Vec<usize> {
        self.lists[item].iter().map(|&(j, _)| j).collect()
    }
}

fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>, metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::Cosine => {
            let na = a.dot(&a).sqrt();
            let nb = b.dot(&b).sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - a.dot(&b) / (na * nb)
            }
        }
    }
}

/// Brute-force exact kNN over the rows of `vectors`.
pub fn knn_index(vectors: &Array2<f64>, k: usize, metric: Metric) -> Result<NeighborIndex> {
    let n = vectors.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("kNN needs at least 2 vectors, got {n}")));
    }
    if k == 0 {
        return Err(Error::invalid("kNN requires k >= 1"));
    }
    let keep = k.min(n - 1);
    let lists = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = vectors.row(i);
            let mut cands: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, distance(row, vectors.row(j), metric)))
                .collect();
            cands.sort_by(|a, b| match a.1.total_cmp(&b.1) {
                Ordering::Equal => a.0.cmp(&b.0),
                o => o,
            });
            cands.truncate(keep);
            cands
        })
        .collect();
    Ok(NeighborIndex { k, lists })
}

#[derive(Debug, Clone)]
pub struct StructureOptions {
    pub metric: Metric,
    /// Scale feature rows to unit norm before building S.
    pub normalize_rows: bool,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for StructureOptions {
    fn default() -> Self {
        StructureOptions {
            metric: Metric::Euclidean,
            normalize_rows: true,
            tol: lasso::DEFAULT_TOL,
            max_sweeps: lasso::DEFAULT_MAX_SWEEPS,
        }
    }
}

/// A structure matrix together with the certificate of every subproblem.
#[derive(Debug, Clone)]
pub struct StructureBuild {
    pub matrix: StructureMatrix,
    /// KKT residual of each item's lasso fit (0 for skipped items).
    pub kkt_residuals: Vec<f64>,
    /// Items whose reconstruction was skipped (all-zero tag columns).
    pub skipped: Vec<usize>,
}

impl StructureBuild {
    pub fn max_kkt(&self) -> f64 {
        self.kkt_residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_kkt(&self) -> f64 {
        if self.kkt_residuals.is_empty() {
            0.0
        } else {
            self.kkt_residuals.iter().sum::<f64>() / self.kkt_residuals.len() as f64
        }
    }
}

/// The lasso fit reconstructing `items.row(target)` from the rows listed in
/// `neighbors`.
pub fn neighborhood_problem(
    items: &Array2<f64>,
    target: usize,
    neighbors: &[usize],
    l1_weight: f64,
) -> Result<LassoProblem> {
    let p = neighbors.len();
    let b = items.row(target);
    let mut gram = Array2::zeros((p, p));
    let mut corr = Array1::zeros(p);
    for (a, &ia) in neighbors.iter().enumerate() {
        let ra = items.row(ia);
        corr[a] = ra.dot(&b);
        for (c, &ic) in neighbors.iter().enumerate().take(a + 1) {
            let g = ra.dot(&items.row(ic));
            gram[[a, c]] = g;
            gram[[c, a]] = g;
        }
    }
    LassoProblem::new(gram, corr, b.dot(&b), l1_weight, None)
}

struct ItemFit {
    weights: Vec<(usize, f64)>,
    kkt: f64,
    skipped: bool,
}

fn fit_items(
    items: &Array2<f64>,
    index: &NeighborIndex,
    l1_weight: f64,
    opts: &StructureOptions,
    axis: &'static str,
    skip: impl Fn(usize) -> bool + Sync,
) -> Result<Vec<ItemFit>> {
    (0..items.nrows())
        .into_par_iter()
        .map(|i| {
            if skip(i) {
                return Ok(ItemFit {
                    weights: Vec::new(),
                    kkt: 0.0,
                    skipped: true,
                });
            }
            let nb = index.neighbor_ids(i);
            let wrap = |e: Error| Error::Subproblem {
                axis,
                index: i,
                source: Box::new(e),
            };
            let prob = neighborhood_problem(items, i, &nb, l1_weight).map_err(wrap)?;
            let sol = solve_lasso(&prob, opts.tol, opts.max_sweeps).map_err(wrap)?;
            if !verify_kkt(&prob, &sol, opts.tol) {
                return Err(wrap(Error::LassoNotConverged {
                    iterations: sol.sweeps,
                    kkt_residual: prob.kkt_residual(&sol.weights),
                }));
            }
            Ok(ItemFit {
                weights: sol.nonzeros().map(|(j, w)| (nb[j], w)).collect(),
                kkt: sol.kkt_residual,
                skipped: false,
            })
        })
        .collect()
}

/// Feature-space structure: row n of S reconstructs row n of X from its
/// `knn_k` nearest neighbours with L1 weight `alpha`.
pub fn build_s(x: &FeatureMatrix, hp: &Hyperparams, opts: &StructureOptions) -> Result<StructureBuild> {
    hp.validate()?;
    let feats = if opts.normalize_rows {
        x.row_normalized()
    } else {
        x.clone()
    };
    let items = feats.data();
    let index = knn_index(items, hp.knn_k, opts.metric)?;
    let fits = fit_items(items, &index, hp.alpha, opts, "row", |_| false)?;
    let n = items.nrows();
    let coeffs = SparseMatrix::from_triplets(
        n,
        n,
        fits.iter()
            .enumerate()
            .flat_map(|(r, f)| f.weights.iter().map(move |&(c, w)| (r, c, w))),
    )?;
    Ok(StructureBuild {
        matrix: StructureMatrix::new(coeffs, Orientation::Rows)?,
        kkt_residuals: fits.iter().map(|f| f.kkt).collect(),
        skipped: Vec::new(),
    })
}

/// Tag-space structure: column m of T reconstructs column m of D from its
/// `knn_k` nearest tag columns with L1 weight `mu`. Tags never used by any
/// image get an empty column.
pub fn build_t(d: &TaggingMatrix, hp: &Hyperparams, opts: &StructureOptions) -> Result<StructureBuild> {
    hp.validate()?;
    let items = d.to_dense().reversed_axes().as_standard_layout().to_owned();
    let m = items.nrows();
    let empty: Vec<bool> = items.rows().into_iter().map(|r| r.iter().all(|&v| v == 0.0)).collect();
    for (tag, _) in empty.iter().enumerate().filter(|(_, e)| **e) {
        warn!("tag {tag} is never assigned; leaving its T column empty");
    }
    let index = knn_index(&items, hp.knn_k, opts.metric)?;
    let fits = fit_items(&items, &index, hp.mu, opts, "column", |i| empty[i])?;
    let coeffs = SparseMatrix::from_triplets(
        m,
        m,
        fits.iter()
            .enumerate()
            .flat_map(|(col, f)| f.weights.iter().map(move |&(row, w)| (row, col, w))),
    )?;
    Ok(StructureBuild {
        matrix: StructureMatrix::new(coeffs, Orientation::Columns)?,
        kkt_residuals: fits.iter().map(|f| f.kkt).collect(),
        skipped: fits.iter().enumerate().filter(|(_, f)| f.skipped).map(|(i, _)| i).collect(),
    })
}

/// `(S D + D T) / 2` as a real-valued tagging matrix; `d` is not modified.
pub fn reinitialize(d: &TaggingMatrix, s: &StructureMatrix, t: &StructureMatrix) -> Result<TaggingMatrix> {
    if s.size() != d.n_images() {
        return Err(Error::dims("S", "D", format!("S is {0}x{0}, D has {1} images", s.size(), d.n_images())));
    }
    if t.size() != d.n_tags() {
        return Err(Error::dims("T", "D", format!("T is {0}x{0}, D has {1} tags", t.size(), d.n_tags())));
    }
    let dense = d.to_dense();
    let mut out = s.coeffs().mul_dense(&dense)?;
    out += &t.coeffs().left_mul_dense(&dense)?;
    out *= 0.5;
    let mut reinit = TaggingMatrix::from_dense(&out)?;
    reinit.mark_real();
    Ok(reinit)
}
