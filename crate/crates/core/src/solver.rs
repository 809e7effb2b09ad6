//! Alternating minimization of the completion objective.
//!
//! Each outer iteration runs three blocks, each of which can only lower the
//! objective:
//!
//! * **V**: Gauss–Seidel sweep; every coordinate is set to the exact
//!   minimizer of its piecewise parabola,
//!   `V_km = (max{P_km, η} + min{P_km, −η}) / ((UᵀU)_kk + H_mm)`.
//! * **U**: the same sweep without the L1 term,
//!   `U_nk = Q_nk / ((VVᵀ)_kk + G_nn)`, keeping every column inside the unit
//!   ball.
//! * **E**: closed-form soft-threshold of the residual `D − UV` at `β/2`.
//!
//! Here `H = λ(T − I)(T − I)ᵀ` and `G = γ(S − I)ᵀ(S − I)`.

use log::debug;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lasso::soft_threshold;
use crate::objective::{check_dims, objective};
use crate::sparse::SparseMatrix;
use crate::types::{FactorModel, Hyperparams, StructureMatrix, TaggingMatrix};

/// How a coordinate update of U is kept inside the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Projection {
    /// After the coordinate step, rescale the whole column back onto the
    /// unit sphere whenever its norm exceeds 1.
    Rescale,
    /// Minimize the coordinate over the interval that keeps the column
    /// norm ≤ 1 (the projection of the coordinate step onto the feasible
    /// segment). Never increases the objective.
    #[default]
    Clip,
}

/// Starting point for U (V and E always start at zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Columns of U are distinct nonzero tag columns of D, picked at random
    /// and scaled to unit norm; any remaining columns are random.
    #[default]
    DataColumns,
    /// Uniform entries in [−1, 1], columns scaled to unit norm.
    Random,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Cyclic sweeps of the V and U blocks per outer iteration.
    pub inner_sweeps: usize,
    pub projection: Projection,
    pub init: Init,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            inner_sweeps: 1,
            projection: Projection::default(),
            init: Init::default(),
        }
    }
}

/// Dense data and penalty matrices shared by all block updates.
///
/// Products that depend on the current model (`UᵀU`, `UᵀD̃`, `VVᵀ`, `D̃Vᵀ`)
/// are recomputed at the start of every block, which keeps them consistent
/// with whatever the previous block wrote.
#[derive(Debug, Clone)]
pub struct SolverWorkspace {
    d: Array2<f64>,
    h: Array2<f64>,
    g: Array2<f64>,
}

/// `AᵀA` for a sparse `A`, accumulated row by row.
fn sparse_gram(a: &SparseMatrix) -> Array2<f64> {
    let n = a.n_cols();
    let mut out = Array2::zeros((n, n));
    for r in 0..a.n_rows() {
        let (cols, vals) = a.row(r);
        for (&i, &vi) in cols.iter().zip(vals) {
            for (&j, &vj) in cols.iter().zip(vals) {
                out[[i, j]] += vi * vj;
            }
        }
    }
    out
}

fn minus_identity(s: &SparseMatrix) -> SparseMatrix {
    let n = s.n_rows();
    SparseMatrix::from_triplets(n, n, s.iter().chain((0..n).map(|i| (i, i, -1.0)))).expect("square")
}

impl SolverWorkspace {
    pub fn new(d: &TaggingMatrix, s: &StructureMatrix, t: &StructureMatrix, hp: &Hyperparams) -> Result<Self> {
        if s.size() != d.n_images() {
            return Err(Error::dims("S", "D", format!("S is {0}x{0}, D has {1} images", s.size(), d.n_images())));
        }
        if t.size() != d.n_tags() {
            return Err(Error::dims("T", "D", format!("T is {0}x{0}, D has {1} tags", t.size(), d.n_tags())));
        }
        // (T − I)(T − I)ᵀ = BᵀB with B = (T − I)ᵀ
        let mut h = sparse_gram(&minus_identity(t.coeffs()).transpose());
        h *= hp.lambda;
        let mut g = sparse_gram(&minus_identity(s.coeffs()));
        g *= hp.gamma;
        Ok(SolverWorkspace { d: d.to_dense(), h, g })
    }

    /// `λ(T − I)(T − I)ᵀ`
    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }

    /// `γ(S − I)ᵀ(S − I)`
    pub fn g(&self) -> &Array2<f64> {
        &self.g
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.d
    }

    /// `D̃ = D − E`
    pub fn d_tilde(&self, model: &FactorModel) -> Array2<f64> {
        &self.d - &model.e
    }
}

/// Coordinates whose quadratic coefficient vanished and were left as is.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub skipped: usize,
}

/// Scalar V update in max/min form: `(max{p, η} + min{p, −η}) / denom`.
#[inline]
pub fn v_coordinate(p: f64, eta: f64, denom: f64) -> f64 {
    (p.max(eta) + p.min(-eta)) / denom
}

/// One cyclic sweep over every V coordinate.
pub fn update_v(ws: &SolverWorkspace, model: &mut FactorModel, hp: &Hyperparams) -> SweepStats {
    let (k_dim, m_dim) = model.v.dim();
    let dt = ws.d_tilde(model);
    let gu = model.u.t().dot(&model.u);
    let udt = model.u.t().dot(&dt);
    let h = &ws.h;
    let v = &mut model.v;
    let mut stats = SweepStats::default();
    for k in 0..k_dim {
        for m in 0..m_dim {
            let denom = gu[[k, k]] + h[[m, m]];
            if !(denom > 0.0) {
                stats.skipped += 1;
                continue;
            }
            let cur = v[[k, m]];
            let basis_part = v.column(m).dot(&gu.column(k)) - cur * gu[[k, k]];
            let tag_part = h.row(m).dot(&v.row(k)) - cur * h[[m, m]];
            let p = udt[[k, m]] - basis_part - tag_part;
            v[[k, m]] = v_coordinate(p, hp.eta, denom);
        }
    }
    stats
}

/// One cyclic sweep over every U coordinate, keeping each column inside the
/// unit ball.
pub fn update_u(ws: &SolverWorkspace, model: &mut FactorModel, projection: Projection) -> SweepStats {
    let (n_dim, k_dim) = model.u.dim();
    let dt = ws.d_tilde(model);
    let vv = model.v.dot(&model.v.t());
    let dvt = model.v.dot(&dt.t());
    let g = &ws.g;
    // sweep on Uᵀ so every column of U is contiguous
    let mut ut = model.u.t().to_owned();
    let mut stats = SweepStats::default();
    for k in 0..k_dim {
        let mut col_sq = ut.row(k).dot(&ut.row(k));
        for n in 0..n_dim {
            let denom = vv[[k, k]] + g[[n, n]];
            if !(denom > 0.0) {
                stats.skipped += 1;
                continue;
            }
            let cur = ut[[k, n]];
            let basis_part = vv.row(k).dot(&ut.column(n)) - vv[[k, k]] * cur;
            let structure_part = ut.row(k).dot(&g.row(n)) - g[[n, n]] * cur;
            let q = dvt[[k, n]] - basis_part - structure_part;
            let step = q / denom;
            match projection {
                Projection::Rescale => {
                    ut[[k, n]] = step;
                    col_sq += step * step - cur * cur;
                    if col_sq > 1.0 {
                        col_sq = ut.row(k).dot(&ut.row(k));
                        if col_sq > 1.0 {
                            let scale = col_sq.sqrt().recip();
                            ut.row_mut(k).mapv_inplace(|x| x * scale);
                            col_sq = ut.row(k).dot(&ut.row(k));
                        }
                    }
                }
                Projection::Clip => {
                    let mut others = (col_sq - cur * cur).max(0.0);
                    let mut bound = (1.0 - others).max(0.0).sqrt();
                    if step.abs() > bound {
                        // exact budget when the constraint binds
                        others = ut.row(k).dot(&ut.row(k)) - cur * cur;
                        bound = (1.0 - others).max(0.0).sqrt();
                    }
                    let new = step.clamp(-bound, bound);
                    ut[[k, n]] = new;
                    col_sq = others.max(0.0) + new * new;
                }
            }
        }
    }
    model.u.assign(&ut.t());
    stats
}

/// Closed-form E: `sign(r)·max(|r| − β/2, 0)` with `r = D − UV`.
pub fn update_e(ws: &SolverWorkspace, model: &mut FactorModel, hp: &Hyperparams) {
    let uv = model.u.dot(&model.v);
    let thresh = 0.5 * hp.beta;
    ndarray::Zip::from(&mut model.e)
        .and(&ws.d)
        .and(&uv)
        .for_each(|e, &d, &a| *e = soft_threshold(d - a, thresh));
}

/// Random U with unit-norm columns; V = 0, E = 0.
pub fn init_model(n_images: usize, n_tags: usize, n_basis: usize, seed: u64) -> FactorModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Array2<f64> = Array2::from_shape_fn((n_images, n_basis), |_| rng.random_range(-1.0..=1.0));
    for mut col in u.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|x| x / norm);
        }
    }
    FactorModel {
        u,
        v: Array2::zeros((n_basis, n_tags)),
        e: Array2::zeros((n_images, n_tags)),
    }
}

/// Like [`init_model`], but the first columns of U are copies of randomly
/// chosen nonzero tag columns of `d`, normalized.
pub fn init_model_from_data(d: &TaggingMatrix, n_basis: usize, seed: u64) -> FactorModel {
    let mut model = init_model(d.n_images(), d.n_tags(), n_basis, seed);
    let dense = d.to_dense();
    let mut nonzero: Vec<usize> = (0..d.n_tags())
        .filter(|&j| dense.column(j).iter().any(|&x| x != 0.0))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    nonzero.shuffle(&mut rng);
    for (k, &j) in nonzero.iter().take(n_basis).enumerate() {
        let col = dense.column(j);
        let norm = col.dot(&col).sqrt();
        model.u.column_mut(k).assign(&col.mapv(|x| x / norm));
    }
    model
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    V,
    U,
    E,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockStep {
    pub iteration: usize,
    pub block: Block,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    /// Objective before the first iteration.
    pub initial_objective: f64,
    /// Objective after each outer iteration.
    pub trace: Vec<f64>,
    /// Objective after every block update, in execution order.
    pub block_trace: Vec<BlockStep>,
    pub converged: bool,
    pub iterations: usize,
    pub skipped_v: usize,
    pub skipped_u: usize,
    pub model: FactorModel,
}

impl SolverReport {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().copied().unwrap_or(self.initial_objective)
    }

    /// Every objective value in order, starting from the initial one.
    pub fn full_block_trace(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.block_trace.iter().map(|b| b.objective))
            .collect()
    }
}

/// Largest relative increase between consecutive trace entries, scaled by
/// the earlier value; ≤ 0 for a non-increasing trace.
pub fn worst_relative_increase(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True when no step rises by more than `slack · |previous|`.
pub fn trace_is_monotone(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + slack * w[0].abs())
}

/// Runs alternating minimization from the seeded default initialization.
pub fn fit(
    d: &TaggingMatrix,
    s: &StructureMatrix,
    t: &StructureMatrix,
    hp: &Hyperparams,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    let init = match opts.init {
        Init::DataColumns => init_model_from_data(d, hp.n_basis, hp.rng_seed),
        Init::Random => init_model(d.n_images(), d.n_tags(), hp.n_basis, hp.rng_seed),
    };
    fit_from(d, s, t, hp, opts, init)
}

/// Runs alternating minimization from a caller-supplied model.
pub fn fit_from(
    d: &TaggingMatrix,
    s: &StructureMatrix,
    t: &StructureMatrix,
    hp: &Hyperparams,
    opts: &SolverOptions,
    mut model: FactorModel,
) -> Result<SolverReport> {
    hp.validate()?;
    check_dims(d, s, t, &model)?;
    let ws = SolverWorkspace::new(d, s, t, hp)?;

    let initial_objective = objective(d, s, t, &model, hp)?;
    let mut trace = Vec::new();
    let mut block_trace = Vec::new();
    let mut prev = initial_objective;
    let mut converged = false;
    let mut iterations = 0;
    let (mut skipped_v, mut skipped_u) = (0, 0);

    while iterations < hp.max_outer_iters {
        iterations += 1;
        for block in [Block::V, Block::U, Block::E] {
            match block {
                Block::V => {
                    for _ in 0..opts.inner_sweeps {
                        skipped_v += update_v(&ws, &mut model, hp).skipped;
                    }
                }
                Block::U => {
                    for _ in 0..opts.inner_sweeps {
                        skipped_u += update_u(&ws, &mut model, opts.projection).skipped;
                    }
                }
                Block::E => update_e(&ws, &mut model, hp),
            }
            let value = objective(d, s, t, &model, hp)?;
            block_trace.push(BlockStep {
                iteration: iterations,
                block,
                objective: value,
            });
            if !value.is_finite() {
                trace.push(value);
                return Err(Error::NumericalBlowUp {
                    iteration: iterations,
                    trace,
                });
            }
        }
        let cur = block_trace.last().expect("three blocks per iteration").objective;
        trace.push(cur);
        debug!("iteration {iterations}: objective {cur}");
        if cur == 0.0 || (prev - cur) / prev.abs() < hp.rel_tol {
            converged = true;
            break;
        }
        prev = cur;
    }

    Ok(SolverReport {
        initial_objective,
        trace,
        block_trace,
        converged,
        iterations,
        skipped_v,
        skipped_u,
        model,
    })
}
