//! L1-regularized least squares in Gram form.
//!
//! Every subproblem in the pipeline (rows of S, columns of T, and the
//! scalar E update) has the shape
//!
//! ```text
//! min_w ‖b − A w‖² + l1 ‖w‖₁
//! ```
//!
//! which expands to `wᵀ(AᵀA)w − 2(Aᵀb)ᵀw + ‖b‖² + l1‖w‖₁`. Problems carry
//! only `AᵀA`, `Aᵀb` and `‖b‖²`. The solver is cyclic coordinate descent
//! with soft-thresholding; once the support stops changing it also tries
//! an exact solve on the support with the signs held fixed, which finishes
//! strongly correlated problems where plain coordinate descent crawls. Its
//! result is certified by the subgradient optimality conditions rather than
//! by a step-size criterion.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoProblem {
    gram: Array2<f64>,
    corr: Array1<f64>,
    target_sq_norm: f64,
    l1_weight: f64,
    excluded: Option<usize>,
}

impl LassoProblem {
    pub fn new(
        gram: Array2<f64>,
        corr: Array1<f64>,
        target_sq_norm: f64,
        l1_weight: f64,
        excluded: Option<usize>,
    ) -> Result<Self> {
        let p = corr.len();
        if gram.dim() != (p, p) {
            return Err(Error::dims("gram", "corr", format!("{:?} vs {p}", gram.dim())));
        }
        if gram.iter().chain(corr.iter()).any(|v| !v.is_finite()) || !target_sq_norm.is_finite() {
            return Err(Error::invalid("lasso problem has non-finite entries"));
        }
        if !(l1_weight >= 0.0 && l1_weight.is_finite()) {
            return Err(Error::invalid(format!("l1 weight must be finite and >= 0, got {l1_weight}")));
        }
        if let Some(x) = excluded {
            if x >= p {
                return Err(Error::invalid(format!("excluded index {x} out of range for {p} variables")));
            }
        }
        for i in 0..p {
            if gram[[i, i]] < -SYMMETRY_TOL {
                return Err(Error::invalid(format!("gram has negative diagonal at {i}")));
            }
            for j in 0..i {
                let scale = 1.0f64.max(gram[[i, j]].abs());
                if (gram[[i, j]] - gram[[j, i]]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::invalid(format!("gram is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(LassoProblem {
            gram,
            corr,
            target_sq_norm,
            l1_weight,
            excluded,
        })
    }

    /// Builds the problem for design `a` (observations × variables) and
    /// target `b`.
    pub fn from_design(a: &Array2<f64>, b: &Array1<f64>, l1_weight: f64, excluded: Option<usize>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::dims("design", "target", format!("{:?} vs {}", a.dim(), b.len())));
        }
        let gram = a.t().dot(a);
        let corr = a.t().dot(b);
        Self::new(gram, corr, b.dot(b), l1_weight, excluded)
    }

    pub fn n_vars(&self) -> usize {
        self.corr.len()
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn corr(&self) -> &Array1<f64> {
        &self.corr
    }

    pub fn target_sq_norm(&self) -> f64 {
        self.target_sq_norm
    }

    pub fn l1_weight(&self) -> f64 {
        self.l1_weight
    }

    pub fn excluded(&self) -> Option<usize> {
        self.excluded
    }

    /// `‖b − Aw‖² + l1‖w‖₁` evaluated through the Gram form.
    pub fn objective(&self, w: &Array1<f64>) -> f64 {
        let quad = w.dot(&self.gram.dot(w));
        quad - 2.0 * self.corr.dot(w) + self.target_sq_norm + self.l1_weight * w.iter().map(|x| x.abs()).sum::<f64>()
    }

    /// Largest violation of the subgradient optimality conditions at `w`.
    pub fn kkt_residual(&self, w: &Array1<f64>) -> f64 {
        let resid = &self.corr - &self.gram.dot(w);
        self.kkt_from_resid(w, &resid)
    }

    // resid = corr − gram·w; the smooth gradient is −2·resid
    fn kkt_from_resid(&self, w: &Array1<f64>, resid: &Array1<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..w.len() {
            if Some(j) == self.excluded {
                continue;
            }
            let g = -2.0 * resid[j];
            let viol = if w[j] != 0.0 {
                (g + self.l1_weight * w[j].signum()).abs()
            } else {
                (g.abs() - self.l1_weight).max(0.0)
            };
            worst = worst.max(viol);
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub weights: Array1<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub sweeps: usize,
}

impl LassoSolution {
    /// (index, weight) pairs of the nonzero weights in index order.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(j, &w)| (j, w))
    }
}

/// `sign(x)·max(|x| − t, 0)`
#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Minimizes the lasso objective to a KKT residual of at most `tol`.
pub fn solve_lasso(problem: &LassoProblem, tol: f64, max_sweeps: usize) -> Result<LassoSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be > 0, got {tol}")));
    }
    let p = problem.n_vars();
    let gram = &problem.gram;
    let half_l1 = 0.5 * problem.l1_weight;
    let mut w = Array1::<f64>::zeros(p);
    let mut resid = problem.corr.clone();

    let mut kkt = problem.kkt_from_resid(&w, &resid);
    let mut sweeps = 0;
    let mut support: Vec<usize> = Vec::new();
    while kkt > tol {
        if sweeps == max_sweeps {
            return Err(Error::LassoNotConverged {
                iterations: sweeps,
                kkt_residual: kkt,
            });
        }
        sweeps += 1;
        for j in 0..p {
            if Some(j) == problem.excluded {
                continue;
            }
            let gjj = gram[[j, j]];
            if gjj <= 0.0 {
                // a zero design column contributes nothing; keep its weight at zero
                continue;
            }
            let old = w[j];
            let rho = resid[j] + gjj * old;
            let new = soft_threshold(rho, half_l1) / gjj;
            let delta = new - old;
            if delta != 0.0 {
                w[j] = new;
                resid.scaled_add(-delta, &gram.row(j));
            }
        }
        kkt = problem.kkt_from_resid(&w, &resid);
        let now: Vec<usize> = (0..p).filter(|&j| w[j] != 0.0).collect();
        if kkt > tol && now == support && polish_on_support(problem, &mut w) {
            resid = &problem.corr - &gram.dot(&w);
            kkt = problem.kkt_from_resid(&w, &resid);
        }
        support = now;
        if kkt <= tol {
            // drop accumulated rounding before certifying
            resid = &problem.corr - &gram.dot(&w);
            kkt = problem.kkt_from_resid(&w, &resid);
        }
    }

    Ok(LassoSolution {
        objective_value: problem.objective(&w),
        kkt_residual: kkt,
        weights: w,
        sweeps,
    })
}

/// Moves `w` toward the minimizer of the objective restricted to its
/// current support and signs, stopping where a weight first reaches zero.
/// The objective is convex along that segment, so the move never hurts; it
/// is still only accepted if the objective does not rise. Returns whether
/// `w` changed.
fn polish_on_support(problem: &LassoProblem, w: &mut Array1<f64>) -> bool {
    let active: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
    if active.is_empty() {
        return false;
    }
    let a = active.len();
    let g = DMatrix::from_fn(a, a, |i, j| problem.gram[[active[i], active[j]]]);
    let half_l1 = 0.5 * problem.l1_weight;
    let rhs = DVector::from_fn(a, |i, _| problem.corr[active[i]] - half_l1 * w[active[i]].signum());
    let Some(chol) = g.cholesky() else {
        return false;
    };
    let x = chol.solve(&rhs);

    let mut step = 1.0;
    let mut hit = None;
    for (i, &j) in active.iter().enumerate() {
        if x[i] * w[j] <= 0.0 {
            let t = w[j] / (w[j] - x[i]);
            if t < step {
                step = t;
                hit = Some(j);
            }
        }
    }
    let mut cand = w.clone();
    for (i, &j) in active.iter().enumerate() {
        cand[j] = w[j] + step * (x[i] - w[j]);
    }
    if let Some(j) = hit {
        cand[j] = 0.0;
    }
    if cand != *w && problem.objective(&cand) <= problem.objective(w) {
        *w = cand;
        true
    } else {
        false
    }
}

/// Checks a solution against the optimality conditions of `problem`.
pub fn verify_kkt(problem: &LassoProblem, solution: &LassoSolution, tol: f64) -> bool {
    if solution.weights.len() != problem.n_vars() {
        return false;
    }
    if let Some(x) = problem.excluded {
        if solution.weights[x] != 0.0 {
            return false;
        }
    }
    problem.kkt_residual(&solution.weights) <= tol
}
