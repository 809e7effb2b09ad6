//! Library results checked against independent reference computations.

mod common;

use approx::assert_abs_diff_eq;
use common::*;
use ndarray::{Array1, Array2};
use rand::Rng;
use tagcomplete::lasso::{self, solve_lasso, verify_kkt, LassoProblem};
use tagcomplete::metrics::{self, CandidatePool, EvalSplit};
use tagcomplete::solver::{self, Projection, SolverOptions, SolverWorkspace};
use tagcomplete::structure::{self, knn_index, Metric, StructureOptions};
use tagcomplete::synth::{self, SynthConfig};
use tagcomplete::*;

const TOL: f64 = lasso::DEFAULT_TOL;
const SWEEPS: usize = lasso::DEFAULT_MAX_SWEEPS;

#[test]
fn six_variable_lasso_matches_enumeration() {
    let mut r = rng(11);
    for case in 0..30 {
        let (a, b) = random_design(&mut r, 9, 6);
        let l1 = r.random_range(0.05..3.0);
        let excluded = (case % 3 == 0).then_some(case % 6);
        let prob = LassoProblem::from_design(&a, &b, l1, excluded).unwrap();
        let sol = solve_lasso(&prob, TOL, SWEEPS).unwrap();
        let (_, best) = enumerate_lasso(prob.gram(), prob.corr(), prob.target_sq_norm(), l1, excluded);
        assert!((sol.objective_value - best).abs() <= 1e-6, "case {case}: {} vs {best}", sol.objective_value);
        assert!(sol.kkt_residual <= TOL);
        if let Some(x) = excluded {
            assert_eq!(sol.weights[x], 0.0);
        }
    }
}

#[test]
fn perturbed_solve_fails_kkt() {
    let mut r = rng(12);
    let (a, b) = random_design(&mut r, 12, 5);
    let prob = LassoProblem::from_design(&a, &b, 0.5, None).unwrap();
    let mut sol = solve_lasso(&prob, TOL, SWEEPS).unwrap();
    assert!(verify_kkt(&prob, &sol, TOL));
    let j = (0..5).find(|&j| sol.weights[j] != 0.0).expect("some active weight");
    sol.weights[j] += 10.0 * TOL;
    assert!(!verify_kkt(&prob, &sol, TOL));
}

#[test]
fn knn_matches_brute_force() {
    let mut r = rng(13);
    let pts = random_matrix(&mut r, 50, 5, 1.0);
    for (metric, cosine) in [(Metric::Euclidean, false), (Metric::Cosine, true)] {
        let idx = knn_index(&pts, 5, metric).unwrap();
        let oracle = brute_knn(&pts, 5, cosine);
        for (i, expected) in oracle.iter().enumerate() {
            assert_eq!(&idx.neighbor_ids(i), expected, "item {i} ({metric:?})");
        }
    }
}

fn unit_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Checks every row of a structure matrix against an enumeration over the
/// same brute-force neighbourhood.
fn check_rows_against_enumeration(items: &Array2<f64>, coeffs: &Array2<f64>, k: usize, l1: f64) {
    let nbrs = brute_knn(items, k, false);
    for (i, nb) in nbrs.iter().enumerate() {
        let p = nb.len();
        let a = Array2::from_shape_fn((items.ncols(), p), |(c, j)| items[[nb[j], c]]);
        let b = items.row(i).to_owned();
        let gram = a.t().dot(&a);
        let corr = a.t().dot(&b);
        let (_, best) = enumerate_lasso(&gram, &corr, b.dot(&b), l1, None);

        for j in 0..items.nrows() {
            if !nb.contains(&j) {
                assert_eq!(coeffs[[i, j]], 0.0, "coefficient outside the neighbourhood at ({i}, {j})");
            }
        }
        let recon = coeffs.row(i).dot(items);
        let lib = (&b - &recon).mapv(|x| x * x).sum() + l1 * coeffs.row(i).mapv(f64::abs).sum();
        assert!((lib - best).abs() <= 1e-6, "item {i}: {lib} vs {best}");
    }
}

#[test]
fn s_rows_match_enumeration() {
    let mut r = rng(14);
    let x = random_matrix(&mut r, 10, 4, 1.0);
    let hp = Hyperparams {
        alpha: 0.1,
        knn_k: 3,
        ..Default::default()
    };
    let built = structure::build_s(&FeatureMatrix::new(x.clone()).unwrap(), &hp, &StructureOptions::default()).unwrap();
    check_rows_against_enumeration(&unit_rows(&x), &built.matrix.coeffs().to_dense(), 3, 0.1);
}

#[test]
fn t_columns_match_enumeration() {
    let mut r = rng(15);
    let d = random_binary(&mut r, 8, 6, 0.4);
    let hp = Hyperparams {
        mu: 0.1,
        knn_k: 3,
        ..Default::default()
    };
    let built = structure::build_t(&d, &hp, &StructureOptions::default()).unwrap();
    let cols = d.to_dense().t().to_owned();
    let used: Vec<bool> = cols.rows().into_iter().map(|c| c.iter().any(|&v| v != 0.0)).collect();
    assert!(used.iter().all(|&u| u), "test instance should use every tag");
    // T column m reconstructs D column m, so its transpose has S layout
    let tt = built.matrix.coeffs().to_dense().t().to_owned();
    check_rows_against_enumeration(&cols, &tt, 3, 0.1);
}

#[test]
fn alpha_above_kkt_threshold_zeroes_the_row() {
    let mut r = rng(16);
    let x = unit_rows(&random_matrix(&mut r, 12, 3, 1.0));
    let k = 4;
    let nbrs = brute_knn(&x, k, false);
    // threshold for row 0 over its own neighbourhood
    let thresh = nbrs[0]
        .iter()
        .map(|&j| 2.0 * x.row(j).dot(&x.row(0)).abs())
        .fold(0.0, f64::max);
    let hp = Hyperparams {
        alpha: thresh * 1.0001,
        knn_k: k,
        ..Default::default()
    };
    let built = structure::build_s(&FeatureMatrix::new(x).unwrap(), &hp, &StructureOptions::default()).unwrap();
    assert_eq!(built.matrix.coeffs().row(0).0.len(), 0);
}

#[test]
fn reinit_matches_dense_oracle() {
    let mut r = rng(17);
    let feats = random_matrix(&mut r, 30, 6, 1.0);
    let d = random_binary(&mut r, 30, 12, 0.2);
    let hp = Hyperparams {
        knn_k: 6,
        alpha: 0.2,
        mu: 0.2,
        ..Default::default()
    };
    let so = StructureOptions::default();
    let s = structure::build_s(&FeatureMatrix::new(feats).unwrap(), &hp, &so).unwrap().matrix;
    let t = structure::build_t(&d, &hp, &so).unwrap().matrix;
    let before = d.clone();
    let got = structure::reinitialize(&d, &s, &t).unwrap();
    assert_eq!(d, before);
    assert_eq!(got.state(), TagState::Real);
    let oracle = dense_reinit(&d.to_dense(), &s.coeffs().to_dense(), &t.coeffs().to_dense());
    let got = got.to_dense();
    for i in 0..30 {
        for j in 0..12 {
            assert_abs_diff_eq!(got[[i, j]], oracle[(i, j)], epsilon = 1e-12);
        }
    }
}

#[test]
fn objective_matches_dense_oracle() {
    let mut r = rng(18);
    for _ in 0..10 {
        let (n, m, k) = (r.random_range(2..12), r.random_range(2..9), r.random_range(1..5));
        let d = random_binary(&mut r, n, m, 0.3);
        let s = random_structure(&mut r, n, Orientation::Rows);
        let t = random_structure(&mut r, m, Orientation::Columns);
        let model = random_model(&mut r, n, m, k);
        let hp = random_hp(&mut r);
        let lib = objective(&d, &s, &t, &model, &hp).unwrap();
        let oracle = model_objective(&d, &s, &t, &model, &hp);
        assert!((lib - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), "{lib} vs {oracle}");
    }
}

fn random_structure(r: &mut rand_chacha::ChaCha8Rng, n: usize, o: Orientation) -> StructureMatrix {
    let mut trips = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && r.random::<f64>() < 0.3 {
                trips.push((i, j, r.random_range(-0.8..0.8)));
            }
        }
    }
    StructureMatrix::new(SparseMatrix::from_triplets(n, n, trips).unwrap(), o).unwrap()
}

fn random_model(r: &mut rand_chacha::ChaCha8Rng, n: usize, m: usize, k: usize) -> FactorModel {
    let mut model = solver::init_model(n, m, k, r.random());
    model.v = random_matrix(r, k, m, 1.5);
    model.e = random_matrix(r, n, m, 0.5);
    model
}

fn random_hp(r: &mut rand_chacha::ChaCha8Rng) -> Hyperparams {
    Hyperparams {
        gamma: r.random_range(0.0..2.0),
        lambda: r.random_range(0.0..2.0),
        eta: r.random_range(0.0..2.0),
        beta: r.random_range(0.0..2.0),
        ..Default::default()
    }
}

/// Rebuilds the intermediate state of a cyclic sweep: coordinates before
/// `(row, col)` in sweep order carry their swept values, the rest their
/// starting values.
fn sweep_state(before: &Array2<f64>, after: &Array2<f64>, pos: usize, col_major: bool) -> Array2<f64> {
    let (rows, cols) = before.dim();
    let mut state = before.clone();
    for idx in 0..pos {
        let (i, j) = if col_major { (idx % rows, idx / rows) } else { (idx / cols, idx % cols) };
        state[[i, j]] = after[[i, j]];
    }
    state
}

#[test]
fn v_sweep_is_coordinatewise_optimal() {
    let mut r = rng(19);
    for _ in 0..5 {
        let (n, m, k) = (4, 3, 2);
        let d = random_binary(&mut r, n, m, 0.5);
        let s = random_structure(&mut r, n, Orientation::Rows);
        let t = random_structure(&mut r, m, Orientation::Columns);
        let hp = random_hp(&mut r);
        let mut model = random_model(&mut r, n, m, k);
        let before = model.clone();
        let ws = SolverWorkspace::new(&d, &s, &t, &hp).unwrap();
        solver::update_v(&ws, &mut model, &hp);

        // V sweeps k outer, m inner: row-major over V
        for pos in 0..k * m {
            let (kk, mm) = (pos / m, pos % m);
            let mut state = before.clone();
            state.v = sweep_state(&before.v, &model.v, pos, false);
            let f = |x: f64| {
                let mut s2 = state.clone();
                s2.v[[kk, mm]] = x;
                model_objective(&d, &s, &t, &s2, &hp)
            };
            let chosen = model.v[[kk, mm]];
            let at = f(chosen);
            let (xo, fo) = grid_golden(&f, chosen - 10.0, chosen + 10.0);
            assert!(at <= fo + 1e-9 * fo.abs().max(1.0), "V[{kk},{mm}]: {at} > oracle {fo}");
            assert!((xo - chosen).abs() <= 1e-6, "V[{kk},{mm}]: {chosen} vs oracle {xo}");
            for _ in 0..1000 {
                let probe = chosen + r.random_range(-1.0..1.0) * 10f64.powi(r.random_range(-6..1));
                assert!(at <= f(probe) + 1e-12 * at.abs().max(1.0));
            }
        }
    }
}

#[test]
fn clipped_u_sweep_is_coordinatewise_optimal() {
    let mut r = rng(20);
    for _ in 0..5 {
        let (n, m, k) = (4, 3, 2);
        let d = random_binary(&mut r, n, m, 0.5);
        let s = random_structure(&mut r, n, Orientation::Rows);
        let t = random_structure(&mut r, m, Orientation::Columns);
        let hp = random_hp(&mut r);
        let mut model = random_model(&mut r, n, m, k);
        // large V pushes the unconstrained step outside the ball
        model.v *= 3.0;
        let before = model.clone();
        let ws = SolverWorkspace::new(&d, &s, &t, &hp).unwrap();
        solver::update_u(&ws, &mut model, Projection::Clip);
        assert!(model.max_column_norm() <= 1.0 + 1e-12);

        // U sweeps k outer, n inner: column-major over U
        for pos in 0..n * k {
            let (nn, kk) = (pos % n, pos / n);
            let mut state = before.clone();
            state.u = sweep_state(&before.u, &model.u, pos, true);
            let others: f64 = (0..n).filter(|&i| i != nn).map(|i| state.u[[i, kk]].powi(2)).sum();
            let bound = (1.0 - others).max(0.0).sqrt();
            let f = |x: f64| {
                let mut s2 = state.clone();
                s2.u[[nn, kk]] = x;
                model_objective(&d, &s, &t, &s2, &hp)
            };
            let chosen = model.u[[nn, kk]];
            let (xo, fo) = grid_golden(&f, -bound, bound);
            assert!((xo - chosen).abs() <= 1e-6, "U[{nn},{kk}]: {chosen} vs oracle {xo}");
            assert!(f(chosen) <= fo + 1e-9 * fo.abs().max(1.0));
        }
    }
}

#[test]
fn e_update_equals_scalar_lasso() {
    let mut r = rng(21);
    let (n, m, k) = (6, 5, 3);
    let d = random_binary(&mut r, n, m, 0.4);
    let s = StructureMatrix::zeros(n, Orientation::Rows);
    let t = StructureMatrix::zeros(m, Orientation::Columns);
    let hp = random_hp(&mut r);
    let mut model = random_model(&mut r, n, m, k);
    let ws = SolverWorkspace::new(&d, &s, &t, &hp).unwrap();
    solver::update_e(&ws, &mut model, &hp);
    let resid = d.to_dense() - model.u.dot(&model.v);
    for i in 0..n {
        for j in 0..m {
            let rij = resid[[i, j]];
            let prob = LassoProblem::new(
                Array2::from_elem((1, 1), 1.0),
                Array1::from_elem(1, rij),
                rij * rij,
                hp.beta,
                None,
            )
            .unwrap();
            let w = solve_lasso(&prob, 1e-12, SWEEPS).unwrap().weights[0];
            assert_abs_diff_eq!(model.e[[i, j]], w, epsilon = 1e-10);
        }
    }
}

#[test]
fn converged_v_is_a_fixed_point() {
    let mut r = rng(22);
    let (n, m, k) = (8, 6, 3);
    let d = random_binary(&mut r, n, m, 0.4);
    let s = random_structure(&mut r, n, Orientation::Rows);
    let t = random_structure(&mut r, m, Orientation::Columns);
    let hp = Hyperparams {
        eta: 0.1,
        ..random_hp(&mut r)
    };
    let mut model = random_model(&mut r, n, m, k);
    let ws = SolverWorkspace::new(&d, &s, &t, &hp).unwrap();
    let mut change = f64::INFINITY;
    for _ in 0..100_000 {
        let prev = model.v.clone();
        solver::update_v(&ws, &mut model, &hp);
        change = (&model.v - &prev).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if change < 1e-13 {
            break;
        }
    }
    assert!(change < 1e-13, "V block did not settle: {change}");
    let prev = model.v.clone();
    solver::update_v(&ws, &mut model, &hp);
    let again = (&model.v - &prev).iter().fold(0.0f64, |a, x| a.max(x.abs()));
    assert!(again <= 1e-9);
}

#[test]
fn defaults_converge_on_a_small_synthetic_instance() {
    let cfg = SynthConfig {
        n_images: 200,
        n_tags: 50,
        n_topics: 5,
        rng_seed: 4,
        ..Default::default()
    };
    let inst = synth::generate(&cfg).unwrap();
    let split = synth::delete_tags(&inst.truth, 0.4, 5).unwrap();
    let hp = Hyperparams::default();
    let so = StructureOptions::default();
    let s = structure::build_s(&inst.features, &hp, &so).unwrap().matrix;
    let t = structure::build_t(split.observed(), &hp, &so).unwrap().matrix;
    let d = structure::reinitialize(split.observed(), &s, &t).unwrap();
    let rep = solver::fit(&d, &s, &t, &hp, &SolverOptions::default()).unwrap();
    assert!(rep.converged && rep.iterations <= 200, "{} iterations", rep.iterations);
    assert!(solver::trace_is_monotone(&rep.full_block_trace(), 1e-10));
    assert!(rep.model.max_column_norm() <= 1.0 + 1e-12);
}

#[test]
fn ranking_matches_full_sort() {
    let mut r = rng(23);
    for _ in 0..20 {
        // coarse values force ties
        let scores = Array2::from_shape_fn((5, 6), |_| r.random_range(0..4) as f64 / 4.0);
        let obs = random_binary(&mut r, 5, 6, 0.2);
        let deleted: Vec<Vec<usize>> = (0..5)
            .map(|i| (0..6).filter(|j| !obs.tags_of(i).contains(j)).take(1).collect())
            .collect();
        let split = EvalSplit::new(obs.clone(), deleted, (0..5).collect()).unwrap();
        for pool in [CandidatePool::ExcludeObserved, CandidatePool::All] {
            let preds = metrics::rank_predictions(&scores, &split, 3, pool).unwrap();
            for i in 0..5 {
                let exclude = if pool == CandidatePool::All { vec![] } else { obs.tags_of(i).to_vec() };
                let row = scores.row(i).to_vec();
                assert_eq!(preds.lists[i], full_sort_top(&row, &exclude, 3));
            }
        }
    }
}

#[test]
fn metrics_match_set_intersection() {
    let mut r = rng(24);
    for _ in 0..20 {
        let truth = random_binary(&mut r, 15, 10, 0.4);
        let keep: Vec<usize> = (0..15).filter(|&i| truth.tags_of(i).len() >= 2).collect();
        if keep.is_empty() {
            continue;
        }
        let split = synth::delete_tags(
            &TaggingMatrix::from_pairs(
                keep.len(),
                10,
                keep.iter().enumerate().flat_map(|(new, &old)| truth.tags_of(old).iter().map(move |&j| (new, j))),
            )
            .unwrap(),
            0.5,
            r.random(),
        )
        .unwrap();
        let scores = random_matrix(&mut r, keep.len(), 10, 1.0);
        let n = r.random_range(1..5);
        let preds = metrics::rank_predictions(&scores, &split, n, CandidatePool::ExcludeObserved).unwrap();
        let m = metrics::evaluate(&preds, &split).unwrap();
        let (mut p, mut rec, mut c) = (0.0, 0.0, 0.0);
        for (&img, list) in preds.images.iter().zip(&preds.lists) {
            let h = hits(list, split.deleted(img)) as f64;
            p += h / n as f64;
            rec += h / split.deleted(img).len() as f64;
            c += if h > 0.0 { 1.0 } else { 0.0 };
        }
        let cnt = preds.images.len() as f64;
        assert_abs_diff_eq!(m.precision, p / cnt, epsilon = 1e-15);
        assert_abs_diff_eq!(m.recall, rec / cnt, epsilon = 1e-15);
        assert_abs_diff_eq!(m.coverage, c / cnt, epsilon = 1e-15);
    }
}

#[test]
fn permutation_baseline_tracks_chance_level() {
    let cfg = SynthConfig {
        n_images: 400,
        n_tags: 60,
        n_topics: 6,
        rng_seed: 9,
        ..Default::default()
    };
    let inst = synth::generate(&cfg).unwrap();
    let split = synth::delete_tags(&inst.truth, 0.4, 10).unwrap();
    let scores = inst.truth.to_dense();
    let chance = metrics::chance_metrics(&split, 4, CandidatePool::ExcludeObserved).unwrap();
    let mut mean = 0.0;
    let reps = 20;
    for seed in 0..reps {
        // random scores so permutation does not keep ties
        let mut r = rng(seed);
        let noisy = scores.mapv(|x| x + r.random::<f64>());
        let perm = metrics::permuted_scores(&noisy, seed + 100);
        let preds = metrics::rank_predictions(&perm, &split, 4, CandidatePool::ExcludeObserved).unwrap();
        mean += metrics::evaluate(&preds, &split).unwrap().recall / reps as f64;
    }
    assert!((mean - chance.recall).abs() <= 0.2 * chance.recall, "{mean} vs chance {}", chance.recall);
}
