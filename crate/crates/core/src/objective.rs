//! Evaluation of the completion objective
//!
//! ‖D − E − UV‖²_F + γ‖U − SU‖²_F + λ‖V − VT‖²_F + 2η‖V‖₁ + β‖E‖₁

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{FactorModel, Hyperparams, StructureMatrix, TaggingMatrix};

/// The objective split into its five terms, each already weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub residual: f64,
    pub feature_structure: f64,
    pub tag_structure: f64,
    pub coefficient_l1: f64,
    pub error_l1: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.residual + self.feature_structure + self.tag_structure + self.coefficient_l1 + self.error_l1
    }
}

pub(crate) fn check_dims(
    d: &TaggingMatrix,
    s: &StructureMatrix,
    t: &StructureMatrix,
    model: &FactorModel,
) -> Result<()> {
    let (n, m) = (d.n_images(), d.n_tags());
    if s.size() != n {
        return Err(Error::dims("S", "D", format!("S is {0}x{0}, D has {n} images", s.size())));
    }
    if t.size() != m {
        return Err(Error::dims("T", "D", format!("T is {0}x{0}, D has {m} tags", t.size())));
    }
    if model.u.nrows() != n {
        return Err(Error::dims("U", "D", format!("U has {} rows, D has {n} images", model.u.nrows())));
    }
    if model.v.ncols() != m {
        return Err(Error::dims("V", "D", format!("V has {} columns, D has {m} tags", model.v.ncols())));
    }
    if model.u.ncols() != model.v.nrows() {
        return Err(Error::dims(
            "U",
            "V",
            format!("U has {} columns, V has {} rows", model.u.ncols(), model.v.nrows()),
        ));
    }
    if model.e.dim() != (n, m) {
        return Err(Error::dims("E", "D", format!("E is {:?}, D is {n}x{m}", model.e.dim())));
    }
    Ok(())
}

fn frobenius_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

fn l1(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

pub fn objective_terms(
    d: &TaggingMatrix,
    s: &StructureMatrix,
    t: &StructureMatrix,
    model: &FactorModel,
    hp: &Hyperparams,
) -> Result<ObjectiveTerms> {
    check_dims(d, s, t, model)?;
    let mut resid = model.u.dot(&model.v);
    resid += &model.e;
    resid.mapv_inplace(|x| -x);
    for (r, c, v) in d.matrix().iter() {
        resid[[r, c]] += v;
    }

    let feature_structure = if hp.gamma != 0.0 {
        let su = s.coeffs().mul_dense(&model.u)?;
        hp.gamma * frobenius_sq(&(&model.u - &su))
    } else {
        0.0
    };
    let tag_structure = if hp.lambda != 0.0 {
        let vt = t.coeffs().left_mul_dense(&model.v)?;
        hp.lambda * frobenius_sq(&(&model.v - &vt))
    } else {
        0.0
    };

    Ok(ObjectiveTerms {
        residual: frobenius_sq(&resid),
        feature_structure,
        tag_structure,
        coefficient_l1: 2.0 * hp.eta * l1(&model.v),
        error_l1: hp.beta * l1(&model.e),
    })
}

/// Total objective value; finite and non-negative for valid inputs.
pub fn objective(
    d: &TaggingMatrix,
    s: &StructureMatrix,
    t: &StructureMatrix,
    model: &FactorModel,
    hp: &Hyperparams,
) -> Result<f64> {
    objective_terms(d, s, t, model, hp).map(|terms| terms.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Orientation;
    use ndarray::array;

    fn three_ones() -> TaggingMatrix {
        TaggingMatrix::from_pairs(3, 3, vec![(0, 0), (1, 2), (2, 1)]).unwrap()
    }

    #[test]
    fn zero_model_leaves_data_norm() {
        let d = three_ones();
        let s = StructureMatrix::zeros(3, Orientation::Rows);
        let t = StructureMatrix::zeros(3, Orientation::Columns);
        let model = FactorModel::zeros(3, 3, 2);
        let v = objective(&d, &s, &t, &model, &Hyperparams::default()).unwrap();
        assert_eq!(v, 3.0);
    }

    #[test]
    fn error_absorbing_data_costs_beta_l1() {
        let d = three_ones();
        let s = StructureMatrix::zeros(3, Orientation::Rows);
        let t = StructureMatrix::zeros(3, Orientation::Columns);
        let mut model = FactorModel::zeros(3, 3, 2);
        model.e = d.to_dense();
        let hp = Hyperparams {
            beta: 0.7,
            ..Default::default()
        };
        let v = objective(&d, &s, &t, &model, &hp).unwrap();
        assert!((v - 2.1).abs() < 1e-15);
    }

    #[test]
    fn plain_residual_when_penalties_off() {
        let d = three_ones();
        let s = StructureMatrix::zeros(3, Orientation::Rows);
        let t = StructureMatrix::zeros(3, Orientation::Columns);
        let model = FactorModel::new(
            array![[0.5], [0.5], [0.0]],
            array![[1.0, 0.0, 2.0]],
            Array2::zeros((3, 3)),
        )
        .unwrap();
        let hp = Hyperparams {
            gamma: 0.0,
            lambda: 0.0,
            eta: 0.0,
            ..Default::default()
        };
        let resid = d.to_dense() - model.u.dot(&model.v);
        let expect: f64 = resid.iter().map(|x| x * x).sum();
        assert_eq!(objective(&d, &s, &t, &model, &hp).unwrap(), expect);
    }

    #[test]
    fn dimension_errors_name_the_pair() {
        let d = three_ones();
        let s = StructureMatrix::zeros(4, Orientation::Rows);
        let t = StructureMatrix::zeros(3, Orientation::Columns);
        let model = FactorModel::zeros(3, 3, 2);
        match objective(&d, &s, &t, &model, &Hyperparams::default()) {
            Err(Error::DimensionMismatch { left, right, .. }) => assert_eq!((left, right), ("S", "D")),
            other => panic!("expected dimension error, got {other:?}"),
        }
        let s = StructureMatrix::zeros(3, Orientation::Rows);
        let model = FactorModel::zeros(3, 4, 2);
        assert!(matches!(
            objective(&d, &s, &t, &model, &Hyperparams::default()),
            Err(Error::DimensionMismatch { left: "V", .. })
        ));
    }
}
