//! Domain types shared by every stage of the pipeline.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Whether a tagging matrix still holds the user-provided 0/1 assignments or
/// has been replaced by real-valued scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagState {
    Binary,
    Real,
}

/// N×M image–tag assignment matrix (rows are images, columns are tags).
#[derive(Debug, Clone, PartialEq)]
pub struct TaggingMatrix {
    matrix: SparseMatrix,
    state: TagState,
}

impl TaggingMatrix {
    /// Binary matrix with a 1 at every listed (image, tag) pair.
    pub fn from_pairs<I>(n_images: usize, n_tags: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort_unstable();
        pairs.dedup();
        let matrix =
            SparseMatrix::from_triplets(n_images, n_tags, pairs.into_iter().map(|(i, j)| (i, j, 1.0)))?;
        Ok(TaggingMatrix {
            matrix,
            state: TagState::Binary,
        })
    }

    /// Wraps an arbitrary sparse matrix; the state is `Binary` exactly when
    /// every stored value is 1.
    pub fn from_sparse(matrix: SparseMatrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::invalid("tagging matrix contains non-finite values"));
        }
        let state = if matrix.values().iter().all(|&v| v == 1.0) {
            TagState::Binary
        } else {
            TagState::Real
        };
        Ok(TaggingMatrix { matrix, state })
    }

    pub fn from_dense(dense: &Array2<f64>) -> Result<Self> {
        Self::from_sparse(SparseMatrix::from_dense(dense))
    }

    pub fn n_images(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn n_tags(&self) -> usize {
        self.matrix.n_cols()
    }

    pub fn state(&self) -> TagState {
        self.state
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn get(&self, image: usize, tag: usize) -> f64 {
        self.matrix.get(image, tag)
    }

    /// Tag indices stored for one image, ascending.
    pub fn tags_of(&self, image: usize) -> &[usize] {
        self.matrix.row(image).0
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.matrix.to_dense()
    }

    pub(crate) fn mark_real(&mut self) {
        self.state = TagState::Real;
    }
}

/// Dense N×L feature matrix, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some(((r, c), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature matrix".into(),
                position: format!("row {r}, column {c}"),
            });
        }
        Ok(FeatureMatrix { data })
    }

    pub fn n_images(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Copy with every nonzero row scaled to unit L2 norm.
    pub fn row_normalized(&self) -> FeatureMatrix {
        let mut data = self.data.clone();
        for mut row in data.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
        FeatureMatrix { data }
    }

    /// Appends the 0/1 tag assignments of each image as extra feature columns.
    pub fn with_tags(&self, tags: &TaggingMatrix) -> Result<FeatureMatrix> {
        if tags.n_images() != self.n_images() {
            return Err(Error::dims(
                "features",
                "tags",
                format!("{} vs {} images", self.n_images(), tags.n_images()),
            ));
        }
        let indicator = tags.matrix().to_dense().mapv(|v| if v != 0.0 { 1.0 } else { 0.0 });
        let data = ndarray::concatenate(Axis(1), &[self.data.view(), indicator.view()])
            .expect("row counts checked");
        Ok(FeatureMatrix { data })
    }
}

/// Which axis of a structure matrix holds the reconstruction weights of an
/// item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// Row n reconstructs item n from other rows (`X ≈ S X`).
    Rows,
    /// Column m reconstructs item m from other columns (`D ≈ D T`).
    Columns,
}

/// Square local reconstruction coefficient matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureMatrix {
    coeffs: SparseMatrix,
    orientation: Orientation,
}

impl StructureMatrix {
    pub fn new(coeffs: SparseMatrix, orientation: Orientation) -> Result<Self> {
        if coeffs.n_rows() != coeffs.n_cols() {
            return Err(Error::invalid(format!(
                "structure matrix must be square, got {}x{}",
                coeffs.n_rows(),
                coeffs.n_cols()
            )));
        }
        if let Some((i, _, _)) = coeffs.iter().find(|&(r, c, _)| r == c) {
            return Err(Error::invalid(format!(
                "structure matrix has a stored diagonal entry at {i}"
            )));
        }
        Ok(StructureMatrix {
            coeffs,
            orientation,
        })
    }

    pub fn zeros(size: usize, orientation: Orientation) -> Self {
        StructureMatrix {
            coeffs: SparseMatrix::zeros(size, size),
            orientation,
        }
    }

    pub fn size(&self) -> usize {
        self.coeffs.n_rows()
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn coeffs(&self) -> &SparseMatrix {
        &self.coeffs
    }

    /// Number of nonzero weights used to reconstruct each item.
    pub fn support_sizes(&self) -> Vec<usize> {
        match self.orientation {
            Orientation::Rows => (0..self.size()).map(|r| self.coeffs.row(r).0.len()).collect(),
            Orientation::Columns => {
                let mut counts = vec![0; self.size()];
                for (_, c, _) in self.coeffs.iter() {
                    counts[c] += 1;
                }
                counts
            }
        }
    }
}

/// The factorization `D ≈ U V + E`.
///
/// `V` and `E` are sparse in value but stored densely: the solver sweeps
/// every coordinate of both on every pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub e: Array2<f64>,
}

/// Slack allowed on the unit-ball column constraint of `U`.
pub const COLUMN_NORM_SLACK: f64 = 1e-12;

impl FactorModel {
    pub fn new(u: Array2<f64>, v: Array2<f64>, e: Array2<f64>) -> Result<Self> {
        if u.ncols() != v.nrows() {
            return Err(Error::dims("U", "V", format!("{:?} vs {:?}", u.dim(), v.dim())));
        }
        if e.dim() != (u.nrows(), v.ncols()) {
            return Err(Error::dims("E", "UV", format!("{:?} vs {:?}", e.dim(), (u.nrows(), v.ncols()))));
        }
        for (name, m) in [("U", &u), ("V", &v), ("E", &e)] {
            if let Some(((r, c), _)) = m.indexed_iter().find(|(_, x)| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: name.into(),
                    position: format!("({r}, {c})"),
                });
            }
        }
        let model = FactorModel { u, v, e };
        let worst = model.max_column_norm();
        if worst > 1.0 + COLUMN_NORM_SLACK {
            return Err(Error::invalid(format!("column of U has norm {worst} > 1")));
        }
        Ok(model)
    }

    pub fn zeros(n_images: usize, n_tags: usize, n_basis: usize) -> Self {
        FactorModel {
            u: Array2::zeros((n_images, n_basis)),
            v: Array2::zeros((n_basis, n_tags)),
            e: Array2::zeros((n_images, n_tags)),
        }
    }

    pub fn n_images(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_tags(&self) -> usize {
        self.v.ncols()
    }

    pub fn n_basis(&self) -> usize {
        self.u.ncols()
    }

    /// The completed score matrix `A = U V`.
    pub fn completed(&self) -> Array2<f64> {
        self.u.dot(&self.v)
    }

    pub fn max_column_norm(&self) -> f64 {
        self.u
            .columns()
            .into_iter()
            .map(|c| c.dot(&c).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Model weights and solver controls.
///
/// Defaults are the values used for the Corel5k experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// L1 weight of the feature-space structure lasso.
    pub alpha: f64,
    /// L1 weight of the tag-space structure lasso.
    pub mu: f64,
    /// L1 weight on the error matrix E.
    pub beta: f64,
    /// Weight of the feature-structure term ‖U − SU‖².
    pub gamma: f64,
    /// Weight of the tag-structure term ‖V − VT‖².
    pub lambda: f64,
    /// Half the L1 weight on V (the objective carries 2η‖V‖₁).
    pub eta: f64,
    /// Number of basis vectors K.
    #[serde(alias = "K")]
    pub n_basis: usize,
    pub knn_k: usize,
    pub max_outer_iters: usize,
    pub rel_tol: f64,
    pub rng_seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: 1.0,
            mu: 1.0,
            beta: 0.7,
            gamma: 1.0,
            lambda: 0.5,
            eta: 1.0,
            n_basis: 100,
            knn_k: 200,
            max_outer_iters: 500,
            rel_tol: 1e-5,
            rng_seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("mu", self.mu),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("eta", self.eta),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite weight >= 0, got {w}")));
            }
        }
        if self.n_basis == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if self.knn_k == 0 {
            return Err(Error::invalid("knn_k must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        Ok(())
    }
}
