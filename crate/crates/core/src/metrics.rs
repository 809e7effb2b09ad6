//! Cutoff ranking metrics over held-out tags: AP@N, AR@N and C@N.
//!
//! For every test image the candidate tags are ranked by completed score
//! (descending, ties by ascending tag index) and the top N are compared with
//! the tags deleted from that image. By default tags the image still
//! carries are not candidates: completion is about finding the missing ones.

use std::cmp::Ordering;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::TaggingMatrix;

/// Observed tags, held-out tags, and the images evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    observed: TaggingMatrix,
    deleted: Vec<Vec<usize>>,
    test_images: Vec<usize>,
}

impl EvalSplit {
    pub fn new(observed: TaggingMatrix, mut deleted: Vec<Vec<usize>>, test_images: Vec<usize>) -> Result<Self> {
        let (n, m) = (observed.n_images(), observed.n_tags());
        if deleted.len() != n {
            return Err(Error::dims(
                "deleted sets",
                "observed",
                format!("{} deleted sets for {n} images", deleted.len()),
            ));
        }
        for (img, set) in deleted.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            if let Some(&bad) = set.iter().find(|&&j| j >= m) {
                return Err(Error::invalid(format!("image {img}: deleted tag {bad} out of range ({m} tags)")));
            }
            if let Some(&both) = set.iter().find(|&&j| observed.get(img, j) != 0.0) {
                return Err(Error::invalid(format!("image {img}: tag {both} is both observed and deleted")));
            }
        }
        for &img in &test_images {
            if img >= n {
                return Err(Error::invalid(format!("test image {img} out of range ({n} images)")));
            }
            if deleted[img].is_empty() || observed.tags_of(img).is_empty() {
                return Err(Error::invalid(format!(
                    "test image {img} needs at least one deleted and one observed tag"
                )));
            }
        }
        Ok(EvalSplit {
            observed,
            deleted,
            test_images,
        })
    }

    /// Split whose test set is every image with at least one deleted and
    /// one observed tag.
    pub fn with_eligible_images(observed: TaggingMatrix, deleted: Vec<Vec<usize>>) -> Result<Self> {
        let test = deleted
            .iter()
            .enumerate()
            .filter(|(i, set)| !set.is_empty() && *i < observed.n_images() && !observed.tags_of(*i).is_empty())
            .map(|(i, _)| i)
            .collect();
        Self::new(observed, deleted, test)
    }

    pub fn observed(&self) -> &TaggingMatrix {
        &self.observed
    }

    pub fn deleted(&self, image: usize) -> &[usize] {
        &self.deleted[image]
    }

    pub fn deleted_sets(&self) -> &[Vec<usize>] {
        &self.deleted
    }

    pub fn test_images(&self) -> &[usize] {
        &self.test_images
    }

    pub fn n_images(&self) -> usize {
        self.observed.n_images()
    }

    pub fn n_tags(&self) -> usize {
        self.observed.n_tags()
    }

    fn candidates(&self, image: usize, pool: CandidatePool) -> Vec<usize> {
        match pool {
            CandidatePool::All => (0..self.n_tags()).collect(),
            CandidatePool::ExcludeObserved => {
                let obs = self.observed.tags_of(image);
                (0..self.n_tags()).filter(|j| obs.binary_search(j).is_err()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidatePool {
    #[default]
    ExcludeObserved,
    All,
}

/// Top-N tag lists, one per test image in split order.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub cutoff: usize,
    pub images: Vec<usize>,
    pub lists: Vec<Vec<usize>>,
    /// Test images that had fewer than `cutoff` candidates.
    pub truncated: Vec<usize>,
}

pub fn rank_predictions(
    scores: &Array2<f64>,
    split: &EvalSplit,
    cutoff: usize,
    pool: CandidatePool,
) -> Result<Predictions> {
    if cutoff == 0 {
        return Err(Error::invalid("cutoff N must be at least 1"));
    }
    if scores.dim() != (split.n_images(), split.n_tags()) {
        return Err(Error::dims(
            "scores",
            "split",
            format!("{:?} vs {}x{}", scores.dim(), split.n_images(), split.n_tags()),
        ));
    }
    let mut lists = Vec::with_capacity(split.test_images.len());
    let mut truncated = Vec::new();
    for &img in &split.test_images {
        let row = scores.row(img);
        let mut cands = split.candidates(img, pool);
        cands.sort_by(|&a, &b| match row[b].total_cmp(&row[a]) {
            Ordering::Equal => a.cmp(&b),
            o => o,
        });
        if cands.len() < cutoff {
            truncated.push(img);
        }
        cands.truncate(cutoff);
        lists.push(cands);
    }
    Ok(Predictions {
        cutoff,
        images: split.test_images.clone(),
        lists,
        truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean of |hits| / N.
    pub precision: f64,
    /// Mean of |hits| / |deleted|.
    pub recall: f64,
    /// Fraction of test images with at least one hit.
    pub coverage: f64,
}

pub fn evaluate(predictions: &Predictions, split: &EvalSplit) -> Result<Metrics> {
    if predictions.images.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let n = predictions.cutoff as f64;
    let (mut p, mut r, mut c) = (0.0, 0.0, 0.0);
    for (&img, list) in predictions.images.iter().zip(&predictions.lists) {
        let truth = split.deleted(img);
        if truth.is_empty() {
            return Err(Error::invalid(format!("image {img} has no deleted tags to recover")));
        }
        let hits = list.iter().filter(|t| truth.binary_search(t).is_ok()).count() as f64;
        p += hits / n;
        r += hits / truth.len() as f64;
        if hits > 0.0 {
            c += 1.0;
        }
    }
    let count = predictions.images.len() as f64;
    Ok(Metrics {
        precision: p / count,
        recall: r / count,
        coverage: c / count,
    })
}

/// Copy of `scores` with every row independently shuffled (seeded).
pub fn permuted_scores(scores: &Array2<f64>, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let mut vals = row.to_vec();
        vals.shuffle(&mut rng);
        row.assign(&ndarray::ArrayView1::from(&vals));
    }
    out
}

fn log_choose(n: usize, k: usize) -> f64 {
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// Expected metrics of a uniformly random ranking over the candidate pool.
pub fn chance_metrics(split: &EvalSplit, cutoff: usize, pool: CandidatePool) -> Result<Metrics> {
    if split.test_images.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let (mut p, mut r, mut c) = (0.0, 0.0, 0.0);
    for &img in &split.test_images {
        let cands = split.candidates(img, pool).len();
        let del = split.deleted(img).len();
        let picks = cutoff.min(cands);
        let expected_hits = picks as f64 * del as f64 / cands as f64;
        p += expected_hits / cutoff as f64;
        r += expected_hits / del as f64;
        c += if cands - del < picks {
            1.0
        } else {
            1.0 - (log_choose(cands - del, picks) - log_choose(cands, picks)).exp()
        };
    }
    let count = split.test_images.len() as f64;
    Ok(Metrics {
        precision: p / count,
        recall: r / count,
        coverage: c / count,
    })
}
