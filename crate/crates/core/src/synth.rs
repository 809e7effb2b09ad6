//! Planted-topic benchmark instances.
//!
//! Every image belongs to one topic; its tags come mostly from the topic's
//! block of the vocabulary, with an occasional off-topic tag as noise. The
//! features are a noisy random embedding of the topic, so images that share
//! a topic are close in feature space and the true tagging matrix is close
//! to rank `n_topics`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalSplit;
use crate::types::{FeatureMatrix, TaggingMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_images: usize,
    pub n_tags: usize,
    pub n_topics: usize,
    pub tags_per_image: usize,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub delete_fraction: f64,
    /// Probability that a tag slot is filled from outside the topic block.
    pub off_topic_prob: f64,
    /// Zipf exponent of tag popularity inside a topic block: the r-th tag of
    /// a block is drawn with weight 1/(r+1)^s. 0 makes the block uniform.
    pub popularity_skew: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_images: 1000,
            n_tags: 100,
            n_topics: 10,
            tags_per_image: 5,
            feature_dim: 32,
            feature_noise: 0.3,
            delete_fraction: 0.4,
            off_topic_prob: 0.1,
            popularity_skew: 1.0,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tags_per_image < 2 {
            return Err(Error::invalid("tags_per_image must be at least 2"));
        }
        if self.n_topics == 0 || self.n_topics > self.n_images.min(self.n_tags) {
            return Err(Error::invalid(format!(
                "n_topics must be in [1, min(n_images, n_tags)], got {}",
                self.n_topics
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::invalid("feature_noise must be finite and >= 0"));
        }
        if !(self.delete_fraction > 0.0 && self.delete_fraction < 1.0) {
            return Err(Error::invalid("delete_fraction must lie in (0, 1)"));
        }
        if !(self.popularity_skew >= 0.0 && self.popularity_skew.is_finite()) {
            return Err(Error::invalid("popularity_skew must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.off_topic_prob) {
            return Err(Error::invalid("off_topic_prob must lie in [0, 1]"));
        }
        let smallest = self.n_tags / self.n_topics;
        if smallest < self.tags_per_image {
            return Err(Error::Infeasible(format!(
                "topic blocks hold {smallest} tags but images need {}",
                self.tags_per_image
            )));
        }
        Ok(())
    }

    /// Tag range owned by `topic`; the last block absorbs the remainder.
    pub fn topic_block(&self, topic: usize) -> std::ops::Range<usize> {
        let size = self.n_tags / self.n_topics;
        let end = if topic + 1 == self.n_topics {
            self.n_tags
        } else {
            (topic + 1) * size
        };
        topic * size..end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub truth: TaggingMatrix,
    pub features: FeatureMatrix,
    pub topics: Vec<usize>,
    /// N×n_topics topic indicator.
    pub planted_u: Array2<f64>,
    /// n_topics×M topic-block indicator.
    pub planted_v: Array2<f64>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let projection: Array2<f64> =
        Array2::from_shape_fn((cfg.n_topics, cfg.feature_dim), |_| rng.sample(StandardNormal));

    let mut topics = Vec::with_capacity(cfg.n_images);
    let mut pairs = Vec::with_capacity(cfg.n_images * cfg.tags_per_image);
    let mut features = Array2::zeros((cfg.n_images, cfg.feature_dim));
    for img in 0..cfg.n_images {
        let topic = rng.random_range(0..cfg.n_topics);
        topics.push(topic);
        let block = cfg.topic_block(topic);
        let mut on_topic: Vec<(usize, f64)> = block
            .clone()
            .enumerate()
            .map(|(r, j)| (j, ((r + 1) as f64).powf(-cfg.popularity_skew)))
            .collect();
        let mut off_topic: Vec<usize> = (0..cfg.n_tags).filter(|j| !block.contains(j)).collect();
        for _ in 0..cfg.tags_per_image {
            let tag = if !off_topic.is_empty() && rng.random::<f64>() < cfg.off_topic_prob {
                let pick = rng.random_range(0..off_topic.len());
                off_topic.swap_remove(pick)
            } else {
                let total: f64 = on_topic.iter().map(|&(_, w)| w).sum();
                let mut target = rng.random::<f64>() * total;
                let mut pick = on_topic.len() - 1;
                for (i, &(_, w)) in on_topic.iter().enumerate() {
                    if target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                on_topic.remove(pick).0
            };
            pairs.push((img, tag));
        }
        let mut row = features.row_mut(img);
        row.assign(&projection.row(topic));
        for x in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += cfg.feature_noise * z;
        }
    }

    let mut planted_u = Array2::zeros((cfg.n_images, cfg.n_topics));
    for (img, &t) in topics.iter().enumerate() {
        planted_u[[img, t]] = 1.0;
    }
    let mut planted_v = Array2::zeros((cfg.n_topics, cfg.n_tags));
    for t in 0..cfg.n_topics {
        for j in cfg.topic_block(t) {
            planted_v[[t, j]] = 1.0;
        }
    }

    Ok(SynthInstance {
        truth: TaggingMatrix::from_pairs(cfg.n_images, cfg.n_tags, pairs)?,
        features: FeatureMatrix::new(features)?,
        topics,
        planted_u,
        planted_v,
    })
}

/// Number of tags removed from an image carrying `n_tags` tags.
pub fn deletion_count(n_tags: usize, fraction: f64) -> usize {
    ((fraction * n_tags as f64).round() as usize).clamp(1, n_tags - 1)
}

/// Removes `round(fraction·|tags|)` tags per image, clamped so that every
/// image loses at least one tag and keeps at least one.
pub fn delete_tags(truth: &TaggingMatrix, fraction: f64, seed: u64) -> Result<EvalSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("delete fraction must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = Vec::new();
    let mut deleted = Vec::with_capacity(truth.n_images());
    for img in 0..truth.n_images() {
        let tags = truth.tags_of(img);
        if tags.len() < 2 {
            return Err(Error::invalid(format!(
                "image {img} has {} tag(s); at least 2 are needed to delete one and keep one",
                tags.len()
            )));
        }
        let mut order = tags.to_vec();
        order.shuffle(&mut rng);
        let cut = deletion_count(tags.len(), fraction);
        let mut gone = order[..cut].to_vec();
        gone.sort_unstable();
        observed.extend(order[cut..].iter().map(|&j| (img, j)));
        deleted.push(gone);
    }
    let observed = TaggingMatrix::from_pairs(truth.n_images(), truth.n_tags(), observed)?;
    let test = (0..truth.n_images()).collect();
    EvalSplit::new(observed, deleted, test)
}

/// An exactly low-rank matrix `D = U* V*` with unit-norm columns in `U*`.
pub fn planted_low_rank(
    n_images: usize,
    n_tags: usize,
    rank: usize,
    seed: u64,
) -> Result<(TaggingMatrix, Array2<f64>, Array2<f64>)> {
    if rank == 0 || rank > n_images.min(n_tags) {
        return Err(Error::invalid(format!("rank must be in [1, {}]", n_images.min(n_tags))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Array2<f64> = Array2::from_shape_fn((n_images, rank), |_| rng.sample(StandardNormal));
    for mut col in u.columns_mut() {
        let norm = col.dot(&col).sqrt();
        col /= norm;
    }
    let v: Array2<f64> = Array2::from_shape_fn((rank, n_tags), |_| rng.sample::<f64, _>(StandardNormal) * 2.0);
    let d = TaggingMatrix::from_dense(&u.dot(&v))?;
    Ok((d, u, v))
}
