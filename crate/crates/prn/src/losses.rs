//! Training objectives.
//!
//! The total objective is a weighted sum of three terms: a
//! triplet-ratio hinge pushing the positive/negative distance ratio
//! apart, a pairwise squared-distance term pulling matched embeddings
//! together, and the softmax identity cross-entropy. Each distance
//! term is normalized by the number of triplets (or pairs) in the
//! batch.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Indices into the rows of a batch embedding matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub triplet: f64,
    pub pairwise: f64,
    pub identity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            triplet: 1.0,
            pairwise: 0.5,
            identity: 1.0,
        }
    }
}

/// Per-term values of one evaluated objective, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub triplet: f64,
    pub pairwise: f64,
    pub identity: f64,
    pub total: f64,
}

/// Per-row Euclidean norm of `a - b`: returns a (rows, 1) variable.
fn row_distance(g: &mut Graph, a: Var, b: Var) -> Var {
    let diff = g.sub(a, b);
    let sq = g.mul(diff, diff);
    let cols = g.value(sq).cols();
    let ones = g.constant(Tensor::new(vec![cols, 1], vec![1.0; cols]).expect("sized"));
    let rowsum = g.matmul(sq, ones);
    g.sqrt(rowsum)
}

fn row_squared_distance(g: &mut Graph, a: Var, b: Var) -> Var {
    let diff = g.sub(a, b);
    let sq = g.mul(diff, diff);
    let cols = g.value(sq).cols();
    let ones = g.constant(Tensor::new(vec![cols, 1], vec![1.0; cols]).expect("sized"));
    g.matmul(sq, ones)
}

/// Mean over triplets of `max(0, 1 - ‖a-n‖ / (‖a-p‖ + margin))`.
pub fn triplet_ratio_loss(
    g: &mut Graph,
    embeddings: Var,
    triplets: &[Triplet],
    margin: f64,
) -> Result<Var> {
    if triplets.is_empty() {
        return Err(Error::invalid("no triplets"));
    }
    if margin <= 0.0 || !margin.is_finite() {
        return Err(Error::invalid(format!("margin must be positive, got {margin}")));
    }
    let rows = g.value(embeddings).rows();
    for t in triplets {
        if t.anchor >= rows || t.positive >= rows || t.negative >= rows {
            return Err(Error::invalid("triplet index out of range"));
        }
    }
    let a_idx: Vec<usize> = triplets.iter().map(|t| t.anchor).collect();
    let p_idx: Vec<usize> = triplets.iter().map(|t| t.positive).collect();
    let n_idx: Vec<usize> = triplets.iter().map(|t| t.negative).collect();
    let a = g.gather_rows(embeddings, &a_idx);
    let p = g.gather_rows(embeddings, &p_idx);
    let n = g.gather_rows(embeddings, &n_idx);
    let d_ap = row_distance(g, a, p);
    let d_an = row_distance(g, a, n);
    let denom = g.add_const(d_ap, margin);
    let ratio = g.div(d_an, denom);
    let hinge_arg = g.rsub_const(1.0, ratio);
    let hinge = g.relu(hinge_arg);
    let sum = g.sum_all(hinge);
    Ok(g.scale(sum, 1.0 / triplets.len() as f64))
}

/// Mean over (anchor, positive) pairs of `‖a-p‖²`.
pub fn pairwise_loss(g: &mut Graph, embeddings: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs"));
    }
    let rows = g.value(embeddings).rows();
    for &(a, p) in pairs {
        if a >= rows || p >= rows {
            return Err(Error::invalid("pair index out of range"));
        }
    }
    let a_idx: Vec<usize> = pairs.iter().map(|&(a, _)| a).collect();
    let p_idx: Vec<usize> = pairs.iter().map(|&(_, p)| p).collect();
    let a = g.gather_rows(embeddings, &a_idx);
    let p = g.gather_rows(embeddings, &p_idx);
    let sq = row_squared_distance(g, a, p);
    let sum = g.sum_all(sq);
    Ok(g.scale(sum, 1.0 / pairs.len() as f64))
}

/// Weighted sum of available terms. Missing terms contribute zero.
pub fn total_loss(
    g: &mut Graph,
    triplet: Option<Var>,
    pairwise: Option<Var>,
    identity: Option<Var>,
    weights: LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let mut parts = Vec::new();
    let term = |g: &mut Graph, v: Option<Var>| v.map(|v| g.value(v).item()).unwrap_or(0.0);
    let bt = term(g, triplet);
    let bp = term(g, pairwise);
    let bi = term(g, identity);
    if let Some(v) = triplet {
        parts.push(g.scale(v, weights.triplet));
    }
    if let Some(v) = pairwise {
        parts.push(g.scale(v, weights.pairwise));
    }
    if let Some(v) = identity {
        parts.push(g.scale(v, weights.identity));
    }
    let mut iter = parts.into_iter();
    let mut total = iter
        .next()
        .ok_or_else(|| Error::invalid("total loss needs at least one term"))?;
    for v in iter {
        total = g.add(total, v);
    }
    let breakdown = LossBreakdown {
        triplet: bt,
        pairwise: bp,
        identity: bi,
        total: g.value(total).item(),
    };
    Ok((total, breakdown))
}

fn by_label(labels: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups
}

/// One random triplet per eligible anchor: positive shares the
/// anchor's label, negative is drawn from any other label.
pub fn sample_triplets(labels: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<Triplet>> {
    let groups = by_label(labels);
    let populated = groups.iter().filter(|g| !g.is_empty()).count();
    if populated < 2 {
        return Err(Error::invalid("triplet sampling needs at least 2 classes"));
    }
    let mut triplets = Vec::new();
    for (anchor, &label) in labels.iter().enumerate() {
        let positives: Vec<usize> = groups[label]
            .iter()
            .copied()
            .filter(|&i| i != anchor)
            .collect();
        if positives.is_empty() {
            continue;
        }
        let negatives: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] != label)
            .collect();
        let positive = *positives.choose(rng).expect("nonempty");
        let negative = *negatives.choose(rng).expect("2+ classes");
        triplets.push(Triplet {
            anchor,
            positive,
            negative,
        });
    }
    if triplets.is_empty() {
        return Err(Error::invalid("no class has two samples"));
    }
    Ok(triplets)
}

/// Semi-hard refinement: for each anchor keep the sampled positive but
/// pick a negative with `d(a,n) < d(a,p) + margin` when one exists
/// (random among candidates), otherwise keep a random negative.
pub fn semi_hard_triplets(
    embeddings: &Tensor,
    labels: &[usize],
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triplet>> {
    let base = sample_triplets(labels, rng)?;
    let dist = |a: usize, b: usize| -> f64 {
        embeddings
            .row(a)
            .iter()
            .zip(embeddings.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut refined = Vec::with_capacity(base.len());
    for t in base {
        let d_ap = dist(t.anchor, t.positive);
        let candidates: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] != labels[t.anchor] && dist(t.anchor, i) < d_ap + margin)
            .collect();
        let negative = match candidates.choose(rng) {
            Some(&n) => n,
            None => t.negative,
        };
        refined.push(Triplet { negative, ..t });
    }
    Ok(refined)
}

/// Reference scalar implementations used by the tests and examples.
pub fn triplet_ratio_value(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    let d = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
    };
    (1.0 - d(a, n) / (d(a, p) + margin)).max(0.0)
}

pub fn pairwise_value(a: &[f64], p: &[f64]) -> f64 {
    a.iter().zip(p).map(|(u, v)| (u - v) * (u - v)).sum()
}
