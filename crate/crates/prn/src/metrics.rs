//! Verification, identification, and open-set evaluation.
//!
//! All comparisons use squared Euclidean distance between embeddings;
//! a pair is accepted when its distance is less than or equal to the
//! threshold. Candidate thresholds are the midpoints between adjacent
//! distinct distances plus sentinels below and above every observed
//! value, so every achievable operating point appears exactly once.

use crate::error::{Error, Result};

pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One verification operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    /// True accept rate: accepted genuine pairs / genuine pairs.
    pub tar: f64,
    /// False accept rate: accepted impostor pairs / impostor pairs.
    pub far: f64,
}

/// Candidate thresholds covering every achievable decision boundary.
fn candidate_thresholds(distances: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    sorted.dedup();
    let mut t = vec![f64::NEG_INFINITY];
    for w in sorted.windows(2) {
        t.push(0.5 * (w[0] + w[1]));
    }
    t.push(f64::INFINITY);
    t
}

/// ROC over labelled pairs of (squared distance, genuine?).
pub fn verification_roc(pairs: &[(f64, bool)]) -> Result<Vec<RocPoint>> {
    let genuine = pairs.iter().filter(|(_, g)| *g).count();
    let impostor = pairs.len() - genuine;
    if genuine == 0 || impostor == 0 {
        return Err(Error::invalid(
            "ROC needs both genuine and impostor pairs",
        ));
    }
    if pairs.iter().any(|(d, _)| !d.is_finite() || *d < 0.0) {
        return Err(Error::invalid("distances must be finite and non-negative"));
    }
    let distances: Vec<f64> = pairs.iter().map(|(d, _)| *d).collect();
    let points = candidate_thresholds(&distances)
        .into_iter()
        .map(|t| {
            let ta = pairs.iter().filter(|(d, g)| *g && *d <= t).count();
            let fa = pairs.iter().filter(|(d, g)| !*g && *d <= t).count();
            RocPoint {
                threshold: t,
                tar: ta as f64 / genuine as f64,
                far: fa as f64 / impostor as f64,
            }
        })
        .collect();
    Ok(points)
}

/// Highest TAR among operating points with FAR ≤ the target.
pub fn tar_at_far(roc: &[RocPoint], far_target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&far_target) {
        return Err(Error::invalid(format!(
            "FAR target {far_target} outside [0, 1]"
        )));
    }
    roc.iter()
        .filter(|p| p.far <= far_target)
        .map(|p| p.tar)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
        .ok_or_else(|| Error::invalid("no operating point at or below the FAR target"))
}

fn accuracy_at(pairs: &[(f64, bool)], t: f64) -> f64 {
    let correct = pairs
        .iter()
        .filter(|(d, g)| (*d <= t) == *g)
        .count();
    correct as f64 / pairs.len() as f64
}

/// k-fold verification accuracy: for each fold, pick the threshold
/// that maximizes accuracy on the remaining folds (lowest such
/// threshold on ties), then score the held-out fold. Folds are
/// assigned round-robin by pair index.
pub fn fold_accuracy(pairs: &[(f64, bool)], k: usize) -> Result<f64> {
    if k < 2 || pairs.len() < k {
        return Err(Error::invalid(format!(
            "need 2 <= k <= pair count, got k={k} for {} pairs",
            pairs.len()
        )));
    }
    let mut total = 0.0;
    for fold in 0..k {
        let train: Vec<(f64, bool)> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| i % k != fold)
            .map(|(_, p)| *p)
            .collect();
        let test: Vec<(f64, bool)> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| i % k == fold)
            .map(|(_, p)| *p)
            .collect();
        let distances: Vec<f64> = train.iter().map(|(d, _)| *d).collect();
        let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for t in candidate_thresholds(&distances) {
            let acc = accuracy_at(&train, t);
            if acc > best.0 {
                best = (acc, t);
            }
        }
        total += accuracy_at(&test, best.1);
    }
    Ok(total / k as f64)
}

/// Closed-set identification: for each probe, rank gallery entries by
/// squared distance (ties broken by gallery index) and record the rank
/// of the first correct identity. Returns the cumulative match curve:
/// entry r is the fraction of probes whose correct identity appears
/// within the top r+1 ranks.
pub fn identification_cmc(
    probes: &[(Vec<f64>, usize)],
    gallery: &[(Vec<f64>, usize)],
) -> Result<Vec<f64>> {
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::invalid("empty probe or gallery set"));
    }
    let mut hits = vec![0usize; gallery.len()];
    for (emb, label) in probes {
        if !gallery.iter().any(|(_, l)| l == label) {
            return Err(Error::invalid(format!(
                "probe identity {label} absent from the gallery"
            )));
        }
        let mut order: Vec<usize> = (0..gallery.len()).collect();
        order.sort_by(|&a, &b| {
            squared_l2(emb, &gallery[a].0)
                .partial_cmp(&squared_l2(emb, &gallery[b].0))
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        let rank = order
            .iter()
            .position(|&i| gallery[i].1 == *label)
            .expect("checked above");
        hits[rank] += 1;
    }
    let mut cmc = Vec::with_capacity(gallery.len());
    let mut cum = 0usize;
    for h in hits {
        cum += h;
        cmc.push(cum as f64 / probes.len() as f64);
    }
    Ok(cmc)
}

/// True-positive identification rate at a false-positive
/// identification rate budget.
///
/// Known probes carry `Some(label)`; distractors carry `None`. A probe
/// is "detected" when its nearest gallery distance is at or below the
/// threshold; FPIR is the detected fraction of distractors, TPIR the
/// fraction of known probes that are detected *and* rank-1 correct.
/// Returns the best TPIR over thresholds with FPIR ≤ the target.
pub fn open_set_tpir(
    probes: &[(Vec<f64>, Option<usize>)],
    gallery: &[(Vec<f64>, usize)],
    fpir_target: f64,
) -> Result<f64> {
    if gallery.is_empty() {
        return Err(Error::invalid("empty gallery"));
    }
    if !(0.0..=1.0).contains(&fpir_target) {
        return Err(Error::invalid(format!(
            "FPIR target {fpir_target} outside [0, 1]"
        )));
    }
    let known = probes.iter().filter(|(_, l)| l.is_some()).count();
    let unknown = probes.len() - known;
    if known == 0 || unknown == 0 {
        return Err(Error::invalid(
            "open-set evaluation needs both known and distractor probes",
        ));
    }
    // nearest gallery match per probe (ties to the lowest index)
    let nearest: Vec<(f64, usize)> = probes
        .iter()
        .map(|(emb, _)| {
            let mut best = (f64::INFINITY, 0usize);
            for (i, (gemb, _)) in gallery.iter().enumerate() {
                let d = squared_l2(emb, gemb);
                if d < best.0 {
                    best = (d, i);
                }
            }
            best
        })
        .collect();
    let distances: Vec<f64> = nearest.iter().map(|(d, _)| *d).collect();
    let mut best_tpir: Option<f64> = None;
    for t in candidate_thresholds(&distances) {
        let fp = probes
            .iter()
            .zip(&nearest)
            .filter(|((_, l), (d, _))| l.is_none() && *d <= t)
            .count();
        let fpir = fp as f64 / unknown as f64;
        if fpir > fpir_target {
            continue;
        }
        let tp = probes
            .iter()
            .zip(&nearest)
            .filter(|((_, l), (d, i))| match l {
                Some(label) => *d <= t && gallery[*i].1 == *label,
                None => false,
            })
            .count();
        let tpir = tp as f64 / known as f64;
        best_tpir = Some(best_tpir.map_or(tpir, |b| b.max(tpir)));
    }
    best_tpir.ok_or_else(|| Error::invalid("no threshold satisfies the FPIR target"))
}
