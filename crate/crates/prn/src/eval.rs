//! Evaluation protocols over held-out samples.
//!
//! Three protocols run on the validation split: verification
//! (balanced pair list → ROC, TAR@FAR, k-fold accuracy),
//! closed-set identification (first held sample of each identity
//! enrolls the gallery → CMC), and open-set identification (the last
//! quarter of identities leave the gallery and act as distractors →
//! TPIR@FPIR). Results serialize to `metric,operating_point,value`
//! CSV rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{probe_gallery_split, verification_pairs};
use crate::error::{Error, Result};
use crate::metrics::{
    fold_accuracy, identification_cmc, open_set_tpir, squared_l2, tar_at_far, verification_roc,
    RocPoint,
};
use crate::relation::ModelVariant;
use crate::train::{Pipeline, TrainedModel};

/// Number of genuine (and impostor) verification pairs drawn.
pub const VERIFICATION_PAIRS: usize = 250;
/// How many CMC ranks to report.
pub const CMC_RANKS: usize = 5;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub variant: ModelVariant,
    pub roc: Vec<RocPoint>,
    pub far_target: f64,
    pub tar_at_far: f64,
    pub folds: usize,
    pub fold_accuracy: f64,
    pub cmc: Vec<f64>,
    pub fpir_target: f64,
    pub tpir: f64,
}

impl Evaluation {
    /// `metric,operating_point,value` rows.
    pub fn csv(&self) -> String {
        let mut out = String::from("metric,operating_point,value\n");
        out.push_str(&format!("tar_at_far,{},{}\n", self.far_target, self.tar_at_far));
        out.push_str(&format!("fold_accuracy,{},{}\n", self.folds, self.fold_accuracy));
        for (r, v) in self.cmc.iter().take(CMC_RANKS).enumerate() {
            out.push_str(&format!("cmc_rank,{},{}\n", r + 1, v));
        }
        out.push_str(&format!("tpir_at_fpir,{},{}\n", self.fpir_target, self.tpir));
        out
    }

    /// `threshold,far,tar` rows of the full verification curve.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("threshold,far,tar\n");
        for p in &self.roc {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.tar));
        }
        out
    }
}

/// Run all three protocols on the validation split.
pub fn evaluate(pipe: &Pipeline, model: &mut TrainedModel) -> Result<Evaluation> {
    let run = &pipe.data.run;
    let val = &pipe.data.val_idx;
    if val.len() < 8 {
        return Err(Error::invalid("validation split too small to evaluate"));
    }
    let labels: Vec<usize> = val.iter().map(|&i| pipe.data.labels[i]).collect();
    let embeddings = pipe.embed_many(model, val)?;

    // verification
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x51EA);
    let want = VERIFICATION_PAIRS.min(val.len() * (val.len() - 1) / 4);
    let pair_list = verification_pairs(&labels, want, &mut rng)?;
    let scored: Vec<(f64, bool)> = pair_list
        .iter()
        .map(|&(a, b, genuine)| (squared_l2(&embeddings[a], &embeddings[b]), genuine))
        .collect();
    let roc = verification_roc(&scored)?;
    let tar = tar_at_far(&roc, run.far_target)?;
    let folds = run.folds.min(scored.len());
    let fold_acc = fold_accuracy(&scored, folds)?;

    // closed-set identification
    let (gallery_rows, probe_rows) = probe_gallery_split(&labels)?;
    let gallery: Vec<(Vec<f64>, usize)> = gallery_rows
        .iter()
        .map(|&r| (embeddings[r].clone(), labels[r]))
        .collect();
    let probes: Vec<(Vec<f64>, usize)> = probe_rows
        .iter()
        .map(|&r| (embeddings[r].clone(), labels[r]))
        .collect();
    let cmc = identification_cmc(&probes, &gallery)?;

    // open set: the last quarter of identities become distractors
    let distractor_from = run.identities - (run.identities / 4).max(1);
    let open_gallery: Vec<(Vec<f64>, usize)> = gallery_rows
        .iter()
        .filter(|&&r| labels[r] < distractor_from)
        .map(|&r| (embeddings[r].clone(), labels[r]))
        .collect();
    let open_probes: Vec<(Vec<f64>, Option<usize>)> = probe_rows
        .iter()
        .map(|&r| {
            let label = if labels[r] < distractor_from {
                Some(labels[r])
            } else {
                None
            };
            (embeddings[r].clone(), label)
        })
        .collect();
    let tpir = open_set_tpir(&open_probes, &open_gallery, run.fpir_target)?;

    Ok(Evaluation {
        variant: model.variant,
        roc,
        far_target: run.far_target,
        tar_at_far: tar,
        folds,
        fold_accuracy: fold_acc,
        cmc,
        fpir_target: run.fpir_target,
        tpir,
    })
}
