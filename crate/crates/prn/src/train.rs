//! Staged training pipeline.
//!
//! Stages run in order: (1) the backbone learns identities with a
//! softmax head; (2) the recurrent identity encoder learns the same
//! task from patch sequences; (3) the relation module trains on the
//! combined triplet-ratio / pairwise / identity objective over a
//! frozen backbone; (4) the combiner fuses the global feature with the
//! relational embedding. Because the backbone is frozen after stage 1
//! (unless `joint=true`), its feature maps are precomputed once and
//! later stages train on cached patches, which keeps the whole
//! pipeline desk-cheap. Every random choice derives from the run seed,
//! so identical configurations produce bit-identical parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{
    backbone_forward, backbone_logits, extract_patches, faces_to_tensor, init_backbone,
    BackboneConfig, FeatureMaps, LocalPatchSet,
};
use crate::config::RunConfig;
use crate::data::{generate_dataset, DatasetConfig};
use crate::error::{Error, Result};
use crate::geometry::{align_face, AlignedFace, AlignmentConfig, LandmarkSet};
use crate::graph::{Graph, Reduction, Var};
use crate::losses::{pairwise_loss, sample_triplets, total_loss, triplet_ratio_loss, LossWeights};
use crate::nn::{mlp_forward, MlpSpec, Mode};
use crate::params::ParamStore;
use crate::relation::{
    combine, identity_state_batch, init_combiner, init_identity_encoder, init_relation,
    prn_forward, prn_plus_forward, relation_head_batch, Embedding, ModelVariant, PrnConfig,
};
use crate::tensor::Tensor;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stage)))
}

/// Forward-only passes after each stage that uses batch norm, so the
/// running statistics converge to the final weights before any
/// eval-mode use.
pub const BN_CALIBRATION_PASSES: usize = 60;

/// One CSV log line per optimization step.
pub fn log_header() -> &'static str {
    "stage,step,triplet,pairwise,identity,total,learning_rate"
}

/// Aligned dataset plus the split, before any training.
pub struct PreparedData {
    pub run: RunConfig,
    pub backbone_cfg: BackboneConfig,
    pub prn_cfg: PrnConfig,
    pub faces: Vec<AlignedFace>,
    /// Landmarks in aligned-image coordinates, one set per face.
    pub landmarks: Vec<LandmarkSet>,
    pub labels: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

/// A prepared pipeline: trained backbone plus cached features for
/// every sample.
pub struct Pipeline {
    pub data: PreparedData,
    pub store: ParamStore,
    /// Per-sample global feature from the frozen backbone.
    pub gap: Vec<Vec<f64>>,
    /// Per-sample landmark patches from the frozen backbone.
    pub patches: Vec<LocalPatchSet>,
    pub backbone_val_accuracy: f64,
    pub log: Vec<String>,
}

/// Everything needed to embed a face with one model variant.
pub struct TrainedModel {
    pub variant: ModelVariant,
    pub store: ParamStore,
    pub backbone_cfg: BackboneConfig,
    pub prn_cfg: PrnConfig,
    pub log: Vec<String>,
}

fn check_finite(stage: &str, step: usize, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "{stage} loss diverged at step {step}: {value}; \
             lower the learning rate or change the seed"
        )));
    }
    Ok(())
}

/// Generate, align, and split the synthetic dataset.
pub fn prepare_data(run: &RunConfig) -> Result<PreparedData> {
    run.validate()?;
    let ds = DatasetConfig::desk(run.identities, run.samples_per_identity, run.seed);
    let mut ds = ds;
    ds.image_size = run.image_size;
    let samples = generate_dataset(&ds)?;
    let align = AlignmentConfig::synthetic_15(run.align_size);
    let mut faces = Vec::with_capacity(samples.len());
    let mut landmarks = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in &samples {
        let (face, lmk, _) = align_face(&s.image, &s.landmarks, &align)?;
        faces.push(face);
        landmarks.push(lmk);
        labels.push(s.identity);
    }
    let (train_pairs, val_pairs) = crate::data::stratified_split(
        run.identities,
        run.samples_per_identity,
        run.train_frac,
    )?;
    let flat = |pairs: Vec<(usize, usize)>| -> Vec<usize> {
        pairs
            .into_iter()
            .map(|(id, k)| id * run.samples_per_identity + k)
            .collect()
    };
    Ok(PreparedData {
        run: run.clone(),
        backbone_cfg: BackboneConfig::desk(run.identities),
        prn_cfg: PrnConfig::desk(run.identities),
        faces,
        landmarks,
        labels,
        train_idx: flat(train_pairs),
        val_idx: flat(val_pairs),
    })
}

/// Batch of sample indices where every picked identity appears twice,
/// so triplet sampling always succeeds.
fn paired_batch(
    by_identity: &[Vec<usize>],
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut idx = Vec::with_capacity(batch);
    while idx.len() + 2 <= batch {
        let id = rng.gen_range(0..by_identity.len());
        let group = &by_identity[id];
        let a = group[rng.gen_range(0..group.len())];
        let mut b = group[rng.gen_range(0..group.len())];
        while b == a {
            b = group[rng.gen_range(0..group.len())];
        }
        idx.push(a);
        idx.push(b);
    }
    idx
}

fn group_by_identity(indices: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); classes];
    for &i in indices {
        groups[labels[i]].push(i);
    }
    groups
}

fn classification_accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let mut correct = 0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("nonempty row");
        if argmax == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

/// Train the backbone classifier, then cache per-sample features.
pub fn prepare(run: &RunConfig) -> Result<Pipeline> {
    let data = prepare_data(run)?;
    let mut store = ParamStore::new();
    let mut init_rng = stage_rng(run.seed, 0x10);
    init_backbone(&mut store, &data.backbone_cfg, &mut init_rng);
    let mut log = vec![log_header().to_string()];

    // stage 1: softmax identity classification
    let mut rng = stage_rng(run.seed, 0x11);
    for step in 0..run.steps_backbone {
        let idx: Vec<usize> = (0..run.batch)
            .map(|_| data.train_idx[rng.gen_range(0..data.train_idx.len())])
            .collect();
        let faces: Vec<&AlignedFace> = idx.iter().map(|&i| &data.faces[i]).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let mut g = Graph::new();
        let x = g.input(faces_to_tensor(&faces)?);
        let (_, gap) = backbone_forward(&mut g, &mut store, &data.backbone_cfg, x, Mode::Train)?;
        let logits = backbone_logits(&mut g, &store, gap)?;
        let loss = g.softmax_cross_entropy(logits, &labels, Reduction::Mean)?;
        let value = g.value(loss).item();
        check_finite("backbone", step, value)?;
        g.backward_params(loss, &mut store)?;
        store.sgd_step(run.learning_rate);
        store.zero_grads();
        log.push(format!(
            "backbone,{step},0,0,{value},{value},{}",
            run.learning_rate
        ));
    }

    // settle the BN running statistics at the final weights:
    // forward-only passes, no parameter updates
    for _ in 0..BN_CALIBRATION_PASSES {
        let idx: Vec<usize> = (0..run.batch)
            .map(|_| data.train_idx[rng.gen_range(0..data.train_idx.len())])
            .collect();
        let faces: Vec<&AlignedFace> = idx.iter().map(|&i| &data.faces[i]).collect();
        let mut g = Graph::new();
        let x = g.input(faces_to_tensor(&faces)?);
        backbone_forward(&mut g, &mut store, &data.backbone_cfg, x, Mode::Train)?;
    }

    assemble(data, store, log)
}

/// Build the feature cache and validation accuracy around an already
/// trained backbone (freshly trained here, or loaded from a
/// checkpoint).
pub fn assemble(data: PreparedData, mut store: ParamStore, log: Vec<String>) -> Result<Pipeline> {
    let run = data.run.clone();
    // validation accuracy of the softmax head
    let mut correct_weighted = 0.0;
    for chunk in data.val_idx.chunks(32) {
        let faces: Vec<&AlignedFace> = chunk.iter().map(|&i| &data.faces[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let mut g = Graph::new();
        let x = g.input(faces_to_tensor(&faces)?);
        let (_, gap) = backbone_forward(&mut g, &mut store, &data.backbone_cfg, x, Mode::Eval)?;
        let logits = backbone_logits(&mut g, &store, gap)?;
        correct_weighted += classification_accuracy(g.value(logits), &labels) * labels.len() as f64;
    }
    let backbone_val_accuracy = correct_weighted / data.val_idx.len() as f64;

    // cache features from the frozen backbone
    let side = data.backbone_cfg.map_side();
    let channels = data.backbone_cfg.final_channels();
    let mut gap_cache = vec![Vec::new(); data.faces.len()];
    let mut patch_cache: Vec<LocalPatchSet> = (0..data.faces.len())
        .map(|_| LocalPatchSet {
            patches: Vec::new(),
            cells: Vec::new(),
        })
        .collect();
    let all: Vec<usize> = (0..data.faces.len()).collect();
    for chunk in all.chunks(32) {
        let faces: Vec<&AlignedFace> = chunk.iter().map(|&i| &data.faces[i]).collect();
        let mut g = Graph::new();
        let x = g.input(faces_to_tensor(&faces)?);
        let (maps, gap) = backbone_forward(&mut g, &mut store, &data.backbone_cfg, x, Mode::Eval)?;
        let maps_val = g.value(maps);
        let gap_val = g.value(gap);
        let plane = side * side * channels;
        for (b, &i) in chunk.iter().enumerate() {
            gap_cache[i] = gap_val.row(b).to_vec();
            let fm = FeatureMaps {
                side,
                channels,
                data: Tensor::new(
                    vec![side * side, channels],
                    maps_val.data()[b * plane..(b + 1) * plane].to_vec(),
                )?,
            };
            patch_cache[i] = extract_patches(
                &fm,
                &data.landmarks[i],
                run.align_size,
                data.backbone_cfg.patch_m_pixels,
            );
        }
    }
    Ok(Pipeline {
        data,
        store,
        gap: gap_cache,
        patches: patch_cache,
        backbone_val_accuracy,
        log,
    })
}

impl Pipeline {
    fn weights(&self) -> LossWeights {
        LossWeights {
            triplet: self.data.run.lambda_triplet,
            pairwise: self.data.run.lambda_pairwise,
            identity: self.data.run.lambda_identity,
        }
    }

    fn patch_block(&self, idx: &[usize]) -> Tensor {
        let mut rows = Vec::with_capacity(idx.len() * self.data.prn_cfg.n_landmarks);
        for &i in idx {
            rows.extend(self.patches[i].patches.iter().cloned());
        }
        Tensor::from_rows(&rows)
    }

    /// Stage 2: identity encoder on patch sequences.
    fn train_encoder(&self, store: &mut ParamStore, log: &mut Vec<String>) -> Result<()> {
        let run = &self.data.run;
        let cfg = &self.data.prn_cfg;
        let mut rng = stage_rng(run.seed, 0x21);
        init_identity_encoder(store, cfg, &mut rng);
        store.set_trainable_prefix("", false);
        store.set_trainable_prefix("e_psi.", true);
        let head_spec = MlpSpec::linear(cfg.s_id_width, cfg.classes);
        for step in 0..run.steps_encoder {
            let idx: Vec<usize> = (0..run.batch)
                .map(|_| self.data.train_idx[rng.gen_range(0..self.data.train_idx.len())])
                .collect();
            let labels: Vec<usize> = idx.iter().map(|&i| self.data.labels[i]).collect();
            let mut g = Graph::new();
            let block = g.input(self.patch_block(&idx));
            let sid = identity_state_batch(
                &mut g,
                store,
                cfg,
                block,
                idx.len(),
                cfg.n_landmarks,
                Mode::Train,
            )?;
            let logits = mlp_forward(&mut g, store, "e_psi.head", &head_spec, sid, Mode::Train)?;
            let loss = g.softmax_cross_entropy(logits, &labels, Reduction::Mean)?;
            let value = g.value(loss).item();
            check_finite("encoder", step, value)?;
            g.backward_params(loss, store)?;
            store.sgd_step(run.learning_rate);
            store.zero_grads();
            log.push(format!(
                "encoder,{step},0,0,{value},{value},{}",
                run.learning_rate
            ));
        }
        Ok(())
    }

    /// Stage 3: relation module on the combined objective.
    fn train_relation(
        &self,
        store: &mut ParamStore,
        conditioned: bool,
        log: &mut Vec<String>,
    ) -> Result<()> {
        let run = &self.data.run;
        let cfg = &self.data.prn_cfg;
        let stage = if conditioned { "prn_plus" } else { "prn" };
        let mut rng = stage_rng(run.seed, if conditioned { 0x32 } else { 0x31 });
        init_relation(store, cfg, conditioned, &mut rng);
        store.set_trainable_prefix("", false);
        store.set_trainable_prefix("g_theta.", true);
        store.set_trainable_prefix("f_phi.", true);
        store.set_trainable_prefix("prn.head.", true);
        if run.joint {
            store.set_trainable_prefix("backbone.", true);
        }
        let groups = group_by_identity(
            &self.data.train_idx,
            &self.data.labels,
            run.identities,
        );
        let head_spec = MlpSpec::linear(cfg.head_width, cfg.classes);
        let weights = self.weights();
        for step in 0..run.steps_relation {
            let idx = paired_batch(&groups, run.batch, &mut rng);
            let labels: Vec<usize> = idx.iter().map(|&i| self.data.labels[i]).collect();
            let mut g = Graph::new();
            let block = if run.joint {
                self.joint_patch_block(&mut g, store, &idx)?
            } else {
                g.input(self.patch_block(&idx))
            };
            let sid = if conditioned {
                Some(identity_state_batch(
                    &mut g,
                    store,
                    cfg,
                    block,
                    idx.len(),
                    cfg.n_landmarks,
                    Mode::Train,
                )?)
            } else {
                None
            };
            let head =
                relation_head_batch(&mut g, store, cfg, block, idx.len(), Mode::Train, sid)?;
            let logits =
                mlp_forward(&mut g, store, "prn.head", &head_spec, head, Mode::Train)?;
            let triplets = sample_triplets(&labels, &mut rng)?;
            let lt = triplet_ratio_loss(&mut g, head, &triplets, run.margin)?;
            let pairs: Vec<(usize, usize)> =
                triplets.iter().map(|t| (t.anchor, t.positive)).collect();
            let lp = pairwise_loss(&mut g, head, &pairs)?;
            let lid = g.softmax_cross_entropy(logits, &labels, Reduction::Mean)?;
            let (total, bd) = total_loss(&mut g, Some(lt), Some(lp), Some(lid), weights)?;
            check_finite(stage, step, bd.total)?;
            g.backward_params(total, store)?;
            store.sgd_step(run.learning_rate);
            store.zero_grads();
            log.push(format!(
                "{stage},{step},{},{},{},{},{}",
                bd.triplet, bd.pairwise, bd.identity, bd.total, run.learning_rate
            ));
        }
        // settle the relation-MLP BN statistics at the final weights
        for _ in 0..BN_CALIBRATION_PASSES {
            let idx = paired_batch(&groups, run.batch, &mut rng);
            let mut g = Graph::new();
            let block = if run.joint {
                self.joint_patch_block(&mut g, store, &idx)?
            } else {
                g.input(self.patch_block(&idx))
            };
            let sid = if conditioned {
                Some(identity_state_batch(
                    &mut g,
                    store,
                    cfg,
                    block,
                    idx.len(),
                    cfg.n_landmarks,
                    Mode::Train,
                )?)
            } else {
                None
            };
            relation_head_batch(&mut g, store, cfg, block, idx.len(), Mode::Train, sid)?;
        }
        Ok(())
    }

    /// In-graph patch block through the backbone, for joint
    /// fine-tuning.
    fn joint_patch_block(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        idx: &[usize],
    ) -> Result<Var> {
        let faces: Vec<&AlignedFace> = idx.iter().map(|&i| &self.data.faces[i]).collect();
        let x = g.input(faces_to_tensor(&faces)?);
        let (maps, _) = backbone_forward(g, store, &self.data.backbone_cfg, x, Mode::Train)?;
        let side = self.data.backbone_cfg.map_side();
        let channels = self.data.backbone_cfg.final_channels();
        let flat = g.reshape(maps, vec![idx.len() * side * side, channels]);
        // gather each landmark's ROI rows, face-major
        let mut rows = Vec::new();
        let mut extent = 0;
        for (b, &i) in idx.iter().enumerate() {
            let cells = &self.patches[i].cells;
            for cell in cells {
                extent = cell.extent;
                let r0 = cell.row.min(side - cell.extent);
                let c0 = cell.col.min(side - cell.extent);
                for dr in 0..cell.extent {
                    for dc in 0..cell.extent {
                        rows.push(b * side * side + (r0 + dr) * side + (c0 + dc));
                    }
                }
            }
        }
        let gathered = g.gather_rows(flat, &rows);
        let n = self.data.prn_cfg.n_landmarks;
        Ok(g.reshape(
            gathered,
            vec![idx.len() * n, extent * extent * channels],
        ))
    }

    /// Stage 4: combiner over cached global features and relational
    /// heads.
    fn train_combiner(
        &self,
        store: &mut ParamStore,
        conditioned: bool,
        log: &mut Vec<String>,
    ) -> Result<()> {
        let run = &self.data.run;
        let cfg = &self.data.prn_cfg;
        let mut rng = stage_rng(run.seed, 0x41);
        init_combiner(store, cfg, &mut rng);
        // cache relational heads from the now-frozen relation module
        let mut heads = vec![Vec::new(); self.data.faces.len()];
        for &i in self.data.train_idx.iter().chain(&self.data.val_idx) {
            let (bundle, _) = if conditioned {
                prn_plus_forward(&self.patches[i], store, cfg)?
            } else {
                prn_forward(&self.patches[i], store, cfg)?
            };
            heads[i] = bundle.head;
        }
        store.set_trainable_prefix("", false);
        store.set_trainable_prefix("combiner.", true);
        let fc_spec = MlpSpec::linear(cfg.gap_width + cfg.head_width, cfg.combined_width);
        let head_spec = MlpSpec::linear(cfg.combined_width, cfg.classes);
        let groups = group_by_identity(
            &self.data.train_idx,
            &self.data.labels,
            run.identities,
        );
        let weights = self.weights();
        for step in 0..run.steps_combined {
            let idx = paired_batch(&groups, run.batch, &mut rng);
            let labels: Vec<usize> = idx.iter().map(|&i| self.data.labels[i]).collect();
            let rows: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| {
                    let mut row = self.gap[i].clone();
                    row.extend_from_slice(&heads[i]);
                    row
                })
                .collect();
            let mut g = Graph::new();
            let x = g.input(Tensor::from_rows(&rows));
            let emb = mlp_forward(&mut g, store, "combiner.fc", &fc_spec, x, Mode::Train)?;
            let logits =
                mlp_forward(&mut g, store, "combiner.head", &head_spec, emb, Mode::Train)?;
            let triplets = sample_triplets(&labels, &mut rng)?;
            let lt = triplet_ratio_loss(&mut g, emb, &triplets, run.margin)?;
            let pairs: Vec<(usize, usize)> =
                triplets.iter().map(|t| (t.anchor, t.positive)).collect();
            let lp = pairwise_loss(&mut g, emb, &pairs)?;
            let lid = g.softmax_cross_entropy(logits, &labels, Reduction::Mean)?;
            let (total, bd) = total_loss(&mut g, Some(lt), Some(lp), Some(lid), weights)?;
            check_finite("combined", step, bd.total)?;
            g.backward_params(total, store)?;
            store.sgd_step(run.learning_rate);
            store.zero_grads();
            log.push(format!(
                "combined,{step},{},{},{},{},{}",
                bd.triplet, bd.pairwise, bd.identity, bd.total, run.learning_rate
            ));
        }
        Ok(())
    }

    /// Train the stages a variant needs on top of the shared backbone.
    pub fn train_variant(&self, variant: ModelVariant) -> Result<TrainedModel> {
        let mut store = self.store.clone();
        let mut log = vec![log_header().to_string()];
        match variant {
            ModelVariant::ModelA => {}
            ModelVariant::Prn => {
                self.train_relation(&mut store, false, &mut log)?;
            }
            ModelVariant::PrnPlus => {
                self.train_encoder(&mut store, &mut log)?;
                self.train_relation(&mut store, true, &mut log)?;
            }
            ModelVariant::ModelB => {
                self.train_relation(&mut store, false, &mut log)?;
                self.train_combiner(&mut store, false, &mut log)?;
            }
            ModelVariant::ModelC => {
                self.train_encoder(&mut store, &mut log)?;
                self.train_relation(&mut store, true, &mut log)?;
                self.train_combiner(&mut store, true, &mut log)?;
            }
        }
        // leave the store ready for further fine-tuning of the last
        // stage only
        Ok(TrainedModel {
            variant,
            store,
            backbone_cfg: self.data.backbone_cfg.clone(),
            prn_cfg: self.data.prn_cfg.clone(),
            log,
        })
    }

    /// Embed one cached sample with a trained model.
    pub fn embed(&self, model: &mut TrainedModel, sample: usize) -> Result<Embedding> {
        let cfg = &model.prn_cfg;
        let patches = &self.patches[sample];
        let gap = &self.gap[sample];
        match model.variant {
            ModelVariant::ModelA => Ok(Embedding {
                vector: gap.clone(),
                variant: ModelVariant::ModelA,
            }),
            ModelVariant::Prn => Ok(prn_forward(patches, &mut model.store, cfg)?.1),
            ModelVariant::PrnPlus => Ok(prn_plus_forward(patches, &mut model.store, cfg)?.1),
            ModelVariant::ModelB => {
                let (bundle, _) = prn_forward(patches, &mut model.store, cfg)?;
                combine(&mut model.store, cfg, gap, &bundle.head, ModelVariant::ModelB)
            }
            ModelVariant::ModelC => {
                let (bundle, _) = prn_plus_forward(patches, &mut model.store, cfg)?;
                combine(&mut model.store, cfg, gap, &bundle.head, ModelVariant::ModelC)
            }
        }
    }

    pub fn embed_many(
        &self,
        model: &mut TrainedModel,
        samples: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        samples
            .iter()
            .map(|&i| Ok(self.embed(model, i)?.vector))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_run() -> RunConfig {
        let mut run = RunConfig::default();
        run.identities = 4;
        run.samples_per_identity = 6;
        run.batch = 8;
        run.steps_backbone = 6;
        run.steps_encoder = 4;
        run.steps_relation = 4;
        run.steps_combined = 4;
        run.train_frac = 0.67;
        run.seed = 11;
        run
    }

    #[test]
    fn pipeline_runs_and_losses_stay_finite() {
        let pipe = prepare(&tiny_run()).unwrap();
        assert_eq!(pipe.gap.len(), 24);
        assert_eq!(pipe.patches[0].patches.len(), 15);
        assert!(pipe.backbone_val_accuracy >= 0.0);
        let mut model = pipe.train_variant(ModelVariant::ModelC).unwrap();
        assert!(model.log.len() > 1);
        let emb = pipe.embed(&mut model, 0).unwrap();
        assert_eq!(emb.width(), pipe.data.prn_cfg.combined_width);
        assert!(emb.vector.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn frozen_backbone_is_bit_identical_after_relation_training() {
        let pipe = prepare(&tiny_run()).unwrap();
        let model = pipe.train_variant(ModelVariant::Prn).unwrap();
        for (name, before) in pipe.store.iter() {
            if name.starts_with("backbone.") {
                let after = model.store.value(name).unwrap();
                assert_eq!(before.value.data(), after.data(), "{name}");
            }
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = tiny_run();
        let p1 = prepare(&run).unwrap();
        let p2 = prepare(&run).unwrap();
        let m1 = p1.train_variant(ModelVariant::ModelB).unwrap();
        let m2 = p2.train_variant(ModelVariant::ModelB).unwrap();
        assert_eq!(m1.store.len(), m2.store.len());
        for ((n1, a), (n2, b)) in m1.store.iter().zip(m2.store.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a.value.data(), b.value.data(), "{n1}");
        }
        assert_eq!(m1.log, m2.log);
        assert_eq!(p1.backbone_val_accuracy, p2.backbone_val_accuracy);
    }

    #[test]
    fn paired_batches_always_admit_triplets() {
        let mut rng = stage_rng(3, 0x99);
        let groups: Vec<Vec<usize>> = vec![vec![0, 1, 2], vec![3, 4], vec![5, 6, 7]];
        for _ in 0..50 {
            let idx = paired_batch(&groups, 8, &mut rng);
            assert_eq!(idx.len(), 8);
            for pair in idx.chunks(2) {
                assert_ne!(pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn joint_flag_updates_the_backbone() {
        let mut run = tiny_run();
        run.joint = true;
        run.steps_relation = 2;
        let pipe = prepare(&run).unwrap();
        let model = pipe.train_variant(ModelVariant::Prn).unwrap();
        let mut changed = false;
        for (name, before) in pipe.store.iter() {
            if name.starts_with("backbone.") && !name.contains(".running_") {
                if before.value.data() != model.store.value(name).unwrap().data() {
                    changed = true;
                }
            }
        }
        assert!(changed, "joint fine-tuning must move backbone weights");
    }
}
