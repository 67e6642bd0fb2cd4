//! Convolutional feature extractor: residual bottleneck stages ending in
//! spatial feature maps and a global-average-pooled appearance vector,
//! plus landmark-driven patch extraction from the maps.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{roi_project, AlignedFace, LandmarkSet, RoiCell};
use crate::graph::{ceil_div_side, ConvGeom, Graph, Var};
use crate::nn::{batch_norm, Mode};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct StageConfig {
    pub mid_channels: usize,
    pub out_channels: usize,
    pub blocks: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct BackboneConfig {
    pub input_side: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    /// 3×3 stride-2 max pool after conv1.
    pub max_pool: bool,
    pub stages: Vec<StageConfig>,
    pub classes: usize,
    /// Image-space ROI side (pixels) for patch extraction.
    pub patch_m_pixels: f64,
}

impl BackboneConfig {
    /// Full-scale configuration: 140-px input, four bottleneck stages,
    /// 9×9×2048 final maps, 8630-way head.
    pub fn full_scale() -> Self {
        BackboneConfig {
            input_side: 140,
            conv1_channels: 64,
            conv1_kernel: 5,
            conv1_stride: 1,
            max_pool: true,
            stages: vec![
                StageConfig {
                    mid_channels: 64,
                    out_channels: 256,
                    blocks: 3,
                    stride: 1,
                },
                StageConfig {
                    mid_channels: 128,
                    out_channels: 512,
                    blocks: 4,
                    stride: 2,
                },
                StageConfig {
                    mid_channels: 256,
                    out_channels: 1024,
                    blocks: 23,
                    stride: 2,
                },
                StageConfig {
                    mid_channels: 512,
                    out_channels: 2048,
                    blocks: 3,
                    stride: 2,
                },
            ],
            classes: 8630,
            patch_m_pixels: 140.0 / 9.0,
        }
    }

    /// Desk-scale configuration: 64-px input, three single-block stages,
    /// 8×8×64 final maps. Trains in minutes on a CPU.
    pub fn desk(classes: usize) -> Self {
        BackboneConfig {
            input_side: 64,
            conv1_channels: 16,
            conv1_kernel: 5,
            conv1_stride: 2,
            max_pool: false,
            stages: vec![
                StageConfig {
                    mid_channels: 8,
                    out_channels: 16,
                    blocks: 1,
                    stride: 2,
                },
                StageConfig {
                    mid_channels: 8,
                    out_channels: 32,
                    blocks: 1,
                    stride: 2,
                },
                StageConfig {
                    mid_channels: 16,
                    out_channels: 64,
                    blocks: 1,
                    stride: 1,
                },
            ],
            classes,
            patch_m_pixels: 8.0,
        }
    }

    /// Per-stage output sides: conv1, optional pool, then each stage.
    pub fn stage_sides(&self) -> Vec<usize> {
        let mut sides = Vec::new();
        let mut side = ceil_div_side(self.input_side, self.conv1_stride);
        sides.push(side);
        if self.max_pool {
            side = ceil_div_side(side, 2);
        }
        for stage in &self.stages {
            side = ceil_div_side(side, stage.stride);
            sides.push(side);
        }
        sides
    }

    /// Side of the final feature maps.
    pub fn map_side(&self) -> usize {
        *self.stage_sides().last().expect("at least conv1")
    }

    pub fn final_channels(&self) -> usize {
        self.stages
            .last()
            .map(|s| s.out_channels)
            .unwrap_or(self.conv1_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.map_side() < 2 {
            return Err(Error::invalid("final map side must be >= 2"));
        }
        if self.final_channels() < 8 {
            return Err(Error::invalid("final channels must be >= 8"));
        }
        Ok(())
    }
}

/// Final-stage S×S×C feature maps for one face.
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    pub side: usize,
    pub channels: usize,
    /// [S, S, C] content.
    pub data: Tensor,
}

/// Channel-wise spatial mean of the feature maps.
#[derive(Debug, Clone)]
pub struct GlobalFeature(pub Vec<f64>);

/// One flattened m′×m′×C vector per landmark, in landmark order.
#[derive(Debug, Clone)]
pub struct LocalPatchSet {
    pub patches: Vec<Vec<f64>>,
    pub cells: Vec<RoiCell>,
}

impl LocalPatchSet {
    pub fn patch_width(&self) -> usize {
        self.patches.first().map(|p| p.len()).unwrap_or(0)
    }

    /// N×width matrix in landmark order.
    pub fn as_matrix(&self) -> Tensor {
        Tensor::from_rows(&self.patches)
    }
}

fn conv_bn_relu(
    g: &mut Graph,
    store: &mut ParamStore,
    prefix: &str,
    x: Var,
    geom: ConvGeom,
    out_channels: usize,
    relu: bool,
    mode: Mode,
) -> Result<Var> {
    let cols = g.im2col(x, geom);
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let z = g.matmul(cols, w);
    let bn = batch_norm(g, store, &format!("{prefix}.bn"), z, mode)?;
    let act = if relu { g.relu(bn) } else { bn };
    Ok(g.reshape(act, vec![geom.batch, geom.out_h, geom.out_w, out_channels]))
}

fn init_conv_bn(
    store: &mut ParamStore,
    prefix: &str,
    kernel: usize,
    in_channels: usize,
    out_channels: usize,
    rng: &mut ChaCha8Rng,
) {
    let fan_in = kernel * kernel * in_channels;
    store.init_uniform(
        &format!("{prefix}.weight"),
        vec![fan_in, out_channels],
        fan_in,
        out_channels,
        rng,
    );
    store.insert(
        &format!("{prefix}.bn.gamma"),
        Tensor::new(vec![1, out_channels], vec![1.0; out_channels]).expect("sized"),
        true,
    );
    store.insert(
        &format!("{prefix}.bn.beta"),
        Tensor::zeros(vec![1, out_channels]),
        true,
    );
    store.insert(
        &format!("{prefix}.bn.running_mean"),
        Tensor::zeros(vec![1, out_channels]),
        false,
    );
    store.insert(
        &format!("{prefix}.bn.running_var"),
        Tensor::new(vec![1, out_channels], vec![1.0; out_channels]).expect("sized"),
        false,
    );
}

pub fn init_backbone(store: &mut ParamStore, cfg: &BackboneConfig, rng: &mut ChaCha8Rng) {
    init_conv_bn(
        store,
        "backbone.conv1",
        cfg.conv1_kernel,
        3,
        cfg.conv1_channels,
        rng,
    );
    let mut in_ch = cfg.conv1_channels;
    for (s, stage) in cfg.stages.iter().enumerate() {
        for b in 0..stage.blocks {
            let p = format!("backbone.stage{s}.block{b}");
            let block_in = if b == 0 { in_ch } else { stage.out_channels };
            init_conv_bn(store, &format!("{p}.conv1"), 1, block_in, stage.mid_channels, rng);
            init_conv_bn(
                store,
                &format!("{p}.conv2"),
                3,
                stage.mid_channels,
                stage.mid_channels,
                rng,
            );
            init_conv_bn(
                store,
                &format!("{p}.conv3"),
                1,
                stage.mid_channels,
                stage.out_channels,
                rng,
            );
            let stride = if b == 0 { stage.stride } else { 1 };
            if block_in != stage.out_channels || stride != 1 {
                init_conv_bn(
                    store,
                    &format!("{p}.shortcut"),
                    1,
                    block_in,
                    stage.out_channels,
                    rng,
                );
            }
        }
        in_ch = stage.out_channels;
    }
    let c = cfg.final_channels();
    store.init_uniform("backbone.fc.weight", vec![c, cfg.classes], c, cfg.classes, rng);
    store.insert("backbone.fc.bias", Tensor::zeros(vec![1, cfg.classes]), true);
}

fn bottleneck(
    g: &mut Graph,
    store: &mut ParamStore,
    prefix: &str,
    x: Var,
    side: usize,
    in_channels: usize,
    stage: &StageConfig,
    stride: usize,
    mode: Mode,
) -> Result<(Var, usize)> {
    let batch = g.value(x).shape()[0];
    let geom1 = ConvGeom::same(batch, side, in_channels, 1, stride);
    let out_side = geom1.out_h;
    let a = conv_bn_relu(
        g,
        store,
        &format!("{prefix}.conv1"),
        x,
        geom1,
        stage.mid_channels,
        true,
        mode,
    )?;
    let geom2 = ConvGeom::same(batch, out_side, stage.mid_channels, 3, 1);
    let b = conv_bn_relu(
        g,
        store,
        &format!("{prefix}.conv2"),
        a,
        geom2,
        stage.mid_channels,
        true,
        mode,
    )?;
    let geom3 = ConvGeom::same(batch, out_side, stage.mid_channels, 1, 1);
    let c = conv_bn_relu(
        g,
        store,
        &format!("{prefix}.conv3"),
        b,
        geom3,
        stage.out_channels,
        false,
        mode,
    )?;
    let shortcut = if in_channels != stage.out_channels || stride != 1 {
        let geom_s = ConvGeom::same(batch, side, in_channels, 1, stride);
        conv_bn_relu(
            g,
            store,
            &format!("{prefix}.shortcut"),
            x,
            geom_s,
            stage.out_channels,
            false,
            mode,
        )?
    } else {
        x
    };
    let sum = g.add(c, shortcut);
    Ok((g.relu(sum), out_side))
}

/// Pack aligned faces into one [B, side, side, 3] input block.
pub fn faces_to_tensor(faces: &[&AlignedFace]) -> Result<Tensor> {
    let side = faces
        .first()
        .ok_or_else(|| Error::invalid("empty face batch"))?
        .side();
    let mut data = Vec::with_capacity(faces.len() * side * side * 3);
    for f in faces {
        if f.side() != side {
            return Err(Error::invalid("mixed face sizes in batch"));
        }
        data.extend_from_slice(&f.pixels.data);
    }
    Tensor::new(vec![faces.len(), side, side, 3], data)
}

/// Run the backbone over a batch: returns the final feature maps
/// [B, S, S, C] and the global feature [B, C] (exact channel-wise
/// spatial mean).
pub fn backbone_forward(
    g: &mut Graph,
    store: &mut ParamStore,
    cfg: &BackboneConfig,
    batch: Var,
    mode: Mode,
) -> Result<(Var, Var)> {
    cfg.validate()?;
    let shape = g.value(batch).shape().to_vec();
    if shape.len() != 4 || shape[1] != cfg.input_side || shape[2] != cfg.input_side {
        return Err(Error::invalid(format!(
            "backbone expects [B, {0}, {0}, 3] input, got {shape:?}",
            cfg.input_side
        )));
    }
    let b = shape[0];
    let geom1 = ConvGeom::same(b, cfg.input_side, 3, cfg.conv1_kernel, cfg.conv1_stride);
    let mut x = conv_bn_relu(
        g,
        store,
        "backbone.conv1",
        batch,
        geom1,
        cfg.conv1_channels,
        true,
        mode,
    )?;
    let mut side = geom1.out_h;
    if cfg.max_pool {
        let geom = ConvGeom::same(b, side, cfg.conv1_channels, 3, 2);
        x = g.max_pool(x, geom);
        side = geom.out_h;
    }
    let mut in_ch = cfg.conv1_channels;
    for (s, stage) in cfg.stages.iter().enumerate() {
        for blk in 0..stage.blocks {
            let stride = if blk == 0 { stage.stride } else { 1 };
            let (nx, nside) = bottleneck(
                g,
                store,
                &format!("backbone.stage{s}.block{blk}"),
                x,
                side,
                in_ch,
                stage,
                stride,
                mode,
            )?;
            x = nx;
            side = nside;
            in_ch = stage.out_channels;
        }
    }
    let gap = g.mean_spatial(x);
    Ok((x, gap))
}

/// Classifier logits from the global feature.
pub fn backbone_logits(
    g: &mut Graph,
    store: &ParamStore,
    gap: Var,
) -> Result<Var> {
    let w = g.param(store, "backbone.fc.weight")?;
    let bias = g.param(store, "backbone.fc.bias")?;
    let z = g.matmul(gap, w);
    Ok(g.add_bias(z, bias))
}

/// Row indices into the (S·S, C) flattened map for one landmark's ROI.
fn roi_rows(cell: &RoiCell, side: usize) -> Vec<usize> {
    let extent = cell.extent.min(side);
    let r0 = cell.row.min(side - extent);
    let c0 = cell.col.min(side - extent);
    let mut rows = Vec::with_capacity(extent * extent);
    for dr in 0..extent {
        for dc in 0..extent {
            rows.push((r0 + dr) * side + (c0 + dc));
        }
    }
    rows
}

/// Copy the m′×m′×C block under each landmark's projected cell,
/// flattened in (row, col, channel) order.
pub fn extract_patches(
    maps: &FeatureMaps,
    landmarks: &LandmarkSet,
    image_side: usize,
    m_pixels: f64,
) -> LocalPatchSet {
    let mut patches = Vec::with_capacity(landmarks.n_points());
    let mut cells = Vec::with_capacity(landmarks.n_points());
    for &p in landmarks.points() {
        let cell = roi_project(p, image_side, maps.side, m_pixels);
        let mut patch = Vec::with_capacity(cell.extent * cell.extent * maps.channels);
        for row in roi_rows(&cell, maps.side) {
            patch.extend_from_slice(maps.data.row(row));
        }
        patches.push(patch);
        cells.push(cell);
    }
    LocalPatchSet { patches, cells }
}

/// In-graph patch extraction for a single face's maps [1, S, S, C];
/// returns an N×(m′²·C) matrix node so gradients flow back to the maps.
pub fn extract_patches_graph(
    g: &mut Graph,
    maps: Var,
    landmarks: &LandmarkSet,
    image_side: usize,
    m_pixels: f64,
) -> Result<Var> {
    let shape = g.value(maps).shape().to_vec();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != shape[2] {
        return Err(Error::invalid(format!(
            "expected [1, S, S, C] maps, got {shape:?}"
        )));
    }
    let (side, channels) = (shape[1], shape[3]);
    let flat = g.reshape(maps, vec![side * side, channels]);
    let mut indices = Vec::new();
    let mut extent = 0;
    for &p in landmarks.points() {
        let cell = roi_project(p, image_side, side, m_pixels);
        extent = cell.extent.min(side);
        indices.extend(roi_rows(&cell, side));
    }
    let gathered = g.gather_rows(flat, &indices);
    Ok(g.reshape(
        gathered,
        vec![landmarks.n_points(), extent * extent * channels],
    ))
}
