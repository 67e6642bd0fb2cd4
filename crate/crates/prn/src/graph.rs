//! Reverse-mode differentiation over a flat tape.
//!
//! Every forward op appends one node; `backward` walks the tape in
//! reverse creation order, which fixes the gradient accumulation order
//! and makes runs bit-reproducible.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Output side for a stride-`s` stage with same-style padding.
pub fn ceil_div_side(side: usize, stride: usize) -> usize {
    side.div_ceil(stride)
}

impl ConvGeom {
    /// Same-style padding: output side = ceil(input side / stride).
    pub fn same(batch: usize, side: usize, channels: usize, kernel: usize, stride: usize) -> Self {
        let out = ceil_div_side(side, stride);
        let pad_total = ((out - 1) * stride + kernel).saturating_sub(side);
        ConvGeom {
            batch,
            in_h: side,
            in_w: side,
            channels,
            kernel,
            stride,
            pad_top: pad_total / 2,
            pad_left: pad_total / 2,
            out_h: out,
            out_w: out,
        }
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    RsubConst(Var),
    Matmul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sqrt(Var),
    Div(Var, Var),
    SumAll(Var),
    BroadcastRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
        reduction: Reduction,
    },
    Im2Col(Var, ConvGeom),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanSpatial(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(Var, String)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.all_finite(), "non-finite value in forward pass");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Bind a stored parameter as a leaf; its gradient flows back to the
    /// store via `write_grads`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Leaf);
        self.bindings.push((v, name.to_string()));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    /// `a (R×C) + bias (1×C)` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let cols = av.cols();
        assert_eq!(bv.len(), cols, "bias width mismatch");
        let mut out = av.clone();
        for r in 0..av.rows() {
            for c in 0..cols {
                let v = out.at(r, c) + bv.data()[c];
                out.set(r, c, v);
            }
        }
        self.push(out, Op::AddBias(a, bias))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.nodes[a.0].value.map(|x| c * x);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let t = self.nodes[a.0].value.map(|x| x + c);
        self.push(t, Op::AddConst(a))
    }

    /// `c - a`.
    pub fn rsub_const(&mut self, c: f64, a: Var) -> Var {
        let t = self.nodes[a.0].value.map(|x| c - x);
        self.push(t, Op::RsubConst(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let t = matmul(&self.nodes[a.0].value, &self.nodes[b.0].value);
        self.push(t, Op::Matmul(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.map(|x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.map(f64::sqrt);
        self.push(t, Op::Sqrt(a))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let t = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x / y);
        self.push(t, Op::Div(a, b))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Tile a 1×C row to R×C.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.rows(), 1, "broadcast_rows expects a single row");
        let cols = av.cols();
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend_from_slice(av.data());
        }
        let t = Tensor::new(vec![rows, cols], data).expect("sized");
        self.push(t, Op::BroadcastRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.rows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
        let mut out = Tensor::zeros(vec![rows, total]);
        let mut off = 0;
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            let c = pv.cols();
            for r in 0..rows {
                out.data_mut()[r * total + off..r * total + off + c]
                    .copy_from_slice(pv.row(r));
            }
            off += c;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = &self.nodes[a.0].value;
        let (rows, cols) = (av.rows(), av.cols());
        assert!(start + len <= cols, "slice_cols out of range");
        let mut out = Tensor::zeros(vec![rows, len]);
        for r in 0..rows {
            out.data_mut()[r * len..(r + 1) * len]
                .copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let av = &self.nodes[a.0].value;
        let cols = av.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(av.row(i));
        }
        let t = Tensor::new(vec![indices.len(), cols], data).expect("sized");
        self.push(t, Op::GatherRows(a, indices.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let t = self.nodes[a.0]
            .value
            .clone()
            .reshape(shape)
            .expect("reshape must preserve element count");
        self.push(t, Op::Reshape(a))
    }

    /// Batch normalization over rows of an R×C matrix, batch statistics.
    /// Returns (output, batch_mean, batch_var) so callers can maintain
    /// running statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, Vec<f64>, Vec<f64>) {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                mean[c] += xv.at(r, c);
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                let d = xv.at(r, c) - mean[c];
                var[c] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(vec![rows, cols]);
        for r in 0..rows {
            for c in 0..cols {
                xhat.set(r, c, (xv.at(r, c) - mean[c]) * inv_std[c]);
            }
        }
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let mut out = Tensor::zeros(vec![rows, cols]);
        for r in 0..rows {
            for c in 0..cols {
                out.set(r, c, xhat.at(r, c) * gv.data()[c] + bv.data()[c]);
            }
        }
        let v = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        (v, mean, var)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Var {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = (xv.rows(), xv.cols());
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let mut out = Tensor::zeros(vec![rows, cols]);
        for r in 0..rows {
            for c in 0..cols {
                out.set(
                    r,
                    c,
                    (xv.at(r, c) - mean[c]) * inv_std[c] * gv.data()[c] + bv.data()[c],
                );
            }
        }
        self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
        )
    }

    /// Numerically stable softmax cross-entropy over an R×K logit matrix.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        let (rows, k) = (lv.rows(), lv.cols());
        if labels.len() != rows {
            return Err(Error::invalid(format!(
                "{} labels for {} logit rows",
                labels.len(),
                rows
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut probs = Tensor::zeros(vec![rows, k]);
        let mut total = 0.0;
        for r in 0..rows {
            let row = lv.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..k {
                let e = (row[c] - m).exp();
                probs.set(r, c, e);
                z += e;
            }
            for c in 0..k {
                let p = probs.at(r, c) / z;
                probs.set(r, c, p);
            }
            total += -(probs.at(r, labels[r]).max(f64::MIN_POSITIVE)).ln();
        }
        let value = match reduction {
            Reduction::Mean => total / rows as f64,
            Reduction::Sum => total,
        };
        Ok(self.push(
            Tensor::scalar(value),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                reduction,
            },
        ))
    }

    /// Unfold NHWC input into a (B·OH·OW)×(K·K·C) patch matrix.
    /// Out-of-frame samples read as 0.
    pub fn im2col(&mut self, x: Var, geom: ConvGeom) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(
            xv.len(),
            geom.batch * geom.in_h * geom.in_w * geom.channels,
            "im2col input size mismatch"
        );
        let k = geom.kernel;
        let cols = k * k * geom.channels;
        let rows = geom.batch * geom.out_h * geom.out_w;
        let mut out = Tensor::zeros(vec![rows, cols]);
        let xd = xv.data();
        let (h, w, ch) = (geom.in_h, geom.in_w, geom.channels);
        let mut row = 0;
        for b in 0..geom.batch {
            for oy in 0..geom.out_h {
                for ox in 0..geom.out_w {
                    let base = row * cols;
                    for ky in 0..k {
                        let iy = (oy * geom.stride + ky) as isize - geom.pad_top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * geom.stride + kx) as isize - geom.pad_left as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = ((b * h + iy as usize) * w + ix as usize) * ch;
                            let dst = base + (ky * k + kx) * ch;
                            out.data_mut()[dst..dst + ch]
                                .copy_from_slice(&xd[src..src + ch]);
                        }
                    }
                    row += 1;
                }
            }
        }
        self.push(out, Op::Im2Col(x, geom))
    }

    /// Max pooling over NHWC input with same-style padding; padded cells
    /// are excluded from the window.
    pub fn max_pool(&mut self, x: Var, geom: ConvGeom) -> Var {
        let xv = &self.nodes[x.0].value;
        let (h, w, ch) = (geom.in_h, geom.in_w, geom.channels);
        let k = geom.kernel;
        let out_len = geom.batch * geom.out_h * geom.out_w * ch;
        let mut out = Tensor::zeros(vec![geom.batch, geom.out_h, geom.out_w, ch]);
        let mut argmax = vec![0usize; out_len];
        let xd = xv.data();
        let mut oi = 0;
        for b in 0..geom.batch {
            for oy in 0..geom.out_h {
                for ox in 0..geom.out_w {
                    for c in 0..ch {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for ky in 0..k {
                            let iy = (oy * geom.stride + ky) as isize - geom.pad_top as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix =
                                    (ox * geom.stride + kx) as isize - geom.pad_left as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let idx = ((b * h + iy as usize) * w + ix as usize) * ch + c;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out.data_mut()[oi] = best;
                        argmax[oi] = best_idx;
                        oi += 1;
                    }
                }
            }
        }
        self.push(out, Op::MaxPool { x, argmax })
    }

    /// Channel-wise spatial mean of an NHWC block → B×C.
    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let shape = xv.shape().to_vec();
        assert_eq!(shape.len(), 4, "mean_spatial expects NHWC");
        let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let mut out = Tensor::zeros(vec![b, c]);
        let xd = xv.data();
        for bi in 0..b {
            for s in 0..h * w {
                let base = (bi * h * w + s) * c;
                for ci in 0..c {
                    out.data_mut()[bi * c + ci] += xd[base + ci];
                }
            }
        }
        let inv = 1.0 / (h * w) as f64;
        out.data_mut().iter_mut().for_each(|v| *v *= inv);
        self.push(out, Op::MeanSpatial(x))
    }

    /// Backpropagate from a scalar root; gradients of bound parameters
    /// are accumulated into `store` afterwards via `write_grads`.
    pub fn backward(&self, root: Var) -> Result<Vec<Option<Tensor>>> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::State("backward root must be scalar".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Run backward and add parameter gradients into the store.
    pub fn backward_params(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(root)?;
        for (var, name) in &self.bindings {
            if let Some(g) = &grads[var.0] {
                store.get_mut(name)?.grad.add_scaled(g, 1.0);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        fn acc(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], add: impl FnOnce(&mut Tensor)) {
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.to_vec()));
            add(slot);
        }
        let shape_of = |g: &Graph, v: Var| g.nodes[v.0].value.shape().to_vec();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                let sa = shape_of(self, a);
                let sb = shape_of(self, b);
                acc(grads, a, &sa, |t| t.add_scaled(g, 1.0));
                acc(grads, b, &sb, |t| t.add_scaled(g, 1.0));
            }
            Op::AddBias(a, bias) => {
                let (a, bias) = (*a, *bias);
                let sa = shape_of(self, a);
                let sb = shape_of(self, bias);
                acc(grads, a, &sa, |t| t.add_scaled(g, 1.0));
                let cols = g.cols();
                let mut colsum = vec![0.0; cols];
                for r in 0..g.rows() {
                    for c in 0..cols {
                        colsum[c] += g.at(r, c);
                    }
                }
                acc(grads, bias, &sb, |t| {
                    for (d, s) in t.data_mut().iter_mut().zip(&colsum) {
                        *d += s;
                    }
                });
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                let sa = shape_of(self, a);
                let sb = shape_of(self, b);
                acc(grads, a, &sa, |t| t.add_scaled(g, 1.0));
                acc(grads, b, &sb, |t| t.add_scaled(g, -1.0));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g.zip(&self.nodes[b.0].value, |x, y| x * y);
                let gb = g.zip(&self.nodes[a.0].value, |x, y| x * y);
                let sa = shape_of(self, a);
                let sb = shape_of(self, b);
                acc(grads, a, &sa, |t| t.add_scaled(&ga, 1.0));
                acc(grads, b, &sb, |t| t.add_scaled(&gb, 1.0));
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                let sa = shape_of(self, a);
                acc(grads, a, &sa, |t| t.add_scaled(g, c));
            }
            Op::AddConst(a) => {
                let a = *a;
                let sa = shape_of(self, a);
                acc(grads, a, &sa, |t| t.add_scaled(g, 1.0));
            }
            Op::RsubConst(a) => {
                let a = *a;
                let sa = shape_of(self, a);
                acc(grads, a, &sa, |t| t.add_scaled(g, -1.0));
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = matmul_nt(g, &self.nodes[b.0].value);
                let gb = matmul_tn(&self.nodes[a.0].value, g);
                let sa = shape_of(self, a);
                let sb = shape_of(self, b);
                acc(grads, a, &sa, |t| {
                    for (d, s) in t.data_mut().iter_mut().zip(ga.data()) {
                        *d += s;
                    }
                });
                acc(grads, b, &sb, |t| {
                    for (d, s) in t.data_mut().iter_mut().zip(gb.data()) {
                        *d += s;
                    }
                });
            }
            Op::Relu(a) => {
                let a = *a;
                let ga = g.zip(&self.nodes[a.0].value, |gv, x| if x > 0.0 { gv } else { 0.0 });
                let sa = shape_of(self, a);
                acc(grads, a, &sa, |t| t.add_scaled(&ga, 1.0));
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let ga = g.zip(&self.nodes[i].value, |gv, y| gv * y * (1.0 - y));
                let sa = shape_of(self, a);
                acc(grads, a, &sa, |t| t.add_scaled(&ga, 1.0));
            }
            Op::Tanh(a) => {
                let a = *a;
                let ga = g.zip(&self.nodes[i].value, |gv, y| gv * (1.0 - y * y));
                let sa = shape_of(self, a);
                acc(grads, a, &sa, |t| t.add_scaled(&ga, 1.0));
            }
            Op::Sqrt(a) => {
                let a = *a;
                // subgradient 0 at the origin
                let ga = g.zip(&self.nodes[i].value, |gv, y| {
                    if y == 0.0 {
                        0.0
                    } else {
                        gv * 0.5 / y
                    }
                });
                let sa = shape_of(self, a);
                acc(grads, a, &sa, |t| t.add_scaled(&ga, 1.0));
            }
            Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g.zip(&self.nodes[b.0].value, |gv, y| gv / y);
                let gb_part = g.zip(&self.nodes[i].value, |gv, q| gv * q);
                let gb = gb_part.zip(&self.nodes[b.0].value, |x, y| -x / y);
                let sa = shape_of(self, a);
                let sb = shape_of(self, b);
                acc(grads, a, &sa, |t| t.add_scaled(&ga, 1.0));
                acc(grads, b, &sb, |t| t.add_scaled(&gb, 1.0));
            }
            Op::SumAll(a) => {
                let a = *a;
                let gv = g.item();
                let sa = shape_of(self, a);
                acc(grads, a, &sa, |t| {
                    t.data_mut().iter_mut().for_each(|d| *d += gv);
                });
            }
            Op::BroadcastRows(a) => {
                let a = *a;
                let cols = g.cols();
                let mut rowsum = vec![0.0; cols];
                for r in 0..g.rows() {
                    for c in 0..cols {
                        rowsum[c] += g.at(r, c);
                    }
                }
                let sa = shape_of(self, a);
                acc(grads, a, &sa, |t| {
                    for (d, s) in t.data_mut().iter_mut().zip(&rowsum) {
                        *d += s;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let rows = g.rows();
                let total = g.cols();
                let mut off = 0;
                for p in parts {
                    let sp = shape_of(self, p);
                    let c: usize = sp.iter().skip(1).product();
                    acc(grads, p, &sp, |t| {
                        for r in 0..rows {
                            for j in 0..c {
                                t.data_mut()[r * c + j] += g.data()[r * total + off + j];
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (a, start) = (*a, *start);
                let sa = shape_of(self, a);
                let acols: usize = sa.iter().skip(1).product();
                let len = g.cols();
                acc(grads, a, &sa, |t| {
                    for r in 0..g.rows() {
                        for j in 0..len {
                            t.data_mut()[r * acols + start + j] += g.data()[r * len + j];
                        }
                    }
                });
            }
            Op::GatherRows(a, indices) => {
                let a = *a;
                let indices = indices.clone();
                let sa = shape_of(self, a);
                let cols: usize = sa.iter().skip(1).product();
                acc(grads, a, &sa, |t| {
                    for (k, &src) in indices.iter().enumerate() {
                        for j in 0..cols {
                            t.data_mut()[src * cols + j] += g.data()[k * cols + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                let a = *a;
                let sa = shape_of(self, a);
                acc(grads, a, &sa, |t| {
                    for (d, s) in t.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let xhat = xhat.clone();
                let inv_std = inv_std.clone();
                let (rows, cols) = (g.rows(), g.cols());
                let gv = self.nodes[gamma.0].value.data().to_vec();
                let mut dbeta = vec![0.0; cols];
                let mut dgamma = vec![0.0; cols];
                let mut sum_dxhat = vec![0.0; cols];
                let mut sum_dxhat_xhat = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let gg = g.at(r, c);
                        dbeta[c] += gg;
                        dgamma[c] += gg * xhat.at(r, c);
                        let dxh = gg * gv[c];
                        sum_dxhat[c] += dxh;
                        sum_dxhat_xhat[c] += dxh * xhat.at(r, c);
                    }
                }
                let n = rows as f64;
                let sx = shape_of(self, x);
                acc(grads, x, &sx, |t| {
                    for r in 0..rows {
                        for c in 0..cols {
                            let dxh = g.at(r, c) * gv[c];
                            let dx = inv_std[c] / n
                                * (n * dxh - sum_dxhat[c] - xhat.at(r, c) * sum_dxhat_xhat[c]);
                            t.data_mut()[r * cols + c] += dx;
                        }
                    }
                });
                let sg = shape_of(self, gamma);
                acc(grads, gamma, &sg, |t| {
                    for (d, s) in t.data_mut().iter_mut().zip(&dgamma) {
                        *d += s;
                    }
                });
                let sb = shape_of(self, beta);
                acc(grads, beta, &sb, |t| {
                    for (d, s) in t.data_mut().iter_mut().zip(&dbeta) {
                        *d += s;
                    }
                });
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let mean = mean.clone();
                let inv_std = inv_std.clone();
                let (rows, cols) = (g.rows(), g.cols());
                let gv = self.nodes[gamma.0].value.data().to_vec();
                let xv = self.nodes[x.0].value.clone();
                let mut dbeta = vec![0.0; cols];
                let mut dgamma = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let gg = g.at(r, c);
                        dbeta[c] += gg;
                        dgamma[c] += gg * (xv.at(r, c) - mean[c]) * inv_std[c];
                    }
                }
                let sx = shape_of(self, x);
                acc(grads, x, &sx, |t| {
                    for r in 0..rows {
                        for c in 0..cols {
                            t.data_mut()[r * cols + c] += g.at(r, c) * gv[c] * inv_std[c];
                        }
                    }
                });
                let sg = shape_of(self, gamma);
                acc(grads, gamma, &sg, |t| {
                    for (d, s) in t.data_mut().iter_mut().zip(&dgamma) {
                        *d += s;
                    }
                });
                let sb = shape_of(self, beta);
                acc(grads, beta, &sb, |t| {
                    for (d, s) in t.data_mut().iter_mut().zip(&dbeta) {
                        *d += s;
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
                reduction,
            } => {
                let logits = *logits;
                let labels = labels.clone();
                let probs = probs.clone();
                let scale = match reduction {
                    Reduction::Mean => g.item() / probs.rows() as f64,
                    Reduction::Sum => g.item(),
                };
                let sl = shape_of(self, logits);
                let k = probs.cols();
                acc(grads, logits, &sl, |t| {
                    for r in 0..probs.rows() {
                        for c in 0..k {
                            let onehot = if labels[r] == c { 1.0 } else { 0.0 };
                            t.data_mut()[r * k + c] += scale * (probs.at(r, c) - onehot);
                        }
                    }
                });
            }
            Op::Im2Col(x, geom) => {
                let x = *x;
                let geom = *geom;
                let sx = shape_of(self, x);
                let k = geom.kernel;
                let cols = k * k * geom.channels;
                let (h, w, ch) = (geom.in_h, geom.in_w, geom.channels);
                acc(grads, x, &sx, |t| {
                    let mut row = 0;
                    for b in 0..geom.batch {
                        for oy in 0..geom.out_h {
                            for ox in 0..geom.out_w {
                                let base = row * cols;
                                for ky in 0..k {
                                    let iy = (oy * geom.stride + ky) as isize
                                        - geom.pad_top as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * geom.stride + kx) as isize
                                            - geom.pad_left as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let dst =
                                            ((b * h + iy as usize) * w + ix as usize) * ch;
                                        let src = base + (ky * k + kx) * ch;
                                        for c in 0..ch {
                                            t.data_mut()[dst + c] += g.data()[src + c];
                                        }
                                    }
                                }
                                row += 1;
                            }
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => {
                let x = *x;
                let argmax = argmax.clone();
                let sx = shape_of(self, x);
                acc(grads, x, &sx, |t| {
                    for (oi, &src) in argmax.iter().enumerate() {
                        t.data_mut()[src] += g.data()[oi];
                    }
                });
            }
            Op::MeanSpatial(x) => {
                let x = *x;
                let sx = shape_of(self, x);
                let (b, h, w, c) = (sx[0], sx[1], sx[2], sx[3]);
                let inv = 1.0 / (h * w) as f64;
                acc(grads, x, &sx, |t| {
                    for bi in 0..b {
                        for s in 0..h * w {
                            let base = (bi * h * w + s) * c;
                            for ci in 0..c {
                                t.data_mut()[base + ci] += g.data()[bi * c + ci] * inv;
                            }
                        }
                    }
                });
            }
        }
    }
}
