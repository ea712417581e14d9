use super::kernels::{self, ConvGeometry, ConvPlan, PoolGeometry};
use super::{strides_of, ParamId, ParamStore, Tensor};
use crate::error::{config_err, shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running averages.
    Train,
    /// Normalize with the stored running averages.
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        plan: ConvPlan,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        plan: ConvPlan,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Per-channel centre and inverse scale used to normalize `x`.
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
        batch: usize,
        spatial: usize,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
        spatial: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Stack {
        inputs: Vec<Var>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    WeightedSum {
        a: Var,
        alpha: f64,
        b: Var,
        beta: f64,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<f64>,
    },
    WeightedSquaredError {
        pred: Var,
        target: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Clamp applied to probabilities inside the cross-entropy loss.
pub const PROB_EPS: f64 = 1e-12;

/// Dynamic reverse-mode tape. Built fresh for every forward pass; nodes are
/// appended in evaluation order, so the node list is topologically sorted.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on leaf or parameter `v` by the last
    /// [`backward`](Self::backward); intermediate gradients are dropped.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref()).map(|g| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone())
                .expect("gradient shape mirrors value")
        })
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable (or buffer) tensor from `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let rg = store.is_trainable(id);
        self.push(store.value(id).clone(), rg, Op::Param(id))
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let plan = ConvPlan::new(self.shape(x), self.shape(w), &geom)?;
        self.check_bias(b, plan.c_out)?;
        let mut y = plan.apply(self.value(x).data(), self.value(w).data());
        if let Some(b) = b {
            kernels::add_channel_bias(&mut y, self.value(b).data(), plan.batch, plan.out_spatial());
        }
        let out = Tensor::new(plan.out_shape(), y)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, rg, Op::Conv { x, w, b, plan }))
    }

    /// 2D convolution over `[N, C, H, W]` with weight `[C_out, C_in, kH, kW]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err(format!("conv2d expects 4D input/weight, got {xs:?} and {ws:?}"));
        }
        let x5 = self.reshape(x, &[xs[0], xs[1], 1, xs[2], xs[3]])?;
        let w5 = self.reshape(w, &[ws[0], ws[1], 1, ws[2], ws[3]])?;
        let y5 = self.conv3d(x5, w5, b, ConvGeometry::planar(stride, padding))?;
        let ys = self.shape(y5).to_vec();
        self.reshape(y5, &[ys[0], ys[1], ys[3], ys[4]])
    }

    /// Transposed 2D convolution over `[N, C_in, H, W]` with weight
    /// `[C_in, C_out, kH, kW]`; output side `(d - 1)s - 2p + k + output_padding`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err(format!(
                "conv_transpose2d expects 4D input/weight, got {xs:?} and {ws:?}"
            ));
        }
        if ws[0] != xs[1] {
            return shape_err(format!(
                "weight expects {} input channels, input has {}",
                ws[0], xs[1]
            ));
        }
        if stride == 0 || output_padding >= stride {
            return config_err(format!(
                "output_padding {output_padding} must be smaller than stride {stride}"
            ));
        }
        let mut out_hw = [0; 2];
        for axis in 0..2 {
            out_hw[axis] = kernels::conv_transpose_out_len(
                xs[2 + axis],
                ws[2 + axis],
                stride,
                padding,
                output_padding,
            )
            .ok_or_else(|| {
                Error::Config(format!(
                    "transposed convolution of {:?} with kernel {:?}, stride {stride}, padding {padding} has no positive output size",
                    &xs[2..],
                    &ws[2..]
                ))
            })?;
        }
        // The matching forward convolution maps the output space back onto the input.
        let plan = ConvPlan::new(
            &[xs[0], ws[1], 1, out_hw[0], out_hw[1]],
            &[ws[0], ws[1], 1, ws[2], ws[3]],
            &ConvGeometry::planar(stride, padding),
        )?;
        if plan.out_dims[1..] != xs[2..] {
            return config_err("transposed convolution geometry is not invertible");
        }
        self.check_bias(b, ws[1])?;
        let mut y = plan.input_grad(self.value(w).data(), self.value(x).data());
        if let Some(b) = b {
            kernels::add_channel_bias(&mut y, self.value(b).data(), xs[0], plan.in_spatial());
        }
        let out = Tensor::new(vec![xs[0], ws[1], out_hw[0], out_hw[1]], y)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, rg, Op::ConvTranspose { x, w, b, plan }))
    }

    fn check_bias(&self, b: Option<Var>, channels: usize) -> Result<()> {
        match b {
            Some(b) if self.shape(b) != [channels] => shape_err(format!(
                "bias shape {:?} does not match {channels} output channels",
                self.shape(b)
            )),
            _ => Ok(()),
        }
    }

    /// Per-channel batch normalization over `[N, C, ...]`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor,
        running_var: &mut Tensor,
        mode: BatchNormMode,
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return shape_err(format!("batch_norm expects [N, C, ...], got {xs:?}"));
        }
        let (batch, channels) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        for (what, s) in [
            ("gamma", self.shape(gamma)),
            ("beta", self.shape(beta)),
            ("running mean", running_mean.shape()),
            ("running var", running_var.shape()),
        ] {
            if s != [channels] {
                return shape_err(format!("batch_norm {what} shape {s:?}, expected [{channels}]"));
            }
        }
        let train = mode == BatchNormMode::Train;
        if train && batch < 2 {
            return config_err("batch_norm in train mode needs a batch of at least 2");
        }
        let xv = self.value(x).data();
        let (mean, var) = if train {
            kernels::channel_moments(xv, batch, channels, spatial)
        } else {
            (running_mean.data().to_vec(), running_var.data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut y = vec![0.0; xv.len()];
        for (plane, (src, dst)) in xv.chunks_exact(spatial).zip(y.chunks_exact_mut(spatial)).enumerate() {
            let c = plane % channels;
            let (scale, shift) = (g[c] * inv_std[c], bt[c] - g[c] * inv_std[c] * mean[c]);
            dst.iter_mut().zip(src).for_each(|(d, &v)| *d = scale * v + shift);
        }
        if train {
            let m = (batch * spatial) as f64;
            let unbiased = m / (m - 1.0);
            for c in 0..channels {
                let rm = &mut running_mean.data_mut()[c];
                *rm = (1.0 - momentum) * *rm + momentum * mean[c];
                let rv = &mut running_var.data_mut()[c];
                *rv = (1.0 - momentum) * *rv + momentum * var[c] * unbiased;
            }
        }
        let out = Tensor::new(xs, y)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
                batch,
                spatial,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect(),
        )
        .expect("same shape");
        let rg = self.rg(x);
        self.push(out, rg, Op::Relu { x })
    }

    /// Max pooling over the trailing `H, W` axes of a 4D tensor.
    pub fn max_pool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return shape_err(format!("max_pool2d expects [N, C, H, W], got {xs:?}"));
        }
        let view = [xs[0], xs[1], 1, xs[2], xs[3]];
        let (y, argmax, ys) =
            kernels::max_pool_forward(self.value(x).data(), &view, &PoolGeometry::planar(window, stride))?;
        let out = Tensor::new(vec![ys[0], ys[1], ys[3], ys[4]], y)?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::MaxPool { x, argmax }))
    }

    /// Max pooling over the trailing `D, H, W` axes of a 5D tensor.
    pub fn max_pool3d(&mut self, x: Var, window: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 5 {
            return shape_err(format!("max_pool3d expects [N, C, D, H, W], got {xs:?}"));
        }
        let (y, argmax, ys) =
            kernels::max_pool_forward(self.value(x).data(), &xs, &PoolGeometry { window, stride })?;
        let out = Tensor::new(ys, y)?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::MaxPool { x, argmax }))
    }

    /// Adaptive average pooling to a 1x1 map: `[N, C, H, W] -> [N, C, 1, 1]`.
    pub fn adaptive_avg_pool2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return shape_err(format!("adaptive_avg_pool2d expects [N, C, H, W], got {xs:?}"));
        }
        let spatial = xs[2] * xs[3];
        let y: Vec<f64> = self
            .value(x)
            .data()
            .chunks(spatial)
            .map(|c| c.iter().sum::<f64>() / spatial as f64)
            .collect();
        let out = Tensor::new(vec![xs[0], xs[1], 1, 1], y)?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::GlobalAvgPool { x, spatial }))
    }

    /// `x [N, in] * w[out, in]^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err(format!("linear: input {xs:?} incompatible with weight {ws:?}"));
        }
        self.check_bias(b, ws[0])?;
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let mut y = vec![0.0; n * fout];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(fout) {
                row.copy_from_slice(bv);
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        kernels::gemm(
            n,
            fin,
            fout,
            self.value(x).data(),
            fin,
            1,
            self.value(w).data(),
            1,
            fin,
            &mut y,
            fout,
            1,
            beta,
        );
        let out = Tensor::new(vec![n, fout], y)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, rg, Op::Linear { x, w, b }))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return shape_err(format!("softmax axis {axis} out of range for {xs:?}"));
        }
        let outer: usize = xs[..axis].iter().product();
        let len = xs[axis];
        let inner: usize = xs[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut y = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| xv[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (xv[at(k)] - max).exp();
                    y[at(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    y[at(k)] /= z;
                }
            }
        }
        let out = Tensor::new(xs, y)?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::Softmax { x, outer, len, inner }))
    }

    /// Concatenates tensors along an existing `axis`; all other dimensions must agree.
    pub fn stack(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("stack of zero tensors");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err(format!("stack axis {axis} out of range for {base:?}"));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            let conforms = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !conforms {
                return shape_err(format!("stack: {s:?} does not conform to {base:?} off axis {axis}"));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let chunks: Vec<usize> = inputs.iter().map(|&v| self.shape(v)[axis] * inner).collect();
        let total: usize = chunks.iter().sum();
        let mut y = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&v, &chunk) in inputs.iter().zip(&chunks) {
                y.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(out_shape, y)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            out,
            rg,
            Op::Stack {
                inputs: inputs.to_vec(),
                outer,
                chunks,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::Reshape { x }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::Sum { x })
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Add { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * factor).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, rg, Op::Scale { x, factor })
    }

    /// `alpha * a + beta * b` for same-shaped `a`, `b`.
    pub fn weighted_sum(&mut self, a: Var, alpha: f64, b: Var, beta: f64) -> Result<Var> {
        self.same_shape(a, b, "weighted_sum")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| alpha * x + beta * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::WeightedSum { a, alpha, b, beta }))
    }

    /// Mean binary cross-entropy of the positive-class column of `probs [m, 2]`.
    /// Log arguments are floored at `PROB_EPS`, so a saturated probability
    /// costs at most `-ln(PROB_EPS)` and an exact match costs exactly 0.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let ps = self.shape(probs).to_vec();
        if ps.len() != 2 || ps[1] != 2 || ps[0] != labels.len() {
            return shape_err(format!(
                "cross_entropy expects probs [m, 2] with m labels, got {ps:?} and {} labels",
                labels.len()
            ));
        }
        let m = ps[0] as f64;
        let pv = self.value(probs).data();
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let p = pv[2 * i + 1];
                y * p.max(PROB_EPS).ln() + (1.0 - y) * (1.0 - p).max(PROB_EPS).ln()
            })
            .sum::<f64>()
            / m;
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// `(1/m) sum_k sum_ij w_ij (pred_kij - target_kij)^2` where the leading
    /// axis of `pred` is the batch and `weights` covers one sample.
    pub fn weighted_squared_error(&mut self, pred: Var, target: &Tensor, weights: &[f64]) -> Result<Var> {
        let ps = self.shape(pred).to_vec();
        if target.numel() != self.value(pred).numel() || ps.is_empty() {
            return shape_err(format!(
                "weighted_squared_error: prediction {ps:?} vs target {:?}",
                target.shape()
            ));
        }
        let per_sample = self.value(pred).numel() / ps[0];
        if per_sample != weights.len() {
            return shape_err(format!(
                "weight map holds {} values, each sample has {per_sample}",
                weights.len()
            ));
        }
        let m = ps[0] as f64;
        let pv = self.value(pred).data();
        let mut total = 0.0;
        for (p, t) in pv.chunks(per_sample).zip(target.data().chunks(per_sample)) {
            total += p
                .iter()
                .zip(t)
                .zip(weights)
                .map(|((a, b), w)| (a - b) * (a - b) * w)
                .sum::<f64>();
        }
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(total / m),
            rg,
            Op::WeightedSquaredError {
                pred,
                target: target.data().to_vec(),
                weights: weights.to_vec(),
            },
        ))
    }

    /// Reverse sweep from scalar `loss`. Gradients of every parameter in
    /// `store` are overwritten: reachable ones receive their gradient,
    /// unreachable ones are zero.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward_inner(loss)?;
        store.zero_grad();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &self.grads[i]) {
                for (dst, src) in store.grad_mut(*id).data_mut().iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep without a parameter store; read results with [`grad`](Self::grad).
    pub fn backward_leaves(&mut self, loss: Var) -> Result<()> {
        self.backward_inner(loss)
    }

    fn backward_inner(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return shape_err("backward on an empty tape");
        }
        if self.value(loss).numel() != 1 {
            return shape_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g);
            // only leaf gradients stay readable after the sweep
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param(_)) {
                self.grads[i] = Some(g);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Each arm reads from `self.nodes` and then hands owned deltas to
        // `accumulate`.
        let mut deltas: Vec<(Var, Vec<f64>)> = Vec::new();
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv { x, w, b, plan } => {
                if self.rg(*x) {
                    deltas.push((*x, plan.input_grad(self.value(*w).data(), g)));
                }
                if self.rg(*w) {
                    deltas.push((*w, plan.weight_grad(self.value(*x).data(), g)));
                }
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    deltas.push((b, kernels::channel_sums(g, plan.batch, plan.c_out, plan.out_spatial())));
                }
            }
            Op::ConvTranspose { x, w, b, plan } => {
                if self.rg(*x) {
                    deltas.push((*x, plan.apply(g, self.value(*w).data())));
                }
                if self.rg(*w) {
                    deltas.push((*w, plan.weight_grad(g, self.value(*x).data())));
                }
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    deltas.push((b, kernels::channel_sums(g, plan.batch, plan.c_in, plan.in_spatial())));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
                batch,
                spatial,
            } => {
                let channels = inv_std.len();
                let gv = self.value(*gamma).data();
                let xv = self.value(*x).data();
                // per channel: sum(g) and sum(g * xhat)
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                for (plane, (gp, xp)) in g.chunks_exact(*spatial).zip(xv.chunks_exact(*spatial)).enumerate() {
                    let c = plane % channels;
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    for (&gi, &xi) in gp.iter().zip(xp) {
                        sg += gi;
                        sgx += gi * xi;
                    }
                    dbeta[c] += sg;
                    dgamma[c] += sgx;
                }
                for c in 0..channels {
                    // sum(g * (x - mean)) * inv_std
                    dgamma[c] = (dgamma[c] - mean[c] * dbeta[c]) * inv_std[c];
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let m = (*batch * *spatial) as f64;
                    for (plane, ((dp, gp), xp)) in dx
                        .chunks_exact_mut(*spatial)
                        .zip(g.chunks_exact(*spatial))
                        .zip(xv.chunks_exact(*spatial))
                        .enumerate()
                    {
                        let c = plane % channels;
                        let scale = gv[c] * inv_std[c];
                        if *train {
                            // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
                            let (mu, is) = (mean[c], inv_std[c]);
                            let (db, dg) = (dbeta[c] / m, dgamma[c] / m);
                            for ((d, &gi), &xi) in dp.iter_mut().zip(gp).zip(xp) {
                                *d = scale * (gi - db - (xi - mu) * is * dg);
                            }
                        } else {
                            dp.iter_mut().zip(gp).for_each(|(d, &gi)| *d = scale * gi);
                        }
                    }
                    deltas.push((*x, dx));
                }
                if self.rg(*gamma) {
                    deltas.push((*gamma, dgamma));
                }
                if self.rg(*beta) {
                    deltas.push((*beta, dbeta));
                }
            }
            Op::Relu { x } => {
                let y = node.value.data();
                let dx = g
                    .iter()
                    .zip(y)
                    .map(|(&gi, &yi)| if yi > 0.0 { gi } else { 0.0 })
                    .collect();
                deltas.push((*x, dx));
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (&src, &gi) in argmax.iter().zip(g) {
                    dx[src] += gi;
                }
                deltas.push((*x, dx));
            }
            Op::GlobalAvgPool { x, spatial } => {
                let inv = 1.0 / *spatial as f64;
                let dx = g
                    .iter()
                    .flat_map(|&gi| std::iter::repeat_n(gi * inv, *spatial))
                    .collect();
                deltas.push((*x, dx));
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * fin];
                    // dx[n, in] = g[n, out] * W[out, in]
                    kernels::gemm(n, fout, fin, g, fout, 1, self.value(*w).data(), fin, 1, &mut dx, fin, 1, 0.0);
                    deltas.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; fout * fin];
                    // dW[out, in] = g^T[out, n] * x[n, in]
                    kernels::gemm(fout, n, fin, g, 1, fout, self.value(*x).data(), fin, 1, &mut dw, fin, 1, 0.0);
                    deltas.push((*w, dw));
                }
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    let mut db = vec![0.0; fout];
                    for row in g.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    deltas.push((b, db));
                }
            }
            Op::Softmax { x, outer, len, inner } => {
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..*len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..*len {
                            dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                deltas.push((*x, dx));
            }
            Op::Stack { inputs, outer, chunks } => {
                let total: usize = chunks.iter().sum();
                let mut offset = 0;
                for (&v, &chunk) in inputs.iter().zip(chunks) {
                    if self.rg(v) {
                        let mut dv = Vec::with_capacity(outer * chunk);
                        for o in 0..*outer {
                            let s = o * total + offset;
                            dv.extend_from_slice(&g[s..s + chunk]);
                        }
                        deltas.push((v, dv));
                    }
                    offset += chunk;
                }
            }
            Op::Reshape { x } => deltas.push((*x, g.to_vec())),
            Op::Sum { x } => deltas.push((*x, vec![g[0]; self.value(*x).numel()])),
            Op::Add { a, b } => {
                deltas.push((*a, g.to_vec()));
                deltas.push((*b, g.to_vec()));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                deltas.push((*a, g.iter().zip(bv).map(|(gi, bi)| gi * bi).collect()));
                deltas.push((*b, g.iter().zip(av).map(|(gi, ai)| gi * ai).collect()));
            }
            Op::Scale { x, factor } => deltas.push((*x, g.iter().map(|gi| gi * factor).collect())),
            Op::WeightedSum { a, alpha, b, beta } => {
                deltas.push((*a, g.iter().map(|gi| gi * alpha).collect()));
                deltas.push((*b, g.iter().map(|gi| gi * beta).collect()));
            }
            Op::CrossEntropy { probs, labels } => {
                let pv = self.value(*probs).data();
                let m = labels.len() as f64;
                let mut dp = vec![0.0; pv.len()];
                for (i, &y) in labels.iter().enumerate() {
                    let p = pv[2 * i + 1];
                    let mut d = 0.0;
                    if p > PROB_EPS {
                        d += y / p;
                    }
                    if 1.0 - p > PROB_EPS {
                        d -= (1.0 - y) / (1.0 - p);
                    }
                    dp[2 * i + 1] = -g[0] * d / m;
                }
                deltas.push((*probs, dp));
            }
            Op::WeightedSquaredError { pred, target, weights } => {
                let pv = self.value(*pred).data();
                let per = weights.len();
                let m = (pv.len() / per) as f64;
                let dp = pv
                    .iter()
                    .zip(target)
                    .enumerate()
                    .map(|(j, (p, t))| g[0] * 2.0 * weights[j % per] * (p - t) / m)
                    .collect();
                deltas.push((*pred, dp));
            }
        }
        for (v, d) in deltas {
            self.accumulate(v, d);
        }
    }
}

/// Flat index helper used by tests and callers that address tensors by coordinates.
pub fn flat_index(shape: &[usize], coords: &[usize]) -> usize {
    strides_of(shape).iter().zip(coords).map(|(s, c)| s * c).sum()
}
