use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Mul,
    ConcatLastAxis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolAxes {
    /// Reduce over (H, W): `(N,H,W,C) -> (N,1,1,C)`.
    Spatial,
    /// Reduce over C: `(N,H,W,C) -> (N,H,W,1)`.
    Channel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch-norm running statistics for eval mode.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a, T> {
    Batch,
    Running {
        mean: &'a Tensor<T>,
        var: &'a Tensor<T>,
    },
}

/// Per-feature statistics of one train-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Relu,
    Sigmoid,
    Add {
        bmap: Option<Vec<usize>>,
    },
    Mul {
        bmap: Option<Vec<usize>>,
    },
    Concat {
        widths: Vec<usize>,
    },
    Dense,
    Conv3x3,
    Pool {
        kind: PoolKind,
        axes: PoolAxes,
        argmax: Vec<usize>,
    },
    MaxPool2 {
        argmax: Vec<usize>,
    },
    BatchNorm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch: bool,
    },
    Dropout {
        mask: Vec<T>,
    },
    Reshape,
    Sum,
    Mean,
    /// Scalar whose vector-Jacobian product with its single input was
    /// computed by the caller.
    Custom {
        grad: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Wengert list of the operations of one forward pass.
#[derive(Debug)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward output with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<Var>) -> Var {
        debug_assert!(
            !inputs.iter().all(|i| self.nodes[i.0].value.is_finite()) || value.is_finite(),
            "non-finite output from finite inputs in {op:?}"
        );
        let requires_grad = match op {
            Op::Leaf { .. } => false,
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let v = self.push(value, Op::Leaf { param: None }, vec![]);
        self.nodes[v.0].requires_grad = requires_grad;
        v
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Record a parameter as a trainable leaf. Its gradient is routed back by
    /// [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(
            store.value(id).clone(),
            Op::Leaf { param: Some(id) },
            vec![],
        );
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn param_named(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        Ok(self.param(store, store.require(name)?))
    }

    // ---- elementwise -----------------------------------------------------

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        match kind {
            UnaryKind::Relu => self.relu(x),
            UnaryKind::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu, vec![x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid, vec![x])
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        match kind {
            BinaryKind::Add => self.add(a, b),
            BinaryKind::Mul => self.mul(a, b),
            BinaryKind::ConcatLastAxis => self.concat_last_axis(&[a, b]),
        }
    }

    /// `a + b`, with `b` broadcast over any axis where its extent is 1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bmap = broadcast_map(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = match &bmap {
            None => av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| x + y)
                .collect(),
            Some(m) => av
                .data()
                .iter()
                .zip(m)
                .map(|(&x, &j)| x + bv.data()[j])
                .collect(),
        };
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add { bmap }, vec![a, b]))
    }

    /// `a * b`, with `b` broadcast over any axis where its extent is 1.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bmap = broadcast_map(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = match &bmap {
            None => av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| x * y)
                .collect(),
            Some(m) => av
                .data()
                .iter()
                .zip(m)
                .map(|(&x, &j)| x * bv.data()[j])
                .collect(),
        };
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul { bmap }, vec![a, b]))
    }

    pub fn concat_last_axis(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::shape(format!(
                    "concat: {:?} vs {:?} differ outside the last axis",
                    s,
                    self.shape(first)
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat { widths }, parts.to_vec()))
    }

    // ---- layers ----------------------------------------------------------

    /// `x (N,Fin) @ w (Fin,Fout) + b (Fout)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, fin) = self.value(x).dims2()?;
        let (win, fout) = self.value(w).dims2()?;
        if win != fin || self.shape(b) != [fout] {
            return Err(Error::shape(format!(
                "dense: x {:?}, W {:?}, b {:?}",
                self.shape(x),
                self.shape(w),
                self.shape(b)
            )));
        }
        let (xv, wv, bv) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![T::zero(); n * fout];
        for (row, orow) in xv.chunks(fin).zip(out.chunks_mut(fout)) {
            orow.copy_from_slice(bv);
            for (j, &xj) in row.iter().enumerate() {
                if xj == T::zero() {
                    continue;
                }
                axpy(orow, xj, &wv[j * fout..(j + 1) * fout]);
            }
        }
        let out = Tensor::new(vec![n, fout], out)?;
        Ok(self.push(out, Op::Dense, vec![x, w, b]))
    }

    /// 3x3 convolution, stride 1, zero "same" padding.
    /// `x (N,H,W,Cin)`, `k (3,3,Cin,Cout)`, `b (Cout)`.
    pub fn conv2d_3x3(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (n, h, w, cin) = self.value(x).dims4()?;
        let ks = self.shape(k);
        if ks.len() != 4 || ks[0] != 3 || ks[1] != 3 || ks[2] != cin {
            return Err(Error::shape(format!(
                "conv2d_3x3: kernel {:?} for input {:?}",
                ks,
                self.shape(x)
            )));
        }
        let cout = ks[3];
        if self.shape(b) != [cout] {
            return Err(Error::shape(format!(
                "conv2d_3x3: bias {:?}",
                self.shape(b)
            )));
        }
        let out = conv3x3_forward(
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
            (n, h, w, cin, cout),
        );
        let out = Tensor::new(vec![n, h, w, cout], out)?;
        Ok(self.push(out, Op::Conv3x3, vec![x, k, b]))
    }

    pub fn pool(&mut self, x: Var, kind: PoolKind, axes: PoolAxes) -> Result<Var> {
        let (n, h, w, c) = self.value(x).dims4()?;
        let xv = self.value(x).data();
        let mut argmax = Vec::new();
        let (shape, data) = match axes {
            PoolAxes::Spatial => {
                let mut out = vec![T::zero(); n * c];
                if kind == PoolKind::Max {
                    argmax = vec![0; n * c];
                }
                let inv = T::one() / T::of((h * w) as f64);
                for i in 0..n {
                    for k in 0..c {
                        let base = i * h * w * c + k;
                        match kind {
                            PoolKind::Avg => {
                                let mut s = T::zero();
                                for p in 0..h * w {
                                    s += xv[base + p * c];
                                }
                                out[i * c + k] = s * inv;
                            }
                            PoolKind::Max => {
                                let mut best = base;
                                for p in 1..h * w {
                                    if xv[base + p * c] > xv[best] {
                                        best = base + p * c;
                                    }
                                }
                                out[i * c + k] = xv[best];
                                argmax[i * c + k] = best;
                            }
                        }
                    }
                }
                (vec![n, 1, 1, c], out)
            }
            PoolAxes::Channel => {
                let pixels = n * h * w;
                let mut out = vec![T::zero(); pixels];
                if kind == PoolKind::Max {
                    argmax = vec![0; pixels];
                }
                let inv = T::one() / T::of(c as f64);
                for (p, px) in xv.chunks(c).enumerate() {
                    match kind {
                        PoolKind::Avg => out[p] = px.iter().copied().sum::<T>() * inv,
                        PoolKind::Max => {
                            let mut best = 0;
                            for (k, &v) in px.iter().enumerate().skip(1) {
                                if v > px[best] {
                                    best = k;
                                }
                            }
                            out[p] = px[best];
                            argmax[p] = p * c + best;
                        }
                    }
                }
                (vec![n, h, w, 1], out)
            }
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Pool { kind, axes, argmax }, vec![x]))
    }

    /// Global average pooling, `(N,H,W,C) -> (N,1,1,C)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.pool(x, PoolKind::Avg, PoolAxes::Spatial)
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool_2x2(&mut self, x: Var) -> Result<Var> {
        let (n, h, w, c) = self.value(x).dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(format!(
                "max_pool_2x2 on spatial extent {h}x{w}"
            )));
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * oh * ow * c];
        let mut argmax = vec![0; out.len()];
        for i in 0..n {
            for y in 0..oh {
                for xx in 0..ow {
                    for k in 0..c {
                        let mut best = ((i * h + 2 * y) * w + 2 * xx) * c + k;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = ((i * h + 2 * y + dy) * w + 2 * xx + dx) * c + k;
                            if xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                        let o = ((i * oh + y) * ow + xx) * c + k;
                        out[o] = xv[best];
                        argmax[o] = best;
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, oh, ow, c], out)?;
        Ok(self.push(out, Op::MaxPool2 { argmax }, vec![x]))
    }

    /// Batch normalization over the rows of a rank-2 `(N,F)` input.
    ///
    /// With [`NormStats::Batch`] the batch mean and (biased) variance are used
    /// and returned so the caller can update its running statistics.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (n, f) = self.value(x).dims2()?;
        if self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return Err(Error::shape(format!(
                "batchnorm: x {:?}, gamma {:?}, beta {:?}",
                self.shape(x),
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xv = self.value(x).data();
        let eps = T::of(eps);
        let (mean, var, batch) = match stats {
            NormStats::Batch => {
                if n < 2 {
                    return Err(Error::BatchTooSmall(n));
                }
                let inv_n = T::one() / T::of(n as f64);
                let mut mean = vec![T::zero(); f];
                for row in xv.chunks(f) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m *= inv_n);
                let mut var = vec![T::zero(); f];
                for row in xv.chunks(f) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s *= inv_n);
                (mean, var, true)
            }
            NormStats::Running { mean, var } => {
                if mean.shape() != [f] || var.shape() != [f] {
                    return Err(Error::shape("batchnorm: running statistics shape"));
                }
                (mean.data().to_vec(), var.data().to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); n * f];
        let mut out = vec![T::zero(); n * f];
        for r in 0..n {
            for j in 0..f {
                let idx = r * f + j;
                let z = (xv[idx] - mean[j]) * inv_std[j];
                xhat[idx] = z;
                out[idx] = g[j] * z + bt[j];
            }
        }
        let out = Tensor::new(vec![n, f], out)?;
        let v = self.push(
            out,
            Op::BatchNorm {
                xhat,
                inv_std,
                batch,
            },
            vec![x, gamma, beta],
        );
        Ok((v, batch.then_some(BatchStats { mean, var })))
    }

    /// Inverted dropout. Identity in eval mode or when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidRate(rate));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x)
                .data()
                .iter()
                .zip(&mask)
                .map(|(&v, &m)| v * m)
                .collect(),
        )?;
        Ok(self.push(out, Op::Dropout { mask }, vec![x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape, vec![x]))
    }

    /// Collapse all axes after the first: `(N, ...) -> (N, F)`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s[0];
        let f = s[1..].iter().product();
        self.reshape(x, &[n, f])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::of(v.len() as f64));
        self.push(out, Op::Mean, vec![x])
    }

    /// Record a scalar `value` computed outside the tape whose gradient with
    /// respect to `input` is already known.
    pub fn custom_scalar(&mut self, input: Var, value: T, grad: Tensor<T>) -> Result<Var> {
        if grad.shape() != self.shape(input) {
            return Err(Error::shape(format!(
                "custom_scalar: grad {:?} for input {:?}",
                grad.shape(),
                self.shape(input)
            )));
        }
        Ok(self.push(Tensor::scalar(value), Op::Custom { grad }, vec![input]))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse-mode sweep from a scalar `output`. Node gradients stay
    /// available through [`Tape::grad`]; a tape can be swept only once.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let out_shape = self.shape(output).to_vec();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarOutput(out_shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(&out_shape, T::one()));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let need: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let contribs = self.vjp(node, &g, &need)?;
            for ((inp, c), needed) in node.inputs.iter().zip(contribs).zip(need) {
                if !needed {
                    continue;
                }
                let Some(c) = c else { continue };
                match &mut grads[inp.0] {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(c.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(c),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Add leaf-parameter gradients into the store's gradient slots.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Leaf { param: Some(id) }, Some(g)) = (&node.op, g) {
                store.accumulate_grad(*id, g);
            }
        }
    }

    fn vjp(&self, node: &Node<T>, g: &Tensor<T>, need: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let gd = g.data();
        let input = |k: usize| &self.nodes[node.inputs[k].0].value;
        let like = |t: &Tensor<T>, data: Vec<T>| Tensor::new(t.shape().to_vec(), data);

        let out = match &node.op {
            Op::Leaf { .. } => vec![],
            Op::Relu => {
                let x = input(0);
                let d = x
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![Some(like(x, d)?)]
            }
            Op::Sigmoid => {
                let y = node.value.data();
                let d = y
                    .iter()
                    .zip(gd)
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                vec![Some(like(&node.value, d)?)]
            }
            Op::Add { bmap } => {
                let (a, b) = (input(0), input(1));
                let ga = need[0].then(|| like(a, gd.to_vec())).transpose()?;
                let gb = if need[1] {
                    Some(match bmap {
                        None => like(b, gd.to_vec())?,
                        Some(m) => {
                            let mut acc = vec![T::zero(); b.len()];
                            for (&gv, &j) in gd.iter().zip(m) {
                                acc[j] += gv;
                            }
                            like(b, acc)?
                        }
                    })
                } else {
                    None
                };
                vec![ga, gb]
            }
            Op::Mul { bmap } => {
                let (a, b) = (input(0), input(1));
                let (ad, bd) = (a.data(), b.data());
                let b_at = |i: usize| match bmap {
                    None => bd[i],
                    Some(m) => bd[m[i]],
                };
                let ga = if need[0] {
                    Some(like(
                        a,
                        gd.iter().enumerate().map(|(i, &gv)| gv * b_at(i)).collect(),
                    )?)
                } else {
                    None
                };
                let gb = if need[1] {
                    let mut acc = vec![T::zero(); b.len()];
                    for (i, (&gv, &av)) in gd.iter().zip(ad).enumerate() {
                        let j = match bmap {
                            None => i,
                            Some(m) => m[i],
                        };
                        acc[j] += gv * av;
                    }
                    Some(like(b, acc)?)
                } else {
                    None
                };
                vec![ga, gb]
            }
            Op::Concat { widths } => {
                let total: usize = widths.iter().sum();
                let rows = gd.len() / total;
                let mut parts: Vec<Vec<T>> = widths
                    .iter()
                    .map(|&w| Vec::with_capacity(rows * w))
                    .collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (p, &w) in parts.iter_mut().zip(widths) {
                        p.extend_from_slice(&gd[off..off + w]);
                        off += w;
                    }
                }
                parts
                    .into_iter()
                    .enumerate()
                    .map(|(k, d)| like(input(k), d).map(Some))
                    .collect::<Result<_>>()?
            }
            Op::Dense => {
                let (x, w) = (input(0), input(1));
                let (n, fin) = x.dims2()?;
                let fout = w.shape()[1];
                let (xd, wd) = (x.data(), w.data());
                let gx = if need[0] {
                    let mut d = vec![T::zero(); n * fin];
                    for r in 0..n {
                        let grow = &gd[r * fout..(r + 1) * fout];
                        for j in 0..fin {
                            d[r * fin + j] = dot(grow, &wd[j * fout..(j + 1) * fout]);
                        }
                    }
                    Some(like(x, d)?)
                } else {
                    None
                };
                let gw = if need[1] {
                    let mut d = vec![T::zero(); fin * fout];
                    for r in 0..n {
                        let grow = &gd[r * fout..(r + 1) * fout];
                        for j in 0..fin {
                            let xv = xd[r * fin + j];
                            if xv != T::zero() {
                                axpy(&mut d[j * fout..(j + 1) * fout], xv, grow);
                            }
                        }
                    }
                    Some(like(w, d)?)
                } else {
                    None
                };
                let gb = if need[2] {
                    let mut d = vec![T::zero(); fout];
                    for grow in gd.chunks(fout) {
                        axpy(&mut d, T::one(), grow);
                    }
                    Some(like(input(2), d)?)
                } else {
                    None
                };
                vec![gx, gw, gb]
            }
            Op::Conv3x3 => {
                let (x, k) = (input(0), input(1));
                let (n, h, w, cin) = x.dims4()?;
                let cout = k.shape()[3];
                let (dx, dk, db) = conv3x3_backward(
                    x.data(),
                    k.data(),
                    gd,
                    (n, h, w, cin, cout),
                    need[0],
                    need[1],
                );
                vec![
                    dx.map(|d| like(x, d)).transpose()?,
                    dk.map(|d| like(k, d)).transpose()?,
                    need[2].then(|| like(input(2), db)).transpose()?,
                ]
            }
            Op::Pool { kind, axes, argmax } => {
                let x = input(0);
                let (_, h, w, c) = x.dims4()?;
                let mut d = vec![T::zero(); x.len()];
                match (kind, axes) {
                    (PoolKind::Max, _) => {
                        for (&gv, &j) in gd.iter().zip(argmax) {
                            d[j] += gv;
                        }
                    }
                    (PoolKind::Avg, PoolAxes::Spatial) => {
                        let inv = T::one() / T::of((h * w) as f64);
                        let per_sample = h * w * c;
                        for (idx, dv) in d.iter_mut().enumerate() {
                            let i = idx / per_sample;
                            *dv = gd[i * c + idx % c] * inv;
                        }
                    }
                    (PoolKind::Avg, PoolAxes::Channel) => {
                        let inv = T::one() / T::of(c as f64);
                        for (idx, dv) in d.iter_mut().enumerate() {
                            *dv = gd[idx / c] * inv;
                        }
                    }
                }
                vec![Some(like(x, d)?)]
            }
            Op::MaxPool2 { argmax } => {
                let x = input(0);
                let mut d = vec![T::zero(); x.len()];
                for (&gv, &j) in gd.iter().zip(argmax) {
                    d[j] += gv;
                }
                vec![Some(like(x, d)?)]
            }
            Op::BatchNorm {
                xhat,
                inv_std,
                batch,
            } => {
                let (x, gamma) = (input(0), input(1));
                let (n, f) = x.dims2()?;
                let gm = gamma.data();
                let mut dgamma = vec![T::zero(); f];
                let mut dbeta = vec![T::zero(); f];
                for r in 0..n {
                    for j in 0..f {
                        dgamma[j] += gd[r * f + j] * xhat[r * f + j];
                        dbeta[j] += gd[r * f + j];
                    }
                }
                let gx = if need[0] {
                    let mut d = vec![T::zero(); n * f];
                    if *batch {
                        // dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                        let nn = T::of(n as f64);
                        for j in 0..f {
                            let s1 = gm[j] * dbeta[j];
                            let s2 = gm[j] * dgamma[j];
                            for r in 0..n {
                                let idx = r * f + j;
                                let dxhat = gd[idx] * gm[j];
                                d[idx] = inv_std[j] / nn * (nn * dxhat - s1 - xhat[idx] * s2);
                            }
                        }
                    } else {
                        for (idx, dv) in d.iter_mut().enumerate() {
                            let j = idx % f;
                            *dv = gd[idx] * gm[j] * inv_std[j];
                        }
                    }
                    Some(like(x, d)?)
                } else {
                    None
                };
                vec![
                    gx,
                    need[1].then(|| like(gamma, dgamma)).transpose()?,
                    need[2].then(|| like(input(2), dbeta)).transpose()?,
                ]
            }
            Op::Dropout { mask } => {
                let d = gd.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                vec![Some(like(input(0), d)?)]
            }
            Op::Reshape => vec![Some(like(input(0), gd.to_vec())?)],
            Op::Sum => {
                let x = input(0);
                vec![Some(Tensor::full(x.shape(), gd[0]))]
            }
            Op::Mean => {
                let x = input(0);
                vec![Some(Tensor::full(x.shape(), gd[0] / T::of(x.len() as f64)))]
            }
            Op::Custom { grad } => vec![Some(grad.map(|v| v * gd[0]))],
        };
        Ok(out)
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// For each flat index of `a_shape`, the flat index into `b_shape` under
/// broadcasting of `b`'s unit axes. `None` when the shapes are equal.
fn broadcast_map(a_shape: &[usize], b_shape: &[usize]) -> Result<Option<Vec<usize>>> {
    if a_shape == b_shape {
        return Ok(None);
    }
    if a_shape.len() != b_shape.len()
        || a_shape.iter().zip(b_shape).any(|(&a, &b)| b != a && b != 1)
    {
        return Err(Error::shape(format!(
            "cannot broadcast {b_shape:?} onto {a_shape:?}"
        )));
    }
    let rank = a_shape.len();
    let mut b_strides = vec![0; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        b_strides[d] = if b_shape[d] == 1 { 0 } else { s };
        s *= b_shape[d];
    }
    let total: usize = a_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0; rank];
    for _ in 0..total {
        map.push(idx.iter().zip(&b_strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < a_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(Some(map))
}

type ConvDims = (usize, usize, usize, usize, usize);

fn conv3x3_forward<T: Real>(x: &[T], k: &[T], b: &[T], dims: ConvDims) -> Vec<T> {
    let (n, h, w, cin, cout) = dims;
    let mut out = vec![T::zero(); n * h * w * cout];
    for i in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let o = ((i * h + y) * w + xx) * cout;
                let opx = &mut out[o..o + cout];
                opx.copy_from_slice(b);
                for m in 0..3 {
                    let yy = y as isize + m as isize - 1;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for q in 0..3 {
                        let xs = xx as isize + q as isize - 1;
                        if xs < 0 || xs >= w as isize {
                            continue;
                        }
                        let src = ((i * h + yy as usize) * w + xs as usize) * cin;
                        let kbase = (m * 3 + q) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[src + ci];
                            if xv == T::zero() {
                                continue;
                            }
                            let kr = kbase + ci * cout;
                            axpy(opx, xv, &k[kr..kr + cout]);
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
fn conv3x3_backward<T: Real>(
    x: &[T],
    k: &[T],
    g: &[T],
    dims: ConvDims,
    need_x: bool,
    need_k: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let (n, h, w, cin, cout) = dims;
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dk = need_k.then(|| vec![T::zero(); k.len()]);
    let mut db = vec![T::zero(); cout];
    for i in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let o = ((i * h + y) * w + xx) * cout;
                let gpx = &g[o..o + cout];
                axpy(&mut db, T::one(), gpx);
                for m in 0..3 {
                    let yy = y as isize + m as isize - 1;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for q in 0..3 {
                        let xs = xx as isize + q as isize - 1;
                        if xs < 0 || xs >= w as isize {
                            continue;
                        }
                        let src = ((i * h + yy as usize) * w + xs as usize) * cin;
                        let kbase = (m * 3 + q) * cin * cout;
                        for ci in 0..cin {
                            let kr = kbase + ci * cout;
                            if let Some(dx) = dx.as_mut() {
                                dx[src + ci] += dot(&k[kr..kr + cout], gpx);
                            }
                            if let Some(dk) = dk.as_mut() {
                                let xv = x[src + ci];
                                if xv != T::zero() {
                                    axpy(&mut dk[kr..kr + cout], xv, gpx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}
