//! Tape of recorded operations and the reverse sweep over it.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and [`Graph::backward`] is a single reverse pass.

use super::conv::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::wht;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        pad_before: usize,
    },
    AvgPool2(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Sqrt(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulGrid {
        x: Var,
        grid: Var,
    },
    Hadamard2d(Var),
    SoftThreshold {
        x: Var,
        t: Var,
    },
    HardThreshold {
        x: Var,
        t: Var,
    },
    Concat(Vec<Var>),
    BroadcastSpatial(Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Tv(Var),
    KlGaussian {
        mu_q: Var,
        var_q: Var,
        mu_p: Var,
        var_p: Var,
    },
    KlBernoulli {
        z: Var,
        beta: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// A single-threaded computation graph. Independent graphs may be built and
/// differentiated concurrently.
pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated on a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    // ---- layers ---------------------------------------------------------

    /// Same-size cross-correlation with replicate borders.
    /// `input: [B, Cin, H, W]`, `kernel: [Cout, Cin, k, k]`, `bias: [Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let [b, c_in, h, w] = self.value(input).dims4()?;
        let [c_out, kc, k, k2] = self.value(kernel).dims4()?;
        if kc != c_in {
            return Err(Error::dim(format!(
                "conv2d: input has {c_in} channels, kernel expects {kc}"
            )));
        }
        if k != k2 || k == 0 {
            return Err(Error::dim(format!("conv2d: kernel must be square, got {k}x{k2}")));
        }
        if self.value(bias).shape() != [c_out] {
            return Err(Error::dim(format!(
                "conv2d: bias shape {:?}, expected [{c_out}]",
                self.value(bias).shape()
            )));
        }
        let (pad_before, _) = conv::same_padding(k);
        let geom = ConvGeom {
            batch: b,
            c_in,
            c_out,
            height: h,
            width: w,
            k,
            pad_before,
        };
        let out = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[b, c_out, h, w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                pad_before,
            },
            &[input, kernel, bias],
        ))
    }

    /// 2x2 average pooling with stride 2.
    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!("avgpool2 needs even extents, got {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let quarter = T::of(0.25);
        let mut out = Vec::with_capacity(b * c * ho * wo);
        for plane in src.chunks_exact(h * w) {
            for y in 0..ho {
                for xx in 0..wo {
                    let i = 2 * y * w + 2 * xx;
                    out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter);
                }
            }
        }
        let value = Tensor::new(&[b, c, ho, wo], out)?;
        Ok(self.push(value, Op::AvgPool2(x), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x: [B, C, H, W]` times a per-channel grid `[C, H, W]` shared across
    /// the batch.
    pub fn mul_grid(&mut self, x: Var, grid: Var) -> Result<Var> {
        let [_, c, h, w] = self.value(x).dims4()?;
        if self.value(grid).shape() != [c, h, w] {
            return Err(Error::dim(format!(
                "mul_grid: grid {:?} does not match [{c}, {h}, {w}]",
                self.value(grid).shape()
            )));
        }
        let gd = self.value(grid).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(c * h * w)
            .flat_map(|s| s.iter().zip(gd).map(|(&a, &b)| a * b))
            .collect();
        let value = Tensor::new(self.value(x).shape(), data)?;
        Ok(self.push(value, Op::MulGrid { x, grid }, &[x, grid]))
    }

    /// Orthonormal 2D Hadamard transform of every `[H, W]` plane. It is its
    /// own inverse.
    pub fn hadamard2d(&mut self, x: Var) -> Result<Var> {
        let [_, _, h, w] = self.value(x).dims4()?;
        if !h.is_power_of_two() || !w.is_power_of_two() {
            return Err(Error::dim(format!("hadamard2d needs power-of-two planes, got {h}x{w}")));
        }
        let mut value = self.value(x).clone();
        for plane in value.data_mut().chunks_exact_mut(h * w) {
            wht::ht2d_plane(plane, h, w);
        }
        Ok(self.push(value, Op::Hadamard2d(x), &[x]))
    }

    fn threshold_shapes(&self, x: Var, t: Var) -> Result<usize> {
        let [_, c, h, w] = self.value(x).dims4()?;
        if self.value(t).shape() != [c, h, w] {
            return Err(Error::dim(format!(
                "threshold grid {:?} does not match [{c}, {h}, {w}]",
                self.value(t).shape()
            )));
        }
        Ok(c * h * w)
    }

    /// `sign(x) * max(|x| - t, 0)` with per-channel thresholds `[C, H, W]`.
    pub fn soft_threshold(&mut self, x: Var, t: Var) -> Result<Var> {
        let n = self.threshold_shapes(x, t)?;
        let td = self.value(t).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(n)
            .flat_map(|s| {
                s.iter()
                    .zip(td)
                    .map(|(&v, &th)| sign(v) * (v.abs() - th).max(T::zero()))
            })
            .collect();
        let value = Tensor::new(self.value(x).shape(), data)?;
        Ok(self.push(value, Op::SoftThreshold { x, t }, &[x, t]))
    }

    /// Hard thresholding `x * 1[|x| > t]`, written as the soft threshold plus
    /// a restoring `sign(.) * t` term. The restoring term carries no gradient
    /// to `t`, so `t` learns through the soft-threshold branch only.
    pub fn hard_threshold(&mut self, x: Var, t: Var) -> Result<Var> {
        let n = self.threshold_shapes(x, t)?;
        let td = self.value(t).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(n)
            .flat_map(|s| {
                s.iter()
                    .zip(td)
                    .map(|(&v, &th)| if v.abs() > th { v } else { T::zero() })
            })
            .collect();
        let value = Tensor::new(self.value(x).shape(), data)?;
        Ok(self.push(value, Op::HardThreshold { x, t }, &[x, t]))
    }

    /// Concatenation of `[B, Ci, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let [b, _, h, w] = self.value(*first).dims4()?;
        let mut channels = 0;
        for &p in parts {
            let [pb, pc, ph, pw] = self.value(p).dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::dim(format!(
                    "concat: [{pb}, _, {ph}, {pw}] vs [{b}, _, {h}, {w}]"
                )));
            }
            channels += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(b * channels * hw);
        for bi in 0..b {
            for &p in parts {
                let v = self.value(p);
                let pc = v.shape()[1];
                data.extend_from_slice(&v.data()[bi * pc * hw..(bi + 1) * pc * hw]);
            }
        }
        let value = Tensor::new(&[b, channels, h, w], data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// `[B, D]` to `[B, D, H, W]`, each channel constant in space.
    pub fn broadcast_spatial(&mut self, v: Var, h: usize, w: usize) -> Result<Var> {
        let [b, d] = self.value(v).dims2()?;
        let data = self
            .value(v)
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, h * w))
            .collect();
        let value = Tensor::new(&[b, d, h, w], data)?;
        Ok(self.push(value, Op::BroadcastSpatial(v), &[v]))
    }

    /// `[B, C, H, W]` to `[B, C]` by spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4()?;
        let inv = T::of(1.0 / (h * w) as f64);
        let data = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        let value = Tensor::new(&[b, c], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), &[x]))
    }

    /// `y = x w^T + b` with `x: [B, In]`, `w: [Out, In]`, `b: [Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [batch, fin] = self.value(x).dims2()?;
        let [fout, win] = self.value(w).dims2()?;
        if win != fin || self.value(b).shape() != [fout] {
            return Err(Error::dim(format!(
                "linear: x [{batch}, {fin}], w [{fout}, {win}], b {:?}",
                self.value(b).shape()
            )));
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(batch * fout);
        for row in xd.chunks_exact(fin) {
            for (o, wrow) in wd.chunks_exact(fin).enumerate() {
                out.push(row.iter().zip(wrow).fold(bd[o], |a, (&p, &q)| a + p * q));
            }
        }
        let value = Tensor::new(&[batch, fout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let s = self.value(x).sum() / T::of(n as f64);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), &[x]))
    }

    // ---- loss terms ------------------------------------------------------

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n = va.len().max(1);
        let s = va
            .iter()
            .zip(vb)
            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        let value = Tensor::scalar(s / T::of(n as f64));
        Ok(self.push(value, Op::Mse(a, b), &[a, b]))
    }

    /// Anisotropic total variation of each `[H, W]` plane divided by `H * W`,
    /// averaged over batch and channel.
    pub fn tv(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4()?;
        let planes = (b * c).max(1);
        let norm = T::of(1.0 / ((h * w) as f64 * planes as f64));
        let mut acc = T::zero();
        for p in self.value(x).data().chunks_exact(h * w) {
            acc = acc + tv_plane(p, h, w);
        }
        Ok(self.push(Tensor::scalar(acc * norm), Op::Tv(x), &[x]))
    }

    /// Batch mean of `KL(N(mu_q, var_q) || N(mu_p, var_p))`, summed over the
    /// latent dimensions. All inputs are `[B, D]`.
    pub fn kl_gaussian(&mut self, mu_q: Var, var_q: Var, mu_p: Var, var_p: Var) -> Result<Var> {
        for v in [var_q, mu_p, var_p] {
            self.same_shape(mu_q, v, "kl_gaussian")?;
        }
        let [b, _] = self.value(mu_q).dims2()?;
        let (mq, vq, mp, vp) = (
            self.value(mu_q).data(),
            self.value(var_q).data(),
            self.value(mu_p).data(),
            self.value(var_p).data(),
        );
        if vq.iter().chain(vp).any(|&v| v <= T::zero()) {
            return Err(Error::contract("kl_gaussian: variances must be positive"));
        }
        let half = T::of(0.5);
        let mut acc = T::zero();
        for i in 0..mq.len() {
            let d = mq[i] - mp[i];
            acc = acc + half * ((vp[i] / vq[i]).ln() + (vq[i] + d * d) / vp[i] - T::one());
        }
        let value = Tensor::scalar(acc / T::of(b.max(1) as f64));
        Ok(self.push(
            value,
            Op::KlGaussian {
                mu_q,
                var_q,
                mu_p,
                var_p,
            },
            &[mu_q, var_q, mu_p, var_p],
        ))
    }

    /// Bernoulli KL `KL(beta || sigmoid(z))` of a scalar `z`.
    pub fn kl_bernoulli(&mut self, z: Var, beta: T) -> Result<Var> {
        if !(beta > T::zero() && beta < T::one()) {
            return Err(Error::contract(format!("sparsity target {beta} outside (0, 1)")));
        }
        let zv = self.value(z).item()?;
        let value = Tensor::scalar(bernoulli_kl(beta, zv));
        Ok(self.push(value, Op::KlBernoulli { z, beta }, &[z]))
    }

    // ---- reverse sweep ---------------------------------------------------

    /// Populates gradients of `loss` on every parameter leaf. Intermediate
    /// gradients are consumed; leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_with(loss, Tensor::full(self.value(loss).shape(), T::one()))
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient for `root`.
    pub fn backward_with(&mut self, root: Var, seed: Tensor<T>) -> Result<()> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::dim("seed gradient shape differs from root"));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.accumulate(root, seed);
        for id in (0..=root.0).rev() {
            if matches!(self.nodes[id].op, Op::Leaf) || !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[id].grad.take() else {
                continue;
            };
            for (parent, contribution) in self.local_grads(id, &g)? {
                if self.nodes[parent.0].requires_grad {
                    self.accumulate(parent, contribution);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        let node = &mut self.nodes[v.0];
        match node.grad.as_mut() {
            Some(existing) => existing.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, id: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[id];
        let out = &node.value;
        let like = |v: Var, data: Vec<T>| Tensor::new(self.value(v).shape(), data);
        let gd = g.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                pad_before,
            } => {
                let [b, c_in, h, w] = self.value(*input).dims4()?;
                let [c_out, _, k, _] = self.value(*kernel).dims4()?;
                let geom = ConvGeom {
                    batch: b,
                    c_in,
                    c_out,
                    height: h,
                    width: w,
                    k,
                    pad_before: *pad_before,
                };
                let grads = conv::backward(
                    &geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    gd,
                    (self.rg(*input), self.rg(*kernel), self.rg(*bias)),
                );
                if let Some(d) = grads.input {
                    res.push((*input, like(*input, d)?));
                }
                if let Some(d) = grads.kernel {
                    res.push((*kernel, like(*kernel, d)?));
                }
                if let Some(d) = grads.bias {
                    res.push((*bias, like(*bias, d)?));
                }
            }
            Op::AvgPool2(x) => {
                let [b, c, h, w] = self.value(*x).dims4()?;
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::of(0.25);
                let mut d = vec![T::zero(); b * c * h * w];
                for (dp, gp) in d.chunks_exact_mut(h * w).zip(gd.chunks_exact(ho * wo)) {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let v = gp[y * wo + xx] * quarter;
                            let i = 2 * y * w + 2 * xx;
                            dp[i] = v;
                            dp[i + 1] = v;
                            dp[i + w] = v;
                            dp[i + w + 1] = v;
                        }
                    }
                }
                res.push((*x, like(*x, d)?));
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let d = gd
                    .iter()
                    .zip(xd)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                res.push((*x, like(*x, d)?));
            }
            Op::Sigmoid(x) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                res.push((*x, like(*x, d)?));
            }
            Op::Softplus(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &v)| g * sigmoid(v))
                    .collect();
                res.push((*x, like(*x, d)?));
            }
            Op::Exp(x) => {
                let d = gd.iter().zip(out.data()).map(|(&g, &y)| g * y).collect();
                res.push((*x, like(*x, d)?));
            }
            Op::Sqrt(x) => {
                let half = T::of(0.5);
                let d = gd.iter().zip(out.data()).map(|(&g, &y)| g * half / y).collect();
                res.push((*x, like(*x, d)?));
            }
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    res.push((*a, like(*a, gd.iter().zip(bd).map(|(&g, &y)| g * y).collect())?));
                }
                if self.rg(*b) {
                    res.push((*b, like(*b, gd.iter().zip(ad).map(|(&g, &x)| g * x).collect())?));
                }
            }
            Op::Scale(x, f) => res.push((*x, g.map(|v| v * *f))),
            Op::AddScalar(x) => res.push((*x, g.clone())),
            Op::MulGrid { x, grid } => {
                let gv = self.value(*grid).data();
                let n = gv.len();
                if self.rg(*x) {
                    let d = gd
                        .chunks_exact(n)
                        .flat_map(|s| s.iter().zip(gv).map(|(&a, &b)| a * b))
                        .collect();
                    res.push((*x, like(*x, d)?));
                }
                if self.rg(*grid) {
                    let mut d = vec![T::zero(); n];
                    for (gs, xs) in gd.chunks_exact(n).zip(self.value(*x).data().chunks_exact(n)) {
                        for ((acc, &a), &b) in d.iter_mut().zip(gs).zip(xs) {
                            *acc = *acc + a * b;
                        }
                    }
                    res.push((*grid, like(*grid, d)?));
                }
            }
            Op::Hadamard2d(x) => {
                let [_, _, h, w] = self.value(*x).dims4()?;
                let mut d = g.clone();
                for plane in d.data_mut().chunks_exact_mut(h * w) {
                    wht::ht2d_plane(plane, h, w);
                }
                res.push((*x, d));
            }
            Op::SoftThreshold { x, t } | Op::HardThreshold { x, t } => {
                let td = self.value(*t).data();
                let n = td.len();
                let xd = self.value(*x).data();
                if self.rg(*x) {
                    let d = gd
                        .chunks_exact(n)
                        .zip(xd.chunks_exact(n))
                        .flat_map(|(gs, xs)| {
                            gs.iter()
                                .zip(xs)
                                .zip(td)
                                .map(|((&gg, &v), &th)| if v.abs() > th { gg } else { T::zero() })
                        })
                        .collect();
                    res.push((*x, like(*x, d)?));
                }
                if self.rg(*t) {
                    let mut d = vec![T::zero(); n];
                    for (gs, xs) in gd.chunks_exact(n).zip(xd.chunks_exact(n)) {
                        for (((acc, &gg), &v), &th) in d.iter_mut().zip(gs).zip(xs).zip(td) {
                            if v.abs() > th {
                                *acc = *acc - gg * sign(v);
                            }
                        }
                    }
                    res.push((*t, like(*t, d)?));
                }
            }
            Op::Concat(parts) => {
                let [b, c, h, w] = out.dims4()?;
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(b * pc * hw);
                        for bi in 0..b {
                            let start = (bi * c + offset) * hw;
                            d.extend_from_slice(&gd[start..start + pc * hw]);
                        }
                        res.push((p, like(p, d)?));
                    }
                    offset += pc;
                }
            }
            Op::BroadcastSpatial(v) => {
                let [_, _, h, w] = out.dims4()?;
                let d = gd
                    .chunks_exact(h * w)
                    .map(|p| p.iter().fold(T::zero(), |a, &x| a + x))
                    .collect();
                res.push((*v, like(*v, d)?));
            }
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] = self.value(*x).dims4()?;
                let inv = T::of(1.0 / (h * w) as f64);
                let d = gd.iter().flat_map(|&gg| std::iter::repeat_n(gg * inv, h * w)).collect();
                res.push((*x, like(*x, d)?));
            }
            Op::Linear { x, w, b } => {
                let [batch, fin] = self.value(*x).dims2()?;
                let fout = self.value(*b).len();
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                if self.rg(*x) {
                    let mut d = vec![T::zero(); batch * fin];
                    for bi in 0..batch {
                        for o in 0..fout {
                            let gg = gd[bi * fout + o];
                            for i in 0..fin {
                                d[bi * fin + i] = d[bi * fin + i] + gg * wd[o * fin + i];
                            }
                        }
                    }
                    res.push((*x, like(*x, d)?));
                }
                if self.rg(*w) {
                    let mut d = vec![T::zero(); fout * fin];
                    for bi in 0..batch {
                        for o in 0..fout {
                            let gg = gd[bi * fout + o];
                            for i in 0..fin {
                                d[o * fin + i] = d[o * fin + i] + gg * xd[bi * fin + i];
                            }
                        }
                    }
                    res.push((*w, like(*w, d)?));
                }
                if self.rg(*b) {
                    let mut d = vec![T::zero(); fout];
                    for bi in 0..batch {
                        for o in 0..fout {
                            d[o] = d[o] + gd[bi * fout + o];
                        }
                    }
                    res.push((*b, like(*b, d)?));
                }
            }
            Op::Sum(x) => {
                let s = gd[0];
                res.push((*x, Tensor::full(self.value(*x).shape(), s)));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let s = gd[0] / T::of(n as f64);
                res.push((*x, Tensor::full(self.value(*x).shape(), s)));
            }
            Op::Mse(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let k = gd[0] * T::of(2.0 / ad.len().max(1) as f64);
                let diff: Vec<T> = ad.iter().zip(bd).map(|(&x, &y)| (x - y) * k).collect();
                if self.rg(*b) {
                    res.push((*b, like(*b, diff.iter().map(|&v| -v).collect())?));
                }
                if self.rg(*a) {
                    res.push((*a, like(*a, diff)?));
                }
            }
            Op::Tv(x) => {
                let [b, c, h, w] = self.value(*x).dims4()?;
                let norm = gd[0] * T::of(1.0 / ((h * w) as f64 * (b * c).max(1) as f64));
                let mut d = vec![T::zero(); b * c * h * w];
                for (dp, p) in d.chunks_exact_mut(h * w).zip(self.value(*x).data().chunks_exact(h * w)) {
                    tv_plane_grad(p, h, w, norm, dp);
                }
                res.push((*x, like(*x, d)?));
            }
            Op::KlGaussian {
                mu_q,
                var_q,
                mu_p,
                var_p,
            } => {
                let b = self.value(*mu_q).shape()[0].max(1);
                let s = gd[0] / T::of(b as f64);
                let half = T::of(0.5);
                let (mq, vq, mp, vp) = (
                    self.value(*mu_q).data(),
                    self.value(*var_q).data(),
                    self.value(*mu_p).data(),
                    self.value(*var_p).data(),
                );
                let n = mq.len();
                let (mut dmq, mut dvq, mut dmp, mut dvp) = (
                    Vec::with_capacity(n),
                    Vec::with_capacity(n),
                    Vec::with_capacity(n),
                    Vec::with_capacity(n),
                );
                for i in 0..n {
                    let d = mq[i] - mp[i];
                    dmq.push(s * d / vp[i]);
                    dmp.push(-s * d / vp[i]);
                    dvq.push(s * half * (T::one() / vp[i] - T::one() / vq[i]));
                    dvp.push(s * half * (T::one() / vp[i] - (vq[i] + d * d) / (vp[i] * vp[i])));
                }
                for (v, d) in [(*mu_q, dmq), (*var_q, dvq), (*mu_p, dmp), (*var_p, dvp)] {
                    if self.rg(v) {
                        res.push((v, like(v, d)?));
                    }
                }
            }
            Op::KlBernoulli { z, beta } => {
                let rho = sigmoid(self.value(*z).item()?);
                res.push((*z, like(*z, vec![gd[0] * (rho - *beta)])?));
            }
        }
        Ok(res)
    }
}

fn tv_plane<T: Real>(p: &[T], h: usize, w: usize) -> T {
    let mut acc = T::zero();
    for y in 0..h {
        for x in 0..w {
            let v = p[y * w + x];
            if x + 1 < w {
                acc = acc + (p[y * w + x + 1] - v).abs();
            }
            if y + 1 < h {
                acc = acc + (p[(y + 1) * w + x] - v).abs();
            }
        }
    }
    acc
}

fn tv_plane_grad<T: Real>(p: &[T], h: usize, w: usize, scale: T, d: &mut [T]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                let s = sign(p[i + 1] - p[i]) * scale;
                d[i + 1] = d[i + 1] + s;
                d[i] = d[i] - s;
            }
            if y + 1 < h {
                let s = sign(p[i + w] - p[i]) * scale;
                d[i + w] = d[i + w] + s;
                d[i] = d[i] - s;
            }
        }
    }
}

/// `beta ln(beta/rho) + (1-beta) ln((1-beta)/(1-rho))` with `rho = sigmoid(z)`,
/// evaluated through log-sigmoids to stay finite for large `|z|`.
pub(crate) fn bernoulli_kl<T: Real>(beta: T, z: T) -> T {
    // ln sigmoid(z) = -softplus(-z), ln(1 - sigmoid(z)) = -softplus(z)
    let ln_rho = -softplus(-z);
    let ln_one_minus = -softplus(z);
    let one_minus_beta = T::one() - beta;
    beta * (beta.ln() - ln_rho) + one_minus_beta * (one_minus_beta.ln() - ln_one_minus)
}
