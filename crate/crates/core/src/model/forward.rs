//! Graph construction for the three sub-networks and the training objective.

use super::params::{Conv, Encoder, Fusion, HuNet, Linear, Network};
use super::ModelConfig;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;
use crate::latent::VARIANCE_FLOOR;
use crate::layers::ht_block_with_threshold;
use crate::loss::LossWeights;
use crate::real::Real;

/// Offset added after the softplus head so the field never reaches zero.
pub const FIELD_FLOOR: f64 = 1e-3;

fn conv<T: Real>(g: &mut Graph<T>, x: Var, p: &Conv<Var>) -> Result<Var> {
    g.conv2d(x, p.weight, p.bias)
}

fn conv_relu<T: Real>(g: &mut Graph<T>, x: Var, p: &Conv<Var>) -> Result<Var> {
    let y = conv(g, x, p)?;
    Ok(g.relu(y))
}

fn linear<T: Real>(g: &mut Graph<T>, x: Var, p: &Linear<Var>) -> Result<Var> {
    g.linear(x, p.weight, p.bias)
}

#[derive(Clone, Debug)]
pub struct HunetOutput {
    /// Scalar field `[B, 1, M, M]`, strictly positive.
    pub field: Var,
    /// Output of each hard-thresholding layer.
    pub thresholded: Vec<Var>,
}

/// conv(k1) -> HT block -> conv(k2) -> HT block -> conv(k3) (+ skip from the
/// first conv) -> conv(k4) -> softplus head.
pub fn hunet<T: Real>(g: &mut Graph<T>, p: &HuNet<Var>, x: Var) -> Result<HunetOutput> {
    let t = [g.softplus(p.ht1.theta), g.softplus(p.ht2.theta)];
    hunet_with_thresholds(g, p, x, t)
}

/// As [`hunet`], with both threshold grids already mapped through softplus.
pub fn hunet_with_thresholds<T: Real>(g: &mut Graph<T>, p: &HuNet<Var>, x: Var, t: [Var; 2]) -> Result<HunetOutput> {
    let a1 = conv_relu(g, x, &p.conv1)?;
    let b1 = ht_block_with_threshold(g, a1, p.ht1.scale, t[0])?;
    let a2 = conv_relu(g, b1.spatial, &p.conv2)?;
    let b2 = ht_block_with_threshold(g, a2, p.ht2.scale, t[1])?;
    let h3 = conv(g, b2.spatial, &p.conv3)?;
    let skip = g.add(h3, a1)?;
    let a3 = g.relu(skip);
    let pre = conv(g, a3, &p.conv4)?;
    let sp = g.softplus(pre);
    let field = g.add_scalar(sp, T::of(FIELD_FLOOR));
    Ok(HunetOutput {
        field,
        thresholded: vec![b1.thresholded, b2.thresholded],
    })
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[B, D]`
    pub mean: Var,
    /// `[B, D]`, `exp(log_var) + floor`
    pub var: Var,
}

/// Two blocks of ReLU convolutions with a 2x2 average pool between them,
/// global average pooling and linear heads for mean and log-variance.
pub fn encoder<T: Real>(g: &mut Graph<T>, p: &Encoder<Var>, x: Var, layers_per_block: usize) -> Result<EncoderOutput> {
    let mut h = x;
    for (i, c) in p.convs.iter().enumerate() {
        if i == layers_per_block {
            h = g.avgpool2(h)?;
        }
        h = conv_relu(g, h, c)?;
    }
    let pooled = g.global_avg_pool(h)?;
    let mean = linear(g, pooled, &p.mean)?;
    let log_var = linear(g, pooled, &p.log_var)?;
    let e = g.exp(log_var);
    let var = g.add_scalar(e, T::of(VARIANCE_FLOOR));
    Ok(EncoderOutput { mean, var })
}

/// Concatenates the prototype with the spatially broadcast latent and runs
/// three 1x1 convolutions (ReLU, ReLU, linear).
pub fn fusion<T: Real>(g: &mut Graph<T>, p: &Fusion<Var>, prototype: Var, latent: Var) -> Result<Var> {
    let [_, _, h, w] = g.value(prototype).dims4()?;
    let r = g.broadcast_spatial(latent, h, w)?;
    let cat = g.concat_channels(&[prototype, r])?;
    let a = conv_relu(g, cat, &p.conv1)?;
    let b = conv_relu(g, a, &p.conv2)?;
    conv(g, b, &p.conv3)
}

/// Handles to every term of one training evaluation.
#[derive(Clone, Debug)]
pub struct TrainingTerms {
    pub total: Var,
    pub kl: Var,
    pub sparsity: Var,
    pub tv: Var,
    pub mse: Var,
    pub field: Var,
    pub output: Var,
    pub posterior: EncoderOutput,
    pub prior: EncoderOutput,
}

/// Training path: posterior sample drives the fusion block.
/// `x`, `y`: `[B, 1, M, M]`; `eps`: standard normal `[B, D]`.
pub fn training_terms<T: Real>(
    g: &mut Graph<T>,
    p: &Network<Var>,
    cfg: &ModelConfig,
    x: Var,
    y: Var,
    eps: Var,
    w: &LossWeights,
) -> Result<TrainingTerms> {
    let hu = hunet(g, &p.hunet, x)?;
    let prototype = g.mul(x, hu.field)?;
    let xy = g.concat_channels(&[x, y])?;
    let posterior = encoder(g, &p.posterior, xy, cfg.encoder_layers)?;
    let prior = encoder(g, &p.prior, x, cfg.encoder_layers)?;

    let sd = g.sqrt(posterior.var);
    let noise = g.mul(sd, eps)?;
    let r = g.add(posterior.mean, noise)?;
    let output = fusion(g, &p.fusion, prototype, r)?;

    let kl = g.kl_gaussian(posterior.mean, posterior.var, prior.mean, prior.var)?;
    let mut sparsity: Option<Var> = None;
    for &z in &hu.thresholded {
        let zbar = g.mean(z)?;
        let term = g.kl_bernoulli(zbar, T::of(w.beta))?;
        sparsity = Some(match sparsity {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let sparsity = match sparsity {
        Some(s) => s,
        None => g.constant(Tensor::scalar(T::zero())),
    };
    let tv = g.tv(hu.field)?;
    let mse = g.mse(output, y)?;

    let terms = [(kl, w.kl), (sparsity, w.sparsity), (tv, w.tv), (mse, w.mse)];
    let mut total: Option<Var> = None;
    for (v, lambda) in terms {
        let s = g.scale(v, T::of(lambda));
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    Ok(TrainingTerms {
        total: total.expect("four terms"),
        kl,
        sparsity,
        tv,
        mse,
        field: hu.field,
        output,
        posterior,
        prior,
    })
}
