//! The full probabilistic correction model: scalar-field extractor, prior
//! and posterior encoders, and the fusion block.

pub mod forward;
mod infer;
pub mod params;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::latent::{standard_normal, LatentGaussian};
use crate::layers::softplus_inverse;
use crate::real::{Precision, Real};
use infer::PreparedNet;

pub use forward::{EncoderOutput, HunetOutput, TrainingTerms, FIELD_FLOOR};
pub use params::{Conv, Encoder, Fusion, HtBlock, HuNet, Linear, Network, ParamTree};

/// Initial threshold of every transform-domain coefficient.
pub const INITIAL_THRESHOLD: f64 = 1e-3;

pub const MAX_IMAGE_SIZE: usize = 4096;
/// Upper bound on any channel count, kernel size, layer count or latent size.
pub const MAX_WIDTH: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Side length `M` of the square slices the model accepts.
    pub image_size: usize,
    /// Output channels of the first three extractor convolutions.
    pub hunet_channels: [usize; 3],
    /// Kernel sizes of the four extractor convolutions.
    pub hunet_kernels: [usize; 4],
    /// Filters of the two encoder blocks.
    pub encoder_channels: [usize; 2],
    /// Convolutions per encoder block.
    pub encoder_layers: usize,
    pub encoder_kernel: usize,
    pub fusion_channels: usize,
    pub latent_dim: usize,
}

impl ModelConfig {
    /// Full-width network.
    pub fn reference(image_size: usize) -> Self {
        ModelConfig {
            image_size,
            hunet_channels: [32, 64, 32],
            hunet_kernels: [16, 7, 7, 16],
            encoder_channels: [32, 64],
            encoder_layers: 4,
            encoder_kernel: 3,
            fusion_channels: 32,
            latent_dim: 6,
        }
    }

    /// Narrow variant sized for single-core training runs.
    pub fn desk(image_size: usize) -> Self {
        ModelConfig {
            hunet_channels: [8, 16, 8],
            encoder_channels: [8, 16],
            encoder_layers: 2,
            fusion_channels: 16,
            ..Self::reference(image_size)
        }
    }

    /// Smallest sensible network, for gradient checks.
    pub fn tiny(image_size: usize) -> Self {
        ModelConfig {
            image_size,
            hunet_channels: [2, 3, 2],
            hunet_kernels: [4, 3, 3, 4],
            encoder_channels: [2, 3],
            encoder_layers: 1,
            encoder_kernel: 3,
            fusion_channels: 3,
            latent_dim: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.image_size;
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::Config(format!("image_size {m} must be a power of two >= 2")));
        }
        if self.hunet_channels[0] != self.hunet_channels[2] {
            return Err(Error::Config(
                "hunet_channels[0] and [2] must match for the skip connection".into(),
            ));
        }
        let mut counts = self
            .hunet_channels
            .iter()
            .chain(&self.hunet_kernels)
            .chain(&self.encoder_channels)
            .chain([
                &self.encoder_layers,
                &self.encoder_kernel,
                &self.fusion_channels,
                &self.latent_dim,
            ]);
        if counts.clone().any(|&v| v == 0) {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if m > MAX_IMAGE_SIZE || counts.any(|&v| v > MAX_WIDTH) {
            return Err(Error::Config(format!(
                "model sizes exceed limits (image {MAX_IMAGE_SIZE}, widths {MAX_WIDTH})"
            )));
        }
        Ok(())
    }
}

/// Strictly positive multiplicative correction.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField(Image);

impl ScalarField {
    pub fn new(u: Image) -> Result<Self> {
        if u.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::contract("scalar field must be strictly positive"));
        }
        Ok(ScalarField(u))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    /// Prototype corrected image `x * U`.
    pub fn apply(&self, x: &Image) -> Result<Image> {
        x.zip_with(&self.0, |a, b| a * b)
    }
}

/// Per-slice min-max map to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMax {
    pub lo: f64,
    pub scale: f64,
}

impl MinMax {
    pub fn fit(img: &Image) -> Self {
        let (lo, hi) = img.min_max();
        let range = hi - lo;
        MinMax {
            lo,
            scale: if range > 0.0 { range } else { 1.0 },
        }
    }

    pub fn apply(&self, img: &Image) -> Image {
        img.map(|v| (v - self.lo) / self.scale)
    }

    pub fn invert(&self, img: &Image) -> Image {
        img.map(|v| v * self.scale + self.lo)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub net: Network<Tensor>,
}

fn he(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

fn conv_init(rng: &mut impl Rng, c_out: usize, c_in: usize, k: usize) -> Conv<Tensor> {
    Conv {
        weight: he(rng, &[c_out, c_in, k, k], c_in * k * k),
        bias: Tensor::zeros(&[c_out]),
    }
}

fn ht_init(c: usize, m: usize) -> HtBlock<Tensor> {
    HtBlock {
        scale: Tensor::ones(&[c, m, m]),
        theta: Tensor::full(&[c, m, m], softplus_inverse(INITIAL_THRESHOLD)),
    }
}

fn head_init(rng: &mut impl Rng, out: usize, inp: usize) -> Linear<Tensor> {
    let dist = Normal::new(0.0, 0.01).expect("positive std");
    Linear {
        weight: Tensor::from_fn(&[out, inp], |_| dist.sample(rng)),
        bias: Tensor::zeros(&[out]),
    }
}

fn encoder_init(rng: &mut impl Rng, cfg: &ModelConfig, c_in: usize) -> Encoder<Tensor> {
    let k = cfg.encoder_kernel;
    let mut convs = Vec::new();
    let mut c = c_in;
    for &width in &cfg.encoder_channels {
        for _ in 0..cfg.encoder_layers {
            convs.push(conv_init(rng, width, c, k));
            c = width;
        }
    }
    Encoder {
        convs,
        mean: head_init(rng, cfg.latent_dim, c),
        log_var: head_init(rng, cfg.latent_dim, c),
    }
}

/// 1x1 convolutions whose first channel carries the prototype through
/// unchanged; the remaining channels are randomly initialized and feed
/// nothing until trained.
fn fusion_init(rng: &mut impl Rng, cfg: &ModelConfig) -> Fusion<Tensor> {
    let f = cfg.fusion_channels;
    let c_in = 1 + cfg.latent_dim;
    let mut conv1 = conv_init(rng, f, c_in, 1);
    let mut conv2 = conv_init(rng, f, f, 1);
    let mut conv3 = conv_init(rng, 1, f, 1);
    let w1 = conv1.weight.data_mut();
    w1[..c_in].fill(0.0);
    w1[0] = 1.0;
    let w2 = conv2.weight.data_mut();
    w2[..f].fill(0.0);
    w2[0] = 1.0;
    let w3 = conv3.weight.data_mut();
    w3.fill(0.0);
    w3[0] = 1.0;
    Fusion { conv1, conv2, conv3 }
}

impl ModelParams {
    /// Random initialization whose extractor outputs `U = 1` and whose fusion
    /// block passes the prototype through, so the untrained model is the
    /// identity map.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.hunet_channels;
        let [k1, k2, k3, k4] = config.hunet_kernels;
        let m = config.image_size;
        let mut conv4 = conv_init(rng, 1, c3, k4);
        conv4.weight.data_mut().fill(0.0);
        conv4.bias.data_mut()[0] = softplus_inverse(1.0 - FIELD_FLOOR);
        let hunet = HuNet {
            conv1: conv_init(rng, c1, 1, k1),
            ht1: ht_init(c1, m),
            conv2: conv_init(rng, c2, c1, k2),
            ht2: ht_init(c2, m),
            conv3: conv_init(rng, c3, c2, k3),
            conv4,
        };
        let prior = encoder_init(rng, &config, 1);
        let posterior = encoder_init(rng, &config, 2);
        let fusion = fusion_init(rng, &config);
        Ok(ModelParams {
            config,
            net: Network {
                hunet,
                prior,
                posterior,
                fusion,
            },
        })
    }

    /// Shape each leaf must have under this configuration, in canonical
    /// order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        shape_tree(config)
            .leaves()
            .into_iter()
            .map(|(n, s)| (n, s.clone()))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.net.num_parameters()
    }

    pub fn all_finite(&self) -> bool {
        self.net.leaves().iter().all(|(_, t)| t.all_finite())
    }

    /// Name of the first leaf holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.net
            .leaves()
            .into_iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(n, _)| n)
    }

    fn check_input(&self, x: &Image) -> Result<()> {
        check_input(&self.config, x)
    }
}

/// The model runs on square power-of-two slices of its configured size only.
fn check_input(cfg: &ModelConfig, x: &Image) -> Result<()> {
    let m = cfg.image_size;
    if x.height() != m || x.width() != m {
        return Err(Error::dim(format!(
            "model expects {m}x{m} slices, got {}x{}; supported sizes are powers of two and must match the trained model",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

fn conv_shape(c_out: usize, c_in: usize, k: usize) -> Conv<Vec<usize>> {
    Conv {
        weight: vec![c_out, c_in, k, k],
        bias: vec![c_out],
    }
}

fn encoder_shape(cfg: &ModelConfig, c_in: usize) -> Encoder<Vec<usize>> {
    let mut convs = Vec::new();
    let mut c = c_in;
    for &width in &cfg.encoder_channels {
        for _ in 0..cfg.encoder_layers {
            convs.push(conv_shape(width, c, cfg.encoder_kernel));
            c = width;
        }
    }
    let head = || Linear {
        weight: vec![cfg.latent_dim, c],
        bias: vec![cfg.latent_dim],
    };
    Encoder {
        convs,
        mean: head(),
        log_var: head(),
    }
}

/// Leaf shapes without allocating any parameters.
pub fn shape_tree(cfg: &ModelConfig) -> Network<Vec<usize>> {
    let [c1, c2, c3] = cfg.hunet_channels;
    let [k1, k2, k3, k4] = cfg.hunet_kernels;
    let m = cfg.image_size;
    let ht = |c| HtBlock {
        scale: vec![c, m, m],
        theta: vec![c, m, m],
    };
    let f = cfg.fusion_channels;
    Network {
        hunet: HuNet {
            conv1: conv_shape(c1, 1, k1),
            ht1: ht(c1),
            conv2: conv_shape(c2, c1, k2),
            ht2: ht(c2),
            conv3: conv_shape(c3, c2, k3),
            conv4: conv_shape(1, c3, k4),
        },
        prior: encoder_shape(cfg, 1),
        posterior: encoder_shape(cfg, 2),
        fusion: Fusion {
            conv1: conv_shape(f, 1 + cfg.latent_dim, 1),
            conv2: conv_shape(f, f, 1),
            conv3: conv_shape(1, f, 1),
        },
    }
}

/// Records parameters into `g`, as trainable leaves or constants.
pub fn bind<T: Real>(g: &mut Graph<T>, net: &Network<Tensor>, trainable: bool) -> Network<Var> {
    net.map_params(&mut |t| {
        let v = t.cast::<T>();
        if trainable {
            g.param(v)
        } else {
            g.constant(v)
        }
    })
}

fn batch_of<T: Real>(imgs: &[&Image]) -> Result<Tensor<T>> {
    let (h, w) = (imgs[0].height(), imgs[0].width());
    let mut data = Vec::with_capacity(imgs.len() * h * w);
    for img in imgs {
        if img.height() != h || img.width() != w {
            return Err(Error::dim("batch slices differ in shape"));
        }
        data.extend(img.data().iter().map(|&v| T::of(v)));
    }
    Tensor::new(&[imgs.len(), 1, h, w], data)
}

/// Stacks single-channel slices into `[B, 1, H, W]`.
pub fn stack<T: Real>(imgs: &[&Image]) -> Result<Tensor<T>> {
    if imgs.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    batch_of(imgs)
}

/// Splits `[B, 1, H, W]` back into slices.
pub fn unstack<T: Real>(t: &Tensor<T>) -> Result<Vec<Image>> {
    let [b, c, h, w] = t.dims4()?;
    if c != 1 {
        return Err(Error::dim(format!("expected one channel, got {c}")));
    }
    let plane = h * w;
    (0..b)
        .map(|i| {
            let data = t.data()[i * plane..(i + 1) * plane]
                .iter()
                .map(|&v| Real::to_f64(v))
                .collect();
            Image::new(h, w, data)
        })
        .collect()
}

fn to_gaussians<T: Real>(g: &Graph<T>, out: &EncoderOutput) -> Result<Vec<LatentGaussian>> {
    let [b, d] = g.value(out.mean).dims2()?;
    let means = g.value(out.mean).data();
    let vars = g.value(out.var).data();
    (0..b)
        .map(|i| {
            let row = |s: &[T]| s[i * d..(i + 1) * d].iter().map(|&v| Real::to_f64(v)).collect();
            LatentGaussian::with_floor(row(means), row(vars))
        })
        .collect()
}

/// Scalar field and the thresholded spectra of each transform block, for a
/// normalized slice.
pub fn hunet_forward(p: &ModelParams, x: &Image) -> Result<(ScalarField, Vec<Tensor>)> {
    p.check_input(x)?;
    let mut g = Graph::<f64>::new();
    let net = bind(&mut g, &p.net, false);
    let xv = g.constant(stack(&[x])?);
    let out = forward::hunet(&mut g, &net.hunet, xv)?;
    let u = unstack(g.value(out.field))?.remove(0);
    let z = out.thresholded.iter().map(|&v| g.value(v).clone()).collect();
    Ok((ScalarField::new(u)?, z))
}

pub fn prior_forward(p: &ModelParams, x: &Image) -> Result<LatentGaussian> {
    p.check_input(x)?;
    let mut g = Graph::<f64>::new();
    let net = bind(&mut g, &p.net, false);
    let xv = g.constant(stack(&[x])?);
    let out = forward::encoder(&mut g, &net.prior, xv, p.config.encoder_layers)?;
    Ok(to_gaussians(&g, &out)?.remove(0))
}

pub fn posterior_forward(p: &ModelParams, x: &Image, y: &Image) -> Result<LatentGaussian> {
    p.check_input(x)?;
    if !x.same_shape(y) {
        return Err(Error::dim("input and reference differ in shape"));
    }
    let mut g = Graph::<f64>::new();
    let net = bind(&mut g, &p.net, false);
    let xv = g.constant(stack(&[x])?);
    let yv = g.constant(stack(&[y])?);
    let xy = g.concat_channels(&[xv, yv])?;
    let out = forward::encoder(&mut g, &net.posterior, xy, p.config.encoder_layers)?;
    Ok(to_gaussians(&g, &out)?.remove(0))
}

/// Fusion of a prototype with one latent vector.
pub fn fuse(p: &ModelParams, prototype: &Image, r: &[f64]) -> Result<Image> {
    if r.len() != p.config.latent_dim {
        return Err(Error::dim(format!(
            "latent has {} entries, model expects {}",
            r.len(),
            p.config.latent_dim
        )));
    }
    let mut g = Graph::<f64>::new();
    let net = bind_fusion(&mut g, &p.net.fusion);
    let pv = g.constant(stack(&[prototype])?);
    let rv = g.constant(Tensor::new(&[1, r.len()], r.to_vec())?);
    let out = forward::fusion(&mut g, &net, pv, rv)?;
    Ok(unstack(g.value(out))?.remove(0))
}

fn bind_fusion<T: Real>(g: &mut Graph<T>, f: &Fusion<Tensor>) -> Fusion<Var> {
    f.map_params(&mut |t| g.constant(t.cast::<T>()))
}

/// Result of correcting one slice.
#[derive(Clone, Debug)]
pub struct Correction {
    /// One output per prior draw, in the input's intensity units.
    pub samples: Vec<Image>,
    /// Fusion of the prototype with the prior mean.
    pub mean_latent: Image,
    pub field: ScalarField,
    /// `x * U` in the input's intensity units.
    pub prototype: Image,
    pub prior: LatentGaussian,
}

/// Test-time path: normalize, extract the field, draw `n_samples` latents
/// from the prior and fuse each with the prototype.
pub fn correct(p: &ModelParams, x: &Image, rng: &mut impl Rng, n_samples: usize) -> Result<Correction> {
    correct_with(p, x, rng, n_samples, Precision::F64)
}

pub fn correct_with(
    p: &ModelParams,
    x: &Image,
    rng: &mut impl Rng,
    n_samples: usize,
    precision: Precision,
) -> Result<Correction> {
    Corrector::new(p, precision).correct(x, rng, n_samples)
}

/// Weights cast to the execution precision once, with the thresholds
/// precomputed, for correcting many slices with one model.
#[derive(Clone, Debug)]
pub struct Corrector {
    config: ModelConfig,
    prepared: Prepared,
}

#[derive(Clone, Debug)]
enum Prepared {
    F64(PreparedNet<f64>),
    F32(PreparedNet<f32>),
}

impl Corrector {
    pub fn new(p: &ModelParams, precision: Precision) -> Self {
        let prepared = match precision {
            Precision::F64 => Prepared::F64(PreparedNet::new(&p.net)),
            Precision::F32 => Prepared::F32(PreparedNet::new(&p.net)),
        };
        Corrector {
            config: p.config.clone(),
            prepared,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn correct(&self, x: &Image, rng: &mut impl Rng, n_samples: usize) -> Result<Correction> {
        check_input(&self.config, x)?;
        match &self.prepared {
            Prepared::F64(p) => correct_in(&self.config, p, x, rng, n_samples),
            Prepared::F32(p) => correct_in(&self.config, p, x, rng, n_samples),
        }
    }
}

fn correct_in<T: Real>(
    cfg: &ModelConfig,
    p: &PreparedNet<T>,
    x: &Image,
    rng: &mut impl Rng,
    n_samples: usize,
) -> Result<Correction> {
    let norm = MinMax::fit(x);
    let xn: Vec<T> = norm.apply(x).data().iter().map(|&v| T::of(v)).collect();
    let f = infer::analyze(p, cfg.encoder_layers, &xn, cfg.image_size);
    let wide = |v: &[T]| v.iter().map(|&a| Real::to_f64(a)).collect::<Vec<f64>>();
    let prior = LatentGaussian::with_floor(wide(&f.prior_mean), wide(&f.prior_var))?;

    let mut latents = Vec::with_capacity(n_samples + 1);
    latents.push(prior.mean().to_vec());
    for _ in 0..n_samples {
        let eps = standard_normal(rng, cfg.latent_dim);
        latents.push(crate::latent::reparameterize(&prior, &eps)?);
    }
    let narrow: Vec<Vec<T>> = latents.iter().map(|l| l.iter().map(|&v| T::of(v)).collect()).collect();
    let outs = infer::fuse(p, &f.prototype, &narrow);
    let m = cfg.image_size;
    let image = |v: &[T]| Image::new(m, m, wide(v));
    let mean_latent = norm.invert(&image(&outs[0])?);
    let samples = outs[1..]
        .iter()
        .map(|o| Ok(norm.invert(&image(o)?)))
        .collect::<Result<_>>()?;
    Ok(Correction {
        samples,
        mean_latent,
        field: ScalarField::new(image(&f.field)?)?,
        prototype: norm.invert(&image(&f.prototype)?),
        prior,
    })
}

/// Adds independent Gaussian noise of standard deviation `sigma` to every
/// parameter.
pub fn perturb(p: &mut ModelParams, rng: &mut impl Rng, sigma: f64) {
    let dist = Normal::new(0.0, sigma).expect("non-negative sigma");
    for (_, t) in p.net.leaves_mut() {
        for v in t.data_mut() {
            *v += dist.sample(rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn slice(m: usize) -> Image {
        Image::from_fn(m, m, |y, x| 0.2 + 0.6 * ((y * 7 + x * 3) % 11) as f64 / 10.0)
    }

    #[test]
    fn identity_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(ModelConfig::desk(16), &mut rng).unwrap();
        let x = slice(16);
        let (u, z) = hunet_forward(&p, &x).unwrap();
        assert!(u.image().data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(z.len(), 2);
        let c = correct(&p, &x, &mut rng, 2).unwrap();
        for s in c.samples.iter().chain([&c.prototype, &c.mean_latent]) {
            for (a, b) in s.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inference_path_matches_recorded_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ModelParams::init(ModelConfig::desk(16), &mut rng).unwrap();
        perturb(&mut p, &mut rng, 0.05);
        let x = slice(16);
        let c = correct(&p, &x, &mut rng, 2).unwrap();
        let norm = MinMax::fit(&x);
        let xn = norm.apply(&x);
        let close = |a: &Image, b: &Image| a.data().iter().zip(b.data()).all(|(u, v)| (u - v).abs() < 1e-10);
        let (u, _) = hunet_forward(&p, &xn).unwrap();
        assert!(close(c.field.image(), u.image()));
        let prior = prior_forward(&p, &xn).unwrap();
        for (a, b) in c
            .prior
            .mean()
            .iter()
            .zip(prior.mean())
            .chain(c.prior.var().iter().zip(prior.var()))
        {
            assert!((a - b).abs() < 1e-10);
        }
        let proto = u.apply(&xn).unwrap();
        assert!(close(&c.prototype, &norm.invert(&proto)));
        let fused = fuse(&p, &proto, prior.mean()).unwrap();
        assert!(close(&c.mean_latent, &norm.invert(&fused)));
    }

    #[test]
    fn rejects_wrong_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(ModelConfig::tiny(8), &mut rng).unwrap();
        assert!(hunet_forward(&p, &Image::zeros(6, 6)).is_err());
        assert!(hunet_forward(&p, &Image::zeros(16, 16)).is_err());
        assert!(fuse(&p, &slice(8), &[0.0]).is_err());
    }

    #[test]
    fn shape_tree_matches_init() {
        let cfg = ModelConfig::desk(16);
        let p = ModelParams::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let got: Vec<_> = p
            .net
            .leaves()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        assert_eq!(got, ModelParams::expected_shapes(&cfg));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::reference(256).validate().is_ok());
        assert!(ModelConfig::desk(63).validate().is_err());
        let mut c = ModelConfig::desk(64);
        c.hunet_channels[2] += 1;
        assert!(c.validate().is_err());
        c = ModelConfig::desk(64);
        c.latent_dim = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn minmax_roundtrip() {
        let x = slice(8).map(|v| 3.0 * v + 5.0);
        let n = MinMax::fit(&x);
        let y = n.apply(&x);
        let (lo, hi) = y.min_max();
        assert!(lo.abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);
        let back = n.invert(&y);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(MinMax::fit(&Image::filled(2, 2, 4.0)).scale, 1.0);
    }

    #[test]
    fn reference_shapes() {
        let shapes = ModelParams::expected_shapes(&ModelConfig::reference(256));
        let find = |n: &str| shapes.iter().find(|(k, _)| k == n).unwrap().1.clone();
        assert_eq!(find("hunet.conv1.weight"), vec![32, 1, 16, 16]);
        assert_eq!(find("hunet.ht2.theta"), vec![64, 256, 256]);
        assert_eq!(find("prior.convs.7.weight"), vec![64, 64, 3, 3]);
        assert_eq!(find("posterior.convs.0.weight"), vec![32, 2, 3, 3]);
        assert_eq!(find("fusion.conv1.weight"), vec![32, 7, 1, 1]);
        assert_eq!(find("fusion.conv3.weight"), vec![1, 32, 1, 1]);
    }
}
