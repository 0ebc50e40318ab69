//! The four-term training objective, evaluated on plain values.
//!
//! The graph-side counterparts live on [`crate::autodiff::Graph`]
//! (`kl_gaussian`, `kl_bernoulli`, `tv`, `mse`) and share these formulas.

use serde::{Deserialize, Serialize};

use crate::autodiff::bernoulli_kl;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::latent::LatentGaussian;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Posterior/prior KL.
    pub kl: f64,
    /// Sparsity KL, summed over thresholding layers.
    pub sparsity: f64,
    /// Total variation of the scalar field.
    pub tv: f64,
    /// Reconstruction MSE.
    pub mse: f64,
    /// Target activation of the sparsity penalty, in (0, 1).
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            kl: 10.0,
            sparsity: 0.1,
            tv: 1.0,
            mse: 1.0,
            beta: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kl", self.kl),
            ("sparsity", self.sparsity),
            ("tv", self.tv),
            ("mse", self.mse),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be >= 0")));
            }
        }
        check_beta(self.beta)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::contract(format!("sparsity target {beta} outside (0, 1)")));
    }
    Ok(())
}

/// Closed-form `KL(F || G)` of diagonal Gaussians, summed over dimensions.
pub fn kl_gaussian(f: &LatentGaussian, g: &LatentGaussian) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::dim(format!(
            "latent dimensions {} and {} differ",
            f.dim(),
            g.dim()
        )));
    }
    let mut acc = 0.0;
    for d in 0..f.dim() {
        let (mq, vq) = (f.mean()[d], f.var()[d]);
        let (mp, vp) = (g.mean()[d], g.var()[d]);
        if !(vq > 0.0 && vp > 0.0) {
            return Err(Error::contract("KL needs positive variances"));
        }
        acc += 0.5 * ((vp / vq).ln() + (vq + (mq - mp).powi(2)) / vp - 1.0);
    }
    Ok(acc)
}

/// `KL(beta || sigmoid(z_bar))` between Bernoulli distributions.
pub fn kl_sparsity(z_bar: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(bernoulli_kl(beta, z_bar))
}

/// Anisotropic total variation divided by the pixel count.
pub fn tv_loss(u: &Image) -> f64 {
    let (h, w) = (u.height(), u.width());
    if h * w <= 1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = u.get(y, x);
            if x + 1 < w {
                acc += (u.get(y, x + 1) - v).abs();
            }
            if y + 1 < h {
                acc += (u.get(y + 1, x) - v).abs();
            }
        }
    }
    acc / (h * w) as f64
}

pub fn mse_loss(o: &Image, y: &Image) -> Result<f64> {
    if !o.same_shape(y) {
        return Err(Error::dim(format!(
            "mse of {}x{} and {}x{}",
            o.height(),
            o.width(),
            y.height(),
            y.width()
        )));
    }
    Ok(o.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / o.len().max(1) as f64)
}

/// Unweighted terms of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub kl: f64,
    /// Already summed over thresholding layers.
    pub sparsity: f64,
    pub tv: f64,
    pub mse: f64,
}

impl LossComponents {
    pub fn weighted(&self, w: &LossWeights) -> LossComponents {
        LossComponents {
            kl: w.kl * self.kl,
            sparsity: w.sparsity * self.sparsity,
            tv: w.tv * self.tv,
            mse: w.mse * self.mse,
        }
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        let c = self.weighted(w);
        c.kl + c.sparsity + c.tv + c.mse
    }

    /// Name of the first non-finite term, in objective order.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("kl", self.kl),
            ("sparsity", self.sparsity),
            ("tv", self.tv),
            ("mse", self.mse),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Evaluates every term on one example. `z_means` holds the mean output of
/// each thresholding layer.
pub fn loss_components(
    posterior: &LatentGaussian,
    prior: &LatentGaussian,
    z_means: &[f64],
    u: &Image,
    output: &Image,
    reference: &Image,
    beta: f64,
) -> Result<LossComponents> {
    let mut sparsity = 0.0;
    for &z in z_means {
        sparsity += kl_sparsity(z, beta)?;
    }
    Ok(LossComponents {
        kl: kl_gaussian(posterior, prior)?,
        sparsity,
        tv: tv_loss(u),
        mse: mse_loss(output, reference)?,
    })
}

/// Weighted objective. The reconstruction term compares the network output
/// with the reference image.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    posterior: &LatentGaussian,
    prior: &LatentGaussian,
    z_means: &[f64],
    u: &Image,
    output: &Image,
    reference: &Image,
    w: &LossWeights,
) -> Result<f64> {
    w.validate()?;
    Ok(loss_components(posterior, prior, z_means, u, output, reference, w.beta)?.total(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(m: &[f64], v: &[f64]) -> LatentGaussian {
        LatentGaussian::new(m.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn gaussian_kl_cases() {
        let f = gauss(&[0.2, -0.4], &[0.5, 2.0]);
        assert_eq!(kl_gaussian(&f, &f).unwrap(), 0.0);
        let k = kl_gaussian(&gauss(&[1.0], &[1.0]), &gauss(&[0.0], &[1.0])).unwrap();
        assert!((k - 0.5).abs() < 1e-15);
        let k = kl_gaussian(&gauss(&[0.0], &[2.0]), &gauss(&[0.0], &[1.0])).unwrap();
        assert!((k - (2.0 - 1.0 - 2f64.ln()) / 2.0).abs() < 1e-15);
        assert!(kl_gaussian(&gauss(&[0.0], &[1.0]), &gauss(&[0.0, 0.0], &[1.0, 1.0])).is_err());
    }

    #[test]
    fn sparsity_kl_cases() {
        assert!(kl_sparsity(0.0, 0.5).unwrap().abs() < 1e-15);
        let logit = (0.05f64 / 0.95).ln();
        assert!(kl_sparsity(logit, 0.05).unwrap().abs() < 1e-15);
        let expect = 0.05 * 0.1f64.ln() + 0.95 * 1.9f64.ln();
        assert!((kl_sparsity(0.0, 0.05).unwrap() - expect).abs() < 1e-15);
        assert!(kl_sparsity(0.0, 0.0).is_err());
        assert!(kl_sparsity(0.0, 1.0).is_err());
    }

    #[test]
    fn tv_cases() {
        assert_eq!(tv_loss(&Image::filled(4, 4, 0.3)), 0.0);
        let u = Image::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(tv_loss(&u), 0.5);
        assert_eq!(tv_loss(&Image::filled(1, 1, 5.0)), 0.0);
        let scaled = u.map(|v| -3.0 * v);
        assert!((tv_loss(&scaled) - 3.0 * tv_loss(&u)).abs() < 1e-15);
    }

    #[test]
    fn mse_cases() {
        let y = Image::from_fn(3, 3, |r, c| (r * c) as f64);
        assert_eq!(mse_loss(&y, &y).unwrap(), 0.0);
        assert_eq!(mse_loss(&y.map(|v| v + 1.0), &y).unwrap(), 1.0);
        assert!(mse_loss(&y, &Image::zeros(2, 3)).is_err());
    }

    #[test]
    fn zero_weights_give_zero() {
        let f = gauss(&[0.5], &[0.3]);
        let g = gauss(&[-0.5], &[1.3]);
        let u = Image::from_fn(4, 4, |r, c| 1.0 + 0.1 * (r + c) as f64);
        let o = Image::filled(4, 4, 0.2);
        let y = Image::filled(4, 4, 0.7);
        let zero = LossWeights {
            kl: 0.0,
            sparsity: 0.0,
            tv: 0.0,
            mse: 0.0,
            beta: 0.05,
        };
        assert_eq!(total_loss(&f, &g, &[0.3, -0.2], &u, &o, &y, &zero).unwrap(), 0.0);
        let mse_only = LossWeights { mse: 1.0, ..zero };
        assert_eq!(total_loss(&f, &g, &[0.3], &u, &y, &y, &mse_only).unwrap(), 0.0);
    }

    #[test]
    fn default_weights_match_reference() {
        let w = LossWeights::default();
        assert_eq!((w.kl, w.sparsity, w.tv, w.mse, w.beta), (10.0, 0.1, 1.0, 1.0, 0.05));
    }

    #[test]
    fn non_finite_component_named() {
        let c = LossComponents {
            kl: 1.0,
            sparsity: f64::NAN,
            tv: f64::INFINITY,
            mse: 0.0,
        };
        assert_eq!(c.first_non_finite(), Some("sparsity"));
    }
}
