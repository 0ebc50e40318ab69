//! Diagonal Gaussians over the latent space and reparameterized sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Smallest variance a network head may emit.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl LatentGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::dim(format!(
                "latent mean has {} entries, variance {}",
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::contract("latent variances must be positive"));
        }
        Ok(LatentGaussian { mean, var })
    }

    /// Clamps variances up to [`VARIANCE_FLOOR`].
    pub fn with_floor(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        let var = var.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        Self::new(mean, var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }
}

/// `u + sqrt(V) * eps` for a given standard-normal `eps`.
pub fn reparameterize(g: &LatentGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.dim() {
        return Err(Error::dim("noise and latent dimensions differ"));
    }
    Ok(g.mean
        .iter()
        .zip(&g.var)
        .zip(eps)
        .map(|((&u, &v), &e)| u + v.sqrt() * e)
        .collect())
}

pub fn standard_normal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn sample_latent(g: &LatentGaussian, rng: &mut impl Rng) -> Vec<f64> {
    let eps = standard_normal(rng, g.dim());
    reparameterize(g, &eps).expect("noise drawn at latent dimension")
}
