//! Transform-domain layers: per-coefficient scaling and trainable hard
//! thresholding of Hadamard spectra.
//!
//! Thresholds are stored as unconstrained raw values `theta` and used as
//! `t = softplus(theta)`, which keeps them strictly positive while the
//! optimizer works in an unconstrained space.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::Real;
use crate::wht::Spectrum;

/// Per-coefficient multiplicative weights for one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingWeights(pub Image);

impl ScalingWeights {
    pub fn identity(side: usize) -> Self {
        ScalingWeights(Image::filled(side, side, 1.0))
    }
}

/// Effective (non-negative) thresholds for one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds(Image);

impl Thresholds {
    pub fn new(t: Image) -> Result<Self> {
        if t.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::contract("thresholds must be non-negative"));
        }
        Ok(Thresholds(t))
    }

    /// Thresholds from raw parameters through `softplus`.
    pub fn from_raw(theta: &Image) -> Self {
        Thresholds(theta.map(softplus))
    }

    pub fn values(&self) -> &Image {
        &self.0
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Raw parameter whose softplus is `t` (`t > 0`).
pub fn softplus_inverse(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else {
        t.exp_m1().ln()
    }
}

pub fn soft_threshold_value(x: f64, t: f64) -> f64 {
    let mag = (x.abs() - t).max(0.0);
    if x > 0.0 {
        mag
    } else if x < 0.0 {
        -mag
    } else {
        0.0
    }
}

/// Hard threshold in closed form: `x` where `|x| > t`, else 0.
pub fn hard_threshold_value(x: f64, t: f64) -> f64 {
    if x.abs() > t {
        x
    } else {
        0.0
    }
}

/// Hard threshold evaluated as soft threshold plus `sign(soft) * t`, term by
/// term. Equal to [`hard_threshold_value`] up to rounding of `(|x| - t) + t`.
pub fn hard_threshold_composed(x: f64, t: f64) -> f64 {
    let c = soft_threshold_value(x, t);
    let s = if c > 0.0 {
        1.0
    } else if c < 0.0 {
        -1.0
    } else {
        0.0
    };
    c + s * t
}

fn check_shapes(s: &Spectrum, grid: &Image, what: &str) -> Result<()> {
    if !s.coeffs().same_shape(grid) {
        return Err(Error::dim(format!(
            "{what}: spectrum is {0}x{0}, parameters are {1}x{2}",
            s.side(),
            grid.height(),
            grid.width()
        )));
    }
    Ok(())
}

fn map_spectrum(s: &Spectrum, grid: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Spectrum> {
    let coeffs = s.coeffs().zip_with(grid, f)?;
    Spectrum::new(coeffs, s.ordering(), s.normalization())
}

pub fn scaling_layer(s: &Spectrum, w: &ScalingWeights) -> Result<Spectrum> {
    check_shapes(s, &w.0, "scaling layer")?;
    map_spectrum(s, &w.0, |x, w| x * w)
}

pub fn soft_threshold(s: &Spectrum, t: &Thresholds) -> Result<Spectrum> {
    check_shapes(s, &t.0, "soft threshold")?;
    map_spectrum(s, &t.0, soft_threshold_value)
}

pub fn hard_threshold_layer(s: &Spectrum, t: &Thresholds) -> Result<Spectrum> {
    check_shapes(s, &t.0, "hard threshold")?;
    map_spectrum(s, &t.0, hard_threshold_value)
}

/// Mean over every entry (batch, channel and both spatial axes).
pub fn mean_activation<T: Real>(z: &Tensor<T>) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::contract("mean activation of an empty batch"));
    }
    Ok(z.sum().to_f64() / z.len() as f64)
}

/// Output of one transform-domain filtering block.
#[derive(Clone, Copy, Debug)]
pub struct HtBlockOutput {
    /// Back in the spatial domain.
    pub spatial: Var,
    /// Thresholded spectrum, the input to the sparsity penalty.
    pub thresholded: Var,
    /// Scaled spectrum before thresholding.
    pub scaled: Var,
}

/// Transform, scale, hard-threshold, inverse transform. `x: [B, C, M, M]`,
/// `scale` and `theta`: `[C, M, M]`; the threshold is `softplus(theta)`.
pub fn ht_block<T: Real>(g: &mut Graph<T>, x: Var, scale: Var, theta: Var) -> Result<HtBlockOutput> {
    let t = g.softplus(theta);
    ht_block_with_threshold(g, x, scale, t)
}

/// As [`ht_block`], with the non-negative threshold grid `t` given directly.
pub fn ht_block_with_threshold<T: Real>(g: &mut Graph<T>, x: Var, scale: Var, t: Var) -> Result<HtBlockOutput> {
    let spectrum = g.hadamard2d(x)?;
    let scaled = g.mul_grid(spectrum, scale)?;
    let thresholded = g.hard_threshold(scaled, t)?;
    let spatial = g.hadamard2d(thresholded)?;
    Ok(HtBlockOutput {
        spatial,
        thresholded,
        scaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wht::{ht_2d, iht_2d};

    #[test]
    fn hard_threshold_examples() {
        assert_eq!(hard_threshold_value(2.0, 1.0), 2.0);
        assert_eq!(hard_threshold_value(0.5, 1.0), 0.0);
        assert_eq!(hard_threshold_value(-3.0, 1.0), -3.0);
        assert_eq!(hard_threshold_value(1.0, 1.0), 0.0);
        assert_eq!(hard_threshold_value(-1.0, 1.0), 0.0);
        assert_eq!(hard_threshold_composed(2.0, 1.0), 2.0);
        assert_eq!(hard_threshold_composed(0.5, 1.0), 0.0);
        assert_eq!(hard_threshold_composed(-3.0, 1.0), -3.0);
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold_value(2.0, 1.0), 1.0);
        assert_eq!(soft_threshold_value(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold_value(-2.5, 1.0), -1.5);
        for x in [-2.0, -0.1, 0.0, 0.3, 7.0] {
            assert_eq!(soft_threshold_value(x, 0.0), x);
        }
    }

    #[test]
    fn softplus_roundtrip() {
        for t in [1e-6, 1e-3, 0.5, 3.0, 40.0] {
            assert!((softplus(softplus_inverse(t)) - t).abs() <= 1e-12 * t.max(1.0));
        }
    }

    #[test]
    fn thresholds_reject_negative() {
        assert!(Thresholds::new(Image::filled(2, 2, -0.1)).is_err());
        assert!(Thresholds::new(Image::filled(2, 2, 0.0)).is_ok());
        let from_raw = Thresholds::from_raw(&Image::filled(2, 2, -50.0));
        assert!(from_raw.values().data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn unit_scaling_is_identity() {
        let x = Image::from_fn(8, 8, |r, c| (r as f64 - c as f64).sin());
        let s = ht_2d(&x).unwrap();
        assert_eq!(scaling_layer(&s, &ScalingWeights::identity(8)).unwrap(), s);
    }

    #[test]
    fn dc_only_scaling_gives_mean_image() {
        let m = 8;
        let x = Image::from_fn(m, m, |r, c| ((r * 3 + c * 5) % 7) as f64);
        let mean = x.data().iter().sum::<f64>() / (m * m) as f64;
        let mut w = Image::zeros(m, m);
        w.set(0, 0, 1.0);
        let y = iht_2d(&scaling_layer(&ht_2d(&x).unwrap(), &ScalingWeights(w)).unwrap()).unwrap();
        for &v in y.data() {
            assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let s = ht_2d(&Image::zeros(4, 4)).unwrap();
        assert!(scaling_layer(&s, &ScalingWeights::identity(8)).is_err());
        let t = Thresholds::new(Image::zeros(8, 8)).unwrap();
        assert!(hard_threshold_layer(&s, &t).is_err());
    }

    #[test]
    fn mean_activation_cases() {
        assert_eq!(mean_activation(&Tensor::<f64>::zeros(&[2, 3, 4, 4])).unwrap(), 0.0);
        assert_eq!(mean_activation(&Tensor::full(&[1, 2, 2, 2], 0.25f64)).unwrap(), 0.25);
        let alt = Tensor::from_fn(&[2, 1, 2, 2], |i| if i % 2 == 0 { 1.0f64 } else { -1.0 });
        assert_eq!(mean_activation(&alt).unwrap(), 0.0);
        assert!(mean_activation(&Tensor::<f64>::zeros(&[0, 1, 2, 2])).is_err());
    }
}
