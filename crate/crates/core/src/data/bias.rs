//! Smooth multiplicative bias fields `b = exp(P(x, y))` with `P` a cubic
//! polynomial in normalized coordinates.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const BIAS_MIN: f64 = 0.6;
pub const BIAS_MAX: f64 = 1.5;
/// Monomials `x^i y^j` with `1 <= i + j <= 3`.
pub const NUM_COEFFS: usize = 9;

const ORDER_WEIGHTS: [f64; 3] = [1.0, 0.35, 0.15];

const EXPONENTS: [(i32, i32); NUM_COEFFS] = [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)];

fn coord(i: usize, size: usize) -> f64 {
    2.0 * (i as f64 + 0.5) / size as f64 - 1.0
}

fn polynomial(size: usize, coeffs: &[f64; NUM_COEFFS]) -> Image {
    Image::from_fn(size, size, |y, x| {
        let (u, v) = (coord(x, size), coord(y, size));
        EXPONENTS
            .iter()
            .zip(coeffs)
            .map(|(&(i, j), c)| c * u.powi(i) * v.powi(j))
            .sum()
    })
}

fn normalized_exp(p: &Image, scale: f64, region: Option<&Mask>) -> Result<Image> {
    let b = p.map(|v| (scale * v).exp());
    let mean = match region {
        Some(m) => {
            let vals = b.masked_values(m)?;
            if vals.is_empty() {
                return Err(Error::contract("bias normalization region is empty"));
            }
            vals.iter().sum::<f64>() / vals.len() as f64
        }
        None => b.data().iter().sum::<f64>() / b.len() as f64,
    };
    Ok(b.map(|v| v / mean))
}

/// `exp(P)` for given coefficients, normalized to mean 1 over `region` (the
/// whole slice when `None`). Not range-limited.
pub fn bias_from_polynomial(size: usize, coeffs: &[f64; NUM_COEFFS], region: Option<&Mask>) -> Result<Image> {
    normalized_exp(&polynomial(size, coeffs), 1.0, region)
}

/// Random field with mean 1 over `region`, scaled down from a strong initial
/// amplitude until every pixel lies in `[BIAS_MIN, BIAS_MAX]`.
pub fn gen_bias(rng: &mut impl Rng, size: usize, region: Option<&Mask>) -> Result<Image> {
    if size == 0 || !size.is_power_of_two() {
        return Err(Error::dim(format!("bias size {size} is not a power of two")));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit std");
    let mut coeffs = [0.0; NUM_COEFFS];
    for (c, &(i, j)) in coeffs.iter_mut().zip(&EXPONENTS) {
        // Mostly a ramp: the higher orders only bend it.
        *c = normal.sample(rng) * ORDER_WEIGHTS[(i + j - 1) as usize];
    }
    let p = polynomial(size, &coeffs);
    let (lo, hi) = p.min_max();
    if !(hi > lo) {
        return normalized_exp(&p, 0.0, region);
    }
    // Start from a log-range wider than the admissible one and shrink.
    let mut scale = 1.2 / (hi - lo);
    for _ in 0..200 {
        let b = normalized_exp(&p, scale, region)?;
        let (bmin, bmax) = b.min_max();
        if bmin >= BIAS_MIN && bmax <= BIAS_MAX {
            return Ok(b);
        }
        scale *= 0.95;
    }
    normalized_exp(&p, 0.0, region)
}
