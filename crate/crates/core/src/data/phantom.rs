//! Synthetic organ phantoms: a dark background and an elliptical organ made
//! of a dominant tissue zone with a few inclusions of different intensity.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const MIN_SIZE: usize = 32;
/// Background intensities stay below this.
pub const BACKGROUND_MAX: f64 = 0.05;

/// Clean slice and its masks, before any bias is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanPhantom {
    pub clean: Image,
    pub tissue_mask: Mask,
    pub background_mask: Mask,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    /// Squared normalized radius; below 1 inside.
    fn rho2(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2)
    }
}

pub fn gen_phantom(rng: &mut impl Rng, size: usize) -> Result<CleanPhantom> {
    if size < MIN_SIZE || !size.is_power_of_two() {
        return Err(Error::contract(format!(
            "phantom size {size} must be a power of two >= {MIN_SIZE}"
        )));
    }
    let m = size as f64;
    let organ = Ellipse {
        cy: m / 2.0 + rng.random_range(-0.06..0.06) * m,
        cx: m / 2.0 + rng.random_range(-0.06..0.06) * m,
        ry: rng.random_range(0.34..0.44) * m,
        rx: rng.random_range(0.34..0.44) * m,
        angle: rng.random_range(0.0..std::f64::consts::PI),
    };
    let base = rng.random_range(0.45..0.65);

    let zones = rng.random_range(2..=4usize);
    let mut inclusions = Vec::new();
    for _ in 1..zones {
        let r = rng.random_range(0.0..0.55);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let e = Ellipse {
            cy: organ.cy + r * organ.ry * phi.sin(),
            cx: organ.cx + r * organ.rx * phi.cos(),
            ry: rng.random_range(0.08..0.18) * organ.ry,
            rx: rng.random_range(0.08..0.18) * organ.rx,
            angle: rng.random_range(0.0..std::f64::consts::PI),
        };
        let contrast = rng.random_range(0.2..0.4);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        inclusions.push((e, base * (1.0 + sign * contrast)));
    }

    let noise = Normal::<f64>::new(0.0, 0.015).expect("positive std");
    let bg_noise = Normal::<f64>::new(0.0, 0.005).expect("positive std");
    let mut clean = Image::zeros(size, size);
    let mut tissue = vec![false; size * size];
    let mut background = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let rho2 = organ.rho2(py, px);
            let i = y * size + x;
            let v = if rho2 < 1.0 {
                tissue[i] = true;
                let level = inclusions
                    .iter()
                    .rev()
                    .find(|(e, _)| e.rho2(py, px) < 1.0)
                    .map_or(base, |&(_, l)| l);
                (level * (1.0 + noise.sample(rng))).clamp(0.0, 1.0)
            } else {
                background[i] = rho2 > 1.1f64.powi(2);
                (0.02 + bg_noise.sample(rng)).clamp(0.0, 0.045)
            };
            clean.data_mut()[i] = v;
        }
    }
    Ok(CleanPhantom {
        clean,
        tissue_mask: Mask::new(size, size, tissue)?,
        background_mask: Mask::new(size, size, background)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn background_dark_and_masks_disjoint() {
        for seed in 0..20 {
            let p = gen_phantom(&mut ChaCha8Rng::seed_from_u64(seed), 64).unwrap();
            assert!(!p.tissue_mask.intersects(&p.background_mask));
            assert!(p.tissue_mask.count() > 64 * 64 / 5);
            assert!(p.background_mask.count() > 64 * 64 / 5);
            for (v, &bg) in p.clean.data().iter().zip(p.background_mask.data()) {
                assert!((0.0..=1.0).contains(v));
                if bg {
                    assert!(*v < BACKGROUND_MAX);
                }
            }
        }
    }

    #[test]
    fn seeds_differ() {
        let a = gen_phantom(&mut ChaCha8Rng::seed_from_u64(1), 32).unwrap();
        let b = gen_phantom(&mut ChaCha8Rng::seed_from_u64(2), 32).unwrap();
        let d = a.clean.zip_with(&b.clean, |x, y| x - y).unwrap().frobenius_norm();
        assert!(d > 0.0);
    }

    #[test]
    fn size_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gen_phantom(&mut rng, 16).is_err());
        assert!(gen_phantom(&mut rng, 48).is_err());
    }
}
