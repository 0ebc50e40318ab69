//! Fast Walsh–Hadamard transforms.
//!
//! Coefficients are kept in natural (Sylvester) order: entry `(i, j)` of the
//! Hadamard matrix is `(-1)^popcount(i & j)`. Sequency order is available for
//! diagnostics through [`sequency_permutation`] and [`Spectrum::reordered`].
//!
//! Two normalizations are exposed:
//!
//! * [`Normalization::Unnormalized`] computes `H v` with additions only. The
//!   dyadic convolution theorem `H (m *d n) = (H m) . (H n)` holds exactly in
//!   this convention.
//! * [`Normalization::Orthonormal`] scales by `1/sqrt(M)` per axis, so the 2D
//!   transform of an `M x M` image is `(1/M) H X H`. It is an involution and
//!   preserves the Frobenius norm. The network uses this one.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    Natural,
    Sequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    Unnormalized,
    Orthonormal,
}

fn require_pow2(len: usize, what: &str) -> Result<()> {
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::dim(format!("{what} {len} is not a power of two")));
    }
    Ok(())
}

/// Unnormalized in-place butterfly. The length must be a power of two.
pub fn fwht_in_place<T: Real>(v: &mut [T]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Orthonormal 2D transform of one row-major `rows x cols` plane, in place.
/// Both extents must be powers of two. Applying it twice is the identity.
pub fn ht2d_plane<T: Real>(plane: &mut [T], rows: usize, cols: usize) {
    debug_assert_eq!(plane.len(), rows * cols);
    for row in plane.chunks_exact_mut(cols) {
        fwht_in_place(row);
    }
    // Column butterflies operate on whole row pairs.
    let mut h = 1;
    while h < rows {
        for block in plane.chunks_exact_mut(2 * h * cols) {
            let (lo, hi) = block.split_at_mut(h * cols);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    let scale = T::of(1.0 / ((rows * cols) as f64).sqrt());
    for v in plane.iter_mut() {
        *v = *v * scale;
    }
}

pub fn fwht_1d(v: &[f64], norm: Normalization) -> Result<Vec<f64>> {
    require_pow2(v.len(), "transform length")?;
    let mut out = v.to_vec();
    fwht_in_place(&mut out);
    if norm == Normalization::Orthonormal {
        let s = 1.0 / (v.len() as f64).sqrt();
        out.iter_mut().for_each(|x| *x *= s);
    }
    Ok(out)
}

/// Hadamard-domain coefficient grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    coeffs: Image,
    ordering: Ordering,
    normalization: Normalization,
}

impl Spectrum {
    pub fn new(coeffs: Image, ordering: Ordering, normalization: Normalization) -> Result<Self> {
        coeffs.require_pow2_square()?;
        Ok(Spectrum {
            coeffs,
            ordering,
            normalization,
        })
    }

    pub fn coeffs(&self) -> &Image {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Image {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Image {
        self.coeffs
    }

    pub fn ordering(&self) -> Ordering {
        self.ordering
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn side(&self) -> usize {
        self.coeffs.height()
    }

    /// Same coefficients with rows and columns permuted into `ordering`.
    pub fn reordered(&self, ordering: Ordering) -> Spectrum {
        if ordering == self.ordering {
            return self.clone();
        }
        let m = self.side();
        let perm = sequency_permutation(m).expect("side validated at construction");
        let coeffs = match ordering {
            // sequency[s] = natural[perm[s]]
            Ordering::Sequency => Image::from_fn(m, m, |r, c| self.coeffs.get(perm[r], perm[c])),
            Ordering::Natural => {
                let mut inv = vec![0; m];
                for (s, &n) in perm.iter().enumerate() {
                    inv[n] = s;
                }
                Image::from_fn(m, m, |r, c| self.coeffs.get(inv[r], inv[c]))
            }
        };
        Spectrum {
            coeffs,
            ordering,
            normalization: self.normalization,
        }
    }
}

/// 2D transform in the requested normalization, natural order.
pub fn ht_2d_with(x: &Image, norm: Normalization) -> Result<Spectrum> {
    let m = x.require_pow2_square()?;
    let mut data = x.data().to_vec();
    ht2d_plane(&mut data, m, m);
    if norm == Normalization::Unnormalized {
        let s = m as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
    Ok(Spectrum {
        coeffs: Image::new(m, m, data)?,
        ordering: Ordering::Natural,
        normalization: norm,
    })
}

/// `(1/M) H X H`.
pub fn ht_2d(x: &Image) -> Result<Spectrum> {
    ht_2d_with(x, Normalization::Orthonormal)
}

/// Inverse of [`ht_2d_with`] for either normalization and ordering.
pub fn iht_2d(s: &Spectrum) -> Result<Image> {
    let natural = s.reordered(Ordering::Natural);
    let m = natural.side();
    let mut data = natural.coeffs.into_data();
    ht2d_plane(&mut data, m, m);
    if s.normalization == Normalization::Unnormalized {
        let k = 1.0 / m as f64;
        data.iter_mut().for_each(|v| *v *= k);
    }
    Image::new(m, m, data)
}

/// `out[k] = sum_i m[i] * n[k ^ i]`, evaluated directly in O(M^2).
pub fn dyadic_conv_bruteforce(m: &[f64], n: &[f64]) -> Result<Vec<f64>> {
    if m.len() != n.len() {
        return Err(Error::dim(format!(
            "dyadic convolution of lengths {} and {}",
            m.len(),
            n.len()
        )));
    }
    require_pow2(m.len(), "dyadic convolution length")?;
    Ok((0..m.len())
        .map(|k| m.iter().enumerate().map(|(i, &mi)| mi * n[k ^ i]).sum())
        .collect())
}

/// Two-dimensional dyadic convolution, `out[k,l] = sum_{i,j} m[i,j] n[k^i, l^j]`.
pub fn dyadic_conv2d_bruteforce(m: &Image, n: &Image) -> Result<Image> {
    let side = m.require_pow2_square()?;
    if !m.same_shape(n) {
        return Err(Error::dim("dyadic convolution operands differ in shape"));
    }
    Ok(Image::from_fn(side, side, |k, l| {
        let mut acc = 0.0;
        for i in 0..side {
            for j in 0..side {
                acc += m.get(i, j) * n.get(k ^ i, l ^ j);
            }
        }
        acc
    }))
}

/// `perm[s]` is the natural-order index of the Walsh function with `s` sign
/// changes.
pub fn sequency_permutation(m: usize) -> Result<Vec<usize>> {
    require_pow2(m, "transform size")?;
    let bits = m.trailing_zeros();
    Ok((0..m)
        .map(|s| {
            let gray = s ^ (s >> 1);
            if bits == 0 {
                0
            } else {
                gray.reverse_bits() >> (usize::BITS - bits)
            }
        })
        .collect())
}

/// Fraction of spectral energy inside the lowest-sequency `block x block`
/// corner.
pub fn low_sequency_energy_fraction(x: &Image, block: usize) -> Result<f64> {
    let s = ht_2d(x)?.reordered(Ordering::Sequency);
    let c = s.coeffs();
    let total: f64 = c.data().iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    let b = block.min(c.height());
    let mut low = 0.0;
    for r in 0..b {
        for k in 0..b {
            low += c.get(r, k).powi(2);
        }
    }
    Ok(low / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hadamard_entry(i: usize, j: usize) -> f64 {
        if (i & j).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    fn sign_changes(row: usize, m: usize) -> usize {
        (1..m)
            .filter(|&c| hadamard_entry(row, c) != hadamard_entry(row, c - 1))
            .count()
    }

    #[test]
    fn dc_input() {
        assert_eq!(
            fwht_1d(&[1.0; 4], Normalization::Unnormalized).unwrap(),
            vec![4.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn delta_input_is_first_column() {
        assert_eq!(
            fwht_1d(&[1.0, 0.0, 0.0, 0.0], Normalization::Unnormalized).unwrap(),
            vec![1.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn twice_is_m_times_identity() {
        let (a, b) = (0.375, -1.625);
        let once = fwht_1d(&[a, b], Normalization::Unnormalized).unwrap();
        let twice = fwht_1d(&once, Normalization::Unnormalized).unwrap();
        assert_eq!(twice, vec![2.0 * a, 2.0 * b]);
    }

    #[test]
    fn butterfly_matches_matrix_product() {
        let m = 16;
        let v: Vec<f64> = (0..m).map(|i| (i as f64 * 0.37).sin()).collect();
        let fast = fwht_1d(&v, Normalization::Unnormalized).unwrap();
        for (i, f) in fast.iter().enumerate() {
            let slow: f64 = (0..m).map(|j| hadamard_entry(i, j) * v[j]).sum();
            assert!((f - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(
            fwht_1d(&[1.0; 3], Normalization::Unnormalized),
            Err(Error::Dimension(_))
        ));
        assert!(fwht_1d(&[], Normalization::Unnormalized).is_err());
        assert!(ht_2d(&Image::zeros(4, 8)).is_err());
        assert!(ht_2d(&Image::zeros(6, 6)).is_err());
    }

    #[test]
    fn constant_image_concentrates_in_dc() {
        let m = 8;
        let c = 0.75;
        let s = ht_2d(&Image::filled(m, m, c)).unwrap();
        for r in 0..m {
            for k in 0..m {
                let expect = if r == 0 && k == 0 { m as f64 * c } else { 0.0 };
                assert!((s.coeffs().get(r, k) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_image_zero_spectrum() {
        let s = ht_2d(&Image::zeros(4, 4)).unwrap();
        assert!(s.coeffs().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ortho_2d_matches_definition() {
        let m = 4;
        let x = Image::from_fn(m, m, |r, c| (r * 7 + c * 3) as f64 % 5.0 - 1.0);
        let s = ht_2d(&x).unwrap();
        for a in 0..m {
            for b in 0..m {
                let mut acc = 0.0;
                for c in 0..m {
                    for d in 0..m {
                        acc += x.get(c, d) * hadamard_entry(a, c) * hadamard_entry(b, d);
                    }
                }
                assert!((s.coeffs().get(a, b) - acc / m as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unnormalized_roundtrip() {
        let x = Image::from_fn(8, 8, |r, c| ((r * 8 + c) as f64).cos());
        let s = ht_2d_with(&x, Normalization::Unnormalized).unwrap();
        let back = iht_2d(&s).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sequency_small_cases() {
        assert_eq!(sequency_permutation(1).unwrap(), vec![0]);
        assert_eq!(sequency_permutation(2).unwrap(), vec![0, 1]);
        assert_eq!(sequency_permutation(4).unwrap(), vec![0, 2, 3, 1]);
    }

    #[test]
    fn sequency_counts_sign_changes() {
        for m in [4usize, 8, 16, 64] {
            let perm = sequency_permutation(m).unwrap();
            let mut seen = vec![false; m];
            for (s, &n) in perm.iter().enumerate() {
                assert!(!seen[n]);
                seen[n] = true;
                assert_eq!(sign_changes(n, m), s);
            }
        }
    }

    #[test]
    fn reorder_roundtrip() {
        let x = Image::from_fn(8, 8, |r, c| (r as f64) - 0.5 * c as f64);
        let s = ht_2d(&x).unwrap();
        let back = s.reordered(Ordering::Sequency).reordered(Ordering::Natural);
        assert_eq!(back, s);
        assert_eq!(iht_2d(&s.reordered(Ordering::Sequency)).unwrap(), iht_2d(&s).unwrap());
    }

    #[test]
    fn dyadic_examples() {
        assert_eq!(
            dyadic_conv_bruteforce(&[1.0, 0.0], &[2.5, -1.0]).unwrap(),
            vec![2.5, -1.0]
        );
        assert_eq!(
            dyadic_conv_bruteforce(&[1.0, 1.0], &[1.0, 1.0]).unwrap(),
            vec![2.0, 2.0]
        );
        assert!(dyadic_conv_bruteforce(&[1.0, 1.0], &[1.0; 4]).is_err());
    }
}
