//! Same-size 2D cross-correlation with replicate borders.
//!
//! The forward pass decomposes the kernel by rows (one GEMM over 1D row
//! correlations). The backward pass uses im2col + GEMM, or direct row
//! accumulation when there are few output channels and the GEMM would
//! degenerate into a memory-bound matrix-vector product.
//!
//! Every batch element is processed independently and the kernel gradient is
//! reduced in batch order, so results do not depend on scheduling.

use crate::real::Real;

/// Upper bound on im2col buffer entries per GEMM call.
const COLS_BUDGET: usize = 1 << 18;
/// Output channel count up to which the direct path is used.
const DIRECT_MAX_COUT: usize = 4;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    /// Rows/columns of padding before the image; `k - 1 - pad_before` after.
    pub pad_before: usize,
}

/// Same-padding split for a `k x k` kernel: centred for odd `k`, one less
/// before than after for even `k`.
pub fn same_padding(k: usize) -> (usize, usize) {
    let before = (k - 1) / 2;
    (before, k - 1 - before)
}

impl ConvGeom {
    fn padded(&self) -> (usize, usize) {
        (self.height + self.k - 1, self.width + self.k - 1)
    }

    fn kk(&self) -> usize {
        self.k * self.k
    }

    /// Padded rows per band of the row-decomposed forward pass.
    fn row_band(&self) -> usize {
        let per_row = (self.c_in + self.c_out) * self.k * self.width;
        (ROWS_BUDGET / per_row).clamp(1, self.padded().0)
    }

    /// (channels per chunk, output rows per band). Prefers the full channel
    /// depth so every output tile is written by a single GEMM.
    fn tiling(&self) -> (usize, usize) {
        let row_all = self.c_in * self.kk() * self.width;
        if row_all <= COLS_BUDGET {
            (self.c_in, (COLS_BUDGET / row_all).clamp(1, self.height))
        } else {
            ((COLS_BUDGET / (self.kk() * self.width)).clamp(1, self.c_in), 1)
        }
    }
}

#[inline]
fn clamp_index(p: usize, pad: usize, n: usize) -> usize {
    p.saturating_sub(pad).min(n - 1)
}

/// Replicate-pads every channel of one batch element into `dst`.
fn pad_replicate<T: Real>(g: &ConvGeom, src: &[T], dst: &mut [T]) {
    let (hp, wp) = g.padded();
    for c in 0..g.c_in {
        let s = &src[c * g.height * g.width..(c + 1) * g.height * g.width];
        let d = &mut dst[c * hp * wp..(c + 1) * hp * wp];
        for yp in 0..hp {
            let row = &s[clamp_index(yp, g.pad_before, g.height) * g.width..][..g.width];
            let drow = &mut d[yp * wp..(yp + 1) * wp];
            let left = row[0];
            let right = row[g.width - 1];
            drow[..g.pad_before].fill(left);
            drow[g.pad_before..g.pad_before + g.width].copy_from_slice(row);
            drow[g.pad_before + g.width..].fill(right);
        }
    }
}

/// Fills `cols` (`chans*k*k` rows by `rows*width` columns).
fn im2col<T: Real>(g: &ConvGeom, padded: &[T], c0: usize, chans: usize, y0: usize, rows: usize, cols: &mut [T]) {
    let (hp, wp) = g.padded();
    let n = rows * g.width;
    for cl in 0..chans {
        let plane = &padded[(c0 + cl) * hp * wp..][..hp * wp];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (cl * g.k + ky) * g.k + kx;
                let dst = &mut cols[r * n..(r + 1) * n];
                for yy in 0..rows {
                    let src = &plane[(y0 + yy + ky) * wp + kx..][..g.width];
                    dst[yy * g.width..(yy + 1) * g.width].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], c0: usize, chans: usize, y0: usize, rows: usize, dpadded: &mut [T]) {
    let (hp, wp) = g.padded();
    let n = rows * g.width;
    for cl in 0..chans {
        let plane = &mut dpadded[(c0 + cl) * hp * wp..][..hp * wp];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (cl * g.k + ky) * g.k + kx;
                let src = &cols[r * n..(r + 1) * n];
                for yy in 0..rows {
                    let dst = &mut plane[(y0 + yy + ky) * wp + kx..][..g.width];
                    for (d, &s) in dst.iter_mut().zip(&src[yy * g.width..(yy + 1) * g.width]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Folds a padded-domain gradient back onto the unpadded input.
fn unpad_accumulate<T: Real>(g: &ConvGeom, dpadded: &[T], dx: &mut [T]) {
    let (hp, wp) = g.padded();
    for c in 0..g.c_in {
        let s = &dpadded[c * hp * wp..(c + 1) * hp * wp];
        let d = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for yp in 0..hp {
            let y = clamp_index(yp, g.pad_before, g.height);
            let drow = &mut d[y * g.width..(y + 1) * g.width];
            for xp in 0..wp {
                let x = clamp_index(xp, g.pad_before, g.width);
                drow[x] = drow[x] + s[yp * wp + xp];
            }
        }
    }
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Dot product with eight independent partial sums so it vectorizes.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Upper bound on row-im2col plus partial-sum entries per band.
const ROWS_BUDGET: usize = 1 << 18;

/// Row-decomposed convolution. One GEMM computes, for every output channel
/// and kernel row `ky`, the 1D correlation of each padded input row with that
/// kernel row; partial row `r` for kernel row `ky` is then added to output
/// row `r - ky`. The im2col expansion is `k` instead of `k * k`, the GEMM has
/// `c_out * k` rows instead of `c_out`, and each padded row is visited once.
fn forward_rows<T: Real>(g: &ConvGeom, input: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let (hw, w, k) = (g.height * g.width, g.width, g.k);
    let (hp, wp) = g.padded();
    let (m, kdim) = (g.c_out * k, g.c_in * k);
    let band = g.row_band();
    // Kernel regrouped as [(co, ky), (ci, kx)].
    let mut w2 = vec![T::zero(); m * kdim];
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            for ky in 0..k {
                for kx in 0..k {
                    w2[(co * k + ky) * kdim + ci * k + kx] = kernel[((co * g.c_in + ci) * k + ky) * k + kx];
                }
            }
        }
    }
    let mut out = vec![T::zero(); g.batch * g.c_out * hw];
    let mut padded = vec![T::zero(); g.c_in * hp * wp];
    let mut cols = vec![T::zero(); kdim * band * w];
    let mut partial = vec![T::zero(); m * band * w];
    for b in 0..g.batch {
        pad_replicate(g, &input[b * g.c_in * hw..(b + 1) * g.c_in * hw], &mut padded);
        let ob = &mut out[b * g.c_out * hw..(b + 1) * g.c_out * hw];
        for (co, plane) in ob.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        let mut r0 = 0;
        while r0 < hp {
            let rows = band.min(hp - r0);
            let n = rows * w;
            for ci in 0..g.c_in {
                for kx in 0..k {
                    let dst = &mut cols[(ci * k + kx) * n..][..n];
                    for r in 0..rows {
                        let src = &padded[ci * hp * wp + (r0 + r) * wp + kx..][..w];
                        dst[r * w..(r + 1) * w].copy_from_slice(src);
                    }
                }
            }
            // SAFETY: `w2` is m x kdim, `cols` kdim x n, `partial` m x n.
            unsafe {
                T::gemm(
                    m,
                    kdim,
                    n,
                    T::one(),
                    w2.as_ptr(),
                    kdim as isize,
                    1,
                    cols.as_ptr(),
                    n as isize,
                    1,
                    T::zero(),
                    partial.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
            for co in 0..g.c_out {
                for ky in 0..k {
                    // Output rows y = r0 + r - ky that exist.
                    let lo = ky.saturating_sub(r0);
                    let hi = rows.min((g.height + ky).saturating_sub(r0));
                    for r in lo..hi {
                        let y = r0 + r - ky;
                        let prow = &partial[(co * k + ky) * n + r * w..][..w];
                        let orow = &mut ob[co * hw + y * w..][..w];
                        for (o, &p) in orow.iter_mut().zip(prow) {
                            *o = *o + p;
                        }
                    }
                }
            }
            r0 += rows;
        }
    }
    out
}

fn backward_direct<T: Real>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    gout: &[T],
    dx: Option<&mut Vec<T>>,
    dw: Option<&mut Vec<T>>,
) {
    let (hw, w) = (g.height * g.width, g.width);
    let (hp, wp) = g.padded();
    let k = g.k;
    let mut padded = vec![T::zero(); g.c_in * hp * wp];
    let mut dpadded = vec![T::zero(); if dx.is_some() { g.c_in * hp * wp } else { 0 }];
    let (mut dx, mut dw) = (dx, dw);
    for b in 0..g.batch {
        if dw.is_some() {
            pad_replicate(g, &input[b * g.c_in * hw..(b + 1) * g.c_in * hw], &mut padded);
        }
        dpadded.fill(T::zero());
        for co in 0..g.c_out {
            let gplane = &gout[(b * g.c_out + co) * hw..][..hw];
            for ci in 0..g.c_in {
                for ky in 0..k {
                    let widx = ((co * g.c_in + ci) * k + ky) * k;
                    for y in 0..g.height {
                        let grow = &gplane[y * w..(y + 1) * w];
                        let at = ci * hp * wp + (y + ky) * wp;
                        if let Some(dw) = dw.as_deref_mut() {
                            let prow = &padded[at..at + wp];
                            for kx in 0..k {
                                dw[widx + kx] = dw[widx + kx] + dot(grow, &prow[kx..kx + w]);
                            }
                        }
                        if dx.is_some() {
                            let drow = &mut dpadded[at..at + wp];
                            for kx in 0..k {
                                axpy(kernel[widx + kx], grow, &mut drow[kx..kx + w]);
                            }
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            unpad_accumulate(g, &dpadded, &mut dx[b * g.c_in * hw..(b + 1) * g.c_in * hw]);
        }
    }
}

pub(crate) fn forward<T: Real>(g: &ConvGeom, input: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    if g.k == 1 {
        return forward_pointwise(g, input, kernel, bias);
    }
    forward_rows(g, input, kernel, bias)
}

/// 1x1 kernels need neither padding nor im2col: each batch element is a
/// single `[c_out, c_in] x [c_in, h*w]` product.
fn forward_pointwise<T: Real>(g: &ConvGeom, input: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let hw = g.height * g.width;
    let mut out = vec![T::zero(); g.batch * g.c_out * hw];
    for (xb, ob) in input.chunks_exact(g.c_in * hw).zip(out.chunks_exact_mut(g.c_out * hw)) {
        for (co, plane) in ob.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        // SAFETY: `kernel` is c_out x c_in, `xb` c_in x hw, `ob` c_out x hw.
        unsafe {
            T::gemm(
                g.c_out,
                g.c_in,
                hw,
                T::one(),
                kernel.as_ptr(),
                g.c_in as isize,
                1,
                xb.as_ptr(),
                hw as isize,
                1,
                T::one(),
                ob.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    gout: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_x, need_w, need_b) = need;
    let hw = g.height * g.width;
    let (hp, wp) = g.padded();
    let kk = g.kk();
    let (chunk, band) = g.tiling();

    let mut dx = need_x.then(|| vec![T::zero(); g.batch * g.c_in * hw]);
    let mut dw = need_w.then(|| vec![T::zero(); g.c_out * g.c_in * kk]);
    let db = need_b.then(|| {
        let mut db = vec![T::zero(); g.c_out];
        for b in 0..g.batch {
            for (co, d) in db.iter_mut().enumerate() {
                let plane = &gout[(b * g.c_out + co) * hw..][..hw];
                *d = plane.iter().fold(*d, |acc, &v| acc + v);
            }
        }
        db
    });
    if !need_x && !need_w {
        return ConvGrads {
            input: None,
            kernel: None,
            bias: db,
        };
    }
    if g.c_out <= DIRECT_MAX_COUT {
        backward_direct(g, input, kernel, gout, dx.as_mut(), dw.as_mut());
        return ConvGrads {
            input: dx,
            kernel: dw,
            bias: db,
        };
    }

    let mut padded = vec![T::zero(); g.c_in * hp * wp];
    let mut dpadded = vec![T::zero(); if need_x { g.c_in * hp * wp } else { 0 }];
    let mut cols = vec![T::zero(); chunk * kk * band * g.width];
    let mut dcols = vec![T::zero(); if need_x { chunk * kk * band * g.width } else { 0 }];

    for b in 0..g.batch {
        let gb = &gout[b * g.c_out * hw..(b + 1) * g.c_out * hw];
        if need_w {
            pad_replicate(g, &input[b * g.c_in * hw..(b + 1) * g.c_in * hw], &mut padded);
        }
        if need_x {
            dpadded.fill(T::zero());
        }
        let mut y0 = 0;
        while y0 < g.height {
            let rows = band.min(g.height - y0);
            let n = rows * g.width;
            let mut c0 = 0;
            while c0 < g.c_in {
                let chans = chunk.min(g.c_in - c0);
                if let Some(dw) = dw.as_mut() {
                    im2col(g, &padded, c0, chans, y0, rows, &mut cols);
                    // dW[:, chunk] += gout_band * cols^T
                    unsafe {
                        T::gemm(
                            g.c_out,
                            n,
                            chans * kk,
                            T::one(),
                            gb.as_ptr().add(y0 * g.width),
                            hw as isize,
                            1,
                            cols.as_ptr(),
                            1,
                            n as isize,
                            T::one(),
                            dw.as_mut_ptr().add(c0 * kk),
                            (g.c_in * kk) as isize,
                            1,
                        );
                    }
                }
                if need_x {
                    // dcols = W[:, chunk]^T * gout_band
                    unsafe {
                        T::gemm(
                            chans * kk,
                            g.c_out,
                            n,
                            T::one(),
                            kernel.as_ptr().add(c0 * kk),
                            1,
                            (g.c_in * kk) as isize,
                            gb.as_ptr().add(y0 * g.width),
                            hw as isize,
                            1,
                            T::zero(),
                            dcols.as_mut_ptr(),
                            n as isize,
                            1,
                        );
                    }
                    col2im(g, &dcols, c0, chans, y0, rows, &mut dpadded);
                }
                c0 += chans;
            }
            y0 += rows;
        }
        if let Some(dx) = dx.as_mut() {
            unpad_accumulate(g, &dpadded, &mut dx[b * g.c_in * hw..(b + 1) * g.c_in * hw]);
        }
    }
    ConvGrads {
        input: dx,
        kernel: dw,
        bias: db,
    }
}
