//! Graph-free forward pass for inference.
//!
//! Works in place on owned buffers and folds elementwise steps into single
//! passes. The recorded graph in `forward` is the reference this is tested
//! against.

use super::forward::FIELD_FLOOR;
use super::params::{Conv, Encoder, Fusion, HuNet, Linear, Network, ParamTree};
use crate::autodiff::{conv_forward, same_padding, softplus, ConvGeom, Tensor};
use crate::latent::VARIANCE_FLOOR;
use crate::real::Real;
use crate::wht::ht2d_plane;

/// Pixels per tile of the fusion block, sized so the hidden activations of
/// one tile stay in cache.
const FUSION_TILE: usize = 4096;

/// Weights in the execution precision with the thresholds precomputed.
#[derive(Clone, Debug)]
pub(crate) struct PreparedNet<T: Real> {
    pub net: Network<Tensor<T>>,
    pub thresholds: [Tensor<T>; 2],
}

impl<T: Real> PreparedNet<T> {
    pub fn new(net: &Network<Tensor>) -> Self {
        let net = net.map_params(&mut |t| t.cast::<T>());
        let thresholds = [&net.hunet.ht1.theta, &net.hunet.ht2.theta].map(|theta| theta.map(softplus));
        PreparedNet { net, thresholds }
    }
}

/// Activation buffer `[B, C, H, W]`.
struct Maps<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Maps<T> {
    fn plane(&self) -> usize {
        self.dims[2] * self.dims[3]
    }
}

fn conv<T: Real>(x: &Maps<T>, p: &Conv<Tensor<T>>) -> Maps<T> {
    let [b, c_in, h, w] = x.dims;
    let shape = p.weight.shape();
    let (c_out, k) = (shape[0], shape[2]);
    let geom = ConvGeom {
        batch: b,
        c_in,
        c_out,
        height: h,
        width: w,
        k,
        pad_before: same_padding(k).0,
    };
    Maps {
        dims: [b, c_out, h, w],
        data: conv_forward(&geom, &x.data, p.weight.data(), p.bias.data()),
    }
}

fn relu<T: Real>(v: &mut [T]) {
    for x in v {
        *x = x.max(T::zero());
    }
}

/// Transform, scale, hard-threshold and transform back, plane by plane.
fn ht_block<T: Real>(x: &mut Maps<T>, scale: &Tensor<T>, t: &Tensor<T>) {
    let [_, c, h, w] = x.dims;
    let n = h * w;
    for (i, plane) in x.data.chunks_exact_mut(n).enumerate() {
        let ch = i % c;
        let (s, th) = (&scale.data()[ch * n..][..n], &t.data()[ch * n..][..n]);
        ht2d_plane(plane, h, w);
        for ((v, &sv), &tv) in plane.iter_mut().zip(s).zip(th) {
            let y = *v * sv;
            *v = if y.abs() > tv { y } else { T::zero() };
        }
        ht2d_plane(plane, h, w);
    }
}

/// Scalar field `[B, 1, H, W]` of normalized inputs `[B, 1, H, W]`.
fn hunet<T: Real>(p: &HuNet<Tensor<T>>, thresholds: &[Tensor<T>; 2], x: &Maps<T>) -> Maps<T> {
    let mut a1 = conv(x, &p.conv1);
    relu(&mut a1.data);
    let mut b1 = Maps {
        dims: a1.dims,
        data: a1.data.clone(),
    };
    ht_block(&mut b1, &p.ht1.scale, &thresholds[0]);
    let mut a2 = conv(&b1, &p.conv2);
    drop(b1);
    relu(&mut a2.data);
    ht_block(&mut a2, &p.ht2.scale, &thresholds[1]);
    let mut h3 = conv(&a2, &p.conv3);
    drop(a2);
    for (v, &s) in h3.data.iter_mut().zip(&a1.data) {
        *v = (*v + s).max(T::zero());
    }
    drop(a1);
    let mut field = conv(&h3, &p.conv4);
    let floor = T::of(FIELD_FLOOR);
    for v in &mut field.data {
        *v = softplus(*v) + floor;
    }
    field
}

fn avgpool2<T: Real>(x: &Maps<T>) -> Maps<T> {
    let [b, c, h, w] = x.dims;
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut data = Vec::with_capacity(b * c * ho * wo);
    for plane in x.data.chunks_exact(h * w) {
        for y in 0..ho {
            for xx in 0..wo {
                let i = 2 * y * w + 2 * xx;
                data.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter);
            }
        }
    }
    Maps {
        dims: [b, c, ho, wo],
        data,
    }
}

fn linear<T: Real>(x: &[T], p: &Linear<Tensor<T>>) -> Vec<T> {
    let fin = x.len();
    p.weight
        .data()
        .chunks_exact(fin)
        .zip(p.bias.data())
        .map(|(row, &b)| row.iter().zip(x).fold(b, |a, (&q, &v)| a + q * v))
        .collect()
}

/// Mean and variance of a single input `[1, C, H, W]`.
fn encoder<T: Real>(p: &Encoder<Tensor<T>>, x: &Maps<T>, layers_per_block: usize) -> (Vec<T>, Vec<T>) {
    let mut h = conv(x, &p.convs[0]);
    relu(&mut h.data);
    for (i, c) in p.convs.iter().enumerate().skip(1) {
        if i == layers_per_block {
            h = avgpool2(&h);
        }
        h = conv(&h, c);
        relu(&mut h.data);
    }
    let n = h.plane();
    let inv = T::of(1.0 / n as f64);
    let pooled: Vec<T> = h
        .data
        .chunks_exact(n)
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect();
    let mean = linear(&pooled, &p.mean);
    let var = linear(&pooled, &p.log_var)
        .into_iter()
        .map(|v| v.exp() + T::of(VARIANCE_FLOOR))
        .collect();
    (mean, var)
}

/// Fusion of one prototype plane with each latent vector. The latent part
/// of the first 1x1 convolution is constant over the plane, so it folds
/// into a per-latent bias.
fn fusion<T: Real>(p: &Fusion<Tensor<T>>, prototype: &[T], latents: &[Vec<T>]) -> Vec<Vec<T>> {
    let f1 = p.conv1.bias.len();
    let fin = p.conv1.weight.shape()[1];
    let w1 = p.conv1.weight.data();
    let f2 = p.conv2.bias.len();
    let w3 = p.conv3.weight.data();
    let b3 = p.conv3.bias.data()[0];
    let n = prototype.len();
    let mut h1 = vec![T::zero(); f1 * FUSION_TILE];
    let mut h2 = vec![T::zero(); f2 * FUSION_TILE];
    latents
        .iter()
        .map(|r| {
            let lead: Vec<T> = (0..f1)
                .map(|o| {
                    let row = &w1[o * fin..(o + 1) * fin];
                    row[1..]
                        .iter()
                        .zip(r)
                        .fold(p.conv1.bias.data()[o], |a, (&q, &v)| a + q * v)
                })
                .collect();
            let mut out = vec![T::zero(); n];
            let mut p0 = 0;
            while p0 < n {
                let len = FUSION_TILE.min(n - p0);
                let tile = &prototype[p0..p0 + len];
                for o in 0..f1 {
                    let (w0, c) = (w1[o * fin], lead[o]);
                    for (hv, &x) in h1[o * len..(o + 1) * len].iter_mut().zip(tile) {
                        *hv = (w0 * x + c).max(T::zero());
                    }
                }
                for (o, &b) in p.conv2.bias.data().iter().enumerate() {
                    h2[o * len..(o + 1) * len].fill(b);
                }
                // SAFETY: conv2 weight is f2 x f1, h1 f1 x len, h2 f2 x len.
                unsafe {
                    T::gemm(
                        f2,
                        f1,
                        len,
                        T::one(),
                        p.conv2.weight.data().as_ptr(),
                        f1 as isize,
                        1,
                        h1.as_ptr(),
                        len as isize,
                        1,
                        T::one(),
                        h2.as_mut_ptr(),
                        len as isize,
                        1,
                    );
                }
                relu(&mut h2[..f2 * len]);
                let dst = &mut out[p0..p0 + len];
                dst.fill(b3);
                for (o, &wv) in w3.iter().enumerate() {
                    for (d, &hv) in dst.iter_mut().zip(&h2[o * len..(o + 1) * len]) {
                        *d = *d + wv * hv;
                    }
                }
                p0 += len;
            }
            out
        })
        .collect()
}

/// Everything the test-time path needs from one normalized slice.
pub(crate) struct Forward<T> {
    pub field: Vec<T>,
    pub prototype: Vec<T>,
    pub prior_mean: Vec<T>,
    pub prior_var: Vec<T>,
}

/// Field, prototype and prior of a normalized `side x side` slice.
pub(crate) fn analyze<T: Real>(p: &PreparedNet<T>, layers_per_block: usize, x: &[T], side: usize) -> Forward<T> {
    let maps = Maps {
        dims: [1, 1, side, side],
        data: x.to_vec(),
    };
    let field = hunet(&p.net.hunet, &p.thresholds, &maps).data;
    let prototype = x.iter().zip(&field).map(|(&a, &u)| a * u).collect();
    let (prior_mean, prior_var) = encoder(&p.net.prior, &maps, layers_per_block);
    Forward {
        field,
        prototype,
        prior_mean,
        prior_var,
    }
}

/// Fusion outputs of `prototype` with each latent.
pub(crate) fn fuse<T: Real>(p: &PreparedNet<T>, prototype: &[T], latents: &[Vec<T>]) -> Vec<Vec<T>> {
    fusion(&p.net.fusion, prototype, latents)
}
