//! Oracles shared by the integration tests and the acceptance harness. None
//! of them call into the code they check beyond building inputs.

#![allow(dead_code)]

use phunet::autodiff::{Graph, Tensor, Var};
use phunet::latent::LatentGaussian;
use phunet::layers::ht_block;
use phunet::loss::{kl_gaussian, kl_sparsity, LossWeights};
use phunet::model::{ModelConfig, ModelParams};
use phunet::train::{loss_and_grads, TrainPair};
use phunet::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>();
    Tensor::new(shape, data).unwrap()
}

/// Uniform in `[lo, hi]`.
pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..=hi)).collect()).unwrap()
}

/// Values with magnitude in `[margin, margin + 1]` and random sign, so
/// kinks at zero sit well outside a finite-difference stencil.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize], margin: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = margin + rng.random::<f64>();
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates whose stencil straddled a kink.
    pub skipped: usize,
    pub worst: f64,
}

impl GradReport {
    /// Something was checked, at most one coordinate in ten sat on a kink,
    /// and the worst relative error is within `tol`.
    pub fn within(&self, tol: f64) -> bool {
        self.checked > 0 && self.skipped * 10 <= self.checked && self.worst <= tol
    }

    pub fn merge(self, o: GradReport) -> GradReport {
        GradReport {
            checked: self.checked + o.checked,
            skipped: self.skipped + o.skipped,
            worst: self.worst.max(o.worst),
        }
    }
}

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Relative error of `a` against `n` with a floor on the denominator.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Central differences of `f` at the given coordinates of `params`,
/// compared with `analytic`. A coordinate is skipped when the two one-sided
/// slopes disagree by more than a smooth function's curvature allows.
pub fn fd_check(
    params: &[Tensor],
    analytic: &[Tensor],
    coords: &[(usize, usize)],
    f: &mut dyn FnMut(&[Tensor]) -> f64,
) -> GradReport {
    let h = FD_STEP;
    let mut p = params.to_vec();
    let f0 = f(&p);
    let mut rep = GradReport::default();
    for &(ti, ei) in coords {
        let orig = p[ti].data()[ei];
        p[ti].data_mut()[ei] = orig + h;
        let fp = f(&p);
        p[ti].data_mut()[ei] = orig - h;
        let fm = f(&p);
        p[ti].data_mut()[ei] = orig;
        let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
        let scale = right.abs().max(left.abs()).max(1.0);
        if (right - left).abs() > 1e-3 * scale {
            rep.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        rep.worst = rep.worst.max(rel_err(analytic[ti].data()[ei], numeric));
        rep.checked += 1;
    }
    rep
}

pub fn all_coords(ts: &[Tensor]) -> Vec<(usize, usize)> {
    ts.iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect()
}

const PROBE_SEED: u64 = 0x9e37;

/// Checks `build` (a graph function of the inputs) by contracting its
/// output with a fixed random probe into a scalar.
pub fn op_check(inputs: &[Tensor], build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> GradReport {
    op_check_except(inputs, &[], build)
}

/// Analytic gradients of the probed scalar with respect to every input.
pub fn op_grads(inputs: &[Tensor], build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> Vec<Tensor> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let probe = g.constant(randn(&mut rng(PROBE_SEED), g.value(out).shape(), 1.0));
    let prod = g.mul(out, probe).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    vars.iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect()
}

/// As [`op_check`], leaving out the inputs listed in `skip`.
pub fn op_check_except(
    inputs: &[Tensor],
    skip: &[usize],
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> GradReport {
    let value = |ts: &[Tensor]| {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        let probe = randn(&mut rng(PROBE_SEED), g.value(out).shape(), 1.0);
        g.value(out)
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let analytic = op_grads(inputs, &build);
    let coords: Vec<_> = all_coords(inputs)
        .into_iter()
        .filter(|(i, _)| !skip.contains(i))
        .collect();
    fd_check(inputs, &analytic, &coords, &mut |ts| value(ts))
}

/// Deterministic offset in `[0, 0.5)`.
pub fn r_unit(i: usize) -> f64 {
    ((i as f64 * 0.618_033_988_75).fract()) * 0.5
}

/// Every differentiable graph operation on inputs that keep kinks outside
/// the stencil. Threshold inputs of the hard threshold are left out: the
/// output is piecewise constant in them.
pub fn op_suite() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut check = |name: &str, inputs: &[Tensor], skip: &[usize], build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var| {
        out.push((name.to_string(), op_check_except(inputs, skip, build)));
    };

    for (cin, cout, k, side) in [(2, 3, 3, 5), (1, 2, 4, 6), (3, 1, 1, 4), (2, 2, 2, 3)] {
        let mut r = rng(k as u64);
        let inputs = [
            randn(&mut r, &[2, cin, side, side], 1.0),
            randn(&mut r, &[cout, cin, k, k], 0.5),
            randn(&mut r, &[cout], 0.5),
        ];
        check(&format!("conv2d k={k}"), &inputs, &[], &|g, v| {
            g.conv2d(v[0], v[1], v[2]).unwrap()
        });
    }

    let mut r = rng(1);
    let x = [randn(&mut r, &[2, 3, 4, 6], 1.0)];
    check("avgpool2", &x, &[], &|g, v| g.avgpool2(v[0]).unwrap());
    check("global_avg_pool", &x, &[], &|g, v| g.global_avg_pool(v[0]).unwrap());
    check("sum", &x, &[], &|g, v| g.sum(v[0]));
    check("mean", &x, &[], &|g, v| g.mean(v[0]).unwrap());

    let mut r = rng(2);
    let x = [away_from_zero(&mut r, &[2, 2, 3, 3], 0.05)];
    let pos = [uniform(&mut r, &[2, 2, 3, 3], 0.2, 2.0)];
    check("relu", &x, &[], &|g, v| g.relu(v[0]));
    check("sigmoid", &x, &[], &|g, v| g.sigmoid(v[0]));
    check("softplus", &x, &[], &|g, v| g.softplus(v[0]));
    check("exp", &x, &[], &|g, v| g.exp(v[0]));
    check("sqrt", &pos, &[], &|g, v| g.sqrt(v[0]));
    check("scale", &x, &[], &|g, v| g.scale(v[0], -1.75));
    check("add_scalar", &x, &[], &|g, v| g.add_scalar(v[0], 0.3));

    let mut r = rng(3);
    let a = randn(&mut r, &[2, 2, 4, 4], 1.0);
    let ab = [a.clone(), randn(&mut r, &[2, 2, 4, 4], 1.0)];
    let grid = randn(&mut r, &[2, 4, 4], 1.0);
    check("add", &ab, &[], &|g, v| g.add(v[0], v[1]).unwrap());
    check("sub", &ab, &[], &|g, v| g.sub(v[0], v[1]).unwrap());
    check("mul", &ab, &[], &|g, v| g.mul(v[0], v[1]).unwrap());
    check("mse", &ab, &[], &|g, v| g.mse(v[0], v[1]).unwrap());
    check("mul_grid", &[a, grid], &[], &|g, v| g.mul_grid(v[0], v[1]).unwrap());

    let mut r = rng(4);
    let x = [randn(&mut r, &[2, 2, 8, 8], 1.0)];
    check("hadamard2d", &x, &[], &|g, v| g.hadamard2d(v[0]).unwrap());
    // |x| stays at least 0.1 away from every threshold.
    let t = uniform(&mut r, &[2, 4, 4], 0.2, 0.6);
    let x = Tensor::from_fn(&[2, 2, 4, 4], |i| {
        let ti = t.data()[i % t.len()];
        let off = 0.1 + r_unit(i);
        let mag = if i % 3 == 0 {
            (ti - off).max(0.0) * 0.5
        } else {
            ti + off
        };
        if i % 2 == 0 {
            mag
        } else {
            -mag
        }
    });
    let xt = [x, t];
    check("soft_threshold", &xt, &[], &|g, v| {
        g.soft_threshold(v[0], v[1]).unwrap()
    });
    check("hard_threshold (x)", &xt, &[1], &|g, v| {
        g.hard_threshold(v[0], v[1]).unwrap()
    });

    let mut r = rng(5);
    let ab = [randn(&mut r, &[2, 1, 3, 3], 1.0), randn(&mut r, &[2, 3, 3, 3], 1.0)];
    check("concat_channels", &ab, &[], &|g, v| {
        g.concat_channels(&[v[0], v[1]]).unwrap()
    });
    let z = [randn(&mut r, &[2, 4], 1.0)];
    check("broadcast_spatial", &z, &[], &|g, v| {
        g.broadcast_spatial(v[0], 3, 2).unwrap()
    });
    let lin = [
        randn(&mut r, &[3, 5], 1.0),
        randn(&mut r, &[4, 5], 1.0),
        randn(&mut r, &[4], 1.0),
    ];
    check("linear", &lin, &[], &|g, v| g.linear(v[0], v[1], v[2]).unwrap());

    let mut r = rng(6);
    // Neighbour differences bounded away from zero keep |.| smooth.
    let ramp = [Tensor::from_fn(&[1, 2, 4, 4], |i| {
        let (y, x) = ((i / 4) % 4, i % 4);
        0.3 * (y * 5 + x * 2) as f64 + 0.01 * r_unit(i) + if i >= 16 { 0.1 } else { 0.0 }
    })];
    check("tv", &ramp, &[], &|g, v| g.tv(v[0]).unwrap());
    let kl_in = [
        randn(&mut r, &[3, 4], 1.0),
        uniform(&mut r, &[3, 4], 0.3, 2.0),
        randn(&mut r, &[3, 4], 1.0),
        uniform(&mut r, &[3, 4], 0.3, 2.0),
    ];
    check("kl_gaussian", &kl_in, &[], &|g, v| {
        g.kl_gaussian(v[0], v[1], v[2], v[3]).unwrap()
    });
    for z in [-2.0, -0.3, 0.0, 1.5] {
        check(&format!("kl_bernoulli z={z}"), &[Tensor::scalar(z)], &[], &|g, v| {
            g.kl_bernoulli(v[0], 0.05).unwrap()
        });
    }

    let mut r = rng(7);
    let block = [
        randn(&mut r, &[2, 2, 4, 4], 1.0),
        Tensor::from_fn(&[2, 4, 4], |i| 1.0 + 0.2 * r_unit(i)),
        Tensor::from_fn(&[2, 4, 4], |i| -3.0 + r_unit(i)),
    ];
    check("ht_block", &block, &[2], &|g, v| {
        ht_block(g, v[0], v[1], v[2]).unwrap().spatial
    });
    out
}

/// Full objective on a tiny model: analytic gradients from one backward
/// pass versus central differences on `n` random parameter coordinates.
/// Threshold parameters are left out: the loss is piecewise constant in
/// them and they train on a surrogate gradient.
pub fn end_to_end_check(side: usize, n: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let cfg = ModelConfig::tiny(side);
    let mut params = ModelParams::init(cfg, &mut r).unwrap();
    phunet::model::perturb(&mut params, &mut r, 0.05);
    let pairs: Vec<TrainPair> = (0..2)
        .map(|_| {
            let x = Image::from_fn(side, side, |_, _| r.random_range(0.0..1.0));
            let y = x.map(|v| 0.8 * v + 0.1);
            TrainPair { x, y }
        })
        .collect();
    let batch: Vec<&TrainPair> = pairs.iter().collect();
    let w = LossWeights::default();
    let named = params.net.leaves();
    let leaves: Vec<Tensor> = named.iter().map(|(_, t)| (*t).clone()).collect();
    let eligible: Vec<usize> = (0..named.len()).filter(|&i| !named[i].0.ends_with("theta")).collect();
    let (_, grads) = loss_and_grads::<f64>(&params, &batch, &mut rng(seed ^ 1), &w).unwrap();

    let mut coords = Vec::new();
    // Every leaf at least once, the rest at random.
    for &i in &eligible {
        coords.push((i, r.random_range(0..leaves[i].len())));
    }
    while coords.len() < n.max(eligible.len()) {
        let i = eligible[r.random_range(0..eligible.len())];
        coords.push((i, r.random_range(0..leaves[i].len())));
    }
    let mut probe = params.clone();
    fd_check(&leaves, &grads, &coords, &mut |ts| {
        for ((_, slot), t) in probe.net.leaves_mut().into_iter().zip(ts) {
            *slot = t.clone();
        }
        let (c, _) = loss_and_grads::<f64>(&probe, &batch, &mut rng(seed ^ 1), &w).unwrap();
        c.total(&w)
    })
}

/// Monte Carlo estimate of `KL(f || g)` with its standard error, from
/// log-density differences at samples of `f`.
pub fn kl_monte_carlo(f: &LatentGaussian, g: &LatentGaussian, n: usize, rng: &mut impl Rng) -> (f64, f64) {
    let log_density = |d: &LatentGaussian, x: &[f64]| -> f64 {
        x.iter()
            .zip(d.mean().iter().zip(d.var()))
            .map(|(&xi, (&m, &v))| -0.5 * ((xi - m).powi(2) / v + v.ln() + (2.0 * std::f64::consts::PI).ln()))
            .sum()
    };
    let (mut s, mut s2) = (0.0, 0.0);
    let mut x = vec![0.0; f.dim()];
    for _ in 0..n {
        for (d, xi) in x.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *xi = f.mean()[d] + f.var()[d].sqrt() * z;
        }
        let l = log_density(f, &x) - log_density(g, &x);
        s += l;
        s2 += l * l;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

/// Sylvester Hadamard matrix of order `m`, row-major, entries +-1.
pub fn hadamard_matrix(m: usize) -> Vec<f64> {
    let mut h = vec![1.0];
    let mut n = 1;
    while n < m {
        let mut next = vec![0.0; 4 * n * n];
        for i in 0..n {
            for j in 0..n {
                let v = h[i * n + j];
                next[i * 2 * n + j] = v;
                next[i * 2 * n + j + n] = v;
                next[(i + n) * 2 * n + j] = v;
                next[(i + n) * 2 * n + j + n] = -v;
            }
        }
        h = next;
        n *= 2;
    }
    h
}

/// `H X H / M` by explicit matrix products.
pub fn ht2d_by_matrix(x: &Image) -> Image {
    let m = x.height();
    let h = hadamard_matrix(m);
    let mut t = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            t[i * m + j] = (0..m).map(|k| h[i * m + k] * x.get(k, j)).sum();
        }
    }
    Image::from_fn(m, m, |i, j| {
        (0..m).map(|k| t[i * m + k] * h[k * m + j]).sum::<f64>() / m as f64
    })
}

/// `(a * b)[k] = sum_i a[i] b[i ^ k]`.
pub fn dyadic_conv_naive(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|k| (0..a.len()).map(|i| a[i] * b[i ^ k]).sum())
        .collect()
}

pub fn random_gaussian(r: &mut impl Rng, dim: usize) -> LatentGaussian {
    let mean = (0..dim).map(|_| r.random_range(-1.5..1.5)).collect();
    let var = (0..dim).map(|_| r.random_range(0.2..3.0)).collect();
    LatentGaussian::new(mean, var).unwrap()
}

/// Closed-form Gaussian KL against sampling on random diagonal pairs of
/// dimension 1 to 6; one failure message per pair off by more than 3 SE.
pub fn gaussian_kl_failures(pairs: usize, samples: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut bad = Vec::new();
    for pair in 0..pairs {
        let dim = 1 + pair % 6;
        let (f, g) = (random_gaussian(&mut r, dim), random_gaussian(&mut r, dim));
        let exact = kl_gaussian(&f, &g).unwrap();
        let (est, se) = kl_monte_carlo(&f, &g, samples, &mut r);
        if (exact - est).abs() > 3.0 * se {
            bad.push(format!("pair {pair}: closed form {exact}, sampled {est} +- {se}"));
        }
    }
    bad
}

/// The sparsity KL against the Bernoulli divergence written out: zero at
/// the logit of the target rate, positive and equal to the direct formula
/// elsewhere.
pub fn bernoulli_kl_failures() -> Vec<String> {
    let mut bad = Vec::new();
    for beta in [0.01f64, 0.05, 0.3, 0.9] {
        let logit = (beta / (1.0 - beta)).ln();
        let at = kl_sparsity(logit, beta).unwrap();
        if at.abs() >= 1e-12 {
            bad.push(format!("beta {beta}: {at} at the target"));
        }
        for dz in [-3.0, -0.5, -0.01, 0.01, 0.5, 3.0] {
            let z = logit + dz;
            let p = 1.0 / (1.0 + (-z).exp());
            let direct = beta * (beta / p).ln() + (1.0 - beta) * ((1.0 - beta) / (1.0 - p)).ln();
            let k = kl_sparsity(z, beta).unwrap();
            if k <= 0.0 || (k - direct).abs() > 1e-12 * direct.max(1e-3) {
                bad.push(format!("beta {beta}, z {z}: {k} vs {direct}"));
            }
        }
    }
    bad
}
