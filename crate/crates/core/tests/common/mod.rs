//! Brute-force reference implementations shared by the integration suites.
//! Each is written from the operator definition with plain loops and `f64`
//! arithmetic, independently of the library code paths.
#![allow(dead_code)]

use deblur_mfi::nn::ConvSpec;
use deblur_mfi::sequence::FrameSequence;
use deblur_mfi::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense `f64` array with the same NCHW layout as `Tensor`.
#[derive(Clone, Debug)]
pub struct Ref {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Ref {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Ref {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }
    pub fn from(t: &Tensor) -> Self {
        Ref {
            shape: t.shape(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Ref {
        Ref {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
    pub fn cat(parts: &[&Ref]) -> Ref {
        let [n, _, h, w] = parts[0].shape;
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut out = Ref::zeros([n, c, h, w]);
        for ni in 0..n {
            let mut base = 0;
            for p in parts {
                for ci in 0..p.shape[1] {
                    for y in 0..h {
                        for x in 0..w {
                            out.set(ni, base + ci, y, x, p.get(ni, ci, y, x));
                        }
                    }
                }
                base += p.shape[1];
            }
        }
        out
    }
}

/// `‖actual − expected‖∞ / ‖expected‖∞` (absolute when the reference is zero).
pub fn rel_err(actual: &Tensor, expected: &Ref) -> f64 {
    assert_eq!(actual.shape(), expected.shape, "shape mismatch against oracle");
    let scale = expected.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = actual
        .data()
        .iter()
        .zip(&expected.data)
        .fold(0.0f64, |m, (&a, &e)| m.max((a as f64 - e).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn relu(x: &Ref) -> Ref {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Direct zero-padded cross-correlation.
pub fn conv(x: &Ref, spec: &ConvSpec) -> Ref {
    let k = spec.kernel();
    let [co, ci, kh, kw] = k.shape();
    let [n, c, h, w] = x.shape;
    assert_eq!(c, ci);
    let s = spec.stride();
    let (ph, pw) = spec.padding();
    let oh = (h + 2 * ph - kh) / s + 1;
    let ow = (w + 2 * pw - kw) / s + 1;
    let mut out = Ref::zeros([n, co, oh, ow]);
    for ni in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = spec.bias().map_or(0.0, |b| b[o] as f64);
                    for i in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky) as i64 - ph as i64;
                                let ix = (ox * s + kx) as i64 - pw as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                acc += k.at(o, i, ky, kx) as f64 * x.get(ni, i, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(ni, o, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Bilinear sampling written as a tent-kernel sum over every pixel, with
/// the sample point clamped to the frame.
pub fn warp(src: &Ref, flow: &Ref) -> Ref {
    let [n, c, h, w] = src.shape;
    let mut out = Ref::zeros(src.shape);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let sx = (x as f64 + flow.get(ni, 0, y, x)).clamp(0.0, (w - 1) as f64);
                let sy = (y as f64 + flow.get(ni, 1, y, x)).clamp(0.0, (h - 1) as f64);
                for ci in 0..c {
                    let mut acc = 0.0;
                    for qy in 0..h {
                        for qx in 0..w {
                            let wt = (1.0 - (sx - qx as f64).abs()).max(0.0) * (1.0 - (sy - qy as f64).abs()).max(0.0);
                            acc += wt * src.get(ni, ci, qy, qx);
                        }
                    }
                    out.set(ni, ci, y, x, acc);
                }
            }
        }
    }
    out
}

/// Channel `c·r² + dy·r + dx` of the output holds pixel `(y·r+dy, x·r+dx)`.
pub fn shuffle_down(x: &Ref, r: usize) -> Ref {
    let [n, c, h, w] = x.shape;
    let mut out = Ref::zeros([n, c * r * r, h / r, w / r]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let oc = ci * r * r + (y % r) * r + xx % r;
                    out.set(ni, oc, y / r, xx / r, x.get(ni, ci, y, xx));
                }
            }
        }
    }
    out
}

pub fn fac_correlate(f0: &Ref, f1: &Ref, flow: &Ref, w: &deblur_mfi::fac::FacWeights) -> Ref {
    let warped = warp(f1, flow);
    let q = conv(f0, &w.query);
    let k = conv(&warped, &w.key);
    let v = conv(&warped, &w.value);
    let [n, c, h, wd] = f0.shape;
    let mut out = Ref::zeros(f0.shape);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..wd {
                let score: f64 = (0..c).map(|ci| q.get(ni, ci, y, x) * k.get(ni, ci, y, x)).sum();
                for ci in 0..c {
                    out.set(ni, ci, y, x, score * v.get(ni, ci, y, x));
                }
            }
        }
    }
    out
}

pub fn bolster(f0: &Ref, fac: &Ref, w: &deblur_mfi::fac::FacWeights) -> Ref {
    let e = conv(fac, &w.embed);
    let hidden = relu(&conv(&Ref::cat(&[&e, f0]), &w.gate1));
    let gate = conv(&hidden, &w.gate2).map(sigmoid);
    let [n, c, h, wd] = f0.shape;
    let mut out = Ref::zeros(f0.shape);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..wd {
                    let g = gate.get(ni, 0, y, x);
                    out.set(ni, ci, y, x, g * f0.get(ni, ci, y, x) + (1.0 - g) * e.get(ni, ci, y, x));
                }
            }
        }
    }
    out
}

pub fn mixer(agg2: &Ref, fp: &Ref, m: &deblur_mfi::boost::Mixer) -> Ref {
    let pair = |x: &Ref, c: &[ConvSpec; 2]| relu(&conv(&relu(&conv(x, &c[0])), &c[1]));
    let a = pair(agg2, &m.agg_branch);
    let b = pair(fp, &m.flow_branch);
    pair(&Ref::cat(&[&a, &b]), &m.fuse)
}

fn gru_half(h: &Ref, m: &Ref, g: &deblur_mfi::boost::GruGates) -> Ref {
    let hx = Ref::cat(&[h, m]);
    let z = conv(&hx, &g.z).map(sigmoid);
    let r = conv(&hx, &g.r).map(sigmoid);
    let mut rh = h.clone();
    for (v, rv) in rh.data.iter_mut().zip(&r.data) {
        *v *= rv;
    }
    let q = conv(&Ref::cat(&[&rh, m]), &g.q).map(f64::tanh);
    let mut out = h.clone();
    for i in 0..out.data.len() {
        out.data[i] = (1.0 - z.data[i]) * h.data[i] + z.data[i] * q.data[i];
    }
    out
}

/// `(F_rec_next, delta)` of one booster step.
pub fn gru_step(h: &Ref, m: &Ref, gb: &deblur_mfi::boost::GruBooster) -> (Ref, Ref) {
    let h1 = gru_half(h, m, &gb.horizontal);
    let h2 = gru_half(&h1, m, &gb.vertical);
    let d = conv(&relu(&conv(&h2, &gb.delta[0])), &gb.delta[1]);
    (h2, d)
}

/// Normalised forward splat of `−flow` with a tent kernel, `None` for holes.
pub fn splat_reverse(flow: &Ref, n: usize) -> Vec<Option<(f64, f64)>> {
    let [_, _, h, w] = flow.shape;
    let mut out = Vec::with_capacity(h * w);
    for ty in 0..h {
        for tx in 0..w {
            let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = (flow.get(n, 0, y, x), flow.get(n, 1, y, x));
                    let wt = (1.0 - (x as f64 + dx - tx as f64).abs()).max(0.0)
                        * (1.0 - (y as f64 + dy - ty as f64).abs()).max(0.0);
                    sx -= wt * dx;
                    sy -= wt * dy;
                    sw += wt;
                }
            }
            out.push((sw >= 1e-6).then(|| (sx / sw, sy / sw)));
        }
    }
    out
}

/// SSIM evaluated window by window with the explicit 2-D Gaussian.
pub fn ssim(a: &Tensor, b: &Tensor) -> f64 {
    let [n, c, h, w] = a.shape();
    let k = 11;
    let g: Vec<f64> = (0..k)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            win[i * k + j] = g[i] * g[j];
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut total, mut count) = (0.0, 0usize);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..=h - k {
                for ox in 0..=w - k {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for i in 0..k {
                        for j in 0..k {
                            ma += win[i * k + j] * a.at(ni, ci, oy + i, ox + j) as f64;
                            mb += win[i * k + j] * b.at(ni, ci, oy + i, ox + j) as f64;
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..k {
                        for j in 0..k {
                            let da = a.at(ni, ci, oy + i, ox + j) as f64 - ma;
                            let db = b.at(ni, ci, oy + i, ox + j) as f64 - mb;
                            va += win[i * k + j] * da * da;
                            vb += win[i * k + j] * db * db;
                            cov += win[i * k + j] * da * db;
                        }
                    }
                    total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Random convolution layer with non-zero biases.
pub fn random_conv(
    rng: &mut ChaCha8Rng,
    c_in: usize,
    c_out: usize,
    kernel: (usize, usize),
    stride: usize,
    bias: bool,
) -> ConvSpec {
    let k = random_tensor(rng, [c_out, c_in, kernel.0, kernel.1], -0.5, 0.5);
    let b = bias.then(|| (0..c_out).map(|_| rng.gen_range(-0.3..0.3)).collect());
    ConvSpec::new(k, b, stride, (kernel.0 / 2, kernel.1 / 2)).unwrap()
}

/// Parameter source drawing uniform weights and non-zero biases, so oracle
/// comparisons exercise every term.
pub struct RandomParams(pub ChaCha8Rng);

impl deblur_mfi::params::ParamSource for RandomParams {
    fn conv(&mut self, _path: &str, s: deblur_mfi::params::ConvShape) -> deblur_mfi::Result<ConvSpec> {
        let bound = s.xavier_bound() as f32;
        let k = random_tensor(&mut self.0, s.kernel_shape(), -bound, bound);
        let b = s
            .bias
            .then(|| (0..s.c_out).map(|_| self.0.gen_range(-0.2..0.2)).collect());
        ConvSpec::new(k, b, s.stride, s.padding)
    }
}
pub fn texture(h: usize, w: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f32> = (0..h * w).map(|_| rng.gen()).collect();
    // 3×3 box smoothing keeps the matcher well conditioned
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in [-1i64, 0, 1] {
                for dx in [-1i64, 0, 1] {
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    s += noise[yy * w + xx];
                }
            }
            out[y * w + x] = s / 9.0;
        }
    }
    out
}

/// Frames of a large texture seen through a window moving `d` pixels right
/// per frame.
pub fn panning(frames: usize, d: usize, size: usize, seed: u64) -> FrameSequence {
    let big_w = size + d * frames;
    let tex = texture(size, big_w, seed);
    let frames = (0..frames)
        .map(|n| Tensor::from_fn([1, 3, size, size], |_, _, y, x| tex[y * big_w + x + n * d]))
        .collect();
    FrameSequence::new(frames, 30.0).unwrap()
}

pub mod suite;
