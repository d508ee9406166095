//! Flow arithmetic and warping: linear intermediate flows, complementary
//! flow reversal, bilinear backward warping and occlusion-weighted blending.

use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::tensor::{Element, Tensor};

/// Two-channel displacement field; channel 0 is `dx`, channel 1 is `dy`, in pixels.
pub type FlowField<T = f32> = Tensor<T>;

/// Splat weight below which a reversed-flow pixel counts as a hole.
pub const SPLAT_EPS: f64 = 1e-6;

/// Flows from time `t` to both anchors plus the occlusion logit of the
/// time-0 branch.
#[derive(Clone, Debug, PartialEq)]
pub struct TriFlow<T: Element = f32> {
    pub flow_t0: FlowField<T>,
    pub flow_t1: FlowField<T>,
    pub occ_logit: Tensor<T>,
}

impl<T: Element> TriFlow<T> {
    pub fn new(flow_t0: FlowField<T>, flow_t1: FlowField<T>, occ_logit: Tensor<T>) -> Result<Self> {
        flow_t0.expect_channels("triflow", 2)?;
        flow_t1.expect_channels("triflow", 2)?;
        occ_logit.expect_channels("triflow", 1)?;
        flow_t0.expect_same_grid("triflow", &flow_t1)?;
        flow_t0.expect_same_grid("triflow", &occ_logit)?;
        Ok(TriFlow {
            flow_t0,
            flow_t1,
            occ_logit,
        })
    }

    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        TriFlow {
            flow_t0: Tensor::zeros([n, 2, h, w]),
            flow_t1: Tensor::zeros([n, 2, h, w]),
            occ_logit: Tensor::zeros([n, 1, h, w]),
        }
    }

    /// `[f_t0, f_t1, o_t0]` as one 5-channel tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::cat(&[&self.flow_t0, &self.flow_t1, &self.occ_logit]).expect("validated grids")
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        let mut parts = t.split_channels(&[2, 2, 1])?.into_iter();
        let (a, b, c) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
        Self::new(a, b, c)
    }

    /// Occlusion weights `(ō_t0, ō_t1)` with `ō_t1 = 1 − ō_t0`.
    pub fn occlusion_weights(&self) -> (Vec<f64>, Vec<f64>) {
        self.occ_logit
            .data()
            .iter()
            .map(|&l| {
                let o0 = sigmoid(l.to_f64());
                (o0, 1.0 - o0)
            })
            .unzip()
    }

    pub fn cast<U: Element>(&self) -> TriFlow<U> {
        TriFlow {
            flow_t0: self.flow_t0.cast(),
            flow_t1: self.flow_t1.cast(),
            occ_logit: self.occ_logit.cast(),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let [n, _, h, w] = self.occ_logit.shape();
        (n, h, w)
    }
}

fn check_t(op: &'static str, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(op, format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

fn check_flow<T: Element>(op: &'static str, frame: &Tensor<T>, flow: &FlowField<T>) -> Result<()> {
    flow.expect_channels(op, 2)?;
    frame.expect_same_grid(op, flow)
}

/// `f_0t = t·f_01`, `f_1t = (1 − t)·f_10`.
pub fn approx_intermediate_flows<T: Element>(
    f01: &FlowField<T>,
    f10: &FlowField<T>,
    t: f64,
) -> Result<(FlowField<T>, FlowField<T>)> {
    check_t("approx_intermediate_flows", t)?;
    f01.expect_channels("approx_intermediate_flows", 2)?;
    f01.expect_shape("approx_intermediate_flows", f10.shape())?;
    Ok((f01.scale(t), f10.scale(1.0 - t)))
}

/// Normalised bilinear forward splat of `−flow` from each source pixel `x`
/// to `x + flow(x)`. Returns the per-pixel reversed flow (`f64`, 2 planes)
/// and the accumulated splat weight.
fn splat_reverse<T: Element>(flow: &FlowField<T>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = flow.spatial();
    let hw = h * w;
    let mut num = vec![0.0f64; 2 * hw];
    let mut wsum = vec![0.0f64; hw];
    let fx = flow.plane(n, 0);
    let fy = flow.plane(n, 1);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (fx[i].to_f64(), fy[i].to_f64());
            let (px, py) = (x as f64 + dx, y as f64 + dy);
            let (x0, y0) = (px.floor(), py.floor());
            let (ax, ay) = (px - x0, py - y0);
            for (oy, wy) in [(0.0, 1.0 - ay), (1.0, ay)] {
                for (ox, wx) in [(0.0, 1.0 - ax), (1.0, ax)] {
                    let (tx, ty) = (x0 + ox, y0 + oy);
                    let wt = wx * wy;
                    if wt <= 0.0 || tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                        continue;
                    }
                    let j = ty as usize * w + tx as usize;
                    num[j] -= wt * dx;
                    num[hw + j] -= wt * dy;
                    wsum[j] += wt;
                }
            }
        }
    }
    for j in 0..hw {
        if wsum[j] >= SPLAT_EPS {
            num[j] /= wsum[j];
            num[hw + j] /= wsum[j];
        } else {
            num[j] = 0.0;
            num[hw + j] = 0.0;
        }
    }
    (num, wsum)
}

/// Complementary flow reversal: converts anchor→t flows into t→anchor
/// flows. Holes in one direction are filled from the other direction under
/// linear motion, `f_t0 = −t/(1−t)·f_t1` and vice versa.
pub fn cfr_reverse<T: Element>(f0t: &FlowField<T>, f1t: &FlowField<T>, t: f64) -> Result<(FlowField<T>, FlowField<T>)> {
    check_t("cfr_reverse", t)?;
    f0t.expect_channels("cfr_reverse", 2)?;
    f0t.expect_shape("cfr_reverse", f1t.shape())?;
    let [n, _, h, w] = f0t.shape();
    let hw = h * w;
    // at the endpoints the complement is undefined; holes stay zero there
    let to_t0 = if t < 1.0 { -t / (1.0 - t) } else { 0.0 };
    let to_t1 = if t > 0.0 { -(1.0 - t) / t } else { 0.0 };
    let mut ft0 = Vec::with_capacity(n * 2 * hw);
    let mut ft1 = Vec::with_capacity(n * 2 * hw);
    for ni in 0..n {
        let (r0, w0) = splat_reverse(f0t, ni);
        let (r1, w1) = splat_reverse(f1t, ni);
        for c in 0..2 {
            for j in 0..hw {
                let v0 = if w0[j] >= SPLAT_EPS {
                    r0[c * hw + j]
                } else if w1[j] >= SPLAT_EPS {
                    to_t0 * r1[c * hw + j]
                } else {
                    0.0
                };
                ft0.push(T::from_f64(v0));
            }
        }
        for c in 0..2 {
            for j in 0..hw {
                let v1 = if w1[j] >= SPLAT_EPS {
                    r1[c * hw + j]
                } else if w0[j] >= SPLAT_EPS {
                    to_t1 * r0[c * hw + j]
                } else {
                    0.0
                };
                ft1.push(T::from_f64(v1));
            }
        }
    }
    Ok((
        Tensor::from_vec([n, 2, h, w], ft0)?,
        Tensor::from_vec([n, 2, h, w], ft1)?,
    ))
}

/// Bilinear taps of one sample point with border clamping.
#[derive(Clone, Copy, Debug)]
struct Taps {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    ax: f64,
    ay: f64,
    /// Whether the raw coordinate lay inside the frame (non-zero flow gradient).
    in_x: bool,
    in_y: bool,
}

impl Taps {
    #[inline]
    fn new(sx: f64, sy: f64, w: usize, h: usize) -> Self {
        let (wmax, hmax) = ((w - 1) as f64, (h - 1) as f64);
        let cx = sx.clamp(0.0, wmax);
        let cy = sy.clamp(0.0, hmax);
        let (fx, fy) = (cx.floor(), cy.floor());
        let x0 = fx as usize;
        let y0 = fy as usize;
        Taps {
            x0,
            y0,
            x1: (x0 + 1).min(w - 1),
            y1: (y0 + 1).min(h - 1),
            ax: cx - fx,
            ay: cy - fy,
            in_x: (0.0..=wmax).contains(&sx),
            in_y: (0.0..=hmax).contains(&sy),
        }
    }

    #[inline]
    fn sample<T: Element>(&self, plane: &[T], w: usize) -> f64 {
        let v00 = plane[self.y0 * w + self.x0].to_f64();
        let v01 = plane[self.y0 * w + self.x1].to_f64();
        let v10 = plane[self.y1 * w + self.x0].to_f64();
        let v11 = plane[self.y1 * w + self.x1].to_f64();
        (1.0 - self.ay) * ((1.0 - self.ax) * v00 + self.ax * v01) + self.ay * ((1.0 - self.ax) * v10 + self.ax * v11)
    }
}

fn taps_for<T: Element>(flow: &FlowField<T>, n: usize) -> Vec<Taps> {
    let (h, w) = flow.spatial();
    let fx = flow.plane(n, 0);
    let fy = flow.plane(n, 1);
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            taps.push(Taps::new(x as f64 + fx[i].to_f64(), y as f64 + fy[i].to_f64(), w, h));
        }
    }
    taps
}

/// Backward warping: `out(x) = src(x + flow(x))`, bilinear, border-clamped.
pub fn backward_warp<T: Element>(src: &Tensor<T>, flow: &FlowField<T>) -> Result<Tensor<T>> {
    check_flow("backward_warp", src, flow)?;
    let [n, c, h, w] = src.shape();
    let mut out = Vec::with_capacity(src.len());
    for ni in 0..n {
        let taps = taps_for(flow, ni);
        for ci in 0..c {
            let plane = src.plane(ni, ci);
            out.extend(taps.iter().map(|tp| T::from_f64(tp.sample(plane, w))));
        }
    }
    Tensor::from_vec([n, c, h, w], out)
}

/// Gradients of [`backward_warp`] with respect to the source and the flow.
/// With `block_flow_grad`, the flow gradient is all zeros.
pub fn warp_backward_grad<T: Element>(
    src: &Tensor<T>,
    flow: &FlowField<T>,
    upstream: &Tensor<T>,
    block_flow_grad: bool,
) -> Result<(Tensor<T>, FlowField<T>)> {
    check_flow("warp_backward_grad", src, flow)?;
    upstream.expect_shape("warp_backward_grad", src.shape())?;
    let [n, c, h, w] = src.shape();
    let hw = h * w;
    let mut g_src = vec![0.0f64; src.len()];
    let mut g_flow = vec![0.0f64; flow.len()];
    for ni in 0..n {
        let taps = taps_for(flow, ni);
        for ci in 0..c {
            let plane = src.plane(ni, ci);
            let up = upstream.plane(ni, ci);
            let base = (ni * c + ci) * hw;
            for (i, tp) in taps.iter().enumerate() {
                let g = up[i].to_f64();
                if g == 0.0 {
                    continue;
                }
                let (ax, ay) = (tp.ax, tp.ay);
                g_src[base + tp.y0 * w + tp.x0] += g * (1.0 - ay) * (1.0 - ax);
                g_src[base + tp.y0 * w + tp.x1] += g * (1.0 - ay) * ax;
                g_src[base + tp.y1 * w + tp.x0] += g * ay * (1.0 - ax);
                g_src[base + tp.y1 * w + tp.x1] += g * ay * ax;
                if block_flow_grad {
                    continue;
                }
                let v00 = plane[tp.y0 * w + tp.x0].to_f64();
                let v01 = plane[tp.y0 * w + tp.x1].to_f64();
                let v10 = plane[tp.y1 * w + tp.x0].to_f64();
                let v11 = plane[tp.y1 * w + tp.x1].to_f64();
                if tp.in_x {
                    g_flow[ni * 2 * hw + i] += g * ((1.0 - ay) * (v01 - v00) + ay * (v11 - v10));
                }
                if tp.in_y {
                    g_flow[(ni * 2 + 1) * hw + i] += g * ((1.0 - ax) * (v10 - v00) + ax * (v11 - v01));
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(src.shape(), g_src.into_iter().map(T::from_f64).collect())?,
        Tensor::from_vec(flow.shape(), g_flow.into_iter().map(T::from_f64).collect())?,
    ))
}

/// Per-pixel blend weights `(w0, w1, denominator)`. The weights are the
/// raw terms divided by their exact sum, so they add up to one. The sum is
/// at least `min(t, 1 − t) / 2` inside the open interval; only at an
/// endpoint can it vanish, and then the weights fall back to `(1 − t, t)`.
#[inline]
fn blend_weights(o0: f64, o1: f64, t: f64) -> (f64, f64, f64) {
    let a = (1.0 - t) * o0;
    let b = t * o1;
    let d = a + b;
    if d > 0.0 {
        (a / d, b / d, d)
    } else {
        (1.0 - t, t, 0.0)
    }
}

fn check_blend<T: Element>(op: &'static str, x0: &Tensor<T>, x1: &Tensor<T>, tri: &TriFlow<T>, t: f64) -> Result<()> {
    check_t(op, t)?;
    x0.expect_shape(op, x1.shape())?;
    x0.expect_same_grid(op, &tri.occ_logit)?;
    tri.flow_t0.expect_channels(op, 2)?;
    tri.flow_t1.expect_channels(op, 2)?;
    tri.occ_logit.expect_channels(op, 1)?;
    x0.expect_same_grid(op, &tri.flow_t0)?;
    x0.expect_same_grid(op, &tri.flow_t1)
}

fn blend<T: Element>(op: &'static str, x0: &Tensor<T>, x1: &Tensor<T>, tri: &TriFlow<T>, t: f64) -> Result<Tensor<T>> {
    check_blend(op, x0, x1, tri, t)?;
    let w0 = backward_warp(x0, &tri.flow_t0)?;
    let w1 = backward_warp(x1, &tri.flow_t1)?;
    let (o0, o1) = tri.occlusion_weights();
    let [n, c, h, w] = x0.shape();
    let hw = h * w;
    let mut out = Vec::with_capacity(x0.len());
    for ni in 0..n {
        for ci in 0..c {
            let p0 = w0.plane(ni, ci);
            let p1 = w1.plane(ni, ci);
            for i in 0..hw {
                let (a, b, _) = blend_weights(o0[ni * hw + i], o1[ni * hw + i], t);
                out.push(T::from_f64(a * p0[i].to_f64() + b * p1[i].to_f64()));
            }
        }
    }
    Tensor::from_vec([n, c, h, w], out)
}

/// Feature-domain warping and blending:
/// `[(1−t)·ō_t0·W_b(F0, f_t0) + t·ō_t1·W_b(F1, f_t1)] / [(1−t)·ō_t0 + t·ō_t1]`.
pub fn fwb<T: Element>(f0: &Tensor<T>, f1: &Tensor<T>, tri: &TriFlow<T>, t: f64) -> Result<Tensor<T>> {
    blend("fwb", f0, f1, tri, t)
}

/// Pixel-domain warping and blending; same contract as [`fwb`].
pub fn pwb<T: Element>(s0: &Tensor<T>, s1: &Tensor<T>, tri: &TriFlow<T>, t: f64) -> Result<Tensor<T>> {
    blend("pwb", s0, s1, tri, t)
}

/// Gradients of [`fwb`]/[`pwb`] with respect to every input.
#[derive(Clone, Debug)]
pub struct BlendGrads<T: Element> {
    pub x0: Tensor<T>,
    pub x1: Tensor<T>,
    pub flow_t0: FlowField<T>,
    pub flow_t1: FlowField<T>,
    pub occ_logit: Tensor<T>,
}

pub fn blend_backward<T: Element>(
    x0: &Tensor<T>,
    x1: &Tensor<T>,
    tri: &TriFlow<T>,
    t: f64,
    upstream: &Tensor<T>,
) -> Result<BlendGrads<T>> {
    check_blend("blend_backward", x0, x1, tri, t)?;
    upstream.expect_shape("blend_backward", x0.shape())?;
    let w0 = backward_warp(x0, &tri.flow_t0)?;
    let w1 = backward_warp(x1, &tri.flow_t1)?;
    let (o0, o1) = tri.occlusion_weights();
    let [n, c, h, w] = x0.shape();
    let hw = h * w;
    let mut g_w0 = vec![0.0f64; x0.len()];
    let mut g_w1 = vec![0.0f64; x0.len()];
    let mut g_logit = vec![0.0f64; n * hw];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let p0 = w0.plane(ni, ci);
            let p1 = w1.plane(ni, ci);
            let up = upstream.plane(ni, ci);
            for i in 0..hw {
                let g = up[i].to_f64();
                let (oa, ob) = (o0[ni * hw + i], o1[ni * hw + i]);
                let (wa, wb, d) = blend_weights(oa, ob, t);
                g_w0[base + i] = g * wa;
                g_w1[base + i] = g * wb;
                let (v0, v1) = (p0[i].to_f64(), p1[i].to_f64());
                // d(out)/d(ō_t0), with ō_t1 = 1 − ō_t0
                let dnum = (1.0 - t) * v0 - t * v1;
                let d_out = if d > 0.0 {
                    let out = wa * v0 + wb * v1;
                    (dnum - out * ((1.0 - t) - t)) / d
                } else {
                    0.0
                };
                g_logit[ni * hw + i] += g * d_out * oa * ob;
            }
        }
    }
    let to_t = |v: Vec<f64>, shape| Tensor::from_vec(shape, v.into_iter().map(T::from_f64).collect());
    let g_w0 = to_t(g_w0, x0.shape())?;
    let g_w1 = to_t(g_w1, x0.shape())?;
    let (gx0, gf0) = warp_backward_grad(x0, &tri.flow_t0, &g_w0, false)?;
    let (gx1, gf1) = warp_backward_grad(x1, &tri.flow_t1, &g_w1, false)?;
    Ok(BlendGrads {
        x0: gx0,
        x1: gx1,
        flow_t0: gf0,
        flow_t1: gf1,
        occ_logit: to_t(g_logit, tri.occ_logit.shape())?,
    })
}
