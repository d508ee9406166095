//! Flow-guided attentive correlation and feature bolstering.
//!
//! For a source feature `F0`, its counterpart `F1` and a flow `f01`:
//!
//! ```text
//! F1w     = W_b(F1, f01)
//! FAC(x)  = [Σ_c Q(F0)(x) ⊙ K(F1w)(x)] · V(F1w)(x)
//! E0      = Conv1(FAC)
//! w01     = σ(Conv3(ReLU(Conv3([E0, F0]))))
//! F0_b    = w01 · F0 + (1 − w01) · E0
//! ```
//!
//! The correlation is pointwise: only the flow-pointed location of `F1`
//! takes part. Gradients never flow into `f01`.

use crate::error::{Error, Result};
use crate::flow::{backward_warp, warp_backward_grad, FlowField};
use crate::nn::{conv2d, conv2d_backward, relu, sigmoid, ConvGrads, ConvSpec, ResStack};
use crate::params::{ConvShape, ParamSource};
use crate::tensor::{Element, Tensor};

/// Parameters shared by both bolstering directions.
#[derive(Clone, Debug, PartialEq)]
pub struct FacWeights<T: Element = f32> {
    pub query: ConvSpec<T>,
    pub key: ConvSpec<T>,
    pub value: ConvSpec<T>,
    pub embed: ConvSpec<T>,
    pub gate1: ConvSpec<T>,
    pub gate2: ConvSpec<T>,
}

impl FacWeights<f32> {
    pub fn new(
        src: &mut dyn ParamSource,
        prefix: &str,
        channels: usize,
        gate_hidden: usize,
        projection_bias: bool,
    ) -> Result<Self> {
        let proj = ConvShape::same(channels, channels, 1).with_bias(projection_bias);
        Self::from_specs(
            src.conv(&format!("{prefix}/query"), proj)?,
            src.conv(&format!("{prefix}/key"), proj)?,
            src.conv(&format!("{prefix}/value"), proj)?,
            src.conv(&format!("{prefix}/embed"), ConvShape::same(channels, channels, 1))?,
            src.conv(
                &format!("{prefix}/gate1"),
                ConvShape::same(2 * channels, gate_hidden, 3),
            )?,
            src.conv(&format!("{prefix}/gate2"), ConvShape::same(gate_hidden, 1, 3))?,
        )
    }
}

impl<T: Element> FacWeights<T> {
    pub fn from_specs(
        query: ConvSpec<T>,
        key: ConvSpec<T>,
        value: ConvSpec<T>,
        embed: ConvSpec<T>,
        gate1: ConvSpec<T>,
        gate2: ConvSpec<T>,
    ) -> Result<Self> {
        let c = query.c_in();
        let pointwise = |s: &ConvSpec<T>| s.kernel().spatial() == (1, 1) && s.c_in() == c && s.c_out() == c;
        if !(pointwise(&query) && pointwise(&key) && pointwise(&value) && pointwise(&embed)) {
            return Err(Error::invalid(
                "fac",
                format!("projections must be 1×1 convolutions preserving {c} channels"),
            ));
        }
        if gate1.c_in() != 2 * c || gate2.c_in() != gate1.c_out() || gate2.c_out() != 1 {
            return Err(Error::invalid(
                "fac",
                format!(
                    "gate must map {} → {} → 1 channels, got {} → {} → {}",
                    2 * c,
                    gate1.c_out(),
                    gate1.c_in(),
                    gate2.c_in(),
                    gate2.c_out()
                ),
            ));
        }
        Ok(FacWeights {
            query,
            key,
            value,
            embed,
            gate1,
            gate2,
        })
    }

    pub fn channels(&self) -> usize {
        self.query.c_in()
    }

    pub fn cast<U: Element>(&self) -> FacWeights<U> {
        FacWeights {
            query: self.query.cast(),
            key: self.key.cast(),
            value: self.value.cast(),
            embed: self.embed.cast(),
            gate1: self.gate1.cast(),
            gate2: self.gate2.cast(),
        }
    }

    pub fn param_count(&self) -> usize {
        [
            &self.query,
            &self.key,
            &self.value,
            &self.embed,
            &self.gate1,
            &self.gate2,
        ]
        .iter()
        .map(|s| s.param_count())
        .sum()
    }

    fn check(&self, op: &'static str, f0: &Tensor<T>, f1: &Tensor<T>) -> Result<()> {
        f0.expect_channels(op, self.channels())?;
        f0.expect_shape(op, f1.shape())
    }
}

/// `Σ_c a ⊙ b` over channels, accumulated in `f64`.
fn channel_dot<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Vec<f64> {
    let [n, c, h, w] = a.shape();
    let hw = h * w;
    let mut s = vec![0.0f64; n * hw];
    for ni in 0..n {
        let acc = &mut s[ni * hw..(ni + 1) * hw];
        for ci in 0..c {
            for ((d, &x), &y) in acc.iter_mut().zip(a.plane(ni, ci)).zip(b.plane(ni, ci)) {
                *d += x.to_f64() * y.to_f64();
            }
        }
    }
    s
}

/// Multiplies every channel of `x` by a per-pixel scalar map.
fn broadcast_mul<T: Element>(x: &Tensor<T>, map: &[f64]) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = x.clone();
    for ni in 0..n {
        for ci in 0..c {
            let m = &map[ni * hw..(ni + 1) * hw];
            for (v, &s) in out.plane_mut(ni, ci).iter_mut().zip(m) {
                *v = T::from_f64(v.to_f64() * s);
            }
        }
    }
    out
}

struct CorrelateTape<T: Element> {
    warped: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    score: Vec<f64>,
    out: Tensor<T>,
}

fn correlate_taped<T: Element>(
    f0: &Tensor<T>,
    f1: &Tensor<T>,
    f01: &FlowField<T>,
    w: &FacWeights<T>,
) -> Result<CorrelateTape<T>> {
    w.check("fac_correlate", f0, f1)?;
    let warped = backward_warp(f1, f01)?;
    let q = conv2d(f0, &w.query)?;
    let k = conv2d(&warped, &w.key)?;
    let v = conv2d(&warped, &w.value)?;
    let score = channel_dot(&q, &k);
    let out = broadcast_mul(&v, &score);
    Ok(CorrelateTape {
        warped,
        q,
        k,
        v,
        score,
        out,
    })
}

/// Attentive correlation of `f0` against the flow-pointed locations of `f1`.
pub fn fac_correlate<T: Element>(
    f0: &Tensor<T>,
    f1: &Tensor<T>,
    f01: &FlowField<T>,
    w: &FacWeights<T>,
) -> Result<Tensor<T>> {
    Ok(correlate_taped(f0, f1, f01, w)?.out)
}

struct BolsterTape<T: Element> {
    embedded: Tensor<T>,
    gate_in: Tensor<T>,
    gate_pre: Tensor<T>,
    gate_hidden: Tensor<T>,
    gate: Vec<f64>,
    out: Tensor<T>,
}

fn bolster_taped<T: Element>(f0: &Tensor<T>, fac01: &Tensor<T>, w: &FacWeights<T>) -> Result<BolsterTape<T>> {
    w.check("bolster", f0, fac01)?;
    let embedded = conv2d(fac01, &w.embed)?;
    let gate_in = Tensor::cat(&[&embedded, f0])?;
    let gate_pre = conv2d(&gate_in, &w.gate1)?;
    let gate_hidden = relu(&gate_pre);
    let logits = conv2d(&gate_hidden, &w.gate2)?;
    let gate: Vec<f64> = logits.data().iter().map(|v| sigmoid(v.to_f64())).collect();
    let [n, c, h, wd] = f0.shape();
    let hw = h * wd;
    let mut out = Vec::with_capacity(f0.len());
    for ni in 0..n {
        for ci in 0..c {
            let g = &gate[ni * hw..(ni + 1) * hw];
            for ((&a, &e), &s) in f0.plane(ni, ci).iter().zip(embedded.plane(ni, ci)).zip(g) {
                out.push(T::from_f64(s * a.to_f64() + (1.0 - s) * e.to_f64()));
            }
        }
    }
    Ok(BolsterTape {
        embedded,
        gate_in,
        gate_pre,
        gate_hidden,
        gate,
        out: Tensor::from_vec(f0.shape(), out)?,
    })
}

/// Gated convex combination of `f0` and the embedded correlation.
pub fn bolster<T: Element>(f0: &Tensor<T>, fac01: &Tensor<T>, w: &FacWeights<T>) -> Result<Tensor<T>> {
    Ok(bolster_taped(f0, fac01, w)?.out)
}

/// The gate map `w01` used by [`bolster`], exposed for inspection.
pub fn bolster_gate<T: Element>(f0: &Tensor<T>, fac01: &Tensor<T>, w: &FacWeights<T>) -> Result<Tensor<T>> {
    let tape = bolster_taped(f0, fac01, w)?;
    let [n, _, h, wd] = f0.shape();
    Tensor::from_vec([n, 1, h, wd], tape.gate.into_iter().map(T::from_f64).collect())
}

/// Encodes both features with the shared ResB cascade, then bolsters each
/// against the other with the shared FAC weights.
pub fn fac_fb_forward(
    f0p: &Tensor,
    f1p: &Tensor,
    f01: &FlowField,
    f10: &FlowField,
    w: &FacWeights,
    encoder: &ResStack,
) -> Result<(Tensor, Tensor)> {
    let f0 = encoder.forward(f0p)?;
    let f1 = encoder.forward(f1p)?;
    let f0b = bolster(&f0, &fac_correlate(&f0, &f1, f01, w)?, w)?;
    let f1b = bolster(&f1, &fac_correlate(&f1, &f0, f10, w)?, w)?;
    Ok((f0b, f1b))
}

/// Gradients of `bolster(F0, fac_correlate(F0, F1, f01))` with respect to
/// both features and every weight. The flow gradient is identically zero.
#[derive(Clone, Debug)]
pub struct FacGrads<T: Element> {
    pub f0: Tensor<T>,
    pub f1: Tensor<T>,
    pub flow: FlowField<T>,
    pub query: ConvGrads<T>,
    pub key: ConvGrads<T>,
    pub value: ConvGrads<T>,
    pub embed: ConvGrads<T>,
    pub gate1: ConvGrads<T>,
    pub gate2: ConvGrads<T>,
}

/// Forward of the differentiated composite: bolstered `F0`.
pub fn fac_bolster_forward<T: Element>(
    f0: &Tensor<T>,
    f1: &Tensor<T>,
    f01: &FlowField<T>,
    w: &FacWeights<T>,
) -> Result<Tensor<T>> {
    let fac = fac_correlate(f0, f1, f01, w)?;
    bolster(f0, &fac, w)
}

pub fn fac_backward<T: Element>(
    f0: &Tensor<T>,
    f1: &Tensor<T>,
    f01: &FlowField<T>,
    w: &FacWeights<T>,
    upstream: &Tensor<T>,
) -> Result<FacGrads<T>> {
    let corr = correlate_taped(f0, f1, f01, w)?;
    let bol = bolster_taped(f0, &corr.out, w)?;
    upstream.expect_shape("fac_backward", f0.shape())?;
    let [n, c, h, wd] = f0.shape();
    let hw = h * wd;
    let to_t = |v: Vec<f64>, shape| Tensor::<T>::from_vec(shape, v.into_iter().map(T::from_f64).collect());

    // out = s·F0 + (1 − s)·E
    let mut d_f0 = vec![0.0f64; f0.len()];
    let mut d_e = vec![0.0f64; f0.len()];
    let mut d_gate = vec![0.0f64; n * hw];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let up = upstream.plane(ni, ci);
            let a = f0.plane(ni, ci);
            let e = bol.embedded.plane(ni, ci);
            for i in 0..hw {
                let g = up[i].to_f64();
                let s = bol.gate[ni * hw + i];
                d_f0[base + i] = g * s;
                d_e[base + i] = g * (1.0 - s);
                d_gate[ni * hw + i] += g * (a[i].to_f64() - e[i].to_f64());
            }
        }
    }
    let d_logit: Vec<f64> = d_gate.iter().zip(&bol.gate).map(|(&d, &s)| d * s * (1.0 - s)).collect();
    let gate2 = conv2d_backward(&bol.gate_hidden, &w.gate2, &to_t(d_logit, [n, 1, h, wd])?)?;
    let d_pre = gate2.input.zip_map(&bol.gate_pre, "fac_backward", |g, p| {
        if p.to_f64() > 0.0 {
            g
        } else {
            T::ZERO
        }
    })?;
    let gate1 = conv2d_backward(&bol.gate_in, &w.gate1, &d_pre)?;
    let mut gate_parts = gate1.input.split_channels(&[c, c])?.into_iter();
    let d_e_gate = gate_parts.next().unwrap();
    let d_f0_gate = gate_parts.next().unwrap();
    let d_e = to_t(d_e, f0.shape())?.add(&d_e_gate)?;

    let embed = conv2d_backward(&corr.out, &w.embed, &d_e)?;
    // fac = score ⊙ v
    let d_fac = &embed.input;
    let d_v = broadcast_mul(d_fac, &corr.score);
    let d_score = channel_dot(d_fac, &corr.v);
    let d_q = broadcast_mul(&corr.k, &d_score);
    let d_k = broadcast_mul(&corr.q, &d_score);
    let query = conv2d_backward(f0, &w.query, &d_q)?;
    let key = conv2d_backward(&corr.warped, &w.key, &d_k)?;
    let value = conv2d_backward(&corr.warped, &w.value, &d_v)?;
    let d_warped = key.input.add(&value.input)?;
    let (d_f1, d_flow) = warp_backward_grad(f1, f01, &d_warped, true)?;

    let d_f0 = to_t(d_f0, f0.shape())?.add(&d_f0_gate)?.add(&query.input)?;
    Ok(FacGrads {
        f0: d_f0,
        f1: d_f1,
        flow: d_flow,
        query,
        key,
        value,
        embed,
        gate1,
        gate2,
    })
}
