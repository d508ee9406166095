//! Recursive boosting: pixel flows are refined by a separable-conv GRU,
//! re-blended, and the three frames are corrected residually each
//! iteration. Weights are shared across iterations.

use crate::backbone::{BaselineOut, Quad};
use crate::error::{Error, Result};
use crate::flow::{pwb, TriFlow};
use crate::nn::{activate, conv2d, relu, Activation, ConvSpec, ResStack};
use crate::params::{ArchConfig, ConvShape, ParamSource};
use crate::tensor::Tensor;

/// Channels of `[S0r, Str, S1r, B-1..B2, f01, f10, fF]`.
pub const AGG2_CHANNELS: usize = 3 * 3 + 3 * 4 + 2 * 2 + 5;

/// Channels of the decoder input: Agg² plus the current pixel flows and
/// the recurrent state.
pub fn agg3_channels(feat: usize) -> usize {
    AGG2_CHANNELS + 5 + feat
}

pub fn aggregate2(base: &BaselineOut, frames: &Quad) -> Result<Tensor> {
    let agg = Tensor::cat(&[
        &base.s0r,
        &base.str_,
        &base.s1r,
        &frames[0],
        &frames[1],
        &frames[2],
        &frames[3],
        &base.f01,
        &base.f10,
        &base.ff.to_tensor(),
    ])?;
    agg.expect_channels("aggregate2", AGG2_CHANNELS)?;
    Ok(agg)
}

/// Two `Conv7 → ReLU → Conv3 → ReLU` branches fused by
/// `Conv3 → ReLU → Conv3 → ReLU`.
#[derive(Clone, Debug)]
pub struct Mixer {
    pub agg_branch: [ConvSpec; 2],
    pub flow_branch: [ConvSpec; 2],
    pub fuse: [ConvSpec; 2],
}

fn conv_relu_pair(x: &Tensor, convs: &[ConvSpec; 2]) -> Result<Tensor> {
    let h = relu(&conv2d(x, &convs[0])?);
    Ok(relu(&conv2d(&h, &convs[1])?))
}

impl Mixer {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cfg: &ArchConfig) -> Result<Self> {
        let m = cfg.mixer_width;
        let mut c = |name: &str, shape| src.conv(&format!("{prefix}/{name}"), shape);
        Ok(Mixer {
            agg_branch: [
                c("agg1", ConvShape::same(AGG2_CHANNELS, m, 7))?,
                c("agg2", ConvShape::same(m, m, 3))?,
            ],
            flow_branch: [
                c("flow1", ConvShape::same(5, m, 7))?,
                c("flow2", ConvShape::same(m, m, 3))?,
            ],
            fuse: [
                c("fuse1", ConvShape::same(2 * m, m, 3))?,
                c("fuse2", ConvShape::same(m, cfg.feat, 3))?,
            ],
        })
    }

    pub fn forward(&self, agg2: &Tensor, fp: &TriFlow) -> Result<Tensor> {
        agg2.expect_channels("mixer", AGG2_CHANNELS)?;
        let a = conv_relu_pair(agg2, &self.agg_branch)?;
        let b = conv_relu_pair(&fp.to_tensor(), &self.flow_branch)?;
        conv_relu_pair(&Tensor::cat(&[&a, &b])?, &self.fuse)
    }

    pub fn param_count(&self) -> usize {
        self.agg_branch
            .iter()
            .chain(&self.flow_branch)
            .chain(&self.fuse)
            .map(ConvSpec::param_count)
            .sum()
    }
}

/// One GRU half-step with kernels of a single orientation.
#[derive(Clone, Debug)]
pub struct GruGates {
    pub z: ConvSpec,
    pub r: ConvSpec,
    pub q: ConvSpec,
}

/// Gate values of one half-step, kept for inspection.
#[derive(Clone, Debug)]
pub struct GateTrace {
    pub z: Tensor,
    pub r: Tensor,
}

impl GruGates {
    fn new(src: &mut dyn ParamSource, prefix: &str, feat: usize, kernel: (usize, usize)) -> Result<Self> {
        let shape = ConvShape::rect(2 * feat, feat, kernel);
        Ok(GruGates {
            z: src.conv(&format!("{prefix}/z"), shape)?,
            r: src.conv(&format!("{prefix}/r"), shape)?,
            q: src.conv(&format!("{prefix}/q"), shape)?,
        })
    }

    pub fn step(&self, h: &Tensor, m: &Tensor) -> Result<(Tensor, GateTrace)> {
        let hx = Tensor::cat(&[h, m])?;
        let z = activate(&conv2d(&hx, &self.z)?, Activation::Sigmoid);
        let r = activate(&conv2d(&hx, &self.r)?, Activation::Sigmoid);
        let rh = r.zip_map(h, "gru", |a, b| (a as f64 * b as f64) as f32)?;
        let q = activate(&conv2d(&Tensor::cat(&[&rh, m])?, &self.q)?, Activation::Tanh);
        let mut next = h.clone();
        for ((o, &zv), &qv) in next.data_mut().iter_mut().zip(z.data()).zip(q.data()) {
            let (zv, hv) = (zv as f64, *o as f64);
            *o = ((1.0 - zv) * hv + zv * qv as f64) as f32;
        }
        Ok((next, GateTrace { z, r }))
    }

    fn param_count(&self) -> usize {
        self.z.param_count() + self.r.param_count() + self.q.param_count()
    }
}

/// Horizontal then vertical GRU pass, followed by the flow-increment head.
#[derive(Clone, Debug)]
pub struct GruBooster {
    pub horizontal: GruGates,
    pub vertical: GruGates,
    pub delta: [ConvSpec; 2],
    feat: usize,
}

/// Result of one booster step.
#[derive(Clone, Debug)]
pub struct BoosterStep {
    pub f_rec: Tensor,
    /// Five-channel increment for `[f_t0, f_t1, o_t0]`.
    pub delta: TriFlow,
    pub gates: [GateTrace; 2],
}

impl GruBooster {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cfg: &ArchConfig) -> Result<Self> {
        let f = cfg.feat;
        Ok(GruBooster {
            horizontal: GruGates::new(src, &format!("{prefix}/h"), f, (1, 5))?,
            vertical: GruGates::new(src, &format!("{prefix}/v"), f, (5, 1))?,
            delta: [
                src.conv(&format!("{prefix}/delta1"), ConvShape::same(f, cfg.delta_hidden, 3))?,
                src.conv(&format!("{prefix}/delta2"), ConvShape::same(cfg.delta_hidden, 5, 3))?,
            ],
            feat: f,
        })
    }

    pub fn step(&self, f_rec: &Tensor, m: &Tensor) -> Result<BoosterStep> {
        f_rec.expect_channels("gru_booster_step", self.feat)?;
        m.expect_channels("gru_booster_step", self.feat)?;
        f_rec.expect_shape("gru_booster_step", m.shape())?;
        let (h1, g1) = self.horizontal.step(f_rec, m)?;
        let (h2, g2) = self.vertical.step(&h1, m)?;
        let d = conv2d(&relu(&conv2d(&h2, &self.delta[0])?), &self.delta[1])?;
        Ok(BoosterStep {
            f_rec: h2,
            delta: TriFlow::from_tensor(&d)?,
            gates: [g1, g2],
        })
    }

    pub fn param_count(&self) -> usize {
        self.horizontal.param_count()
            + self.vertical.param_count()
            + self.delta.iter().map(ConvSpec::param_count).sum::<usize>()
    }
}

/// `Conv3 → ResB stack → Conv3` from Agg³ to nine channels (three frames).
#[derive(Clone, Debug)]
pub struct Decoder2 {
    pub head: ConvSpec,
    pub body: ResStack,
    pub proj: ConvSpec,
}

impl Decoder2 {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cfg: &ArchConfig) -> Result<Self> {
        Ok(Decoder2 {
            head: src.conv(
                &format!("{prefix}/head"),
                ConvShape::same(agg3_channels(cfg.feat), cfg.feat, 3),
            )?,
            body: ResStack::new(src, &format!("{prefix}/body"), cfg.feat, cfg.resb)?,
            proj: src.conv(&format!("{prefix}/proj"), ConvShape::same(cfg.feat, 9, 3))?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.head.c_in()
    }

    pub fn forward(&self, agg3: &Tensor) -> Result<Tensor> {
        agg3.expect_channels("decoder2", self.in_channels())?;
        conv2d(&self.body.forward(&conv2d(agg3, &self.head)?)?, &self.proj)
    }

    pub fn param_count(&self) -> usize {
        self.head.param_count() + self.body.param_count() + self.proj.param_count()
    }
}

/// State carried between iterations. Pixel flows are accumulated in `f64`
/// so that the running sum of increments is exact.
#[derive(Clone, Debug)]
pub struct BoostState {
    pub f_p: TriFlow<f64>,
    pub f_rec: Tensor,
    pub iteration: usize,
}

/// Frames at `0`, `t` and `1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub s0: Tensor,
    pub st: Tensor,
    pub s1: Tensor,
}

impl Triplet {
    pub fn all_finite(&self) -> bool {
        self.s0.all_finite() && self.st.all_finite() && self.s1.all_finite()
    }
}

#[derive(Clone, Debug)]
pub struct BoostIteration {
    pub frames: Triplet,
    /// Blend of the baseline frames under the updated pixel flows.
    pub st_blend: Tensor,
    pub delta: TriFlow,
}

#[derive(Clone, Debug)]
pub struct BoostRun {
    pub iterations: Vec<BoostIteration>,
    pub state: BoostState,
}

impl BoostRun {
    pub fn last(&self) -> &Triplet {
        &self.iterations.last().expect("at least one iteration").frames
    }
}

#[derive(Clone, Debug)]
pub struct Booster {
    feat: usize,
    pub seed: ConvSpec,
    pub mixer: Mixer,
    pub gb: GruBooster,
    pub decoder: Decoder2,
}

impl Booster {
    pub fn new(src: &mut dyn ParamSource, cfg: &ArchConfig) -> Result<Self> {
        let decoder = Decoder2::new(src, "boost/decoder2", cfg)?;
        if decoder.in_channels() != agg3_channels(cfg.feat) {
            return Err(Error::invalid("booster", "Agg3 channel bookkeeping"));
        }
        Ok(Booster {
            feat: cfg.feat,
            seed: src.conv("boost/seed", ConvShape::same(3 * cfg.feat, cfg.feat, 1))?,
            mixer: Mixer::new(src, "boost/mixer", cfg)?,
            gb: GruBooster::new(src, "boost/gb", cfg)?,
            decoder,
        })
    }

    pub fn initial_state(&self, base: &BaselineOut) -> Result<BoostState> {
        let stacked = Tensor::cat(&[&base.f0r, &base.ftr, &base.f1r])?;
        stacked.expect_channels("boost seed", 3 * self.feat)?;
        Ok(BoostState {
            f_p: base.ff.cast(),
            f_rec: conv2d(&stacked, &self.seed)?,
            iteration: 0,
        })
    }

    /// One boosting iteration from `state`, given the precomputed Agg².
    pub fn iterate(
        &self,
        base: &BaselineOut,
        agg2: &Tensor,
        state: &BoostState,
    ) -> Result<(BoostIteration, BoostState)> {
        let fp_prev = state.f_p.cast::<f32>();
        let m = self.mixer.forward(agg2, &fp_prev)?;
        let step = self.gb.step(&state.f_rec, &m)?;
        let d64 = step.delta.cast::<f64>();
        let f_p = TriFlow::new(
            state.f_p.flow_t0.add(&d64.flow_t0)?,
            state.f_p.flow_t1.add(&d64.flow_t1)?,
            state.f_p.occ_logit.add(&d64.occ_logit)?,
        )?;
        let fp32 = f_p.cast::<f32>();
        let st_blend = pwb(&base.s0r, &base.s1r, &fp32, base.t)?;
        let agg3 = Tensor::cat(&[
            &base.s0r,
            &st_blend,
            &base.s1r,
            &agg2.narrow_channels(9, AGG2_CHANNELS - 9)?,
            &fp32.to_tensor(),
            &step.f_rec,
        ])?;
        if agg3.channels() != agg3_channels(self.feat) {
            return Err(Error::invalid(
                "recursive_boost",
                format!(
                    "Agg3 has {} channels, expected {}",
                    agg3.channels(),
                    agg3_channels(self.feat)
                ),
            ));
        }
        let residual = self.decoder.forward(&agg3)?;
        let parts = residual.split_channels(&[3, 3, 3])?;
        let frames = Triplet {
            s0: parts[0].add(&base.s0r)?,
            st: parts[1].add(&st_blend)?,
            s1: parts[2].add(&base.s1r)?,
        };
        let next = BoostState {
            f_p,
            f_rec: step.f_rec,
            iteration: state.iteration + 1,
        };
        Ok((
            BoostIteration {
                frames,
                st_blend,
                delta: step.delta,
            },
            next,
        ))
    }

    pub fn run(&self, base: &BaselineOut, frames: &Quad, n_tst: usize) -> Result<BoostRun> {
        if n_tst == 0 {
            return Err(Error::invalid("recursive_boost", "N_tst must be at least 1"));
        }
        let agg2 = aggregate2(base, frames)?;
        let mut state = self.initial_state(base)?;
        let mut iterations = Vec::with_capacity(n_tst);
        for _ in 0..n_tst {
            let (it, next) = self.iterate(base, &agg2, &state)?;
            iterations.push(it);
            state = next;
        }
        Ok(BoostRun { iterations, state })
    }

    pub fn param_count(&self) -> usize {
        self.seed.param_count() + self.mixer.param_count() + self.gb.param_count() + self.decoder.param_count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub l_d1: f64,
    pub l_d2_per_iter: Vec<f64>,
    pub total: f64,
}

/// Mean absolute difference, accumulated in `f64`.
pub fn mean_abs_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_shape("l1", b.shape())?;
    if a.is_empty() {
        return Err(Error::invalid("l1", "empty tensors"));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(s / a.len() as f64)
}

/// Reconstruction term averaged over the three frames.
pub fn triplet_loss(out: &Triplet, gt: &Triplet) -> Result<f64> {
    Ok((mean_abs_error(&out.s0, &gt.s0)? + mean_abs_error(&out.st, &gt.st)? + mean_abs_error(&out.s1, &gt.s1)?) / 3.0)
}

/// Baseline term plus the first `n_trn` boosting terms.
pub fn compute_losses(iterations: &[Triplet], baseline: &Triplet, gt: &Triplet, n_trn: usize) -> Result<LossReport> {
    if n_trn > iterations.len() {
        return Err(Error::invalid(
            "compute_losses",
            format!("N_trn = {n_trn} but only {} iterations were produced", iterations.len()),
        ));
    }
    let l_d1 = triplet_loss(baseline, gt)?;
    let l_d2_per_iter = iterations[..n_trn]
        .iter()
        .map(|it| triplet_loss(it, gt))
        .collect::<Result<Vec<_>>>()?;
    let total = l_d1 + l_d2_per_iter.iter().sum::<f64>();
    Ok(LossReport {
        l_d1,
        l_d2_per_iter,
        total,
    })
}
