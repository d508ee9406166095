//! Baseline stage: residual-dense backbone, feature bolstering,
//! t-alignment, refine module and the shared frame decoder.

use crate::error::{Error, Result};
use crate::fac::{fac_fb_forward, FacWeights};
use crate::flow::{approx_intermediate_flows, cfr_reverse, fwb, FlowField, TriFlow};
use crate::nn::{
    activate, conv2d, pixel_shuffle_down, pixel_shuffle_up, relu, upsample_nearest, Activation, ConvSpec, ResStack,
    ResidualDenseBlock,
};
use crate::params::{ArchConfig, ConvShape, ParamSource};
use crate::tensor::Tensor;

/// Split output of the backbone.
#[derive(Clone, Debug)]
pub struct BackboneOut {
    /// tanh-bounded features of the two centre frames.
    pub f0p: Tensor,
    pub f1p: Tensor,
    pub f01: FlowField,
    pub f10: FlowField,
    pub occ_logit: Tensor,
}

/// The four blurry inputs `B_{-1}, B_0, B_1, B_2`.
pub type Quad = [Tensor; 4];

pub(crate) fn validate_quad(frames: &Quad, multiple: usize) -> Result<()> {
    let shape = frames[0].shape();
    for f in frames.iter() {
        f.expect_shape("blurry quadruple", shape)?;
    }
    frames[0].expect_channels("blurry quadruple", 3)?;
    let (h, w) = frames[0].spatial();
    if h == 0 || w == 0 || h % multiple != 0 || w % multiple != 0 {
        return Err(Error::invalid(
            "blurry quadruple",
            format!("frame size {h}×{w} must be a positive multiple of {multiple}"),
        ));
    }
    Ok(())
}

/// Residual dense backbone emitting `2·feat + 2·2 + 1` channels.
#[derive(Clone, Debug)]
pub struct FfRdb {
    feat: usize,
    shuffle: usize,
    sfe1: ConvSpec,
    sfe2: ConvSpec,
    blocks: Vec<ResidualDenseBlock>,
    gff1: ConvSpec,
    gff2: ConvSpec,
    post: ConvSpec,
    head: ConvSpec,
}

impl FfRdb {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cfg: &ArchConfig) -> Result<Self> {
        let r2 = cfg.shuffle * cfg.shuffle;
        let f = cfg.feat;
        let blocks = (0..cfg.rdb_blocks)
            .map(|i| ResidualDenseBlock::new(src, &format!("{prefix}/rdb{i:02}"), f, cfg.growth, cfg.rdb_layers))
            .collect::<Result<_>>()?;
        Ok(FfRdb {
            feat: f,
            shuffle: cfg.shuffle,
            sfe1: src.conv(&format!("{prefix}/sfe1"), ConvShape::same(12 * r2, f, 3))?,
            sfe2: src.conv(&format!("{prefix}/sfe2"), ConvShape::same(f, f, 3))?,
            blocks,
            gff1: src.conv(&format!("{prefix}/gff1"), ConvShape::same(f * cfg.rdb_blocks, f, 1))?,
            gff2: src.conv(&format!("{prefix}/gff2"), ConvShape::same(f, f, 3))?,
            post: src.conv(&format!("{prefix}/post"), ConvShape::same(f, f, 3))?,
            head: src.conv(
                &format!("{prefix}/head"),
                ConvShape::same(f, cfg.backbone_channels() * r2, 3),
            )?,
        })
    }

    pub fn out_channels(&self) -> usize {
        2 * self.feat + 2 * 2 + 1
    }

    /// Raw `out_channels()`-wide map before splitting.
    pub fn forward_raw(&self, frames: &Quad) -> Result<Tensor> {
        let x = Tensor::cat(&[&frames[0], &frames[1], &frames[2], &frames[3]])?;
        let x = pixel_shuffle_down(&x, self.shuffle)?;
        let shallow = conv2d(&x, &self.sfe1)?;
        let mut h = conv2d(&shallow, &self.sfe2)?;
        let mut hierarchy = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            h = block.forward(&h)?;
            hierarchy.push(h.clone());
        }
        let fused = if hierarchy.is_empty() {
            h
        } else {
            let refs: Vec<&Tensor> = hierarchy.iter().collect();
            let g = conv2d(&Tensor::cat(&refs)?, &self.gff1)?;
            conv2d(&g, &self.gff2)?.add(&shallow)?
        };
        let p = relu(&conv2d(&fused, &self.post)?);
        let out = pixel_shuffle_up(&conv2d(&p, &self.head)?, self.shuffle)?;
        debug_assert_eq!(out.channels(), self.out_channels());
        Ok(out)
    }

    pub fn forward(&self, frames: &Quad) -> Result<BackboneOut> {
        let raw = self.forward_raw(frames)?;
        let f = self.feat;
        let mut parts = raw.split_channels(&[f, f, 2, 2, 1])?.into_iter();
        let mut next = || parts.next().expect("five parts");
        Ok(BackboneOut {
            f0p: activate(&next(), Activation::Tanh),
            f1p: activate(&next(), Activation::Tanh),
            f01: next(),
            f10: next(),
            occ_logit: next(),
        })
    }

    pub fn param_count(&self) -> usize {
        [&self.sfe1, &self.sfe2, &self.gff1, &self.gff2, &self.post, &self.head]
            .iter()
            .map(|c| c.param_count())
            .sum::<usize>()
            + self.blocks.iter().map(ResidualDenseBlock::param_count).sum::<usize>()
    }
}

/// Feature at time `t` by flow reversal and occlusion-weighted blending of
/// the two backbone features. Returns the feature and `[f_t0, f_t1, o_t0]`.
pub fn t_align(out: &BackboneOut, t: f64) -> Result<(Tensor, TriFlow)> {
    let (f0t, f1t) = approx_intermediate_flows(&out.f01, &out.f10, t)?;
    let (ft0, ft1) = cfr_reverse(&f0t, &f1t, t)?;
    let tri = TriFlow::new(ft0, ft1, out.occ_logit.clone())?;
    let ft = fwb(&out.f0p, &out.f1p, &tri, t)?;
    Ok((ft, tri))
}

/// Three-level U-Net refining `[F0b, F1b, f_t0, f_t1, o_t0]` residually.
#[derive(Clone, Debug)]
pub struct RefineModule {
    in_channels: usize,
    feat: usize,
    enc1: [ConvSpec; 2],
    enc2: [ConvSpec; 2],
    enc3: [ConvSpec; 2],
    dec2: [ConvSpec; 2],
    dec1: [ConvSpec; 2],
    out: ConvSpec,
}

impl RefineModule {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cfg: &ArchConfig) -> Result<Self> {
        let [w1, w2, w3] = cfg.rm_widths;
        let cin = cfg.agg1_channels();
        let mut c = |name: &str, shape: ConvShape| src.conv(&format!("{prefix}/{name}"), shape);
        Ok(RefineModule {
            in_channels: cin,
            feat: cfg.feat,
            enc1: [
                c("enc1a", ConvShape::same(cin, w1, 3))?,
                c("enc1b", ConvShape::same(w1, w1, 3))?,
            ],
            enc2: [
                c("enc2a", ConvShape::same(w1, w2, 3).with_stride(2))?,
                c("enc2b", ConvShape::same(w2, w2, 3))?,
            ],
            enc3: [
                c("enc3a", ConvShape::same(w2, w3, 3).with_stride(2))?,
                c("enc3b", ConvShape::same(w3, w3, 3))?,
            ],
            dec2: [
                c("dec2a", ConvShape::same(w3 + w2, w2, 3))?,
                c("dec2b", ConvShape::same(w2, w2, 3))?,
            ],
            dec1: [
                c("dec1a", ConvShape::same(w2 + w1, w1, 3))?,
                c("dec1b", ConvShape::same(w1, w1, 3))?,
            ],
            out: c("out", ConvShape::same(w1, cfg.backbone_channels(), 3))?,
        })
    }

    fn pair(x: &Tensor, convs: &[ConvSpec; 2]) -> Result<Tensor> {
        let h = relu(&conv2d(x, &convs[0])?);
        Ok(relu(&conv2d(&h, &convs[1])?))
    }

    /// U-Net branch alone (no residual).
    pub fn branch(&self, agg1: &Tensor) -> Result<Tensor> {
        agg1.expect_channels("refine_module", self.in_channels)?;
        let e1 = Self::pair(agg1, &self.enc1)?;
        let e2 = Self::pair(&e1, &self.enc2)?;
        let e3 = Self::pair(&e2, &self.enc3)?;
        let d2 = Self::pair(&Tensor::cat(&[&upsample_nearest(&e3, 2), &e2])?, &self.dec2)?;
        let d1 = Self::pair(&Tensor::cat(&[&upsample_nearest(&d2, 2), &e1])?, &self.dec1)?;
        conv2d(&d1, &self.out)
    }

    /// Returns `(F0r, F1r, [f_t0^r, f_t1^r, o_t0^r])`.
    pub fn forward(
        &self,
        agg1: &Tensor,
        f0b: &Tensor,
        f1b: &Tensor,
        tri: &TriFlow,
    ) -> Result<(Tensor, Tensor, TriFlow)> {
        let base = Tensor::cat(&[f0b, f1b, &tri.flow_t0, &tri.flow_t1, &tri.occ_logit])?;
        let refined = self.branch(agg1)?.add(&base)?;
        let f = self.feat;
        let mut parts = refined.split_channels(&[f, f, 2, 2, 1])?.into_iter();
        let mut next = || parts.next().expect("five parts");
        let (f0r, f1r) = (next(), next());
        let tri_r = TriFlow::new(next(), next(), next())?;
        Ok((f0r, f1r, tri_r))
    }

    pub fn param_count(&self) -> usize {
        self.enc1
            .iter()
            .chain(&self.enc2)
            .chain(&self.enc3)
            .chain(&self.dec2)
            .chain(&self.dec1)
            .chain(std::iter::once(&self.out))
            .map(ConvSpec::param_count)
            .sum()
    }
}

/// ResB cascade followed by a 3×3 projection to RGB.
#[derive(Clone, Debug)]
pub struct FrameDecoder {
    pub body: ResStack,
    pub proj: ConvSpec,
}

impl FrameDecoder {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cfg: &ArchConfig) -> Result<Self> {
        Ok(FrameDecoder {
            body: ResStack::new(src, &format!("{prefix}/body"), cfg.feat, cfg.resb)?,
            proj: src.conv(&format!("{prefix}/proj"), ConvShape::same(cfg.feat, 3, 3))?,
        })
    }

    pub fn decode(&self, feature: &Tensor) -> Result<Tensor> {
        feature.expect_channels("decoder", self.proj.c_in())?;
        conv2d(&self.body.forward(feature)?, &self.proj)
    }

    pub fn param_count(&self) -> usize {
        self.body.param_count() + self.proj.param_count()
    }
}

/// Time-independent part of the baseline for one quadruple.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub backbone: BackboneOut,
    pub f0b: Tensor,
    pub f1b: Tensor,
}

/// Outputs of the baseline stage at one time instance.
#[derive(Clone, Debug)]
pub struct BaselineOut {
    pub t: f64,
    pub s0r: Tensor,
    pub str_: Tensor,
    pub s1r: Tensor,
    /// Refined feature flows `[f_t0^r, f_t1^r, o_t0^r]`.
    pub ff: TriFlow,
    pub f0r: Tensor,
    pub ftr: Tensor,
    pub f1r: Tensor,
    pub f01: FlowField,
    pub f10: FlowField,
}

#[derive(Clone, Debug)]
pub struct Baseline {
    cfg: ArchConfig,
    pub ffrdb: FfRdb,
    pub fac_encoder: ResStack,
    pub fac: FacWeights,
    pub refine: RefineModule,
    pub decoder: FrameDecoder,
}

impl Baseline {
    pub fn new(src: &mut dyn ParamSource, cfg: &ArchConfig) -> Result<Self> {
        let ffrdb = FfRdb::new(src, "baseline/ffrdb", cfg)?;
        if ffrdb.out_channels() != cfg.backbone_channels() {
            return Err(Error::invalid("baseline", "backbone channel bookkeeping"));
        }
        Ok(Baseline {
            cfg: cfg.clone(),
            ffrdb,
            fac_encoder: ResStack::new(src, "baseline/facfb/encoder", cfg.feat, cfg.resb)?,
            fac: FacWeights::new(src, "baseline/facfb/fac", cfg.feat, cfg.fac_gate_hidden, cfg.fac_bias)?,
            refine: RefineModule::new(src, "baseline/refine", cfg)?,
            decoder: FrameDecoder::new(src, "baseline/decoder1", cfg)?,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn encode(&self, frames: &Quad) -> Result<Encoded> {
        validate_quad(frames, self.cfg.size_multiple())?;
        let backbone = self.ffrdb.forward(frames)?;
        let (f0b, f1b) = fac_fb_forward(
            &backbone.f0p,
            &backbone.f1p,
            &backbone.f01,
            &backbone.f10,
            &self.fac,
            &self.fac_encoder,
        )?;
        Ok(Encoded { backbone, f0b, f1b })
    }

    /// Refine-module input `[F0b, Ft, F1b, f_t0, f_t1, o_t0, f01, f10]`.
    pub fn aggregate1(enc: &Encoded, ft: &Tensor, tri: &TriFlow) -> Result<Tensor> {
        Tensor::cat(&[
            &enc.f0b,
            ft,
            &enc.f1b,
            &tri.flow_t0,
            &tri.flow_t1,
            &tri.occ_logit,
            &enc.backbone.f01,
            &enc.backbone.f10,
        ])
    }

    pub fn forward_encoded(&self, enc: &Encoded, t: f64) -> Result<BaselineOut> {
        let (ft, tri) = t_align(&enc.backbone, t)?;
        let agg1 = Self::aggregate1(enc, &ft, &tri)?;
        if agg1.channels() != self.cfg.agg1_channels() {
            return Err(Error::invalid(
                "baseline",
                format!(
                    "Agg1 has {} channels, expected {}",
                    agg1.channels(),
                    self.cfg.agg1_channels()
                ),
            ));
        }
        let (f0r, f1r, ff) = self.refine.forward(&agg1, &enc.f0b, &enc.f1b, &tri)?;
        let ftr = fwb(&f0r, &f1r, &ff, t)?;
        Ok(BaselineOut {
            t,
            s0r: self.decoder.decode(&f0r)?,
            str_: self.decoder.decode(&ftr)?,
            s1r: self.decoder.decode(&f1r)?,
            ff,
            f0r,
            ftr,
            f1r,
            f01: enc.backbone.f01.clone(),
            f10: enc.backbone.f10.clone(),
        })
    }

    pub fn forward(&self, frames: &Quad, t: f64) -> Result<BaselineOut> {
        self.forward_encoded(&self.encode(frames)?, t)
    }

    pub fn param_count(&self) -> usize {
        self.ffrdb.param_count()
            + self.fac_encoder.param_count()
            + self.fac.param_count()
            + self.refine.param_count()
            + self.decoder.param_count()
    }
}
