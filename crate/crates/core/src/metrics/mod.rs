//! Fidelity and temporal-consistency scores.

pub mod motion;

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sequence::FrameSequence;
use crate::tensor::Tensor;

pub use motion::{estimate_motion, Gray, Motion, MotionConfig};

/// Returned by [`psnr`] when the two images are identical.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.expect_shape("psnr", b.shape())?;
    if a.is_empty() {
        return Err(Error::invalid("psnr", "empty images"));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every valid window position, channel and batch item,
/// for data range 1.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_shape("ssim", b.shape())?;
    let [n, c, h, w] = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("images of {h}×{w} are smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for ni in 0..n {
        for ci in 0..c {
            let pa: Vec<f64> = a.plane(ni, ci).iter().map(|&v| v as f64).collect();
            let pb: Vec<f64> = b.plane(ni, ci).iter().map(|&v| v as f64).collect();
            let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
            let mu_a = filter_valid(&pa, h, w, &taps);
            let mu_b = filter_valid(&pb, h, w, &taps);
            let e_aa = filter_valid(&prod(&pa, &pa), h, w, &taps);
            let e_bb = filter_valid(&prod(&pb, &pb), h, w, &taps);
            let e_ab = filter_valid(&prod(&pa, &pb), h, w, &taps);
            for i in 0..mu_a.len() {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = e_aa[i] - ma * ma;
                let vb = e_bb[i] - mb * mb;
                let cov = e_ab[i] - ma * mb;
                let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn check_pair(op: &'static str, pred: &FrameSequence, gt: &FrameSequence) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(
            op,
            format!("{} predicted frames vs {} reference frames", pred.len(), gt.len()),
        ));
    }
    if pred.size() != gt.size() {
        return Err(Error::invalid(
            op,
            format!("frame size {:?} vs {:?}", pred.size(), gt.size()),
        ));
    }
    Ok(())
}

/// Per-pair temporal-consistency scores: mean Euclidean distance between
/// motion fields of consecutive predicted and reference frames, ignoring
/// `margin` pixels at every border.
pub fn tof_pairs_with_margin(pred: &FrameSequence, gt: &FrameSequence, margin: usize) -> Result<Vec<f64>> {
    check_pair("tof", pred, gt)?;
    if pred.len() < 2 {
        return Err(Error::invalid("tof", "needs at least two frames"));
    }
    let (h, w) = pred.size();
    if 2 * margin >= h || 2 * margin >= w {
        return Err(Error::invalid(
            "tof",
            format!("margin {margin} leaves no interior in {h}×{w}"),
        ));
    }
    let cfg = MotionConfig::default();
    let motions = |seq: &FrameSequence| -> Result<Vec<Motion>> {
        let g = seq.frames().iter().map(Gray::from_rgb).collect::<Result<Vec<_>>>()?;
        g.windows(2).map(|p| estimate_motion(&p[0], &p[1], &cfg)).collect()
    };
    let mp = motions(pred)?;
    let mg = motions(gt)?;
    Ok(mp
        .iter()
        .zip(&mg)
        .map(|(p, g)| {
            let mut s = 0.0;
            let mut n = 0usize;
            for y in margin..h - margin {
                for x in margin..w - margin {
                    let i = y * w + x;
                    let du = (p.u[i] - g.u[i]) as f64;
                    let dv = (p.v[i] - g.v[i]) as f64;
                    s += (du * du + dv * dv).sqrt();
                    n += 1;
                }
            }
            s / n as f64
        })
        .collect())
}

pub fn tof_with_margin(pred: &FrameSequence, gt: &FrameSequence, margin: usize) -> Result<f64> {
    let pairs = tof_pairs_with_margin(pred, gt, margin)?;
    Ok(pairs.iter().sum::<f64>() / pairs.len() as f64)
}

pub fn tof(pred: &FrameSequence, gt: &FrameSequence) -> Result<f64> {
    tof_with_margin(pred, gt, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Psnr,
    Ssim,
    Tof,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::Tof => "tof",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            "tof" => Ok(Metric::Tof),
            other => Err(Error::invalid("metrics", format!("unknown metric '{other}'"))),
        }
    }
}

/// One measured value. `index` is the frame index for PSNR/SSIM and the
/// index of the first frame of the pair for tOF.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub metric: Metric,
    pub index: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub tof: Option<f64>,
    pub per_frame: Vec<Measurement>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl MetricReport {
    /// Tab-separated `metric  index  value` lines followed by one
    /// `metric  mean  value` line per metric.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for m in &self.per_frame {
            let _ = writeln!(s, "{}\t{}\t{:.6}", m.metric.name(), m.index, m.value);
        }
        for (metric, v) in [
            (Metric::Psnr, self.psnr),
            (Metric::Ssim, self.ssim),
            (Metric::Tof, self.tof),
        ] {
            if let Some(v) = v {
                let _ = writeln!(s, "{}\tmean\t{:.6}", metric.name(), v);
            }
        }
        s
    }
}

pub fn evaluate(pred: &FrameSequence, gt: &FrameSequence, metrics: &[Metric]) -> Result<MetricReport> {
    check_pair("evaluate", pred, gt)?;
    let mut report = MetricReport::default();
    for &metric in metrics {
        let values = match metric {
            Metric::Psnr | Metric::Ssim => pred
                .frames()
                .iter()
                .zip(gt.frames())
                .map(|(p, g)| {
                    if metric == Metric::Psnr {
                        psnr(p, g, 1.0)
                    } else {
                        ssim(p, g)
                    }
                })
                .collect::<Result<Vec<_>>>()?,
            Metric::Tof => tof_pairs_with_margin(pred, gt, 0)?,
        };
        report.per_frame.extend(
            values
                .iter()
                .enumerate()
                .map(|(index, &value)| Measurement { metric, index, value }),
        );
        let m = Some(mean(&values));
        match metric {
            Metric::Psnr => report.psnr = m,
            Metric::Ssim => report.ssim = m,
            Metric::Tof => report.tof = m,
        }
    }
    Ok(report)
}
