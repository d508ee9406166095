//! Blur synthesis from sharp high-frame-rate sequences.
//!
//! Blurry frame `i` is the mean of the `2τ+1` sharp frames centred at
//! `iK`. Only windows lying entirely inside the sequence are emitted, so
//! the first blurry frame is at `i = ⌈τ/K⌉`.

use crate::error::{Error, Result};
use crate::sequence::FrameSequence;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DegradeSpec {
    /// Frame-rate reduction factor.
    pub k: usize,
    /// Half exposure window.
    pub tau: usize,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        DegradeSpec { k: 8, tau: 5 }
    }
}

impl DegradeSpec {
    pub fn new(k: usize, tau: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("degrade spec", "K must be at least 1"));
        }
        Ok(DegradeSpec { k, tau })
    }

    pub fn window_len(&self) -> usize {
        2 * self.tau + 1
    }

    /// Sharp indices averaged into blurry frame `i`, if the window starts
    /// at or after frame 0.
    pub fn window(&self, i: usize) -> Option<std::ops::RangeInclusive<usize>> {
        let centre = i * self.k;
        let start = centre.checked_sub(self.tau)?;
        Some(start..=centre + self.tau)
    }

    /// Anchor indices `i` whose windows fit inside `len` sharp frames.
    pub fn anchors(&self, len: usize) -> std::ops::Range<usize> {
        let first = self.tau.div_ceil(self.k);
        let end = if len > self.tau {
            (len - 1 - self.tau) / self.k + 1
        } else {
            0
        };
        first..end.max(first)
    }

    /// Shortest sequence producing at least one blurry frame.
    pub fn min_len(&self) -> usize {
        self.tau.div_ceil(self.k) * self.k + self.tau + 1
    }
}

/// Blurry frames for every complete window, with fps divided by `K`.
pub fn synth_blur(seq: &FrameSequence, spec: DegradeSpec) -> Result<FrameSequence> {
    let spec = DegradeSpec::new(spec.k, spec.tau)?;
    let anchors = spec.anchors(seq.len());
    if anchors.is_empty() {
        return Err(Error::invalid(
            "synth_blur",
            format!(
                "{} sharp frames produce no complete window; K={}, tau={} needs at least {}",
                seq.len(),
                spec.k,
                spec.tau,
                spec.min_len()
            ),
        ));
    }
    let shape = seq.frames()[0].shape();
    let norm = 1.0 / spec.window_len() as f64;
    let frames = anchors
        .map(|i| {
            let mut acc = vec![0.0f64; seq.frames()[0].len()];
            for j in spec.window(i).expect("anchor windows start at or after 0") {
                for (a, &v) in acc.iter_mut().zip(seq.frames()[j].data()) {
                    *a += v as f64;
                }
            }
            Tensor::from_vec(shape, acc.into_iter().map(|a| (a * norm) as f32).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, seq.fps() / spec.k as f64)
}

/// Sharp index at time `t` after anchor `i`; `t` must be a multiple of `1/K`
/// in `[0, 1]`.
pub fn gt_index(spec: DegradeSpec, anchor: usize, t: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid("select_gt_frames", format!("t = {t} outside [0, 1]")));
    }
    let steps = t * spec.k as f64;
    let rounded = steps.round();
    if (steps - rounded).abs() > 1e-9 {
        return Err(Error::invalid(
            "select_gt_frames",
            format!("t = {t} is not a multiple of 1/{}", spec.k),
        ));
    }
    Ok(anchor * spec.k + rounded as usize)
}

/// Sharp ground-truth frames between blurry anchors `i` and `i+1`.
pub fn select_gt_frames(
    seq: &FrameSequence,
    spec: DegradeSpec,
    anchor: usize,
    t_list: &[f64],
) -> Result<FrameSequence> {
    let spec = DegradeSpec::new(spec.k, spec.tau)?;
    let frames = t_list
        .iter()
        .map(|&t| {
            let idx = gt_index(spec, anchor, t)?;
            seq.get(idx).cloned().ok_or_else(|| {
                Error::invalid(
                    "select_gt_frames",
                    format!("sharp index {idx} beyond sequence of {} frames", seq.len()),
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, seq.fps())
}

/// Half-pixel-centre bilinear resize of one tensor, clamped to `[0, 1]`.
pub fn resize_tensor(x: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::invalid("resize_bilinear", "target size must be positive"));
    }
    let [n, c, h, w] = x.shape();
    if (h, w) == (new_h, new_w) {
        return Ok(x.map(|v| v.clamp(0.0, 1.0)));
    }
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = p.floor() as usize;
                (i0, (i0 + 1).min(src - 1), p - i0 as f64)
            })
            .collect()
    };
    let ys = axis(new_h, h);
    let xs = axis(new_w, w);
    let mut out = Tensor::zeros([n, c, new_h, new_w]);
    for ni in 0..n {
        for ci in 0..c {
            let src = x.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for (oy, &(y0, y1, ay)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, ax)) in xs.iter().enumerate() {
                    let v = |yy: usize, xx: usize| src[yy * w + xx] as f64;
                    let top = v(y0, x0) * (1.0 - ax) + v(y0, x1) * ax;
                    let bot = v(y1, x0) * (1.0 - ax) + v(y1, x1) * ax;
                    dst[oy * new_w + ox] = (top * (1.0 - ay) + bot * ay).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear(seq: &FrameSequence, new_h: usize, new_w: usize) -> Result<FrameSequence> {
    let frames = seq
        .frames()
        .iter()
        .map(|f| resize_tensor(f, new_h, new_w))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, seq.fps())
}
