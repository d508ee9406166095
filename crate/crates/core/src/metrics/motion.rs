//! Pyramidal integer block matching, used as the motion estimator behind
//! the temporal-consistency score.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MotionConfig {
    pub levels: usize,
    pub block: usize,
    /// Search radius at each level, in that level's pixels.
    pub radius: i64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            levels: 3,
            block: 8,
            radius: 4,
        }
    }
}

/// Single-channel image in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gray {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Gray {
    /// Luma with Rec. 601 weights from a `1×3×H×W` frame.
    pub fn from_rgb(frame: &Tensor) -> Result<Self> {
        let [n, c, h, w] = frame.shape();
        if n != 1 || c != 3 {
            return Err(Error::invalid(
                "motion",
                format!("expected 1×3×H×W, got {:?}", frame.shape()),
            ));
        }
        let (r, g, b) = (frame.plane(0, 0), frame.plane(0, 1), frame.plane(0, 2));
        let data = (0..h * w)
            .map(|i| 0.299 * r[i] as f64 + 0.587 * g[i] as f64 + 0.114 * b[i] as f64)
            .collect();
        Ok(Gray { h, w, data })
    }

    #[inline]
    fn clamped(&self, y: i64, x: i64) -> f64 {
        let y = y.clamp(0, self.h as i64 - 1) as usize;
        let x = x.clamp(0, self.w as i64 - 1) as usize;
        self.data[y * self.w + x]
    }

    /// 2×2 box downsample; odd trailing rows/columns are folded in by clamping.
    fn half(&self) -> Gray {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let s = self.clamped(2 * y, 2 * x)
                    + self.clamped(2 * y, 2 * x + 1)
                    + self.clamped(2 * y + 1, 2 * x)
                    + self.clamped(2 * y + 1, 2 * x + 1);
                data.push(s / 4.0);
            }
        }
        Gray { h, w, data }
    }
}

/// Dense integer flow `(u, v)` with `prev(p) ≈ next(p + (u, v))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    pub h: usize,
    pub w: usize,
    pub u: Vec<i64>,
    pub v: Vec<i64>,
}

fn match_level(prev: &Gray, next: &Gray, guess: &dyn Fn(usize, usize) -> (i64, i64), cfg: &MotionConfig) -> Motion {
    let (h, w, b) = (prev.h, prev.w, cfg.block);
    let mut u = vec![0i64; h * w];
    let mut v = vec![0i64; h * w];
    for by in (0..h).step_by(b) {
        for bx in (0..w).step_by(b) {
            let (ye, xe) = ((by + b).min(h), (bx + b).min(w));
            let (gu, gv) = guess((by + ye) / 2, (bx + xe) / 2);
            let mut best = (f64::INFINITY, 0u64, 0i64, 0i64);
            for dv in gv - cfg.radius..=gv + cfg.radius {
                for du in gu - cfg.radius..=gu + cfg.radius {
                    let mut sad = 0.0;
                    for y in by..ye {
                        for x in bx..xe {
                            let a = prev.data[y * w + x];
                            sad += (a - next.clamped(y as i64 + dv, x as i64 + du)).abs();
                        }
                    }
                    let key = (sad, du.unsigned_abs() + dv.unsigned_abs(), dv, du);
                    if key.0 < best.0 || (key.0 == best.0 && (key.1, key.2, key.3) < (best.1, best.2, best.3)) {
                        best = key;
                    }
                }
            }
            for y in by..ye {
                for x in bx..xe {
                    u[y * w + x] = best.3;
                    v[y * w + x] = best.2;
                }
            }
        }
    }
    Motion { h, w, u, v }
}

/// Coarse-to-fine block matching; each level searches `±radius` around
/// twice the coarser estimate.
pub fn estimate_motion(prev: &Gray, next: &Gray, cfg: &MotionConfig) -> Result<Motion> {
    if (prev.h, prev.w) != (next.h, next.w) {
        return Err(Error::invalid("motion", "frames differ in size"));
    }
    if cfg.levels == 0 || cfg.block == 0 || cfg.radius < 0 {
        return Err(Error::invalid("motion", format!("invalid configuration {cfg:?}")));
    }
    let mut pyr = vec![(prev.clone(), next.clone())];
    for _ in 1..cfg.levels {
        let (p, n) = pyr.last().expect("non-empty");
        if p.h < 2 * cfg.block || p.w < 2 * cfg.block {
            break;
        }
        pyr.push((p.half(), n.half()));
    }
    let mut motion: Option<Motion> = None;
    for (p, n) in pyr.iter().rev() {
        let m = match &motion {
            None => match_level(p, n, &|_, _| (0, 0), cfg),
            Some(c) => {
                let g = |y: usize, x: usize| {
                    let (cy, cx) = ((y / 2).min(c.h - 1), (x / 2).min(c.w - 1));
                    (2 * c.u[cy * c.w + cx], 2 * c.v[cy * c.w + cx])
                };
                match_level(p, n, &g, cfg)
            }
        };
        motion = Some(m);
    }
    Ok(motion.expect("at least one level"))
}
