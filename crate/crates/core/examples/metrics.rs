//! PSNR, SSIM and the temporal-consistency score on a panning texture.

use deblur_mfi::metrics::{evaluate, psnr, Metric};
use deblur_mfi::sequence::FrameSequence;
use deblur_mfi::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 64;
const WIDE: usize = 160;

/// Smoothed noise, wide enough to pan across.
fn texture() -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise: Vec<f32> = (0..SIZE * WIDE).map(|_| rng.gen()).collect();
    (0..SIZE * WIDE)
        .map(|i| {
            let (y, x) = (i / WIDE, i % WIDE);
            let mut s = 0.0;
            for yy in y.saturating_sub(1)..(y + 2).min(SIZE) {
                for xx in x.saturating_sub(1)..(x + 2).min(WIDE) {
                    s += noise[yy * WIDE + xx];
                }
            }
            s / 9.0
        })
        .collect()
}

fn pan(tex: &[f32], frames: usize, step: usize) -> deblur_mfi::Result<FrameSequence> {
    let frames = (0..frames)
        .map(|n| Tensor::from_fn([1, 3, SIZE, SIZE], |_, _, y, x| tex[y * WIDE + x + n * step]))
        .collect();
    FrameSequence::new(frames, 30.0)
}

fn main() -> deblur_mfi::Result<()> {
    let tex = texture();
    let gt = pan(&tex, 5, 3)?;
    let offset = gt.frames()[0].map(|v| v + 16.0 / 255.0);
    println!("uniform 16/255 offset: {:.4} dB", psnr(&offset, &gt.frames()[0], 1.0)?);

    let all = [Metric::Psnr, Metric::Ssim, Metric::Tof];
    let slow = pan(&tex, 5, 2)?;
    let frozen = FrameSequence::new(vec![gt.frames()[0].clone(); 5], 30.0)?;
    // tOF is the motion error in pixels: 1 for the slow pan, 3 when frozen
    for (name, pred) in [("identical", &gt), ("too slow", &slow), ("frozen", &frozen)] {
        let r = evaluate(pred, &gt, &all)?;
        println!(
            "{name:>9}: psnr {:7.3}  ssim {:.4}  tof {:.3}",
            r.psnr.unwrap(),
            r.ssim.unwrap(),
            r.tof.unwrap()
        );
    }
    Ok(())
}
