//! Synthesises a blurry 30 fps clip from a sharp 240 fps pan and picks the
//! sharp frames that serve as interpolation targets.
//!
//! Pass a directory to also write the blurry frames as PNGs.

use deblur_mfi::degrade::{select_gt_frames, synth_blur, DegradeSpec};
use deblur_mfi::metrics::psnr;
use deblur_mfi::sequence::{write_sequence, FrameSequence};
use deblur_mfi::Tensor;

fn main() -> deblur_mfi::Result<()> {
    let sharp: Vec<Tensor> = (0..41)
        .map(|n| {
            Tensor::from_fn([1, 3, 48, 64], |_, c, y, x| {
                let u = (x + n) as f32 * 0.3;
                0.5 + 0.3 * u.sin() * (y as f32 * 0.15 + c as f32).cos()
            })
        })
        .collect();
    let sharp = FrameSequence::new(sharp, 240.0)?;
    let spec = DegradeSpec::default();
    let blurry = synth_blur(&sharp, spec)?;
    println!(
        "{} sharp frames -> {} blurry frames at {} fps",
        sharp.len(),
        blurry.len(),
        blurry.fps()
    );

    for (b, i) in blurry.frames().iter().zip(spec.anchors(sharp.len())) {
        let window = spec.window(i).expect("anchor");
        let centre = &sharp.frames()[i * spec.k];
        println!(
            "  B_{i}: frames {window:?}, {:.2} dB against its centre frame",
            psnr(b, centre, 1.0)?
        );
    }

    let t_list = [0.25, 0.5, 0.75];
    let gt = select_gt_frames(&sharp, spec, 1, &t_list)?;
    println!("targets between B_1 and B_2 at t = {t_list:?}: {} frames", gt.len());

    if let Some(dir) = std::env::args().nth(1) {
        write_sequence(&blurry, &dir)?;
        println!("wrote {dir}");
    }
    Ok(())
}
