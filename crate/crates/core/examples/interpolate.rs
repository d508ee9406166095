//! Runs the full-width network with Xavier weights on a synthetic blurry
//! quadruple and reports timings and output statistics per stage.

use std::time::Instant;

use deblur_mfi::model::{interpolation_frames, xavier_init, Network, Stage};
use deblur_mfi::params::ArchConfig;
use deblur_mfi::Tensor;

fn main() -> deblur_mfi::Result<()> {
    let size = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64usize);
    let store = xavier_init(&ArchConfig::boosted(), 0)?;
    let net = Network::from_store(&store)?;
    println!("parameters: {}", net.param_count());

    let frames: [Tensor; 4] = std::array::from_fn(|i| {
        Tensor::from_fn([1, 3, size, size], |_, c, y, x| {
            let phase = (x as f32 + 2.0 * i as f32) * 0.2 + y as f32 * 0.1 + c as f32;
            0.5 + 0.4 * phase.sin()
        })
    });
    let t_list: Vec<f64> = (1..8).map(|k| k as f64 / 8.0).collect();

    for (stage, n_tst) in [(Stage::Baseline, 0), (Stage::Boosted, 3)] {
        let start = Instant::now();
        let out = net.infer(&frames, &t_list, stage, n_tst)?;
        let frames_out = interpolation_frames(&out, stage)?;
        let (lo, hi) = frames_out
            .iter()
            .flat_map(|f| f.data().iter().copied())
            .fold((f32::MAX, f32::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
        println!(
            "{stage:?} (N_tst={n_tst}): {} frames in {:.2?}, value range [{lo:.3}, {hi:.3}]",
            frames_out.len(),
            start.elapsed()
        );
    }
    Ok(())
}
