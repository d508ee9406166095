//! Recursive boosting with a narrow network: per-iteration flow updates and
//! the composite loss against a reference triplet.

use deblur_mfi::backbone::Quad;
use deblur_mfi::boost::{compute_losses, Triplet};
use deblur_mfi::model::{xavier_init, Network, Stage};
use deblur_mfi::params::ArchConfig;
use deblur_mfi::Tensor;

fn main() -> deblur_mfi::Result<()> {
    let net = Network::from_store(&xavier_init(&ArchConfig::tiny(true), 3)?)?;
    let frames: Quad = std::array::from_fn(|i| {
        Tensor::from_fn([1, 3, 32, 32], |_, c, y, x| {
            0.5 + 0.3 * ((x + 2 * i) as f32 * 0.3 + c as f32).sin() * (y as f32 * 0.2).cos()
        })
    });

    let n_tst = 5;
    let out = &net.infer(&frames, &[0.5], Stage::Boosted, n_tst)?[0];
    let run = out.boost.as_ref().expect("boosted stage");
    for (i, it) in run.iterations.iter().enumerate() {
        println!(
            "iteration {}: |delta| max {:.3e}, blended St range max {:.3}",
            i + 1,
            it.delta.to_tensor().max_abs(),
            it.st_blend.max_abs()
        );
    }

    let baseline = Triplet {
        s0: out.baseline.s0r.clone(),
        st: out.baseline.str_.clone(),
        s1: out.baseline.s1r.clone(),
    };
    let gt = Triplet {
        s0: frames[1].clone(),
        st: frames[1].clone(),
        s1: frames[2].clone(),
    };
    let iters: Vec<Triplet> = run.iterations.iter().map(|it| it.frames.clone()).collect();
    let losses = compute_losses(&iters, &baseline, &gt, 3)?;
    println!(
        "L_D1 {:.4}, L_D2 {:?}, total {:.4}",
        losses.l_d1, losses.l_d2_per_iter, losses.total
    );
    Ok(())
}
