//! Backward warping, flow reversal and occlusion-weighted blending on a
//! translating pattern.

use deblur_mfi::flow::{approx_intermediate_flows, backward_warp, cfr_reverse, fwb, TriFlow};
use deblur_mfi::Tensor;

fn pattern(shift: f32) -> Tensor {
    Tensor::from_fn([1, 3, 32, 32], |_, c, y, x| {
        let u = (x as f32 - shift) * 0.35;
        0.5 + 0.4 * u.sin() * (y as f32 * 0.2 + c as f32).cos()
    })
}

fn interior_error(a: &Tensor, b: &Tensor) -> f32 {
    let mut worst = 0.0f32;
    for c in 0..3 {
        for y in 4..28 {
            for x in 4..28 {
                worst = worst.max((a.at(0, c, y, x) - b.at(0, c, y, x)).abs());
            }
        }
    }
    worst
}

fn main() -> deblur_mfi::Result<()> {
    // frame 1 is frame 0 moved 4 px right
    let (s0, s1) = (pattern(0.0), pattern(4.0));
    let constant = |u: f32| Tensor::from_fn([1, 2, 32, 32], move |_, c, _, _| if c == 0 { u } else { 0.0 });
    let (f01, f10) = (constant(4.0), constant(-4.0));

    println!(
        "warp S1 by f01 recovers S0 to {:.1e}",
        interior_error(&backward_warp(&s1, &f01)?, &s0)
    );

    let t = 0.25;
    let (f0t, f1t) = approx_intermediate_flows(&f01, &f10, t)?;
    let (ft0, ft1) = cfr_reverse(&f0t, &f1t, t)?;
    println!(
        "t = {t}: f_t0 = {:.3}, f_t1 = {:.3} at the centre",
        ft0.at(0, 0, 16, 16),
        ft1.at(0, 0, 16, 16)
    );

    let truth = pattern(4.0 * t as f32);
    for logit in [-4.0, 0.0, 4.0] {
        let tri = TriFlow::new(ft0.clone(), ft1.clone(), Tensor::full([1, 1, 32, 32], logit))?;
        let st = fwb(&s0, &s1, &tri, t)?;
        println!(
            "occlusion logit {logit:+}: blended frame within {:.1e} of the true intermediate",
            interior_error(&st, &truth)
        );
    }
    Ok(())
}
