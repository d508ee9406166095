//! Flow-guided attentive correlation and feature bolstering with random
//! projection weights.

use deblur_mfi::fac::{bolster, bolster_gate, fac_correlate, FacWeights};
use deblur_mfi::params::XavierInit;
use deblur_mfi::Tensor;

fn main() -> deblur_mfi::Result<()> {
    let c = 16;
    let mut init = XavierInit::new(5);
    let w = FacWeights::new(&mut init, "fac", c, 8, false)?;

    let f0 = Tensor::from_fn([1, c, 24, 24], |_, ch, y, x| {
        ((x + ch) as f32 * 0.3).sin() + (y as f32 * 0.1).cos()
    });
    // f1 holds the same content two pixels to the right
    let f1 = Tensor::from_fn([1, c, 24, 24], |_, ch, y, x| {
        ((x + ch) as f32 * 0.3 - 0.6).sin() + (y as f32 * 0.1).cos()
    });
    let aligned = Tensor::from_fn([1, 2, 24, 24], |_, k, _, _| if k == 0 { 2.0 } else { 0.0 });
    let misaligned = Tensor::zeros([1, 2, 24, 24]);

    for (name, flow) in [("aligned", &aligned), ("zero", &misaligned)] {
        let corr = fac_correlate(&f0, &f1, flow, &w)?;
        let gate = bolster_gate(&f0, &corr, &w)?;
        let mean_gate = gate.data().iter().map(|&g| g as f64).sum::<f64>() / gate.len() as f64;
        let out = bolster(&f0, &corr, &w)?;
        println!(
            "{name:>9} flow: |FAC| max {:.3}, mean gate {mean_gate:.3}, output {:?}",
            corr.max_abs(),
            out.shape()
        );
    }
    Ok(())
}
