//! Analytic gradients of the warp, blend and FAC operators against central
//! differences.

use deblur_mfi::gradcheck::{run_gradcheck, GradOp, DEFAULT_STEP};

fn main() -> deblur_mfi::Result<()> {
    for op in [GradOp::Warp, GradOp::Fwb, GradOp::Fac] {
        let r = run_gradcheck(op, 0, 5, DEFAULT_STEP)?;
        println!(
            "{op:?}: max relative error {:.2e} over {} instances",
            r.max_rel_error, r.instances
        );
        for s in &r.per_slot {
            println!("  {:<12} {:.2e}", s.name, s.rel_error);
        }
        if let Some(zero) = r.flow_grad_zero {
            println!("  flow gradient blocked: {zero}");
        }
    }
    Ok(())
}
