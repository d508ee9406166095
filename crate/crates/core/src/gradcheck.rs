//! Finite-difference verification of the hand-written backward passes.
//!
//! Each check draws a small random instance in `f64`, contracts the
//! operator output with a random upstream tensor to get a scalar, and
//! compares the analytic gradient of every input against central
//! differences. The error of one input is `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fac::{fac_backward, fac_bolster_forward, fac_correlate, FacWeights};
use crate::flow::{backward_warp, blend_backward, fwb, warp_backward_grad, TriFlow};
use crate::nn::{conv2d, ConvGrads, ConvSpec};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_INSTANCES: usize = 20;

/// Instances whose gate pre-activations come this close to the ReLU kink
/// are redrawn, so a finite step never straddles it.
const KINK_MARGIN: f64 = 5e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradOp {
    Warp,
    Fac,
    Fwb,
}

impl std::str::FromStr for GradOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warp" => Ok(GradOp::Warp),
            "fac" => Ok(GradOp::Fac),
            "fwb" => Ok(GradOp::Fwb),
            other => Err(Error::invalid("gradcheck", format!("unknown operator '{other}'"))),
        }
    }
}

type Forward = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

/// A differentiable problem over named input slots.
pub struct Problem {
    pub names: Vec<String>,
    pub inputs: Vec<Tensor<f64>>,
    /// Analytic gradient per slot; `None` skips the comparison.
    pub analytic: Vec<Option<Tensor<f64>>>,
    pub upstream: Tensor<f64>,
    forward: Forward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotError {
    pub name: String,
    pub rel_error: f64,
}

/// Central differences of a scalar function of a flat vector.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> Result<f64>, x: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe)?;
        probe[i] = x[i] - step;
        let minus = f(&probe)?;
        probe[i] = x[i];
        g.push((plus - minus) / (2.0 * step));
    }
    Ok(g)
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        return 0.0;
    }
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / scale
}

fn contract(out: &Tensor<f64>, upstream: &Tensor<f64>) -> Result<f64> {
    out.expect_shape("gradcheck", upstream.shape())?;
    Ok(out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum())
}

impl Problem {
    pub fn objective(&self, inputs: &[Tensor<f64>]) -> Result<f64> {
        contract(&(self.forward)(inputs)?, &self.upstream)
    }

    pub fn check(&self, step: f64) -> Result<Vec<SlotError>> {
        let mut errors = Vec::new();
        for (slot, analytic) in self.analytic.iter().enumerate() {
            let Some(analytic) = analytic else { continue };
            let base = self.inputs[slot].clone();
            let mut work = self.inputs.clone();
            let mut f = |x: &[f64]| {
                work[slot] = Tensor::from_vec(base.shape(), x.to_vec())?;
                self.objective(&work)
            };
            let numeric = central_difference(&mut f, base.data(), step)?;
            errors.push(SlotError {
                name: self.names[slot].clone(),
                rel_error: relative_error(analytic.data(), &numeric),
            });
        }
        Ok(errors)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Flow whose targets land strictly inside the frame with fractional
/// parts in `[0.1, 0.9]`, away from the bilinear kinks.
pub fn interior_flow(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
    let mut flow = Tensor::zeros([1, 2, h, w]);
    for y in 0..h {
        for x in 0..w {
            let tx = rng.gen_range(0..w - 1) as f64 + rng.gen_range(0.1..0.9);
            let ty = rng.gen_range(0..h - 1) as f64 + rng.gen_range(0.1..0.9);
            flow.set(0, 0, y, x, tx - x as f64);
            flow.set(0, 1, y, x, ty - y as f64);
        }
    }
    flow
}

pub fn warp_problem(rng: &mut ChaCha8Rng) -> Result<Problem> {
    let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(3..7), rng.gen_range(3..7));
    let src = uniform(rng, [1, c, h, w], -1.0, 1.0);
    let flow = interior_flow(rng, h, w);
    let upstream = uniform(rng, [1, c, h, w], -1.0, 1.0);
    let (g_src, g_flow) = warp_backward_grad(&src, &flow, &upstream, false)?;
    Ok(Problem {
        names: vec!["src".into(), "flow".into()],
        inputs: vec![src, flow],
        analytic: vec![Some(g_src), Some(g_flow)],
        upstream,
        forward: Box::new(|x| backward_warp(&x[0], &x[1])),
    })
}

pub fn fwb_problem(rng: &mut ChaCha8Rng) -> Result<Problem> {
    let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(3..7), rng.gen_range(3..7));
    let t = rng.gen_range(0.1..0.9);
    let x0 = uniform(rng, [1, c, h, w], -1.0, 1.0);
    let x1 = uniform(rng, [1, c, h, w], -1.0, 1.0);
    let tri = TriFlow::new(
        interior_flow(rng, h, w),
        interior_flow(rng, h, w),
        uniform(rng, [1, 1, h, w], -2.0, 2.0),
    )?;
    let upstream = uniform(rng, [1, c, h, w], -1.0, 1.0);
    let g = blend_backward(&x0, &x1, &tri, t, &upstream)?;
    Ok(Problem {
        names: ["x0", "x1", "flow_t0", "flow_t1", "occ_logit"]
            .map(String::from)
            .to_vec(),
        inputs: vec![x0, x1, tri.flow_t0, tri.flow_t1, tri.occ_logit],
        analytic: vec![
            Some(g.x0),
            Some(g.x1),
            Some(g.flow_t0),
            Some(g.flow_t1),
            Some(g.occ_logit),
        ],
        upstream,
        forward: Box::new(move |x| {
            let tri = TriFlow::new(x[2].clone(), x[3].clone(), x[4].clone())?;
            fwb(&x[0], &x[1], &tri, t)
        }),
    })
}

const FAC_LAYERS: [&str; 6] = ["query", "key", "value", "embed", "gate1", "gate2"];

fn fac_from_slots(x: &[Tensor<f64>]) -> Result<FacWeights<f64>> {
    let spec = |i: usize| {
        let k = x[i].clone();
        let pad = (k.height() / 2, k.width() / 2);
        ConvSpec::new(k, Some(x[i + 1].data().to_vec()), 1, pad)
    };
    FacWeights::from_specs(spec(3)?, spec(5)?, spec(7)?, spec(9)?, spec(11)?, spec(13)?)
}

fn conv_grad_slots(g: ConvGrads<f64>) -> Result<[Option<Tensor<f64>>; 2]> {
    let c_out = g.kernel.batch();
    let bias = g.bias.expect("instance convolutions carry biases");
    Ok([Some(g.kernel), Some(Tensor::from_vec([1, 1, 1, c_out], bias)?)])
}

/// Smallest `|pre-activation|` of the gate's hidden layer.
fn gate_kink_distance(f0: &Tensor<f64>, f1: &Tensor<f64>, flow: &Tensor<f64>, w: &FacWeights<f64>) -> Result<f64> {
    let fac = fac_correlate(f0, f1, flow, w)?;
    let embedded = conv2d(&fac, &w.embed)?;
    let pre = conv2d(&Tensor::cat(&[&embedded, f0])?, &w.gate1)?;
    Ok(pre.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())))
}

/// Bolstered-feature problem. Slots: `f0, f1, flow`, then kernel and bias
/// of each of the six layers. The flow slot carries the analytic gradient
/// (identically zero) but is excluded from the numeric comparison.
pub fn fac_problem(rng: &mut ChaCha8Rng) -> Result<Problem> {
    for _ in 0..1000 {
        let (c, hidden, h, w) = (
            rng.gen_range(2..5),
            rng.gen_range(2..5),
            rng.gen_range(3..6),
            rng.gen_range(3..6),
        );
        let f0 = uniform(rng, [1, c, h, w], -1.0, 1.0);
        let f1 = uniform(rng, [1, c, h, w], -1.0, 1.0);
        let flow = interior_flow(rng, h, w);
        let mut inputs = vec![f0, f1, flow];
        let mut names: Vec<String> = ["f0", "f1", "flow"].map(String::from).to_vec();
        let shapes = [
            [c, c, 1, 1],
            [c, c, 1, 1],
            [c, c, 1, 1],
            [c, c, 1, 1],
            [hidden, 2 * c, 3, 3],
            [1, hidden, 3, 3],
        ];
        for (name, shape) in FAC_LAYERS.iter().zip(shapes) {
            inputs.push(uniform(rng, shape, -0.8, 0.8));
            inputs.push(uniform(rng, [1, 1, 1, shape[0]], -0.2, 0.2));
            names.push(format!("{name}/kernel"));
            names.push(format!("{name}/bias"));
        }
        let weights = fac_from_slots(&inputs)?;
        if gate_kink_distance(&inputs[0], &inputs[1], &inputs[2], &weights)? < KINK_MARGIN {
            continue;
        }
        let upstream = uniform(rng, inputs[0].shape(), -1.0, 1.0);
        let g = fac_backward(&inputs[0], &inputs[1], &inputs[2], &weights, &upstream)?;
        let mut analytic = vec![Some(g.f0), Some(g.f1), None];
        for cg in [g.query, g.key, g.value, g.embed, g.gate1, g.gate2] {
            analytic.extend(conv_grad_slots(cg)?);
        }
        let mut p = Problem {
            names,
            inputs,
            analytic,
            upstream,
            forward: Box::new(|x| fac_bolster_forward(&x[0], &x[1], &x[2], &fac_from_slots(x)?)),
        };
        // Keep the blocked flow gradient around for the zero check.
        p.inputs.push(g.flow);
        p.names.push("flow_grad".into());
        p.analytic.push(None);
        return Ok(p);
    }
    Err(Error::invalid(
        "gradcheck",
        "could not draw a FAC instance away from the ReLU kink",
    ))
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub op: GradOp,
    pub instances: usize,
    pub max_rel_error: f64,
    /// Worst error per input slot across all instances.
    pub per_slot: Vec<SlotError>,
    /// For FAC: whether every analytic flow gradient was exactly zero.
    pub flow_grad_zero: Option<bool>,
}

impl GradReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.flow_grad_zero != Some(false)
    }
}

pub fn run_gradcheck(op: GradOp, seed: u64, instances: usize, step: f64) -> Result<GradReport> {
    if instances == 0 {
        return Err(Error::invalid("gradcheck", "at least one instance is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_slot: Vec<SlotError> = Vec::new();
    let mut flow_zero = true;
    for _ in 0..instances {
        let mut problem = match op {
            GradOp::Warp => warp_problem(&mut rng)?,
            GradOp::Fac => fac_problem(&mut rng)?,
            GradOp::Fwb => fwb_problem(&mut rng)?,
        };
        if op == GradOp::Fac {
            let g = problem.inputs.pop().expect("flow gradient slot");
            problem.names.pop();
            problem.analytic.pop();
            flow_zero &= g.data().iter().all(|&v| v == 0.0);
        }
        for e in problem.check(step)? {
            match per_slot.iter_mut().find(|s| s.name == e.name) {
                Some(s) => s.rel_error = s.rel_error.max(e.rel_error),
                None => per_slot.push(e),
            }
        }
    }
    let max_rel_error = per_slot.iter().fold(0.0f64, |m, s| m.max(s.rel_error));
    Ok(GradReport {
        op,
        instances,
        max_rel_error,
        per_slot,
        flow_grad_zero: (op == GradOp::Fac).then_some(flow_zero),
    })
}
