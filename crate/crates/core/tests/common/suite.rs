//! Randomised oracle comparisons. Each runner draws `n` tiny instances and
//! returns the worst relative error seen.

use deblur_mfi::boost::{GruBooster, Mixer, AGG2_CHANNELS};
use deblur_mfi::fac::{bolster, fac_correlate, FacWeights};
use deblur_mfi::flow::{backward_warp, TriFlow};
use deblur_mfi::nn::{conv2d, pixel_shuffle_down, pixel_shuffle_up};
use deblur_mfi::params::ArchConfig;
use deblur_mfi::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn conv2d_suite(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    let kernels = [(1, 1), (3, 3), (5, 5), (1, 5), (5, 1), (7, 7)];
    (0..n)
        .map(|_| {
            let (ci, co) = (r.gen_range(1..=8), r.gen_range(1..=8));
            let (h, w) = (r.gen_range(1..=8), r.gen_range(1..=8));
            let k = kernels[r.gen_range(0..kernels.len())];
            let stride = r.gen_range(1..=2);
            let bias = r.gen_bool(0.5);
            let spec = random_conv(&mut r, ci, co, k, stride, bias);
            let x = random_tensor(&mut r, [1, ci, h, w], -1.0, 1.0);
            rel_err(&conv2d(&x, &spec).unwrap(), &conv(&Ref::from(&x), &spec))
        })
        .fold(0.0, f64::max)
}

/// Compares the down-shuffle with the oracle and checks that the
/// up-shuffle inverts it exactly (error 1 on any mismatch).
pub fn shuffle_suite(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let s = r.gen_range(1..=2);
            let c = r.gen_range(1..=8);
            let (h, w) = (s * r.gen_range(1..=8 / s), s * r.gen_range(1..=8 / s));
            let x = random_tensor(&mut r, [1, c, h, w], -1.0, 1.0);
            let down = pixel_shuffle_down(&x, s).unwrap();
            let back = pixel_shuffle_up(&down, s).unwrap();
            let round_trip = if back == x { 0.0 } else { 1.0 };
            rel_err(&down, &shuffle_down(&Ref::from(&x), s)).max(round_trip)
        })
        .fold(0.0, f64::max)
}

pub fn warp_suite(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let c = r.gen_range(1..=8);
            let (h, w) = (r.gen_range(1..=8), r.gen_range(1..=8));
            let src = random_tensor(&mut r, [1, c, h, w], -1.0, 1.0);
            let flow = random_tensor(&mut r, [1, 2, h, w], -4.0, 4.0);
            rel_err(
                &backward_warp(&src, &flow).unwrap(),
                &warp(&Ref::from(&src), &Ref::from(&flow)),
            )
        })
        .fold(0.0, f64::max)
}

struct FacInstance {
    f0: Tensor,
    f1: Tensor,
    flow: Tensor,
    w: FacWeights,
}

fn fac_instance(r: &mut ChaCha8Rng) -> FacInstance {
    let c = r.gen_range(1..=8);
    let hidden = r.gen_range(1..=8);
    let (h, w) = (r.gen_range(1..=8), r.gen_range(1..=8));
    let proj_bias = r.gen_bool(0.5);
    let weights = FacWeights::from_specs(
        random_conv(r, c, c, (1, 1), 1, proj_bias),
        random_conv(r, c, c, (1, 1), 1, proj_bias),
        random_conv(r, c, c, (1, 1), 1, proj_bias),
        random_conv(r, c, c, (1, 1), 1, true),
        random_conv(r, 2 * c, hidden, (3, 3), 1, true),
        random_conv(r, hidden, 1, (3, 3), 1, true),
    )
    .unwrap();
    FacInstance {
        f0: random_tensor(r, [1, c, h, w], -1.0, 1.0),
        f1: random_tensor(r, [1, c, h, w], -1.0, 1.0),
        flow: random_tensor(r, [1, 2, h, w], -3.0, 3.0),
        w: weights,
    }
}

pub fn fac_correlate_suite(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let i = fac_instance(&mut r);
            let got = fac_correlate(&i.f0, &i.f1, &i.flow, &i.w).unwrap();
            rel_err(
                &got,
                &super::fac_correlate(&Ref::from(&i.f0), &Ref::from(&i.f1), &Ref::from(&i.flow), &i.w),
            )
        })
        .fold(0.0, f64::max)
}

/// Bolstering of `F0` against a random correlation map.
pub fn bolster_suite(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let i = fac_instance(&mut r);
            let fac = random_tensor(&mut r, i.f0.shape(), -2.0, 2.0);
            let got = bolster(&i.f0, &fac, &i.w).unwrap();
            rel_err(&got, &super::bolster(&Ref::from(&i.f0), &Ref::from(&fac), &i.w))
        })
        .fold(0.0, f64::max)
}

fn small_cfg(r: &mut ChaCha8Rng) -> ArchConfig {
    ArchConfig {
        feat: r.gen_range(1..=8),
        mixer_width: r.gen_range(1..=8),
        delta_hidden: r.gen_range(1..=8),
        ..ArchConfig::tiny(true)
    }
}

pub fn mixer_suite(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let cfg = small_cfg(&mut r);
            let m = Mixer::new(&mut RandomParams(rng(r.gen())), "m", &cfg).unwrap();
            let (h, w) = (r.gen_range(1..=8), r.gen_range(1..=8));
            let agg = random_tensor(&mut r, [1, AGG2_CHANNELS, h, w], -1.0, 1.0);
            let fp = random_tensor(&mut r, [1, 5, h, w], -3.0, 3.0);
            let got = m.forward(&agg, &TriFlow::from_tensor(&fp).unwrap()).unwrap();
            rel_err(&got, &mixer(&Ref::from(&agg), &Ref::from(&fp), &m))
        })
        .fold(0.0, f64::max)
}

/// Compares both the next hidden state and the flow increment.
pub fn gru_suite(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let cfg = small_cfg(&mut r);
            let gb = GruBooster::new(&mut RandomParams(rng(r.gen())), "gb", &cfg).unwrap();
            let (h, w) = (r.gen_range(1..=8), r.gen_range(1..=8));
            let hid = random_tensor(&mut r, [1, cfg.feat, h, w], -1.5, 1.5);
            let m = random_tensor(&mut r, [1, cfg.feat, h, w], -1.5, 1.5);
            let step = gb.step(&hid, &m).unwrap();
            let (h_ref, d_ref) = gru_step(&Ref::from(&hid), &Ref::from(&m), &gb);
            rel_err(&step.f_rec, &h_ref).max(rel_err(&step.delta.to_tensor(), &d_ref))
        })
        .fold(0.0, f64::max)
}
