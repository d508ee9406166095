//! Acceptance criteria. Every test writes one `PASS`/`FAIL` line straight
//! to stdout (bypassing the harness capture) and then asserts.
//!
//! Run with `cargo test --test acceptance`.

mod common;

use std::io::Write;
use std::time::Instant;

use common::suite::*;
use common::{panning, random_tensor};
use deblur_mfi::backbone::Quad;
use deblur_mfi::boost::{agg3_channels, aggregate2, compute_losses, Triplet, AGG2_CHANNELS};
use deblur_mfi::cli::infer_sequence;
use deblur_mfi::degrade::{synth_blur, DegradeSpec};
use deblur_mfi::flow::{backward_warp, fwb, pwb, TriFlow};
use deblur_mfi::gradcheck::{run_gradcheck, GradOp, DEFAULT_STEP};
use deblur_mfi::metrics::{psnr, ssim, tof, tof_with_margin, PSNR_CAP};
use deblur_mfi::model::{xavier_init, Network, Stage};
use deblur_mfi::params::{ArchConfig, ZeroInit};
use deblur_mfi::sequence::FrameSequence;
use deblur_mfi::weights::{load_weights, save_weights};
use deblur_mfi::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Suite = fn(u64, usize) -> f64;

fn report(id: u8, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{verdict} criterion {id}: {name} ({detail})");
}

fn info(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "     {line}");
}

#[test]
fn criterion_1_operator_oracles() {
    const N: usize = 100;
    const TOL: f64 = 1e-5;
    let start = Instant::now();
    let suites: [(&str, Suite); 7] = [
        ("conv2d", conv2d_suite),
        ("pixel_shuffle", shuffle_suite),
        ("backward_warp", warp_suite),
        ("fac_correlate", fac_correlate_suite),
        ("bolster", bolster_suite),
        ("mixer", mixer_suite),
        ("gru_booster_step", gru_suite),
    ];
    let errors: Vec<(&str, f64)> = suites.iter().map(|(name, run)| (*name, run(1000, N))).collect();
    let secs = start.elapsed().as_secs_f64();
    let worst = errors.iter().fold(0.0f64, |m, e| m.max(e.1));
    let pass = worst < TOL && secs < 60.0;
    report(
        1,
        "operator oracle suite",
        pass,
        &format!("{N} instances per operator, max rel error {worst:.2e} < {TOL:.0e}, {secs:.1} s < 60 s"),
    );
    for (name, e) in &errors {
        info(&format!("{name:<17} {e:.2e}"));
    }
    assert!(pass);
}

#[test]
fn criterion_2_gradient_checks() {
    const TOL: f64 = 1e-4;
    const INSTANCES: usize = 20;
    let start = Instant::now();
    let warp = run_gradcheck(GradOp::Warp, 0, INSTANCES, DEFAULT_STEP).unwrap();
    let fac = run_gradcheck(GradOp::Fac, 0, INSTANCES, DEFAULT_STEP).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let flow_zero = fac.flow_grad_zero == Some(true);
    let pass = warp.max_rel_error < TOL && fac.max_rel_error < TOL && flow_zero && secs < 120.0;
    report(
        2,
        "gradient checks",
        pass,
        &format!(
            "warp {:.2e}, fac {:.2e} < {TOL:.0e} over {INSTANCES} instances each; FAC flow grad exactly zero: {flow_zero}; {secs:.1} s < 120 s",
            warp.max_rel_error, fac.max_rel_error
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_blend_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut convex = true;
    let mut sums_exact = true;
    let mut endpoints = true;
    for _ in 0..200 {
        let (c, h, w) = (rng.gen_range(1..5), rng.gen_range(2..9), rng.gen_range(2..9));
        let x0 = random_tensor(&mut rng, [1, c, h, w], -2.0, 2.0);
        let x1 = random_tensor(&mut rng, [1, c, h, w], -2.0, 2.0);
        let tri = TriFlow::new(
            random_tensor(&mut rng, [1, 2, h, w], -3.0, 3.0),
            random_tensor(&mut rng, [1, 2, h, w], -3.0, 3.0),
            random_tensor(&mut rng, [1, 1, h, w], -30.0, 30.0),
        )
        .unwrap();
        let t: f64 = rng.gen_range(0.01..0.99);
        let w0 = backward_warp(&x0, &tri.flow_t0).unwrap();
        let w1 = backward_warp(&x1, &tri.flow_t1).unwrap();
        for out in [fwb(&x0, &x1, &tri, t).unwrap(), pwb(&x0, &x1, &tri, t).unwrap()] {
            for ((&o, &a), &b) in out.data().iter().zip(w0.data()).zip(w1.data()) {
                let slack = 1e-6 * a.abs().max(b.abs()).max(1.0);
                convex &= o >= a.min(b) - slack && o <= a.max(b) + slack;
            }
        }
        let (o0, o1) = tri.occlusion_weights();
        sums_exact &= o0.iter().zip(&o1).all(|(a, b)| a + b == 1.0);

        let zero = TriFlow {
            flow_t0: Tensor::zeros([1, 2, h, w]),
            flow_t1: Tensor::zeros([1, 2, h, w]),
            ..tri
        };
        endpoints &= fwb(&x0, &x1, &zero, 0.0).unwrap() == x0 && fwb(&x0, &x1, &zero, 1.0).unwrap() == x1;
        endpoints &= pwb(&x0, &x1, &zero, 0.0).unwrap() == x0 && pwb(&x0, &x1, &zero, 1.0).unwrap() == x1;
    }
    let pass = convex && sums_exact && endpoints;
    report(
        3,
        "blend contracts",
        pass,
        &format!("200 instances; convex: {convex}; exact endpoints: {endpoints}; occlusion weights sum to 1 exactly: {sums_exact}"),
    );
    assert!(pass);
}

fn constant_frames(values: &[f32], shape: [usize; 4]) -> FrameSequence {
    FrameSequence::new(values.iter().map(|&v| Tensor::full(shape, v)).collect(), 240.0).unwrap()
}

#[test]
fn criterion_4_degradation_protocol() {
    let spec = DegradeSpec::new(8, 5).unwrap();
    let len = 33;
    let shape = [1, 3, 2, 2];

    // impulse responses recover the exact window of every blurry frame
    let mut indexing = true;
    let anchors: Vec<usize> = spec.anchors(len).collect();
    for j in 0..len {
        let mut v = vec![0.0f32; len];
        v[j] = 1.0;
        let blurry = synth_blur(&constant_frames(&v, shape), spec).unwrap();
        indexing &= blurry.len() == anchors.len();
        for (b, &i) in blurry.frames().iter().zip(&anchors) {
            let inside = (i * 8 - 5..=i * 8 + 5).contains(&j);
            let expected = if inside { 1.0 / 11.0 } else { 0.0 };
            indexing &= b.data().iter().all(|&x| x == expected as f32);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c: f32 = rng.gen();
    let blurred = synth_blur(&constant_frames(&vec![c; len], shape), spec).unwrap();
    let constant_err = blurred
        .frames()
        .iter()
        .flat_map(|f| f.data())
        .fold(0.0f64, |m, &v| m.max((v - c).abs() as f64));

    let seq = |rng: &mut ChaCha8Rng| {
        FrameSequence::new(
            (0..len).map(|_| random_tensor(rng, [1, 3, 4, 4], 0.0, 1.0)).collect(),
            240.0,
        )
        .unwrap()
    };
    let (x, y) = (seq(&mut rng), seq(&mut rng));
    let (a, b) = (0.3f32, 0.6f32);
    let mixed = FrameSequence::new(
        x.frames()
            .iter()
            .zip(y.frames())
            .map(|(p, q)| p.scale(a as f64).add(&q.scale(b as f64)).unwrap())
            .collect(),
        240.0,
    )
    .unwrap();
    let lhs = synth_blur(&mixed, spec).unwrap();
    let (bx, by) = (synth_blur(&x, spec).unwrap(), synth_blur(&y, spec).unwrap());
    let mut linear_err = 0.0f64;
    for ((l, p), q) in lhs.frames().iter().zip(bx.frames()).zip(by.frames()) {
        for ((&l, &p), &q) in l.data().iter().zip(p.data()).zip(q.data()) {
            linear_err = linear_err.max((l as f64 - (a as f64 * p as f64 + b as f64 * q as f64)).abs());
        }
    }
    let pass = indexing && constant_err <= 1e-7 && linear_err <= 1e-7;
    report(
        4,
        "degradation protocol",
        pass,
        &format!(
            "K=8, tau=5 on {len} frames gives {} windows; exact indexing: {indexing}; constant err {constant_err:.1e}, linearity err {linear_err:.1e} <= 1e-7",
            anchors.len()
        ),
    );
    assert!(pass);
}

fn smoke_quad(size: usize) -> Vec<Tensor> {
    (0..4)
        .map(|i| {
            Tensor::from_fn([1, 3, size, size], |_, c, y, x| {
                let v = ((x as f32 + 1.5 * i as f32) * 0.21).sin() * ((y as f32) * 0.17 + c as f32).cos();
                0.5 + 0.35 * v
            })
        })
        .collect()
}

#[test]
fn criterion_5_end_to_end_smoke() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let t_list: Vec<f64> = (1..8).map(|k| k as f64 / 8.0).collect();
    let input = FrameSequence::new(smoke_quad(64), 30.0).unwrap();
    let mut failures = Vec::new();
    let mut check = |label: String, out: &FrameSequence| {
        let ok = out.len() == 9
            && out.size() == (64, 64)
            && out
                .frames()
                .iter()
                .all(|f| f.shape() == [1, 3, 64, 64] && f.all_finite());
        if !ok {
            failures.push(label);
        }
    };

    let mut counts = Vec::new();
    for (arch, cfg) in [("bs", ArchConfig::baseline()), ("rb", ArchConfig::boosted())] {
        let path = dir.path().join(format!("{arch}.dmfi"));
        save_weights(&xavier_init(&cfg, 2024).unwrap(), &path).unwrap();
        let store = load_weights(&path).unwrap();
        let net = Network::from_store(&store).unwrap();
        if cfg.boost {
            for n in [1, 3, 5] {
                check(
                    format!("rb N_tst={n}"),
                    &infer_sequence(&net, &input, &t_list, Stage::Boosted, n).unwrap(),
                );
                counts.push((n, net.param_count(), store.parameter_count()));
            }
        } else {
            check(
                "bs".into(),
                &infer_sequence(&net, &input, &t_list, Stage::Baseline, 0).unwrap(),
            );
        }
    }
    let shared = counts.iter().all(|&(_, a, b)| a == counts[0].1 && b == counts[0].1);
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && shared && secs < 300.0;
    report(
        5,
        "end-to-end smoke",
        pass,
        &format!(
            "64x64 quadruple, 7 time instances, bs and rb with N_tst in {{1,3,5}}: 9 finite frames each; failing runs {failures:?}; rb parameters {} for every N_tst: {shared}; {secs:.1} s < 300 s",
            counts[0].1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_recursion_algebra() {
    let store = xavier_init(&ArchConfig::tiny(true), 6).unwrap();
    let net = Network::from_store(&store).unwrap();
    let quad: Quad = std::array::from_fn(|i| smoke_quad(16).swap_remove(i));

    let mut telescopes = true;
    for n in [1, 2, 5] {
        let out = &net.infer(&quad, &[0.375], Stage::Boosted, n).unwrap()[0];
        let run = out.boost.as_ref().unwrap();
        let mut sum = Tensor::<f64>::zeros(run.state.f_p.to_tensor().shape());
        for it in &run.iterations {
            sum = sum.add(&it.delta.to_tensor().cast()).unwrap();
        }
        telescopes &= run
            .state
            .f_p
            .to_tensor()
            .sub(&out.baseline.ff.to_tensor().cast())
            .unwrap()
            == sum;
    }

    let mut zeroed = store.clone();
    zeroed.zero_prefix("boost/gb");
    zeroed.zero_prefix("boost/decoder2");
    let still = Network::from_store(&zeroed).unwrap();
    let out = &still.infer(&quad, &[0.375], Stage::Boosted, 3).unwrap()[0];
    let base = &out.baseline;
    let first = Triplet {
        s0: base.s0r.clone(),
        st: pwb(&base.s0r, &base.s1r, &base.ff, 0.375).unwrap(),
        s1: base.s1r.clone(),
    };
    let run = out.boost.as_ref().unwrap();
    let fixed = run.iterations.iter().all(|it| it.frames == first) && run.state.f_p == base.ff.cast::<f64>();

    // losses: additivity, then the uniform-offset closed form
    let gt = Triplet {
        s0: smoke_quad(8)[0].clone(),
        st: smoke_quad(8)[1].clone(),
        s1: smoke_quad(8)[2].clone(),
    };
    let iters: Vec<Triplet> = (0..4)
        .map(|k| {
            let shift = |x: &Tensor| x.map(|v| v + 0.01 * (k + 1) as f32);
            Triplet {
                s0: shift(&gt.s0),
                st: shift(&gt.st),
                s1: shift(&gt.s1),
            }
        })
        .collect();
    let r = compute_losses(&iters, &iters[0], &gt, 3).unwrap();
    let additive = r.total == r.l_d1 + r.l_d2_per_iter.iter().sum::<f64>() && r.l_d2_per_iter.len() == 3;

    let delta = 0.0625f32;
    let offset = Triplet {
        s0: gt.s0.map(|v| v + delta),
        st: gt.st.map(|v| v - delta),
        s1: gt.s1.map(|v| v + delta),
    };
    let mut closed_err = 0.0f64;
    for n_trn in 0..=4 {
        let r = compute_losses(&vec![offset.clone(); 4], &offset, &gt, n_trn).unwrap();
        closed_err = closed_err.max((r.total - (1 + n_trn) as f64 * delta as f64).abs());
    }

    let pass = telescopes && fixed && additive && closed_err <= 1e-6;
    report(
        6,
        "recursion algebra",
        pass,
        &format!("telescoping exact: {telescopes}; zero-weight fixed point: {fixed}; loss additivity: {additive}; closed-form err {closed_err:.1e} <= 1e-6"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_metrics() {
    let gt = panning(4, 2, 64, 77);
    let frame = &gt.frames()[0];
    let id_psnr = psnr(frame, frame, 1.0).unwrap();
    let id_ssim = ssim(frame, frame).unwrap();
    let id_tof = tof(&gt, &gt).unwrap();
    let identity = id_psnr == PSNR_CAP && id_ssim == 1.0 && id_tof == 0.0;

    let base = Tensor::full([1, 3, 32, 32], 0.5f32);
    let shifted = base.map(|v| v + 16.0 / 255.0);
    let offset_db = psnr(&shifted, &base, 1.0).unwrap();
    let offset_ok = (offset_db - 24.0484).abs() <= 1e-3;

    let mut rigid = Vec::new();
    for d in [1usize, 2, 3, 4, 6] {
        let moving = panning(4, d, 64, d as u64 + 100);
        let still = FrameSequence::new(vec![moving.frames()[0].clone(); 4], 30.0).unwrap();
        let score = tof_with_margin(&still, &moving, 16).unwrap();
        rigid.push((d, score, (score - d as f64).abs() <= 0.1 * d as f64));
    }
    let rigid_ok = rigid.iter().all(|r| r.2);
    let pass = identity && offset_ok && rigid_ok;
    report(
        7,
        "metrics",
        pass,
        &format!(
            "identity psnr {id_psnr} ssim {id_ssim} tof {id_tof}; 16/255 offset {offset_db:.4} dB vs 24.0484 +/- 1e-3; rigid tOF within 10%: {rigid_ok}"
        ),
    );
    for (d, score, ok) in &rigid {
        info(&format!(
            "displacement {d} px: tOF {score:.3} ({})",
            if *ok { "ok" } else { "off" }
        ));
    }
    assert!(pass);
}

#[test]
fn criterion_8_channel_bookkeeping() {
    let cfg = ArchConfig::boosted();
    let backbone = cfg.backbone_channels();
    let agg1 = cfg.agg1_channels();

    // construction asserts on the backbone and Agg¹ widths; Agg² and Agg³
    // are measured on a live forward pass
    let tiny = Network::from_store(&xavier_init(&ArchConfig::tiny(true), 8).unwrap()).unwrap();
    let quad: Quad = std::array::from_fn(|i| smoke_quad(16).swap_remove(i));
    let base = tiny.baseline.forward(&quad, 0.5).unwrap();
    let agg2 = aggregate2(&base, &quad).unwrap().channels();
    let full = Network::build(&mut ZeroInit, &cfg).unwrap();
    let agg3 = full.booster.as_ref().unwrap().decoder.in_channels();
    assert_eq!(agg3, agg3_channels(cfg.feat));
    assert_eq!(agg2, AGG2_CHANNELS);

    let checks = [
        ("backbone", backbone, 133),
        ("Agg1", agg1, 201),
        ("Agg2", agg2, 30),
        ("Agg3", agg3, 95),
    ];
    let mismatches: Vec<String> = checks
        .iter()
        .filter(|c| c.1 != c.2)
        .map(|c| format!("{} has {} channels, expected {}", c.0, c.1, c.2))
        .collect();
    let pass = mismatches.is_empty();
    let summary = checks
        .iter()
        .map(|c| format!("{} {}", c.0, c.1))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        8,
        "channel bookkeeping",
        pass,
        &format!("{summary}; mismatches: {mismatches:?}"),
    );

    let bs = Network::build(&mut ZeroInit, &ArchConfig::baseline())
        .unwrap()
        .param_count();
    let rb = full.param_count();
    for (name, ours, reference) in [("bs", bs, 5.96e6), ("rb", rb, 7.41e6)] {
        let dev = (ours as f64 - reference) / reference * 100.0;
        info(&format!(
            "info: {name} parameters {ours} vs reference {reference:.3e} ({dev:+.1}%)"
        ));
    }
    assert!(pass, "{mismatches:?}");
}
