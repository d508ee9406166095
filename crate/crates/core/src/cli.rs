//! Command-line surface. Exit codes: 0 success, 1 validation failure,
//! 2 I/O failure.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::backbone::Quad;
use crate::degrade::{synth_blur, DegradeSpec};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradOp, DEFAULT_STEP};
use crate::metrics::{evaluate, Metric};
use crate::model::{interpolation_frames, xavier_init, Network, Stage};
use crate::params::ArchConfig;
use crate::sequence::{read_sequence, write_sequence, FrameSequence};
use crate::weights::{load_weights, save_weights};

#[derive(Debug, Parser)]
#[command(
    name = "deblur-mfi",
    version,
    about = "Joint deblurring and multi-frame interpolation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Arch {
    Bs,
    Rb,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Full-width layers.
    Full,
    /// Narrow layers for quick experiments.
    Tiny,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Bs,
    Rb,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OpArg {
    Warp,
    Fac,
    Fwb,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Average sharp frames into a blurry low-frame-rate sequence.
    SynthBlur {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        tau: usize,
    },
    /// Write Xavier-initialised weights.
    InitWeights {
        #[arg(long, value_enum)]
        arch: Arch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        preset: Preset,
    },
    /// Deblur and interpolate every consecutive quadruple of blurry frames.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "1/8,2/8,3/8,4/8,5/8,6/8,7/8")]
        t_list: String,
        #[arg(long, default_value_t = 3)]
        n_tst: usize,
        /// Defaults to `rb` when the weights contain the boosting stage.
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
    },
    /// Score predicted frames against references.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "psnr,ssim,tof")]
        metrics: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare analytic gradients against central differences.
    Gradcheck {
        #[arg(long, value_enum)]
        op: OpArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = crate::gradcheck::DEFAULT_INSTANCES)]
        instances: usize,
    },
}

/// Parses `"1/8,0.5"`-style lists; every value must lie in `(0, 1)`.
pub fn parse_t_list(s: &str) -> Result<Vec<f64>> {
    let parse_one = |item: &str| -> Result<f64> {
        let item = item.trim();
        let bad = || Error::invalid("t-list", format!("cannot parse '{item}'"));
        let v = match item.split_once('/') {
            Some((n, d)) => {
                let n: f64 = n.trim().parse().map_err(|_| bad())?;
                let d: f64 = d.trim().parse().map_err(|_| bad())?;
                n / d
            }
            None => item.parse().map_err(|_| bad())?,
        };
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::invalid("t-list", format!("{item} is not inside (0, 1)")));
        }
        Ok(v)
    };
    let list = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(parse_one)
        .collect::<Result<Vec<_>>>()?;
    if list.is_empty() {
        return Err(Error::invalid("t-list", "no time instances given"));
    }
    Ok(list)
}

fn parse_metrics(s: &str) -> Result<Vec<Metric>> {
    let mut out = Vec::new();
    for m in s.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Metric = m.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("metrics", "no metrics requested"));
    }
    Ok(out)
}

/// Runs `net` on every window `B_{i-1..=i+2}` and concatenates the outputs,
/// writing each deblurred anchor once.
pub fn infer_sequence(
    net: &Network,
    seq: &FrameSequence,
    t_list: &[f64],
    stage: Stage,
    n_tst: usize,
) -> Result<FrameSequence> {
    if seq.len() < 4 {
        return Err(Error::invalid(
            "infer",
            format!("need at least 4 blurry frames, got {}", seq.len()),
        ));
    }
    let mut frames = Vec::new();
    let windows = seq.len() - 3;
    for start in 0..windows {
        let quad: Quad = std::array::from_fn(|j| seq.frames()[start + j].clone());
        let out = net.infer(&quad, t_list, stage, n_tst)?;
        let mut produced = interpolation_frames(&out, stage)?;
        if start + 1 < windows {
            produced.pop();
        }
        frames.extend(produced);
    }
    FrameSequence::new(frames, seq.fps() * (t_list.len() + 1) as f64)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthBlur { input, out, k, tau } => {
            let seq = read_sequence(&input)?;
            let blurry = synth_blur(&seq, DegradeSpec::new(k, tau)?)?;
            write_sequence(&blurry, &out)?;
            println!("wrote {} blurry frames to {}", blurry.len(), out.display());
        }
        Command::InitWeights {
            arch,
            seed,
            out,
            preset,
        } => {
            let boost = matches!(arch, Arch::Rb);
            let cfg = match preset {
                Preset::Full if boost => ArchConfig::boosted(),
                Preset::Full => ArchConfig::baseline(),
                Preset::Tiny => ArchConfig::tiny(boost),
            };
            let store = xavier_init(&cfg, seed)?;
            save_weights(&store, &out)?;
            println!("wrote {} parameters to {}", store.parameter_count(), out.display());
        }
        Command::Infer {
            weights,
            input,
            out,
            t_list,
            n_tst,
            stage,
        } => {
            let t_list = parse_t_list(&t_list)?;
            let net = Network::from_store(&load_weights(&weights)?)?;
            let stage = match stage {
                Some(StageArg::Bs) => Stage::Baseline,
                Some(StageArg::Rb) => Stage::Boosted,
                None if net.booster.is_some() => Stage::Boosted,
                None => Stage::Baseline,
            };
            if stage == Stage::Boosted && n_tst == 0 {
                return Err(Error::invalid("infer", "--n-tst must be at least 1"));
            }
            let seq = read_sequence(&input)?;
            let result = infer_sequence(&net, &seq, &t_list, stage, n_tst)?;
            write_sequence(&result, &out)?;
            println!("wrote {} frames to {}", result.len(), out.display());
        }
        Command::Eval {
            pred,
            gt,
            metrics,
            report,
        } => {
            let metrics = parse_metrics(&metrics)?;
            let r = evaluate(&read_sequence(&pred)?, &read_sequence(&gt)?, &metrics)?;
            let text = r.to_tsv();
            fs::write(&report, &text).map_err(|e| Error::io(&report, e))?;
            for line in text.lines().filter(|l| l.contains("\tmean\t")) {
                println!("{line}");
            }
        }
        Command::Gradcheck {
            op,
            seed,
            tol,
            instances,
        } => {
            let op = match op {
                OpArg::Warp => GradOp::Warp,
                OpArg::Fac => GradOp::Fac,
                OpArg::Fwb => GradOp::Fwb,
            };
            let r = run_gradcheck(op, seed, instances, DEFAULT_STEP)?;
            for s in &r.per_slot {
                println!("{:<14} {:.3e}", s.name, s.rel_error);
            }
            if let Some(zero) = r.flow_grad_zero {
                println!("flow gradient exactly zero: {zero}");
            }
            println!(
                "max relative error {:.3e} over {} instances (tol {tol:.1e})",
                r.max_rel_error, r.instances
            );
            if !r.passed(tol) {
                return Err(Error::invalid("gradcheck", "gradient mismatch exceeds tolerance"));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
