//! The assembled two-stage network and its weight-store round trip.

use crate::backbone::{Baseline, BaselineOut, Quad};
use crate::boost::{BoostRun, Booster, Triplet};
use crate::error::{Error, Result};
use crate::params::{ArchConfig, ParamSource, StoreLoader, XavierInit};
use crate::weights::WeightStore;

/// Path of the serialized [`ArchConfig`] inside a weight store.
pub const ARCH_PATH: &str = "meta/arch";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Baseline only.
    Baseline,
    /// Baseline followed by recursive boosting.
    Boosted,
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bs" => Ok(Stage::Baseline),
            "rb" => Ok(Stage::Boosted),
            other => Err(Error::invalid("stage", format!("expected 'bs' or 'rb', got '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    cfg: ArchConfig,
    pub baseline: Baseline,
    pub booster: Option<Booster>,
}

/// Output at one time instance.
#[derive(Clone, Debug)]
pub struct TimeOutput {
    pub t: f64,
    pub baseline: BaselineOut,
    pub boost: Option<BoostRun>,
}

impl TimeOutput {
    /// Frames of the requested stage: the baseline triplet, or the final
    /// boosting iteration.
    pub fn frames(&self, stage: Stage) -> Result<Triplet> {
        match (stage, &self.boost) {
            (Stage::Baseline, _) => Ok(Triplet {
                s0: self.baseline.s0r.clone(),
                st: self.baseline.str_.clone(),
                s1: self.baseline.s1r.clone(),
            }),
            (Stage::Boosted, Some(run)) => Ok(run.last().clone()),
            (Stage::Boosted, None) => Err(Error::invalid("inference", "boosting stage was not run")),
        }
    }
}

impl Network {
    pub fn build(src: &mut dyn ParamSource, cfg: &ArchConfig) -> Result<Self> {
        let baseline = Baseline::new(src, cfg)?;
        let booster = if cfg.boost { Some(Booster::new(src, cfg)?) } else { None };
        Ok(Network {
            cfg: cfg.clone(),
            baseline,
            booster,
        })
    }

    /// Loads a network whose architecture is recorded under [`ARCH_PATH`].
    pub fn from_store(store: &WeightStore) -> Result<Self> {
        let cfg = ArchConfig::from_tensor(store.require(ARCH_PATH)?)?;
        Self::build(&mut StoreLoader::new(store), &cfg)
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.baseline.param_count() + self.booster.as_ref().map_or(0, Booster::param_count)
    }

    /// Runs both stages (when available) for each `t`. The time-independent
    /// part runs once.
    pub fn infer(&self, frames: &Quad, t_list: &[f64], stage: Stage, n_tst: usize) -> Result<Vec<TimeOutput>> {
        if t_list.is_empty() {
            return Err(Error::invalid("inference", "empty t list"));
        }
        let booster = match stage {
            Stage::Baseline => None,
            Stage::Boosted => Some(
                self.booster
                    .as_ref()
                    .ok_or_else(|| Error::invalid("inference", "weights hold no boosting stage"))?,
            ),
        };
        if booster.is_some() && n_tst == 0 {
            return Err(Error::invalid("inference", "N_tst must be at least 1"));
        }
        let enc = self.baseline.encode(frames)?;
        t_list
            .iter()
            .map(|&t| {
                let baseline = self.baseline.forward_encoded(&enc, t)?;
                let boost = booster.map(|b| b.run(&baseline, frames, n_tst)).transpose()?;
                Ok(TimeOutput { t, baseline, boost })
            })
            .collect()
    }
}

/// Xavier-initialised weights for `cfg`, with the architecture recorded.
pub fn xavier_init(cfg: &ArchConfig, seed: u64) -> Result<WeightStore> {
    let mut init = XavierInit::new(seed);
    Network::build(&mut init, cfg)?;
    let mut store = init.into_store();
    store.insert(ARCH_PATH, cfg.to_tensor())?;
    Ok(store)
}

/// Output frames for an interpolation run: the deblurred `S0` from the
/// first time instance, every interpolated frame, then `S1` from the last.
pub fn interpolation_frames(outputs: &[TimeOutput], stage: Stage) -> Result<Vec<crate::Tensor>> {
    let triplets = outputs.iter().map(|o| o.frames(stage)).collect::<Result<Vec<_>>>()?;
    let (first, last) = match (triplets.first(), triplets.last()) {
        (Some(f), Some(l)) => (f.s0.clone(), l.s1.clone()),
        _ => return Err(Error::invalid("inference", "no outputs")),
    };
    let mut frames = vec![first];
    frames.extend(triplets.into_iter().map(|t| t.st));
    frames.push(last);
    Ok(frames)
}
