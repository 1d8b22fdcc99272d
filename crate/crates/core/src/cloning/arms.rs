//! Side-by-side comparison of unmasked, algorithmically masked and
//! ground-truth masked policies.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, EvalResult, TrainConfig};
use crate::envs::{self, EnvSpec, InitMode};
use crate::masking::{compute_mask, MaskConfig, ObservationMask};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// No mask.
    Vanilla,
    /// Mask computed from the training data.
    Masked,
    /// Exactly the nuisance coordinates.
    Manual,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Vanilla, Arm::Masked, Arm::Manual];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Vanilla => "vanilla",
            Arm::Masked => "masked",
            Arm::Manual => "manual",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown arm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    /// Expert trajectories per seed.
    pub trajectories: usize,
    pub seeds: usize,
    pub rollouts: usize,
    /// Seed `k` of the run uses `base_seed + k` for data and evaluation.
    pub base_seed: u64,
    pub mask: MaskConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmRun {
    pub seed: u64,
    pub arm: Arm,
    pub mask: ObservationMask,
    pub result: EvalResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub runs: Vec<ArmRun>,
}

impl Comparison {
    /// Mean closed-loop loss of `arm` pooled over seeds and rollouts.
    pub fn mean_loss(&self, arm: Arm) -> f64 {
        let losses: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.arm == arm)
            .flat_map(|r| r.result.losses.iter().copied())
            .collect();
        losses.iter().sum::<f64>() / losses.len() as f64
    }

    /// `seed,arm,mask,mean_loss,sd_loss,rollouts,truncated`, one row per seed and arm.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(["seed", "arm", "mask", "mean_loss", "sd_loss", "rollouts", "truncated"])
            .map_err(io)?;
        for r in &self.runs {
            out.write_record([
                r.seed.to_string(),
                r.arm.to_string(),
                r.mask.to_string(),
                format!("{:e}", r.result.mean()),
                format!("{:e}", r.result.sd()),
                r.result.rollouts().to_string(),
                r.result.truncated_count().to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Generate intervened expert data per seed, fit the three arms on it and
/// evaluate each closed loop.
pub fn compare_arms(spec: &EnvSpec, cfg: &ComparisonConfig) -> Result<Comparison> {
    if cfg.seeds == 0 {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let mut runs = Vec::with_capacity(3 * cfg.seeds);
    for k in 0..cfg.seeds as u64 {
        let seed = cfg.base_seed.wrapping_add(k);
        let data = envs::generate(spec, &InitMode::Intervened, cfg.trajectories, seed)?;
        let (computed, _) = compute_mask(&data, &cfg.mask)?;
        for arm in Arm::ALL {
            let mask = match arm {
                Arm::Vanilla => ObservationMask::none(spec.obs_dim()),
                Arm::Masked => computed.clone(),
                Arm::Manual => envs::manual_mask(spec),
            };
            let model = train(&data, &mask, &cfg.train)?;
            let mut result = evaluate(&model, spec, cfg.rollouts, seed)?;
            result.open_loop_mse = Some(model.open_loop_mse(&data)?);
            runs.push(ArmRun { seed, arm, mask, result });
        }
    }
    Ok(Comparison { runs })
}
