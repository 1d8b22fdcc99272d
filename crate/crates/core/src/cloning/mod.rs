//! Behavior cloning from stacked observation frames, with masked coordinates
//! removed from the input, and closed-loop evaluation.

pub mod arms;
mod mlp;

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset};
use crate::envs::{self, Controller, EnvSpec, InitMode, StepInput};
use crate::masking::ObservationMask;
use crate::rng::{self, tag};
use crate::{Error, Result};

pub use arms::{compare_arms, Arm, Comparison, ComparisonConfig};
pub use mlp::MlpWeights;

pub const DEFAULT_HISTORY: usize = 2;
pub const DEFAULT_LAMBDA: f64 = 1e-3;
pub const DEFAULT_ROLLOUTS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Ridge,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyperparameters {
    /// Minimizes `mean squared error + lambda * |coef|^2`; the intercept is
    /// not penalized.
    Ridge { lambda: f64 },
    Mlp {
        hidden: usize,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        rng_seed: u64,
    },
}

impl Hyperparameters {
    pub fn ridge() -> Self {
        Hyperparameters::Ridge {
            lambda: DEFAULT_LAMBDA,
        }
    }

    pub fn mlp(rng_seed: u64) -> Self {
        Hyperparameters::Mlp {
            hidden: 64,
            epochs: 30,
            learning_rate: 0.01,
            batch_size: 256,
            rng_seed,
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Hyperparameters::Ridge { .. } => PolicyKind::Ridge,
            Hyperparameters::Mlp { .. } => PolicyKind::Mlp,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        match *self {
            Hyperparameters::Ridge { lambda } if !(lambda.is_finite() && lambda >= 0.0) => {
                bad("ridge lambda must be finite and non-negative")
            }
            Hyperparameters::Mlp { hidden, epochs, learning_rate, batch_size, .. }
                if hidden == 0
                    || epochs == 0
                    || batch_size == 0
                    || !(learning_rate.is_finite() && learning_rate > 0.0) =>
            {
                bad("MLP width, epochs, batch size and learning rate must be positive")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of stacked frames `L`.
    pub history: usize,
    pub hyperparameters: Hyperparameters,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            history: DEFAULT_HISTORY,
            hyperparameters: Hyperparameters::ridge(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    /// `coef` is `d_A x (L * d_O)` row-major; masked columns are zero.
    Linear {
        coef: Vec<Vec<f64>>,
        intercept: Vec<f64>,
    },
    Mlp(MlpWeights),
}

/// A trained policy. Input frames are ordered newest first: `o_t, o_{t-1}, ...`;
/// frames before `t = 1` are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub kind: PolicyKind,
    #[serde(rename = "L")]
    pub history: usize,
    #[serde(with = "mask_bits")]
    pub mask: ObservationMask,
    pub weights: Weights,
    pub hyperparameters: Hyperparameters,
}

mod mask_bits {
    use super::ObservationMask;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &ObservationMask, s: S) -> Result<S::Ok, S::Error> {
        m.as_u8().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ObservationMask, D::Error> {
        let bits = Vec::<u8>::deserialize(d)?;
        if bits.iter().any(|&b| b > 1) {
            return Err(serde::de::Error::custom("mask entries must be 0 or 1"));
        }
        Ok(ObservationMask::new(bits.into_iter().map(|b| b == 1).collect()))
    }
}

/// Positions in the stacked frame vector that survive the mask.
fn active_features(mask: &ObservationMask, history: usize) -> Vec<usize> {
    let d = mask.len();
    (0..history)
        .flat_map(|lag| {
            (0..d)
                .filter(|&j| !mask.bits()[j])
                .map(move |j| lag * d + j)
        })
        .collect()
}

/// The unmasked input features at step `t` (0-based) of a trajectory.
fn features_at(observations: &[Vec<f64>], t: usize, active: &[usize]) -> Vec<f64> {
    let d = observations[t].len();
    active
        .iter()
        .map(|&k| {
            let (lag, j) = (k / d, k % d);
            if lag <= t {
                observations[t - lag][j]
            } else {
                0.0
            }
        })
        .collect()
}

/// Design matrix (unmasked features only) and targets.
fn design(data: &Dataset, active: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let rows: usize = data.trajectories.iter().map(|t| t.steps).sum();
    let d_a = data.dims().action as usize;
    let mut x = DMatrix::zeros(rows, active.len());
    let mut y = DMatrix::zeros(rows, d_a);
    let mut r = 0;
    for tr in &data.trajectories {
        for t in 0..tr.steps {
            for (c, v) in features_at(&tr.observations, t, active).into_iter().enumerate() {
                x[(r, c)] = v;
            }
            for (c, &v) in tr.actions[t].iter().enumerate() {
                y[(r, c)] = v;
            }
            r += 1;
        }
    }
    (x, y)
}

pub fn train(data: &Dataset, mask: &ObservationMask, cfg: &TrainConfig) -> Result<PolicyModel> {
    data.validate()?;
    cfg.hyperparameters.validate()?;
    if cfg.history == 0 {
        return Err(Error::InvalidConfig("history length L must be at least 1".into()));
    }
    let d_o = data.dims().obs as usize;
    if mask.len() != d_o {
        return Err(Error::InvalidConfig(format!(
            "mask has {} entries but observations have {d_o}",
            mask.len()
        )));
    }
    let active = active_features(mask, cfg.history);
    let (x, y) = design(data, &active);
    let weights = match cfg.hyperparameters {
        Hyperparameters::Ridge { lambda } => fit_ridge(&x, &y, lambda, &active, cfg.history * d_o)?,
        Hyperparameters::Mlp { .. } => {
            Weights::Mlp(mlp::fit(&x, &y, &cfg.hyperparameters, &active, cfg.history * d_o)?)
        }
    };
    Ok(PolicyModel {
        kind: cfg.hyperparameters.kind(),
        history: cfg.history,
        mask: mask.clone(),
        weights,
        hyperparameters: cfg.hyperparameters.clone(),
    })
}

fn fit_ridge(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    active: &[usize],
    width: usize,
) -> Result<Weights> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    // centering absorbs the unpenalized intercept
    let x_mean: DVector<f64> = x.row_mean().transpose();
    let y_mean: DVector<f64> = y.row_mean().transpose();
    let xc = DMatrix::from_fn(x.nrows(), p, |i, j| x[(i, j)] - x_mean[j]);
    let yc = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - y_mean[j]);
    let mut gram = xc.transpose() * &xc / n;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * &yc / n;
    let beta = if p == 0 {
        DMatrix::zeros(0, y.ncols())
    } else {
        let chol = gram.cholesky().ok_or(Error::SingularNormalEquations)?;
        let beta = chol.solve(&rhs);
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularNormalEquations);
        }
        beta
    };
    let mut coef = vec![vec![0.0; width]; y.ncols()];
    let mut intercept = y_mean.iter().copied().collect::<Vec<_>>();
    for (a, row) in coef.iter_mut().enumerate() {
        for (c, &k) in active.iter().enumerate() {
            row[k] = beta[(c, a)];
            intercept[a] -= beta[(c, a)] * x_mean[c];
        }
    }
    Ok(Weights::Linear { coef, intercept })
}

impl PolicyModel {
    pub fn obs_dim(&self) -> usize {
        self.mask.len()
    }

    /// Prediction from `frames` (newest first, at most `L` used; missing
    /// frames are zero). Masked coordinates are never read.
    pub fn predict(&self, frames: &[&[f64]]) -> Vec<f64> {
        let d = self.obs_dim();
        let active = active_features(&self.mask, self.history);
        let input: Vec<f64> = active
            .iter()
            .map(|&k| frames.get(k / d).map_or(0.0, |f| f[k % d]))
            .collect();
        match &self.weights {
            Weights::Linear { coef, intercept } => coef
                .iter()
                .zip(intercept)
                .map(|(row, b)| b + active.iter().zip(&input).map(|(&k, v)| row[k] * v).sum::<f64>())
                .collect(),
            Weights::Mlp(w) => w.forward(&active, &input),
        }
    }

    /// Mean squared prediction error over every step of `data`.
    pub fn open_loop_mse(&self, data: &Dataset) -> Result<f64> {
        if data.dims().obs as usize != self.obs_dim() {
            return Err(Error::InvalidConfig("dataset and model observation widths differ".into()));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for tr in &data.trajectories {
            for t in 0..tr.steps {
                let frames: Vec<&[f64]> = (0..self.history.min(t + 1))
                    .map(|lag| tr.observations[t - lag].as_slice())
                    .collect();
                for (p, a) in self.predict(&frames).iter().zip(&tr.actions[t]) {
                    total += (p - a) * (p - a);
                    count += 1;
                }
            }
        }
        Ok(total / count as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        dataset::to_json_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: PolicyModel = serde_json::from_str(s)?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        dataset::write_json(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        let width = self.history * self.obs_dim();
        let ok = self.history >= 1
            && self.kind == self.hyperparameters.kind()
            && match &self.weights {
                Weights::Linear { coef, intercept } => {
                    coef.len() == intercept.len() && coef.iter().all(|r| r.len() == width)
                }
                Weights::Mlp(w) => w.input_width() == width,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("model weights do not match its layout".into()))
        }
    }
}

impl Controller for PolicyModel {
    fn act(&self, input: &StepInput<'_>) -> Result<Vec<f64>> {
        let frames: Vec<&[f64]> = std::iter::once(input.observation)
            .chain(input.history.iter().rev().map(Vec::as_slice))
            .take(self.history)
            .collect();
        Ok(self.predict(&frames))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub losses: Vec<f64>,
    pub truncated: Vec<bool>,
    pub open_loop_mse: Option<f64>,
}

impl EvalResult {
    pub fn rollouts(&self) -> usize {
        self.losses.len()
    }

    pub fn mean(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }

    /// Sample standard deviation (zero for a single rollout).
    pub fn sd(&self) -> f64 {
        let n = self.losses.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.losses.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    pub fn truncated_count(&self) -> usize {
        self.truncated.iter().filter(|&&t| t).count()
    }

    /// `rollout_idx,loss,truncated_flag`, one row per rollout.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["rollout_idx", "loss", "truncated_flag"])
            .map_err(csv_error)?;
        for (i, (loss, trunc)) in self.losses.iter().zip(&self.truncated).enumerate() {
            out.write_record([i.to_string(), format!("{loss:e}"), trunc.to_string()])
                .map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Seed for evaluation rollout `i`.
pub fn eval_seed(seed: u64, i: usize) -> u64 {
    rng::derive_seed(seed, &[tag::EVAL, i as u64])
}

/// Closed-loop rollouts from intervened initial states; the policy's own
/// previous action feeds the nuisance channel.
pub fn evaluate(policy: &PolicyModel, spec: &EnvSpec, rollouts: usize, seed: u64) -> Result<EvalResult> {
    if rollouts == 0 {
        return Err(Error::InvalidConfig("need at least one evaluation rollout".into()));
    }
    if policy.obs_dim() != spec.obs_dim() {
        return Err(Error::InvalidConfig(format!(
            "policy expects {} observation coordinates, {} has {}",
            policy.obs_dim(),
            spec.kind,
            spec.obs_dim()
        )));
    }
    let runs: Vec<envs::Rollout> = (0..rollouts)
        .into_par_iter()
        .map(|i| envs::rollout(spec, policy, &InitMode::Intervened, eval_seed(seed, i)))
        .collect::<Result<_>>()?;
    Ok(EvalResult {
        losses: runs.iter().map(|r| r.loss).collect(),
        truncated: runs.iter().map(|r| r.truncated).collect(),
        open_loop_mse: None,
    })
}
