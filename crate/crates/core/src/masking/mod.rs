//! Potential-cause checks and the observation-masking procedure.
//!
//! With the initial state `S1` drawn from an everywhere-positive density, an
//! observation coordinate `O1[o]` is a *potential cause* of `A_t'[a]` when
//! some state coordinate `S1[s]` is dependent on both `O1[o]` and `A_t'[a]`
//! (Hoeffding's D above `gamma`, one pair per trajectory). An observation
//! that is a potential cause of no action within the reaction horizon is
//! masked.

pub mod verify;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Dims, Kind};
use crate::independence::{self, hoeffding_d, PairedSamples, DEFAULT_GAMMA};

/// Default reaction horizon.
pub const DEFAULT_HORIZON: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Reaction horizon `H`: actions at times `1..=H` are tested.
    pub horizon: u32,
    pub gamma: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl MaskConfig {
    pub fn new(horizon: u32, gamma: f64) -> Self {
        Self { horizon, gamma }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        independence::check_gamma(self.gamma)?;
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        data.validate()?;
        let t = data.min_steps();
        if self.horizon as usize > t {
            return Err(Error::InvalidConfig(format!(
                "horizon {} exceeds the shortest trajectory ({t} steps)",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// `true` marks a coordinate to be zeroed before the policy sees it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationMask {
    bits: Vec<bool>,
}

impl ObservationMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn none(d_obs: usize) -> Self {
        Self::new(vec![false; d_obs])
    }

    pub fn all(d_obs: usize) -> Self {
        Self::new(vec![true; d_obs])
    }

    /// Mask with the given 1-based coordinates set.
    pub fn from_indices(d_obs: usize, masked: impl IntoIterator<Item = u32>) -> Self {
        let mut bits = vec![false; d_obs];
        for i in masked {
            bits[i as usize - 1] = true;
        }
        Self::new(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// 1-based.
    pub fn is_masked(&self, o: u32) -> bool {
        self.bits[o as usize - 1]
    }

    /// 1-based indices of masked coordinates.
    pub fn masked_indices(&self) -> Vec<u32> {
        (1..=self.bits.len() as u32)
            .filter(|&o| self.is_masked(o))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Every coordinate masked here is also masked in `other`.
    pub fn is_subset_of(&self, other: &ObservationMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Zero the masked coordinates of one observation frame.
    pub fn apply(&self, frame: &mut [f64]) {
        for (v, &m) in frame.iter_mut().zip(&self.bits) {
            if m {
                *v = 0.0;
            }
        }
    }

    pub fn as_u8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b as u8).collect()
    }
}

impl std::fmt::Display for ObservationMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, &b) in self.bits.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", b as u8)?;
        }
        write!(f, ")")
    }
}

/// `{"gamma": g, "horizon": H, "mask": [0,1,...], "dims": [dS,dO,dA]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDoc {
    pub gamma: f64,
    pub horizon: u32,
    pub mask: Vec<u8>,
    pub dims: [u32; 3],
}

impl MaskDoc {
    pub fn new(mask: &ObservationMask, cfg: &MaskConfig, dims: Dims) -> Self {
        Self {
            gamma: cfg.gamma,
            horizon: cfg.horizon,
            mask: mask.as_u8(),
            dims: dims.as_array(),
        }
    }

    pub fn to_mask(&self) -> Result<ObservationMask> {
        if self.mask.len() != self.dims[1] as usize {
            return Err(Error::InvalidConfig(format!(
                "mask has {} entries but d_O = {}",
                self.mask.len(),
                self.dims[1]
            )));
        }
        self.mask
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                v => Err(Error::InvalidConfig(format!("mask entry {v} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(ObservationMask::new)
    }
}

/// Every D value computed by [`compute_mask`] plus the derived potential-cause
/// table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceReport {
    pub dims: Dims,
    pub horizon: u32,
    pub gamma: f64,
    /// `state_obs[s][o]` = D(S1[s+1], O1[o+1]).
    pub state_obs: Vec<Vec<f64>>,
    /// `state_action[s][a][t]` = D(S1[s+1], A_{t+1}[a+1]).
    pub state_action: Vec<Vec<Vec<f64>>>,
    /// `potential_cause[o][a][t]`: O1[o+1] is a potential cause of A_{t+1}[a+1].
    pub potential_cause: Vec<Vec<Vec<bool>>>,
}

impl DependenceReport {
    fn from_matrices(
        dims: Dims,
        cfg: &MaskConfig,
        state_obs: Vec<Vec<f64>>,
        state_action: Vec<Vec<Vec<f64>>>,
    ) -> Self {
        let mut r = Self {
            dims,
            horizon: cfg.horizon,
            gamma: cfg.gamma,
            state_obs,
            state_action,
            potential_cause: Vec::new(),
        };
        r.potential_cause = r.derive_potential_cause();
        r
    }

    /// Re-derive the potential-cause table from the D matrices and `gamma`.
    pub fn derive_potential_cause(&self) -> Vec<Vec<Vec<bool>>> {
        let g = self.gamma;
        (0..self.dims.obs as usize)
            .map(|o| {
                (0..self.dims.action as usize)
                    .map(|a| {
                        (0..self.horizon as usize)
                            .map(|t| {
                                (0..self.dims.state as usize).any(|s| {
                                    self.state_obs[s][o] > g && self.state_action[s][a][t] > g
                                })
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Mask implied by the potential-cause table alone.
    pub fn mask(&self) -> ObservationMask {
        ObservationMask::new(
            self.potential_cause
                .iter()
                .map(|row| !row.iter().flatten().any(|&p| p))
                .collect(),
        )
    }

    /// Rows `kind,s_idx,target_idx,t_prime,d_value,exceeds_gamma` with 1-based
    /// indices; `t_prime` is empty for observation rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,s_idx,target_idx,t_prime,d_value,exceeds_gamma\n");
        for (s, row) in self.state_obs.iter().enumerate() {
            for (o, &d) in row.iter().enumerate() {
                out.push_str(&format!(
                    "obs,{},{},,{:e},{}\n",
                    s + 1,
                    o + 1,
                    d,
                    d > self.gamma
                ));
            }
        }
        for (s, per_action) in self.state_action.iter().enumerate() {
            for (a, per_t) in per_action.iter().enumerate() {
                for (t, &d) in per_t.iter().enumerate() {
                    out.push_str(&format!(
                        "act,{},{},{},{:e},{}\n",
                        s + 1,
                        a + 1,
                        t + 1,
                        d,
                        d > self.gamma
                    ));
                }
            }
        }
        out
    }
}

fn d_between(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(hoeffding_d(&PairedSamples::new(x, y)?).value())
}

/// The potential-cause test for `O1[o_idx]` and `A_{t_prime}[a_idx]`
/// (all 1-based), stopping at the first state coordinate that satisfies both
/// dependence tests.
pub fn check_potential_cause(
    data: &Dataset,
    o_idx: u32,
    a_idx: u32,
    t_prime: u32,
    cfg: &MaskConfig,
) -> Result<bool> {
    independence::check_gamma(cfg.gamma)?;
    data.validate()?;
    let dims = data.dims();
    if o_idx == 0 || o_idx > dims.obs {
        return Err(Error::InvalidQuery(format!("observation index {o_idx} out of range")));
    }
    if a_idx == 0 || a_idx > dims.action {
        return Err(Error::InvalidQuery(format!("action index {a_idx} out of range")));
    }
    if t_prime == 0 || t_prime as usize > data.min_steps() {
        return Err(Error::InvalidQuery(format!(
            "action time {t_prime} outside 1..={}",
            data.min_steps()
        )));
    }
    let obs = data.column(Kind::Observation, 1, o_idx)?;
    let act = data.column(Kind::Action, t_prime, a_idx)?;
    for s in 1..=dims.state {
        let state = data.column(Kind::State, 1, s)?;
        let a = d_between(&state, &obs)? > cfg.gamma;
        let b = d_between(&state, &act)? > cfg.gamma;
        if a && b {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Mask every observation coordinate that is a potential cause of no action
/// at any time in `1..=horizon`.
///
/// All `d_S * (d_O + H * d_A)` tests are evaluated once (in parallel) and
/// kept in the returned report.
pub fn compute_mask(data: &Dataset, cfg: &MaskConfig) -> Result<(ObservationMask, DependenceReport)> {
    cfg.validate(data)?;
    let dims = data.dims();
    let states = (1..=dims.state)
        .map(|s| data.column(Kind::State, 1, s))
        .collect::<Result<Vec<_>>>()?;
    let obs = (1..=dims.obs)
        .map(|o| data.column(Kind::Observation, 1, o))
        .collect::<Result<Vec<_>>>()?;
    let actions = (1..=cfg.horizon)
        .map(|t| {
            (1..=dims.action)
                .map(|a| data.column(Kind::Action, t, a))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let state_obs = states
        .par_iter()
        .map(|s| obs.par_iter().map(|o| d_between(s, o)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let state_action = states
        .par_iter()
        .map(|s| {
            (0..dims.action as usize)
                .into_par_iter()
                .map(|a| {
                    actions
                        .par_iter()
                        .map(|at_t| d_between(s, &at_t[a]))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let report = DependenceReport::from_matrices(dims, cfg, state_obs, state_action);
    Ok((report.mask(), report))
}

/// Nested-loop evaluation calling [`check_potential_cause`] for every
/// `(o, a, t')`. Slow; kept as the reference the precomputed path is tested
/// against.
pub fn compute_mask_literal(data: &Dataset, cfg: &MaskConfig) -> Result<ObservationMask> {
    cfg.validate(data)?;
    let dims = data.dims();
    let mut bits = vec![false; dims.obs as usize];
    for o in 1..=dims.obs {
        let mut any = false;
        'outer: for a in 1..=dims.action {
            for t in 1..=cfg.horizon {
                if check_potential_cause(data, o, a, t, cfg)? {
                    any = true;
                    break 'outer;
                }
            }
        }
        bits[o as usize - 1] = !any;
    }
    Ok(ObservationMask::new(bits))
}
