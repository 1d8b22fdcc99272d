//! Canonical SCMs with known causal structure.
//!
//! All fixtures share one template over `T` steps:
//!
//! ```text
//! S1[s]    := c_s W1 + q_s W1^2 + e            (confounded initial state)
//! O_t[s]   := S_t[s] + e                       (state features, s <= d_S)
//! A_t      := g tanh(sum_s w_s O_t[s] + e)     (expert reads state features only)
//! S_t+1[1] := r S_t[1] + b A_t + e
//! S_t+1[2] := r S_t[2] + k S_t[1] + e
//! ```
//!
//! and differ in the extra observation coordinate that follows the state
//! features:
//!
//! * `fig1`: the nuisance is `k_w W1 + e` at `t = 1` and the previous action
//!   afterwards (the seed confounds it with `S1`).
//! * `prop1_fork`: the same nuisance with a single state coordinate, the
//!   smallest system containing the fork `S1 <- W1 -> O1[2]`.
//! * `causal_obs`: no extra coordinate; both observations are genuine causes
//!   of every action.
//! * `pure_noise_obs`: the extra coordinate is its own noise.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{InterventionSpec, Mechanism, NoiseSpec, Scm, StructuralEquation, Term};
use crate::dataset::{Dataset, Manifest};
use crate::error::{Error, Result};
use crate::graph::{Dims, NodeId};
use crate::masking::ObservationMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureName {
    Fig1,
    Prop1Fork,
    CausalObs,
    PureNoiseObs,
}

impl FixtureName {
    pub const ALL: [FixtureName; 4] = [
        FixtureName::Fig1,
        FixtureName::Prop1Fork,
        FixtureName::CausalObs,
        FixtureName::PureNoiseObs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FixtureName::Fig1 => "fig1",
            FixtureName::Prop1Fork => "prop1_fork",
            FixtureName::CausalObs => "causal_obs",
            FixtureName::PureNoiseObs => "pure_noise_obs",
        }
    }

    fn layout(self) -> (u32, Extra) {
        match self {
            FixtureName::Fig1 => (2, Extra::Nuisance),
            FixtureName::Prop1Fork => (1, Extra::Nuisance),
            FixtureName::CausalObs => (2, Extra::None),
            FixtureName::PureNoiseObs => (2, Extra::PureNoise),
        }
    }
}

impl fmt::Display for FixtureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FixtureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FixtureName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownFixture(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extra {
    None,
    Nuisance,
    PureNoise,
}

/// Coefficients of the fixture template. Every coefficient that carries a
/// causal effect has magnitude at least 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    pub steps: u32,
    pub seed_range: (f64, f64),
    /// `(c_s, q_s)` per state coordinate.
    pub seed_to_state: Vec<(f64, f64)>,
    pub seed_to_nuisance: f64,
    pub policy_weights: Vec<f64>,
    pub policy_gain: f64,
    pub state_decay: f64,
    pub action_to_state: f64,
    pub state_coupling: f64,
    pub noise_sd: f64,
    /// Everywhere-positive initial-state density used in intervened mode.
    pub initial_density: Vec<NoiseSpec>,
}

impl FixtureParams {
    pub fn default_for(name: FixtureName) -> Self {
        let (d_s, _) = name.layout();
        let d_s = d_s as usize;
        Self {
            steps: 4,
            seed_range: (0.0, 1.0),
            seed_to_state: [(2.0, 0.0), (-1.5, 0.8)][..d_s].to_vec(),
            seed_to_nuisance: 1.5,
            policy_weights: [1.0, -0.8][..d_s].to_vec(),
            policy_gain: 1.5,
            state_decay: 0.8,
            action_to_state: 0.7,
            state_coupling: 0.6,
            noise_sd: 0.1,
            initial_density: vec![NoiseSpec::Uniform { lo: -1.5, hi: 1.5 }; d_s],
        }
    }

    /// Random coefficients (magnitudes in `[0.5, 1.5]`, random signs), a random
    /// seed interval and a random everywhere-positive initial density.
    pub fn random<R: Rng>(name: FixtureName, rng: &mut R) -> Self {
        let (d_s, _) = name.layout();
        let coef = |rng: &mut R| {
            let m = rng.random_range(0.5..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        };
        let lo = rng.random_range(-1.0..1.0);
        let width = rng.random_range(0.5..2.0);
        let seed_to_state = (0..d_s)
            .map(|_| (coef(rng), rng.random_range(-0.5..0.5)))
            .collect();
        let policy_weights = (0..d_s).map(|_| coef(rng)).collect();
        let initial_density = (0..d_s)
            .map(|_| {
                if rng.random_bool(0.5) {
                    let lo = rng.random_range(-2.0..0.0);
                    NoiseSpec::Uniform {
                        lo,
                        hi: lo + rng.random_range(1.0..3.0),
                    }
                } else {
                    NoiseSpec::Gaussian {
                        mean: rng.random_range(-0.5..0.5),
                        sd: rng.random_range(0.5..1.5),
                    }
                }
            })
            .collect();
        Self {
            steps: 4,
            seed_range: (lo, lo + width),
            seed_to_state,
            seed_to_nuisance: coef(rng),
            policy_weights,
            policy_gain: rng.random_range(0.5..2.0),
            state_decay: rng.random_range(0.5..0.95),
            action_to_state: coef(rng),
            state_coupling: coef(rng),
            noise_sd: 0.1,
            initial_density,
        }
    }
}

/// Ground truth shipped with each fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureTruth {
    pub name: FixtureName,
    /// Observation coordinates with a genuine edge into some action.
    pub causal_observations: Vec<u32>,
    /// Observation coordinates that are never read by the expert.
    pub non_causal_observations: Vec<u32>,
    /// Mask expected with the initial-state intervention and enough data.
    pub expected_mask_intervened: ObservationMask,
    /// Mask expected on observational data.
    pub expected_mask_confounded: ObservationMask,
    /// Structural edges the fixture is built to contain.
    pub key_edges: Vec<(NodeId, NodeId)>,
    /// Reaction horizon the expectations refer to.
    pub horizon: u32,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub scm: Scm,
    pub truth: FixtureTruth,
    pub params: FixtureParams,
}

/// Whether the initial state is drawn from the fixture's density or
/// generated from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Intervened,
    Confounded,
}

impl SampleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleMode::Intervened => "intervened",
            SampleMode::Confounded => "confounded",
        }
    }
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intervened" => Ok(SampleMode::Intervened),
            "confounded" => Ok(SampleMode::Confounded),
            _ => Err(Error::InvalidConfig(format!("unknown init mode {s:?}"))),
        }
    }
}

pub fn fixture(name: FixtureName) -> Result<Fixture> {
    build(name, FixtureParams::default_for(name))
}

pub fn fixture_by_name(name: &str) -> Result<Fixture> {
    fixture(name.parse()?)
}

/// Instantiate the template for `name` with the given coefficients.
pub fn build(name: FixtureName, params: FixtureParams) -> Result<Fixture> {
    let (d_s, extra) = name.layout();
    let p = &params;
    if p.seed_to_state.len() != d_s as usize
        || p.policy_weights.len() != d_s as usize
        || p.initial_density.len() != d_s as usize
    {
        return Err(Error::InvalidModel(format!(
            "parameters for {name} need {d_s} state coefficients"
        )));
    }
    if p.steps < 2 {
        return Err(Error::InvalidModel("fixtures need at least 2 steps".into()));
    }
    let d_o = d_s + u32::from(extra != Extra::None);
    let dims = Dims::new(d_s, d_o, 1);
    let noise = NoiseSpec::Gaussian {
        mean: 0.0,
        sd: p.noise_sd,
    };
    let mech = |equation| Mechanism { equation, noise };
    let w = NodeId::seed();
    let mut m = BTreeMap::new();

    for (s, &(c, q)) in (1..=d_s).zip(&p.seed_to_state) {
        m.insert(
            NodeId::state(1, s),
            mech(StructuralEquation::affine(
                0.0,
                vec![Term {
                    parent: w,
                    coeffs: [c, q, 0.0],
                }],
                1.0,
            )),
        );
    }
    for t in 1..=p.steps {
        for s in 1..=d_s {
            m.insert(
                NodeId::obs(t, s),
                mech(StructuralEquation::affine(
                    0.0,
                    vec![Term::linear(NodeId::state(t, s), 1.0)],
                    1.0,
                )),
            );
        }
        let terms = (1..=d_s)
            .zip(&p.policy_weights)
            .map(|(s, &wt)| Term::linear(NodeId::obs(t, s), wt))
            .collect();
        m.insert(
            NodeId::action(t, 1),
            mech(StructuralEquation::tanh(p.policy_gain, 0.0, terms, 1.0)),
        );
        match extra {
            Extra::None => {}
            Extra::Nuisance => {
                let parent = if t == 1 {
                    Term::linear(w, p.seed_to_nuisance)
                } else {
                    Term::linear(NodeId::action(t - 1, 1), 1.0)
                };
                m.insert(
                    NodeId::obs(t, d_o),
                    mech(StructuralEquation::affine(0.0, vec![parent], 1.0)),
                );
            }
            Extra::PureNoise => {
                m.insert(
                    NodeId::obs(t, d_o),
                    Mechanism {
                        equation: StructuralEquation::noise_only(),
                        noise: NoiseSpec::standard_normal(),
                    },
                );
            }
        }
        if t > 1 {
            let prev = t - 1;
            m.insert(
                NodeId::state(t, 1),
                mech(StructuralEquation::affine(
                    0.0,
                    vec![
                        Term::linear(NodeId::state(prev, 1), p.state_decay),
                        Term::linear(NodeId::action(prev, 1), p.action_to_state),
                    ],
                    1.0,
                )),
            );
            if d_s > 1 {
                m.insert(
                    NodeId::state(t, 2),
                    mech(StructuralEquation::affine(
                        0.0,
                        vec![
                            Term::linear(NodeId::state(prev, 2), p.state_decay),
                            Term::linear(NodeId::state(prev, 1), p.state_coupling),
                        ],
                        1.0,
                    )),
                );
            }
        }
    }
    let scm = Scm::new(dims, p.steps, p.seed_range, m)?;

    let state_features: Vec<u32> = (1..=d_s).collect();
    let extra_idx: Vec<u32> = if extra == Extra::None { vec![] } else { vec![d_o] };
    let mut key_edges: Vec<(NodeId, NodeId)> = (1..=d_s)
        .flat_map(|s| {
            [
                (w, NodeId::state(1, s)),
                (NodeId::state(1, s), NodeId::obs(1, s)),
                (NodeId::obs(1, s), NodeId::action(1, 1)),
            ]
        })
        .collect();
    match extra {
        Extra::Nuisance => {
            key_edges.push((w, NodeId::obs(1, d_o)));
            key_edges.push((NodeId::action(1, 1), NodeId::obs(2, d_o)));
        }
        Extra::PureNoise | Extra::None => {}
    }
    let truth = FixtureTruth {
        name,
        causal_observations: state_features,
        non_causal_observations: extra_idx.clone(),
        expected_mask_intervened: ObservationMask::from_indices(d_o as usize, extra_idx.clone()),
        expected_mask_confounded: match extra {
            Extra::PureNoise => ObservationMask::from_indices(d_o as usize, extra_idx),
            _ => ObservationMask::none(d_o as usize),
        },
        key_edges,
        horizon: p.steps.min(3),
    };
    Ok(Fixture {
        scm,
        truth,
        params,
    })
}

impl Fixture {
    /// The initial-state intervention `do(S1 ~ P)` with the fixture's density.
    pub fn initial_state_intervention(&self) -> InterventionSpec {
        self.params
            .initial_density
            .iter()
            .enumerate()
            .fold(InterventionSpec::none(), |iv, (i, &d)| {
                iv.draw(NodeId::state(1, i as u32 + 1), d)
            })
    }

    pub fn intervention(&self, mode: SampleMode) -> InterventionSpec {
        match mode {
            SampleMode::Intervened => self.initial_state_intervention(),
            SampleMode::Confounded => InterventionSpec::none(),
        }
    }

    /// `n` trajectories sampled in `mode`.
    pub fn dataset(&self, mode: SampleMode, n: usize, seed: u64) -> Result<Dataset> {
        let batch = self.scm.sample(&self.intervention(mode), n, seed)?;
        let dims = self.scm.dims();
        let manifest = Manifest {
            source: self.truth.name.as_str().to_string(),
            init_mode: mode.as_str().to_string(),
            seed,
            n,
            dims: dims.as_array(),
            steps: self.scm.horizon() as usize,
            constants: serde_json::to_value(&self.params)?,
        };
        batch.to_dataset(dims, self.scm.horizon(), manifest)
    }
}
