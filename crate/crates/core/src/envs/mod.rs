//! CartPole and Reacher with a previous-action nuisance channel appended to
//! the observation, expert controllers, and dataset generation.
//!
//! Observations are `(state, nuisance)`: the state block is the state itself
//! (optionally mixed by `I + eps * M`), the nuisance block is the previous
//! action divided by the action bound. At `t = 1` there is no previous action;
//! in intervened mode a uniform surrogate is drawn, in confounded mode the
//! surrogate and the initial state are both driven by a shared seed `W1`.

pub mod cartpole;
pub mod reacher;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Manifest, Trajectory};
use crate::graph::Dims;
use crate::masking::ObservationMask;
use crate::rng::{self, tag};
use crate::{Error, Result};

pub use cartpole::LqrExpert;
pub use reacher::ComputedTorqueExpert;

/// States with any coordinate beyond this magnitude end a rollout.
pub const BLOW_UP: f64 = 1e6;
pub const DEFAULT_SEED_RANGE: (f64, f64) = (-1.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    CartPole,
    Reacher,
}

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [EnvKind::CartPole, EnvKind::Reacher];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::Reacher => "reacher",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvKind::CartPole),
            "reacher" => Ok(EnvKind::Reacher),
            other => Err(Error::InvalidConfig(format!(
                "unknown environment {other:?} (expected cartpole or reacher)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub dt: f64,
    pub steps: usize,
    /// Symmetric bound: every action coordinate lies in `[-b, b]`.
    pub action_bound: f64,
    pub nuisance_dims: usize,
    pub mixing_epsilon: f64,
}

impl EnvSpec {
    pub fn cartpole() -> Self {
        Self {
            kind: EnvKind::CartPole,
            dt: 0.05,
            steps: 100,
            action_bound: cartpole::FORCE_BOUND,
            nuisance_dims: 1,
            mixing_epsilon: 0.0,
        }
    }

    pub fn reacher() -> Self {
        Self {
            kind: EnvKind::Reacher,
            dt: 0.05,
            steps: 200,
            action_bound: reacher::TORQUE_BOUND,
            nuisance_dims: 2,
            mixing_epsilon: 0.0,
        }
    }

    pub fn of(kind: EnvKind) -> Self {
        match kind {
            EnvKind::CartPole => Self::cartpole(),
            EnvKind::Reacher => Self::reacher(),
        }
    }

    pub fn with_mixing(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mixing epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        self.mixing_epsilon = epsilon;
        Ok(self)
    }

    pub fn with_steps(mut self, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("episode length must be positive".into()));
        }
        self.steps = steps;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            EnvKind::CartPole => 4,
            EnvKind::Reacher => 6,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            EnvKind::CartPole => 1,
            EnvKind::Reacher => 2,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.state_dim() + self.nuisance_dims
    }

    pub fn dims(&self) -> Dims {
        Dims {
            state: self.state_dim() as u32,
            obs: self.obs_dim() as u32,
            action: self.action_dim() as u32,
        }
    }

    /// Stage cost of taking `action` in `state`.
    pub fn cost(&self, state: &[f64], action: &[f64]) -> f64 {
        match self.kind {
            EnvKind::CartPole => cartpole::cost(state, action[0]),
            EnvKind::Reacher => reacher::cost(state, action),
        }
    }

    /// The fixed mixing direction `M` (unit Frobenius norm).
    pub fn mixing_matrix(&self) -> DMatrix<f64> {
        let d = self.state_dim();
        let mut rng = rng::stream(0, &[tag::MIXING, d as u64]);
        let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = m.norm();
        m / norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum InitMode {
    /// `S1` uniform on the environment's state box; the nuisance surrogate
    /// at `t = 1` is an independent uniform action.
    Intervened,
    /// `W1 ~ U(a, b)` drives both `S1` and the `t = 1` nuisance surrogate.
    Confounded { seed_range: (f64, f64) },
}

impl InitMode {
    pub fn confounded() -> Self {
        InitMode::Confounded {
            seed_range: DEFAULT_SEED_RANGE,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            InitMode::Intervened => "intervened",
            InitMode::Confounded { .. } => "confounded",
        }
    }

    fn validate(&self) -> Result<()> {
        if let InitMode::Confounded { seed_range: (a, b) } = *self {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidConfig(format!(
                    "seed range must satisfy a < b, got ({a}, {b})"
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intervened" => Ok(InitMode::Intervened),
            "confounded" => Ok(InitMode::confounded()),
            other => Err(Error::InvalidConfig(format!(
                "unknown init mode {other:?} (expected intervened or confounded)"
            ))),
        }
    }
}

/// What a controller sees at step `t` (1-based).
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub t: usize,
    pub state: &'a [f64],
    pub observation: &'a [f64],
    /// Observations at steps `1..t`, oldest first.
    pub history: &'a [Vec<f64>],
}

pub trait Controller: Sync {
    fn act(&self, input: &StepInput<'_>) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExpertPolicy {
    CartPole(LqrExpert),
    Reacher(ComputedTorqueExpert),
}

impl ExpertPolicy {
    pub fn for_spec(spec: &EnvSpec) -> Result<Self> {
        Ok(match spec.kind {
            EnvKind::CartPole => ExpertPolicy::CartPole(LqrExpert::new(spec.dt, spec.steps)?),
            EnvKind::Reacher => ExpertPolicy::Reacher(ComputedTorqueExpert),
        })
    }

    /// Expert action at step `t`; reads the state only.
    pub fn action(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        match self {
            ExpertPolicy::CartPole(e) => Ok(vec![e.action(t, state)]),
            ExpertPolicy::Reacher(e) => e.action(state),
        }
    }
}

impl Controller for ExpertPolicy {
    fn act(&self, input: &StepInput<'_>) -> Result<Vec<f64>> {
        self.action(input.t, input.state)
    }
}

pub(crate) fn clamp_action(u: f64, bound: f64) -> f64 {
    u.clamp(-bound, bound)
}

/// Advance one step with the action clamped to the bounds.
pub fn step(spec: &EnvSpec, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
    if state.len() != spec.state_dim() || action.len() != spec.action_dim() {
        return Err(Error::InvalidConfig(format!(
            "{} expects {} state and {} action coordinates, got {} and {}",
            spec.kind,
            spec.state_dim(),
            spec.action_dim(),
            state.len(),
            action.len()
        )));
    }
    if state.iter().chain(action).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let u: Vec<f64> = action
        .iter()
        .map(|&a| clamp_action(a, spec.action_bound))
        .collect();
    Ok(match spec.kind {
        EnvKind::CartPole => cartpole::step(state, u[0], spec.dt),
        EnvKind::Reacher => reacher::step(state, &u, spec.dt),
    })
}

/// Observation for `state` given the previous (or surrogate) action.
pub fn observe(spec: &EnvSpec, state: &[f64], previous_action: &[f64]) -> Vec<f64> {
    let mut obs = if spec.mixing_epsilon == 0.0 {
        state.to_vec()
    } else {
        let s = DVector::from_column_slice(state);
        let mixed = &s + spec.mixing_matrix() * &s * spec.mixing_epsilon;
        mixed.iter().copied().collect()
    };
    obs.extend(previous_action.iter().map(|a| a / spec.action_bound));
    obs
}

/// Uniform draw from `[lo, hi)`.
fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// The intervened initial-state box, per state coordinate. For Reacher the
/// first two entries are the target radius and polar angle. The Reacher angle
/// ranges are deliberately not full turns: the arm is rotation invariant, so
/// with both the target angle and the shoulder angle uniform on the circle
/// each one alone would be independent of every action.
pub fn initial_box(spec: &EnvSpec) -> Vec<(f64, f64)> {
    use std::f64::consts::PI;
    match spec.kind {
        EnvKind::CartPole => vec![(-1.0, 1.0), (-1.0, 1.0), (-0.3, 0.3), (-0.5, 0.5)],
        EnvKind::Reacher => vec![
            reacher::TARGET_RADIUS,
            (0.0, PI),
            (-PI / 2.0, PI / 2.0),
            (-0.5, 0.5),
            (-PI, PI),
            (-0.5, 0.5),
        ],
    }
}

fn from_box(spec: &EnvSpec, unit: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = initial_box(spec)
        .iter()
        .zip(unit)
        .map(|(&(lo, hi), &u)| lo + (hi - lo) * u)
        .collect();
    if spec.kind == EnvKind::Reacher {
        let (r, phi) = (s[0], s[1]);
        s[0] = r * phi.cos();
        s[1] = r * phi.sin();
    }
    s
}

/// Initial state and `t = 1` nuisance surrogate action.
pub fn initial_conditions(
    spec: &EnvSpec,
    init: &InitMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    init.validate()?;
    let b = spec.action_bound;
    match *init {
        InitMode::Intervened => {
            let unit: Vec<f64> = (0..spec.state_dim()).map(|_| uniform(rng, 0.0, 1.0)).collect();
            let prev = (0..spec.action_dim()).map(|_| uniform(rng, -b, b)).collect();
            Ok((from_box(spec, &unit), prev))
        }
        InitMode::Confounded { seed_range: (lo, hi) } => {
            let w = uniform(rng, lo, hi);
            // the seed's position in its range, in [0, 1)
            let u = (w - lo) / (hi - lo);
            let unit: Vec<f64> = (0..spec.state_dim())
                .map(|_| 0.5 * (u + uniform(rng, 0.0, 1.0)))
                .collect();
            let prev = (0..spec.action_dim())
                .map(|j| {
                    let v = b * (2.0 * u - 1.0);
                    if j % 2 == 0 {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            Ok((from_box(spec, &unit), prev))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub loss: f64,
    /// True when the state blew up before the episode ended.
    pub truncated: bool,
}

fn blown_up(state: &[f64]) -> bool {
    state.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP)
}

/// Run `controller` for one episode from initial conditions drawn with
/// `rng_seed`. Actions are clamped before they are applied and recorded.
pub fn rollout(
    spec: &EnvSpec,
    controller: &dyn Controller,
    init: &InitMode,
    rng_seed: u64,
) -> Result<Rollout> {
    let mut rng = rng::stream(rng_seed, &[tag::ROLLOUT]);
    let (mut state, mut prev_action) = initial_conditions(spec, init, &mut rng)?;
    let mut states = Vec::with_capacity(spec.steps);
    let mut observations: Vec<Vec<f64>> = Vec::with_capacity(spec.steps);
    let mut actions = Vec::with_capacity(spec.steps);
    let mut loss = 0.0;
    let mut truncated = false;
    for t in 1..=spec.steps {
        let obs = observe(spec, &state, &prev_action);
        let raw = controller.act(&StepInput {
            t,
            state: &state,
            observation: &obs,
            history: &observations,
        })?;
        if raw.len() != spec.action_dim() {
            return Err(Error::InvalidConfig(format!(
                "controller returned {} action coordinates, expected {}",
                raw.len(),
                spec.action_dim()
            )));
        }
        if raw.iter().any(|a| a.is_nan()) {
            truncated = true;
            break;
        }
        let action: Vec<f64> = raw
            .iter()
            .map(|&a| clamp_action(a, spec.action_bound))
            .collect();
        loss += spec.cost(&state, &action);
        let next = if t < spec.steps {
            Some(step(spec, &state, &action)?)
        } else {
            None
        };
        states.push(state.clone());
        observations.push(obs);
        actions.push(action.clone());
        match next {
            Some(next) if blown_up(&next) => {
                if next.iter().all(|v| v.is_finite()) {
                    loss += spec.cost(&next, &vec![0.0; spec.action_dim()]);
                }
                truncated = true;
                break;
            }
            Some(next) => state = next,
            None => {}
        }
        prev_action = action;
    }
    Ok(Rollout {
        trajectory: Trajectory::new(states, observations, actions),
        loss,
        truncated,
    })
}

/// Per-trajectory seed for trajectory `i` of a run with base `seed`.
pub fn trajectory_seed(seed: u64, i: usize) -> u64 {
    rng::derive_seed(seed, &[tag::ROLLOUT, i as u64])
}

/// `n` expert trajectories. Reproducible for a given seed regardless of the
/// thread count.
pub fn generate(spec: &EnvSpec, init: &InitMode, n: usize, seed: u64) -> Result<Dataset> {
    let expert = ExpertPolicy::for_spec(spec)?;
    let rollouts: Vec<Rollout> = (0..n)
        .into_par_iter()
        .map(|i| rollout(spec, &expert, init, trajectory_seed(seed, i)))
        .collect::<Result<_>>()?;
    if let Some(i) = rollouts.iter().position(|r| r.truncated) {
        return Err(Error::InvalidDataset(format!(
            "expert trajectory {i} blew up; the environment parameters are outside the expert's stable region"
        )));
    }
    let manifest = Manifest {
        source: spec.kind.as_str().to_string(),
        init_mode: init.as_str().to_string(),
        seed,
        n,
        dims: spec.dims().as_array(),
        steps: spec.steps,
        constants: serde_json::json!({ "spec": spec, "init": init }),
    };
    Dataset::new(rollouts.into_iter().map(|r| r.trajectory).collect(), manifest)
}

/// The ground-truth mask: exactly the nuisance coordinates.
pub fn manual_mask(spec: &EnvSpec) -> ObservationMask {
    let mut bits = vec![false; spec.state_dim()];
    bits.extend(std::iter::repeat_n(true, spec.nuisance_dims));
    ObservationMask::new(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Kind;
    use crate::independence::hoeffding_d_slices;

    #[test]
    fn declared_dimensions() {
        let c = EnvSpec::cartpole();
        assert_eq!((c.state_dim(), c.obs_dim(), c.action_dim(), c.steps), (4, 5, 1, 100));
        let r = EnvSpec::reacher();
        assert_eq!((r.state_dim(), r.obs_dim(), r.action_dim(), r.steps), (6, 8, 2, 200));
        assert_eq!(manual_mask(&c).to_string(), "(0,0,0,0,1)");
        assert_eq!(manual_mask(&r).to_string(), "(0,0,0,0,0,0,1,1)");
    }

    #[test]
    fn observation_scales_the_previous_action() {
        let c = EnvSpec::cartpole();
        assert_eq!(observe(&c, &[1.0, 2.0, 3.0, 4.0], &[-12.5]), vec![1.0, 2.0, 3.0, 4.0, -0.5]);
        let r = EnvSpec::reacher();
        let o = observe(&r, &[0.0; 6], &[1.0, -2.0]);
        assert_eq!(&o[6..], &[0.5, -1.0]);
    }

    #[test]
    fn mixing_perturbs_only_the_state_block() {
        let c = EnvSpec::cartpole().with_mixing(0.05).unwrap();
        let s = [0.3, -0.2, 0.1, 0.4];
        let o = observe(&c, &s, &[5.0]);
        assert_eq!(o[4], 0.2);
        let diff: f64 = o[..4].iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff > 0.0 && diff <= 0.05 * norm + 1e-15);
        assert!(EnvSpec::cartpole().with_mixing(-1.0).is_err());
    }

    #[test]
    fn step_rejects_non_finite_state_and_clamps_actions() {
        let c = EnvSpec::cartpole();
        assert!(step(&c, &[f64::NAN, 0.0, 0.0, 0.0], &[0.0]).is_err());
        let s = [0.0, 0.0, 0.1, 0.0];
        assert_eq!(step(&c, &s, &[100.0]).unwrap(), step(&c, &s, &[25.0]).unwrap());
    }

    #[test]
    fn nuisance_channel_is_the_previous_action() {
        for spec in [EnvSpec::cartpole(), EnvSpec::reacher()] {
            let d = generate(&spec, &InitMode::Intervened, 5, 3).unwrap();
            for tr in &d.trajectories {
                for t in 1..tr.steps {
                    for j in 0..spec.action_dim() {
                        let nuisance = tr.observations[t][spec.state_dim() + j];
                        assert_eq!(nuisance, tr.actions[t - 1][j] / spec.action_bound);
                    }
                }
            }
        }
    }

    #[test]
    fn expert_rollouts_are_deterministic_and_settle() {
        let spec = EnvSpec::cartpole();
        let expert = ExpertPolicy::for_spec(&spec).unwrap();
        let a = rollout(&spec, &expert, &InitMode::Intervened, 9).unwrap();
        let b = rollout(&spec, &expert, &InitMode::Intervened, 9).unwrap();
        assert_eq!(a, b);
        assert!(!a.truncated);
        assert!(a.trajectory.states.last().unwrap()[2].abs() < 0.05);
    }

    struct Random;

    impl Controller for Random {
        fn act(&self, input: &StepInput<'_>) -> Result<Vec<f64>> {
            let mut rng = rng::stream(input.t as u64, &[tag::TRIAL]);
            Ok(vec![rng.random_range(-25.0..25.0)])
        }
    }

    #[test]
    fn random_policy_drops_the_pole() {
        let spec = EnvSpec::cartpole();
        let expert = ExpertPolicy::for_spec(&spec).unwrap();
        for seed in 0..10 {
            let random = rollout(&spec, &Random, &InitMode::Intervened, seed).unwrap();
            let good = rollout(&spec, &expert, &InitMode::Intervened, seed).unwrap();
            assert!(random.loss > 10.0 * good.loss);
        }
    }

    #[test]
    fn intervened_initial_states_span_the_box() {
        let spec = EnvSpec::cartpole();
        let d = generate(&spec, &InitMode::Intervened, 1000, 1).unwrap();
        for (i, &(lo, hi)) in initial_box(&spec).iter().enumerate() {
            let col = d.column(Kind::State, 1, i as u32 + 1).unwrap();
            let span = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - col.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(span >= 0.95 * (hi - lo));
        }
    }

    #[test]
    fn confounded_seed_links_state_and_nuisance() {
        let spec = EnvSpec::cartpole();
        let d = generate(&spec, &InitMode::confounded(), 5000, 2).unwrap();
        let nuisance = d.column(Kind::Observation, 1, 5).unwrap();
        for s in 1..=4 {
            let state = d.column(Kind::State, 1, s).unwrap();
            assert!(hoeffding_d_slices(&state, &nuisance).unwrap().value() > 1e-3);
        }
    }

    #[test]
    fn generation_is_independent_of_thread_count() {
        let spec = EnvSpec::reacher();
        let a = generate(&spec, &InitMode::Intervened, 16, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| generate(&spec, &InitMode::Intervened, 16, 5).unwrap());
        assert_eq!(a.trajectories, b.trajectories);
    }

    #[test]
    fn names_parse() {
        assert_eq!("reacher".parse::<EnvKind>().unwrap(), EnvKind::Reacher);
        assert!("pendulum".parse::<EnvKind>().is_err());
        assert_eq!("confounded".parse::<InitMode>().unwrap(), InitMode::confounded());
    }
}
