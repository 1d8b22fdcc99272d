//! Structural causal models over time-unrolled graphs.
//!
//! Every endogenous node `V` has an equation `V := f(pa(V), U_V)` with its own
//! exogenous noise `U_V`; the seed `W1` is drawn from `U(a, b)`. Sampling
//! evaluates the nodes in topological order. Interventions replace a node's
//! equation by a constant or by a draw from a density, which in graph terms
//! removes the node's incoming edges.
//!
//! Randomness: sample `i` of node `V` reads only from the stream keyed by
//! `(seed, V, i)`, so batches are reproducible regardless of thread count.

pub mod fixtures;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Manifest, Trajectory};
use crate::error::{Error, Result};
use crate::graph::{CausalGraph, Dims, GraphDoc, Kind, NodeId};
use crate::rng::{self, tag};

/// Exogenous noise family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum NoiseSpec {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
}

impl NoiseSpec {
    pub fn standard_normal() -> Self {
        NoiseSpec::Gaussian { mean: 0.0, sd: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseSpec::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            NoiseSpec::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("degenerate distribution {self:?}")))
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Uniform { lo, hi } => rng.random_range(lo..hi),
            NoiseSpec::Gaussian { mean, sd } => Normal::new(mean, sd)
                .expect("validated parameters")
                .sample(rng),
        }
    }
}

/// Densities usable in distributional interventions. Both are everywhere
/// positive on their support box (uniform) or on the whole line (Gaussian).
pub type DensitySpec = NoiseSpec;

/// Output nonlinearity applied to the inner affine-polynomial expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Form {
    Affine,
    /// `gain * tanh(inner)`
    Tanh { gain: f64 },
}

/// `c1*p + c2*p^2 + c3*p^3` for one parent `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub parent: NodeId,
    pub coeffs: [f64; 3],
}

impl Term {
    pub fn linear(parent: NodeId, c: f64) -> Self {
        Self {
            parent,
            coeffs: [c, 0.0, 0.0],
        }
    }

    fn eval(&self, p: f64) -> f64 {
        let [c1, c2, c3] = self.coeffs;
        p * (c1 + p * (c2 + p * c3))
    }
}

/// `out(bias + sum_i term_i(parent_i) + noise_coeff * u)`, where `out` is the
/// identity or a scaled `tanh`. The parents of the node are exactly the
/// parents named by its terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralEquation {
    #[serde(flatten)]
    pub form: Form,
    pub bias: f64,
    pub terms: Vec<Term>,
    pub noise_coeff: f64,
}

impl StructuralEquation {
    pub fn affine(bias: f64, terms: Vec<Term>, noise_coeff: f64) -> Self {
        Self {
            form: Form::Affine,
            bias,
            terms,
            noise_coeff,
        }
    }

    pub fn tanh(gain: f64, bias: f64, terms: Vec<Term>, noise_coeff: f64) -> Self {
        Self {
            form: Form::Tanh { gain },
            bias,
            terms,
            noise_coeff,
        }
    }

    /// Equation of a node that is its own noise.
    pub fn noise_only() -> Self {
        Self::affine(0.0, Vec::new(), 1.0)
    }

    pub fn parents(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.terms.iter().map(|t| t.parent)
    }

    pub fn eval(&self, value_of: impl Fn(NodeId) -> f64, noise: f64) -> f64 {
        let inner = self.bias
            + self
                .terms
                .iter()
                .map(|t| t.eval(value_of(t.parent)))
                .sum::<f64>()
            + self.noise_coeff * noise;
        match self.form {
            Form::Affine => inner,
            Form::Tanh { gain } => gain * inner.tanh(),
        }
    }

    fn validate(&self, node: NodeId) -> Result<()> {
        let finite = self.bias.is_finite()
            && self.noise_coeff.is_finite()
            && self.terms.iter().all(|t| t.coeffs.iter().all(|c| c.is_finite()))
            && match self.form {
                Form::Affine => true,
                Form::Tanh { gain } => gain.is_finite(),
            };
        if !finite {
            return Err(Error::InvalidModel(format!("non-finite coefficient in equation of {node}")));
        }
        let distinct: BTreeSet<NodeId> = self.parents().collect();
        if distinct.len() != self.terms.len() {
            return Err(Error::InvalidModel(format!("repeated parent in equation of {node}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub equation: StructuralEquation,
    pub noise: NoiseSpec,
}

/// Structural equations over a time-unrolled graph.
#[derive(Debug, Clone)]
pub struct Scm {
    graph: CausalGraph,
    order: Vec<NodeId>,
    mechanisms: BTreeMap<NodeId, Mechanism>,
    seed_range: (f64, f64),
}

impl Scm {
    /// The graph is derived from the equations: each node's parents are the
    /// parents named in its terms. Every non-seed node needs a mechanism.
    pub fn new(
        dims: Dims,
        horizon: u32,
        seed_range: (f64, f64),
        mechanisms: BTreeMap<NodeId, Mechanism>,
    ) -> Result<Self> {
        let (a, b) = seed_range;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidModel(format!("seed range ({a}, {b}) is empty")));
        }
        let edges: Vec<(NodeId, NodeId)> = mechanisms
            .iter()
            .flat_map(|(&node, m)| m.equation.parents().map(move |p| (p, node)))
            .collect();
        let graph = CausalGraph::new(dims, horizon, edges)?;
        for node in graph.nodes() {
            match (node.kind, mechanisms.get(&node)) {
                (Kind::Seed, Some(_)) => {
                    return Err(Error::InvalidModel(
                        "the seed is exogenous and takes no equation".into(),
                    ))
                }
                (Kind::Seed, None) => {}
                (_, None) => return Err(Error::InvalidModel(format!("no equation for {node}"))),
                (_, Some(m)) => {
                    m.equation.validate(node)?;
                    m.noise.validate()?;
                }
            }
        }
        if let Some(extra) = mechanisms.keys().find(|n| !graph.contains(**n)) {
            return Err(Error::UnknownNode(*extra));
        }
        let order = graph.topological_order()?;
        Ok(Self {
            graph,
            order,
            mechanisms,
            seed_range,
        })
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn dims(&self) -> Dims {
        self.graph.dims()
    }

    pub fn horizon(&self) -> u32 {
        self.graph.horizon()
    }

    pub fn seed_range(&self) -> (f64, f64) {
        self.seed_range
    }

    pub fn mechanism(&self, n: NodeId) -> Option<&Mechanism> {
        self.mechanisms.get(&n)
    }

    pub fn with_seed_range(mut self, seed_range: (f64, f64)) -> Result<Self> {
        let (a, b) = seed_range;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidModel(format!("seed range ({a}, {b}) is empty")));
        }
        self.seed_range = seed_range;
        Ok(self)
    }

    /// Graph after the surgery implied by `iv`.
    pub fn intervened_graph(&self, iv: &InterventionSpec) -> Result<CausalGraph> {
        self.graph.intervene(&iv.targets())
    }

    /// Draw `n` joint samples under intervention `iv`.
    pub fn sample(&self, iv: &InterventionSpec, n: usize, rng_seed: u64) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::InvalidQuery("sample count must be at least 1".into()));
        }
        iv.validate(&self.graph)?;
        let slot: BTreeMap<NodeId, usize> =
            self.order.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let seed_dist = NoiseSpec::Uniform {
            lo: self.seed_range.0,
            hi: self.seed_range.1,
        };

        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut values = vec![0.0; self.order.len()];
                for (k, &node) in self.order.iter().enumerate() {
                    let key = [node.key(), i as u64];
                    values[k] = if let Some(&c) = iv.constant.get(&node) {
                        c
                    } else if let Some(d) = iv.distributional.get(&node) {
                        d.draw(&mut rng::stream(rng_seed, &[tag::SCM_INTERVENTION, key[0], key[1]]))
                    } else if node.kind == Kind::Seed {
                        seed_dist.draw(&mut rng::stream(rng_seed, &[tag::SCM_SEED, key[0], key[1]]))
                    } else {
                        let m = &self.mechanisms[&node];
                        let u = m
                            .noise
                            .draw(&mut rng::stream(rng_seed, &[tag::SCM_NOISE, key[0], key[1]]));
                        m.equation.eval(|p| values[slot[&p]], u)
                    };
                }
                values
            })
            .collect();

        let values = self
            .order
            .iter()
            .enumerate()
            .map(|(k, &node)| (node, rows.iter().map(|r| r[k]).collect()))
            .collect();
        Ok(SampleBatch {
            n,
            values,
            rng_seed,
        })
    }

    pub fn to_doc(&self) -> ScmDoc {
        ScmDoc {
            graph: self.graph.to_doc(),
            seed_range: [self.seed_range.0, self.seed_range.1],
            equations: self
                .mechanisms
                .iter()
                .map(|(&node, m)| EquationEntry {
                    node,
                    equation: m.equation.clone(),
                })
                .collect(),
            noise: self
                .mechanisms
                .iter()
                .map(|(&node, m)| NoiseEntry {
                    node,
                    noise: m.noise,
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &ScmDoc) -> Result<Self> {
        let noise: BTreeMap<NodeId, NoiseSpec> =
            doc.noise.iter().map(|e| (e.node, e.noise)).collect();
        let mechanisms = doc
            .equations
            .iter()
            .map(|e| {
                let noise = *noise
                    .get(&e.node)
                    .ok_or_else(|| Error::InvalidModel(format!("no noise for {}", e.node)))?;
                Ok((
                    e.node,
                    Mechanism {
                        equation: e.equation.clone(),
                        noise,
                    },
                ))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let [s, o, a] = doc.graph.dims;
        let scm = Scm::new(
            Dims::new(s, o, a),
            doc.graph.horizon,
            (doc.seed_range[0], doc.seed_range[1]),
            mechanisms,
        )?;
        let declared = CausalGraph::from_doc(&doc.graph)?;
        if declared != scm.graph {
            return Err(Error::InvalidModel(
                "edge list disagrees with equation parents".into(),
            ));
        }
        Ok(scm)
    }
}

/// Graph JSON extended with `seed_range`, `equations` and `noise` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmDoc {
    #[serde(flatten)]
    pub graph: GraphDoc,
    pub seed_range: [f64; 2],
    pub equations: Vec<EquationEntry>,
    pub noise: Vec<NoiseEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationEntry {
    pub node: NodeId,
    #[serde(flatten)]
    pub equation: StructuralEquation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub node: NodeId,
    #[serde(flatten)]
    pub noise: NoiseSpec,
}

/// Constant (`do(V = v)`) and distributional (`do(V ~ P)`) assignments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub constant: BTreeMap<NodeId, f64>,
    pub distributional: BTreeMap<NodeId, DensitySpec>,
}

impl InterventionSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn set(mut self, node: NodeId, value: f64) -> Self {
        self.constant.insert(node, value);
        self
    }

    pub fn draw(mut self, node: NodeId, density: DensitySpec) -> Self {
        self.distributional.insert(node, density);
        self
    }

    /// Uniform box over the initial state: `S1[i] ~ U(lo_i, hi_i)`.
    pub fn initial_state_box(bounds: &[(f64, f64)]) -> Self {
        bounds
            .iter()
            .enumerate()
            .fold(Self::none(), |iv, (i, &(lo, hi))| {
                iv.draw(NodeId::state(1, i as u32 + 1), NoiseSpec::Uniform { lo, hi })
            })
    }

    pub fn is_empty(&self) -> bool {
        self.constant.is_empty() && self.distributional.is_empty()
    }

    pub fn targets(&self) -> BTreeSet<NodeId> {
        self.constant
            .keys()
            .chain(self.distributional.keys())
            .copied()
            .collect()
    }

    /// Disjoint targets that exist in `g`, finite constants, proper densities.
    /// Intervening on the seed while also drawing one of its children from a
    /// density is rejected: the overlay would both fix and sever the seed's
    /// influence on that child.
    pub fn validate(&self, g: &CausalGraph) -> Result<()> {
        if let Some(n) = self.constant.keys().find(|n| self.distributional.contains_key(n)) {
            return Err(Error::InvalidIntervention(format!(
                "{n} has both a constant and a distributional assignment"
            )));
        }
        for n in self.targets() {
            if !g.contains(n) {
                return Err(Error::UnknownNode(n));
            }
        }
        if let Some((n, v)) = self.constant.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidIntervention(format!("{n} := {v} is not finite")));
        }
        for d in self.distributional.values() {
            d.validate()
                .map_err(|e| Error::InvalidIntervention(e.to_string()))?;
        }
        let seed = NodeId::seed();
        if self.targets().contains(&seed) {
            if let Some(child) = g
                .children(seed)
                .find(|c| self.distributional.contains_key(c))
            {
                return Err(Error::InvalidIntervention(format!(
                    "the seed is intervened on while its child {child} is drawn from a density"
                )));
            }
        }
        Ok(())
    }
}

/// `n` joint samples, one column per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub n: usize,
    pub values: BTreeMap<NodeId, Vec<f64>>,
    pub rng_seed: u64,
}

impl SampleBatch {
    pub fn column(&self, n: NodeId) -> Option<&[f64]> {
        self.values.get(&n).map(Vec::as_slice)
    }

    /// Reads each sample as one trajectory over times `1..=horizon`.
    pub fn to_dataset(&self, dims: Dims, horizon: u32, manifest: Manifest) -> Result<Dataset> {
        let col = |kind, t, i| {
            self.column(NodeId::new(kind, t, i))
                .ok_or_else(|| Error::InvalidDataset(format!("batch lacks {kind:?} {t} {i}")))
        };
        let mut trajectories = Vec::with_capacity(self.n);
        for j in 0..self.n {
            let rows = |kind: Kind| -> Result<Vec<Vec<f64>>> {
                (1..=horizon)
                    .map(|t| (1..=dims.of(kind)).map(|i| Ok(col(kind, t, i)?[j])).collect())
                    .collect()
            };
            trajectories.push(Trajectory::new(
                rows(Kind::State)?,
                rows(Kind::Observation)?,
                rows(Kind::Action)?,
            ));
        }
        Dataset::new(trajectories, manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::independence::hoeffding_d_slices;

    /// X := U_X, U_X ~ U(0,1); Y := 2X + U_Y, U_Y ~ N(0, 0.01).
    fn two_node() -> Scm {
        let x = NodeId::state(1, 1);
        let y = NodeId::state(1, 2);
        let mut m = BTreeMap::new();
        m.insert(
            x,
            Mechanism {
                equation: StructuralEquation::noise_only(),
                noise: NoiseSpec::Uniform { lo: 0.0, hi: 1.0 },
            },
        );
        m.insert(
            y,
            Mechanism {
                equation: StructuralEquation::affine(0.0, vec![Term::linear(x, 2.0)], 1.0),
                noise: NoiseSpec::Gaussian { mean: 0.0, sd: 0.1 },
            },
        );
        Scm::new(Dims::new(2, 0, 0), 1, (0.0, 1.0), m).unwrap()
    }

    fn mean_and_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn constant_intervention_forces_value() {
        let scm = two_node();
        let x = NodeId::state(1, 1);
        let y = NodeId::state(1, 2);
        let batch = scm.sample(&InterventionSpec::none().set(x, 1.0), 10_000, 5).unwrap();
        assert!(batch.column(x).unwrap().iter().all(|&v| v == 1.0));
        let (m, se) = mean_and_se(batch.column(y).unwrap());
        assert!((m - 2.0).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn observational_marginal_is_uniform() {
        let scm = two_node();
        let batch = scm.sample(&InterventionSpec::none(), 10_000, 6).unwrap();
        let (m, se) = mean_and_se(batch.column(NodeId::state(1, 1)).unwrap());
        assert!((m - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn sampling_is_deterministic() {
        let scm = two_node();
        let a = scm.sample(&InterventionSpec::none(), 300, 9).unwrap();
        let b = scm.sample(&InterventionSpec::none(), 300, 9).unwrap();
        let c = scm.sample(&InterventionSpec::none(), 300, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // a prefix of a larger batch is the smaller batch
        let big = scm.sample(&InterventionSpec::none(), 400, 9).unwrap();
        for (node, col) in &a.values {
            assert_eq!(&big.values[node][..300], &col[..]);
        }
    }

    #[test]
    fn distributional_intervention_breaks_dependence() {
        let scm = two_node();
        let x = NodeId::state(1, 1);
        let y = NodeId::state(1, 2);
        let iv = InterventionSpec::none().draw(y, NoiseSpec::standard_normal());
        let batch = scm.sample(&iv, 5000, 1).unwrap();
        let d = hoeffding_d_slices(batch.column(x).unwrap(), batch.column(y).unwrap()).unwrap();
        assert!(d.value() < 1e-3);
        let g = scm.intervened_graph(&iv).unwrap();
        assert!(!g.has_edge(x, y));
    }

    #[test]
    fn rejects_contradictory_interventions() {
        let scm = two_node();
        let x = NodeId::state(1, 1);
        let iv = InterventionSpec::none()
            .set(x, 1.0)
            .draw(x, NoiseSpec::standard_normal());
        assert!(scm.sample(&iv, 10, 0).is_err());
        let iv = InterventionSpec::none().set(NodeId::state(3, 1), 1.0);
        assert!(matches!(scm.sample(&iv, 10, 0), Err(Error::UnknownNode(_))));
        let iv = InterventionSpec::none().draw(x, NoiseSpec::Uniform { lo: 1.0, hi: 1.0 });
        assert!(scm.sample(&iv, 10, 0).is_err());
        assert!(scm.sample(&InterventionSpec::none(), 0, 0).is_err());
    }

    #[test]
    fn missing_equation_is_rejected() {
        let mut m = BTreeMap::new();
        m.insert(
            NodeId::state(1, 1),
            Mechanism {
                equation: StructuralEquation::noise_only(),
                noise: NoiseSpec::standard_normal(),
            },
        );
        assert!(Scm::new(Dims::new(2, 0, 0), 1, (0.0, 1.0), m).is_err());
    }

    #[test]
    fn equation_forms() {
        let p = NodeId::state(1, 1);
        let poly = StructuralEquation::affine(
            1.0,
            vec![Term {
                parent: p,
                coeffs: [1.0, 2.0, 3.0],
            }],
            0.5,
        );
        // 1 + (2 + 8 + 24) + 0.5 * 2
        assert_eq!(poly.eval(|_| 2.0, 2.0), 36.0);
        let t = StructuralEquation::tanh(2.0, 0.0, vec![Term::linear(p, 1.0)], 0.0);
        assert_eq!(t.eval(|_| 0.5, 9.0), 2.0 * 0.5f64.tanh());
    }
}
