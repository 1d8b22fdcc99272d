//! Time-unrolled causal DAGs over state, observation, action and seed
//! variables.
//!
//! Nodes are individual vector coordinates at a time step (`S3[2]` is the
//! second state coordinate at time 3). Times and indices are 1-based. The
//! seed `W1` is the scalar exogenous initialization variable and only exists
//! at time 1.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Seed,
    State,
    Observation,
    Action,
}

impl Kind {
    pub fn letter(self) -> &'static str {
        match self {
            Kind::Seed => "W",
            Kind::State => "S",
            Kind::Observation => "O",
            Kind::Action => "A",
        }
    }

    pub fn from_letter(s: &str) -> Option<Kind> {
        match s {
            "W" => Some(Kind::Seed),
            "S" => Some(Kind::State),
            "O" => Some(Kind::Observation),
            "A" => Some(Kind::Action),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: Kind,
    pub time: u32,
    pub index: u32,
}

impl NodeId {
    pub const fn new(kind: Kind, time: u32, index: u32) -> Self {
        Self { kind, time, index }
    }

    pub const fn state(time: u32, index: u32) -> Self {
        Self::new(Kind::State, time, index)
    }

    pub const fn obs(time: u32, index: u32) -> Self {
        Self::new(Kind::Observation, time, index)
    }

    pub const fn action(time: u32, index: u32) -> Self {
        Self::new(Kind::Action, time, index)
    }

    pub const fn seed() -> Self {
        Self::new(Kind::Seed, 1, 1)
    }

    /// Stable integer key, used to derive per-node random streams.
    pub fn key(&self) -> u64 {
        let k = match self.kind {
            Kind::Seed => 0u64,
            Kind::State => 1,
            Kind::Observation => 2,
            Kind::Action => 3,
        };
        (k << 56) | ((self.time as u64) << 28) | self.index as u64
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            Kind::Seed => write!(f, "W{}", self.time),
            k => write!(f, "{}{}[{}]", k.letter(), self.time, self.index),
        }
    }
}

/// `(d_S, d_O, d_A)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub state: u32,
    pub obs: u32,
    pub action: u32,
}

impl Dims {
    pub const fn new(state: u32, obs: u32, action: u32) -> Self {
        Self { state, obs, action }
    }

    pub fn of(&self, kind: Kind) -> u32 {
        match kind {
            Kind::Seed => 1,
            Kind::State => self.state,
            Kind::Observation => self.obs,
            Kind::Action => self.action,
        }
    }

    pub fn as_array(&self) -> [u32; 3] {
        [self.state, self.obs, self.action]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalGraph {
    dims: Dims,
    horizon: u32,
    nodes: BTreeSet<NodeId>,
    parents: BTreeMap<NodeId, BTreeSet<NodeId>>,
    children: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl CausalGraph {
    /// Graph over every coordinate of `dims` at times `1..=horizon` plus the
    /// seed, with the given edges. Fails on out-of-range nodes, edges that go
    /// back in time, and cycles.
    pub fn new(
        dims: Dims,
        horizon: u32,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidQuery("horizon must be at least 1".into()));
        }
        let mut nodes = BTreeSet::new();
        nodes.insert(NodeId::seed());
        for t in 1..=horizon {
            for kind in [Kind::State, Kind::Observation, Kind::Action] {
                for i in 1..=dims.of(kind) {
                    nodes.insert(NodeId::new(kind, t, i));
                }
            }
        }
        let mut g = Self {
            dims,
            horizon,
            parents: nodes.iter().map(|&n| (n, BTreeSet::new())).collect(),
            children: nodes.iter().map(|&n| (n, BTreeSet::new())).collect(),
            nodes,
        };
        for (from, to) in edges {
            g.validate_node(from)?;
            g.validate_node(to)?;
            if to.time < from.time {
                return Err(Error::TimeReversedEdge { from, to });
            }
            if to.kind == Kind::Seed {
                return Err(Error::InvalidNode {
                    node: to,
                    reason: "the seed has no parents".into(),
                });
            }
            g.children.get_mut(&from).unwrap().insert(to);
            g.parents.get_mut(&to).unwrap().insert(from);
        }
        g.topological_order()?;
        Ok(g)
    }

    fn validate_node(&self, n: NodeId) -> Result<()> {
        if self.nodes.contains(&n) {
            return Ok(());
        }
        let reason = if n.kind == Kind::Seed {
            "seed nodes exist only as W1".to_string()
        } else if n.time == 0 || n.time > self.horizon {
            format!("time outside 1..={}", self.horizon)
        } else {
            format!("index outside 1..={}", self.dims.of(n.kind))
        };
        Err(Error::InvalidNode { node: n, reason })
    }

    fn require(&self, n: NodeId) -> Result<()> {
        if self.nodes.contains(&n) {
            Ok(())
        } else {
            Err(Error::UnknownNode(n))
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.nodes.contains(&n)
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.children
            .iter()
            .flat_map(|(&from, cs)| cs.iter().map(move |&to| (from, to)))
    }

    pub fn edge_count(&self) -> usize {
        self.children.values().map(BTreeSet::len).sum()
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.children.get(&from).is_some_and(|c| c.contains(&to))
    }

    /// Parents in ascending `NodeId` order.
    pub fn parents(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.parents.get(&n).into_iter().flatten().copied()
    }

    pub fn children(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.children.get(&n).into_iter().flatten().copied()
    }

    /// Kahn's algorithm with ties broken by `NodeId` order, so the result is
    /// deterministic.
    pub fn topological_order(&self) -> Result<Vec<NodeId>> {
        let mut indegree: BTreeMap<NodeId, usize> =
            self.parents.iter().map(|(&n, p)| (n, p.len())).collect();
        let mut ready: BTreeSet<NodeId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for c in self.children(n) {
                let d = indegree.get_mut(&c).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() < self.nodes.len() {
            let stuck = indegree
                .into_iter()
                .find(|&(_, d)| d > 0)
                .map(|(n, _)| n)
                .unwrap();
            return Err(Error::Cyclic(stuck));
        }
        Ok(order)
    }

    /// Nodes reachable from `start` along directed edges, excluding `start`
    /// unless it lies on a cycle (impossible in a DAG).
    pub fn descendants(&self, start: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<NodeId> = self.children(start).collect();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n) {
                queue.extend(self.children(n));
            }
        }
        seen
    }

    /// Whether a directed path of length at least one leads from `x` to `y`.
    pub fn has_directed_path(&self, x: NodeId, y: NodeId) -> Result<bool> {
        self.require(x)?;
        self.require(y)?;
        Ok(self.descendants(x).contains(&y))
    }

    /// Graph surgery: drop every edge into each target.
    pub fn intervene(&self, targets: &BTreeSet<NodeId>) -> Result<CausalGraph> {
        for &t in targets {
            self.require(t)?;
        }
        let mut g = self.clone();
        for &t in targets {
            let ps = std::mem::take(g.parents.get_mut(&t).unwrap());
            for p in ps {
                g.children.get_mut(&p).unwrap().remove(&t);
            }
        }
        Ok(g)
    }

    /// D-separation of `x` and `y` given `z`.
    ///
    /// Uses the reachability ("Bayes ball") formulation: walk the graph over
    /// (node, direction-of-arrival) states, passing through non-colliders
    /// outside `z` and through colliders that are in `z` or have a
    /// descendant in `z`.
    pub fn d_separated(&self, x: NodeId, y: NodeId, z: &BTreeSet<NodeId>) -> Result<bool> {
        self.require(x)?;
        self.require(y)?;
        for &n in z {
            self.require(n)?;
        }
        if x == y {
            return Err(Error::InvalidQuery(format!("{x} queried against itself")));
        }
        if z.contains(&x) || z.contains(&y) {
            return Err(Error::InvalidQuery(
                "query endpoints must not be in the conditioning set".into(),
            ));
        }

        // z together with its ancestors: exactly the colliders that are open
        let mut opens_collider: BTreeSet<NodeId> = z.clone();
        let mut queue: VecDeque<NodeId> = z.iter().copied().collect();
        while let Some(n) = queue.pop_front() {
            for p in self.parents(n) {
                if opens_collider.insert(p) {
                    queue.push_back(p);
                }
            }
        }

        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
        enum Via {
            // arrived from a child (travelling against the edge)
            Child,
            // arrived from a parent (travelling along the edge)
            Parent,
        }

        let mut visited: BTreeSet<(NodeId, Via)> = BTreeSet::new();
        let mut queue: VecDeque<(NodeId, Via)> = VecDeque::new();
        queue.push_back((x, Via::Child));
        while let Some((n, via)) = queue.pop_front() {
            if !visited.insert((n, via)) {
                continue;
            }
            if n == y {
                return Ok(false);
            }
            let in_z = z.contains(&n);
            match via {
                Via::Child => {
                    if !in_z {
                        for p in self.parents(n) {
                            queue.push_back((p, Via::Child));
                        }
                        for c in self.children(n) {
                            queue.push_back((c, Via::Parent));
                        }
                    }
                }
                Via::Parent => {
                    if !in_z {
                        for c in self.children(n) {
                            queue.push_back((c, Via::Parent));
                        }
                    }
                    if opens_collider.contains(&n) {
                        for p in self.parents(n) {
                            queue.push_back((p, Via::Child));
                        }
                    }
                }
            }
        }
        Ok(true)
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            dims: self.dims.as_array(),
            horizon: self.horizon,
            edges: self
                .edges()
                .map(|(a, b)| {
                    (
                        a.kind.letter().to_string(),
                        a.time,
                        a.index,
                        b.kind.letter().to_string(),
                        b.time,
                        b.index,
                    )
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &GraphDoc) -> Result<Self> {
        let node = |k: &str, t: u32, i: u32| -> Result<NodeId> {
            let kind = Kind::from_letter(k)
                .ok_or_else(|| Error::InvalidQuery(format!("unknown node kind {k:?}")))?;
            Ok(NodeId::new(kind, t, i))
        };
        let edges = doc
            .edges
            .iter()
            .map(|(k1, t1, i1, k2, t2, i2)| Ok((node(k1, *t1, *i1)?, node(k2, *t2, *i2)?)))
            .collect::<Result<Vec<_>>>()?;
        let [s, o, a] = doc.dims;
        CausalGraph::new(Dims::new(s, o, a), doc.horizon, edges)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(&serde_json::from_str(s)?)
    }
}

/// JSON form: `{"dims": [dS,dO,dA], "horizon": T, "edges": [["S",1,2,"O",1,3], ...]}`
/// where each edge is `(kind, time, index)` of the tail followed by the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub dims: [u32; 3],
    pub horizon: u32,
    pub edges: Vec<(String, u32, u32, String, u32, u32)>,
}

/// One coordinate of a vector variable, without a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub kind: Kind,
    pub index: u32,
}

impl Slot {
    pub const fn new(kind: Kind, index: u32) -> Self {
        Self { kind, index }
    }

    pub fn at(self, time: u32) -> NodeId {
        NodeId::new(self.kind, time, self.index)
    }
}

/// An edge pattern repeated at every time step: `from` at `t` into `to` at `t + lag`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemplateEdge {
    pub from: Slot,
    pub to: Slot,
    pub lag: u32,
}

/// Time-invariant description of a system graph.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphTemplate {
    pub dims: Option<Dims>,
    pub edges: Vec<TemplateEdge>,
    /// Targets of the seed `W1`, all at time 1.
    pub seed_edges: Vec<Slot>,
}

impl GraphTemplate {
    pub fn new(dims: Dims) -> Self {
        Self {
            dims: Some(dims),
            ..Default::default()
        }
    }

    pub fn edge(mut self, from: Slot, to: Slot, lag: u32) -> Self {
        self.edges.push(TemplateEdge { from, to, lag });
        self
    }

    pub fn seed_edge(mut self, to: Slot) -> Self {
        self.seed_edges.push(to);
        self
    }

    /// Shift every template edge across `1..=horizon`, dropping shifts that
    /// would leave the horizon, and attach the seed edges at time 1.
    pub fn unroll(&self, horizon: u32) -> Result<CausalGraph> {
        let dims = self
            .dims
            .ok_or_else(|| Error::InvalidQuery("template has no dimensions".into()))?;
        let mut edges = Vec::new();
        for e in &self.edges {
            if e.from.kind == Kind::Seed || e.to.kind == Kind::Seed {
                return Err(Error::InvalidQuery(
                    "seed edges belong in seed_edges".into(),
                ));
            }
            for t in 1..=horizon {
                let head = t + e.lag;
                if head <= horizon {
                    edges.push((e.from.at(t), e.to.at(head)));
                }
            }
        }
        edges.extend(self.seed_edges.iter().map(|s| (NodeId::seed(), s.at(1))));
        CausalGraph::new(dims, horizon, edges)
    }
}

/// Slots used by the layouts in this crate.
pub mod slots {
    use super::{Kind, Slot};

    pub const fn s(i: u32) -> Slot {
        Slot::new(Kind::State, i)
    }
    pub const fn o(i: u32) -> Slot {
        Slot::new(Kind::Observation, i)
    }
    pub const fn a(i: u32) -> Slot {
        Slot::new(Kind::Action, i)
    }
}

#[cfg(test)]
mod tests {
    use super::slots::{a, o, s};
    use super::*;

    fn set(nodes: &[NodeId]) -> BTreeSet<NodeId> {
        nodes.iter().copied().collect()
    }

    fn three(edges: &[(u32, u32)]) -> (CausalGraph, [NodeId; 3]) {
        let n = [NodeId::state(1, 1), NodeId::state(1, 2), NodeId::state(1, 3)];
        let g = CausalGraph::new(
            Dims::new(3, 0, 0),
            1,
            edges.iter().map(|&(i, j)| (n[i as usize], n[j as usize])),
        )
        .unwrap();
        (g, n)
    }

    /// Fig. 1-style template: W1 drives S1 and the first observation; states
    /// drive observations; the first observation at t >= 2 echoes the previous
    /// action; observations drive actions; states and actions drive the next
    /// state.
    pub(crate) fn fig1_template() -> GraphTemplate {
        GraphTemplate::new(Dims::new(2, 3, 1))
            .seed_edge(s(1))
            .seed_edge(s(2))
            .seed_edge(o(1))
            .edge(s(1), o(2), 0)
            .edge(s(2), o(3), 0)
            .edge(o(2), a(1), 0)
            .edge(o(3), a(1), 0)
            .edge(a(1), o(1), 1)
            .edge(s(1), s(1), 1)
            .edge(s(2), s(2), 1)
            .edge(s(1), s(2), 1)
            .edge(a(1), s(2), 1)
    }

    #[test]
    fn chain_is_blocked_by_middle() {
        let (g, [x, m, y]) = three(&[(0, 1), (1, 2)]);
        assert!(g.d_separated(x, y, &set(&[m])).unwrap());
        assert!(!g.d_separated(x, y, &BTreeSet::new()).unwrap());
    }

    #[test]
    fn collider_opens_when_conditioned() {
        let (g, [x, m, y]) = three(&[(0, 1), (2, 1)]);
        assert!(g.d_separated(x, y, &BTreeSet::new()).unwrap());
        assert!(!g.d_separated(x, y, &set(&[m])).unwrap());
    }

    #[test]
    fn collider_opens_through_descendant() {
        let n: Vec<NodeId> = (1..=4).map(|i| NodeId::state(1, i)).collect();
        let g = CausalGraph::new(
            Dims::new(4, 0, 0),
            1,
            [(n[0], n[1]), (n[2], n[1]), (n[1], n[3])],
        )
        .unwrap();
        assert!(!g.d_separated(n[0], n[2], &set(&[n[3]])).unwrap());
    }

    #[test]
    fn fork_is_open_without_conditioning() {
        let (g, [x, m, y]) = three(&[(1, 0), (1, 2)]);
        assert!(!g.d_separated(x, y, &BTreeSet::new()).unwrap());
        assert!(g.d_separated(x, y, &set(&[m])).unwrap());
    }

    #[test]
    fn d_separation_rejects_bad_queries() {
        let (g, [x, m, y]) = three(&[(0, 1)]);
        assert!(g.d_separated(x, x, &BTreeSet::new()).is_err());
        assert!(g.d_separated(x, y, &set(&[x])).is_err());
        assert!(matches!(
            g.d_separated(x, NodeId::state(1, 9), &BTreeSet::new()),
            Err(Error::UnknownNode(_))
        ));
        assert!(g.d_separated(m, y, &BTreeSet::new()).unwrap());
    }

    #[test]
    fn directed_paths() {
        let (g, [x, m, y]) = three(&[(0, 1), (1, 2)]);
        assert!(g.has_directed_path(x, y).unwrap());
        assert!(!g.has_directed_path(y, x).unwrap());
        assert!(!g.has_directed_path(x, x).unwrap());
        let (g, [x, _, y]) = three(&[(1, 0), (1, 2)]);
        assert!(!g.has_directed_path(x, y).unwrap());
        let _ = m;
    }

    #[test]
    fn construction_rejects_cycles_and_backward_edges() {
        let n = [NodeId::state(1, 1), NodeId::state(1, 2)];
        assert!(matches!(
            CausalGraph::new(Dims::new(2, 0, 0), 1, [(n[0], n[1]), (n[1], n[0])]),
            Err(Error::Cyclic(_))
        ));
        assert!(matches!(
            CausalGraph::new(
                Dims::new(1, 0, 0),
                2,
                [(NodeId::state(2, 1), NodeId::state(1, 1))]
            ),
            Err(Error::TimeReversedEdge { .. })
        ));
        assert!(matches!(
            CausalGraph::new(
                Dims::new(1, 0, 0),
                2,
                [(NodeId::new(Kind::Seed, 2, 1), NodeId::state(2, 1))]
            ),
            Err(Error::InvalidNode { .. })
        ));
    }

    #[test]
    fn unroll_single_edge() {
        let g = GraphTemplate::new(Dims::new(1, 0, 1))
            .edge(s(1), a(1), 0)
            .unroll(3)
            .unwrap();
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(
            edges,
            vec![
                (NodeId::state(1, 1), NodeId::action(1, 1)),
                (NodeId::state(2, 1), NodeId::action(2, 1)),
                (NodeId::state(3, 1), NodeId::action(3, 1)),
            ]
        );
    }

    #[test]
    fn unroll_drops_edges_past_horizon() {
        let g = GraphTemplate::new(Dims::new(1, 0, 0))
            .edge(s(1), s(1), 1)
            .unroll(1)
            .unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn unroll_rejects_cyclic_template() {
        let t = GraphTemplate::new(Dims::new(1, 1, 0))
            .edge(s(1), o(1), 0)
            .edge(o(1), s(1), 0);
        assert!(matches!(t.unroll(2), Err(Error::Cyclic(_))));
    }

    #[test]
    fn fig1_wiring() {
        let g = fig1_template().unroll(2).unwrap();
        let w = NodeId::seed();
        assert!(g.has_edge(w, NodeId::state(1, 1)));
        assert!(g.has_edge(w, NodeId::state(1, 2)));
        assert!(g.has_edge(w, NodeId::obs(1, 1)));
        assert!(!g.has_edge(w, NodeId::obs(2, 1)));
        assert!(g.has_edge(NodeId::action(1, 1), NodeId::obs(2, 1)));
        assert!(g.has_edge(NodeId::action(1, 1), NodeId::state(2, 2)));
        assert!(g.has_edge(NodeId::obs(2, 3), NodeId::action(2, 1)));
        // W1 confounds the first observation and S1
        assert!(!g
            .d_separated(NodeId::state(1, 1), NodeId::obs(1, 1), &BTreeSet::new())
            .unwrap());
    }

    #[test]
    fn intervention_on_initial_state_keeps_nuisance_edge() {
        let g = fig1_template().unroll(2).unwrap();
        let targets = set(&[NodeId::state(1, 1), NodeId::state(1, 2)]);
        let gi = g.intervene(&targets).unwrap();
        let w = NodeId::seed();
        assert!(!gi.has_edge(w, NodeId::state(1, 1)));
        assert!(!gi.has_edge(w, NodeId::state(1, 2)));
        assert!(gi.has_edge(w, NodeId::obs(1, 1)));
        assert_eq!(gi.edge_count(), g.edge_count() - 2);
        assert!(gi
            .d_separated(NodeId::state(1, 1), NodeId::obs(1, 1), &BTreeSet::new())
            .unwrap());
        assert_eq!(gi.intervene(&targets).unwrap(), gi);
        assert_eq!(g.intervene(&BTreeSet::new()).unwrap(), g);
        assert_eq!(g.intervene(&set(&[w])).unwrap(), g);
    }

    #[test]
    fn json_round_trip() {
        let g = fig1_template().unroll(3).unwrap();
        let back = CausalGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        let doc: serde_json::Value = serde_json::from_str(&g.to_json().unwrap()).unwrap();
        assert_eq!(doc["dims"], serde_json::json!([2, 3, 1]));
        assert_eq!(doc["edges"][0], serde_json::json!(["W", 1, 1, "S", 1, 1]));
    }

    #[test]
    fn unroll_prefix_consistency() {
        let t = fig1_template();
        for horizon in 2..6 {
            let long = t.unroll(horizon).unwrap();
            let short = t.unroll(horizon - 1).unwrap();
            let restricted: BTreeSet<_> = long
                .edges()
                .filter(|(a, b)| a.time < horizon && b.time < horizon)
                .collect();
            let expected: BTreeSet<_> = short.edges().collect();
            assert_eq!(restricted, expected);
        }
    }
}
