//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use deconfound::cloning::{self, compare_arms, Arm, ComparisonConfig, PolicyModel, TrainConfig};
use deconfound::envs::{self, EnvSpec, InitMode};
use deconfound::graph::{CausalGraph, Dims, NodeId};
use common::hoeffding_oracle;
use deconfound::independence::{hoeffding_d_slices, DEFAULT_GAMMA};
use deconfound::masking::verify::{verify_conservativeness, verify_fork, verify_monotonicity};
use deconfound::masking::{compute_mask, MaskConfig, MaskDoc, ObservationMask};
use deconfound::rng::stream;
use deconfound::scm::fixtures::{build, FixtureName, FixtureParams, SampleMode};
use deconfound::dataset::{self, Dataset};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Criterion = fn() -> Outcome;

fn hoeffding_oracle_equivalence() -> Outcome {
    let mut rng = stream(2024, &[1]);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(5..=500);
        // every third case draws from a small alphabet to force ties
        let levels = if case % 3 == 0 { rng.random_range(2..8) } else { 0 };
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            if levels > 0 {
                rng.random_range(0..levels) as f64
            } else {
                rng.random::<f64>()
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| if case % 2 == 0 { v + draw(&mut rng) } else { draw(&mut rng) })
            .collect();
        let fast = hoeffding_d_slices(&x, &y).unwrap().value();
        let slow = hoeffding_oracle(&x, &y);
        worst = worst.max((fast - slow).abs());
    }
    outcome(worst <= 1e-12, format!("max |fast - oracle| = {worst:e} over 1000 inputs"))
}

fn hoeffding_calibration() -> Outcome {
    let x = [0.3, -1.0, 2.5, 7.0, 4.0];
    let identity = hoeffding_d_slices(&x, &x).unwrap().value();
    let small = (0..100u64)
        .filter(|&trial| {
            let mut rng = stream(7, &[trial]);
            let a: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
            hoeffding_d_slices(&a, &b).unwrap().value().abs() < 1e-3
        })
        .count();
    outcome(
        identity == 1.0 && small >= 95,
        format!("D(X, X) = {identity}; |D| < 1e-3 in {small}/100 independent trials"),
    )
}

/// Independent d-separation check: enumerate every simple path of the
/// skeleton and test each for blocking.
struct PathOracle {
    nodes: Vec<NodeId>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl PathOracle {
    fn new(nodes: Vec<NodeId>, edges: &[(usize, usize)]) -> Self {
        let k = nodes.len();
        let mut parents = vec![Vec::new(); k];
        let mut children = vec![Vec::new(); k];
        for &(a, b) in edges {
            children[a].push(b);
            parents[b].push(a);
        }
        Self { nodes, parents, children }
    }

    fn descendants(&self, v: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([v]);
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            for &c in &self.children[u] {
                if seen.insert(c) {
                    stack.push(c);
                }
            }
        }
        seen
    }

    fn blocked(&self, path: &[usize], z: &BTreeSet<usize>) -> bool {
        path.windows(3).any(|w| {
            let (a, m, b) = (w[0], w[1], w[2]);
            let collider = self.parents[m].contains(&a) && self.parents[m].contains(&b);
            if collider {
                self.descendants(m).is_disjoint(z)
            } else {
                z.contains(&m)
            }
        })
    }

    fn separated(&self, x: usize, y: usize, z: &BTreeSet<usize>) -> bool {
        let mut path = vec![x];
        self.all_paths_blocked(y, z, &mut path)
    }

    fn all_paths_blocked(&self, y: usize, z: &BTreeSet<usize>, path: &mut Vec<usize>) -> bool {
        let last = *path.last().unwrap();
        if last == y {
            return self.blocked(path, z);
        }
        let next: Vec<usize> = self.parents[last]
            .iter()
            .chain(&self.children[last])
            .copied()
            .filter(|v| !path.contains(v))
            .collect();
        next.into_iter().all(|v| {
            path.push(v);
            let ok = self.all_paths_blocked(y, z, path);
            path.pop();
            ok
        })
    }
}

fn d_separation_oracle() -> Outcome {
    let dims = Dims { state: 6, obs: 0, action: 0 };
    let results: Vec<(usize, usize)> = (0..200u64)
        .into_par_iter()
        .map(|g| {
            let mut rng = stream(31, &[g]);
            let k = rng.random_range(2..=6usize);
            let density = rng.random_range(0.2..0.8);
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut rng);
            let mut edges = Vec::new();
            for i in 0..k {
                for j in i + 1..k {
                    if rng.random_bool(density) {
                        edges.push((order[i], order[j]));
                    }
                }
            }
            let nodes: Vec<NodeId> = (1..=k as u32).map(|i| NodeId::state(1, i)).collect();
            let graph = CausalGraph::new(dims, 1, edges.iter().map(|&(a, b)| (nodes[a], nodes[b]))).unwrap();
            let oracle = PathOracle::new(nodes.clone(), &edges);
            let (mut queries, mut disagreements) = (0, 0);
            for x in 0..k {
                for y in 0..k {
                    if x == y {
                        continue;
                    }
                    let rest: Vec<usize> = (0..k).filter(|&v| v != x && v != y).collect();
                    for bits in 0u32..1 << rest.len() {
                        let z: BTreeSet<usize> = rest
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| bits >> i & 1 == 1)
                            .map(|(_, &v)| v)
                            .collect();
                        let z_nodes = z.iter().map(|&v| oracle.nodes[v]).collect();
                        let fast = graph.d_separated(nodes[x], nodes[y], &z_nodes).unwrap();
                        queries += 1;
                        if fast != oracle.separated(x, y, &z) {
                            disagreements += 1;
                        }
                    }
                }
            }
            (queries, disagreements)
        })
        .collect();
    let queries: usize = results.iter().map(|r| r.0).sum();
    let bad: usize = results.iter().map(|r| r.1).sum();
    outcome(bad == 0, format!("{bad} disagreements in {queries} queries over 200 graphs"))
}

fn mask_recovery() -> Outcome {
    let cfg = MaskConfig::new(3, DEFAULT_GAMMA);
    let mut ok = true;
    let mut detail = Vec::new();
    for (spec, n) in [(EnvSpec::cartpole(), 1000), (EnvSpec::reacher(), 2000)] {
        let start = Instant::now();
        let data = envs::generate(&spec, &InitMode::Intervened, n, 42).unwrap();
        let (mask, _) = compute_mask(&data, &cfg).unwrap();
        let expected = envs::manual_mask(&spec);
        let elapsed = start.elapsed();
        ok &= mask == expected && elapsed < Duration::from_secs(60);
        detail.push(format!("{} N={n}: {mask} (expected {expected}, {elapsed:.1?})", spec.kind));
    }
    outcome(ok, detail.join("; "))
}

fn conservativeness_suite() -> Outcome {
    let r = verify_conservativeness(50, 5000, 1).unwrap();
    outcome(r.passed(), format!("{} violations in {} trials", r.violations, r.trials))
}

fn monotonicity_suite() -> Outcome {
    let r = verify_monotonicity(20, 5000, 2).unwrap();
    outcome(
        r.passed(),
        format!("{} coordinates lost to intervention in {} trials", r.violations, r.outcomes.len()),
    )
}

fn fork_suite() -> Outcome {
    let r = verify_fork(20, 5000, 3).unwrap();
    outcome(
        r.passed(),
        format!(
            "nuisance masked under intervention {}/20, kept without intervention {}/20",
            r.masked_under_intervention, r.kept_without_intervention
        ),
    )
}

fn arm_ordering() -> Outcome {
    let cfg = ComparisonConfig {
        trajectories: 1000,
        seeds: 5,
        rollouts: 25,
        base_seed: 0,
        mask: MaskConfig::new(3, DEFAULT_GAMMA),
        train: TrainConfig::default(),
    };
    let c = compare_arms(&EnvSpec::cartpole(), &cfg).unwrap();
    let (vanilla, masked, manual) = (
        c.mean_loss(Arm::Vanilla),
        c.mean_loss(Arm::Masked),
        c.mean_loss(Arm::Manual),
    );
    outcome(
        masked <= 1.25 * manual && vanilla >= 1.5 * manual,
        format!(
            "mean loss vanilla {vanilla:.4e}, masked {masked:.4e}, manual {manual:.4e} \
             (masked/manual {:.3}, vanilla/manual {:.3})",
            masked / manual,
            vanilla / manual
        ),
    )
}

fn hyperparameter_monotonicity() -> Outcome {
    let gammas = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2];
    let failures: usize = (0..20u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream(5, &[trial]);
            let name = FixtureName::ALL[trial as usize % 4];
            let f = build(name, FixtureParams::random(name, &mut rng)).unwrap();
            let mode = if trial % 2 == 0 { SampleMode::Intervened } else { SampleMode::Confounded };
            let data = f.dataset(mode, 2000, trial).unwrap();
            let steps = data.min_steps() as u32;
            let mask = |h: u32, g: f64| compute_mask(&data, &MaskConfig::new(h, g)).unwrap().0;
            let mut bad = 0;
            for h in 1..=steps {
                let by_gamma: Vec<ObservationMask> = gammas.iter().map(|&g| mask(h, g)).collect();
                bad += by_gamma.windows(2).filter(|w| !w[0].is_subset_of(&w[1])).count();
            }
            for &g in &gammas {
                let by_h: Vec<ObservationMask> = (1..=steps).map(|h| mask(h, g)).collect();
                bad += by_h.windows(2).filter(|w| !w[1].is_subset_of(&w[0])).count();
            }
            bad
        })
        .sum();
    outcome(failures == 0, format!("{failures} subset violations over 20 datasets"))
}

/// gen -> mask -> train -> eval into `dir`, returning the written files.
fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let spec = EnvSpec::cartpole();
    let data_path = dir.join("data.jsonl");
    envs::generate(&spec, &InitMode::Intervened, 200, 11)
        .unwrap()
        .save(&data_path)
        .unwrap();
    let data = Dataset::load(&data_path).unwrap();
    let cfg = MaskConfig::default();
    let (mask, report) = compute_mask(&data, &cfg).unwrap();
    let mut doc = Vec::new();
    dataset::write_json(&mut doc, &MaskDoc::new(&mask, &cfg, data.dims())).unwrap();
    fs::write(dir.join("mask.json"), doc).unwrap();
    fs::write(dir.join("report.csv"), report.to_csv()).unwrap();
    let model = cloning::train(&data, &mask, &TrainConfig::default()).unwrap();
    model.save(&dir.join("model.json")).unwrap();
    let model = PolicyModel::load(&dir.join("model.json")).unwrap();
    let result = cloning::evaluate(&model, &spec, 25, 11).unwrap();
    result
        .write_csv(fs::File::create(dir.join("results.csv")).unwrap())
        .unwrap();
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let names: Vec<&str> = first.iter().map(|f| f.0.as_str()).collect();
    outcome(
        first == second && first.len() == 6,
        format!("{} artifacts compared byte for byte: {}", names.len(), names.join(", ")),
    )
}

fn main() {
    let criteria: [(&str, Criterion, Duration); 10] = [
        ("hoeffding fast statistic equals the quadratic oracle", hoeffding_oracle_equivalence, Duration::from_secs(30)),
        ("hoeffding calibration", hoeffding_calibration, Duration::from_secs(60)),
        ("d-separation agrees with path enumeration", d_separation_oracle, Duration::from_secs(120)),
        ("nuisance mask recovery on cartpole and reacher", mask_recovery, Duration::from_secs(120)),
        ("no causal observation is masked", conservativeness_suite, Duration::from_secs(300)),
        ("intervention never unmasks less", monotonicity_suite, Duration::from_secs(300)),
        ("fork nuisance masked only under intervention", fork_suite, Duration::from_secs(180)),
        ("cartpole closed-loop ordering of the three arms", arm_ordering, Duration::from_secs(600)),
        ("mask monotone in gamma and horizon", hyperparameter_monotonicity, Duration::from_secs(120)),
        ("pipeline is byte-for-byte deterministic", determinism, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let passed = o.passed && elapsed <= *budget;
        failed += usize::from(!passed);
        println!(
            "criterion {:>2} {}: {name}: {} [{elapsed:.1?} / {budget:?}]",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
