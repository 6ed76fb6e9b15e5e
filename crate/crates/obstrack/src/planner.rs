//! Forward search over meta-states: a tree rooted at a sampled scene grows
//! by mutating selected nodes' environments and incrementally re-simulating,
//! until some node's trajectory fails the task.
//!
//! Node selection is pluggable: uniform over the tree, greedy on the cached
//! distance-to-failure, or the two tree-growing variants that extend the
//! node nearest to a fresh sample (under the composite meta-state distance,
//! or the environment distance alone for the simplified form).

use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    env_distance, perturb_elements, sample_env, EnvError, EnvironmentType, Mutation, PerturbNoise,
};
use crate::meta::{
    meta_dynamics, meta_state_distance, sample_meta_state, MetaError, MetaState, SimMode,
    ValidationMode,
};
use crate::sim::{Controller, Scenario, Simulator};

/// Node selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Random,
    Greedy,
    RrtStandard,
    RrtSimplified,
}

/// How many elements a mutation replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WidthPolicy {
    Constant(usize),
    Random,
}

/// How replacement elements are drawn: fresh uniform samples from the
/// environment-sampling domain, or local Gaussian perturbations of the
/// removed elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthPolicy {
    Unlimited,
    Perturb { sigma_x: f64, sigma_y: f64 },
}

/// Search budgets. Wall-clock budgets trade determinism for safety; leave
/// unset when reproducibility matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Budgets {
    pub max_envs: Option<u64>,
    pub max_controller_calls: Option<u64>,
    pub max_wall_ms: Option<u64>,
}

impl Budgets {
    pub fn with_max_envs(envs: u64) -> Self {
        Budgets {
            max_envs: Some(envs),
            ..Budgets::default()
        }
    }

    fn exhausted(&self, counters: &EffortCounters, started: Instant) -> bool {
        self.max_envs.is_some_and(|m| counters.envs_tested >= m)
            || self
                .max_controller_calls
                .is_some_and(|m| counters.calls_total() >= m)
            || self
                .max_wall_ms
                .is_some_and(|m| started.elapsed() >= Duration::from_millis(m))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub selection: Selection,
    /// Fraction of selection rounds that pick the node closest to failure;
    /// the rest explore. Only the tree-growing strategies use it.
    pub goal_bias: f64,
    pub width: WidthPolicy,
    pub depth: DepthPolicy,
    /// Children grown per selected node before re-selecting.
    pub expansion_breadth: usize,
    /// Weight of the environment term in the composite meta-state distance.
    pub meta_distance_weight: f64,
    pub validation: ValidationMode,
    /// When set, whole-collection replacements are only drawn during
    /// exploration rounds, never while steering toward the goal.
    pub restrict_full_width_to_exploration: bool,
    pub budgets: Budgets,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            selection: Selection::Random,
            goal_bias: 0.8,
            width: WidthPolicy::Random,
            depth: DepthPolicy::Perturb {
                sigma_x: 2.0,
                sigma_y: 2.0,
            },
            expansion_breadth: 1,
            meta_distance_weight: 0.5,
            validation: ValidationMode::FastSector,
            restrict_full_width_to_exploration: false,
            budgets: Budgets::with_max_envs(500),
        }
    }
}

/// Effort tallies, split between tree expansion and the meta-state sampling
/// some selection strategies perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EffortCounters {
    pub envs_tested: u64,
    pub calls_expansion: u64,
    pub calls_sampling: u64,
    pub wall: Duration,
}

impl EffortCounters {
    pub fn calls_total(&self) -> u64 {
        self.calls_expansion + self.calls_sampling
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Found(Box<MetaState>),
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalsificationResult {
    pub outcome: Outcome,
    pub counters: EffortCounters,
    /// Mutation chain from the tree root to the goal node; empty when the
    /// goal was a fresh sample or no goal was found.
    pub provenance: Vec<Mutation>,
}

impl FalsificationResult {
    pub fn found(&self) -> Option<&MetaState> {
        match &self.outcome {
            Outcome::Found(m) => Some(m),
            Outcome::Exhausted => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub meta: MetaState,
    pub parent: Option<usize>,
    pub mutation: Option<Mutation>,
}

/// Index of the node with the smallest cached distance-to-failure; ties go
/// to the earliest-inserted node.
pub fn greedy_node(tree: &[TreeNode]) -> usize {
    let mut best = 0;
    for (i, node) in tree.iter().enumerate().skip(1) {
        if node.meta.dtf < tree[best].meta.dtf {
            best = i;
        }
    }
    best
}

/// Draw a random replacement mutation: a uniformly chosen subset of the
/// obstacle collection (its size set by the width policy) is replaced by
/// fresh uniform samples or local perturbations per the depth policy.
pub fn random_meta_control(
    meta: &MetaState,
    width: WidthPolicy,
    depth: DepthPolicy,
    allow_full_width: bool,
    sc: &Scenario,
    rng: &mut ChaCha8Rng,
) -> Result<Mutation, EnvError> {
    let n = meta.env.obstacles.len();
    assert!(n > 0, "mutation requires a non-empty obstacle collection");
    let w = match width {
        WidthPolicy::Constant(k) => k.max(1).min(n),
        WidthPolicy::Random => {
            let hi = if allow_full_width { n } else { (n - 1).max(1) };
            rng.random_range(1..=hi)
        }
    };
    let picked = rand::seq::index::sample(rng, n, w);
    let subset: Vec<_> = picked.iter().map(|i| meta.env.obstacles[i]).collect();
    match depth {
        DepthPolicy::Perturb { sigma_x, sigma_y } => perturb_elements(
            &meta.env,
            &subset,
            PerturbNoise::positional(sigma_x, sigma_y),
            rng,
        ),
        DepthPolicy::Unlimited => {
            let spec = sc.sample_spec();
            let added = (0..w)
                .map(|_| crate::env::sample_element(&spec, rng))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Mutation::replace(subset, added))
        }
    }
}

enum Selected {
    Node { index: usize, exploration: bool },
    GoalSample(Box<MetaState>),
}

struct Search<'a> {
    cfg: &'a PlannerConfig,
    sim: Simulator,
    controller: &'a mut dyn Controller,
    rng: ChaCha8Rng,
    dist_rng: ChaCha8Rng,
    tree: Vec<TreeNode>,
    counters: EffortCounters,
    started: Instant,
}

impl Search<'_> {
    fn exhausted(&self) -> bool {
        self.cfg.budgets.exhausted(&self.counters, self.started)
    }

    fn select(&mut self) -> Result<Selected, MetaError> {
        let explore_draw = |rng: &mut ChaCha8Rng, bias: f64| rng.random::<f64>() >= bias;
        match self.cfg.selection {
            Selection::Random => Ok(Selected::Node {
                index: self.rng.random_range(0..self.tree.len()),
                exploration: true,
            }),
            Selection::Greedy => Ok(Selected::Node {
                index: greedy_node(&self.tree),
                exploration: false,
            }),
            Selection::RrtStandard => {
                if !explore_draw(&mut self.rng, self.cfg.goal_bias) {
                    return Ok(Selected::Node {
                        index: greedy_node(&self.tree),
                        exploration: false,
                    });
                }
                // Sample a full meta-state; its simulation cost books to the
                // sampling ledger, and a failing sample is itself a goal.
                let (sample, calls) =
                    sample_meta_state(&mut self.sim, self.controller, &mut self.rng)?;
                self.counters.calls_sampling += calls;
                self.counters.envs_tested += 1;
                if sample.failing() {
                    return Ok(Selected::GoalSample(Box::new(sample)));
                }
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, node) in self.tree.iter().enumerate() {
                    let d = meta_state_distance(
                        &node.meta,
                        &sample,
                        self.cfg.meta_distance_weight,
                        &mut self.dist_rng,
                    )?;
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                Ok(Selected::Node {
                    index: best,
                    exploration: true,
                })
            }
            Selection::RrtSimplified => {
                if !explore_draw(&mut self.rng, self.cfg.goal_bias) {
                    return Ok(Selected::Node {
                        index: greedy_node(&self.tree),
                        exploration: false,
                    });
                }
                // Bare environment sample: no simulation, no status check,
                // so nothing is booked and no goal can surface here.
                let spec = self.sim.scenario().sample_spec();
                let sample =
                    sample_env(&EnvironmentType::obstructed_track(), &spec, &mut self.rng)?;
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, node) in self.tree.iter().enumerate() {
                    let d = env_distance(&node.meta.env, &sample, &mut self.dist_rng)?;
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                Ok(Selected::Node {
                    index: best,
                    exploration: true,
                })
            }
        }
    }

    fn expand(&mut self, index: usize, exploration: bool) -> Result<Option<usize>, MetaError> {
        for _ in 0..self.cfg.expansion_breadth {
            if self.exhausted() {
                return Ok(None);
            }
            let allow_full = !self.cfg.restrict_full_width_to_exploration || exploration;
            let sc = self.sim.scenario().clone();
            let mutation = random_meta_control(
                &self.tree[index].meta,
                self.cfg.width,
                self.cfg.depth,
                allow_full,
                &sc,
                &mut self.rng,
            )?;
            let (child, calls) = meta_dynamics(
                &self.tree[index].meta,
                &mutation,
                &mut self.sim,
                self.controller,
                SimMode::Incremental,
                self.cfg.validation,
            )?;
            self.counters.calls_expansion += calls;
            self.counters.envs_tested += 1;
            let failing = child.failing();
            self.tree.push(TreeNode {
                meta: child,
                parent: Some(index),
                mutation: Some(mutation),
            });
            if failing {
                return Ok(Some(self.tree.len() - 1));
            }
        }
        Ok(None)
    }

    fn provenance(&self, goal: usize) -> Vec<Mutation> {
        let mut chain = Vec::new();
        let mut at = goal;
        while let Some(parent) = self.tree[at].parent {
            chain.push(
                self.tree[at]
                    .mutation
                    .clone()
                    .expect("non-root has an edge"),
            );
            at = parent;
        }
        chain.reverse();
        chain
    }
}

/// Tree-search falsification: seed a root meta-state, then alternate node
/// selection and expansion until a failing meta-state appears in either
/// phase, or the budgets run out.
pub fn falsify(
    scenario: &Scenario,
    cfg: &PlannerConfig,
    controller: &mut dyn Controller,
    seed: u64,
) -> Result<FalsificationResult, MetaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut dist_rng = ChaCha8Rng::seed_from_u64(seed);
    dist_rng.set_stream(1);

    let started = Instant::now();
    let mut search = Search {
        cfg,
        sim: Simulator::new(scenario.clone()),
        controller,
        rng,
        dist_rng,
        tree: Vec::new(),
        counters: EffortCounters::default(),
        started,
    };

    let (root, root_calls) =
        sample_meta_state(&mut search.sim, search.controller, &mut search.rng)?;
    search.counters.calls_expansion += root_calls;
    search.counters.envs_tested += 1;
    let root_failing = root.failing();
    search.tree.push(TreeNode {
        meta: root,
        parent: None,
        mutation: None,
    });

    let goal = if root_failing {
        Some(0)
    } else {
        let mut found = None;
        loop {
            if search.exhausted() {
                break;
            }
            match search.select()? {
                Selected::GoalSample(sample) => {
                    assert!(sample.failing(), "sampled goal must be failing");
                    search.counters.wall = started.elapsed();
                    finish_counters(&search);
                    return Ok(FalsificationResult {
                        outcome: Outcome::Found(sample),
                        counters: search.counters,
                        provenance: Vec::new(),
                    });
                }
                Selected::Node { index, exploration } => {
                    if let Some(goal) = search.expand(index, exploration)? {
                        found = Some(goal);
                        break;
                    }
                }
            }
        }
        found
    };

    search.counters.wall = started.elapsed();
    finish_counters(&search);
    match goal {
        Some(idx) => {
            assert!(search.tree[idx].meta.failing(), "goal must be failing");
            let provenance = search.provenance(idx);
            let meta = search.tree[idx].meta.clone();
            Ok(FalsificationResult {
                outcome: Outcome::Found(Box::new(meta)),
                counters: search.counters,
                provenance,
            })
        }
        None => Ok(FalsificationResult {
            outcome: Outcome::Exhausted,
            counters: search.counters,
            provenance: Vec::new(),
        }),
    }
}

fn finish_counters(search: &Search<'_>) {
    assert_eq!(
        search.counters.calls_total(),
        search.sim.controller_calls(),
        "effort split must add up to the simulator's own tally"
    );
}
