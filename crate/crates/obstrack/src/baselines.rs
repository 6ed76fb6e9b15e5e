//! Comparison algorithms sharing the environment-as-input testing model:
//! uninformed uniform sampling, and a small generational genetic search.
//! Neither exploits incremental simulation; every member costs a full run,
//! which is exactly the asymmetry the benchmark isolates.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{apply_mutation, perturb_elements, EnvError, Environment, PerturbNoise, Scene};
use crate::meta::{sample_meta_state, MetaError, MetaState};
use crate::planner::{Budgets, EffortCounters, FalsificationResult, Outcome};
use crate::sim::{Controller, Scenario, Simulator};

/// Members per generation of the genetic search.
pub const POPULATION_SIZE: usize = 4;

/// Repeatedly sample scenes and simulate them until one fails the task.
pub fn uniform_falsify(
    scenario: &Scenario,
    budgets: &Budgets,
    controller: &mut dyn Controller,
    seed: u64,
) -> Result<FalsificationResult, MetaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let started = Instant::now();
    let mut sim = Simulator::new(scenario.clone());
    let mut counters = EffortCounters::default();

    let outcome = loop {
        if budgets_exhausted(budgets, &counters, started) {
            break Outcome::Exhausted;
        }
        let (meta, calls) = sample_meta_state(&mut sim, controller, &mut rng)?;
        counters.calls_sampling += calls;
        counters.envs_tested += 1;
        if meta.failing() {
            break Outcome::Found(Box::new(meta));
        }
    };
    counters.wall = started.elapsed();
    assert_eq!(counters.calls_total(), sim.controller_calls());
    Ok(FalsificationResult {
        outcome,
        counters,
        provenance: Vec::new(),
    })
}

/// Merge two environments' obstacle sets: the child draws its elements
/// uniformly without replacement from the combined multiset, keeping the
/// parents' common count.
pub fn crossover(
    e1: &Environment,
    e2: &Environment,
    rng: &mut ChaCha8Rng,
) -> Result<Environment, EnvError> {
    if !e1.same_parameters(e2) || e1.obstacles.len() != e2.obstacles.len() {
        return Err(EnvError::IncompatibleEnvironments);
    }
    let n = e1.obstacles.len();
    let mut pool: Vec<_> = e1
        .obstacles
        .iter()
        .chain(e2.obstacles.iter())
        .copied()
        .collect();
    let mut child = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..pool.len());
        let picked = pool.swap_remove(i);
        // Each draw consumes the element's exact twin as well, so merging
        // an environment with itself returns it unchanged.
        if let Some(j) = pool.iter().position(|d| *d == picked) {
            pool.swap_remove(j);
        }
        child.push(picked);
    }
    Ok(Environment::new(e1.track, child).with_type(e1.ty.clone()))
}

/// Roulette draw over weights; uniform fallback when all weights vanish.
fn roulette(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 1e-12 {
        return rng.random_range(0..weights.len());
    }
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

struct Member {
    meta: MetaState,
}

impl Member {
    /// Lower distance-to-failure means fitter.
    fn fitness(&self) -> f64 {
        self.meta.dtf
    }
}

/// Fixed-size generational genetic search. Each generation replaces the
/// population entirely: two children by crossover of fitness-weighted parent
/// pairs, two by perturbation of fitness-weighted parents, all simulated in
/// full. Returns the first failing member.
pub fn genetic_falsify(
    scenario: &Scenario,
    budgets: &Budgets,
    noise: PerturbNoise,
    controller: &mut dyn Controller,
    seed: u64,
) -> Result<FalsificationResult, MetaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let started = Instant::now();
    let mut sim = Simulator::new(scenario.clone());
    let mut counters = EffortCounters::default();

    let simulate_env = |env: Environment,
                        sim: &mut Simulator,
                        controller: &mut dyn Controller,
                        counters: &mut EffortCounters|
     -> Result<MetaState, MetaError> {
        let scene = Scene {
            initial_state: sim.scenario().initial_state(),
            env,
        };
        let out = sim.simulate(&scene, controller, sim.scenario().horizon)?;
        counters.calls_sampling += (out.traj.len() - 1) as u64;
        counters.envs_tested += 1;
        Ok(MetaState::from_parts(scene.env, out.traj, out.history, sim))
    };

    let finish = |outcome: Outcome, mut counters: EffortCounters, sim: &Simulator| {
        counters.wall = started.elapsed();
        assert_eq!(counters.calls_total(), sim.controller_calls());
        Ok(FalsificationResult {
            outcome,
            counters,
            provenance: Vec::new(),
        })
    };

    // Initial population.
    let mut population: Vec<Member> = Vec::with_capacity(POPULATION_SIZE);
    for _ in 0..POPULATION_SIZE {
        if budgets_exhausted(budgets, &counters, started) {
            return finish(Outcome::Exhausted, counters, &sim);
        }
        let (meta, calls) = sample_meta_state(&mut sim, controller, &mut rng)?;
        counters.calls_sampling += calls;
        counters.envs_tested += 1;
        if meta.failing() {
            return finish(Outcome::Found(Box::new(meta)), counters, &sim);
        }
        population.push(Member { meta });
    }

    loop {
        let weights: Vec<f64> = population.iter().map(|m| 1.0 - m.fitness()).collect();
        let mut next = Vec::with_capacity(POPULATION_SIZE);

        // Two crossover children from fitness-weighted parent pairs drawn
        // without replacement within each pair.
        for _ in 0..2 {
            if budgets_exhausted(budgets, &counters, started) {
                return finish(Outcome::Exhausted, counters, &sim);
            }
            let a = roulette(&weights, &mut rng);
            let mut rest = weights.clone();
            rest[a] = 0.0;
            let b = roulette(&rest, &mut rng);
            let child_env = crossover(&population[a].meta.env, &population[b].meta.env, &mut rng)?;
            let meta = simulate_env(child_env, &mut sim, controller, &mut counters)?;
            if meta.failing() {
                return finish(Outcome::Found(Box::new(meta)), counters, &sim);
            }
            next.push(Member { meta });
        }

        // Two mutation children: perturb a random-width subset of a
        // fitness-weighted parent, as the tree searches do for meta-controls.
        for _ in 0..2 {
            if budgets_exhausted(budgets, &counters, started) {
                return finish(Outcome::Exhausted, counters, &sim);
            }
            let p = roulette(&weights, &mut rng);
            let parent_env = &population[p].meta.env;
            let n = parent_env.obstacles.len();
            let child_env = if n == 0 {
                parent_env.clone()
            } else {
                let w = rng.random_range(1..=n);
                let picked = rand::seq::index::sample(&mut rng, n, w);
                let subset: Vec<_> = picked.iter().map(|i| parent_env.obstacles[i]).collect();
                let m = perturb_elements(parent_env, &subset, noise, &mut rng)?;
                apply_mutation(parent_env, &m)?
            };
            let meta = simulate_env(child_env, &mut sim, controller, &mut counters)?;
            if meta.failing() {
                return finish(Outcome::Found(Box::new(meta)), counters, &sim);
            }
            next.push(Member { meta });
        }

        // Total replacement: no elitism, only the new generation survives.
        population = next;
    }
}

fn budgets_exhausted(budgets: &Budgets, counters: &EffortCounters, started: Instant) -> bool {
    budgets.max_envs.is_some_and(|m| counters.envs_tested >= m)
        || budgets
            .max_controller_calls
            .is_some_and(|m| counters.calls_total() >= m)
        || budgets
            .max_wall_ms
            .is_some_and(|m| started.elapsed().as_millis() as u64 >= m)
}
