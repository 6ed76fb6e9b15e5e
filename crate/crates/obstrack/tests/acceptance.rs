//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them). Criterion 5 is a
//! soft trend check and reports WARN instead of failing.

use std::time::Instant;

use rand::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use obstrack::baselines::uniform_falsify;
use obstrack::env::{
    apply_mutation, env_distance, perturb_elements, sample_env, EnvironmentType, Mutation,
    PerturbNoise,
};
use obstrack::geometry::Disc;
use obstrack::harness::{run_benchmark, ExperimentConfig};
use obstrack::meta::{
    compromise_timestamp_fast, compromise_timestamp_generic, meta_dynamics, meta_state_distance,
    sample_meta_state, traj_distance, MetaState, SimMode, ValidationMode,
};
use obstrack::planner::{falsify, Budgets, Outcome, PlannerConfig, Selection};
use obstrack::sim::{ReferenceController, Scenario, Simulator};

fn scenario() -> Scenario {
    Scenario::default()
}

fn sample_meta(sim: &mut Simulator, seed: u64) -> MetaState {
    let mut ctrl = ReferenceController::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_meta_state(sim, &mut ctrl, &mut rng).unwrap().0
}

/// Mutation mix mirroring what the searches draw, plus additions and
/// removals so every operator is exercised.
fn random_mutation(
    env: &obstrack::env::Environment,
    sc: &Scenario,
    rng: &mut ChaCha8Rng,
) -> Mutation {
    let n = env.obstacles.len();
    let spec = sc.sample_spec();
    let fresh = |rng: &mut ChaCha8Rng| obstrack::env::sample_element(&spec, rng).unwrap();
    let kind = rng.random_range(0..10);
    if kind == 0 || n == 0 {
        return Mutation::add(vec![fresh(rng)]);
    }
    if kind == 1 {
        return Mutation::subtract(vec![env.obstacles[rng.random_range(0..n)]]);
    }
    let width = rng.random_range(1..=n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let subset: Vec<Disc> = idx.iter().take(width).map(|&i| env.obstacles[i]).collect();
    if kind < 6 {
        perturb_elements(env, &subset, PerturbNoise::positional(2.0, 2.0), rng).unwrap()
    } else {
        let added = (0..width).map(|_| fresh(rng)).collect();
        Mutation::replace(subset, added)
    }
}

fn pair_cases(count: usize) -> Vec<(MetaState, Mutation)> {
    let sc = scenario();
    let mut sim = Simulator::new(sc.clone());
    let mut mrng = ChaCha8Rng::seed_from_u64(0xACCE97);
    (0..count)
        .map(|i| {
            let s = sample_meta(&mut sim, 50_000 + i as u64);
            let m = random_mutation(&s.env, &sc, &mut mrng);
            (s, m)
        })
        .collect()
}

#[test]
fn criterion_1_incremental_equals_full_resimulation() {
    let started = Instant::now();
    let mut sim = Simulator::new(scenario());
    let mut ctrl = ReferenceController::default();
    for (i, (s, m)) in pair_cases(100).iter().enumerate() {
        let (inc, _) = meta_dynamics(
            s,
            m,
            &mut sim,
            &mut ctrl,
            SimMode::Incremental,
            ValidationMode::Generic,
        )
        .unwrap();
        let (full, _) = meta_dynamics(
            s,
            m,
            &mut sim,
            &mut ctrl,
            SimMode::Full,
            ValidationMode::Generic,
        )
        .unwrap();
        assert_eq!(inc, full, "pair {i}: incremental != full for {m:?}");
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 120.0, "took {secs:.1}s, budget 120s");
    println!("criterion 1 PASS: incremental == full on 100 pairs in {secs:.1}s");
}

#[test]
fn criterion_2_fast_prefix_soundness() {
    let mut sim = Simulator::new(scenario());
    let mut ctrl = ReferenceController::default();
    let sc = scenario();
    for (i, (s, m)) in pair_cases(100).iter().enumerate() {
        let env2 = apply_mutation(&s.env, m).unwrap();
        let fast = compromise_timestamp_fast(s, m, &sc);
        let generic = compromise_timestamp_generic(s, &env2, &sc);
        assert!(fast <= generic, "pair {i}: fast {fast} > generic {generic}");

        let (inc, _) = meta_dynamics(
            s,
            m,
            &mut sim,
            &mut ctrl,
            SimMode::Incremental,
            ValidationMode::FastSector,
        )
        .unwrap();
        let (full, _) = meta_dynamics(
            s,
            m,
            &mut sim,
            &mut ctrl,
            SimMode::Full,
            ValidationMode::FastSector,
        )
        .unwrap();
        assert_eq!(inc, full, "pair {i}: fast-prefix incremental != full");
    }
    println!("criterion 2 PASS: fast timestamp sound on 100 pairs, fast-prefix runs match full");
}

#[test]
fn criterion_3_incremental_effort_savings() {
    let sc = scenario();
    // Mean controller calls per independently sampled environment.
    let mut sim = Simulator::new(sc.clone());
    let mut ctrl = ReferenceController::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xBA5E);
    let mut full_calls = 0u64;
    let n_ref = 300;
    for _ in 0..n_ref {
        let (_, calls) = sample_meta_state(&mut sim, &mut ctrl, &mut rng).unwrap();
        full_calls += calls;
    }
    let mean_full = full_calls as f64 / n_ref as f64;

    // Random tree with perturbation mutations over 20 seeds.
    let cfg = PlannerConfig {
        selection: Selection::Random,
        budgets: Budgets::with_max_envs(500),
        ..PlannerConfig::default()
    };
    let mut calls = 0u64;
    let mut envs = 0u64;
    for seed in 0..20 {
        let mut c = ReferenceController::default();
        let r = falsify(&sc, &cfg, &mut c, seed).unwrap();
        calls += r.counters.calls_total();
        envs += r.counters.envs_tested;
    }
    let per_env = calls as f64 / envs as f64;
    let bound = 0.8 * mean_full;
    assert!(
        per_env <= bound,
        "mean calls/env {per_env:.2} exceeds 0.8 x {mean_full:.2}"
    );
    println!(
        "criterion 3 PASS: {per_env:.1} calls/env vs full {mean_full:.1} (ratio {:.2} <= 0.80)",
        per_env / mean_full
    );
}

#[test]
fn criterion_4_uniform_falsifiability_calibration() {
    let sc = scenario();
    let budgets = Budgets::with_max_envs(500);
    let mut found = 0;
    for seed in 0..20 {
        let mut ctrl = ReferenceController::default();
        let r = uniform_falsify(&sc, &budgets, &mut ctrl, seed).unwrap();
        if matches!(r.outcome, Outcome::Found(_)) {
            found += 1;
        }
    }
    assert!(found >= 18, "uniform found on {found}/20 seeds, need >= 18");
    println!("criterion 4 PASS: uniform sampling falsified {found}/20 seeds within 500 envs");
}

#[test]
fn criterion_5_directional_ordering_soft() {
    let config: ExperimentConfig = serde_json::from_str(
        r#"{"run": {"seed_count": 20, "max_envs": 500,
             "algos": ["uniform", "random-tree-perturb", "greedy", "rrt-simplified"]}}"#,
    )
    .unwrap();
    let out = run_benchmark(&config).unwrap();
    let median = |algo: &str| -> f64 {
        out.summaries
            .iter()
            .find(|s| s.algo == algo)
            .expect("algo present")
            .calls
            .median
    };
    let uniform = median("uniform");
    let rtp = median("random-tree-perturb");
    let greedy = median("greedy");
    let rrt_s = median("rrt-simplified");

    let mut warns = Vec::new();
    let mut check = |label: &str, a: f64, b: f64| {
        // a should not exceed b by more than 10% of the larger median.
        if a > b + 0.10 * a.max(b) {
            warns.push(format!("{label}: {a:.1} > {b:.1}"));
        }
    };
    check("greedy <= random-tree-perturb", greedy, rtp);
    check("random-tree-perturb <= uniform", rtp, uniform);
    check("rrt-simplified <= greedy", rrt_s, greedy);

    println!(
        "criterion 5 medians: uniform={uniform:.1} random-tree-perturb={rtp:.1} greedy={greedy:.1} rrt-simplified={rrt_s:.1}"
    );
    if warns.is_empty() {
        println!("criterion 5 PASS: directional ordering holds");
    } else {
        for w in &warns {
            println!("criterion 5 WARN (soft, not a failure): {w}");
        }
    }
}

#[test]
fn criterion_6_mutation_algebra() {
    let sc = scenario();
    let ty = EnvironmentType::obstructed_track();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA16EB4);
    for case in 0..10_000 {
        let spec = sc.sample_spec();
        let env = sample_env(&ty, &spec, &mut rng).unwrap();
        let n = env.obstacles.len();
        let width = rng.random_range(1..=n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let removed: Vec<Disc> = idx.iter().take(width).map(|&i| env.obstacles[i]).collect();
        let added: Vec<Disc> = (0..width)
            .map(|_| obstrack::env::sample_element(&spec, &mut rng).unwrap())
            .collect();

        let snapshot = env.clone();
        let via_replace =
            apply_mutation(&env, &Mutation::replace(removed.clone(), added.clone())).unwrap();
        let via_steps = apply_mutation(
            &apply_mutation(&env, &Mutation::subtract(removed.clone())).unwrap(),
            &Mutation::add(added.clone()),
        )
        .unwrap();
        assert_eq!(via_replace, via_steps, "case {case}");
        assert_eq!(env, snapshot, "case {case}: input mutated");
        // Purity: re-application gives the identical result.
        let again = apply_mutation(&env, &Mutation::replace(removed, added)).unwrap();
        assert_eq!(via_replace, again, "case {case}: impure");
    }
    println!("criterion 6 PASS: replacement algebra and purity over 10^4 cases");
}

#[test]
fn criterion_7_distance_axioms() {
    let sc = scenario();
    let ty = EnvironmentType::obstructed_track();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD157);

    // Symmetry and self-distance over 10^3 environment pairs.
    for case in 0..1000u64 {
        let spec = sc.sample_spec();
        let a = sample_env(&ty, &spec, &mut rng).unwrap();
        let b = sample_env(&ty, &spec, &mut rng).unwrap();
        let ab = env_distance(&a, &b, &mut ChaCha8Rng::seed_from_u64(case)).unwrap();
        let ba = env_distance(&b, &a, &mut ChaCha8Rng::seed_from_u64(case)).unwrap();
        assert_eq!(ab, ba, "case {case}: asymmetric");
        let aa = env_distance(&a, &a, &mut ChaCha8Rng::seed_from_u64(case)).unwrap();
        assert_eq!(aa, 0.0, "case {case}: self-distance");
    }

    // Composite-distance endpoints and the trajectory-distance oracle.
    let mut sim = Simulator::new(sc.clone());
    for seed in 0..6u64 {
        let s1 = sample_meta(&mut sim, 80_000 + seed);
        let s2 = sample_meta(&mut sim, 90_000 + seed);
        let e = env_distance(&s1.env, &s2.env, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let w1 = meta_state_distance(&s1, &s2, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(w1, e, "w=1 endpoint");
        let t = traj_distance(&s1.traj, &s2.traj);
        let w0 = meta_state_distance(&s1, &s2, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(w0, t, "w=0 endpoint");

        // Fine-grid Riemann oracle within 1%.
        let span = |t: &[obstrack::sim::SystemState]| {
            t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, s| {
                (acc.0.min(s.x), acc.1.max(s.x))
            })
        };
        let (lo1, hi1) = span(&s1.traj);
        let (lo2, hi2) = span(&s2.traj);
        let lo = lo1.max(lo2);
        let hi = hi1.min(hi2);
        if lo >= hi {
            assert_eq!(t, 0.0);
            continue;
        }
        let n = 10_000;
        let dx = (hi - lo) / n as f64;
        let y_at = |traj: &[obstrack::sim::SystemState], x: f64| -> f64 {
            let mut y = traj[0].y;
            for w in traj.windows(2) {
                let (x0, x1) = (w[0].x, w[1].x);
                if (x >= x0 && x <= x1) || (x >= x1 && x <= x0) {
                    let f = if x1 == x0 { 1.0 } else { (x - x0) / (x1 - x0) };
                    y = w[0].y + f * (w[1].y - w[0].y);
                }
            }
            y
        };
        let mut oracle = 0.0;
        for j in 0..n {
            let x = lo + (j as f64 + 0.5) * dx;
            oracle += (y_at(&s1.traj, x) - y_at(&s2.traj, x)).abs() * dx;
        }
        let rel = (t - oracle).abs() / oracle.max(1e-12);
        assert!(rel < 0.01, "seed {seed}: traj distance off by {rel:.4}");
    }
    println!("criterion 7 PASS: distance symmetry, self-zero, endpoints, 1% trajectory oracle");
}

#[test]
fn criterion_8_benchmark_determinism() {
    let config: ExperimentConfig = serde_json::from_str(
        r#"{"run": {"seed_count": 3, "max_envs": 60,
             "algos": ["uniform", "genetic", "random-tree", "greedy", "rrt"]}}"#,
    )
    .unwrap();
    let a = run_benchmark(&config).unwrap();
    let b = run_benchmark(&config).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (ra, rb) in a.records.iter().zip(b.records.iter()) {
        let strip = |r: &obstrack::harness::RunRecord| {
            let mut r = r.clone();
            r.wall_ms = 0;
            r
        };
        assert_eq!(
            strip(ra),
            strip(rb),
            "record differs for {}/{}",
            ra.algo,
            ra.seed
        );
        assert_eq!(
            ra.goal_env_doc, rb.goal_env_doc,
            "goal document differs for {}/{}",
            ra.algo, ra.seed
        );
    }
    println!(
        "criterion 8 PASS: {} run records byte-identical across reruns (wall time excluded)",
        a.records.len()
    );
}

#[test]
fn criterion_9_wire_protocol_loopback() {
    use obstrack::env::Scene;
    use obstrack::sim::ExternalController;

    let sc = scenario();
    let ty = EnvironmentType::obstructed_track();
    let mut rng = ChaCha8Rng::seed_from_u64(0x10B);
    let env = sample_env(&ty, &sc.sample_spec(), &mut rng).unwrap();
    let scene = Scene::new(env, sc.initial_state()).unwrap();

    let mut sim_a = Simulator::new(sc.clone());
    let mut in_process = ReferenceController::default();
    let native = sim_a.simulate(&scene, &mut in_process, sc.horizon).unwrap();

    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_obstrack"));
    cmd.arg("stdio-controller");
    let mut external = ExternalController::spawn(&mut cmd).unwrap();
    let mut sim_b = Simulator::new(sc.clone());
    let looped = sim_b.simulate(&scene, &mut external, sc.horizon).unwrap();

    assert_eq!(native.traj, looped.traj);
    assert_eq!(native.history, looped.history);
    assert_eq!(native.status, looped.status);
    println!(
        "criterion 9 PASS: loopback protocol trajectory identical over {} steps",
        native.traj.len() - 1
    );
}
