//! Benchmark execution: one run per (algorithm, seed), a worker pool across
//! runs, per-run records, and summary statistics per algorithm.

use std::io::Write;
use std::sync::mpsc;

use crate::baselines::{genetic_falsify, uniform_falsify};
use crate::planner::{falsify, FalsificationResult, Outcome};
use crate::sim::{ReferenceController, Scenario};

use super::config::{AlgoId, ExperimentConfig};
use super::HarnessError;

/// Flat record of one falsification run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algo: String,
    pub seed: u64,
    pub success: bool,
    pub envs_tested: u64,
    pub calls_expansion: u64,
    pub calls_sampling: u64,
    pub calls_total: u64,
    pub wall_ms: u64,
    pub goal_env_doc: Option<String>,
}

pub const CSV_HEADER: &str =
    "algo,seed,success,envs_tested,calls_expansion,calls_sampling,calls_total,wall_ms";

impl RunRecord {
    fn from_result(algo: AlgoId, seed: u64, result: &FalsificationResult) -> Self {
        let c = &result.counters;
        RunRecord {
            algo: algo.name().to_string(),
            seed,
            success: matches!(result.outcome, Outcome::Found(_)),
            envs_tested: c.envs_tested,
            calls_expansion: c.calls_expansion,
            calls_sampling: c.calls_sampling,
            calls_total: c.calls_total(),
            wall_ms: c.wall.as_millis() as u64,
            goal_env_doc: result.found().map(|m| m.env.to_doc_string()),
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.algo,
            self.seed,
            u8::from(self.success),
            self.envs_tested,
            self.calls_expansion,
            self.calls_sampling,
            self.calls_total,
            self.wall_ms
        )
    }
}

/// Execute one run of `algo` with `seed` under the experiment config.
pub fn run_one(
    config: &ExperimentConfig,
    scenario: &Scenario,
    algo: AlgoId,
    seed: u64,
) -> Result<RunRecord, HarnessError> {
    let budgets = config.run.budgets();
    let mut controller = ReferenceController::default();
    let result = match algo {
        AlgoId::Uniform => uniform_falsify(scenario, &budgets, &mut controller, seed)?,
        AlgoId::Genetic => genetic_falsify(
            scenario,
            &budgets,
            config.algorithm.perturb_noise(),
            &mut controller,
            seed,
        )?,
        _ => {
            let planner_cfg = config.algorithm.planner_config(algo, budgets)?;
            falsify(scenario, &planner_cfg, &mut controller, seed)?
        }
    };
    Ok(RunRecord::from_result(algo, seed, &result))
}

/// Five-number summary plus mean over one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl MetricSummary {
    pub fn of(values: &[u64]) -> Self {
        assert!(!values.is_empty());
        let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        v.sort_by(f64::total_cmp);
        let quantile = |q: f64| -> f64 {
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        MetricSummary {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            q1: quantile(0.25),
            median: quantile(0.5),
            q3: quantile(0.75),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlgoSummary {
    pub algo: String,
    pub runs: usize,
    pub found: usize,
    pub envs: MetricSummary,
    pub calls: MetricSummary,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<AlgoSummary>,
}

impl BenchOutput {
    pub fn runs_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "algo,runs,found,envs_mean,envs_min,envs_q1,envs_median,envs_q3,envs_max,\
             calls_mean,calls_min,calls_q1,calls_median,calls_q3,calls_max\n",
        );
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                s.algo,
                s.runs,
                s.found,
                s.envs.mean,
                s.envs.min,
                s.envs.q1,
                s.envs.median,
                s.envs.q3,
                s.envs.max,
                s.calls.mean,
                s.calls.min,
                s.calls.q1,
                s.calls.median,
                s.calls.q3,
                s.calls.max,
            ));
        }
        out
    }

    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>5} {:>6} {:>10} {:>12} {:>11} {:>13}\n",
            "algo", "runs", "found", "envs mean", "envs median", "calls mean", "calls median"
        );
        for s in &self.summaries {
            out.push_str(&format!(
                "{:<20} {:>5} {:>6} {:>10.2} {:>12.1} {:>11.1} {:>13.1}\n",
                s.algo, s.runs, s.found, s.envs.mean, s.envs.median, s.calls.mean, s.calls.median
            ));
        }
        out
    }
}

/// Run every configured (algorithm, seed) pair on a small worker pool and
/// aggregate. Records come back in (algorithm, seed) order regardless of
/// completion order, so outputs are reproducible.
pub fn run_benchmark(config: &ExperimentConfig) -> Result<BenchOutput, HarnessError> {
    config.validate()?;
    let scenario = config.scenario.to_scenario()?;
    let seeds = config.run.seed_list()?;
    let algos: Vec<AlgoId> = config
        .run
        .algos
        .clone()
        .unwrap_or_else(|| AlgoId::ALL.to_vec());
    if algos.is_empty() {
        return Err(HarnessError::Config("no algorithms configured".into()));
    }

    let jobs: Vec<(usize, AlgoId, u64)> = algos
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .enumerate()
        .map(|(i, (a, s))| (i, a, s))
        .collect();

    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len().max(1));

    let mut slots: Vec<Option<RunRecord>> = vec![None; jobs.len()];
    let (tx, rx) = mpsc::channel::<(usize, Result<RunRecord, HarnessError>)>();
    let next = std::sync::atomic::AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let jobs = &jobs;
            let next = &next;
            let scenario = &scenario;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let (idx, algo, seed) = jobs[i];
                let r = run_one(config, scenario, algo, seed);
                if tx.send((idx, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (idx, r) in rx {
            slots[idx] = Some(r?);
        }
        Ok::<(), HarnessError>(())
    })?;

    let records: Vec<RunRecord> = slots
        .into_iter()
        .map(|s| s.expect("all jobs ran"))
        .collect();

    let summaries = algos
        .iter()
        .map(|&a| {
            let rs: Vec<&RunRecord> = records.iter().filter(|r| r.algo == a.name()).collect();
            AlgoSummary {
                algo: a.name().to_string(),
                runs: rs.len(),
                found: rs.iter().filter(|r| r.success).count(),
                envs: MetricSummary::of(&rs.iter().map(|r| r.envs_tested).collect::<Vec<_>>()),
                calls: MetricSummary::of(&rs.iter().map(|r| r.calls_total).collect::<Vec<_>>()),
            }
        })
        .collect();

    Ok(BenchOutput { records, summaries })
}

/// Persist a benchmark: `runs.csv`, `summary.csv`, and one environment
/// document per found goal under `goals/`.
pub fn write_outputs(out: &BenchOutput, dir: &std::path::Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("runs.csv"), out.runs_csv())?;
    std::fs::write(dir.join("summary.csv"), out.summary_csv())?;
    let goals = dir.join("goals");
    std::fs::create_dir_all(&goals)?;
    for r in &out.records {
        if let Some(doc) = &r.goal_env_doc {
            let mut f =
                std::fs::File::create(goals.join(format!("{}-{}.env.json", r.algo, r.seed)))?;
            f.write_all(doc.as_bytes())?;
        }
    }
    Ok(())
}
