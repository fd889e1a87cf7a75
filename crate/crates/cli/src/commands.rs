use std::path::Path;

use serde::Serialize;
use tethernet_core::bayes_opt::{episode_runner, optimize as run_bo, EvalRecord};
use tethernet_core::policy_learn::{
    evaluate as eval_policy, evaluate_with, mean_action, train_observed, Checkpoint, EvalReport, MdpSpec, ScenarioEnv,
    ACTION_DIM,
};
use tethernet_core::simulator::{run_episode_with, Recording, ThrustActions};
use tethernet_core::{ResultRecord, ScenarioFile, SCHEMA_VERSION};

use crate::output::{csv_bytes, ensure_dir, json_bytes, write_atomic, CliError, CliResult};
use crate::WORKERS_ENV;

pub fn configure_workers(flag: Option<usize>) -> CliResult<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Validation(format!("{WORKERS_ENV}={v} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Validation("worker count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    Ok(())
}

fn load(path: &Path) -> CliResult<ScenarioFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let file = ScenarioFile::parse(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    file.validate().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(file)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Serialize)]
struct TrajRow {
    t: f64,
    node_id: usize,
    x: f64,
    y: f64,
    z: f64,
    phase: &'static str,
    cqi: Option<f64>,
}

pub fn simulate(config: &Path, seed: Option<u64>, traj: Option<&Path>, json: Option<&Path>) -> CliResult<()> {
    let mut file = load(config)?;
    if let Some(s) = seed {
        file.scenario.seed = s;
    }
    let hash = file.scenario_hash();
    let recording = if traj.is_some() { Recording::Nodes } else { Recording::None };
    let result = run_episode_with(&file.scenario, recording)?;
    let record = ResultRecord::new(&hash, file.scenario.seed, &result);

    if let Some(path) = traj {
        let rows: Vec<TrajRow> = result
            .trajectory
            .iter()
            .flat_map(|s| {
                s.nodes.iter().enumerate().map(move |(i, p)| TrajRow {
                    t: s.time,
                    node_id: i,
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    phase: s.phase.name(),
                    cqi: finite(s.cqi),
                })
            })
            .collect();
        write_atomic(path, &csv_bytes(SCHEMA_VERSION, None, &rows)?)?;
    }
    let bytes = json_bytes(&record)?;
    match json {
        Some(path) => write_atomic(path, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    if result.diverged {
        return Err(CliError::Diverged(format!("episode diverged at t = {:.2} s", result.sim_time)));
    }
    Ok(())
}

#[derive(Serialize)]
struct BestPoint {
    iteration: usize,
    x: Vec<f64>,
    fuel_kg: Option<f64>,
    cqi: Option<f64>,
    locked_pairs: u32,
    final_mass_kg: Option<f64>,
    diverged: bool,
    feasible: bool,
    penalized: f64,
}

impl From<&EvalRecord> for BestPoint {
    fn from(r: &EvalRecord) -> Self {
        Self {
            iteration: r.iteration,
            x: r.x.clone(),
            fuel_kg: finite(r.fuel),
            cqi: finite(r.cqi),
            locked_pairs: r.locked_pairs,
            final_mass_kg: finite(r.final_mass),
            diverged: r.diverged,
            feasible: r.feasible,
            penalized: r.penalized,
        }
    }
}

#[derive(Serialize)]
struct BestReport {
    schema: &'static str,
    scenario_hash: String,
    case: u8,
    seed: u64,
    budget: usize,
    initial_samples: usize,
    target_z_m: f64,
    feasible_found: bool,
    variables: Vec<&'static str>,
    best: BestPoint,
    actions: ThrustActions,
}

pub fn optimize(config: &Path, case: Option<u8>, budget: Option<usize>, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let mut file = load(config)?;
    if let Some(b) = budget {
        file.bo.budget = b;
    }
    let case = case.unwrap_or(file.bo.case);
    let seed = seed.unwrap_or(file.bo.seed);
    let spec = file.bo.case_spec(case, &file.scenario)?;
    let run = run_bo(&spec, episode_runner(&file.scenario), seed)?;

    let variables: Vec<&'static str> = spec.variables().iter().map(|v| v.name()).collect();
    let mut header = vec!["iteration"];
    header.extend(&variables);
    header.extend(["fuel_kg", "cqi", "locked_pairs", "final_mass_kg", "diverged", "feasible", "penalized"]);
    let rows: Vec<Vec<String>> = run
        .history
        .iter()
        .map(|r| {
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.x.iter().map(|v| v.to_string()));
            row.extend([
                r.fuel.to_string(),
                r.cqi.to_string(),
                r.locked_pairs.to_string(),
                r.final_mass.to_string(),
                r.diverged.to_string(),
                r.feasible.to_string(),
                r.penalized.to_string(),
            ]);
            row
        })
        .collect();

    let report = BestReport {
        schema: SCHEMA_VERSION,
        scenario_hash: file.scenario_hash(),
        case,
        seed,
        budget: spec.budget,
        initial_samples: spec.initial_samples,
        target_z_m: file.scenario.target_z(),
        feasible_found: run.feasible_found,
        variables,
        best: BestPoint::from(&run.best),
        actions: spec.actions(&run.best.x),
    };
    ensure_dir(out)?;
    write_atomic(&out.join("history.csv"), &csv_bytes(SCHEMA_VERSION, Some(&header), &rows)?)?;
    write_atomic(&out.join("best.json"), &json_bytes(&report)?)?;
    if !run.feasible_found {
        return Err(CliError::NoFeasible(format!(
            "no feasible point in {} evaluations; best penalized point written",
            run.history.len()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ProbeAction {
    z: f64,
    action: [f64; ACTION_DIM],
}

#[derive(Serialize)]
struct TrainSummary {
    schema: &'static str,
    scenario_hash: String,
    seed: u64,
    episodes: usize,
    best_episodes: usize,
    best_avg_reward: f64,
    final_avg_reward: f64,
    /// Mean actions of the final policy across the state range.
    final_actions: Vec<ProbeAction>,
}

pub fn train(config: &Path, episodes: Option<usize>, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let mut file = load(config)?;
    if let Some(n) = episodes {
        file.rl.total_episodes = n;
    }
    if let Some(s) = seed {
        file.rl.seed = s;
    }
    file.rl.validate()?;
    let mdp = MdpSpec::for_scenario(&file.scenario);
    let env = ScenarioEnv::new(file.scenario.clone());
    let report = train_observed(&env, &mdp, &file.rl, |row, _| {
        eprintln!(
            "batch {:4}  episodes {:6}  reward {:8.3}  avg{} {:8.3}  success {:.2}",
            row.batch, row.episodes, row.mean_reward, file.rl.long_window, row.avg_long, row.success_rate
        );
    })?;

    let probes = (0..5)
        .map(|i| {
            let z = mdp.z_min + (mdp.z_max - mdp.z_min) * i as f64 / 4.0;
            ProbeAction {
                z,
                action: mean_action(&report.last.net, &mdp.bounds, mdp.normalize(z)),
            }
        })
        .collect();
    let summary = TrainSummary {
        schema: SCHEMA_VERSION,
        scenario_hash: file.scenario_hash(),
        seed: file.rl.seed,
        episodes: report.last.episodes,
        best_episodes: report.best.episodes,
        best_avg_reward: report.best.avg_reward,
        final_avg_reward: report.last.avg_reward,
        final_actions: probes,
    };
    ensure_dir(out)?;
    write_atomic(&out.join("reward_curve.csv"), &csv_bytes(SCHEMA_VERSION, None, &report.curve)?)?;
    write_atomic(&out.join("best.json"), report.best.to_json()?.as_bytes())?;
    write_atomic(&out.join("last.json"), report.last.to_json()?.as_bytes())?;
    write_atomic(&out.join("summary.json"), &json_bytes(&summary)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SampleRow {
    z: f64,
    action: [f64; ACTION_DIM],
    cqi: Option<f64>,
    locked_pairs: u32,
    final_mass_kg: f64,
    fuel_kg: f64,
    reward: f64,
    success: bool,
    diverged: bool,
}

#[derive(Serialize)]
struct EvalOutput {
    schema: &'static str,
    scenario_hash: String,
    policy: &'static str,
    seed: u64,
    samples: usize,
    /// `null` when no samples were drawn.
    success_rate: Option<f64>,
    mean_reward: Option<f64>,
    median_success_z: Option<f64>,
    records: Vec<SampleRow>,
}

pub fn evaluate(config: &Path, checkpoint: Option<&Path>, samples: usize, seed: u64, out: Option<&Path>) -> CliResult<()> {
    let file = load(config)?;
    let env = ScenarioEnv::new(file.scenario.clone());
    let (m0, rate) = (file.rl.initial_mass, file.rl.burn_rate);
    let (policy, report): (&'static str, EvalReport) = match checkpoint {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingCheckpoint(format!("{}: {e}", path.display())))?;
            let ckpt = Checkpoint::from_json(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
            ("checkpoint", eval_policy(&env, &ckpt, samples, seed, m0, rate))
        }
        None => {
            let a = &file.scenario.actions;
            let angles = [a.psi_deg[0], a.psi_deg[1], a.psi_deg[2], a.psi_deg[3], a.theta_deg];
            let mdp = MdpSpec::for_scenario(&file.scenario);
            ("fixed", evaluate_with(&env, &mdp, |_| angles, samples, seed, m0, rate))
        }
    };
    let output = EvalOutput {
        schema: SCHEMA_VERSION,
        scenario_hash: file.scenario_hash(),
        policy,
        seed,
        samples,
        success_rate: report.success_rate,
        mean_reward: report.mean_reward,
        median_success_z: report.median_success_z,
        records: report
            .samples
            .iter()
            .map(|s| SampleRow {
                z: s.z,
                action: s.action,
                cqi: finite(s.cqi),
                locked_pairs: s.locked_pairs,
                final_mass_kg: s.final_mass,
                fuel_kg: s.fuel,
                reward: s.reward,
                success: s.success,
                diverged: s.diverged,
            })
            .collect(),
    };
    let bytes = json_bytes(&output)?;
    match out {
        Some(path) => write_atomic(path, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}
