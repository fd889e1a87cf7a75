//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tethernet_core::bayes_opt::{episode_runner, optimize, CaseSpec, Outcome};
use tethernet_core::capture_metrics::CqiReference;
use tethernet_core::config::ScenarioFile;
use tethernet_core::net_model::AxialElement;
use tethernet_core::policy_learn::{
    clipped_surrogate, evaluate, evaluate_with, gaussian_log_prob, initial_policy, loss_and_grad, reward, sample_action,
    train, ActionBounds, Checkpoint, MdpSpec, PolicyNet, PpoConfig, ScenarioEnv, Transition, ACTION_DIM,
};
use tethernet_core::simulator::{
    accumulate_spring_forces, advance_phase, closing_step, integrate_points, run_episode, Phase, Simulator, Spring,
    Switches, ThrustActions,
};
use tethernet_core::{convex_hull_3d, cqi, EpisodeResult, Scenario, Vec3};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn desk_file() -> ScenarioFile {
    ScenarioFile::load(include_str!("../../../configs/desk.cfg")).expect("desk config loads")
}

fn result(cqi: f64, locked: u32, mf: f64, t: f64) -> EpisodeResult {
    EpisodeResult {
        settled_cqi: cqi,
        locked_pairs: locked,
        fuel_consumed: 2.5 - mf,
        final_mu_mass: mf,
        sim_time: t,
        success: false,
        diverged: false,
        closing_time: None,
        thrust_duration: 0.0,
        target_z: -30.0,
        max_penetration: 0.0,
        trajectory: Vec::new(),
    }
}

fn reward_oracle() -> Check {
    // (I*, N_L, m_f, t_sim, R) evaluated independently by hand
    let table: [(f64, u32, f64, f64, f64); 20] = [
        (1.0, 12, 2.3, 50.0, 12.2822),
        (12.5, 0, 2.4, 60.0, -6.652507786736896),
        (2.5, 8, 2.0, 35.0, 12.5),
        (2.5000001, 8, 2.0, 40.0, 2.4273999999999902),
        (0.3, 7, 2.2, 45.0, 1.6616528194400546),
        (3.1, 12, 1.9, 60.0, 1.8195649693988711),
        (1000.0, 0, 2.5, 60.0, -15.847892572441982),
        (0.0, 12, 2.5, 35.0, 12.5),
        (4.0, 4, 1.5, 55.0, -2.0254118917120723),
        (2.4, 12, 1.99, 48.0, 2.311140004999667),
        (9.344, 11, 1.859, 52.26, -1.6381702868525116),
        (12.623, 10, 2.422, 35.73, -2.14993088431196),
        (6.984, 3, 2.149, 57.52, -4.134656427449167),
        (1.698, 7, 2.368, 44.52, 1.6686224194400547),
        (1.53, 3, 1.513, 40.42, -1.0496206429569657),
        (4.192, 12, 1.889, 54.05, 0.859739408488312),
        (1.079, 9, 2.117, 38.17, 12.4539716),
        (0.027, 0, 1.709, 40.39, -1.8339360044422868),
        (14.736, 2, 1.789, 59.04, -6.518958913611026),
        (8.088, 10, 2.126, 39.54, -1.0386864362235912),
    ];
    let mut worst: f64 = 0.0;
    for (c, n, m, t, expected) in table {
        let r = reward(&result(c, n, m, t), 2.5, 0.0121);
        worst = worst.max((r.total - expected).abs());
        ensure(r.total == r.fuel + r.cqi + r.locked_pairs + r.mass + r.end, || "terms do not sum".into())?;
    }
    ensure(worst < 1e-9, || format!("max error {worst:e}"))?;
    let r = reward(&result(1.0, 12, 2.3, 50.0), 2.5, 0.0121).total;
    ensure(r > 12.0, || format!("success reward {r}"))?;
    Ok(format!("20 cases, max error {worst:.1e}; success at t=50 s gives {r:.4}"))
}

fn cqi_oracle() -> Check {
    let t = CqiReference {
        volume: 125.3,
        surface_area: 159.9,
        characteristic_length: 1.95,
    };
    let examples = [
        (125.3, 159.9, 0.0, 0.0),
        (250.6, 159.9, 0.0, 0.1),
        (250.6, 319.8, 1.95, 1.0),
    ];
    for (v, s, q, expected) in examples {
        let j = cqi(v, s, q, &t);
        ensure((j - expected).abs() <= 1e-12, || format!("J({v}, {s}, {q}) = {j}, expected {expected}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(4..=12);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        let h = convex_hull_3d(&pts).map_err(|e| e.to_string())?;
        let (v, s) = common::brute_force_hull(&pts);
        worst = worst.max((h.volume - v).abs() / v).max((h.surface_area - s).abs() / s);
    }
    ensure(worst <= 1e-9, || format!("hull relative error {worst:e}"))?;
    Ok(format!("3 worked examples exact to 1e-12; 100 hulls within {worst:.1e} relative"))
}

fn dynamics() -> Check {
    // momentum in free flight
    let mut s = Scenario::desk();
    s.switches = Switches {
        thrust: false,
        contact: false,
        closing: false,
    };
    s.phases.max_time = 50.0;
    let mut sim = Simulator::new(&s).map_err(|e| e.to_string())?;
    let p0 = sim.state().linear_momentum();
    while sim.step().map_err(|e| e.to_string())? {}
    let drift = (sim.state().linear_momentum() - p0).norm() / p0.norm();
    ensure(drift < 1e-8, || format!("momentum drift {drift:e}"))?;

    // two-node spring held taut by an external pull
    let (k, m0, m1, pull) = (100.0, 1.0, 3.0, 20.0);
    let springs = [Spring {
        a: 0,
        b: 1,
        el: AxialElement {
            rest_length: 1.0,
            stiffness: k,
            damping: 0.0,
        },
    }];
    let eq = 1.0 + pull / k;
    let mut x = vec![Vec3::zeros(), Vec3::new(1.0 + 0.5 * pull / k, 0.0, 0.0)];
    let mut v = vec![Vec3::zeros(); 2];
    let dt = 0.01;
    let mut prev = x[1].x - x[0].x - eq;
    let mut crossings = Vec::new();
    let mut step = 0u32;
    while crossings.len() < 11 {
        let mut f = vec![Vec3::new(-pull, 0.0, 0.0), Vec3::new(pull, 0.0, 0.0)];
        accumulate_spring_forces(&springs, &x, &v, &mut f);
        integrate_points(&mut x, &mut v, &[m0, m1], &f, dt);
        step += 1;
        let d = x[1].x - x[0].x - eq;
        if prev < 0.0 && d >= 0.0 {
            crossings.push((step as f64 - d / (d - prev)) * dt);
        }
        prev = d;
    }
    let period = (crossings[10] - crossings[0]) / 10.0;
    let exact = 2.0 * std::f64::consts::PI * (m0 * m1 / (m0 + m1) / k).sqrt();
    let period_err = (period - exact).abs() / exact;
    ensure(period_err < 0.02, || format!("period {period} vs {exact}"))?;

    // ejection speed of the four MUs
    let mut worst: f64 = 0.0;
    for (speed, angle) in [(1.0, 36.87), (2.5, 36.87), (1.7, 10.0), (0.3, 0.0)] {
        let mut s = Scenario::desk();
        s.deploy.ejection_speed = speed;
        s.deploy.shooting_angle_deg = angle;
        let sim = Simulator::new(&s).map_err(|e| e.to_string())?;
        for &j in &sim.state().mu_nodes {
            worst = worst.max((sim.state().velocities[j].norm() - speed).abs() / speed);
        }
    }
    ensure(worst <= 4.0 * f64::EPSILON, || format!("ejection speed error {worst:e}"))?;
    Ok(format!(
        "momentum drift {drift:.1e} over 50 s; period error {:.3}%; |v| = v_e within {worst:.1e}",
        100.0 * period_err
    ))
}

fn fuel_accounting() -> Check {
    let mut out = Vec::new();
    for (thrust, expected) in [(8.9, 0.1815), (4.45, 0.1815 / 2.0)] {
        let mut s = Scenario::desk();
        s.switches.contact = false;
        s.switches.closing = false;
        s.phases.max_time = 30.0;
        s.actions.thrust = thrust;
        let r = run_episode(&s).map_err(|e| e.to_string())?;
        ensure(r.thrust_duration == 15.0, || format!("burn lasted {}", r.thrust_duration))?;
        ensure(r.fuel_consumed == expected, || format!("F={thrust}: m_p = {}", r.fuel_consumed))?;
        ensure(r.final_mu_mass + r.fuel_consumed == 2.5, || "m_f + m_p != m_0".into())?;
        out.push(r.fuel_consumed);
    }
    Ok(format!("m_p = {} kg at 8.9 N, {} kg at 4.45 N", out[0], out[1]))
}

fn phase_thresholds() -> Check {
    let mut s = Scenario::desk();
    s.switches = Switches {
        thrust: false,
        contact: false,
        closing: false,
    };
    s.phases.max_time = 20.0;
    let mut sim = Simulator::new(&s).map_err(|e| e.to_string())?;
    while sim.state().phase == Phase::Deployment {
        sim.step().map_err(|e| e.to_string())?;
        advance_phase(sim.state_mut(), &s);
    }
    let t_on = sim.state().time;
    ensure((t_on - 15.0).abs() < 1e-9, || format!("thrusting began at {t_on}"))?;

    // closing trigger on the full-size thresholds with the net collapsed to the origin
    let full = Scenario::paper();
    let collapsed = |z: f64| -> Result<Simulator, String> {
        let mut sim = Simulator::new(&full).map_err(|e| e.to_string())?;
        let st = sim.state_mut();
        st.positions.iter_mut().for_each(|x| *x = Vec3::zeros());
        st.target.body.position = Vec3::new(0.0, 0.0, z);
        st.phase = Phase::Thrusting;
        st.time = 20.0;
        Ok(sim)
    };
    let mut far = collapsed(-2.51)?;
    advance_phase(far.state_mut(), &full);
    let mut near = collapsed(-2.5)?;
    advance_phase(near.state_mut(), &full);
    ensure(far.state().phase == Phase::Thrusting && near.state().phase == Phase::Closing, || {
        "closing did not trigger exactly at 2.5 m".into()
    })?;

    // strict lock threshold and the 12-pair cap
    let mut sim = collapsed(-1.0)?;
    let st = sim.state_mut();
    st.phase = Phase::Closing;
    let ring = st.ring.clone();
    let gaps = [2.01, 1.99, 2.0, 3.0, 1.0, 2.5, 0.5, 2.2, 1.5, 4.0, 1.999, 2.0];
    let mut x = 0.0;
    for (k, &node) in ring.iter().enumerate() {
        st.positions[node] = Vec3::new(x, 0.0, 0.0);
        x += gaps[k];
    }
    closing_step(st, full.phases.lock_distance);
    let expected: Vec<bool> = gaps[..11].iter().map(|&g| g < 2.0).collect();
    ensure(st.locked[..11] == expected[..], || format!("locks {:?}", &st.locked[..11]))?;
    st.positions.iter_mut().for_each(|p| *p = Vec3::zeros());
    let all = closing_step(st, full.phases.lock_distance);
    ensure(all == 12, || format!("N_L = {all}"))?;

    // full episode: settle lasts 20 s after closing
    let mut s = Scenario::desk();
    s.target.x_offset = 0.0;
    s.target.z_noise = 0.0;
    s.target.z_nominal = -28.0;
    s.actions.psi_deg = [80.0, 45.0, 80.0, 45.0];
    s.actions.theta_deg = 45.0;
    let mut sim = Simulator::new(&s).map_err(|e| e.to_string())?;
    let mut max_locked = 0;
    while sim.step().map_err(|e| e.to_string())? {
        max_locked = max_locked.max(sim.state().locked_count());
    }
    let tc = sim.state().closing_started.ok_or("closing never started")?;
    let settle = sim.state().time - tc;
    ensure((settle - 20.0).abs() < 1e-9, || format!("settle lasted {settle}"))?;
    ensure(max_locked <= 12, || format!("N_L reached {max_locked}"))?;
    Ok(format!(
        "thrust on at {t_on:.2} s; closing at 2.50 m not 2.51 m; lock strictly below 2.0 m; settle {settle:.2} s; N_L max {max_locked}"
    ))
}

/// Synthetic case-1 problem on the unit cube of the search box: objective
/// `1 + |u - 0.3|²`, feasible iff `u0 >= 0.45`. Optimum 1.0225.
fn synthetic_runner(case: &CaseSpec) -> impl Fn(&ThrustActions) -> Outcome + Sync + '_ {
    move |a: &ThrustActions| {
        let x: Vec<f64> = case.variables().iter().map(|v| v.get(a)).collect();
        let u = case.to_unit(&x);
        Outcome {
            fuel: 1.0 + u.iter().map(|v| (v - 0.3) * (v - 0.3)).sum::<f64>(),
            cqi: 2.5 + 10.0 * (0.45 - u[0]),
            locked_pairs: 12,
            final_mass: 2.3,
            diverged: false,
        }
    }
}

fn bo_sanity() -> Check {
    let mut case = CaseSpec::new(1).map_err(|e| e.to_string())?;
    case.budget = 100;
    let optimum = 1.0225;
    let mut hits = 0;
    let mut gaps = Vec::new();
    for seed in 0..10 {
        let run = optimize(&case, synthetic_runner(&case), seed).map_err(|e| e.to_string())?;
        ensure(run.history.len() == 180, || format!("{} evaluations", run.history.len()))?;
        ensure(run.incumbent.windows(2).all(|w| w[1] <= w[0]), || format!("seed {seed}: incumbent not monotone"))?;
        let gap = (run.best.fuel - optimum) / optimum;
        gaps.push(gap);
        if run.best.feasible && gap <= 0.01 {
            hits += 1;
        }
    }
    ensure(hits >= 9, || format!("{hits}/10 within 1% (gaps {gaps:?})"))?;
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    Ok(format!("{hits}/10 runs within 1% of the optimum (worst gap {:.3}%), incumbents monotone", 100.0 * worst))
}

fn desk_end_to_end() -> Check {
    let file = desk_file();

    // case-1 optimization against one noisy target placement
    let mut bo_scenario = file.scenario.clone();
    bo_scenario.seed = 1;
    let case = file.bo.case_spec(1, &bo_scenario).map_err(|e| e.to_string())?;
    ensure(case.budget == 60, || format!("budget {}", case.budget))?;
    let run = optimize(&case, episode_runner(&bo_scenario), 7).map_err(|e| e.to_string())?;
    let b = &run.best;
    ensure(run.feasible_found && b.cqi <= 2.5 && b.locked_pairs >= 8 && b.final_mass >= 2.0, || {
        format!("no feasible capture; best {b:?}")
    })?;
    let baseline_angles = [b.x[0], b.x[1], b.x[2], b.x[3], b.x[4]];

    // PPO over the noisy offset range
    let env = ScenarioEnv::new(file.scenario.clone());
    let mdp = MdpSpec::for_scenario(&file.scenario);
    let cfg = file.rl.clone();
    ensure(cfg.total_episodes == 2000, || format!("{} episodes", cfg.total_episodes))?;
    let (m0, rate) = (cfg.initial_mass, cfg.burn_rate);
    let (untrained_net, _) = initial_policy(&cfg);
    let untrained = Checkpoint::new(untrained_net, mdp.clone(), 0, f64::NAN);
    let before = evaluate(&env, &untrained, 50, 1234, m0, rate);
    let report = train(&env, &mdp, &cfg).map_err(|e| e.to_string())?;
    let after = evaluate(&env, &report.last, 50, 1234, m0, rate);
    let baseline = evaluate_with(&env, &mdp, |_| baseline_angles, 50, 1234, m0, rate);

    let gain = after.mean_reward.unwrap() - before.mean_reward.unwrap();
    let success = after.success_rate.unwrap();
    let base_rate = baseline.success_rate.unwrap();
    let summary = format!(
        "BO fuel {:.4} kg (I* {:.2}, N_L {}, m_f {:.3}) after {} episodes; PPO reward {:.2} -> {:.2} (+{gain:.2}), success {:.0}% vs fixed BO angles {:.0}%",
        b.fuel,
        b.cqi,
        b.locked_pairs,
        b.final_mass,
        run.history.len(),
        before.mean_reward.unwrap(),
        after.mean_reward.unwrap(),
        100.0 * success,
        100.0 * base_rate
    );
    ensure(gain >= 8.0, || format!("reward gain below 8: {summary}"))?;
    ensure(success >= 0.6, || format!("success below 60%: {summary}"))?;
    ensure(success > base_rate, || format!("does not beat the fixed baseline: {summary}"))?;
    Ok(summary)
}

fn ppo_numerics() -> Check {
    ensure(clipped_surrogate(1.5, 1.0, 0.2) == 1.2, || "rho=1.5, A=+1".into())?;
    ensure(clipped_surrogate(0.5, -1.0, 0.2) == -0.8, || "rho=0.5, A=-1".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut net = PolicyNet::random(-0.3, &mut rng);
    for w in &mut net.actor.w3 {
        *w *= 40.0;
    }
    let cfg = PpoConfig::default();
    let mut batch = Vec::new();
    let mut adv = Vec::new();
    for _ in 0..16 {
        let state = rng.random_range(-1.0..1.0);
        let out = net.forward(state);
        let mut raw = [0.0; ACTION_DIM];
        for k in 0..ACTION_DIM {
            let z: f64 = StandardNormal.sample(&mut rng);
            raw[k] = out.means[k] + out.log_std[k].exp() * z;
        }
        batch.push(Transition {
            state,
            raw,
            log_prob_old: gaussian_log_prob(&raw, &out.means, &out.log_std) + rng.random_range(-0.05..0.05),
            reward: rng.random_range(-8.0..12.0),
        });
        adv.push(rng.random_range(-2.0..2.0));
    }
    let (_, grad) = loss_and_grad(&net, &batch, &adv, &cfg);
    let p0 = net.params();
    let scale = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] += h;
        probe.set_params(&p);
        let up = loss_and_grad(&probe, &batch, &adv, &cfg).0.total;
        p[i] -= 2.0 * h;
        probe.set_params(&p);
        let down = loss_and_grad(&probe, &batch, &adv, &cfg).0.total;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1e-3 * scale));
    }
    ensure(worst < 1e-4, || format!("gradient relative error {worst:e}"))?;

    let bounds = ActionBounds::default();
    let mut wide = PolicyNet::random(1.0, &mut rng);
    wide.actor.b3 = vec![3.0, -3.0, 0.0, 2.0, -2.0];
    let mut outside = 0;
    for i in 0..1_000_000 {
        let s = sample_action(&wide, &bounds, -1.0 + 2.0 * (i % 1000) as f64 / 999.0, &mut rng);
        if !bounds.contains(&s.action) || !s.log_prob.is_finite() {
            outside += 1;
        }
    }
    ensure(outside == 0, || format!("{outside} samples out of bounds"))?;
    Ok(format!(
        "{} parameters, worst FD relative error {worst:.1e}; clip identities exact; 10^6 samples in bounds",
        p0.len()
    ))
}

fn determinism() -> Check {
    let mut s = Scenario::desk();
    s.seed = 5;
    let a = run_episode(&s).map_err(|e| e.to_string())?;
    let b = run_episode(&s).map_err(|e| e.to_string())?;
    ensure(a == b, || "episode results differ".into())?;

    let mut case = CaseSpec::new(1).map_err(|e| e.to_string())?;
    case.initial_samples = 20;
    case.budget = 10;
    let r1 = optimize(&case, synthetic_runner(&case), 3).map_err(|e| e.to_string())?;
    let r2 = optimize(&case, synthetic_runner(&case), 3).map_err(|e| e.to_string())?;
    ensure(r1.history == r2.history, || "optimizer histories differ".into())?;

    let file = desk_file();
    let mut cfg = file.rl.clone();
    cfg.total_episodes = 64;
    let env = ScenarioEnv::new(file.scenario.clone());
    let mdp = MdpSpec::for_scenario(&file.scenario);
    let t1 = train(&env, &mdp, &cfg).map_err(|e| e.to_string())?;
    let t2 = train(&env, &mdp, &cfg).map_err(|e| e.to_string())?;
    ensure(t1.curve == t2.curve, || "reward curves differ".into())?;
    let (j1, j2) = (t1.last.to_json().map_err(|e| e.to_string())?, t2.last.to_json().map_err(|e| e.to_string())?);
    ensure(j1 == j2, || "checkpoints differ".into())?;
    let e1 = serde_json::to_string(&evaluate(&env, &t1.last, 8, 9, cfg.initial_mass, cfg.burn_rate)).map_err(|e| e.to_string())?;
    let e2 = serde_json::to_string(&evaluate(&env, &t2.last, 8, 9, cfg.initial_mass, cfg.burn_rate)).map_err(|e| e.to_string())?;
    ensure(e1 == e2, || "evaluation reports differ".into())?;
    ensure(file.scenario_hash() == desk_file().scenario_hash(), || "scenario hash unstable".into())?;
    Ok("episode, optimizer history, reward curve, checkpoint and evaluation bytes repeat".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("reward oracle", reward_oracle),
        ("CQI oracle", cqi_oracle),
        ("dynamics invariants", dynamics),
        ("fuel accounting", fuel_accounting),
        ("phase thresholds", phase_thresholds),
        ("BO sanity", bo_sanity),
        ("desk-scale end-to-end", desk_end_to_end),
        ("PPO numerics", ppo_numerics),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
