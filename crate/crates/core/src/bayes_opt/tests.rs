use proptest::prelude::*;

use super::*;

/// Unit-cube coordinates of the active variables of `a`.
fn unit(case: &CaseSpec, a: &ThrustActions) -> Vec<f64> {
    let x: Vec<f64> = case.bounds.iter().map(|b| b.variable.get(a)).collect();
    case.to_unit(&x)
}

fn fast(mut case: CaseSpec, initial: usize, budget: usize) -> CaseSpec {
    case.initial_samples = initial;
    case.budget = budget;
    case
}

#[test]
fn cases_activate_the_expected_variables() {
    use Variable::*;
    assert_eq!(CaseSpec::new(1).unwrap().variables(), [Psi1, Psi2, Psi3, Psi4, Theta]);
    assert_eq!(CaseSpec::new(2).unwrap().dim(), 6);
    let c3 = CaseSpec::new(3).unwrap();
    assert_eq!(c3.dim(), 7);
    assert_eq!(c3.bounds[6], Bound::new(Thrust, 5.0, 12.0, 0.0001));
    assert!(CaseSpec::new(4).is_err());
}

#[test]
fn snapping_reproduces_decimal_grid_values() {
    let b = Bound::new(Variable::Psi1, 70.0, 90.0, 0.1);
    assert_eq!(b.snap(85.3049), 85.3);
    assert_eq!(b.snap(-3.0), 70.0);
    assert_eq!(b.snap(1e9), 90.0);
    let m = Bound::new(Variable::InitialMass, 2.0, 2.5, 0.001);
    assert_eq!(m.snap(2.1234), 2.123);
    let f = Bound::new(Variable::Thrust, 5.0, 12.0, 0.0001);
    assert_eq!(f.snap(8.90004), 8.9);
    assert_eq!(f.snap(8.90006), 8.9001);
}

proptest! {
    #[test]
    fn unit_points_snap_onto_the_grid(u in proptest::collection::vec(0.0f64..=1.0, 7)) {
        let case = CaseSpec::new(3).unwrap();
        let x = case.from_unit(&u);
        prop_assert!(case.on_grid(&x));
        let su = case.snap_unit(&u);
        prop_assert_eq!(case.from_unit(&su), x);
    }
}

#[test]
fn case_one_points_embed_in_larger_cases() {
    let c1 = CaseSpec::new(1).unwrap();
    let c3 = CaseSpec::new(3).unwrap();
    let x = vec![84.7, 40.8, 86.0, 43.2, 37.3];
    let mut x3 = x.clone();
    x3.extend([2.5, 8.9]);
    assert_eq!(c1.actions(&x), c3.actions(&x3));
    let runner = |a: &ThrustActions| Outcome {
        fuel: a.psi_deg.iter().sum::<f64>() * 1e-3 + a.thrust * a.initial_mass,
        cqi: 1.0,
        locked_pairs: 12,
        final_mass: 2.4,
        diverged: false,
    };
    assert_eq!(runner(&c1.actions(&x)), runner(&c3.actions(&x3)));
}

#[test]
fn penalty_orders_violations() {
    let th = SuccessThresholds::default();
    let ok = Outcome {
        fuel: 0.1,
        cqi: 2.5,
        locked_pairs: 8,
        final_mass: 2.0,
        diverged: false,
    };
    assert_eq!(penalized(&ok, &th), 0.1);
    let bad = Outcome { cqi: 5.0, ..ok };
    assert!((penalized(&bad, &th) - 1.1).abs() < 1e-12);
    assert_eq!(penalized(&Outcome::diverged(), &th), DIVERGED_PENALTY);
    let rec = EvalRecord::new(0, vec![], Outcome::diverged(), &th);
    assert!(!rec.feasible);
}

#[test]
fn degenerate_box_returns_its_only_point() {
    let mut case = CaseSpec::new(1).unwrap();
    for b in &mut case.bounds {
        b.upper = b.lower;
    }
    let case = fast(case, 4, 3);
    let run = optimize(&case, |_| Outcome { fuel: 0.2, cqi: 1.0, locked_pairs: 12, final_mass: 2.3, diverged: false }, 1).unwrap();
    assert!(run.history.iter().all(|r| r.x == vec![70.0, 35.0, 70.0, 35.0, 35.0]));
}

/// Sphere objective centered inside the box; every point feasible.
#[test]
fn sphere_minimum_is_found() {
    let case = fast(CaseSpec::new(1).unwrap(), 80, 100);
    let c = case.clone();
    let runner = move |a: &ThrustActions| {
        let u = unit(&c, a);
        Outcome {
            fuel: 0.1 + u.iter().map(|v| (v - 0.35).powi(2)).sum::<f64>(),
            cqi: 1.0,
            locked_pairs: 12,
            final_mass: 2.4,
            diverged: false,
        }
    };
    let run = optimize(&case, runner, 3).unwrap();
    assert_eq!(run.history.len(), 180);
    assert!(run.feasible_found);
    assert!(run.best.fuel <= 0.101, "best {}", run.best.fuel);
    assert!(run.incumbent.windows(2).all(|w| w[1] <= w[0]));
    assert!(run.history.iter().all(|r| case.on_grid(&r.x)));
}

/// Two-variable problem with a disk-shaped feasible set and the fuel
/// minimum just inside its edge; late proposals should stay in the disk.
#[test]
fn proposals_concentrate_in_the_feasible_basin() {
    let mut case = CaseSpec::new(1).unwrap();
    case.bounds.truncate(2);
    let case = fast(case, 12, 30);
    let c = case.clone();
    let dist2 = |u: &[f64]| (u[0] - 0.7).powi(2) + (u[1] - 0.3).powi(2);
    let inside = move |u: &[f64]| dist2(u) <= 0.2f64.powi(2);
    let runner = move |a: &ThrustActions| {
        let u = unit(&c, a);
        Outcome {
            fuel: 0.1 + (u[0] - 0.82).powi(2) + (u[1] - 0.18).powi(2),
            cqi: 2.5 * dist2(&u) / 0.04,
            locked_pairs: 12,
            final_mass: 2.4,
            diverged: false,
        }
    };
    let run = optimize(&case, runner, 9).unwrap();
    let last = &run.history[run.history.len() - 10..];
    let hits = last.iter().filter(|r| inside(&case.to_unit(&r.x))).count();
    assert!(hits >= 7, "{hits}/10 inside");
}

#[test]
fn revisited_point_triggers_a_different_proposal() {
    let mut case = CaseSpec::new(1).unwrap();
    case.bounds.truncate(1);
    let h = Hyper {
        signal_var: 1.0,
        length_scales: vec![0.2],
        noise_var: 1e-8,
    };
    let f = |u: f64| (u - 0.4).powi(2);
    let mut xs = vec![vec![0.0], vec![0.5], vec![1.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut proposals = Vec::new();
    for _ in 0..2 {
        let ys: Vec<f64> = xs.iter().map(|x| f(x[0])).collect();
        let best = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let s = Surrogate::condition(xs.clone(), ys, h.clone()).unwrap();
        let flat = Surrogate::condition(xs.clone(), vec![1.0; xs.len()], h.clone()).unwrap();
        let model = ConstrainedModel {
            objective: s,
            constraints: vec![Feasibility::Classifier(flat)],
            best_feasible: Some(best),
            anchor: Some(vec![0.5]),
        };
        let u = propose_next(&model, &case, &mut rng).unwrap();
        proposals.push(u.clone());
        xs.push(u);
    }
    assert_ne!(proposals[0], proposals[1]);
}
