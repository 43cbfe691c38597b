use iscm::diagnostics::{compare_specs, CompareOptions, Recommendation};
use iscm::inference::{placebo_in_space, placebo_in_time, PlaceboOptions};
use iscm::iscm::{build_system, build_system_allowing_exclusions, check_invertibility, solve_effects};
use iscm::linalg::DenseMatrix;
use iscm::panel::PanelDataset;
use iscm::pipeline::fit_system;
use iscm::scm::{ScmFit, WeightVector};
use iscm::simulation::{generate, EffectPath, SimulatedPanel, SimulationConfig};
use iscm::{run_iscm, Error, FitOptions, RoleAssignment};

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Elimination oracle for a small dense system.
fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap()).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

#[test]
fn three_affected_units_match_oracle() {
    let cfg = SimulationConfig { units: 12, affected: 3, noise: 0.4, seed: 3, ..Default::default() };
    let sim: SimulatedPanel<f64> = generate(&cfg).unwrap();
    let run = run_iscm(&sim.panel, &sim.roles, &FitOptions::default()).unwrap();
    let m = run.system.size();
    assert_eq!(m, 4);
    let a: Vec<Vec<f64>> = (0..m).map(|i| run.system.omega.row(i).to_vec()).collect();
    for (p, beta) in run.system.beta.iter().enumerate() {
        let x = gauss(a.clone(), beta.clone());
        for i in 0..m {
            assert!((run.effects[i].iscm[p] - x[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn scaling_gaps_scales_effects() {
    let cfg = SimulationConfig { noise: 0.4, affected: 2, seed: 5, ..Default::default() };
    let sim: SimulatedPanel<f64> = generate(&cfg).unwrap();
    let run = run_iscm(&sim.panel, &sim.roles, &FitOptions::default()).unwrap();
    let mut scaled = run.system.clone();
    scaled.beta.iter_mut().flatten().for_each(|b| *b *= -3.5);
    let a = solve_effects(&run.system).unwrap();
    let b = solve_effects(&scaled).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for (u, v) in x.values.iter().zip(&y.values) {
            assert!((v - -3.5 * u).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }
}

/// Treated `t`, affected `a`, pure controls `p1..p3`.
fn small_panel() -> PanelDataset<f64> {
    let y = DenseMatrix::from_rows(vec![
        vec![1.0, 2.0, 3.0, 4.0, 9.0, 10.0],
        vec![1.1, 2.1, 2.9, 4.2, 6.0, 6.5],
        vec![0.5, 1.5, 2.5, 3.5, 4.5, 5.5],
        vec![1.5, 2.5, 3.5, 4.5, 5.5, 6.5],
        vec![2.0, 1.0, 4.0, 3.0, 6.0, 5.0],
    ])
    .unwrap();
    PanelDataset::new(names(&["t", "a", "p1", "p2", "p3"]), names(&["1", "2", "3", "4", "5", "6"]), y, vec![], 4).unwrap()
}

#[test]
fn zero_cross_weights_give_identity_omega() {
    let p = small_panel();
    let roles = RoleAssignment::with_remaining_pure(&p, "t", &["a"]).unwrap();
    let main = ScmFit::from_weights(&p, "t", WeightVector::new(names(&["a", "p1", "p2", "p3"]), vec![0.0, 0.5, 0.5, 0.0]).unwrap()).unwrap();
    let aff = ScmFit::from_weights(&p, "a", WeightVector::new(names(&["t", "p1", "p2", "p3"]), vec![0.0, 0.2, 0.8, 0.0]).unwrap()).unwrap();
    let sys = build_system(&main, &[aff.clone()], &roles, &p).unwrap();
    assert_eq!(sys.omega, DenseMatrix::identity(2));
    let eff = solve_effects(&sys).unwrap();
    assert_eq!(eff[0].values, sys.beta.iter().map(|b| b[0]).collect::<Vec<_>>());

    // Excluding the main treated from the affected pool: the simplified case.
    let restricted_aff = ScmFit::from_weights(&p, "a", WeightVector::new(names(&["p1", "p2"]), vec![0.2, 0.8]).unwrap()).unwrap();
    assert!(matches!(build_system(&main, &[restricted_aff.clone()], &roles, &p), Err(Error::DonorPoolMismatch { .. })));
    let sys = build_system_allowing_exclusions(&main, &[restricted_aff], &roles, &p).unwrap();
    assert_eq!(*sys.omega.get(1, 0), 0.0);
}

#[test]
fn negative_weights_warn() {
    let omega = DenseMatrix::from_rows(vec![vec![1.0, 1.5], vec![-0.2, 1.0]]).unwrap();
    let r = check_invertibility(&omega).unwrap();
    assert!(!r.singular);
    assert!(!r.warnings.is_empty());
}

#[test]
fn zero_affected_weight_recommends_restricted() {
    // The affected unit sits far above the treated path so it never enters.
    let y = DenseMatrix::from_rows(vec![
        vec![1.0, 2.0, 3.0, 4.0, 9.0, 10.0],
        vec![50.0, 51.0, 52.0, 53.0, 40.0, 41.0],
        vec![0.5, 1.5, 2.5, 3.5, 4.5, 5.5],
        vec![1.5, 2.5, 3.5, 4.5, 5.5, 6.5],
        vec![2.0, 1.0, 4.0, 3.0, 6.0, 5.0],
    ])
    .unwrap();
    let far = PanelDataset::new(names(&["t", "a", "p1", "p2", "p3"]), names(&["1", "2", "3", "4", "5", "6"]), y, vec![], 4).unwrap();
    let roles = RoleAssignment::with_remaining_pure(&far, "t", &["a"]).unwrap();
    let cmp = compare_specs(&far, &roles, "t", &FitOptions::default(), &CompareOptions::default()).unwrap();
    assert!(cmp.affected_weights[0].1 < 0.05, "{:?} {:?}", cmp.affected_weights, cmp.unrestricted.weights);
    assert_eq!(cmp.recommendation, Recommendation::UseRestricted);
    let p = small_panel();
    let none = RoleAssignment::with_remaining_pure(&p, "t", &[]).unwrap();
    assert!(compare_specs(&p, &none, "t", &FitOptions::default(), &CompareOptions::default()).is_err());
}

#[test]
fn comparison_reports_validation_when_asked() {
    let cfg = SimulationConfig { noise: 0.3, seed: 12, ..Default::default() };
    let sim: SimulatedPanel<f64> = generate(&cfg).unwrap();
    let opts = CompareOptions { validation_split: true, ..Default::default() };
    let cmp = compare_specs(&sim.panel, &sim.roles, "u01", &FitOptions::default(), &opts).unwrap();
    let v = cmp.validation.unwrap();
    assert!(v.restricted >= 0.0 && v.unrestricted >= 0.0);
    for row in &cmp.balance.rows {
        assert_eq!(row.unrestricted_bias, (row.observed - row.unrestricted).abs());
        assert_eq!(row.restricted_bias, (row.observed - row.restricted).abs());
    }
}

#[test]
fn large_planted_effect_ranks_first() {
    let cfg = SimulationConfig {
        noise: 0.05,
        theta: EffectPath::constant(-5.0),
        gamma: vec![EffectPath::constant(-0.5)],
        seed: 21,
        ..Default::default()
    };
    let sim: SimulatedPanel<f64> = generate(&cfg).unwrap();
    let opts = FitOptions::default();
    let run = run_iscm(&sim.panel, &sim.roles, &opts).unwrap();
    let res = placebo_in_space(&sim.panel, &sim.roles, run.fits.main_unrestricted(), &run.iscm_series(), &opts, &PlaceboOptions::default()).unwrap();
    assert_eq!(res.target_rank, 1);
    let n = res.entries.len();
    assert_eq!(n, sim.roles.pure_controls.len() + 1);
    assert!((res.p_value - 1.0 / n as f64).abs() < 1e-15);
    assert!(res.entries.iter().all(|e| e.ratio >= 0.0));
    let again = placebo_in_space(&sim.panel, &sim.roles, run.fits.main_unrestricted(), &run.iscm_series(), &opts, &PlaceboOptions::default()).unwrap();
    assert_eq!(res, again);
}

#[test]
fn placebo_needs_two_pure_controls() {
    let p = small_panel();
    let roles = RoleAssignment::new(&p, "t", &["a", "p1", "p2"], &["p3"]).unwrap();
    let fits = fit_system(&p, &roles, &FitOptions::default()).unwrap();
    let res = placebo_in_space(&p, &roles, fits.main_unrestricted(), &[], &FitOptions::default(), &PlaceboOptions::default());
    assert!(matches!(res, Err(Error::InvalidRoles(_))));
}

#[test]
fn in_time_placebo() {
    let quiet = SimulationConfig { noise: 0.0, ..Default::default() };
    let sim: SimulatedPanel<f64> = generate(&quiet).unwrap();
    let opts = FitOptions::default();
    let gaps = placebo_in_time(&sim.panel, &sim.roles, "15", &opts).unwrap();
    assert_eq!(gaps.periods, names(&["16", "17", "18", "19", "20"]));
    assert!(gaps.values.iter().all(|g| g.abs() < 1e-6), "{:?}", gaps.values);

    let noisy = SimulationConfig { noise: 0.2, seed: 4, ..Default::default() };
    let sim: SimulatedPanel<f64> = generate(&noisy).unwrap();
    let gaps = placebo_in_time(&sim.panel, &sim.roles, "15", &opts).unwrap();
    let rmspe = (gaps.values.iter().map(|g| g * g).sum::<f64>() / gaps.values.len() as f64).sqrt();
    assert!(rmspe <= 0.2 * 3.0, "{rmspe}");

    assert!(matches!(placebo_in_time(&sim.panel, &sim.roles, "1", &opts), Err(Error::TooFewPrePeriods { .. })));
}

#[test]
fn identical_outcomes_cannot_be_ratioed() {
    let y = DenseMatrix::from_fn(5, 6, |_, t| t as f64);
    let p = PanelDataset::new(names(&["t", "a", "p1", "p2", "p3"]), names(&["1", "2", "3", "4", "5", "6"]), y, vec![], 4).unwrap();
    let roles = RoleAssignment::with_remaining_pure(&p, "t", &["a"]).unwrap();
    let opts = FitOptions::default();
    let run = run_iscm(&p, &roles, &opts).unwrap();
    let res = placebo_in_space(&p, &roles, run.fits.main_unrestricted(), &run.iscm_series(), &opts, &PlaceboOptions::default());
    assert!(matches!(res, Err(Error::ZeroPreRmspe { .. })));
}
