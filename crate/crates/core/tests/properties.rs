use iscm::linalg::{cramer_solve, DenseMatrix, LuFactorization};
use iscm::panel::{read_panel, PanelDataset, Predictor};
use iscm::scm::{fit_weights, project_to_simplex, SolverOptions, VWeights};
use proptest::prelude::*;

fn qp_instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..=4, 1usize..=6).prop_flat_map(|(k, n)| {
        (
            prop::collection::vec(-5.0..5.0f64, k),
            prop::collection::vec(prop::collection::vec(-5.0..5.0f64, n), k),
            prop::collection::vec(0.01..1.0f64, k),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn weights_stay_on_the_simplex((x1, x0, v) in qp_instance()) {
        let names = (0..x1.len()).map(|i| format!("p{i}")).collect();
        let v = VWeights::new(names, v).unwrap();
        let sol = fit_weights(&x1, &DenseMatrix::from_rows(x0).unwrap(), &v, &SolverOptions::default()).unwrap();
        prop_assert!(sol.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(sol.gap <= 1e-9 * sol.objective.abs().max(1.0));
    }

    #[test]
    fn projection_lands_on_the_simplex(y in prop::collection::vec(-10.0..10.0f64, 1..8)) {
        let p = project_to_simplex(&y);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn system() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..=10).prop_flat_map(|m| {
        (
            prop::collection::vec(prop::collection::vec(0.0..1.0f64, m), m),
            prop::collection::vec(0.0..0.95f64, m),
            prop::collection::vec(-100.0..100.0f64, m),
        )
            .prop_map(move |(raw, totals, b)| {
                let a = (0..m)
                    .map(|i| {
                        let s: f64 = (0..m).filter(|&j| j != i).map(|j| raw[i][j]).sum::<f64>().max(1e-9);
                        (0..m).map(|j| if i == j { 1.0 } else { -totals[i] * raw[i][j] / s }).collect()
                    })
                    .collect();
                (a, b)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn cramer_matches_lu((a, b) in system()) {
        let a = DenseMatrix::from_rows(a).unwrap();
        let lu = LuFactorization::new(&a).unwrap().solve(&b).unwrap();
        let cr = cramer_solve(&a, &b).unwrap();
        for (x, y) in lu.iter().zip(&cr) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn solve_is_linear((a, b) in system(), c in -50.0..50.0f64) {
        let lu = LuFactorization::new(&DenseMatrix::from_rows(a).unwrap()).unwrap();
        let x = lu.solve(&b).unwrap();
        let cb: Vec<f64> = b.iter().map(|v| c * v).collect();
        let y = lu.solve(&cb).unwrap();
        for (u, v) in x.iter().zip(&y) {
            prop_assert!((v - c * u).abs() <= 1e-10 * (c * u).abs().max(1.0));
        }
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec(-1e6..1e6f64, 12), pred in prop::collection::vec(-10.0..10.0f64, 3)) {
        let units: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let periods: Vec<String> = (1990..1994).map(|y| y.to_string()).collect();
        let y = DenseMatrix::from_row_major(3, 4, values).unwrap();
        let panel = PanelDataset::new(units, periods, y, vec![Predictor { name: "x".into(), values: pred }], 2).unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let back: PanelDataset<f64> = read_panel(buf.as_slice(), &panel.csv_schema()).unwrap();
        prop_assert_eq!(back.outcomes(), panel.outcomes());
        prop_assert_eq!(back.predictors(), panel.predictors());
        prop_assert_eq!(back.periods(), panel.periods());
        prop_assert_eq!(back.pre_len(), 2);
    }
}
