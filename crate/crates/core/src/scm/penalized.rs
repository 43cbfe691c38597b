use super::qp::{fit_penalized, SolverOptions};
use super::{rmspe, VWeights};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::panel::PanelDataset;
use crate::scalar::Scalar;

/// Picks the penalty from `grid` by a time-ordered split of the pre-period.
///
/// The earlier half (rounded down) is the training window: its outcomes are
/// the predictors, equally weighted. Each λ is fitted there and scored by
/// outcome RMSPE over the remaining pre-periods. Ties go to the smaller λ.
pub fn cross_validate_lambda<T: Scalar, S: AsRef<str>>(
    panel: &PanelDataset<T>,
    target: &str,
    donors: &[S],
    grid: &[T],
    solver: &SolverOptions,
) -> Result<T> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty lambda grid".into()));
    }
    if grid.iter().any(|&l| !(l >= T::zero()) || !l.is_finite()) {
        return Err(Error::InvalidConfig("lambda grid values must be finite and nonnegative".into()));
    }
    let pre = panel.pre_len();
    if pre < 4 {
        return Err(Error::TooFewPrePeriods { required: 4, available: pre });
    }
    let train = pre / 2;
    let t = panel.unit_index(target)?;
    let idx = donors
        .iter()
        .map(|d| panel.unit_index(d.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let actual = panel.outcome_row(t);
    let x1 = actual[..train].to_vec();
    let x0 = DenseMatrix::from_fn(train, idx.len(), |k, j| panel.outcome_row(idx[j])[k]);
    let v = VWeights::uniform((0..train).map(|k| format!("outcome[{}]", panel.periods()[k])).collect());
    let validation: Vec<usize> = (train..pre).collect();

    let mut sorted: Vec<T> = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut best: Option<(T, T)> = None;
    for lambda in sorted {
        let sol = fit_penalized(&x1, &x0, &v, lambda, solver)?;
        let path: Vec<T> = (0..panel.num_periods())
            .map(|s| idx.iter().zip(&sol.weights).map(|(&j, &w)| w * panel.outcome_row(j)[s]).sum())
            .collect();
        let score = rmspe(actual, &path, &validation)?;
        match best {
            Some((_, b)) if score >= b => {}
            _ => best = Some((lambda, score)),
        }
    }
    Ok(best.expect("grid is non-empty").0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Target is matched exactly in training by the average of two far
    /// donors that diverge later; a near donor tracks it throughout.
    fn tracking_panel() -> PanelDataset<f64> {
        let periods: Vec<String> = (1..=10).map(|t| t.to_string()).collect();
        let target: Vec<f64> = (0..10).map(|t| 5.0 + 0.1 * t as f64).collect();
        let near: Vec<f64> = target.iter().map(|y| y + 0.1).collect();
        let low: Vec<f64> = (0..10).map(|t| if t < 4 { target[t] - 2.0 } else { target[t] - 6.0 }).collect();
        let high: Vec<f64> = (0..10).map(|t| if t < 4 { target[t] + 2.0 } else { target[t] + 1.0 }).collect();
        let y = DenseMatrix::from_rows(vec![target, near, low, high]).unwrap();
        PanelDataset::new(units(&["t", "near", "low", "high"]), periods, y, vec![], 8).unwrap()
    }

    #[test]
    fn singleton_grid() {
        let p = tracking_panel();
        let l = cross_validate_lambda(&p, "t", &["near", "low", "high"], &[0.0], &SolverOptions::default());
        assert_eq!(l.unwrap(), 0.0);
    }

    #[test]
    fn large_penalty_wins_when_nearest_donor_tracks() {
        let p = tracking_panel();
        let donors = ["near", "low", "high"];
        let grid = [0.0, 1.0, 1e6];
        let opts = SolverOptions::default();
        // Direct per-grid-point validation RMSPEs.
        let direct: Vec<f64> = grid
            .iter()
            .map(|&l| {
                let x1 = p.outcome_of("t").unwrap()[..4].to_vec();
                let x0 = DenseMatrix::from_fn(4, 3, |k, j| p.outcome_of(donors[j]).unwrap()[k]);
                let v = VWeights::uniform(units(&["a", "b", "c", "d"]));
                let w = fit_penalized(&x1, &x0, &v, l, &opts).unwrap().weights;
                let path: Vec<f64> = (0..10)
                    .map(|s| (0..3).map(|j| w[j] * p.outcome_of(donors[j]).unwrap()[s]).sum())
                    .collect();
                rmspe(p.outcome_of("t").unwrap(), &path, &[4, 5, 6, 7]).unwrap()
            })
            .collect();
        assert!(direct[2] < direct[0], "{direct:?}");
        let best = direct.iter().cloned().fold(f64::INFINITY, f64::min);
        let expected = grid[direct.iter().position(|&d| d == best).unwrap()];
        assert!(expected > 0.0);
        assert_eq!(cross_validate_lambda(&p, "t", &donors, &grid, &opts).unwrap(), expected);
    }

    #[test]
    fn ties_go_to_smaller_lambda() {
        // A single donor makes every λ give the same fit.
        let p = tracking_panel();
        let l = cross_validate_lambda(&p, "t", &["near"], &[5.0, 2.0, 9.0], &SolverOptions::default());
        assert_eq!(l.unwrap(), 2.0);
    }

    #[test]
    fn needs_four_pre_periods() {
        let periods: Vec<String> = (1..=5).map(|t| t.to_string()).collect();
        let y = DenseMatrix::from_fn(2, 5, |j, t| (j + t) as f64);
        let p = PanelDataset::new(units(&["a", "b"]), periods, y, vec![], 3).unwrap();
        assert!(matches!(
            cross_validate_lambda(&p, "a", &["b"], &[0.0], &SolverOptions::default()),
            Err(Error::TooFewPrePeriods { required: 4, available: 3 })
        ));
    }
}
