//! Specification checks: predictor balance, the restricted-vs-unrestricted
//! decision rule, and the bias decomposition used with simulated truth.

use crate::error::{Error, Result};
use crate::linalg::LuFactorization;
use crate::panel::{PanelDataset, RoleAssignment};
use crate::pipeline::IscmRun;
use crate::scalar::Scalar;
use crate::scm::{fit_unit, fit_weights, rmspe, FitOptions, ScmFit, SolverOptions, VWeights};
use crate::simulation::GroundTruth;
use serde::{Deserialize, Serialize};

/// One predictor row of a balance table.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow<T> {
    pub predictor: String,
    pub observed: T,
    pub unrestricted: T,
    pub restricted: T,
    pub unrestricted_bias: T,
    pub restricted_bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceTable<T> {
    pub target: String,
    pub rows: Vec<BalanceRow<T>>,
}

impl<T: Scalar> BalanceTable<T> {
    /// `Σ_k |bias_k| / s_k` for each specification.
    pub fn bias_norms(&self, scales: &[T]) -> Result<(T, T)> {
        if scales.len() != self.rows.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scales for {} predictors",
                scales.len(),
                self.rows.len()
            )));
        }
        let norm = |f: fn(&BalanceRow<T>) -> T| -> T {
            self.rows
                .iter()
                .zip(scales)
                .map(|(r, &s)| if s > T::zero() { f(r) / s } else { f(r) })
                .sum()
        };
        Ok((norm(|r| r.unrestricted_bias), norm(|r| r.restricted_bias)))
    }
}

/// Observed predictors against both synthetic versions.
pub fn balance_table<T: Scalar>(
    observed: &[T],
    unrestricted: &ScmFit<T>,
    restricted: &ScmFit<T>,
) -> Result<BalanceTable<T>> {
    if unrestricted.target != restricted.target {
        return Err(Error::PredictorMismatch(format!(
            "fits target '{}' and '{}'",
            unrestricted.target, restricted.target
        )));
    }
    if unrestricted.predictor_names != restricted.predictor_names {
        return Err(Error::PredictorMismatch("fits use different predictor sets".into()));
    }
    let k = unrestricted.predictor_names.len();
    if observed.len() != k || unrestricted.synthetic_predictors.len() != k || restricted.synthetic_predictors.len() != k {
        return Err(Error::PredictorMismatch(format!(
            "{} observed values for {k} predictors",
            observed.len()
        )));
    }
    let rows = (0..k)
        .map(|i| {
            let (o, u, r) = (observed[i], unrestricted.synthetic_predictors[i], restricted.synthetic_predictors[i]);
            BalanceRow {
                predictor: unrestricted.predictor_names[i].clone(),
                observed: o,
                unrestricted: u,
                restricted: r,
                unrestricted_bias: (o - u).abs(),
                restricted_bias: (o - r).abs(),
            }
        })
        .collect();
    Ok(BalanceTable { target: unrestricted.target.clone(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    UseIscm,
    UseRestricted,
    Equivalent,
}

impl Recommendation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Recommendation::UseIscm => "use_iscm",
            Recommendation::UseRestricted => "use_restricted",
            Recommendation::Equivalent => "equivalent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareOptions {
    /// Affected units below this weight are treated as negligible.
    pub weight_threshold: f64,
    /// Relative tolerance for "approximately equal".
    pub relative_tolerance: f64,
    /// Also score both donor pools on a training/validation split of the
    /// pre-period. Reported only; it does not change the recommendation.
    pub validation_split: bool,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { weight_threshold: 0.05, relative_tolerance: 0.10, validation_split: false }
    }
}

/// Summary numbers the decision rule looks at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionInputs {
    pub max_affected_weight: f64,
    pub rmspe_restricted: f64,
    pub rmspe_unrestricted: f64,
    pub balance_restricted: f64,
    pub balance_unrestricted: f64,
}

fn approx_equal(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn worse_beyond(restricted: f64, unrestricted: f64, tol: f64) -> bool {
    restricted > unrestricted && !approx_equal(restricted, unrestricted, tol)
}

/// Negligible affected weights, or matching fit and balance, favour the
/// restricted pool; a restricted pool that fits or balances clearly worse
/// favours iSCM.
pub fn decide(inputs: &DecisionInputs, opts: &CompareOptions) -> Recommendation {
    let tol = opts.relative_tolerance;
    if inputs.max_affected_weight < opts.weight_threshold {
        return Recommendation::UseRestricted;
    }
    let rmspe_eq = approx_equal(inputs.rmspe_restricted, inputs.rmspe_unrestricted, tol);
    let balance_eq = approx_equal(inputs.balance_restricted, inputs.balance_unrestricted, tol);
    if rmspe_eq && balance_eq {
        return Recommendation::UseRestricted;
    }
    if worse_beyond(inputs.rmspe_restricted, inputs.rmspe_unrestricted, tol)
        || worse_beyond(inputs.balance_restricted, inputs.balance_unrestricted, tol)
    {
        return Recommendation::UseIscm;
    }
    Recommendation::Equivalent
}

/// Validation-window RMSPE of each pool when trained on the earlier half of
/// the pre-period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationScores<T> {
    pub unrestricted: T,
    pub restricted: T,
}

#[derive(Debug, Clone)]
pub struct SpecComparison<T> {
    pub target: String,
    /// Weights the unrestricted fit gives the other system units.
    pub affected_weights: Vec<(String, T)>,
    pub balance: BalanceTable<T>,
    pub pre_rmspe_unrestricted: T,
    pub pre_rmspe_restricted: T,
    pub balance_norm_unrestricted: T,
    pub balance_norm_restricted: T,
    pub validation: Option<ValidationScores<T>>,
    pub recommendation: Recommendation,
    pub unrestricted: ScmFit<T>,
    pub restricted: ScmFit<T>,
}

/// Cross-unit standard deviation of each predictor used by `fit`.
fn predictor_scales<T: Scalar>(panel: &PanelDataset<T>, fit: &ScmFit<T>) -> Vec<T> {
    let sd = |vals: Vec<T>| -> T {
        let n = T::cst(vals.len() as f64);
        let mean = vals.iter().cloned().sum::<T>() / n;
        (vals.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n).sqrt()
    };
    if panel.predictors().is_empty() {
        (0..fit.predictor_names.len())
            .map(|t| sd((0..panel.num_units()).map(|j| panel.outcome_row(j)[t]).collect()))
            .collect()
    } else {
        panel.predictors().iter().map(|p| sd(p.values.clone())).collect()
    }
}

fn validation_rmspe<T: Scalar>(
    panel: &PanelDataset<T>,
    target: &str,
    donors: &[String],
    solver: &SolverOptions,
) -> Result<T> {
    let pre = panel.pre_len();
    let train = pre / 2;
    if train < 1 || train == pre {
        return Err(Error::TooFewPrePeriods { required: 2, available: pre });
    }
    let t = panel.unit_index(target)?;
    let idx = donors.iter().map(|d| panel.unit_index(d)).collect::<Result<Vec<_>>>()?;
    let actual = panel.outcome_row(t);
    let x0 = crate::linalg::DenseMatrix::from_fn(train, idx.len(), |k, j| panel.outcome_row(idx[j])[k]);
    let v = VWeights::uniform((0..train).map(|k| panel.periods()[k].clone()).collect());
    let w = fit_weights(&actual[..train], &x0, &v, solver)?.weights;
    let path: Vec<T> = (0..pre)
        .map(|s| idx.iter().zip(&w).map(|(&j, &wj)| wj * panel.outcome_row(j)[s]).sum())
        .collect();
    rmspe(&actual[..pre], &path, &(train..pre).collect::<Vec<_>>())
}

/// Fits `target` with and without the other system units as donors and
/// applies the decision rule.
pub fn compare_specs<T: Scalar>(
    panel: &PanelDataset<T>,
    roles: &RoleAssignment,
    target: &str,
    fit_opts: &FitOptions,
    opts: &CompareOptions,
) -> Result<SpecComparison<T>> {
    roles.validate(panel)?;
    if roles.potentially_affected.is_empty() {
        return Err(Error::InvalidRoles("comparison needs at least one potentially affected unit".into()));
    }
    if !roles.system_units().iter().any(|u| u == target) {
        return Err(Error::InvalidRoles(format!("'{target}' is not the main treated or an affected unit")));
    }
    let full = roles.unrestricted_donors(panel, target);
    let pure = roles.restricted_donors(target);
    let (unrestricted, restricted) = rayon::join(
        || fit_unit(panel, target, &full, fit_opts),
        || fit_unit(panel, target, &pure, fit_opts),
    );
    let (unrestricted, restricted) = (unrestricted?, restricted?);
    let balance = balance_table(&unrestricted.treated_predictors, &unrestricted, &restricted)?;
    let scales = predictor_scales(panel, &unrestricted);
    let (norm_u, norm_r) = balance.bias_norms(&scales)?;
    let affected_weights: Vec<(String, T)> = roles
        .system_units()
        .into_iter()
        .filter(|u| u != target)
        .map(|u| {
            let w = unrestricted.weights.weight_of(&u);
            (u, w)
        })
        .collect();
    let max_affected = affected_weights.iter().map(|(_, w)| w.to_f64_lossy()).fold(0.0, f64::max);
    let recommendation = decide(
        &DecisionInputs {
            max_affected_weight: max_affected,
            rmspe_restricted: restricted.pre_rmspe.to_f64_lossy(),
            rmspe_unrestricted: unrestricted.pre_rmspe.to_f64_lossy(),
            balance_restricted: norm_r.to_f64_lossy(),
            balance_unrestricted: norm_u.to_f64_lossy(),
        },
        opts,
    );
    let validation = if opts.validation_split {
        Some(ValidationScores {
            unrestricted: validation_rmspe(panel, target, &full, &fit_opts.solver)?,
            restricted: validation_rmspe(panel, target, &pure, &fit_opts.solver)?,
        })
    } else {
        None
    };
    Ok(SpecComparison {
        target: target.to_string(),
        affected_weights,
        balance,
        pre_rmspe_unrestricted: unrestricted.pre_rmspe,
        pre_rmspe_restricted: restricted.pre_rmspe,
        balance_norm_unrestricted: norm_u,
        balance_norm_restricted: norm_r,
        validation,
        recommendation,
        unrestricted,
        restricted,
    })
}

/// Error decomposition for one post-period. Vectors are indexed like the
/// system units (main treated first).
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow<T> {
    pub period: String,
    /// Approximation bias `Σ_j ŵ_j Yᴺ_jt − Yᴺ_it` of each unrestricted fit.
    pub b_sc: Vec<T>,
    /// Contamination bias: weighted true effects of the system donors.
    pub b_te: Vec<T>,
    /// Measured `estimate − truth` for the naive gaps.
    pub naive_error: Vec<T>,
    /// `−B_sc − B_te`.
    pub naive_predicted: Vec<T>,
    pub iscm_error: Vec<T>,
    /// `−Ω⁻¹ B_sc`.
    pub iscm_predicted: Vec<T>,
    /// Approximation bias of each restricted fit.
    pub b_rsc: Vec<T>,
    pub restricted_error: Vec<T>,
    /// `(−B¹_sc − w₂B²_sc)/(1 − w₂l₁)`; only for one affected unit.
    pub closed_form: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasLedger<T> {
    pub units: Vec<String>,
    pub rows: Vec<BiasRow<T>>,
}

impl<T: Scalar> BiasLedger<T> {
    /// Largest deviation between measured and predicted errors over all
    /// rows: `(naive, iscm, restricted)`.
    pub fn max_identity_residuals(&self) -> (f64, f64, f64) {
        let mut out = (0.0f64, 0.0f64, 0.0f64);
        for r in &self.rows {
            for i in 0..r.b_sc.len() {
                out.0 = out.0.max((r.naive_error[i] - r.naive_predicted[i]).abs().to_f64_lossy());
                out.1 = out.1.max((r.iscm_error[i] - r.iscm_predicted[i]).abs().to_f64_lossy());
                out.2 = out.2.max((r.restricted_error[i] + r.b_rsc[i]).abs().to_f64_lossy());
            }
            if let Some(c) = r.closed_form {
                out.1 = out.1.max((r.iscm_error[0] - c).abs().to_f64_lossy());
            }
        }
        out
    }
}

fn weighted_truth<T: Scalar>(
    fit: &ScmFit<T>,
    panel: &PanelDataset<T>,
    values: &crate::linalg::DenseMatrix<T>,
    t: usize,
) -> Result<T> {
    fit.weights
        .donors
        .iter()
        .zip(&fit.weights.weights)
        .map(|(d, &w)| Ok(w * *values.get(panel.unit_index(d)?, t)))
        .sum()
}

/// Splits each estimator's error into approximation and contamination parts
/// using the hidden untreated outcomes and planted effects.
pub fn bias_ledger<T: Scalar>(
    panel: &PanelDataset<T>,
    run: &IscmRun<T>,
    truth: Option<&GroundTruth<T>>,
) -> Result<BiasLedger<T>> {
    let truth = truth.ok_or(Error::TruthUnavailable)?;
    let (j, t) = (panel.num_units(), panel.num_periods());
    for m in [&truth.untreated, &truth.effects] {
        if m.nrows() != j || m.ncols() != t {
            return Err(Error::DimensionMismatch(format!(
                "truth is {}×{}, panel is {j}×{t}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    let units = run.system.units.clone();
    let idx = units.iter().map(|u| panel.unit_index(u)).collect::<Result<Vec<_>>>()?;
    let m = units.len();
    let lu = LuFactorization::new(&run.system.omega)?;
    let (_, post) = panel.split_periods();
    let rows = post
        .iter()
        .enumerate()
        .map(|(p, &s)| {
            let mut row = BiasRow {
                period: panel.periods()[s].clone(),
                b_sc: Vec::with_capacity(m),
                b_te: Vec::with_capacity(m),
                naive_error: Vec::with_capacity(m),
                naive_predicted: Vec::with_capacity(m),
                iscm_error: Vec::with_capacity(m),
                iscm_predicted: Vec::new(),
                b_rsc: Vec::with_capacity(m),
                restricted_error: Vec::with_capacity(m),
                closed_form: None,
            };
            for (i, unit) in units.iter().enumerate() {
                let fit = &run.fits.unrestricted[i];
                let rfit = &run.fits.restricted[i];
                let own_n = *truth.untreated.get(idx[i], s);
                let own_e = *truth.effects.get(idx[i], s);
                let b_sc = weighted_truth(fit, panel, &truth.untreated, s)? - own_n;
                let b_te = weighted_truth(fit, panel, &truth.effects, s)?;
                let b_rsc = weighted_truth(rfit, panel, &truth.untreated, s)? - own_n;
                let eff = run.effects_for(unit).ok_or(Error::DimensionMismatch(format!("no effects for '{unit}'")))?;
                row.b_sc.push(b_sc);
                row.b_te.push(b_te);
                row.naive_error.push(eff.naive[p] - own_e);
                row.naive_predicted.push(-b_sc - b_te);
                row.iscm_error.push(eff.iscm[p] - own_e);
                row.b_rsc.push(b_rsc);
                row.restricted_error.push(eff.restricted[p] - own_e);
            }
            let neg: Vec<T> = row.b_sc.iter().map(|&b| -b).collect();
            row.iscm_predicted = lu.solve(&neg)?;
            if m == 2 {
                let w2 = run.fits.unrestricted[0].weights.weight_of(&units[1]);
                let l1 = run.fits.unrestricted[1].weights.weight_of(&units[0]);
                row.closed_form = Some((-row.b_sc[0] - w2 * row.b_sc[1]) / (T::one() - w2 * l1));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasLedger { units, rows })
}

/// [`bias_ledger`] restricted to one affected unit, where the closed form
/// for the iSCM error applies.
pub fn bias_ledger_m1<T: Scalar>(
    panel: &PanelDataset<T>,
    run: &IscmRun<T>,
    truth: Option<&GroundTruth<T>>,
) -> Result<BiasLedger<T>> {
    if run.system.units.len() != 2 {
        return Err(Error::InvalidRoles(format!(
            "expected one affected unit, found {}",
            run.system.units.len() - 1
        )));
    }
    bias_ledger(panel, run, truth)
}

/// The closed-form iSCM error for one affected unit.
pub fn iscm_error_m1<T: Scalar>(b1: T, b2: T, w2: T, l1: T) -> Result<T> {
    let a = crate::iscm::amplification(w2, l1)?;
    Ok(a * (-b1 - w2 * b2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{VWeights, WeightVector};

    fn fit(target: &str, names: &[&str], treated: Vec<f64>, synthetic: Vec<f64>) -> ScmFit<f64> {
        ScmFit {
            target: target.into(),
            weights: WeightVector::new(vec!["x".into()], vec![1.0]).unwrap(),
            v: VWeights::uniform(names.iter().map(|s| s.to_string()).collect()),
            predictor_names: names.iter().map(|s| s.to_string()).collect(),
            treated_predictors: treated,
            synthetic_predictors: synthetic,
            synthetic_path: vec![],
            pre_rmspe: 1.0,
            post_rmspe: 1.0,
            penalty_lambda: None,
        }
    }

    #[test]
    fn gdp_row_bias() {
        let u = fit("wg", &["gdp"], vec![15808.90], vec![15804.64]);
        let r = fit("wg", &["gdp"], vec![15808.90], vec![16138.83]);
        let t = balance_table(&[15808.90], &u, &r).unwrap();
        assert!((t.rows[0].unrestricted_bias - 4.26).abs() < 1e-9);
        assert!((t.rows[0].restricted_bias - 329.93).abs() < 1e-9);
    }

    #[test]
    fn hand_set_two_predictors() {
        let u = fit("a", &["p", "q"], vec![2.0, 3.0], vec![2.5, 1.0]);
        let r = fit("a", &["p", "q"], vec![2.0, 3.0], vec![1.0, 3.25]);
        let t = balance_table(&[2.0, 3.0], &u, &r).unwrap();
        assert_eq!(t.rows[0].unrestricted_bias, 0.5);
        assert_eq!(t.rows[1].unrestricted_bias, 2.0);
        assert_eq!(t.rows[0].restricted_bias, 1.0);
        assert_eq!(t.rows[1].restricted_bias, 0.25);
        let (nu, nr) = t.bias_norms(&[0.5, 1.0]).unwrap();
        assert_eq!((nu, nr), (3.0, 2.25));
    }

    #[test]
    fn mismatched_predictors() {
        let u = fit("a", &["p"], vec![1.0], vec![1.0]);
        let r = fit("a", &["q"], vec![1.0], vec![1.0]);
        assert!(matches!(balance_table(&[1.0], &u, &r), Err(Error::PredictorMismatch(_))));
        let r2 = fit("b", &["p"], vec![1.0], vec![1.0]);
        assert!(matches!(balance_table(&[1.0], &u, &r2), Err(Error::PredictorMismatch(_))));
    }

    fn inputs(w: f64, rr: f64, ru: f64, br: f64, bu: f64) -> DecisionInputs {
        DecisionInputs {
            max_affected_weight: w,
            rmspe_restricted: rr,
            rmspe_unrestricted: ru,
            balance_restricted: br,
            balance_unrestricted: bu,
        }
    }

    #[test]
    fn decision_rule() {
        let o = CompareOptions::default();
        assert_eq!(decide(&inputs(0.42, 270.74, 119.07, 1.0, 1.0), &o), Recommendation::UseIscm);
        // Similar RMSPE, clearly worse restricted balance.
        assert_eq!(decide(&inputs(0.3, 181.22, 194.67, 3.0, 1.0), &o), Recommendation::UseIscm);
        assert_eq!(decide(&inputs(0.0, 500.0, 1.0, 9.0, 1.0), &o), Recommendation::UseRestricted);
        assert_eq!(decide(&inputs(0.3, 100.0, 101.0, 2.0, 2.05), &o), Recommendation::UseRestricted);
        // Restricted better on both: neither rule fires.
        assert_eq!(decide(&inputs(0.3, 50.0, 100.0, 1.0, 2.0), &o), Recommendation::Equivalent);
    }

    #[test]
    fn closed_form_error() {
        let e: f64 = iscm_error_m1(0.1, 0.05, 0.5, 0.5).unwrap();
        assert!((e + 0.125 / 0.75).abs() < 1e-15);
        assert!((e + 0.1667).abs() < 1e-4);
        assert_eq!(iscm_error_m1(0.0, 0.0, 0.42, 0.33).unwrap(), 0.0);
    }
}
