//! Synthetic-control fitting: donor weights, predictor importance (V),
//! the penalized variant, synthetic paths and RMSPE.

mod penalized;
mod qp;
mod vsearch;

pub use penalized::cross_validate_lambda;
pub use qp::{
    fit_penalized, fit_weights, pairwise_discrepancy, penalized_objective, project_to_simplex,
    QpSolution, SolverOptions,
};
pub use vsearch::{nelder_mead, optimize_v, NelderMeadResult};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::panel::PanelDataset;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Donor weights. Fitted weights lie on the simplex; weights supplied from
/// other estimators may be negative and are accepted downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    pub donors: Vec<String>,
    pub weights: Vec<T>,
}

impl<T: Scalar> WeightVector<T> {
    pub fn new(donors: Vec<String>, weights: Vec<T>) -> Result<Self> {
        if donors.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} donors and {} weights",
                donors.len(),
                weights.len()
            )));
        }
        Ok(Self { donors, weights })
    }

    /// Weight on `unit`, zero when it is not in the donor pool.
    pub fn weight_of(&self, unit: &str) -> T {
        self.donors
            .iter()
            .position(|d| d == unit)
            .map_or(T::zero(), |i| self.weights[i])
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.donors.iter().any(|d| d == unit)
    }

    pub fn is_simplex(&self, tol: f64) -> bool {
        let tol = T::cst(tol);
        let sum: T = self.weights.iter().cloned().sum();
        self.weights.iter().all(|&w| w >= -tol && w <= T::one() + tol)
            && (sum - T::one()).abs() <= tol
    }

    /// Donor/weight pairs sorted by descending weight, ties in donor order.
    pub fn ranked(&self) -> Vec<(&str, T)> {
        let mut out: Vec<(usize, &str, T)> = self
            .donors
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(i, (d, &w))| (i, d.as_str(), w))
            .collect();
        out.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        out.into_iter().map(|(_, d, w)| (d, w)).collect()
    }
}

/// Predictor importance weights (nonnegative, summing to one).
#[derive(Debug, Clone, PartialEq)]
pub struct VWeights<T> {
    pub names: Vec<String>,
    pub values: Vec<T>,
}

impl<T: Scalar> VWeights<T> {
    pub fn new(names: Vec<String>, values: Vec<T>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::DimensionMismatch("V names and values differ in length".into()));
        }
        if values.iter().any(|&x| !(x >= T::zero())) {
            return Err(Error::InvalidConfig("V weights must be nonnegative".into()));
        }
        let sum: T = values.iter().cloned().sum();
        if !(sum > T::zero()) {
            return Err(Error::InvalidConfig("V weights must have positive mass".into()));
        }
        Ok(Self {
            names,
            values: values.into_iter().map(|x| x / sum).collect(),
        })
    }

    pub fn uniform(names: Vec<String>) -> Self {
        let k = names.len().max(1);
        Self {
            values: vec![T::one() / T::cst(k as f64); names.len()],
            names,
        }
    }
}

/// Which estimator produces donor weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    /// Original SCM.
    Scm,
    /// Penalized SCM with λ chosen from `lambda_grid` by cross-validation.
    Penalized { lambda_grid: Vec<f64> },
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::Scm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VSearchOptions {
    /// Number of deterministic Nelder–Mead starts.
    pub starts: usize,
    pub max_iter: usize,
    pub tolerance: f64,
    /// Rescale each predictor by its cross-unit standard deviation before
    /// fitting; V then refers to the rescaled predictors.
    pub standardize: bool,
    /// Evaluate starts on the rayon pool.
    pub parallel: bool,
}

impl Default for VSearchOptions {
    fn default() -> Self {
        Self {
            starts: 10,
            max_iter: 400,
            tolerance: 1e-10,
            standardize: true,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub estimator: Estimator,
    pub v_search: VSearchOptions,
    pub solver: SolverOptions,
}

/// Target and donor predictors as used in the fitting objective.
#[derive(Debug, Clone)]
pub struct Design<T> {
    pub names: Vec<String>,
    pub x1: Vec<T>,
    pub x0: DenseMatrix<T>,
    /// Divisors applied to each predictor row (1 when not standardized).
    pub scales: Vec<T>,
    /// True when built from pre-period outcomes because the panel declares
    /// no predictors.
    pub from_outcomes: bool,
}

impl<T: Scalar> Design<T> {
    /// Declared predictors (standardized on request), or every pre-period
    /// outcome when none are declared.
    pub fn build<S: AsRef<str>>(
        panel: &PanelDataset<T>,
        target: &str,
        donors: &[S],
        standardize: bool,
    ) -> Result<Self> {
        if panel.predictors().is_empty() {
            let t = panel.unit_index(target)?;
            let idx = donors
                .iter()
                .map(|d| panel.unit_index(d.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            let pre = panel.pre_len();
            let x1 = panel.outcome_row(t)[..pre].to_vec();
            let x0 = DenseMatrix::from_fn(pre, idx.len(), |k, j| panel.outcome_row(idx[j])[k]);
            return Ok(Self {
                names: panel.periods()[..pre].iter().map(|p| format!("outcome[{p}]")).collect(),
                x1,
                x0,
                scales: vec![T::one(); pre],
                from_outcomes: true,
            });
        }
        let (mut x1, mut x0) = panel.predictor_matrices(target, donors)?;
        let k = x1.len();
        let mut scales = vec![T::one(); k];
        if standardize {
            for (kk, scale) in scales.iter_mut().enumerate() {
                let vals: Vec<T> = std::iter::once(x1[kk]).chain(x0.row(kk).iter().cloned()).collect();
                let n = T::cst(vals.len() as f64);
                let mean = vals.iter().cloned().sum::<T>() / n;
                let var = vals.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
                let sd = var.sqrt();
                if sd > T::zero() && sd.is_finite() {
                    *scale = sd;
                }
            }
            for kk in 0..k {
                x1[kk] = x1[kk] / scales[kk];
                for j in 0..x0.ncols() {
                    let v = *x0.get(kk, j) / scales[kk];
                    x0.set(kk, j, v);
                }
            }
        }
        Ok(Self {
            names: panel.predictors().iter().map(|p| p.name.clone()).collect(),
            x1,
            x0,
            scales,
            from_outcomes: false,
        })
    }

    /// Synthetic predictor values `X0 W` in original units.
    pub fn synthetic_predictors(&self, weights: &[T]) -> Vec<T> {
        self.x0
            .mul_vec(weights)
            .into_iter()
            .zip(&self.scales)
            .map(|(x, &s)| x * s)
            .collect()
    }

    pub fn target_predictors(&self) -> Vec<T> {
        self.x1.iter().zip(&self.scales).map(|(&x, &s)| x * s).collect()
    }
}

/// Result of fitting one target unit.
#[derive(Debug, Clone)]
pub struct ScmFit<T> {
    pub target: String,
    pub weights: WeightVector<T>,
    pub v: VWeights<T>,
    pub predictor_names: Vec<String>,
    /// Target predictor values (original units).
    pub treated_predictors: Vec<T>,
    /// `X0 W` (original units).
    pub synthetic_predictors: Vec<T>,
    pub synthetic_path: Vec<T>,
    pub pre_rmspe: T,
    pub post_rmspe: T,
    pub penalty_lambda: Option<T>,
}

impl<T: Scalar> ScmFit<T> {
    /// Assembles a fit from externally supplied weights (any SC-type
    /// estimator, including ones with negative weights).
    pub fn from_weights(panel: &PanelDataset<T>, target: &str, weights: WeightVector<T>) -> Result<Self> {
        let design = Design::build(panel, target, &weights.donors, false)?;
        let v = VWeights::uniform(design.names.clone());
        Self::assemble(panel, target, weights, v, &design, None)
    }

    fn assemble(
        panel: &PanelDataset<T>,
        target: &str,
        weights: WeightVector<T>,
        v: VWeights<T>,
        design: &Design<T>,
        penalty_lambda: Option<T>,
    ) -> Result<Self> {
        let path = synthetic_path(&weights, panel)?;
        let actual = panel.outcome_of(target)?;
        let (pre, post) = panel.split_periods();
        Ok(Self {
            target: target.to_string(),
            predictor_names: design.names.clone(),
            treated_predictors: design.target_predictors(),
            synthetic_predictors: design.synthetic_predictors(&weights.weights),
            pre_rmspe: rmspe(actual, &path, &pre)?,
            post_rmspe: rmspe(actual, &path, &post)?,
            synthetic_path: path,
            weights,
            v,
            penalty_lambda,
        })
    }

    /// `Y_target,t − Ŷ_target,t` for every period.
    pub fn gaps(&self, panel: &PanelDataset<T>) -> Result<Vec<T>> {
        let actual = panel.outcome_of(&self.target)?;
        Ok(actual.iter().zip(&self.synthetic_path).map(|(&a, &s)| a - s).collect())
    }
}

/// Fits `target` on `donors` with the configured estimator.
pub fn fit_unit<T: Scalar, S: AsRef<str>>(
    panel: &PanelDataset<T>,
    target: &str,
    donors: &[S],
    opts: &FitOptions,
) -> Result<ScmFit<T>> {
    let donor_names: Vec<String> = donors.iter().map(|d| d.as_ref().to_string()).collect();
    if donor_names.is_empty() {
        return Err(Error::DimensionMismatch(format!("'{target}' has an empty donor pool")));
    }
    if donor_names.iter().any(|d| d == target) {
        return Err(Error::InvalidRoles(format!("'{target}' cannot be its own donor")));
    }
    let design = Design::build(panel, target, &donor_names, opts.v_search.standardize)?;
    let (v, w) = optimize_v_on(panel, target, &donor_names, &design, opts)?;
    match &opts.estimator {
        Estimator::Scm => {
            let weights = WeightVector::new(donor_names, w)?;
            ScmFit::assemble(panel, target, weights, v, &design, None)
        }
        Estimator::Penalized { lambda_grid } => {
            let grid: Vec<T> = lambda_grid.iter().map(|&l| T::cst(l)).collect();
            let lambda = cross_validate_lambda(panel, target, &donor_names, &grid, &opts.solver)?;
            let sol = fit_penalized(&design.x1, &design.x0, &v, lambda, &opts.solver)?;
            let weights = WeightVector::new(donor_names, sol.weights)?;
            ScmFit::assemble(panel, target, weights, v, &design, Some(lambda))
        }
    }
}

fn optimize_v_on<T: Scalar>(
    panel: &PanelDataset<T>,
    target: &str,
    donors: &[String],
    design: &Design<T>,
    opts: &FitOptions,
) -> Result<(VWeights<T>, Vec<T>)> {
    if design.from_outcomes {
        let v = VWeights::uniform(design.names.clone());
        let sol = fit_weights(&design.x1, &design.x0, &v, &opts.solver)?;
        return Ok((v, sol.weights));
    }
    vsearch::optimize_v_with_design(panel, target, donors, design, &opts.v_search, &opts.solver)
}

/// `Σ_j w_j Y_jt` for every period.
pub fn synthetic_path<T: Scalar>(weights: &WeightVector<T>, panel: &PanelDataset<T>) -> Result<Vec<T>> {
    let idx = weights
        .donors
        .iter()
        .map(|d| panel.unit_index(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..panel.num_periods())
        .map(|t| {
            idx.iter()
                .zip(&weights.weights)
                .map(|(&j, &w)| w * panel.outcome_row(j)[t])
                .sum()
        })
        .collect())
}

/// Root mean squared gap over the listed period indices.
pub fn rmspe<T: Scalar>(actual: &[T], synthetic: &[T], periods: &[usize]) -> Result<T> {
    if periods.is_empty() {
        return Err(Error::EmptyPeriodSet);
    }
    if actual.len() != synthetic.len() {
        return Err(Error::DimensionMismatch(format!(
            "series of length {} and {}",
            actual.len(),
            synthetic.len()
        )));
    }
    let mut sum = T::zero();
    for &t in periods {
        if t >= actual.len() {
            return Err(Error::DimensionMismatch(format!("period index {t} out of range")));
        }
        let d = actual[t] - synthetic[t];
        sum = sum + d * d;
    }
    Ok((sum / T::cst(periods.len() as f64)).sqrt())
}
