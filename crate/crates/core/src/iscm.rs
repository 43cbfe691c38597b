//! The inclusive-SCM linear system.
//!
//! With the main treated unit and the potentially affected units all
//! included in each other's donor pools, the naive gaps `β_t` satisfy
//! `β_t = Ω ϑ_t`, where `Ω` has a unit diagonal and the negated cross
//! weights off the diagonal. Solving per post-period recovers the effects
//! `ϑ_t = (θ_1t, γ_2t, …, γ_mt)`.

use crate::error::{Error, Result};
use crate::linalg::{cramer_solve, DenseMatrix, LuFactorization};
use crate::panel::{PanelDataset, RoleAssignment};
use crate::scalar::{Field, Scalar};
use crate::scm::ScmFit;
use serde::{Deserialize, Serialize};

/// `|det Ω|` below this is treated as singular.
pub const SINGULARITY_TOLERANCE: f64 = 1e-10;
/// Condition estimates above this raise a warning.
pub const CONDITION_WARNING: f64 = 1e6;
/// Largest system for which solutions are cross-checked by Cramer's rule.
pub const CRAMER_CHECK_MAX_DIM: usize = 10;
/// Tolerance for matching the structural singular patterns.
const PATTERN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSystem<T> {
    /// Main treated first, then the affected units.
    pub units: Vec<String>,
    pub omega: DenseMatrix<T>,
    pub post_periods: Vec<String>,
    /// One naive-gap vector per post-period, ordered like `units`.
    pub beta: Vec<Vec<T>>,
}

impl<T: Field> OmegaSystem<T> {
    pub fn new(
        units: Vec<String>,
        omega: DenseMatrix<T>,
        post_periods: Vec<String>,
        beta: Vec<Vec<T>>,
    ) -> Result<Self> {
        if !omega.is_square() {
            return Err(Error::NotSquare { rows: omega.nrows(), cols: omega.ncols() });
        }
        let m = omega.nrows();
        if units.len() != m || beta.len() != post_periods.len() || beta.iter().any(|b| b.len() != m) {
            return Err(Error::DimensionMismatch(format!(
                "system of size {m} with {} units, {} periods and {} beta vectors",
                units.len(),
                post_periods.len(),
                beta.len()
            )));
        }
        if (0..m).any(|i| !omega.get(i, i).is_one()) {
            return Err(Error::InvalidConfig("omega must have a unit diagonal".into()));
        }
        Ok(Self { units, omega, post_periods, beta })
    }

    /// `Ω = I − C` where `C[i][j]` is the weight unit `i`'s fit gives unit `j`.
    pub fn omega_from_cross_weights(cross: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if !cross.is_square() {
            return Err(Error::NotSquare { rows: cross.nrows(), cols: cross.ncols() });
        }
        Ok(DenseMatrix::from_fn(cross.nrows(), cross.ncols(), |i, j| {
            if i == j {
                T::one()
            } else {
                T::zero() - cross.get(i, j).clone()
            }
        }))
    }

    pub fn size(&self) -> usize {
        self.units.len()
    }

    /// Naive effect series (the β entries), one per system unit.
    pub fn naive_effects(&self) -> Vec<EffectSeries<T>> {
        (0..self.size())
            .map(|i| EffectSeries {
                unit: self.units[i].clone(),
                periods: self.post_periods.clone(),
                values: self.beta.iter().map(|b| b[i].clone()).collect(),
                method: EffectMethod::Naive,
            })
            .collect()
    }
}

/// Assembles Ω and β from unrestricted fits. Every affected fit must
/// include the main treated and the other affected units as donors.
pub fn build_system<T: Scalar>(
    main_fit: &ScmFit<T>,
    affected_fits: &[ScmFit<T>],
    roles: &RoleAssignment,
    panel: &PanelDataset<T>,
) -> Result<OmegaSystem<T>> {
    assemble(main_fit, affected_fits, roles, panel, false)
}

/// Like [`build_system`], but a system unit absent from a donor pool counts
/// as zero weight. Excluding the main treated from every affected unit's
/// pool yields the simplified one-directional system.
pub fn build_system_allowing_exclusions<T: Scalar>(
    main_fit: &ScmFit<T>,
    affected_fits: &[ScmFit<T>],
    roles: &RoleAssignment,
    panel: &PanelDataset<T>,
) -> Result<OmegaSystem<T>> {
    assemble(main_fit, affected_fits, roles, panel, true)
}

fn assemble<T: Scalar>(
    main_fit: &ScmFit<T>,
    affected_fits: &[ScmFit<T>],
    roles: &RoleAssignment,
    panel: &PanelDataset<T>,
    missing_as_zero: bool,
) -> Result<OmegaSystem<T>> {
    let units = roles.system_units();
    if main_fit.target != roles.main_treated {
        return Err(Error::InvalidRoles(format!(
            "main fit targets '{}', expected '{}'",
            main_fit.target, roles.main_treated
        )));
    }
    let mut fits: Vec<&ScmFit<T>> = vec![main_fit];
    for unit in &roles.potentially_affected {
        let fit = affected_fits
            .iter()
            .find(|f| &f.target == unit)
            .ok_or_else(|| Error::InvalidRoles(format!("no fit for affected unit '{unit}'")))?;
        fits.push(fit);
    }
    let m = units.len();
    let mut cross = DenseMatrix::from_elem(m, m, T::zero());
    for (i, fit) in fits.iter().enumerate() {
        for (j, unit) in units.iter().enumerate() {
            if i == j {
                continue;
            }
            if !fit.weights.contains(unit) && !missing_as_zero {
                return Err(Error::DonorPoolMismatch {
                    target: fit.target.clone(),
                    missing: unit.clone(),
                });
            }
            cross.set(i, j, fit.weights.weight_of(unit));
        }
    }
    let omega = OmegaSystem::omega_from_cross_weights(&cross)?;
    let (_, post) = panel.split_periods();
    let gaps = fits.iter().map(|f| f.gaps(panel)).collect::<Result<Vec<_>>>()?;
    let beta = post
        .iter()
        .map(|&t| gaps.iter().map(|g| g[t]).collect())
        .collect();
    let post_periods = post.iter().map(|&t| panel.periods()[t].clone()).collect();
    OmegaSystem::new(units, omega, post_periods, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMethod {
    Naive,
    Restricted,
    Iscm,
}

impl EffectMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            EffectMethod::Naive => "naive",
            EffectMethod::Restricted => "restricted",
            EffectMethod::Iscm => "iscm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectSeries<T> {
    pub unit: String,
    pub periods: Vec<String>,
    pub values: Vec<T>,
    pub method: EffectMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SingularityFlag {
    /// Units `i` and `j` give each other weight one.
    ReciprocalUnitWeights { i: usize, j: usize },
    /// Every row puts its entire weight on system units, leaving nothing
    /// for the pure controls.
    ZeroPureControlWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemWarning {
    IllConditioned { condition: f64 },
    /// A cross weight larger than one in magnitude (possible with estimators
    /// that allow negative weights).
    LargeWeight { row: usize, col: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertibilityReport<T> {
    pub determinant: T,
    /// `‖Ω‖₁ ‖Ω⁻¹‖₁`; infinite when singular.
    pub condition_estimate: f64,
    pub singular: bool,
    pub singular_flags: Vec<SingularityFlag>,
    pub warnings: Vec<SystemWarning>,
}

impl<T: Field> InvertibilityReport<T> {
    pub fn determinant_f64(&self) -> f64 {
        self.determinant.to_f64_lossy()
    }
}

pub fn check_invertibility<T: Field>(omega: &DenseMatrix<T>) -> Result<InvertibilityReport<T>> {
    if !omega.is_square() {
        return Err(Error::NotSquare { rows: omega.nrows(), cols: omega.ncols() });
    }
    let m = omega.nrows();
    let lu = LuFactorization::new(omega)?;
    let determinant = lu.determinant();
    let singular = determinant.abs().to_f64_lossy() < SINGULARITY_TOLERANCE;
    let condition_estimate = if lu.is_singular() {
        f64::INFINITY
    } else {
        let inv = lu.inverse()?;
        omega.norm_one().to_f64_lossy() * inv.norm_one().to_f64_lossy()
    };

    let tol = T::from_f64_lossy(PATTERN_TOLERANCE);
    let near = |a: &T, b: T| (a.clone() - b).abs() <= tol;
    let mut singular_flags = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            if near(omega.get(i, j), -T::one()) && near(omega.get(j, i), -T::one()) {
                singular_flags.push(SingularityFlag::ReciprocalUnitWeights { i, j });
            }
        }
    }
    if m > 1 {
        let all_rows_saturated = (0..m).all(|i| {
            let off: T = (0..m)
                .filter(|&j| j != i)
                .fold(T::zero(), |acc, j| acc + omega.get(i, j).clone());
            near(&off, -T::one())
        });
        if all_rows_saturated {
            singular_flags.push(SingularityFlag::ZeroPureControlWeight);
        }
    }

    let mut warnings = Vec::new();
    if condition_estimate > CONDITION_WARNING && condition_estimate.is_finite() {
        warnings.push(SystemWarning::IllConditioned { condition: condition_estimate });
    }
    for i in 0..m {
        for j in 0..m {
            if i != j && omega.get(i, j).abs() > T::one() {
                warnings.push(SystemWarning::LargeWeight {
                    row: i,
                    col: j,
                    value: omega.get(i, j).to_f64_lossy(),
                });
            }
        }
    }
    Ok(InvertibilityReport {
        determinant,
        condition_estimate,
        singular,
        singular_flags,
        warnings,
    })
}

/// De-biased effects `Ω⁻¹ β_t` for every post-period.
///
/// Ω is factored once; for `m ≤ 10` every solution is cross-checked against
/// Cramer's rule.
pub fn solve_effects<T: Field>(system: &OmegaSystem<T>) -> Result<Vec<EffectSeries<T>>> {
    let report = check_invertibility(&system.omega)?;
    if report.singular {
        return Err(Error::SingularSystem { det: report.determinant_f64() });
    }
    let lu = LuFactorization::new(&system.omega)?;
    let m = system.size();
    let cond_factor = (report.condition_estimate / 1e4).max(1.0);
    let mut solutions = Vec::with_capacity(system.beta.len());
    for beta in &system.beta {
        let x = lu.solve(beta)?;
        if m <= CRAMER_CHECK_MAX_DIM {
            let y = cramer_solve(&system.omega, beta)?;
            for (a, b) in x.iter().zip(&y) {
                let diff = (a.clone() - b.clone()).abs().to_f64_lossy();
                let scale = a.abs().to_f64_lossy().max(1.0);
                if diff > 1e-10 * scale * cond_factor {
                    return Err(Error::CrossCheckMismatch { diff });
                }
            }
        }
        solutions.push(x);
    }
    Ok((0..m)
        .map(|i| EffectSeries {
            unit: system.units[i].clone(),
            periods: system.post_periods.clone(),
            values: solutions.iter().map(|x| x[i].clone()).collect(),
            method: EffectMethod::Iscm,
        })
        .collect())
}

/// `1 / (1 − w₂ l₁)`, the factor relating the one-affected-unit estimates
/// to the weighted naive gaps.
pub fn amplification<T: Field>(w2: T, l1: T) -> Result<T> {
    let denom = T::one() - w2 * l1;
    if denom.abs().to_f64_lossy() < SINGULARITY_TOLERANCE {
        return Err(Error::SingularSystem { det: denom.to_f64_lossy() });
    }
    Ok(T::one() / denom)
}

/// Closed form for one affected unit:
/// `θ = (θ̂ + w₂γ̂)/(1 − w₂l₁)`, `γ = (γ̂ + l₁θ̂)/(1 − w₂l₁)`.
pub fn solve_m1_closed_form<T: Field>(theta_hat: T, gamma_hat: T, w2: T, l1: T) -> Result<(T, T)> {
    let a = amplification(w2.clone(), l1.clone())?;
    let theta = (theta_hat.clone() + w2 * gamma_hat.clone()) * a.clone();
    let gamma = (gamma_hat + l1 * theta_hat) * a;
    Ok((theta, gamma))
}

/// One affected unit whose own fit excludes the main treated (`l₁ = 0`):
/// `γ = γ̂`, `θ = θ̂ + w₂γ̂`.
pub fn solve_m1_simplified<T: Field>(theta_hat: T, gamma_hat: T, w2: T) -> (T, T) {
    (theta_hat + w2 * gamma_hat.clone(), gamma_hat)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn omega2(w: f64, l: f64) -> DenseMatrix<f64> {
        DenseMatrix::from_rows(vec![vec![1.0, -w], vec![-l, 1.0]]).unwrap()
    }

    #[test]
    fn application_determinant() {
        let r = check_invertibility(&omega2(0.42, 0.33)).unwrap();
        assert!((r.determinant - 0.8614).abs() < 1e-12);
        assert!(!r.singular);
        assert!(r.singular_flags.is_empty());
    }

    #[test]
    fn reciprocal_pair_is_singular() {
        let r = check_invertibility(&omega2(1.0, 1.0)).unwrap();
        assert_eq!(r.determinant, 0.0);
        assert!(r.singular);
        assert!(r.singular_flags.contains(&SingularityFlag::ReciprocalUnitWeights { i: 0, j: 1 }));
    }

    #[test]
    fn identity_has_no_flags() {
        let r = check_invertibility(&DenseMatrix::<f64>::identity(3)).unwrap();
        assert_eq!(r.determinant, 1.0);
        assert!(!r.singular && r.singular_flags.is_empty() && r.warnings.is_empty());
        assert!((r.condition_estimate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn saturated_rows_flagged() {
        let o = DenseMatrix::from_rows(vec![
            vec![1.0, -0.5, -0.5],
            vec![-0.2, 1.0, -0.8],
            vec![-0.6, -0.4, 1.0],
        ])
        .unwrap();
        let r = check_invertibility(&o).unwrap();
        assert!(r.singular);
        assert_eq!(r.singular_flags, vec![SingularityFlag::ZeroPureControlWeight]);
    }

    #[test]
    fn non_square_rejected() {
        let o = DenseMatrix::from_elem(2, 3, 0.0);
        assert!(matches!(check_invertibility(&o), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn large_weight_warning() {
        let r = check_invertibility(&omega2(1.3, -0.2)).unwrap();
        assert!(r.warnings.iter().any(|w| matches!(w, SystemWarning::LargeWeight { row: 0, col: 1, .. })));
    }

    #[test]
    fn identity_system_returns_beta() {
        let beta = vec![vec![-1.5, 2.0], vec![0.25, -3.0]];
        let sys = OmegaSystem::new(
            vec!["a".into(), "b".into()],
            DenseMatrix::identity(2),
            vec!["5".into(), "6".into()],
            beta.clone(),
        )
        .unwrap();
        let eff = solve_effects(&sys).unwrap();
        assert_eq!(eff[0].values, vec![-1.5, 0.25]);
        assert_eq!(eff[1].values, vec![2.0, -3.0]);
        assert!(eff.iter().all(|e| e.method == EffectMethod::Iscm));
    }

    #[test]
    fn application_closed_form() {
        let (th, gh): (f64, f64) = (-2000.0, 500.0);
        let a: f64 = amplification(0.42, 0.33).unwrap();
        assert!((a - 1.0 / 0.8614).abs() < 1e-15);
        let (t, g) = solve_m1_closed_form(th, gh, 0.42, 0.33).unwrap();
        assert!((t - a * (th + 0.42 * gh)).abs() < 1e-9);
        assert!((g - a * (gh + 0.33 * th)).abs() < 1e-9);
        let sys = OmegaSystem::new(
            vec!["wg".into(), "at".into()],
            omega2(0.42, 0.33),
            vec!["1991".into()],
            vec![vec![th, gh]],
        )
        .unwrap();
        let eff = solve_effects(&sys).unwrap();
        assert!((eff[0].values[0] - t).abs() < 1e-12 * t.abs());
        assert!((eff[1].values[0] - g).abs() < 1e-12 * g.abs().max(1.0));
    }

    #[test]
    fn hand_arithmetic_closed_form() {
        let (t, g): (f64, f64) = solve_m1_closed_form(-2.0, 1.0, 0.5, 0.5).unwrap();
        assert!((t + 2.0).abs() < 1e-15);
        assert!(g.abs() < 1e-15);
        assert_eq!(solve_m1_closed_form(3.0, 4.0, 0.0, 0.0).unwrap(), (3.0, 4.0));
        assert!(matches!(solve_m1_closed_form(1.0, 1.0, 1.0, 1.0), Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn simplified_case() {
        let (t, g): (f64, f64) = solve_m1_simplified(-1.0, -0.5, 0.4);
        assert!((t + 1.2).abs() < 1e-15);
        assert_eq!(g, -0.5);
        assert_eq!(solve_m1_simplified(2.0, 7.0, 0.0), (2.0, 7.0));
    }

    #[test]
    fn singular_system_refused() {
        let sys = OmegaSystem::new(
            vec!["a".into(), "b".into()],
            omega2(1.0, 1.0),
            vec!["t".into()],
            vec![vec![1.0, 1.0]],
        )
        .unwrap();
        assert!(matches!(solve_effects(&sys), Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn diagonal_must_be_one() {
        let o = DenseMatrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(OmegaSystem::new(vec!["a".into(), "b".into()], o, vec![], vec![]).is_err());
    }
}
