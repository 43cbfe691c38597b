//! End-to-end estimation: unrestricted and restricted fits for every system
//! unit, the Ω system, its invertibility report and the effect series.

use crate::error::{Error, Result};
use crate::iscm::{
    build_system, check_invertibility, solve_effects, InvertibilityReport, OmegaSystem,
};
use crate::panel::{PanelDataset, RoleAssignment};
use crate::scalar::Scalar;
use crate::scm::{fit_unit, FitOptions, ScmFit};
use rayon::prelude::*;

/// Fits for the system units, ordered main treated first.
#[derive(Debug, Clone)]
pub struct SystemFits<T> {
    /// Donor pool: every other unit.
    pub unrestricted: Vec<ScmFit<T>>,
    /// Donor pool: pure controls only.
    pub restricted: Vec<ScmFit<T>>,
}

impl<T: Scalar> SystemFits<T> {
    pub fn main_unrestricted(&self) -> &ScmFit<T> {
        &self.unrestricted[0]
    }

    pub fn main_restricted(&self) -> &ScmFit<T> {
        &self.restricted[0]
    }

    pub fn unrestricted_for(&self, unit: &str) -> Option<&ScmFit<T>> {
        self.unrestricted.iter().find(|f| f.target == unit)
    }

    pub fn restricted_for(&self, unit: &str) -> Option<&ScmFit<T>> {
        self.restricted.iter().find(|f| f.target == unit)
    }

    pub fn system<'a>(&'a self, roles: &RoleAssignment, panel: &PanelDataset<T>) -> Result<OmegaSystem<T>> {
        build_system(&self.unrestricted[0], &self.unrestricted[1..], roles, panel)
    }
}

/// Runs the `2m` fits (concurrently; results keep a fixed order).
pub fn fit_system<T: Scalar>(
    panel: &PanelDataset<T>,
    roles: &RoleAssignment,
    opts: &FitOptions,
) -> Result<SystemFits<T>> {
    roles.validate(panel)?;
    let units = roles.system_units();
    let jobs: Vec<(String, Vec<String>)> = units
        .iter()
        .map(|u| (u.clone(), roles.unrestricted_donors(panel, u)))
        .chain(units.iter().map(|u| (u.clone(), roles.restricted_donors(u))))
        .collect();
    let mut fits = jobs
        .par_iter()
        .map(|(target, donors)| fit_unit(panel, target, donors, opts))
        .collect::<Result<Vec<_>>>()?;
    let restricted = fits.split_off(units.len());
    Ok(SystemFits { unrestricted: fits, restricted })
}

/// Post-period effects of one system unit under the three estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEffects<T> {
    pub unit: String,
    pub periods: Vec<String>,
    pub naive: Vec<T>,
    pub iscm: Vec<T>,
    pub restricted: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct IscmRun<T> {
    pub fits: SystemFits<T>,
    pub system: OmegaSystem<T>,
    pub invertibility: InvertibilityReport<T>,
    pub effects: Vec<UnitEffects<T>>,
}

impl<T: Scalar> IscmRun<T> {
    pub fn effects_for(&self, unit: &str) -> Option<&UnitEffects<T>> {
        self.effects.iter().find(|e| e.unit == unit)
    }

    /// iSCM effect series in the form expected by the placebo routines.
    pub fn iscm_series(&self) -> Vec<crate::iscm::EffectSeries<T>> {
        self.effects
            .iter()
            .map(|e| crate::iscm::EffectSeries {
                unit: e.unit.clone(),
                periods: e.periods.clone(),
                values: e.iscm.clone(),
                method: crate::iscm::EffectMethod::Iscm,
            })
            .collect()
    }
}

/// Completes a run from existing fits.
pub fn solve_run<T: Scalar>(
    panel: &PanelDataset<T>,
    roles: &RoleAssignment,
    fits: SystemFits<T>,
) -> Result<IscmRun<T>> {
    let system = fits.system(roles, panel)?;
    let invertibility = check_invertibility(&system.omega)?;
    if invertibility.singular {
        return Err(Error::SingularSystem { det: invertibility.determinant_f64() });
    }
    let iscm = solve_effects(&system)?;
    let (_, post) = panel.split_periods();
    let effects = system
        .units
        .iter()
        .enumerate()
        .map(|(i, unit)| {
            let restricted_gaps = fits.restricted[i].gaps(panel)?;
            Ok(UnitEffects {
                unit: unit.clone(),
                periods: system.post_periods.clone(),
                naive: system.beta.iter().map(|b| b[i]).collect(),
                iscm: iscm[i].values.clone(),
                restricted: post.iter().map(|&t| restricted_gaps[t]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IscmRun { fits, system, invertibility, effects })
}

pub fn run_iscm<T: Scalar>(
    panel: &PanelDataset<T>,
    roles: &RoleAssignment,
    opts: &FitOptions,
) -> Result<IscmRun<T>> {
    let fits = fit_system(panel, roles, opts)?;
    solve_run(panel, roles, fits)
}
