//! Placebo inference: post/pre RMSPE ratios with effect-adjusted donor
//! outcomes, in-space permutation ranks, and in-time pseudo-interventions.

use crate::error::{Error, Result};
use crate::iscm::{EffectMethod, EffectSeries};
use crate::panel::{PanelDataset, RoleAssignment};
use crate::pipeline::run_iscm;
use crate::scalar::Scalar;
use crate::scm::{fit_unit, rmspe, FitOptions, ScmFit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Pre-period RMSPE below this aborts a ratio.
pub const MIN_PRE_RMSPE: f64 = 1e-12;

/// Donor pools for the pseudo-treated pure controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceboDonors {
    /// The other pure controls.
    #[default]
    PureOnly,
    /// Every other unit, with system-unit outcomes adjusted by their
    /// estimated effects.
    AllOthers,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaceboOptions {
    pub donors: PlaceboDonors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioEntry<T> {
    pub unit: String,
    pub pre_rmspe: T,
    pub post_rmspe: T,
    pub ratio: T,
    /// 1 = largest ratio.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboResult<T> {
    pub target: String,
    /// Ordered by rank.
    pub entries: Vec<RatioEntry<T>>,
    pub target_ratio: T,
    pub target_rank: usize,
    pub p_value: f64,
}

/// Pre-RMSPE, adjusted post-RMSPE and their ratio for one fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustedRatio<T> {
    pub pre_rmspe: T,
    pub post_rmspe: T,
    pub ratio: T,
}

fn effect_lookup<'a, T>(effects: &'a [EffectSeries<T>], unit: &str, periods: &[String]) -> Result<&'a [T]> {
    let e = effects
        .iter()
        .find(|e| e.unit == unit)
        .ok_or_else(|| Error::DimensionMismatch(format!("no estimated effects for '{unit}'")))?;
    if e.periods.as_slice() != periods || e.values.len() != periods.len() {
        return Err(Error::DimensionMismatch(format!(
            "effects for '{unit}' do not cover the post-period"
        )));
    }
    Ok(&e.values)
}

/// Ratio for `fit` after subtracting estimated effects from every donor in
/// `adjusted`; the target's own outcome is left untouched.
pub fn adjusted_ratio<T: Scalar>(
    panel: &PanelDataset<T>,
    fit: &ScmFit<T>,
    adjusted: &[String],
    effects: &[EffectSeries<T>],
) -> Result<AdjustedRatio<T>> {
    let (pre, post) = panel.split_periods();
    let post_labels: Vec<String> = post.iter().map(|&t| panel.periods()[t].clone()).collect();
    let actual = panel.outcome_of(&fit.target)?;
    let mut synthetic: Vec<T> = post.iter().map(|&t| fit.synthetic_path[t]).collect();
    for unit in adjusted {
        if unit == &fit.target || !fit.weights.contains(unit) {
            continue;
        }
        let w = fit.weights.weight_of(unit);
        let e = effect_lookup(effects, unit, &post_labels)?;
        for (s, &ej) in synthetic.iter_mut().zip(e) {
            *s = *s - w * ej;
        }
    }
    let pre_rmspe = rmspe(actual, &fit.synthetic_path, &pre)?;
    if pre_rmspe < T::cst(MIN_PRE_RMSPE) {
        return Err(Error::ZeroPreRmspe { unit: fit.target.clone() });
    }
    let actual_post: Vec<T> = post.iter().map(|&t| actual[t]).collect();
    let all: Vec<usize> = (0..post.len()).collect();
    let post_rmspe = rmspe(&actual_post, &synthetic, &all)?;
    Ok(AdjustedRatio { pre_rmspe, post_rmspe, ratio: post_rmspe / pre_rmspe })
}

/// `r₁`: affected donors enter the main treated's synthetic unit with
/// their estimated effects removed.
pub fn placebo_ratio_main<T: Scalar>(
    panel: &PanelDataset<T>,
    roles: &RoleAssignment,
    main_fit: &ScmFit<T>,
    effects: &[EffectSeries<T>],
) -> Result<AdjustedRatio<T>> {
    if main_fit.target != roles.main_treated {
        return Err(Error::InvalidRoles(format!("'{}' is not the main treated unit", main_fit.target)));
    }
    adjusted_ratio(panel, main_fit, &roles.potentially_affected, effects)
}

/// `r_i` for an affected unit: the main treated and the other affected
/// donors are adjusted.
pub fn placebo_ratio_affected<T: Scalar>(
    panel: &PanelDataset<T>,
    roles: &RoleAssignment,
    fit: &ScmFit<T>,
    effects: &[EffectSeries<T>],
) -> Result<AdjustedRatio<T>> {
    if !roles.is_affected(&fit.target) {
        return Err(Error::InvalidRoles(format!("'{}' is not a potentially affected unit", fit.target)));
    }
    adjust_for_system(panel, roles, fit, effects)
}

fn adjust_for_system<T: Scalar>(
    panel: &PanelDataset<T>,
    roles: &RoleAssignment,
    fit: &ScmFit<T>,
    effects: &[EffectSeries<T>],
) -> Result<AdjustedRatio<T>> {
    adjusted_ratio(panel, fit, &roles.system_units(), effects)
}

/// Ranks descending by ratio; ties keep panel order. Returns ranks aligned
/// with the input.
pub fn rank_ratios<T: Scalar>(ratios: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        ratios[b]
            .partial_cmp(&ratios[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0; ratios.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

/// Compares the target's adjusted ratio against every pure control refitted
/// as if it had been treated.
pub fn placebo_in_space<T: Scalar>(
    panel: &PanelDataset<T>,
    roles: &RoleAssignment,
    target_fit: &ScmFit<T>,
    effects: &[EffectSeries<T>],
    fit_opts: &FitOptions,
    opts: &PlaceboOptions,
) -> Result<PlaceboResult<T>> {
    roles.validate(panel)?;
    if roles.pure_controls.len() < 2 {
        return Err(Error::InvalidRoles("in-space placebo needs at least two pure controls".into()));
    }
    let target = &target_fit.target;
    if roles.is_pure(target) {
        return Err(Error::InvalidRoles(format!("'{target}' is a pure control")));
    }
    let target_ratio = adjust_for_system(panel, roles, target_fit, effects)?;
    let placebo = roles
        .pure_controls
        .par_iter()
        .map(|unit| {
            let donors = match opts.donors {
                PlaceboDonors::PureOnly => roles.restricted_donors(unit),
                PlaceboDonors::AllOthers => roles.unrestricted_donors(panel, unit),
            };
            let fit = fit_unit(panel, unit, &donors, fit_opts)?;
            adjust_for_system(panel, roles, &fit, effects)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<(String, AdjustedRatio<T>)> = Vec::with_capacity(placebo.len() + 1);
    let mut placebo = roles.pure_controls.iter().cloned().zip(placebo).collect::<Vec<_>>();
    placebo.push((target.clone(), target_ratio));
    for unit in panel.units() {
        if let Some(pos) = placebo.iter().position(|(u, _)| u == unit) {
            rows.push(placebo.swap_remove(pos));
        }
    }
    let ranks = rank_ratios(&rows.iter().map(|(_, r)| r.ratio).collect::<Vec<_>>());
    let mut entries: Vec<RatioEntry<T>> = rows
        .into_iter()
        .zip(ranks)
        .map(|((unit, r), rank)| RatioEntry {
            unit,
            pre_rmspe: r.pre_rmspe,
            post_rmspe: r.post_rmspe,
            ratio: r.ratio,
            rank,
        })
        .collect();
    entries.sort_by_key(|e| e.rank);
    let target_rank = entries.iter().find(|e| &e.unit == target).map(|e| e.rank).expect("target ranked");
    let n = entries.len();
    Ok(PlaceboResult {
        target: target.clone(),
        entries,
        target_ratio: target_ratio.ratio,
        target_rank,
        p_value: target_rank as f64 / n as f64,
    })
}

/// Moves the intervention back to `pseudo_t0` (the label of the last
/// pseudo pre-period), drops the real post-period and re-runs the full
/// estimation. Returns the main treated's iSCM gaps over the pseudo post
/// window.
pub fn placebo_in_time<T: Scalar>(
    panel: &PanelDataset<T>,
    roles: &RoleAssignment,
    pseudo_t0: &str,
    fit_opts: &FitOptions,
) -> Result<EffectSeries<T>> {
    let p = panel.period_index(pseudo_t0)?;
    let pre = panel.pre_len();
    if p + 1 >= pre {
        return Err(Error::InvalidConfig(format!(
            "pseudo intervention '{pseudo_t0}' must precede the real one"
        )));
    }
    if p + 1 < 2 {
        return Err(Error::TooFewPrePeriods { required: 2, available: p + 1 });
    }
    let truncated = panel.truncated(pre, p + 1)?;
    let run = run_iscm(&truncated, roles, fit_opts)?;
    let main = &run.effects[0];
    Ok(EffectSeries {
        unit: main.unit.clone(),
        periods: main.periods.clone(),
        values: main.iscm.clone(),
        method: EffectMethod::Iscm,
    })
}
