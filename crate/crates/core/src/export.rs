//! CSV writers (full precision) and plain-text reports (rounded).

use crate::diagnostics::{BalanceTable, SpecComparison};
use crate::error::Result;
use crate::inference::PlaceboResult;
use crate::iscm::{InvertibilityReport, OmegaSystem, SingularityFlag, SystemWarning};
use crate::panel::PanelDataset;
use crate::pipeline::UnitEffects;
use crate::scalar::Scalar;
use crate::scm::ScmFit;
use std::fmt::Write as _;
use std::io::Write;

/// `target,specification,donor,weight`, donors by descending weight.
pub fn write_weights_csv<T: Scalar, W: Write>(writer: W, fits: &[(&str, &ScmFit<T>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["target", "specification", "donor", "weight"])?;
    for (spec, fit) in fits {
        for (donor, weight) in fit.weights.ranked() {
            w.write_record([fit.target.as_str(), spec, donor, &weight.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `unit,specification,time,actual,synthetic,gap`.
pub fn write_gaps_csv<T: Scalar, W: Write>(
    writer: W,
    panel: &PanelDataset<T>,
    fits: &[(&str, &ScmFit<T>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit", "specification", "time", "actual", "synthetic", "gap"])?;
    for (spec, fit) in fits {
        let actual = panel.outcome_of(&fit.target)?;
        for (t, period) in panel.periods().iter().enumerate() {
            let (a, s) = (actual[t], fit.synthetic_path[t]);
            w.write_record([
                fit.target.clone(),
                spec.to_string(),
                period.clone(),
                a.to_string(),
                s.to_string(),
                (a - s).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_balance_csv<T: Scalar, W: Write>(writer: W, table: &BalanceTable<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["predictor", "observed", "unrestricted", "restricted", "unrestricted_bias", "restricted_bias"])?;
    for r in &table.rows {
        w.write_record([
            r.predictor.clone(),
            r.observed.to_string(),
            r.unrestricted.to_string(),
            r.restricted.to_string(),
            r.unrestricted_bias.to_string(),
            r.restricted_bias.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `unit,pre_rmspe,post_rmspe,ratio,rank`, by rank.
pub fn write_ratios_csv<T: Scalar, W: Write>(writer: W, result: &PlaceboResult<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit", "pre_rmspe", "post_rmspe", "ratio", "rank"])?;
    for e in &result.entries {
        w.write_record([
            e.unit.clone(),
            e.pre_rmspe.to_string(),
            e.post_rmspe.to_string(),
            e.ratio.to_string(),
            e.rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_omega_csv<T: Scalar, W: Write>(writer: W, system: &OmegaSystem<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string()];
    header.extend(system.units.iter().cloned());
    w.write_record(&header)?;
    for (i, unit) in system.units.iter().enumerate() {
        let mut rec = vec![unit.clone()];
        rec.extend(system.omega.row(i).iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `period,unit,naive,iscm,restricted`, period-major.
pub fn write_effects_csv<T: Scalar, W: Write>(writer: W, effects: &[UnitEffects<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["period", "unit", "naive", "iscm", "restricted"])?;
    let periods = effects.first().map(|e| e.periods.clone()).unwrap_or_default();
    for (p, period) in periods.iter().enumerate() {
        for e in effects {
            w.write_record([
                period.clone(),
                e.unit.clone(),
                e.naive[p].to_string(),
                e.iscm[p].to_string(),
                e.restricted[p].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).chain(std::iter::once(header[c].len())).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        for (c, cell) in cells.iter().enumerate() {
            if c == 0 {
                let _ = write!(out, "{:<w$}", cell, w = widths[c]);
            } else {
                let _ = write!(out, "  {:>w$}", cell, w = widths[c]);
            }
        }
        out.push('\n');
    };
    line(&mut out, header);
    for r in rows {
        line(&mut out, r);
    }
    out
}

/// Units as rows, one weight column per fit; `-` marks units outside the
/// donor pool.
pub fn weights_text<T: Scalar>(panel: &PanelDataset<T>, fits: &[(&str, &ScmFit<T>)]) -> String {
    let mut header = vec!["unit".to_string()];
    header.extend(fits.iter().map(|(label, _)| label.to_string()));
    let rows: Vec<Vec<String>> = panel
        .units()
        .iter()
        .map(|u| {
            let mut row = vec![u.clone()];
            row.extend(fits.iter().map(|(_, f)| {
                if f.weights.contains(u) {
                    format!("{:.3}", f.weights.weight_of(u).to_f64_lossy())
                } else {
                    "-".to_string()
                }
            }));
            row
        })
        .collect();
    table(&header, &rows)
}

pub fn balance_text<T: Scalar>(balance: &BalanceTable<T>) -> String {
    let header: Vec<String> = ["predictor", "observed", "unrestricted", "restricted", "unrestricted bias", "restricted bias"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let f = |x: T| format!("{:.2}", x.to_f64_lossy());
    let rows: Vec<Vec<String>> = balance
        .rows
        .iter()
        .map(|r| {
            vec![
                r.predictor.clone(),
                f(r.observed),
                f(r.unrestricted),
                f(r.restricted),
                f(r.unrestricted_bias),
                f(r.restricted_bias),
            ]
        })
        .collect();
    table(&header, &rows)
}

pub fn fit_summary_text<T: Scalar>(label: &str, fit: &ScmFit<T>) -> String {
    let mut out = format!(
        "{label} fit for {}: pre-RMSPE {:.2}, post-RMSPE {:.2}",
        fit.target,
        fit.pre_rmspe.to_f64_lossy(),
        fit.post_rmspe.to_f64_lossy()
    );
    if let Some(l) = fit.penalty_lambda {
        let _ = write!(out, ", lambda {}", l.to_f64_lossy());
    }
    out.push('\n');
    if !fit.v.values.is_empty() {
        out.push_str("  V:");
        for (n, v) in fit.v.names.iter().zip(&fit.v.values) {
            let _ = write!(out, " {n}={:.3}", v.to_f64_lossy());
        }
        out.push('\n');
    }
    out
}

pub fn comparison_text<T: Scalar>(cmp: &SpecComparison<T>) -> String {
    let mut out = format!("Specification comparison for {}\n", cmp.target);
    out.push_str("Weights on potentially affected units (unrestricted):\n");
    for (u, w) in &cmp.affected_weights {
        let _ = writeln!(out, "  {u}: {:.3}", w.to_f64_lossy());
    }
    out.push_str(&fit_summary_text("unrestricted", &cmp.unrestricted));
    out.push_str(&fit_summary_text("restricted", &cmp.restricted));
    let _ = writeln!(
        out,
        "Balance norm: unrestricted {:.4}, restricted {:.4}",
        cmp.balance_norm_unrestricted.to_f64_lossy(),
        cmp.balance_norm_restricted.to_f64_lossy()
    );
    if let Some(v) = &cmp.validation {
        let _ = writeln!(
            out,
            "Validation RMSPE: unrestricted {:.2}, restricted {:.2}",
            v.unrestricted.to_f64_lossy(),
            v.restricted.to_f64_lossy()
        );
    }
    out.push('\n');
    out.push_str(&balance_text(&cmp.balance));
    let _ = writeln!(out, "\nRecommendation: {}", cmp.recommendation.as_str());
    out
}

pub fn invertibility_text<T: Scalar>(report: &InvertibilityReport<T>) -> String {
    let mut out = format!(
        "det(Omega) = {:.4}\ncondition estimate = {:.4}\n",
        report.determinant_f64(),
        report.condition_estimate
    );
    out.push_str(if report.singular { "status: singular\n" } else { "status: invertible\n" });
    for flag in &report.singular_flags {
        match flag {
            SingularityFlag::ReciprocalUnitWeights { i, j } => {
                let _ = writeln!(out, "  rows {i} and {j} give each other weight 1");
            }
            SingularityFlag::ZeroPureControlWeight => {
                out.push_str("  no row places weight on pure controls\n");
            }
        }
    }
    for warning in &report.warnings {
        match warning {
            SystemWarning::IllConditioned { condition } => {
                let _ = writeln!(out, "  warning: ill-conditioned (estimate {condition:.3e})");
            }
            SystemWarning::LargeWeight { row, col, value } => {
                let _ = writeln!(out, "  warning: |weight| {value:.3} > 1 at ({row}, {col})");
            }
        }
    }
    out
}

pub fn effects_text<T: Scalar>(effects: &[UnitEffects<T>]) -> String {
    let header: Vec<String> = ["period", "unit", "naive", "iscm", "restricted"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    if let Some(first) = effects.first() {
        for (p, period) in first.periods.iter().enumerate() {
            for e in effects {
                rows.push(vec![
                    period.clone(),
                    e.unit.clone(),
                    format!("{:.2}", e.naive[p].to_f64_lossy()),
                    format!("{:.2}", e.iscm[p].to_f64_lossy()),
                    format!("{:.2}", e.restricted[p].to_f64_lossy()),
                ]);
            }
        }
    }
    table(&header, &rows)
}

pub fn ratios_text<T: Scalar>(result: &PlaceboResult<T>) -> String {
    let header: Vec<String> = ["rank", "unit", "pre RMSPE", "post RMSPE", "ratio"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = result
        .entries
        .iter()
        .map(|e| {
            vec![
                e.rank.to_string(),
                e.unit.clone(),
                format!("{:.2}", e.pre_rmspe.to_f64_lossy()),
                format!("{:.2}", e.post_rmspe.to_f64_lossy()),
                format!("{:.3}", e.ratio.to_f64_lossy()),
            ]
        })
        .collect();
    let mut out = table(&header, &rows);
    let _ = writeln!(
        out,
        "\n{} ranks {} of {} (p = {:.4})",
        result.target,
        result.target_rank,
        result.entries.len(),
        result.p_value
    );
    out
}
