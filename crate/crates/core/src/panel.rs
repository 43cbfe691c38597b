//! Panel datasets: loading, validation, period splits and predictor matrices.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

/// A named predictor with one value per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor<T> {
    pub name: String,
    pub values: Vec<T>,
}

/// Validated balanced panel. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset<T> {
    units: Vec<String>,
    periods: Vec<String>,
    outcomes: DenseMatrix<T>,
    predictors: Vec<Predictor<T>>,
    pre_len: usize,
}

impl<T: Scalar> PanelDataset<T> {
    /// `pre_len` is the number of pre-intervention periods, i.e. the
    /// intervention period is `periods[pre_len - 1]`.
    pub fn new(
        units: Vec<String>,
        periods: Vec<String>,
        outcomes: DenseMatrix<T>,
        predictors: Vec<Predictor<T>>,
        pre_len: usize,
    ) -> Result<Self> {
        if outcomes.nrows() != units.len() || outcomes.ncols() != periods.len() {
            return Err(Error::DimensionMismatch(format!(
                "outcome matrix is {}x{} for {} units and {} periods",
                outcomes.nrows(),
                outcomes.ncols(),
                units.len(),
                periods.len()
            )));
        }
        check_unique(&units, "unit")?;
        check_unique(&periods, "period")?;
        for (j, unit) in units.iter().enumerate() {
            for (t, period) in periods.iter().enumerate() {
                if !outcomes.get(j, t).is_finite() {
                    return Err(Error::MissingCell {
                        unit: unit.clone(),
                        period: period.clone(),
                    });
                }
            }
        }
        for p in &predictors {
            if p.values.len() != units.len() {
                return Err(Error::DimensionMismatch(format!(
                    "predictor '{}' has {} values for {} units",
                    p.name,
                    p.values.len(),
                    units.len()
                )));
            }
        }
        if pre_len < 2 {
            return Err(Error::TooFewPrePeriods {
                required: 2,
                available: pre_len,
            });
        }
        if pre_len >= periods.len() {
            return Err(Error::NoPostPeriods);
        }
        Ok(Self {
            units,
            periods,
            outcomes,
            predictors,
            pre_len,
        })
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn periods(&self) -> &[String] {
        &self.periods
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn num_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn outcomes(&self) -> &DenseMatrix<T> {
        &self.outcomes
    }

    pub fn predictors(&self) -> &[Predictor<T>] {
        &self.predictors
    }

    /// Number of pre-intervention periods (T₀ as a count).
    pub fn pre_len(&self) -> usize {
        self.pre_len
    }

    pub fn intervention_label(&self) -> &str {
        &self.periods[self.pre_len - 1]
    }

    pub fn unit_index(&self, unit: &str) -> Result<usize> {
        self.units
            .iter()
            .position(|u| u == unit)
            .ok_or_else(|| Error::UnknownUnit(unit.to_string()))
    }

    pub fn period_index(&self, period: &str) -> Result<usize> {
        self.periods
            .iter()
            .position(|p| p == period)
            .ok_or_else(|| Error::UnknownPeriod(period.to_string()))
    }

    pub fn outcome_row(&self, unit: usize) -> &[T] {
        self.outcomes.row(unit)
    }

    pub fn outcome_of(&self, unit: &str) -> Result<&[T]> {
        Ok(self.outcome_row(self.unit_index(unit)?))
    }

    /// `(pre, post)` period indices, 0-based.
    pub fn split_periods(&self) -> (Vec<usize>, Vec<usize>) {
        ((0..self.pre_len).collect(), (self.pre_len..self.periods.len()).collect())
    }

    /// Target predictor vector and donor predictor matrix (k × donors), with
    /// columns in the order of `donors`.
    pub fn predictor_matrices<S: AsRef<str>>(
        &self,
        target: &str,
        donors: &[S],
    ) -> Result<(Vec<T>, DenseMatrix<T>)> {
        let t = self.unit_index(target)?;
        let idx = donors
            .iter()
            .map(|d| self.unit_index(d.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let x1 = self.predictors.iter().map(|p| p.values[t]).collect();
        let x0 = DenseMatrix::from_fn(self.predictors.len(), idx.len(), |k, j| {
            self.predictors[k].values[idx[j]]
        });
        Ok((x1, x0))
    }

    /// Same panel restricted to the first `len` periods with `pre_len`
    /// pre-intervention periods and no predictors. Used by in-time placebos.
    pub fn truncated(&self, len: usize, pre_len: usize) -> Result<Self> {
        if len > self.periods.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot keep {len} of {} periods",
                self.periods.len()
            )));
        }
        let outcomes = DenseMatrix::from_fn(self.units.len(), len, |j, t| *self.outcomes.get(j, t));
        Self::new(
            self.units.clone(),
            self.periods[..len].to_vec(),
            outcomes,
            Vec::new(),
            pre_len,
        )
    }

    /// Same panel with replaced outcomes (same shape).
    pub fn with_outcomes(&self, outcomes: DenseMatrix<T>) -> Result<Self> {
        Self::new(
            self.units.clone(),
            self.periods.clone(),
            outcomes,
            self.predictors.clone(),
            self.pre_len,
        )
    }

    /// Column name used for a predictor when writing CSV.
    fn predictor_column(name: &str) -> String {
        match name {
            "unit" | "time" | "outcome" => format!("predictor_{name}"),
            _ => name.to_string(),
        }
    }

    /// Writes the canonical long format. Predictor values are placed in the
    /// intervention-period row only, so [`Self::csv_schema`] reloads them
    /// exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["unit".to_string(), "time".to_string(), "outcome".to_string()];
        header.extend(self.predictors.iter().map(|p| Self::predictor_column(&p.name)));
        w.write_record(&header)?;
        let t0 = self.pre_len - 1;
        for (j, unit) in self.units.iter().enumerate() {
            for (t, period) in self.periods.iter().enumerate() {
                let mut rec = vec![unit.clone(), period.clone(), self.outcomes.get(j, t).to_string()];
                for p in &self.predictors {
                    rec.push(if t == t0 {
                        p.values[j].to_string()
                    } else {
                        String::new()
                    });
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Schema that reads back a file produced by [`Self::write_csv`].
    pub fn csv_schema(&self) -> PanelSchema {
        let label = self.intervention_label().to_string();
        PanelSchema {
            unit_column: "unit".into(),
            time_column: "time".into(),
            outcome_column: "outcome".into(),
            intervention: label.clone(),
            predictors: self
                .predictors
                .iter()
                .map(|p| PredictorSpec {
                    name: p.name.clone(),
                    column: Self::predictor_column(&p.name),
                    from: Some(label.clone()),
                    to: Some(label.clone()),
                })
                .collect(),
        }
    }
}

fn check_unique(labels: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(Error::InvalidConfig(format!("duplicate {what} label '{l}'")));
        }
    }
    Ok(())
}

/// How a predictor is built from a CSV column: the unit-level mean of
/// `column` over the periods `from..=to` (defaults: the whole pre-period).
/// Empty or `NA` cells are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub name: String,
    pub column: String,
    #[serde(default)]
    pub from: Option<String>,
    #[serde(default)]
    pub to: Option<String>,
}

/// Column mapping for long-format CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub unit_column: String,
    pub time_column: String,
    pub outcome_column: String,
    /// Label of the last pre-intervention period.
    pub intervention: String,
    #[serde(default)]
    pub predictors: Vec<PredictorSpec>,
}

pub fn load_panel<T: Scalar>(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset<T>> {
    let file = std::fs::File::open(path)?;
    read_panel(file, schema)
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

fn parse_cell<T: Scalar>(cell: &str, column: &str, line: u64) -> Result<Option<T>> {
    if is_missing(cell) {
        return Ok(None);
    }
    let v: T = cell.trim().parse().map_err(|_| Error::NonNumericValue {
        line,
        column: column.to_string(),
        value: cell.to_string(),
    })?;
    if v.is_nan() {
        return Ok(None);
    }
    if !v.is_finite() {
        return Err(Error::NonNumericValue {
            line,
            column: column.to_string(),
            value: cell.to_string(),
        });
    }
    Ok(Some(v))
}

/// Reads long-format CSV (header row, one row per unit × period).
///
/// Period labels are opaque: if every label is an integer they are ordered
/// numerically, otherwise by first appearance.
pub fn read_panel<T: Scalar, R: Read>(reader: R, schema: &PanelSchema) -> Result<PanelDataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let unit_col = col(&schema.unit_column)?;
    let time_col = col(&schema.time_column)?;
    let outcome_col = col(&schema.outcome_column)?;
    let mut pred_cols: Vec<(String, usize)> = Vec::new();
    for spec in &schema.predictors {
        if !pred_cols.iter().any(|(c, _)| c == &spec.column) {
            pred_cols.push((spec.column.clone(), col(&spec.column)?));
        }
    }

    let mut units: Vec<String> = Vec::new();
    let mut unit_pos: HashMap<String, usize> = HashMap::new();
    let mut periods: Vec<String> = Vec::new();
    let mut period_pos: HashMap<String, usize> = HashMap::new();
    // (unit, period) -> (outcome, predictor-column values)
    let mut cells: HashMap<(usize, usize), (Option<T>, Vec<Option<T>>)> = HashMap::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let unit = field(unit_col).trim().to_string();
        let period = field(time_col).trim().to_string();
        let u = *unit_pos.entry(unit.clone()).or_insert_with(|| {
            units.push(unit.clone());
            units.len() - 1
        });
        let p = *period_pos.entry(period.clone()).or_insert_with(|| {
            periods.push(period.clone());
            periods.len() - 1
        });
        let outcome = parse_cell::<T>(&field(outcome_col), &schema.outcome_column, line)?;
        let preds = pred_cols
            .iter()
            .map(|(name, c)| parse_cell::<T>(&field(*c), name, line))
            .collect::<Result<Vec<_>>>()?;
        if cells.insert((u, p), (outcome, preds)).is_some() {
            return Err(Error::DuplicateRow { unit, period, line });
        }
    }

    // Period ordering.
    let mut order: Vec<usize> = (0..periods.len()).collect();
    let numeric: Option<Vec<i64>> = periods.iter().map(|p| p.parse::<i64>().ok()).collect();
    if let Some(nums) = &numeric {
        order.sort_by_key(|&i| nums[i]);
    }
    let sorted_periods: Vec<String> = order.iter().map(|&i| periods[i].clone()).collect();

    let mut outcomes = DenseMatrix::from_elem(units.len(), periods.len(), T::zero());
    for (u, unit) in units.iter().enumerate() {
        for (t, &p) in order.iter().enumerate() {
            match cells.get(&(u, p)) {
                Some((Some(y), _)) => outcomes.set(u, t, *y),
                _ => {
                    return Err(Error::MissingCell {
                        unit: unit.clone(),
                        period: periods[p].clone(),
                    })
                }
            }
        }
    }

    let t0 = sorted_periods
        .iter()
        .position(|p| p == &schema.intervention)
        .ok_or_else(|| Error::UnknownPeriod(schema.intervention.clone()))?;
    let pre_len = t0 + 1;
    if pre_len < 2 {
        return Err(Error::TooFewPrePeriods {
            required: 2,
            available: pre_len,
        });
    }

    let index_of = |label: &str| {
        sorted_periods
            .iter()
            .position(|p| p == label)
            .ok_or_else(|| Error::UnknownPeriod(label.to_string()))
    };
    let mut predictors = Vec::with_capacity(schema.predictors.len());
    for spec in &schema.predictors {
        let from = spec.from.as_deref().map(index_of).transpose()?.unwrap_or(0);
        let to = spec.to.as_deref().map(index_of).transpose()?.unwrap_or(t0);
        if from > to || to > t0 {
            return Err(Error::InvalidConfig(format!(
                "predictor '{}' window must be an ordered range inside the pre-period",
                spec.name
            )));
        }
        let c = pred_cols.iter().position(|(name, _)| name == &spec.column).unwrap();
        let mut values = Vec::with_capacity(units.len());
        for (u, unit) in units.iter().enumerate() {
            let mut sum = T::zero();
            let mut count = 0usize;
            for &p in &order[from..=to] {
                if let Some(v) = cells.get(&(u, p)).and_then(|(_, preds)| preds[c]) {
                    sum = sum + v;
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::EmptyPredictorWindow {
                    predictor: spec.name.clone(),
                    unit: unit.clone(),
                });
            }
            values.push(sum / T::cst(count as f64));
        }
        predictors.push(Predictor {
            name: spec.name.clone(),
            values,
        });
    }

    PanelDataset::new(units, sorted_periods, outcomes, predictors, pre_len)
}

/// Partition of units into the main treated unit, the potentially affected
/// units and the pure controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub main_treated: String,
    pub potentially_affected: Vec<String>,
    pub pure_controls: Vec<String>,
}

impl RoleAssignment {
    /// Validates disjointness, coverage of the unit set and a non-empty pure
    /// control group.
    pub fn new<T: Scalar>(
        panel: &PanelDataset<T>,
        main_treated: &str,
        potentially_affected: &[&str],
        pure_controls: &[&str],
    ) -> Result<Self> {
        let roles = Self {
            main_treated: main_treated.to_string(),
            potentially_affected: potentially_affected.iter().map(|s| s.to_string()).collect(),
            pure_controls: pure_controls.iter().map(|s| s.to_string()).collect(),
        };
        roles.validate(panel)?;
        Ok(roles)
    }

    /// Every unit not named as main treated or affected becomes a pure control,
    /// in panel order.
    pub fn with_remaining_pure<T: Scalar>(
        panel: &PanelDataset<T>,
        main_treated: &str,
        potentially_affected: &[&str],
    ) -> Result<Self> {
        let pure: Vec<&str> = panel
            .units()
            .iter()
            .map(String::as_str)
            .filter(|u| *u != main_treated && !potentially_affected.contains(u))
            .collect();
        Self::new(panel, main_treated, potentially_affected, &pure)
    }

    pub fn validate<T: Scalar>(&self, panel: &PanelDataset<T>) -> Result<()> {
        let mut seen = HashSet::new();
        for u in self.all_units() {
            panel.unit_index(u)?;
            if !seen.insert(u) {
                return Err(Error::InvalidRoles(format!("unit '{u}' has more than one role")));
            }
        }
        if let Some(missing) = panel.units().iter().find(|u| !seen.contains(u.as_str())) {
            return Err(Error::InvalidRoles(format!("unit '{missing}' has no role")));
        }
        if self.pure_controls.is_empty() {
            return Err(Error::InvalidRoles("no pure control units".into()));
        }
        Ok(())
    }

    fn all_units(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.main_treated.as_str())
            .chain(self.potentially_affected.iter().map(String::as_str))
            .chain(self.pure_controls.iter().map(String::as_str))
    }

    /// Main treated followed by the affected units: the unknowns of the system.
    pub fn system_units(&self) -> Vec<String> {
        std::iter::once(self.main_treated.clone())
            .chain(self.potentially_affected.iter().cloned())
            .collect()
    }

    /// Size of the linear system (main treated plus affected units).
    pub fn system_size(&self) -> usize {
        1 + self.potentially_affected.len()
    }

    /// Whether `m < J - 2` holds, leaving at least three pure controls.
    pub fn satisfies_size_condition(&self, num_units: usize) -> bool {
        self.system_size() + 2 < num_units
    }

    pub fn is_affected(&self, unit: &str) -> bool {
        self.potentially_affected.iter().any(|u| u == unit)
    }

    pub fn is_pure(&self, unit: &str) -> bool {
        self.pure_controls.iter().any(|u| u == unit)
    }

    /// Unrestricted donor pool: every other unit, in panel order.
    pub fn unrestricted_donors<T: Scalar>(&self, panel: &PanelDataset<T>, target: &str) -> Vec<String> {
        panel.units().iter().filter(|u| *u != target).cloned().collect()
    }

    /// Restricted donor pool: pure controls only (excluding `target`).
    pub fn restricted_donors(&self, target: &str) -> Vec<String> {
        self.pure_controls.iter().filter(|u| *u != target).cloned().collect()
    }
}
