//! TOML run configuration.

use iscm::diagnostics::CompareOptions;
use iscm::inference::{PlaceboDonors, PlaceboOptions};
use iscm::simulation::SimulationConfig;
use iscm::{Estimator, FitOptions, PanelSchema, PredictorSpec, RoleAssignment, SolverOptions, VSearchOptions};
use serde::Deserialize;
use std::ops::Range;
use std::path::{Path, PathBuf};
use toml::Spanned;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    path: Spanned<String>,
    unit_column: String,
    time_column: String,
    outcome_column: String,
    intervention: Spanned<String>,
    #[serde(default)]
    predictors: Vec<PredictorSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoles {
    main_treated: Spanned<String>,
    #[serde(default)]
    potentially_affected: Vec<Spanned<String>>,
    #[serde(default)]
    pure_controls: Option<Vec<Spanned<String>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCompare {
    target: Option<Spanned<String>>,
    weight_threshold: Option<f64>,
    relative_tolerance: Option<f64>,
    validation_split: Option<bool>,
}

impl RawCompare {
    fn options(&self) -> CompareOptions {
        let d = CompareOptions::default();
        CompareOptions {
            weight_threshold: self.weight_threshold.unwrap_or(d.weight_threshold),
            relative_tolerance: self.relative_tolerance.unwrap_or(d.relative_tolerance),
            validation_split: self.validation_split.unwrap_or(d.validation_split),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawPlacebo {
    target: Option<Spanned<String>>,
    pseudo_intervention: Option<Spanned<String>>,
    donors: PlaceboDonors,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawSimulation {
    replications: usize,
    #[serde(flatten)]
    config: SimulationConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data: Option<RawData>,
    roles: Option<RawRoles>,
    #[serde(default)]
    estimator: Estimator,
    #[serde(default)]
    v_search: VSearchOptions,
    #[serde(default)]
    solver: SolverOptions,
    #[serde(default)]
    compare: RawCompare,
    #[serde(default)]
    placebo: RawPlacebo,
    simulation: Option<RawSimulation>,
    output: Option<String>,
    seed: Option<u64>,
}

/// A named unit together with the config line it came from.
#[derive(Debug, Clone)]
pub struct Located {
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub path: PathBuf,
    pub path_line: usize,
    pub schema: PanelSchema,
    pub intervention_line: usize,
}

#[derive(Debug, Clone)]
pub struct RolesConfig {
    pub main_treated: Located,
    pub potentially_affected: Vec<Located>,
    pub pure_controls: Option<Vec<Located>>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<DataConfig>,
    pub roles: Option<RolesConfig>,
    pub fit: FitOptions,
    pub compare_target: Option<Located>,
    pub compare: CompareOptions,
    pub placebo_target: Option<Located>,
    pub pseudo_intervention: Option<Located>,
    pub placebo: PlaceboOptions,
    pub simulation: Option<SimulationConfig>,
    pub replications: usize,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

fn locate(text: &str, s: Spanned<String>) -> Located {
    let line = line_of(text, s.span());
    Located { value: s.into_inner(), line }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            match e.span() {
                Some(span) => ConfigError(format!("line {}: {msg}", line_of(text, span))),
                None => ConfigError(msg),
            }
        })?;
        let data = raw.data.map(|d| {
            let path_line = line_of(text, d.path.span());
            let intervention_line = line_of(text, d.intervention.span());
            DataConfig {
                path: base_dir.join(d.path.into_inner()),
                path_line,
                intervention_line,
                schema: PanelSchema {
                    unit_column: d.unit_column,
                    time_column: d.time_column,
                    outcome_column: d.outcome_column,
                    intervention: d.intervention.into_inner(),
                    predictors: d.predictors,
                },
            }
        });
        let roles = raw.roles.map(|r| RolesConfig {
            main_treated: locate(text, r.main_treated),
            potentially_affected: r.potentially_affected.into_iter().map(|s| locate(text, s)).collect(),
            pure_controls: r.pure_controls.map(|v| v.into_iter().map(|s| locate(text, s)).collect()),
        });
        if let Estimator::Penalized { lambda_grid } = &raw.estimator {
            if lambda_grid.is_empty() {
                return Err(ConfigError("[estimator]: lambda_grid must not be empty".into()));
            }
        }
        Ok(Self {
            data,
            roles,
            fit: FitOptions { estimator: raw.estimator, v_search: raw.v_search, solver: raw.solver },
            compare: raw.compare.options(),
            compare_target: raw.compare.target.map(|s| locate(text, s)),
            placebo_target: raw.placebo.target.map(|s| locate(text, s)),
            pseudo_intervention: raw.placebo.pseudo_intervention.map(|s| locate(text, s)),
            placebo: PlaceboOptions { donors: raw.placebo.donors },
            replications: raw.simulation.as_ref().map_or(0, |s| s.replications),
            simulation: raw.simulation.map(|s| s.config),
            output: raw.output.map(|o| base_dir.join(o)),
            seed: raw.seed,
        })
    }

    pub fn data(&self) -> Result<&DataConfig, ConfigError> {
        self.data.as_ref().ok_or_else(|| ConfigError("missing [data] section".into()))
    }

    pub fn roles_config(&self) -> Result<&RolesConfig, ConfigError> {
        self.roles.as_ref().ok_or_else(|| ConfigError("missing [roles] section".into()))
    }

    /// Resolves the role assignment against the loaded panel's units.
    pub fn roles(&self, units: &[String]) -> Result<RoleAssignment, ConfigError> {
        let r = self.roles_config()?;
        let check = |l: &Located| {
            if units.contains(&l.value) {
                Ok(l.value.clone())
            } else {
                Err(ConfigError(format!("line {}: unit '{}' is not in the panel", l.line, l.value)))
            }
        };
        let main = check(&r.main_treated)?;
        let affected = r.potentially_affected.iter().map(check).collect::<Result<Vec<_>, _>>()?;
        let pure = match &r.pure_controls {
            Some(list) => list.iter().map(check).collect::<Result<Vec<_>, _>>()?,
            None => units
                .iter()
                .filter(|u| **u != main && !affected.contains(u))
                .cloned()
                .collect(),
        };
        Ok(RoleAssignment { main_treated: main, potentially_affected: affected, pure_controls: pure })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "seed = 1\n[estimator]\nkind = \"bogus\"\n";
        let err = RunConfig::parse(text, Path::new(".")).unwrap_err();
        assert!(err.0.starts_with("line 3"), "{}", err.0);
        let text = "seed = 1\n\n[data]\nnope = 2\n";
        let err = RunConfig::parse(text, Path::new(".")).unwrap_err();
        assert!(err.0.contains("line "), "{}", err.0);
    }

    #[test]
    fn unknown_unit_points_at_its_line() {
        let text = "[roles]\nmain_treated = \"a\"\npotentially_affected = [\"zz\"]\n";
        let cfg = RunConfig::parse(text, Path::new(".")).unwrap();
        let units = vec!["a".to_string(), "b".to_string()];
        let err = cfg.roles(&units).unwrap_err();
        assert!(err.0.starts_with("line 3: unit 'zz'"), "{}", err.0);
    }

    #[test]
    fn remaining_units_become_pure_controls() {
        let text = "[roles]\nmain_treated = \"a\"\npotentially_affected = [\"c\"]\n";
        let cfg = RunConfig::parse(text, Path::new(".")).unwrap();
        let units: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let roles = cfg.roles(&units).unwrap();
        assert_eq!(roles.pure_controls, vec!["b", "d"]);
    }

    #[test]
    fn full_config() {
        let text = r#"
output = "out"
seed = 3

[data]
path = "panel.csv"
unit_column = "unit"
time_column = "time"
outcome_column = "outcome"
intervention = "1990"

[[data.predictors]]
name = "trade"
column = "trade"
from = "1981"

[roles]
main_treated = "a"

[estimator]
kind = "penalized"
lambda_grid = [0.0, 0.1]

[v_search]
starts = 4

[compare]
weight_threshold = 0.1

[placebo]
donors = "all_others"
pseudo_intervention = "1980"

[simulation]
units = 8
replications = 5
"#;
        let cfg = RunConfig::parse(text, Path::new("/tmp/x")).unwrap();
        assert_eq!(cfg.data.as_ref().unwrap().path, Path::new("/tmp/x/panel.csv"));
        assert_eq!(cfg.fit.v_search.starts, 4);
        assert_eq!(cfg.compare.weight_threshold, 0.1);
        assert_eq!(cfg.replications, 5);
        assert_eq!(cfg.simulation.unwrap().units, 8);
        assert_eq!(cfg.pseudo_intervention.unwrap().line, 32);
    }
}
