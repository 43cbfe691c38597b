//! Factor-model panels with planted effects and known untreated outcomes.
//!
//! `Yᴺ_jt = λ_j · F_t + ε_jt`. The main treated unit's loadings are a convex
//! mix of other units' loadings, so at zero noise an exact synthetic match
//! exists. Observed outcomes follow the potential-outcome rule: pre-period
//! `Y = Yᴺ` for everyone; post-period the main treated adds `θ_t`, each
//! affected unit adds its `γ_t`, pure controls stay at `Yᴺ`.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`.
//! Replication `r` of an experiment uses stream `r` of that generator
//! (a single panel uses stream 0), so results do not depend on thread
//! scheduling or platform.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::panel::{PanelDataset, RoleAssignment};
use crate::pipeline::run_iscm;
use crate::scalar::Scalar;
use crate::scm::FitOptions;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// An effect over the post-period, indexed from 0 at the first post-period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectPath {
    Constant { value: f64 },
    Linear { start: f64, slope: f64 },
    Values { values: Vec<f64> },
}

impl EffectPath {
    pub fn constant(value: f64) -> Self {
        EffectPath::Constant { value }
    }

    pub fn at(&self, s: usize) -> f64 {
        match self {
            EffectPath::Constant { value } => *value,
            EffectPath::Linear { start, slope } => start + slope * s as f64,
            EffectPath::Values { values } => values[s],
        }
    }

    fn check(&self, post: usize) -> Result<()> {
        let ok = match self {
            EffectPath::Constant { value } => value.is_finite(),
            EffectPath::Linear { start, slope } => start.is_finite() && slope.is_finite(),
            EffectPath::Values { values } => values.len() == post && values.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("effect path must be finite and cover {post} post-periods")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// Number of units `J`.
    pub units: usize,
    /// Number of periods `T`.
    pub periods: usize,
    /// Number of pre-intervention periods `T₀`.
    pub pre_periods: usize,
    /// Number of potentially affected units.
    pub affected: usize,
    pub factors: usize,
    /// Loadings are drawn uniformly from `[loading_low, loading_high]`.
    pub loading_low: f64,
    pub loading_high: f64,
    /// Noise standard deviation `σ`.
    pub noise: f64,
    pub theta: EffectPath,
    /// One path per affected unit, or a single path shared by all.
    pub gamma: Vec<EffectPath>,
    /// Mixing weights over units 2..J (affected first, then pure controls)
    /// defining the main treated's loadings. Defaults to 0.4 on the first
    /// affected unit and the rest split over the first two pure controls.
    pub treated_mix: Option<Vec<f64>>,
    /// Draw each affected unit's loadings as a random convex mix of the pure
    /// controls' loadings, so its own synthetic fit can be exact too.
    pub affected_in_hull: bool,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            units: 10,
            periods: 30,
            pre_periods: 20,
            affected: 1,
            factors: 2,
            loading_low: 0.0,
            loading_high: 1.0,
            noise: 0.0,
            theta: EffectPath::constant(-5.0),
            gamma: vec![EffectPath::constant(-2.0)],
            treated_mix: None,
            affected_in_hull: true,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.affected + 3 >= self.units {
            return bad(format!(
                "{} affected units leave fewer than three pure controls among {} units",
                self.affected, self.units
            ));
        }
        if self.pre_periods < 2 {
            return bad("at least two pre-intervention periods are required".into());
        }
        if self.pre_periods >= self.periods {
            return bad("at least one post-intervention period is required".into());
        }
        if self.factors == 0 {
            return bad("at least one factor is required".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise scale must be finite and nonnegative".into());
        }
        if !(self.loading_low <= self.loading_high && self.loading_low.is_finite() && self.loading_high.is_finite()) {
            return bad("loading bounds must be finite with low <= high".into());
        }
        let post = self.periods - self.pre_periods;
        self.theta.check(post)?;
        if self.affected > 0 && self.gamma.len() != 1 && self.gamma.len() != self.affected {
            return bad(format!("{} gamma paths for {} affected units", self.gamma.len(), self.affected));
        }
        for g in &self.gamma {
            g.check(post)?;
        }
        if let Some(mix) = &self.treated_mix {
            if mix.len() != self.units - 1 {
                return bad(format!("treated_mix needs {} entries", self.units - 1));
            }
            let total: f64 = mix.iter().sum();
            if mix.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return bad("treated_mix must be nonnegative and sum to 1".into());
            }
        }
        Ok(())
    }

    fn gamma_for(&self, i: usize) -> &EffectPath {
        if self.gamma.len() == 1 {
            &self.gamma[0]
        } else {
            &self.gamma[i]
        }
    }

    fn mix(&self) -> Vec<f64> {
        if let Some(mix) = &self.treated_mix {
            return mix.clone();
        }
        let mut mix = vec![0.0; self.units - 1];
        let first_pure = self.affected;
        if self.affected > 0 {
            mix[0] = 0.4;
            mix[first_pure] = 0.3;
            mix[first_pure + 1] = 0.3;
        } else {
            mix[first_pure] = 0.5;
            mix[first_pure + 1] = 0.5;
        }
        mix
    }

    pub fn unit_names(&self) -> Vec<String> {
        let width = self.units.to_string().len();
        (1..=self.units).map(|j| format!("u{j:0width$}")).collect()
    }
}

/// Hidden quantities behind a simulated panel, in panel unit order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T> {
    /// `Yᴺ`, units × periods.
    pub untreated: DenseMatrix<T>,
    /// Planted effect per cell; zero before the intervention and for pure
    /// controls.
    pub effects: DenseMatrix<T>,
}

impl<T: Scalar> GroundTruth<T> {
    /// Truth sidecar: `unit,time,untreated,effect`.
    pub fn write_csv<W: Write>(&self, panel: &PanelDataset<T>, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["unit", "time", "untreated", "effect"])?;
        for (j, unit) in panel.units().iter().enumerate() {
            for (t, period) in panel.periods().iter().enumerate() {
                w.write_record([
                    unit.clone(),
                    period.clone(),
                    self.untreated.get(j, t).to_string(),
                    self.effects.get(j, t).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedPanel<T> {
    pub panel: PanelDataset<T>,
    pub roles: RoleAssignment,
    pub truth: GroundTruth<T>,
    /// Loadings, units × factors.
    pub loadings: DenseMatrix<T>,
}

impl<T: Scalar> SimulatedPanel<T> {
    /// Checks every cell against the potential-outcome rule.
    pub fn conforms(&self) -> bool {
        let pre = self.panel.pre_len();
        let y = self.panel.outcomes();
        (0..self.panel.num_units()).all(|j| {
            let pure = self.roles.is_pure(&self.panel.units()[j]);
            (0..self.panel.num_periods()).all(|t| {
                let n = *self.truth.untreated.get(j, t);
                let e = *self.truth.effects.get(j, t);
                let expected = if t < pre || pure { n } else { n + e };
                (t >= pre && !pure || e == T::zero()) && *y.get(j, t) == expected
            })
        })
    }
}

fn uniform(rng: &mut ChaCha8Rng, low: f64, high: f64) -> f64 {
    if low == high {
        low
    } else {
        rng.gen_range(low..high)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates a panel on stream 0.
pub fn generate<T: Scalar>(config: &SimulationConfig) -> Result<SimulatedPanel<T>> {
    generate_replication(config, 0)
}

/// Generates the panel of replication `rep`.
pub fn generate_replication<T: Scalar>(config: &SimulationConfig, rep: u64) -> Result<SimulatedPanel<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(rep);
    let (j_n, t_n, f_n, m) = (config.units, config.periods, config.factors, config.affected);

    let factors: Vec<Vec<f64>> = (0..t_n)
        .map(|_| (0..f_n).map(|_| 1.0 + normal(&mut rng)).collect())
        .collect();
    let mut loadings = vec![vec![0.0; f_n]; j_n];
    let pure_start = 1 + m;
    for row in loadings.iter_mut().skip(pure_start) {
        for x in row.iter_mut() {
            *x = uniform(&mut rng, config.loading_low, config.loading_high);
        }
    }
    for i in 1..=m {
        if config.affected_in_hull {
            let raw: Vec<f64> = (pure_start..j_n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let total: f64 = raw.iter().sum();
            let mut mixed = vec![0.0; f_n];
            for (p, d) in (pure_start..j_n).zip(&raw) {
                for f in 0..f_n {
                    mixed[f] += d / total * loadings[p][f];
                }
            }
            loadings[i] = mixed;
        } else {
            for f in 0..f_n {
                loadings[i][f] = uniform(&mut rng, config.loading_low, config.loading_high);
            }
        }
    }
    let mix = config.mix();
    let mut main = vec![0.0; f_n];
    for (k, w) in mix.iter().enumerate() {
        for f in 0..f_n {
            main[f] += w * loadings[k + 1][f];
        }
    }
    loadings[0] = main;

    let mut untreated = DenseMatrix::from_elem(j_n, t_n, T::zero());
    let mut effects = DenseMatrix::from_elem(j_n, t_n, T::zero());
    for j in 0..j_n {
        for t in 0..t_n {
            let signal: f64 = (0..f_n).map(|f| loadings[j][f] * factors[t][f]).sum();
            let eps: f64 = if config.noise > 0.0 {
                config.noise * normal(&mut rng)
            } else {
                0.0
            };
            untreated.set(j, t, T::cst(signal + eps));
        }
    }
    for t in config.pre_periods..t_n {
        let s = t - config.pre_periods;
        effects.set(0, t, T::cst(config.theta.at(s)));
        for i in 1..=m {
            effects.set(i, t, T::cst(config.gamma_for(i - 1).at(s)));
        }
    }
    let observed = DenseMatrix::from_fn(j_n, t_n, |j, t| *untreated.get(j, t) + *effects.get(j, t));
    let names = config.unit_names();
    let periods: Vec<String> = (1..=t_n).map(|t| t.to_string()).collect();
    let panel = PanelDataset::new(names.clone(), periods, observed, Vec::new(), config.pre_periods)?;
    let affected: Vec<&str> = names[1..=m].iter().map(String::as_str).collect();
    let roles = RoleAssignment::with_remaining_pure(&panel, &names[0], &affected)?;
    let loadings = DenseMatrix::from_fn(j_n, f_n, |j, f| T::cst(loadings[j][f]));
    Ok(SimulatedPanel { panel, roles, truth: GroundTruth { untreated, effects }, loadings })
}

/// Main-treated errors (`estimate − θ`) of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub replication: u64,
    pub naive_errors: Vec<f64>,
    pub iscm_errors: Vec<f64>,
    pub restricted_errors: Vec<f64>,
    /// `Σ_j ŵ_j γ_jt` over the affected donors of the main fit.
    pub contamination: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mean_abs: f64,
    pub mean: f64,
    pub max_abs: f64,
}

impl ErrorStats {
    fn from_errors<'a>(errors: impl Iterator<Item = &'a f64>) -> Self {
        let (mut n, mut sum, mut abs, mut max) = (0usize, 0.0, 0.0, 0.0f64);
        for &e in errors {
            n += 1;
            sum += e;
            abs += e.abs();
            max = max.max(e.abs());
        }
        let n = n.max(1) as f64;
        Self { mean_abs: abs / n, mean: sum / n, max_abs: max }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoverySummary {
    pub replications: usize,
    pub naive: ErrorStats,
    pub iscm: ErrorStats,
    pub restricted: ErrorStats,
    pub outcomes: Vec<ReplicationOutcome>,
}

fn run_replication(config: &SimulationConfig, rep: u64, opts: &FitOptions) -> Result<ReplicationOutcome> {
    let sim: SimulatedPanel<f64> = generate_replication(config, rep)?;
    let run = run_iscm(&sim.panel, &sim.roles, opts)?;
    let (_, post) = sim.panel.split_periods();
    let main_fit = run.fits.main_unrestricted();
    let main = &run.effects[0];
    let theta: Vec<f64> = post.iter().map(|&t| *sim.truth.effects.get(0, t)).collect();
    let err = |v: &[f64]| v.iter().zip(&theta).map(|(e, th)| e - th).collect::<Vec<_>>();
    let contamination = post
        .iter()
        .map(|&t| {
            sim.roles
                .potentially_affected
                .iter()
                .map(|u| {
                    let j = sim.panel.unit_index(u).expect("affected unit in panel");
                    main_fit.weights.weight_of(u) * sim.truth.effects.get(j, t)
                })
                .sum()
        })
        .collect();
    Ok(ReplicationOutcome {
        replication: rep,
        naive_errors: err(&main.naive),
        iscm_errors: err(&main.iscm),
        restricted_errors: err(&main.restricted),
        contamination,
    })
}

/// Runs the full estimation on `replications` independent panels.
pub fn recovery_experiment(
    config: &SimulationConfig,
    replications: usize,
    opts: &FitOptions,
) -> Result<RecoverySummary> {
    if replications == 0 {
        return Err(Error::InvalidConfig("at least one replication is required".into()));
    }
    config.validate()?;
    let outcomes = (0..replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(config, rep, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoverySummary {
        replications,
        naive: ErrorStats::from_errors(outcomes.iter().flat_map(|o| &o.naive_errors)),
        iscm: ErrorStats::from_errors(outcomes.iter().flat_map(|o| &o.iscm_errors)),
        restricted: ErrorStats::from_errors(outcomes.iter().flat_map(|o| &o.restricted_errors)),
        outcomes,
    })
}
