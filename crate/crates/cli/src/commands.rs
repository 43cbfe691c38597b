//! Subcommand implementations. Each writes its files into the output
//! directory and returns an error classified by [`Failure`].

use crate::config::{ConfigError, RunConfig};
use iscm::diagnostics::compare_specs;
use iscm::export;
use iscm::inference::{placebo_in_space, placebo_in_time};
use iscm::iscm::check_invertibility;
use iscm::pipeline::{fit_system, solve_run, SystemFits};
use iscm::simulation::{generate, recovery_experiment, SimulatedPanel};
use iscm::{load_panel, Panel, RoleAssignment};
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or input data (exit code 2).
    Input(String),
    /// Estimation failed (exit code 1).
    Estimation(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Estimation(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Estimation(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.0)
    }
}

impl From<iscm::Error> for Failure {
    fn from(e: iscm::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Estimation(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

pub struct Context {
    pub config: RunConfig,
    pub output: PathBuf,
}

impl Context {
    fn create(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        std::fs::create_dir_all(&self.output)?;
        Ok(BufWriter::new(File::create(self.output.join(name))?))
    }

    fn write_text(&self, name: &str, text: &str) -> CmdResult {
        std::fs::create_dir_all(&self.output)?;
        std::fs::write(self.output.join(name), text)?;
        Ok(())
    }

    fn load(&self) -> Result<(Panel, RoleAssignment), Failure> {
        let data = self.config.data()?;
        let panel: Panel = load_panel(&data.path, &data.schema).map_err(|e| match e {
            iscm::Error::Io(io) => Failure::Input(format!(
                "line {}: cannot read '{}': {io}",
                data.path_line,
                data.path.display()
            )),
            iscm::Error::UnknownPeriod(p) => Failure::Input(format!(
                "line {}: period '{p}' is not in the panel",
                data.intervention_line
            )),
            other => Failure::from(other).prefixed(&data.path),
        })?;
        let roles = self.config.roles(panel.units())?;
        roles.validate(&panel)?;
        Ok((panel, roles))
    }
}

impl Failure {
    fn prefixed(self, path: &Path) -> Self {
        match self {
            Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
            Failure::Estimation(m) => Failure::Estimation(format!("{}: {m}", path.display())),
        }
    }
}

fn fit_pairs(fits: &SystemFits<f64>) -> Vec<(&'static str, &iscm::Fit)> {
    fits.unrestricted
        .iter()
        .map(|f| ("unrestricted", f))
        .chain(fits.restricted.iter().map(|f| ("restricted", f)))
        .collect()
}

fn weights_report(panel: &Panel, fits: &SystemFits<f64>) -> String {
    let labels: Vec<String> = fits
        .unrestricted
        .iter()
        .map(|f| format!("{} (unrestricted)", f.target))
        .chain(fits.restricted.iter().map(|f| format!("{} (restricted)", f.target)))
        .collect();
    let columns: Vec<(&str, &iscm::Fit)> = labels
        .iter()
        .map(String::as_str)
        .zip(fits.unrestricted.iter().chain(&fits.restricted))
        .collect();
    let mut out = String::from("Synthetic control weights\n\n");
    out.push_str(&export::weights_text(panel, &columns));
    out.push('\n');
    for (label, fit) in fit_pairs(fits) {
        out.push_str(&export::fit_summary_text(label, fit));
    }
    out
}

fn write_fits(ctx: &Context, panel: &Panel, fits: &SystemFits<f64>) -> CmdResult {
    let pairs = fit_pairs(fits);
    export::write_weights_csv(ctx.create("weights.csv")?, &pairs)?;
    export::write_gaps_csv(ctx.create("gaps.csv")?, panel, &pairs)?;
    Ok(())
}

pub fn fit(ctx: &Context) -> CmdResult {
    let (panel, roles) = ctx.load()?;
    let fits = fit_system(&panel, &roles, &ctx.config.fit)?;
    write_fits(ctx, &panel, &fits)?;
    ctx.write_text("report.txt", &weights_report(&panel, &fits))
}

pub fn compare(ctx: &Context) -> CmdResult {
    let (panel, roles) = ctx.load()?;
    let target = match &ctx.config.compare_target {
        Some(t) if panel.units().contains(&t.value) => t.value.clone(),
        Some(t) => {
            return Err(Failure::Input(format!("line {}: unit '{}' is not in the panel", t.line, t.value)))
        }
        None => roles.main_treated.clone(),
    };
    let cmp = compare_specs(&panel, &roles, &target, &ctx.config.fit, &ctx.config.compare)?;
    let pairs = [("unrestricted", &cmp.unrestricted), ("restricted", &cmp.restricted)];
    export::write_weights_csv(ctx.create("weights.csv")?, &pairs)?;
    export::write_gaps_csv(ctx.create("gaps.csv")?, &panel, &pairs)?;
    export::write_balance_csv(ctx.create("balance.csv")?, &cmp.balance)?;
    let mut report = export::comparison_text(&cmp);
    report.push('\n');
    report.push_str(&export::weights_text(&panel, &pairs));
    ctx.write_text("report.txt", &report)
}

pub fn iscm(ctx: &Context) -> CmdResult {
    let (panel, roles) = ctx.load()?;
    let fits = fit_system(&panel, &roles, &ctx.config.fit)?;
    write_fits(ctx, &panel, &fits)?;
    let system = fits.system(&roles, &panel)?;
    export::write_omega_csv(ctx.create("omega.csv")?, &system)?;
    let report = check_invertibility(&system.omega)?;
    let mut text = weights_report(&panel, &fits);
    text.push('\n');
    text.push_str(&export::invertibility_text(&report));
    if report.singular {
        ctx.write_text("report.txt", &text)?;
        return Err(Failure::Estimation(format!(
            "Omega is singular (det = {:e}); effects are not identified",
            report.determinant_f64()
        )));
    }
    let run = solve_run(&panel, &roles, fits)?;
    export::write_effects_csv(ctx.create("effects.csv")?, &run.effects)?;
    text.push('\n');
    text.push_str(&export::effects_text(&run.effects));
    ctx.write_text("report.txt", &text)
}

pub fn placebo(ctx: &Context) -> CmdResult {
    let (panel, roles) = ctx.load()?;
    let fits = fit_system(&panel, &roles, &ctx.config.fit)?;
    let run = solve_run(&panel, &roles, fits)?;
    let target = match &ctx.config.placebo_target {
        Some(t) => run.fits.unrestricted_for(&t.value).ok_or_else(|| {
            Failure::Input(format!(
                "line {}: '{}' is not the main treated or an affected unit",
                t.line, t.value
            ))
        })?,
        None => run.fits.main_unrestricted(),
    };
    let series = run.iscm_series();
    let result = placebo_in_space(&panel, &roles, target, &series, &ctx.config.fit, &ctx.config.placebo)?;
    export::write_ratios_csv(ctx.create("ratios.csv")?, &result)?;
    export::write_effects_csv(ctx.create("effects.csv")?, &run.effects)?;
    let mut text = String::from("In-space placebo (post/pre RMSPE ratios)\n\n");
    text.push_str(&export::ratios_text(&result));
    if let Some(p) = &ctx.config.pseudo_intervention {
        let pseudo = placebo_in_time(&panel, &roles, &p.value, &ctx.config.fit).map_err(|e| match e {
            iscm::Error::UnknownPeriod(_) => {
                Failure::Input(format!("line {}: period '{}' is not in the panel", p.line, p.value))
            }
            other => Failure::from(other),
        })?;
        let mut w = csv::Writer::from_writer(ctx.create("in_time.csv")?);
        w.write_record(["period", "unit", "gap"]).map_err(iscm::Error::from)?;
        let _ = writeln!(text, "\nIn-time placebo with intervention after {}", p.value);
        for (period, v) in pseudo.periods.iter().zip(&pseudo.values) {
            w.write_record([period.as_str(), pseudo.unit.as_str(), &v.to_string()])
                .map_err(iscm::Error::from)?;
            let _ = writeln!(text, "  {period}: {v:.2}");
        }
        w.flush()?;
    }
    ctx.write_text("report.txt", &text)
}

pub fn simulate(ctx: &Context) -> CmdResult {
    let mut cfg = ctx
        .config
        .simulation
        .clone()
        .ok_or_else(|| Failure::Input("missing [simulation] section".into()))?;
    if let Some(seed) = ctx.config.seed {
        cfg.seed = seed;
    }
    let sim: SimulatedPanel<f64> = generate(&cfg)?;
    sim.panel.write_csv(ctx.create("panel.csv")?)?;
    sim.truth.write_csv(&sim.panel, ctx.create("truth.csv")?)?;
    let mut text = format!(
        "Simulated panel: {} units, {} periods ({} pre), seed {}\nmain treated: {}\naffected: {}\n",
        sim.panel.num_units(),
        sim.panel.num_periods(),
        sim.panel.pre_len(),
        cfg.seed,
        sim.roles.main_treated,
        sim.roles.potentially_affected.join(", ")
    );
    let conforms = sim.conforms();
    let _ = writeln!(text, "potential-outcome check: {}", if conforms { "pass" } else { "FAIL" });
    if !conforms {
        ctx.write_text("report.txt", &text)?;
        return Err(Failure::Estimation("generated panel violates the potential-outcome rule".into()));
    }
    if ctx.config.replications > 0 {
        let s = recovery_experiment(&cfg, ctx.config.replications, &ctx.config.fit)?;
        let mut w = csv::Writer::from_writer(ctx.create("recovery.csv")?);
        w.write_record(["replication", "post_index", "naive_error", "iscm_error", "restricted_error", "contamination"])
            .map_err(iscm::Error::from)?;
        for o in &s.outcomes {
            for p in 0..o.naive_errors.len() {
                w.write_record([
                    o.replication.to_string(),
                    p.to_string(),
                    o.naive_errors[p].to_string(),
                    o.iscm_errors[p].to_string(),
                    o.restricted_errors[p].to_string(),
                    o.contamination[p].to_string(),
                ])
                .map_err(iscm::Error::from)?;
            }
        }
        w.flush()?;
        let _ = writeln!(text, "\nRecovery over {} replications (main treated effect)", s.replications);
        let _ = writeln!(text, "{:<12}{:>14}{:>14}{:>14}", "estimator", "mean |error|", "mean error", "max |error|");
        for (name, st) in [("naive", s.naive), ("iscm", s.iscm), ("restricted", s.restricted)] {
            let _ = writeln!(text, "{name:<12}{:>14.6}{:>14.6}{:>14.6}", st.mean_abs, st.mean, st.max_abs);
        }
    }
    ctx.write_text("report.txt", &text)
}
