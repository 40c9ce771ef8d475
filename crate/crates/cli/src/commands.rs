use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use twospeed::evolution::{
    entropy_identity_residual, estimate_decay, evolve, envelope_check, DecayEstimate,
    EnvelopeCheck, TimeSeries,
};
use twospeed::fields::{ReciprocalDifference, ScalarField, ValidationReport, Validator};
use twospeed::generator::{assemble, GeneratorMatrix, Grid};
use twospeed::spectral::{
    psi_sweep_with, semigroup_bound_check, spectrum, PsiEstimate, SemigroupReport, SpectrumReport,
};
use twospeed::stationary_phase::{lemma_sweep_with, PhaseSweep, SweepOptions};
use twospeed::steady_state::{solve_steady, steady_residual, Matrix2, SteadyState};

use crate::config::{Initial, PsiChoice, RunConfig};
use crate::error::{CliError, CliResult};

/// Random states in the dissipativity probe.
pub const DISSIPATIVITY_TRIALS: usize = 1000;
/// Allowed shortfall of the fitted decay rate below the resolvent gap.
pub const ALPHA_TOL: f64 = 0.05;
/// Allowed shortfall of the spectral gap below the resolvent gap.
pub const ABSCISSA_TOL: f64 = 1e-6;
/// The gap on the fine grid must keep at least this fraction of the coarse-grid gap.
pub const REFINEMENT_RATIO: f64 = 0.5;

/// Everything a command needs besides the config.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub allow_degenerate: bool,
    pub export_matrix: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub config_hash: String,
    pub n: usize,
    pub version: &'static str,
    pub seed: u64,
    pub command: &'static str,
}

impl Context {
    pub fn new(config: RunConfig, out: Option<PathBuf>, seed: u64) -> Self {
        let out_dir = out.unwrap_or_else(|| config.output.dir.clone());
        Context {
            config,
            out_dir,
            seed,
            allow_degenerate: false,
            export_matrix: false,
        }
    }

    fn meta(&self, command: &'static str) -> Meta {
        Meta {
            config_hash: self.config.hash.clone(),
            n: self.config.grid.n,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            command,
        }
    }

    fn header(&self, n: usize) -> String {
        format!(
            "config_hash={} n={} version={} seed={}",
            self.config.hash,
            n,
            env!("CARGO_PKG_VERSION"),
            self.seed
        )
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    fn write(&self, file: &str, bytes: &[u8]) -> CliResult<()> {
        fs::create_dir_all(&self.out_dir).map_err(|source| CliError::Output {
            path: self.out_dir.clone(),
            source,
        })?;
        let path = self.path(file);
        fs::write(&path, bytes).map_err(|source| CliError::Output { path, source })
    }

    fn write_csv<F>(&self, file: &str, n: usize, emit: F) -> CliResult<()>
    where
        F: FnOnce(&mut Vec<u8>, Option<&str>) -> twospeed::Result<()>,
    {
        if !self.config.output.csv() {
            return Ok(());
        }
        let mut buf = Vec::new();
        emit(&mut buf, Some(&self.header(n)))?;
        self.write(file, &buf)
    }

    fn write_json<T: Serialize>(&self, file: &str, value: &T) -> CliResult<()> {
        if !self.config.output.json() {
            return Ok(());
        }
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Config(format!("cannot serialize {file}: {e}")))?;
        text.push('\n');
        self.write(file, text.as_bytes())
    }

    fn generator(&self, n: usize) -> CliResult<GeneratorMatrix> {
        let c = &self.config;
        Ok(assemble(&c.b1, &c.b2, &c.sigma, Grid::new(n)?)?)
    }
}

/// Result of a command: the line printed on success.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub summary: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Assumptions {
    pub assumption1: ValidationReport,
    pub assumption2: ValidationReport,
}

impl Assumptions {
    pub fn passed(&self) -> bool {
        self.assumption1.passed && self.assumption2.passed
    }

    fn detail(&self) -> String {
        [("fields", &self.assumption1), ("coupling", &self.assumption2)]
            .iter()
            .filter(|(_, r)| !r.passed)
            .map(|(label, r)| format!("[{label}] {}", r.detail))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn assess(ctx: &Context) -> CliResult<Assumptions> {
    let c = &ctx.config;
    let v = Validator::default();
    Ok(Assumptions {
        assumption1: v.assumption1(&c.b1, &c.b2),
        assumption2: v.assumption2(&c.b1, &c.b2, &c.sigma)?,
    })
}

fn check_assumptions(ctx: &Context) -> CliResult<Assumptions> {
    let a = assess(ctx)?;
    if !a.passed() && !ctx.allow_degenerate {
        return Err(CliError::Assumption(a.detail()));
    }
    Ok(a)
}

#[derive(Serialize)]
struct ValidateJson<'a> {
    meta: Meta,
    passed: bool,
    #[serde(flatten)]
    assumptions: &'a Assumptions,
}

pub fn cmd_validate(ctx: &Context) -> CliResult<Outcome> {
    let a = assess(ctx)?;
    ctx.write_json(
        "validate.report.json",
        &ValidateJson {
            meta: ctx.meta("validate"),
            passed: a.passed(),
            assumptions: &a,
        },
    )?;
    if !a.passed() {
        if !ctx.allow_degenerate {
            return Err(CliError::Assumption(a.detail()));
        }
        return Ok(Outcome {
            summary: format!("validate: assumptions fail (allowed): {}", a.detail()),
        });
    }
    Ok(Outcome {
        summary: format!(
            "validate: ok, min |b| = {:e}, max |b1 - b2| = {:e}",
            a.assumption1.min_abs_value, a.assumption1.max_difference
        ),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SteadySummary {
    pub residual: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub component_masses: [f64; 2],
    pub monodromy: Matrix2,
}

fn run_steady(ctx: &Context) -> CliResult<(SteadyState, SteadySummary)> {
    let c = &ctx.config;
    let ss = solve_steady(&c.b1, &c.b2, &c.sigma, c.grid.n)?;
    let residual = steady_residual(&ss, &c.b1, &c.b2, &c.sigma)?;
    ctx.write_csv("steady.csv", c.grid.n, |out, h| ss.write_csv(out, h))?;
    let summary = SteadySummary {
        residual,
        lower_bound: ss.lower_bound,
        upper_bound: ss.upper_bound,
        component_masses: ss.component_masses,
        monodromy: ss.monodromy,
    };
    Ok((ss, summary))
}

#[derive(Serialize)]
struct SteadyJson<'a> {
    meta: Meta,
    steady: &'a SteadySummary,
}

pub fn cmd_steady(ctx: &Context) -> CliResult<Outcome> {
    check_assumptions(ctx)?;
    let (_, s) = run_steady(ctx)?;
    ctx.write_json(
        "steady.report.json",
        &SteadyJson {
            meta: ctx.meta("steady"),
            steady: &s,
        },
    )?;
    Ok(Outcome {
        summary: format!(
            "steady: residual {:e}, bounds [{:.6}, {:.6}], masses ({:.12}, {:.12})",
            s.residual, s.lower_bound, s.upper_bound, s.component_masses[0], s.component_masses[1]
        ),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSummary {
    #[serde(flatten)]
    pub report: SpectrumReport,
    pub dissipativity_max: f64,
    pub hermitian_top: f64,
    pub steady_defect: f64,
}

fn run_spectrum(ctx: &Context, gen: &GeneratorMatrix) -> CliResult<SpectrumSummary> {
    let report = spectrum(gen)?;
    ctx.write_csv("spectrum.csv", gen.n(), |out, h| report.write_csv(out, h))?;
    if ctx.export_matrix {
        ctx.write_csv("generator.csv", gen.n(), |out, h| gen.write_matrix_csv(out, h))?;
    }
    Ok(SpectrumSummary {
        dissipativity_max: gen.dissipativity_check(DISSIPATIVITY_TRIALS, ctx.seed),
        hermitian_top: gen.hermitian_top_eigenvalue(),
        steady_defect: gen.steady_defect(),
        report,
    })
}

#[derive(Serialize)]
struct SpectrumJson<'a> {
    meta: Meta,
    spectrum: &'a SpectrumSummary,
}

pub fn cmd_spectrum(ctx: &Context) -> CliResult<Outcome> {
    check_assumptions(ctx)?;
    let gen = ctx.generator(ctx.config.grid.n)?;
    let s = run_spectrum(ctx, &gen)?;
    ctx.write_json(
        "spectrum.report.json",
        &SpectrumJson {
            meta: ctx.meta("spectrum"),
            spectrum: &s,
        },
    )?;
    Ok(Outcome {
        summary: format!(
            "spectrum: {} eigenvalues, abscissa on X0 {:.10}, {} near zero, {} with positive real part",
            s.report.eigenvalues.len(),
            s.report.x0_abscissa,
            s.report.zero_count,
            s.report.nonneg_violations.len()
        ),
    })
}

fn run_psi(
    ctx: &Context,
    gen: &GeneratorMatrix,
    spec: &SpectrumReport,
    write: bool,
) -> CliResult<PsiEstimate> {
    let sc = &ctx.config.spectral;
    let opts = sc.psi_options().with_spectrum_seeds(spec, sc.spectrum_seeds);
    let est = psi_sweep_with(gen, &opts)?;
    if write {
        ctx.write_csv("psi_sweep.csv", gen.n(), |out, h| est.write_csv(out, h))?;
    }
    Ok(est)
}

#[derive(Serialize)]
struct PsiJson<'a> {
    meta: Meta,
    psi: &'a PsiEstimate,
    semigroup: &'a SemigroupReport,
}

pub fn cmd_psi(ctx: &Context) -> CliResult<Outcome> {
    check_assumptions(ctx)?;
    let gen = ctx.generator(ctx.config.grid.n)?;
    let spec = spectrum(&gen)?;
    let est = run_psi(ctx, &gen, &spec, true)?;
    let semigroup = semigroup_bound_check(&gen, &est, &ctx.config.spectral.t_grid)?;
    ctx.write_json(
        "psi.report.json",
        &PsiJson {
            meta: ctx.meta("psi"),
            psi: &est,
            semigroup: &semigroup,
        },
    )?;
    Ok(Outcome {
        summary: format!(
            "psi: psi_hat {:.10} at lambda {:.6}, semigroup bound {}",
            est.psi_hat,
            est.argmin_lambda,
            if semigroup.holds { "holds" } else { "violated" }
        ),
    })
}

fn initial_state(ctx: &Context, gen: &GeneratorMatrix) -> Vec<f64> {
    match &ctx.config.evolve.initial {
        Initial::SteadyPlusMode { k, amplitude } => gen.steady_plus_mode(*k, *amplitude),
        Initial::ComponentImbalance { amplitude } => gen.component_imbalance(*amplitude),
        Initial::Data { values, .. } => values.clone(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvolveSummary {
    pub steps: usize,
    pub dt: f64,
    pub mass_drift: f64,
    pub entropy_increase: f64,
    pub entropy_identity_residual: f64,
    /// `None` when the deviation never leaves round-off.
    pub decay: Option<DecayEstimate>,
    pub decay_note: Option<String>,
    pub final_deviation: f64,
}

fn run_evolve(ctx: &Context, gen: &GeneratorMatrix) -> CliResult<(TimeSeries, EvolveSummary)> {
    let ev = &ctx.config.evolve;
    let p0 = initial_state(ctx, gen);
    let series = evolve(gen, &p0, &ev.options())?;
    ctx.write_csv("timeseries.csv", gen.n(), |out, h| series.write_csv(out, h))?;
    let (decay, decay_note) = match estimate_decay(&series, ev.window_fraction) {
        Ok(d) => (Some(d), None),
        Err(e @ twospeed::Error::InsufficientData { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let summary = EvolveSummary {
        steps: series.steps,
        dt: series.dt,
        mass_drift: series.mass_drift(),
        entropy_increase: series.entropy_increase(),
        entropy_identity_residual: entropy_identity_residual(&series)?,
        decay,
        decay_note,
        final_deviation: series.deviation.last().copied().unwrap_or(0.0),
    };
    Ok((series, summary))
}

#[derive(Serialize)]
struct EvolveJson<'a> {
    meta: Meta,
    evolve: &'a EvolveSummary,
}

pub fn cmd_evolve(ctx: &Context) -> CliResult<Outcome> {
    check_assumptions(ctx)?;
    let gen = ctx.generator(ctx.config.grid.n)?;
    let (_, s) = run_evolve(ctx, &gen)?;
    ctx.write_json(
        "evolve.report.json",
        &EvolveJson {
            meta: ctx.meta("evolve"),
            evolve: &s,
        },
    )?;
    let rate = match &s.decay {
        Some(d) => format!("alpha_hat {:.6}", d.alpha_hat),
        None => "no decay fit".to_string(),
    };
    Ok(Outcome {
        summary: format!(
            "evolve: {} steps, mass drift {:e}, entropy residual {:e}, {rate}",
            s.steps, s.mass_drift, s.entropy_identity_residual
        ),
    })
}

fn run_lemma(ctx: &Context) -> CliResult<PhaseSweep> {
    let c = &ctx.config;
    let lm = &c.lemma;
    let opts = SweepOptions {
        base_points: lm.base_points,
        margin: lm.margin,
    };
    let reciprocal = ReciprocalDifference {
        b1: &c.b1,
        b2: &c.b2,
    };
    let (psi, label): (&dyn ScalarField, String) = match &lm.psi {
        PsiChoice::FromFields => (&reciprocal, "1/b1 - 1/b2".to_string()),
        PsiChoice::Explicit(f) => (f, f.describe()),
    };
    let mut sweep = lemma_sweep_with(psi, lm.lambda_min, lm.lambda_max, lm.points, &opts)?;
    sweep.psi = label;
    ctx.write_csv("lemma.csv", c.grid.n, |out, h| sweep.write_csv(out, h))?;
    Ok(sweep)
}

#[derive(Serialize)]
struct LemmaJson<'a> {
    meta: Meta,
    lemma: &'a PhaseSweep,
}

pub fn cmd_lemma(ctx: &Context) -> CliResult<Outcome> {
    check_assumptions(ctx)?;
    let sweep = run_lemma(ctx)?;
    ctx.write_json(
        "lemma.report.json",
        &LemmaJson {
            meta: ctx.meta("lemma"),
            lemma: &sweep,
        },
    )?;
    Ok(Outcome {
        summary: format!(
            "lemma: psi = {}, limsup estimate {:.6}, {}",
            sweep.psi,
            sweep.limsup_estimate,
            if sweep.consistent { "lemma-consistent" } else { "not lemma-consistent" }
        ),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check {
            name,
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Refinement {
    pub coarse_n: usize,
    pub coarse_psi_hat: f64,
    pub fine_n: usize,
    pub fine_psi_hat: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsolidatedReport {
    pub meta: Meta,
    pub name: String,
    pub assumptions: Assumptions,
    pub steady: SteadySummary,
    pub x0_abscissa: f64,
    pub spectrum: SpectrumSummary,
    pub psi_hat: f64,
    pub psi: PsiEstimate,
    pub refinement: Option<Refinement>,
    pub semigroup: SemigroupReport,
    pub alpha_hat: Option<f64>,
    pub evolution: EvolveSummary,
    pub envelope: EnvelopeCheck,
    pub lemma_limsup_estimate: f64,
    pub lemma_consistent: bool,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Whole pipeline plus the consistency checks. Writes every CSV and
/// `<name>.report.json`; failed checks surface as [`CliError::Consistency`].
pub fn cmd_report(ctx: &Context) -> CliResult<Outcome> {
    let report = build_report(ctx)?;
    ctx.write_json(&format!("{}.report.json", ctx.config.name), &report)?;
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Consistency(failed));
    }
    Ok(Outcome {
        summary: format!(
            "report: all {} checks hold, psi_hat {:.6}, alpha_hat {:.6}, abscissa {:.6}",
            report.checks.len(),
            report.psi_hat,
            report.alpha_hat.unwrap_or(f64::NAN),
            report.x0_abscissa
        ),
    })
}

pub fn build_report(ctx: &Context) -> CliResult<ConsolidatedReport> {
    let assumptions = check_assumptions(ctx)?;
    let n = ctx.config.grid.n;
    let (_, steady) = run_steady(ctx)?;
    let gen = ctx.generator(n)?;
    let spec = run_spectrum(ctx, &gen)?;
    let psi = run_psi(ctx, &gen, &spec.report, true)?;
    let semigroup = semigroup_bound_check(&gen, &psi, &ctx.config.spectral.t_grid)?;
    let refinement = refinement(ctx, psi.psi_hat)?;
    let (series, evolution) = run_evolve(ctx, &gen)?;
    let envelope = envelope_check(&series, psi.psi_hat);
    let lemma = run_lemma(ctx)?;

    let psi_hat = psi.psi_hat;
    let x0 = spec.report.x0_abscissa;
    let alpha_hat = evolution.decay.as_ref().map(|d| d.alpha_hat);
    let mut checks = vec![
        Check::new("psi_positive", psi_hat > 0.0, format!("psi_hat = {psi_hat:e}")),
        match alpha_hat {
            Some(a) => Check::new(
                "decay_rate",
                a >= psi_hat - ALPHA_TOL,
                format!("alpha_hat = {a:.6} against psi_hat - {ALPHA_TOL} = {:.6}", psi_hat - ALPHA_TOL),
            ),
            None => Check::new(
                "decay_rate",
                false,
                evolution.decay_note.clone().unwrap_or_default(),
            ),
        },
        Check::new(
            "spectral_abscissa",
            x0.abs() >= psi_hat - ABSCISSA_TOL,
            format!("|x0_abscissa| = {:.10} against psi_hat = {psi_hat:.10}", x0.abs()),
        ),
        Check::new(
            "deviation_envelope",
            envelope.holds,
            format!(
                "worst ratio {:.6} at t = {:.4}",
                envelope.worst_ratio, envelope.worst_time
            ),
        ),
        Check::new(
            "semigroup_bound",
            semigroup.holds,
            format!("min margin {:e}", semigroup.min_margin),
        ),
    ];
    if let Some(r) = &refinement {
        checks.push(Check::new(
            "gap_under_refinement",
            r.ratio >= REFINEMENT_RATIO,
            format!(
                "psi_hat(n={}) / psi_hat(n={}) = {:.6}, required >= {REFINEMENT_RATIO}",
                r.fine_n, r.coarse_n, r.ratio
            ),
        ));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(ConsolidatedReport {
        meta: ctx.meta("report"),
        name: ctx.config.name.clone(),
        assumptions,
        steady,
        x0_abscissa: x0,
        spectrum: spec,
        psi_hat,
        psi,
        refinement,
        semigroup,
        alpha_hat,
        evolution,
        envelope,
        lemma_limsup_estimate: lemma.limsup_estimate,
        lemma_consistent: lemma.consistent,
        checks,
        passed,
    })
}

fn refinement(ctx: &Context, fine_psi: f64) -> CliResult<Option<Refinement>> {
    let n = ctx.config.grid.n;
    let coarse_n = n / ctx.config.spectral.refinement_factor;
    if coarse_n < 8 {
        return Ok(None);
    }
    let gen = ctx.generator(coarse_n)?;
    let spec = spectrum(&gen)?;
    let coarse = run_psi(ctx, &gen, &spec, false)?;
    let ratio = if coarse.psi_hat > 0.0 {
        fine_psi / coarse.psi_hat
    } else {
        f64::INFINITY
    };
    Ok(Some(Refinement {
        coarse_n,
        coarse_psi_hat: coarse.psi_hat,
        fine_n: n,
        fine_psi_hat: fine_psi,
        ratio,
    }))
}
