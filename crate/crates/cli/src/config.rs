//! Run configuration, read from a TOML file.
//!
//! ```toml
//! name = "goldstein-taylor"
//!
//! [fields]
//! b1 = { kind = "constant", value = 1.0 }
//! b2 = { kind = "constant", value = -1.0 }
//!
//! [grid]
//! n = 256
//! ```
//!
//! Every other section is optional. A field may also be read from a two-column
//! CSV file (`x`, `v`) with `{ kind = "csv", path = "b2.csv" }`; relative paths
//! resolve against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twospeed::evolution::{EvolveOptions, Scheme};
use twospeed::spectral::PsiOptions;
use twospeed::FieldSpec;

use crate::error::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_name")]
    name: String,
    fields: RawFields,
    #[serde(default)]
    grid: GridSection,
    #[serde(default)]
    evolve: RawEvolve,
    #[serde(default)]
    spectral: SpectralSection,
    #[serde(default)]
    lemma: RawLemma,
    #[serde(default)]
    output: OutputSection,
}

fn default_name() -> String {
    "run".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFields {
    b1: toml::Table,
    b2: toml::Table,
    sigma: Option<toml::Table>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n: 256 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvolve {
    #[serde(rename = "T", alias = "t_final", default = "default_t_final")]
    t_final: f64,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default)]
    scheme: Option<Scheme>,
    #[serde(default = "default_observe_every")]
    observe_every: usize,
    #[serde(default)]
    initial: Option<RawInitial>,
    #[serde(default = "default_window")]
    window_fraction: f64,
}

fn default_t_final() -> f64 {
    20.0
}
fn default_dt() -> f64 {
    1e-2
}
fn default_observe_every() -> usize {
    5
}
fn default_window() -> f64 {
    0.5
}

impl Default for RawEvolve {
    fn default() -> Self {
        RawEvolve {
            t_final: default_t_final(),
            dt: default_dt(),
            scheme: None,
            observe_every: default_observe_every(),
            initial: None,
            window_fraction: default_window(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum RawInitial {
    SteadyPlusMode { k: u32, amplitude: f64 },
    ComponentImbalance { amplitude: f64 },
    FromCsv { path: PathBuf },
}

/// Initial datum of the time integration.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Initial {
    SteadyPlusMode { k: u32, amplitude: f64 },
    ComponentImbalance { amplitude: f64 },
    /// Cell averages, `p1` then `p2`.
    Data { source: PathBuf, values: Vec<f64> },
}

#[derive(Clone, Debug, Serialize)]
pub struct EvolveSection {
    pub t_final: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub observe_every: usize,
    pub initial: Initial,
    pub window_fraction: f64,
}

impl EvolveSection {
    pub fn options(&self) -> EvolveOptions {
        EvolveOptions {
            t_final: self.t_final,
            dt: self.dt,
            scheme: self.scheme,
            observe_every: self.observe_every,
            snapshots: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    pub lambda_max: Option<f64>,
    #[serde(default = "default_coarse")]
    pub coarse_points: usize,
    #[serde(default = "default_depth")]
    pub refine_depth: usize,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    /// Eigenvalues nearest the imaginary axis whose frequencies seed the sweep.
    #[serde(default = "default_seeds")]
    pub spectrum_seeds: usize,
    /// Grid coarsening factor of the refinement check in `report`.
    #[serde(default = "default_coarsen")]
    pub refinement_factor: usize,
}

fn default_coarse() -> usize {
    512
}
fn default_depth() -> usize {
    40
}
fn default_t_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
}
fn default_seeds() -> usize {
    8
}
fn default_coarsen() -> usize {
    4
}

impl Default for SpectralSection {
    fn default() -> Self {
        SpectralSection {
            lambda_max: None,
            coarse_points: default_coarse(),
            refine_depth: default_depth(),
            t_grid: default_t_grid(),
            spectrum_seeds: default_seeds(),
            refinement_factor: default_coarsen(),
        }
    }
}

impl SpectralSection {
    pub fn psi_options(&self) -> PsiOptions {
        PsiOptions {
            lambda_max: self.lambda_max,
            coarse_points: self.coarse_points,
            refine_depth: self.refine_depth,
            ..PsiOptions::default()
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLemma {
    #[serde(default)]
    psi: Option<toml::Value>,
    #[serde(default = "default_lemma_min")]
    lambda_min: f64,
    #[serde(default = "default_lemma_max")]
    lambda_max: f64,
    #[serde(default = "default_lemma_points")]
    points: usize,
    #[serde(default = "default_base_points")]
    base_points: usize,
    #[serde(default = "default_margin")]
    margin: f64,
}

fn default_lemma_min() -> f64 {
    std::f64::consts::PI
}
fn default_lemma_max() -> f64 {
    1e3 * std::f64::consts::PI
}
fn default_lemma_points() -> usize {
    32
}
fn default_base_points() -> usize {
    1024
}
fn default_margin() -> f64 {
    twospeed::stationary_phase::DEFAULT_MARGIN
}

impl Default for RawLemma {
    fn default() -> Self {
        RawLemma {
            psi: None,
            lambda_min: default_lemma_min(),
            lambda_max: default_lemma_max(),
            points: default_lemma_points(),
            base_points: default_base_points(),
            margin: default_margin(),
        }
    }
}

/// Phase density of the oscillatory integral.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiChoice {
    /// `1/b1 - 1/b2`.
    FromFields,
    Explicit(FieldSpec),
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaSection {
    pub psi: PsiChoice,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
    pub base_points: usize,
    pub margin: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

impl OutputSection {
    pub fn csv(&self) -> bool {
        self.formats.contains(&Format::Csv)
    }

    pub fn json(&self) -> bool {
        self.formats.contains(&Format::Json)
    }
}

/// Fully resolved configuration: referenced files are loaded, ranges checked.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub name: String,
    pub b1: FieldSpec,
    pub b2: FieldSpec,
    pub sigma: FieldSpec,
    pub grid: GridSection,
    pub evolve: EvolveSection,
    pub spectral: SpectralSection,
    pub lemma: LemmaSection,
    pub output: OutputSection,
    /// SHA-256 of the config text, lowercase hex.
    pub hash: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses `text`; relative paths inside resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))?;
        let b1 = resolve_field("fields.b1", raw.fields.b1, base)?;
        let b2 = resolve_field("fields.b2", raw.fields.b2, base)?;
        let sigma = match raw.fields.sigma {
            Some(t) => resolve_field("fields.sigma", t, base)?,
            None => FieldSpec::constant(1.0),
        };

        let n = raw.grid.n;
        if n < 8 {
            return Err(CliError::Config(format!("grid.n must be at least 8, got {n}")));
        }

        let ev = raw.evolve;
        positive("evolve.T", ev.t_final)?;
        positive("evolve.dt", ev.dt)?;
        if ev.observe_every == 0 {
            return Err(CliError::Config("evolve.observe_every must be at least 1".into()));
        }
        if !(ev.window_fraction > 0.0 && ev.window_fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "evolve.window_fraction must lie in (0, 1], got {}",
                ev.window_fraction
            )));
        }
        let initial = match ev.initial {
            None => Initial::SteadyPlusMode {
                k: 1,
                amplitude: 0.2,
            },
            Some(RawInitial::SteadyPlusMode { k, amplitude }) => {
                Initial::SteadyPlusMode { k, amplitude }
            }
            Some(RawInitial::ComponentImbalance { amplitude }) => {
                Initial::ComponentImbalance { amplitude }
            }
            Some(RawInitial::FromCsv { path }) => {
                let path = base.join(path);
                let values = read_initial(&path, n)?;
                Initial::Data {
                    source: path,
                    values,
                }
            }
        };
        let evolve = EvolveSection {
            t_final: ev.t_final,
            dt: ev.dt,
            scheme: ev.scheme.unwrap_or(Scheme::ImplicitTrapezoid),
            observe_every: ev.observe_every,
            initial,
            window_fraction: ev.window_fraction,
        };

        let spectral = raw.spectral;
        if let Some(l) = spectral.lambda_max {
            positive("spectral.lambda_max", l)?;
        }
        if spectral.coarse_points < 2 {
            return Err(CliError::Config("spectral.coarse_points must be at least 2".into()));
        }
        if spectral.refinement_factor < 2 {
            return Err(CliError::Config("spectral.refinement_factor must be at least 2".into()));
        }
        if spectral.t_grid.is_empty()
            || spectral.t_grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite())
            || spectral.t_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(CliError::Config(
                "spectral.t_grid must be a nonempty increasing list of nonnegative times".into(),
            ));
        }

        let lm = raw.lemma;
        let psi = match lm.psi {
            None => PsiChoice::FromFields,
            Some(toml::Value::String(s)) if s == "from-fields" => PsiChoice::FromFields,
            Some(toml::Value::Table(t)) => PsiChoice::Explicit(resolve_field("lemma.psi", t, base)?),
            Some(other) => {
                return Err(CliError::Config(format!(
                    "lemma.psi must be \"from-fields\" or a field table, got {other}"
                )))
            }
        };
        positive("lemma.lambda_min", lm.lambda_min)?;
        if !(lm.lambda_max > lm.lambda_min) || !lm.lambda_max.is_finite() {
            return Err(CliError::Config(format!(
                "lemma.lambda_max must exceed lemma.lambda_min, got {}",
                lm.lambda_max
            )));
        }
        if lm.points < 8 {
            return Err(CliError::Config(format!("lemma.points must be at least 8, got {}", lm.points)));
        }
        if !(lm.margin >= 0.0 && lm.margin < 1.0) {
            return Err(CliError::Config(format!("lemma.margin must lie in [0, 1), got {}", lm.margin)));
        }
        let lemma = LemmaSection {
            psi,
            lambda_min: lm.lambda_min,
            lambda_max: lm.lambda_max,
            points: lm.points,
            base_points: lm.base_points,
            margin: lm.margin,
        };

        if raw.output.formats.is_empty() {
            return Err(CliError::Config("output.formats must not be empty".into()));
        }
        let mut output = raw.output;
        if output.dir.is_relative() {
            output.dir = base.join(&output.dir);
        }

        Ok(RunConfig {
            name: raw.name,
            b1,
            b2,
            sigma,
            grid: raw.grid,
            evolve,
            spectral,
            lemma,
            output,
            hash: sha256_hex(text.as_bytes()),
        })
    }
}

fn positive(key: &str, value: f64) -> CliResult<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{key} must be positive, got {value}")))
    }
}

fn resolve_field(key: &str, table: toml::Table, base: &Path) -> CliResult<FieldSpec> {
    if table.get("kind").and_then(|k| k.as_str()) == Some("csv") {
        let path = match table.get("path").and_then(|p| p.as_str()) {
            Some(p) => base.join(p),
            None => return Err(CliError::Config(format!("{key}: csv field needs a `path`"))),
        };
        if let Some(extra) = table.keys().find(|k| *k != "kind" && *k != "path") {
            return Err(CliError::Config(format!("{key}: unknown key `{extra}`")));
        }
        let cols = read_columns(&path, &["x", "v"])?;
        let mut cols = cols.into_iter();
        let (x, v) = (cols.next().unwrap_or_default(), cols.next().unwrap_or_default());
        return FieldSpec::tabulated(x, v)
            .map_err(|e| CliError::Config(format!("{key} ({}): {e}", path.display())));
    }
    toml::Value::Table(table)
        .try_into::<FieldSpec>()
        .map_err(|e| CliError::Config(format!("{key}: {}", e.to_string().trim_end())))
}

fn read_initial(path: &Path, n: usize) -> CliResult<Vec<f64>> {
    let cols = read_columns(path, &["p1", "p2"])?;
    if cols[0].len() != n {
        return Err(CliError::Config(format!(
            "{}: expected {n} rows of cell averages, found {}",
            path.display(),
            cols[0].len()
        )));
    }
    Ok(cols.concat())
}

/// Reads the named columns of a headed CSV file; `#` lines are comments.
fn read_columns(path: &Path, names: &[&str]) -> CliResult<Vec<Vec<f64>>> {
    let fail = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fail(e.to_string()))?;
    let headers = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let index: Vec<usize> = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| fail(format!("missing column `{name}`")))
        })
        .collect::<CliResult<_>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        for (col, &i) in cols.iter_mut().zip(&index) {
            let cell = record.get(i).unwrap_or("");
            let value: f64 = cell
                .parse()
                .map_err(|_| fail(format!("row {}: `{cell}` is not a number", line + 1)))?;
            col.push(value);
        }
    }
    Ok(cols)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
