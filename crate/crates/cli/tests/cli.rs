use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

const GT: &str = r#"name = "gt"
[fields]
b1 = { kind = "constant", value = 1.0 }
b2 = { kind = "constant", value = -1.0 }
[grid]
n = 32
[spectral]
coarse_points = 64
refine_depth = 20
"#;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn twospeed(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_twospeed")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn run_in(dir: &Path, config: &Path, extra: &[&str]) -> Run {
    let out = dir.join("out");
    let mut args = vec!["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    twospeed(&args)
}

fn data_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn validate_accepts_goldstein_taylor() {
    let (dir, cfg) = setup(GT);
    let r = run_in(dir.path(), &cfg, &["validate"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.starts_with("validate: ok"));
}

#[test]
fn equal_fields_exit_with_assumption_code() {
    let (dir, cfg) = setup(&GT.replace("value = -1.0", "value = 1.0"));
    let r = run_in(dir.path(), &cfg, &["validate"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("indistinguishable fields"), "{}", r.stderr);
    let r = run_in(dir.path(), &cfg, &["--allow-degenerate", "validate"]);
    assert_eq!(r.code, 0);
    let r = run_in(dir.path(), &cfg, &["steady"]);
    assert_eq!(r.code, 2);
}

#[test]
fn missing_field_is_a_config_error() {
    let (dir, cfg) = setup("[fields]\nb1 = { kind = \"constant\", value = 1.0 }\n");
    let r = run_in(dir.path(), &cfg, &["validate"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("b2"), "{}", r.stderr);
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(twospeed(&["frobnicate"]).code, 1);
    assert_eq!(twospeed(&["validate"]).code, 1);
    assert_eq!(twospeed(&["--config", "/no/such/file.toml", "validate"]).code, 1);
    assert_eq!(twospeed(&["--help"]).code, 0);
}

#[test]
fn steady_writes_constant_halves() {
    let (dir, cfg) = setup(GT);
    let r = run_in(dir.path(), &cfg, &["steady"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let path = dir.path().join("out/steady.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# config_hash="));
    assert!(header.contains(" n=32 "));
    assert_eq!(lines.next().unwrap(), "x,p1,p2,J1,J2");
    let rows = data_rows(&path);
    assert_eq!(rows.len(), 33);
    for row in rows {
        assert!((row[1] - 0.5).abs() < 1e-12 && (row[2] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn reals_carry_seventeen_significant_digits() {
    let (dir, cfg) = setup(GT);
    run_in(dir.path(), &cfg, &["steady"]);
    let text = fs::read_to_string(dir.path().join("out/steady.csv")).unwrap();
    let cell = text.lines().nth(2).unwrap().split(',').nth(1).unwrap();
    let mantissa = cell.split('e').next().unwrap().replace(['-', '.'], "");
    assert_eq!(mantissa.len(), 17, "{cell}");
}

#[test]
fn evolve_from_steady_data_stays_put() {
    let config = format!(
        "{GT}[evolve]\nT = 1.0\ndt = 0.01\ninitial = {{ kind = \"steady-plus-mode\", k = 1, amplitude = 0.0 }}\n"
    );
    let (dir, cfg) = setup(&config);
    let r = run_in(dir.path(), &cfg, &["evolve"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = data_rows(&dir.path().join("out/timeseries.csv"));
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r[4].abs() < 1e-10));
}

#[test]
fn evolve_reads_initial_data_from_csv() {
    let rows: String = (0..32)
        .map(|j| {
            let s = 0.1 * (2.0 * std::f64::consts::PI * (j as f64 + 0.5) / 32.0).cos();
            format!("{},{}\n", 0.5 + s, 0.5 - s)
        })
        .collect();
    let config = format!(
        "{GT}[evolve]\nT = 2.0\ninitial = {{ kind = \"from-csv\", path = \"p0.csv\" }}\n"
    );
    let (dir, cfg) = setup(&config);
    fs::write(dir.path().join("p0.csv"), format!("p1,p2\n{rows}")).unwrap();
    let r = run_in(dir.path(), &cfg, &["evolve"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/evolve.report.json")).unwrap())
            .unwrap();
    assert!(json["evolve"]["mass_drift"].as_f64().unwrap() < 1e-12);
    let first = data_rows(&dir.path().join("out/timeseries.csv"));
    assert!(first.last().unwrap()[4] < first[0][4]);
}

#[test]
fn psi_reports_a_positive_gap() {
    let (dir, cfg) = setup(GT);
    let r = run_in(dir.path(), &cfg, &["psi"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/psi.report.json")).unwrap()).unwrap();
    assert!(json["psi"]["psi_hat"].as_f64().unwrap() > 0.0);
    assert_eq!(json["semigroup"]["holds"], serde_json::Value::Bool(true));
    assert_eq!(json["meta"]["command"], "psi");
    let rows = data_rows(&dir.path().join("out/psi_sweep.csv"));
    assert!(rows.len() >= 64);
    assert!(rows.windows(2).all(|w| w[0][0] < w[1][0]));
}

#[test]
fn spectrum_exports_the_generator_on_request() {
    let (dir, cfg) = setup(GT);
    let r = run_in(dir.path(), &cfg, &["--export-matrix", "spectrum"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(data_rows(&dir.path().join("out/spectrum.csv")).len(), 64);
    let matrix = data_rows(&dir.path().join("out/generator.csv"));
    assert_eq!(matrix.len(), 64);
    assert!(matrix.iter().all(|r| r.len() == 64));
}

#[test]
fn lemma_with_explicit_phase() {
    let config = format!("{GT}[lemma]\npsi = {{ kind = \"constant\", value = 0.0 }}\npoints = 8\n");
    let (dir, cfg) = setup(&config);
    let r = run_in(dir.path(), &cfg, &["lemma"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("not lemma-consistent"), "{}", r.stdout);
    let rows = data_rows(&dir.path().join("out/lemma.csv"));
    assert!(rows.iter().all(|r| (r[1] - 1.0).abs() < 1e-12));
}

#[test]
fn json_only_output_skips_csv() {
    let config = format!("{GT}[output]\nformats = [\"json\"]\n");
    let (dir, cfg) = setup(&config);
    let r = run_in(dir.path(), &cfg, &["steady"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(!dir.path().join("out/steady.csv").exists());
    assert!(dir.path().join("out/steady.report.json").exists());
}

#[test]
fn report_on_goldstein_taylor_is_consistent() {
    let (dir, cfg) = setup(GT);
    let r = run_in(dir.path(), &cfg, &["report"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/gt.report.json")).unwrap()).unwrap();
    assert_eq!(json["passed"], serde_json::Value::Bool(true));
    // upwind diffusion on 32 cells only speeds up the k = 1 decay
    let alpha = json["alpha_hat"].as_f64().unwrap();
    let psi = json["psi_hat"].as_f64().unwrap();
    assert!(alpha >= 0.95 && alpha >= psi - 0.05, "{alpha} {psi}");
    for file in ["steady.csv", "spectrum.csv", "psi_sweep.csv", "timeseries.csv", "lemma.csv"] {
        assert!(dir.path().join("out").join(file).exists(), "{file}");
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for (name, code) in [("goldstein-taylor", 0), ("variant", 0), ("degenerate", 2)] {
        let cfg = dir.join(format!("{name}.toml"));
        let out = tempfile::tempdir().unwrap();
        let r = run_in(out.path(), &cfg, &["validate"]);
        assert_eq!(r.code, code, "{name}: {}", r.stderr);
    }
}
