//! Spectrum of the discrete generator, the resolvent gap `Psi` on the
//! mass-zero subspace, and the `exp(-t Psi + pi/2)` semigroup envelope.
//!
//! Everything is computed on `B = W^{1/2} A W^{-1/2}`, where the weighted
//! metric is Euclidean, and on its exact restriction `B0` to the complement of
//! the steady direction.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use nalgebra::{DMatrix, DVector, Hessenberg};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::GeneratorMatrix;
use crate::io::write_table;
use crate::linalg::{eigenvalues, expm, sigma_min_shifted, spectral_norm, LanczosResult, DENSE_CAP};

/// Absolute tolerance for treating an eigenvalue as zero or as having a positive real part.
pub const RANK_TOL: f64 = 1e-8;

/// Relative stagnation tolerance on the top Ritz value of `(M^* M)^{-1}`;
/// `sigma_min` inherits half of it.
pub const PROBE_TOL: f64 = 1e-10;

/// Eigenvalues of the symmetrized generator.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    #[serde(skip)]
    pub eigenvalues: Vec<Complex64>,
    pub zero_mode_index: usize,
    pub zero_mode: [f64; 2],
    /// Eigenvalues within `RANK_TOL` of zero.
    pub zero_count: usize,
    /// Largest real part over all eigenvalues except the zero mode.
    pub x0_abscissa: f64,
    /// Eigenvalues other than the zero mode with real part above `RANK_TOL`.
    pub nonneg_violations: Vec<[f64; 2]>,
    /// Angle between the zero-mode eigenvector and the discrete steady state.
    pub zero_mode_angle: f64,
}

impl SpectrumReport {
    /// Non-zero eigenvalues ordered by decreasing real part.
    pub fn nonzero_by_abscissa(&self) -> Vec<Complex64> {
        let mut v: Vec<Complex64> = self
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.zero_mode_index)
            .map(|(_, &z)| z)
            .collect();
        v.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.abs().total_cmp(&b.im.abs())));
        v
    }

    /// Writes columns `re, im`.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let rows = self.eigenvalues.iter().map(|z| vec![z.re, z.im]);
        write_table(out, comment, &["re", "im"], rows)
    }
}

/// Eigen-decomposition summary of the symmetrized generator.
pub fn spectrum(gen: &GeneratorMatrix) -> Result<SpectrumReport> {
    let b = gen.symmetrized();
    let ev = eigenvalues(&b)?;
    let (zero_mode_index, zero) = ev
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .ok_or_else(|| Error::Numerical("empty spectrum".into()))?;
    let zero_count = ev.iter().filter(|z| z.norm() <= RANK_TOL).count();
    let mut x0_abscissa = f64::NEG_INFINITY;
    let mut nonneg_violations = Vec::new();
    for (i, z) in ev.iter().enumerate() {
        if i == zero_mode_index {
            continue;
        }
        x0_abscissa = x0_abscissa.max(z.re);
        if z.re > RANK_TOL {
            nonneg_violations.push([z.re, z.im]);
        }
    }
    let zero_mode_angle = zero_mode_angle(&b, zero.re, &gen.steady_direction())?;
    Ok(SpectrumReport {
        eigenvalues: ev,
        zero_mode_index,
        zero_mode: [zero.re, zero.im],
        zero_count,
        x0_abscissa,
        nonneg_violations,
        zero_mode_angle,
    })
}

// Real inverse iteration next to the zero eigenvalue; the angle is measured
// against the known steady direction.
fn zero_mode_angle(b: &DMatrix<f64>, mu: f64, u: &DVector<f64>) -> Result<f64> {
    let n = b.nrows();
    let shift = mu - 1e-10 * b.norm().max(1.0);
    let mut shifted = b.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.lu();
    let mut v = DVector::<f64>::from_fn(n, |i, _| 1.0 + ((i * 31) % 17) as f64 / 17.0);
    for _ in 0..3 {
        v = lu
            .solve(&v)
            .ok_or_else(|| Error::Numerical("singular shift for the zero mode".into()))?;
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Numerical("zero-mode inverse iteration broke down".into()));
        }
        v.unscale_mut(norm);
    }
    let c = u.dot(&v);
    let perp = &v - u.scale(c);
    Ok(perp.norm().atan2(c.abs()))
}

/// Sweep parameters for the resolvent gap.
#[derive(Clone, Debug)]
pub struct PsiOptions {
    /// Upper end of the sweep; `None` selects `4 max|b| n pi`.
    pub lambda_max: Option<f64>,
    pub coarse_points: usize,
    pub refine_depth: usize,
    /// Number of lowest local minima refined.
    pub brackets: usize,
    /// Extra frequencies sampled in addition to the coarse grid.
    pub seeds: Vec<f64>,
}

impl Default for PsiOptions {
    fn default() -> Self {
        PsiOptions {
            lambda_max: None,
            coarse_points: 512,
            refine_depth: 40,
            brackets: 5,
            seeds: Vec::new(),
        }
    }
}

impl PsiOptions {
    /// Seeds at the frequencies of the eigenvalues closest to the imaginary axis.
    pub fn with_spectrum_seeds(mut self, report: &SpectrumReport, count: usize) -> Self {
        self.seeds
            .extend(report.nonzero_by_abscissa().iter().take(count).map(|z| z.im.abs()));
        self
    }
}

/// Resolvent gap estimate `min_lambda sigma_min(B0 - i lambda)`.
#[derive(Clone, Debug, Serialize)]
pub struct PsiEstimate {
    /// All sampled frequencies, increasing.
    pub lambda_grid: Vec<f64>,
    pub sigma_min_values: Vec<f64>,
    pub psi_hat: f64,
    pub argmin_lambda: f64,
    pub lambda_max: f64,
    pub refinement_depth: usize,
    pub coarse_points: usize,
    pub evaluations: usize,
    /// Sampled frequencies where inverse Lanczos hit its step cap.
    pub unconverged: usize,
    pub warnings: Vec<String>,
}

impl PsiEstimate {
    /// Writes columns `lambda, sigma_min`.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let rows = self
            .lambda_grid
            .iter()
            .zip(&self.sigma_min_values)
            .map(|(&l, &s)| vec![l, s]);
        write_table(out, comment, &["lambda", "sigma_min"], rows)
    }
}

/// Default sweep bound `4 max|b| n pi`.
pub fn default_lambda_max(gen: &GeneratorMatrix) -> f64 {
    4.0 * gen.max_speed() * gen.n() as f64 * PI
}

pub fn psi_sweep(
    gen: &GeneratorMatrix,
    lambda_max: f64,
    coarse_points: usize,
    refine_depth: usize,
) -> Result<PsiEstimate> {
    let opts = PsiOptions {
        lambda_max: Some(lambda_max),
        coarse_points,
        refine_depth,
        ..PsiOptions::default()
    };
    psi_sweep_with(gen, &opts)
}

/// Evaluates `sigma_min(B0 - i lambda)` for the restricted generator.
pub struct ResolventProbe {
    hessenberg: DMatrix<f64>,
    start: DVector<Complex64>,
}

impl ResolventProbe {
    pub fn new(gen: &GeneratorMatrix) -> Result<Self> {
        if gen.dim() > DENSE_CAP {
            return Err(Error::TooLarge {
                size: gen.dim(),
                cap: DENSE_CAP,
            });
        }
        let b0 = gen.restricted();
        let dim = b0.nrows();
        let hessenberg = Hessenberg::new(b0).unpack_h();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let start = DVector::from_fn(dim, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        Ok(ResolventProbe { hessenberg, start })
    }

    /// `sigma_min` and the Lanczos run behind it.
    pub fn sigma_min(&self, lambda: f64) -> Result<(f64, LanczosResult)> {
        sigma_min_shifted(&self.hessenberg, Complex64::new(0.0, lambda), &self.start, PROBE_TOL)
    }
}

pub fn psi_sweep_with(gen: &GeneratorMatrix, opts: &PsiOptions) -> Result<PsiEstimate> {
    let lambda_max = opts.lambda_max.unwrap_or_else(|| default_lambda_max(gen));
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::Config(format!("lambda_max must be positive, got {lambda_max}")));
    }
    if opts.coarse_points < 16 {
        return Err(Error::Config(format!(
            "coarse_points must be at least 16, got {}",
            opts.coarse_points
        )));
    }
    let probe = ResolventProbe::new(gen)?;
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut unconverged = 0usize;
    let mut worst_change: f64 = 0.0;
    let mut eval = |lambda: f64, samples: &mut Vec<(f64, f64)>| -> Result<f64> {
        let (s, info) = probe.sigma_min(lambda)?;
        if !info.converged {
            unconverged += 1;
            worst_change = worst_change.max(info.change);
        }
        samples.push((lambda, s));
        Ok(s)
    };

    let m = opts.coarse_points;
    for j in 0..m {
        let lambda = lambda_max * j as f64 / (m - 1) as f64;
        eval(lambda, &mut samples)?;
    }
    for &seed in &opts.seeds {
        let lambda = seed.abs();
        if lambda <= lambda_max && lambda.is_finite() {
            eval(lambda, &mut samples)?;
        }
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    samples.dedup_by(|a, b| a.0 == b.0);

    // lowest local minima of the sampled curve
    let mut minima: Vec<usize> = (0..samples.len())
        .filter(|&i| {
            let s = samples[i].1;
            let left = i == 0 || samples[i - 1].1 >= s;
            let right = i + 1 == samples.len() || samples[i + 1].1 >= s;
            left && right
        })
        .collect();
    minima.sort_by(|&a, &b| samples[a].1.total_cmp(&samples[b].1).then(a.cmp(&b)));
    minima.truncate(opts.brackets);
    let brackets: Vec<(f64, f64)> = minima
        .iter()
        .map(|&i| {
            let lo = samples[i.saturating_sub(1)].0;
            let hi = samples[(i + 1).min(samples.len() - 1)].0;
            (lo, hi)
        })
        .collect();

    let golden = 0.5 * (5.0f64.sqrt() - 1.0);
    for (mut a, mut b) in brackets {
        if opts.refine_depth == 0 || b <= a {
            continue;
        }
        let mut c = b - golden * (b - a);
        let mut d = a + golden * (b - a);
        let mut fc = eval(c, &mut samples)?;
        let mut fd = eval(d, &mut samples)?;
        for _ in 2..opts.refine_depth.max(2) {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - golden * (b - a);
                fc = eval(c, &mut samples)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + golden * (b - a);
                fd = eval(d, &mut samples)?;
            }
        }
    }

    let evaluations = samples.len();
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    samples.dedup_by(|a, b| a.0 == b.0);
    let (argmin_lambda, psi_hat) = samples
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .expect("coarse grid is non-empty");

    let mut warnings = Vec::new();
    let first_frequency = 2.0 * PI * gen.min_speed();
    if lambda_max < first_frequency {
        warnings.push(format!(
            "lambda_max = {lambda_max} is below the first transport frequency {first_frequency}"
        ));
    }
    if unconverged > 0 {
        warnings.push(format!(
            "inverse Lanczos reached its step cap at {unconverged} frequencies \
             (largest final relative change {worst_change:.1e})"
        ));
    }
    Ok(PsiEstimate {
        lambda_grid: samples.iter().map(|s| s.0).collect(),
        sigma_min_values: samples.iter().map(|s| s.1).collect(),
        psi_hat,
        argmin_lambda,
        lambda_max,
        refinement_depth: opts.refine_depth,
        coarse_points: opts.coarse_points,
        evaluations,
        unconverged,
        warnings,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SemigroupPoint {
    pub t: f64,
    pub norm: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SemigroupReport {
    pub psi_hat: f64,
    pub points: Vec<SemigroupPoint>,
    /// `norm <= bound` at every `t`.
    pub holds: bool,
    /// Norms nonincreasing in `t`.
    pub contractive: bool,
    pub min_margin: f64,
}

/// Checks `||exp(t A)|_{X0}|| <= exp(-t psi_hat + pi/2)` on `t_grid`.
pub fn semigroup_bound_check(
    gen: &GeneratorMatrix,
    psi: &PsiEstimate,
    t_grid: &[f64],
) -> Result<SemigroupReport> {
    if t_grid.is_empty() {
        return Err(Error::Config("t_grid must not be empty".into()));
    }
    if t_grid.iter().any(|&t| !(t >= 0.0) || !t.is_finite())
        || t_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::Config(
            "t_grid must be nonnegative and strictly increasing".into(),
        ));
    }
    if gen.dim() > DENSE_CAP {
        return Err(Error::TooLarge {
            size: gen.dim(),
            cap: DENSE_CAP,
        });
    }
    let b0 = gen.restricted();
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let e = expm(&b0.scale(t))?;
        let norm = spectral_norm(&e);
        let bound = (-t * psi.psi_hat + FRAC_PI_2).exp();
        points.push(SemigroupPoint {
            t,
            norm,
            bound,
            margin: bound - norm,
        });
    }
    let holds = points.iter().all(|p| p.norm <= p.bound);
    let contractive = points.iter().all(|p| p.norm <= 1.0 + 1e-10)
        && points.windows(2).all(|w| w[1].norm <= w[0].norm + 1e-10);
    let min_margin = points.iter().map(|p| p.margin).fold(f64::INFINITY, f64::min);
    Ok(SemigroupReport {
        psi_hat: psi.psi_hat,
        points,
        holds,
        contractive,
        min_margin,
    })
}
