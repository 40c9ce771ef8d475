//! Oscillatory integrals `I(λ) = ∫₀¹ exp(iλ Φ(x)) dx` with `Φ(x) = ∫₀ˣ ψ`.
//!
//! `|I(λ)|` stays below 1 along `λ → ∞` whenever `ψ` is not identically zero,
//! which is what the high-frequency part of the resolvent argument needs.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{ScalarField, DEFAULT_SAMPLES};
use crate::io::write_table;

/// Smallest accepted `base_points`.
pub const MIN_BASE_POINTS: usize = 16;
/// Panel count cap; requests beyond it are clamped and flagged.
pub const MAX_PANELS: usize = 10_000_000;
/// Default distance from 1 required of the tail maximum.
pub const DEFAULT_MARGIN: f64 = 0.05;

const SAMPLES_PER_PERIOD: f64 = 8.0;

// 8-point Gauss-Legendre on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// One evaluation of the oscillatory integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseValue {
    pub value: Complex64,
    pub panels: usize,
    /// The oscillation-resolving panel count exceeded [`MAX_PANELS`].
    pub capped: bool,
}

/// Largest `|ψ|` on a uniform sample of `[0, 1]`.
pub fn sup_abs<F: ScalarField + ?Sized>(psi: &F) -> f64 {
    let m = DEFAULT_SAMPLES - 1;
    (0..=m)
        .map(|k| psi.value(k as f64 / m as f64).abs())
        .fold(0.0, f64::max)
}

/// `∫₀¹ exp(iλ∫₀ˣψ) dx` on `max(base_points, ceil(8|λ| max|ψ| / 2π))` panels.
///
/// Each panel carries an 8-point Gauss-Legendre rule. The phase at every outer
/// node comes from the running panel sums plus a nested Gauss-Legendre rule on
/// the partial panel. `base_points` below [`MIN_BASE_POINTS`] is raised to it.
pub fn phase_integral<F: ScalarField + ?Sized>(psi: &F, lambda: f64, base_points: usize) -> Complex64 {
    phase_integral_with(psi, lambda, base_points, sup_abs(psi)).value
}

/// As [`phase_integral`], with a known bound on `|ψ|` and the panel bookkeeping.
pub fn phase_integral_with<F: ScalarField + ?Sized>(
    psi: &F,
    lambda: f64,
    base_points: usize,
    psi_bound: f64,
) -> PhaseValue {
    let (panels, capped) = panel_count(lambda, base_points, psi_bound);
    let width = 1.0 / panels as f64;
    let half = 0.5 * width;

    let mut phase_left = 0.0;
    let mut sum = Complex64::new(0.0, 0.0);
    for k in 0..panels {
        let left = k as f64 * width;
        let mut panel = Complex64::new(0.0, 0.0);
        for (&node, &weight) in GL_NODES.iter().zip(&GL_WEIGHTS) {
            let x = left + half * (node + 1.0);
            let partial = integrate_psi(psi, left, x);
            panel += weight * Complex64::from_polar(1.0, lambda * (phase_left + partial));
        }
        sum += half * panel;
        phase_left += integrate_psi(psi, left, left + width);
    }
    PhaseValue {
        value: sum,
        panels,
        capped,
    }
}

/// Panels needed for eight samples per oscillation, and whether the cap bit.
pub fn panel_count(lambda: f64, base_points: usize, psi_bound: f64) -> (usize, bool) {
    let wanted = (SAMPLES_PER_PERIOD * lambda.abs() * psi_bound / (2.0 * PI)).ceil();
    let base = base_points.max(MIN_BASE_POINTS);
    if !(wanted <= MAX_PANELS as f64) {
        (MAX_PANELS, true)
    } else {
        (base.max(wanted as usize), false)
    }
}

fn integrate_psi<F: ScalarField + ?Sized>(psi: &F, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    half * GL_NODES
        .iter()
        .zip(&GL_WEIGHTS)
        .map(|(&t, &w)| w * psi.value(mid + half * t))
        .sum::<f64>()
}

/// `|I(λ)|` on a geometric grid, with the tail maximum as a limsup stand-in.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseSweep {
    pub psi: String,
    pub lambdas: Vec<f64>,
    pub moduli: Vec<f64>,
    #[serde(skip)]
    pub values: Vec<Complex64>,
    /// Maximum modulus over the largest half of the λ samples.
    pub limsup_estimate: f64,
    pub margin: f64,
    pub consistent: bool,
    pub base_points: usize,
    pub warnings: Vec<String>,
}

impl PhaseSweep {
    /// Writes columns `lambda, modulus, re, im`.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let rows = self
            .lambdas
            .iter()
            .zip(&self.values)
            .map(|(&l, v)| vec![l, v.norm(), v.re, v.im]);
        write_table(out, comment, &["lambda", "modulus", "re", "im"], rows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    pub base_points: usize,
    pub margin: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            base_points: 1024,
            margin: DEFAULT_MARGIN,
        }
    }
}

pub fn lemma_sweep<F: ScalarField + ?Sized>(
    psi: &F,
    lambda_min: f64,
    lambda_max: f64,
    points: usize,
) -> Result<PhaseSweep> {
    lemma_sweep_with(psi, lambda_min, lambda_max, points, &SweepOptions::default())
}

pub fn lemma_sweep_with<F: ScalarField + ?Sized>(
    psi: &F,
    lambda_min: f64,
    lambda_max: f64,
    points: usize,
    opts: &SweepOptions,
) -> Result<PhaseSweep> {
    if !(lambda_min > 0.0 && lambda_min < lambda_max && lambda_max.is_finite()) {
        return Err(Error::Config(format!(
            "lambda range must satisfy 0 < min < max, got [{lambda_min}, {lambda_max}]"
        )));
    }
    if points < 8 {
        return Err(Error::Config(format!("lemma sweep needs at least 8 points, got {points}")));
    }
    if !(opts.margin >= 0.0 && opts.margin < 1.0) {
        return Err(Error::Config(format!("margin must lie in [0, 1), got {}", opts.margin)));
    }
    let bound = sup_abs(psi);
    let ratio = (lambda_max / lambda_min).ln();
    let lambdas: Vec<f64> = (0..points)
        .map(|k| {
            if k + 1 == points {
                lambda_max
            } else {
                lambda_min * (ratio * k as f64 / (points - 1) as f64).exp()
            }
        })
        .collect();

    let mut warnings = Vec::new();
    let mut values = Vec::with_capacity(points);
    for &lambda in &lambdas {
        let v = phase_integral_with(psi, lambda, opts.base_points, bound);
        if v.capped {
            warnings.push(format!(
                "lambda = {lambda}: oscillations under-resolved, panel count capped at {MAX_PANELS}"
            ));
        }
        values.push(v.value);
    }
    let moduli: Vec<f64> = values.iter().map(|v| v.norm()).collect();
    let limsup_estimate = moduli[points / 2..].iter().copied().fold(0.0, f64::max);
    if bound == 0.0 {
        warnings.push("psi vanishes on every sample; the integrand does not oscillate".into());
    }
    Ok(PhaseSweep {
        psi: String::new(),
        lambdas,
        moduli,
        values,
        limsup_estimate,
        margin: opts.margin,
        consistent: limsup_estimate < 1.0 - opts.margin,
        base_points: opts.base_points.max(MIN_BASE_POINTS),
        warnings,
    })
}
