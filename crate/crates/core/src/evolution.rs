//! Time stepping of the discrete model with entropy observers and decay fits.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorMatrix;
use crate::io::write_table;

/// Explicit steps must satisfy `dt <= CFL * h / max|b|`.
pub const CFL: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitTrapezoid,
    ExplicitRk4,
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    pub t_final: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub observe_every: usize,
    pub snapshots: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            t_final: 5.0,
            dt: 1e-3,
            scheme: Scheme::ImplicitTrapezoid,
            observe_every: 10,
            snapshots: false,
        }
    }
}

/// Observer record of one run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    /// `H = ||p - Pi p||^2` in the weighted metric.
    pub entropy: Vec<f64>,
    /// `D = int sigma (q1 + q2) (h1 - h2)^2`, sampled on the cells.
    pub dissipation: Vec<f64>,
    /// `-2 <A e, e>` with `e = p - Pi p`: the exact dissipation of the discrete system.
    pub discrete_dissipation: Vec<f64>,
    pub deviation: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Vec<Vec<f64>>,
    /// Step actually used, `t_final / steps`.
    pub dt: f64,
    pub steps: usize,
}

impl TimeSeries {
    /// Writes columns `t, mass, entropy, dissipation, deviation`.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let rows = (0..self.times.len()).map(|j| {
            vec![
                self.times[j],
                self.mass[j],
                self.entropy[j],
                self.dissipation[j],
                self.deviation[j],
            ]
        });
        write_table(
            out,
            comment,
            &["t", "mass", "entropy", "dissipation", "deviation"],
            rows,
        )
    }

    /// Largest relative mass change against the first observation.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass.first().copied().unwrap_or(0.0);
        self.mass
            .iter()
            .map(|m| (m - m0).abs())
            .fold(0.0, f64::max)
            / m0.abs().max(f64::MIN_POSITIVE)
    }

    /// Largest increase `H(t_{j+1}) - H(t_j)`, relative to `H(0)`.
    pub fn entropy_increase(&self) -> f64 {
        let h0 = self.entropy.first().copied().unwrap_or(0.0);
        let worst = self
            .entropy
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        if h0 > 0.0 {
            worst / h0
        } else {
            worst
        }
    }
}

struct Observer<'a> {
    gen: &'a GeneratorMatrix,
}

impl Observer<'_> {
    fn record(&self, series: &mut TimeSeries, t: f64, p: &DVector<f64>) {
        let gen = self.gen;
        let n = gen.n();
        let h = gen.h();
        let q = gen.discrete_steady();
        let w = gen.weights();
        let mass = gen.mass(p.as_slice());
        let e = DVector::from_fn(p.len(), |k, _| p[k] - mass * q[k]);
        let entropy: f64 = h * e.iter().zip(w).map(|(x, w)| x * x * w).sum::<f64>();
        let mut dissipation = 0.0;
        for k in 0..n {
            let g = e[k] / q[k] - e[n + k] / q[n + k];
            dissipation += h * gen.sigma_cells()[k] * (q[k] + q[n + k]) * g * g;
        }
        let ae = gen.matrix() * &e;
        let discrete = -2.0 * h * ae.iter().zip(e.iter()).zip(w).map(|((a, x), w)| a * x * w).sum::<f64>();
        series.times.push(t);
        series.mass.push(mass);
        series.entropy.push(entropy);
        series.dissipation.push(dissipation);
        series.discrete_dissipation.push(discrete);
        series.deviation.push(entropy.max(0.0).sqrt());
    }
}

/// Advances `p0` to `t_final`, observing every `observe_every` steps and at both ends.
pub fn evolve(gen: &GeneratorMatrix, p0: &[f64], opts: &EvolveOptions) -> Result<TimeSeries> {
    if p0.len() != gen.dim() {
        return Err(Error::Shape {
            expected: gen.dim(),
            found: p0.len(),
        });
    }
    if !(opts.dt > 0.0) || !opts.dt.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {}", opts.dt)));
    }
    if !(opts.t_final >= 0.0) || !opts.t_final.is_finite() {
        return Err(Error::Config(format!(
            "final time must be nonnegative, got {}",
            opts.t_final
        )));
    }
    if opts.observe_every == 0 {
        return Err(Error::Config("observe_every must be at least 1".into()));
    }
    if p0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config("initial state has non-finite entries".into()));
    }
    if opts.scheme == Scheme::ExplicitRk4 {
        let limit = CFL * gen.h() / gen.max_speed();
        if opts.dt > limit {
            return Err(Error::Config(format!(
                "explicit step dt = {} violates the CFL limit {limit}",
                opts.dt
            )));
        }
    }

    let steps = if opts.t_final == 0.0 {
        0
    } else {
        ((opts.t_final / opts.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    };
    let dt = if steps == 0 { 0.0 } else { opts.t_final / steps as f64 };
    let a = gen.matrix();
    let dim = gen.dim();

    let propagator = match opts.scheme {
        Scheme::ImplicitTrapezoid if steps > 0 => {
            let ident = DMatrix::<f64>::identity(dim, dim);
            let lhs = &ident - a.scale(0.5 * dt);
            // Increment form p += dt K p with K = (I - dt/2 A)^-1 A: the
            // columns of K sum to zero, so rounding never biases the mass.
            let mut k = lhs
                .lu()
                .solve(a)
                .ok_or_else(|| Error::Numerical("singular trapezoid matrix".into()))?;
            for j in 0..dim {
                let sum: f64 = (0..dim).filter(|&i| i != j).map(|i| k[(i, j)]).sum();
                k[(j, j)] = -sum;
            }
            Some(k)
        }
        _ => None,
    };

    let observer = Observer { gen };
    let mut series = TimeSeries {
        dt,
        steps,
        ..TimeSeries::default()
    };
    let mut p = DVector::from_column_slice(p0);
    observer.record(&mut series, 0.0, &p);
    if opts.snapshots {
        series.snapshots.push(p.as_slice().to_vec());
    }
    for step in 1..=steps {
        p = match &propagator {
            Some(k) => {
                let dp = k * &p;
                &p + dp.scale(dt)
            }
            None => {
                let k1 = a * &p;
                let k2 = a * (&p + k1.scale(0.5 * dt));
                let k3 = a * (&p + k2.scale(0.5 * dt));
                let k4 = a * (&p + k3.scale(dt));
                &p + (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(dt / 6.0)
            }
        };
        let t = if step == steps { opts.t_final } else { step as f64 * dt };
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step, time: t });
        }
        if step % opts.observe_every == 0 || step == steps {
            observer.record(&mut series, t, &p);
            if opts.snapshots {
                series.snapshots.push(p.as_slice().to_vec());
            }
        }
    }
    Ok(series)
}

/// `max_j |H'(t_j) + D(t_j)|` over interior observations, with centered
/// differences, normalized by `max(max D, max H)`.
///
/// Returns 0 when both `H` and `D` stay at round-off level relative to the mass.
pub fn entropy_identity_residual(series: &TimeSeries) -> Result<f64> {
    identity_residual(series, &series.dissipation)
}

/// The same residual against the exact discrete dissipation, which isolates the
/// time-discretization error.
pub fn entropy_time_residual(series: &TimeSeries) -> Result<f64> {
    identity_residual(series, &series.discrete_dissipation)
}

fn identity_residual(series: &TimeSeries, dissipation: &[f64]) -> Result<f64> {
    let times = &series.times;
    let entropy = &series.entropy;
    let m = times.len();
    if m < 3 {
        return Err(Error::InsufficientData {
            usable: m,
            required: 3,
        });
    }
    let spacing = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - spacing).abs() > 1e-9 * spacing.abs() {
            return Err(Error::Unsupported(
                "entropy identity needs uniformly spaced observations".into(),
            ));
        }
    }
    let scale = dissipation
        .iter()
        .chain(entropy)
        .fold(0.0f64, |s, v| s.max(v.abs()));
    let mass = series.mass.first().copied().unwrap_or(0.0).abs();
    let floor = (64.0 * f64::EPSILON * mass).powi(2);
    if scale <= floor {
        return Ok(0.0);
    }
    let mut worst = 0.0f64;
    for j in 1..m - 1 {
        let dh = (entropy[j + 1] - entropy[j - 1]) / (2.0 * spacing);
        worst = worst.max((dh + dissipation[j]).abs());
    }
    Ok(worst / scale)
}

/// Least-squares exponential fit of the deviation.
#[derive(Clone, Debug, Serialize)]
pub struct DecayEstimate {
    pub alpha_hat: f64,
    /// `exp(intercept) / deviation(0)`.
    pub prefactor: f64,
    pub window: [f64; 2],
    /// RMS residual of the fit in `log(deviation)`.
    pub fit_residual: f64,
    pub points: usize,
}

/// Fits `log(deviation) ~ c - alpha t` over the trailing `window_fraction` of usable times.
pub fn estimate_decay(series: &TimeSeries, window_fraction: f64) -> Result<DecayEstimate> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "window fraction must lie in (0, 1], got {window_fraction}"
        )));
    }
    let dev0 = series.deviation.first().copied().unwrap_or(0.0);
    let floor = 100.0 * f64::EPSILON * dev0;
    let usable: Vec<usize> = (0..series.deviation.len())
        .filter(|&j| series.deviation[j] > 0.0 && series.deviation[j] >= floor)
        .collect();
    let count = ((window_fraction * usable.len() as f64).ceil() as usize).min(usable.len());
    let window = &usable[usable.len() - count..];
    if window.len() < 4 || dev0 <= 0.0 {
        return Err(Error::InsufficientData {
            usable: window.len(),
            required: 4,
        });
    }
    let ts: Vec<f64> = window.iter().map(|&j| series.times[j]).collect();
    let ys: Vec<f64> = window.iter().map(|&j| series.deviation[j].ln()).collect();
    let k = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / k;
    let ym = ys.iter().sum::<f64>() / k;
    let sxx: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData {
            usable: 1,
            required: 4,
        });
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let fit_residual = (ts
        .iter()
        .zip(&ys)
        .map(|(t, y)| (y - intercept - slope * t).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    Ok(DecayEstimate {
        alpha_hat: -slope,
        prefactor: intercept.exp() / dev0,
        window: [ts[0], ts[ts.len() - 1]],
        fit_residual,
        points: ts.len(),
    })
}

/// Pointwise check of `deviation(t) <= exp(pi/2 - psi t) deviation(0)`.
#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeCheck {
    pub holds: bool,
    /// Largest `deviation(t) / (exp(pi/2 - psi t) deviation(0))`.
    pub worst_ratio: f64,
    pub worst_time: f64,
}

pub fn envelope_check(series: &TimeSeries, psi_hat: f64) -> EnvelopeCheck {
    let dev0 = series.deviation.first().copied().unwrap_or(0.0);
    let mut worst_ratio = 0.0f64;
    let mut worst_time = 0.0;
    let mut holds = true;
    for (t, d) in series.times.iter().zip(&series.deviation) {
        let bound = (FRAC_PI_2 - psi_hat * t).exp() * dev0;
        if *d > bound {
            holds = false;
        }
        let ratio = if bound > 0.0 { d / bound } else { 0.0 };
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_time = *t;
        }
    }
    EnvelopeCheck {
        holds,
        worst_ratio,
        worst_time,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldSpec;
    use crate::generator::{assemble, Grid};

    fn gt(n: usize) -> GeneratorMatrix {
        assemble(
            &FieldSpec::constant(1.0),
            &FieldSpec::constant(-1.0),
            &FieldSpec::constant(1.0),
            Grid::new(n).unwrap(),
        )
        .unwrap()
    }

    fn variant(n: usize) -> GeneratorMatrix {
        assemble(
            &FieldSpec::constant(1.0),
            &FieldSpec::trigonometric(-1.0, 0.4, 0.0),
            &FieldSpec::constant(1.0),
            Grid::new(n).unwrap(),
        )
        .unwrap()
    }

    fn opts(t_final: f64, dt: f64, scheme: Scheme, observe_every: usize) -> EvolveOptions {
        EvolveOptions {
            t_final,
            dt,
            scheme,
            observe_every,
            snapshots: false,
        }
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let gen = variant(32);
        for scheme in [Scheme::ImplicitTrapezoid, Scheme::ExplicitRk4] {
            let s = evolve(&gen, gen.discrete_steady(), &opts(1.0, 0.01, scheme, 10)).unwrap();
            assert!(s.mass.iter().all(|m| (m - 1.0).abs() < 1e-12));
            assert!(s.deviation.iter().all(|&d| d < 1e-10));
            assert_eq!(entropy_identity_residual(&s).unwrap(), 0.0);
        }
    }

    #[test]
    fn observations_include_both_ends() {
        let gen = gt(16);
        let s = evolve(&gen, &gen.steady_plus_mode(1, 0.1), &opts(1.0, 0.03, Scheme::ImplicitTrapezoid, 7)).unwrap();
        assert_eq!(s.times[0], 0.0);
        assert_eq!(*s.times.last().unwrap(), 1.0);
        assert_eq!(s.steps, 34);
        assert!(matches!(entropy_identity_residual(&s), Err(Error::Unsupported(_))));
    }

    #[test]
    fn mass_and_entropy_structure() {
        let gen = variant(64);
        let p0 = gen.steady_plus_mode(2, 0.2);
        let s = evolve(&gen, &p0, &opts(2.0, 0.01, Scheme::ImplicitTrapezoid, 1)).unwrap();
        assert!(s.mass_drift() <= 1e-12);
        assert!(s.entropy_increase() <= 1e-10);
        let s = evolve(&gen, &p0, &opts(0.5, 0.005, Scheme::ExplicitRk4, 1)).unwrap();
        assert!(s.mass_drift() <= 1e-12);
    }

    #[test]
    fn cfl_violation_is_a_config_error() {
        let gen = gt(64);
        let err = evolve(&gen, gen.discrete_steady(), &opts(1.0, 0.1, Scheme::ExplicitRk4, 1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn schemes_agree_on_smooth_data() {
        let gen = variant(32);
        let p0 = gen.steady_plus_mode(1, 0.1);
        let a = evolve(&gen, &p0, &opts(0.5, 0.002, Scheme::ImplicitTrapezoid, 25)).unwrap();
        let b = evolve(&gen, &p0, &opts(0.5, 0.002, Scheme::ExplicitRk4, 25)).unwrap();
        for (x, y) in a.deviation.iter().zip(&b.deviation) {
            assert!((x - y).abs() < 1e-5, "{x} {y}");
        }
    }

    #[test]
    fn trapezoid_is_second_order_in_time() {
        let gen = variant(32);
        let p0 = gen.steady_plus_mode(1, 0.1);
        let reference = evolve(&gen, &p0, &opts(1.0, 0.00025, Scheme::ExplicitRk4, 4000)).unwrap();
        let err = |dt: f64| {
            let s = evolve(&gen, &p0, &opts(1.0, dt, Scheme::ImplicitTrapezoid, 1_000_000)).unwrap();
            (s.deviation.last().unwrap() - reference.deviation.last().unwrap()).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!(ratio > 3.5 && ratio < 4.5, "{ratio}");
    }

    #[test]
    fn goldstein_taylor_imbalance_satisfies_entropy_identity() {
        // a spatially uniform imbalance is transported exactly, so only time errors remain
        let gen = gt(64);
        let p0 = gen.component_imbalance(0.5);
        let s = evolve(&gen, &p0, &opts(2.0, 2e-3, Scheme::ImplicitTrapezoid, 1)).unwrap();
        let r = entropy_identity_residual(&s).unwrap();
        assert!(r < 1e-4, "{r}");
        let fit = estimate_decay(&s, 0.5).unwrap();
        assert!((fit.alpha_hat - 2.0).abs() < 1e-4, "{}", fit.alpha_hat);
    }

    #[test]
    fn synthetic_exponential_is_fitted_exactly() {
        let times: Vec<f64> = (0..50).map(|j| j as f64 * 0.1).collect();
        let deviation: Vec<f64> = times.iter().map(|t| (-2.0 * t).exp()).collect();
        let s = TimeSeries {
            times,
            deviation,
            ..TimeSeries::default()
        };
        let fit = estimate_decay(&s, 0.5).unwrap();
        assert!((fit.alpha_hat - 2.0).abs() < 1e-8);
        assert!((fit.prefactor - 1.0).abs() < 1e-8);
        assert!(fit.fit_residual < 1e-10);
        assert_eq!(fit.points, 25);
    }

    #[test]
    fn decay_fit_needs_four_points() {
        let s = TimeSeries {
            times: vec![0.0, 1.0, 2.0, 3.0],
            deviation: vec![1.0, 0.5, 0.25, 0.125],
            ..TimeSeries::default()
        };
        assert!(matches!(
            estimate_decay(&s, 0.5),
            Err(Error::InsufficientData { usable: 2, required: 4 })
        ));
        assert!(estimate_decay(&s, 1.0).is_ok());
        assert!(estimate_decay(&s, 0.0).is_err());
    }

    #[test]
    fn decay_fit_skips_round_off_floor() {
        let times: Vec<f64> = (0..40).map(|j| j as f64).collect();
        let deviation: Vec<f64> = times.iter().map(|t| (-1.5 * t).exp()).collect();
        let s = TimeSeries {
            times,
            deviation,
            ..TimeSeries::default()
        };
        let fit = estimate_decay(&s, 1.0).unwrap();
        assert!(fit.window[1] < 21.0);
        assert!((fit.alpha_hat - 1.5).abs() < 1e-8);
    }

    #[test]
    fn envelope_with_zero_gap_always_holds_for_contractions() {
        let gen = variant(32);
        let s = evolve(&gen, &gen.steady_plus_mode(1, 0.3), &opts(1.0, 0.01, Scheme::ImplicitTrapezoid, 5)).unwrap();
        let e = envelope_check(&s, 0.0);
        assert!(e.holds);
        assert!(e.worst_ratio <= (-FRAC_PI_2).exp() + 1e-12);
    }

    #[test]
    fn divergence_is_detected() {
        let gen = gt(16);
        let mut p0 = gen.discrete_steady().to_vec();
        p0[0] = 1e308;
        p0[1] = 1e308;
        let err = evolve(&gen, &p0, &opts(1.0, 0.01, Scheme::ExplicitRk4, 1)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
