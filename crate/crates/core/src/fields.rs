//! Scalar coefficient functions on `[0, 1]`.
//!
//! The velocity fields `b1`, `b2`, the cross-section `sigma` and the phase
//! function `psi` are all described declaratively by a [`FieldSpec`]. Tabulated
//! fields are interpolated with a monotone piecewise-cubic Hermite scheme
//! (Fritsch–Carlson slopes), so sampled data that is single-signed stays
//! single-signed between the samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default floor below which a sampled value counts as zero.
pub const DEFAULT_FLOOR: f64 = 1e-10;
/// Default number of uniformly spaced samples used by the assumption checks.
pub const DEFAULT_SAMPLES: usize = 4097;

/// Anything that can be evaluated pointwise on `[0, 1]`.
///
/// `value` performs no domain check; callers stay inside the unit interval.
pub trait ScalarField: Sync {
    fn value(&self, x: f64) -> f64;
}

/// Declarative description of a scalar function on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFieldSpec", into = "RawFieldSpec")]
pub enum FieldSpec {
    /// `value`
    Constant { value: f64 },
    /// `a + b x`
    Affine { a: f64, b: f64 },
    /// `a + b sin(2 pi x) + c cos(2 pi x)`
    Trigonometric { a: f64, b: f64, c: f64 },
    /// Monotone piecewise-cubic interpolation through samples.
    Tabulated(Table),
}

impl FieldSpec {
    pub fn constant(value: f64) -> Self {
        FieldSpec::Constant { value }
    }

    pub fn affine(a: f64, b: f64) -> Self {
        FieldSpec::Affine { a, b }
    }

    pub fn trigonometric(a: f64, b: f64, c: f64) -> Self {
        FieldSpec::Trigonometric { a, b, c }
    }

    pub fn tabulated(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        Table::new(x, v).map(FieldSpec::Tabulated)
    }

    /// Evaluates the field at `x`, rejecting positions outside `[0, 1]`.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain { x });
        }
        Ok(self.value(x))
    }

    /// Short human-readable description, used in report details.
    pub fn describe(&self) -> String {
        match self {
            FieldSpec::Constant { value } => format!("constant({value})"),
            FieldSpec::Affine { a, b } => format!("affine({a} + {b} x)"),
            FieldSpec::Trigonometric { a, b, c } => {
                format!("trigonometric({a} + {b} sin(2 pi x) + {c} cos(2 pi x))")
            }
            FieldSpec::Tabulated(t) => format!("tabulated({} samples)", t.x.len()),
        }
    }
}

impl ScalarField for FieldSpec {
    fn value(&self, x: f64) -> f64 {
        match self {
            FieldSpec::Constant { value } => *value,
            FieldSpec::Affine { a, b } => a + b * x,
            FieldSpec::Trigonometric { a, b, c } => {
                let arg = 2.0 * std::f64::consts::PI * x;
                a + b * arg.sin() + c * arg.cos()
            }
            FieldSpec::Tabulated(t) => t.value(x),
        }
    }
}

/// Sample table with precomputed monotone Hermite slopes.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    x: Vec<f64>,
    v: Vec<f64>,
    slopes: Vec<f64>,
}

impl Table {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::InvalidField(format!(
                "tabulated field has {} abscissae but {} values",
                x.len(),
                v.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::InvalidField(
                "tabulated field needs at least two samples".into(),
            ));
        }
        if x[0] != 0.0 || x[x.len() - 1] != 1.0 {
            return Err(Error::InvalidField(format!(
                "tabulated abscissae must start at 0 and end at 1 (got {} .. {})",
                x[0],
                x[x.len() - 1]
            )));
        }
        if let Some(k) = x.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidField(format!(
                "tabulated abscissae must be strictly increasing (x[{}] = {}, x[{}] = {})",
                k,
                x[k],
                k + 1,
                x[k + 1]
            )));
        }
        if let Some(k) = v.iter().position(|val| !val.is_finite()) {
            return Err(Error::InvalidField(format!("tabulated value v[{k}] is not finite")));
        }
        let slopes = pchip_slopes(&x, &v);
        Ok(Table { x, v, slopes })
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    fn value(&self, x: f64) -> f64 {
        let last = self.x.len() - 1;
        if x <= self.x[0] {
            return self.v[0];
        }
        if x >= self.x[last] {
            return self.v[last];
        }
        // first index with self.x[k] > x, so x lies in [x[k-1], x[k])
        let k = self.x.partition_point(|&xi| xi <= x);
        let i = k - 1;
        if x == self.x[i] {
            return self.v[i];
        }
        let h = self.x[i + 1] - self.x[i];
        let t = (x - self.x[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.v[i] + h10 * h * self.slopes[i] + h01 * self.v[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

fn pchip_slopes(x: &[f64], v: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (v[k + 1] - v[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (dl, dr) = (delta[k - 1], delta[k]);
        if dl * dr > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / dl + w2 / dr);
        }
    }
    d[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

// One-sided three-point estimate, clipped to keep the end interval monotone.
fn edge_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RawFieldSpec {
    Constant { value: f64 },
    Affine { a: f64, b: f64 },
    Trigonometric {
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
    },
    Tabulated { x: Vec<f64>, v: Vec<f64> },
}

impl TryFrom<RawFieldSpec> for FieldSpec {
    type Error = Error;

    fn try_from(raw: RawFieldSpec) -> Result<Self> {
        Ok(match raw {
            RawFieldSpec::Constant { value } => FieldSpec::Constant { value },
            RawFieldSpec::Affine { a, b } => FieldSpec::Affine { a, b },
            RawFieldSpec::Trigonometric { a, b, c } => FieldSpec::Trigonometric { a, b, c },
            RawFieldSpec::Tabulated { x, v } => FieldSpec::tabulated(x, v)?,
        })
    }
}

impl From<FieldSpec> for RawFieldSpec {
    fn from(spec: FieldSpec) -> Self {
        match spec {
            FieldSpec::Constant { value } => RawFieldSpec::Constant { value },
            FieldSpec::Affine { a, b } => RawFieldSpec::Affine { a, b },
            FieldSpec::Trigonometric { a, b, c } => RawFieldSpec::Trigonometric { a, b, c },
            FieldSpec::Tabulated(t) => RawFieldSpec::Tabulated { x: t.x, v: t.v },
        }
    }
}

/// `1/b1 - 1/b2`, the phase density of the high-frequency resolvent argument.
#[derive(Clone, Debug)]
pub struct ReciprocalDifference<'a> {
    pub b1: &'a FieldSpec,
    pub b2: &'a FieldSpec,
}

impl ScalarField for ReciprocalDifference<'_> {
    fn value(&self, x: f64) -> f64 {
        1.0 / self.b1.value(x) - 1.0 / self.b2.value(x)
    }
}

/// Sign pattern of a sampled field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
    Mixed,
}

impl Sign {
    fn of_samples(values: &[f64]) -> Sign {
        if values.iter().all(|&v| v > 0.0) {
            Sign::Positive
        } else if values.iter().all(|&v| v < 0.0) {
            Sign::Negative
        } else {
            Sign::Mixed
        }
    }
}

/// Outcome of a sampled assumption check.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    /// Smallest sampled `|b_i|` over both fields.
    pub min_abs_value: f64,
    /// Where `min_abs_value` is attained.
    pub degeneracy_x: f64,
    /// Sign pattern of `b1` and `b2`.
    pub sign: [Sign; 2],
    /// Largest sampled distinguishing quantity: `|b1 - b2|`, or `|b1 - b2| sigma`.
    pub max_difference: f64,
    /// Smallest sampled `|b1 - b2|`.
    pub min_difference: f64,
    /// Where `max_difference` is attained.
    pub witness_x: f64,
    pub samples: usize,
    pub floor: f64,
    pub detail: String,
}

/// Sampled checks of the structural assumptions on `b1`, `b2`, `sigma`.
#[derive(Clone, Copy, Debug)]
pub struct Validator {
    pub samples: usize,
    pub floor: f64,
}

impl Default for Validator {
    fn default() -> Self {
        Validator {
            samples: DEFAULT_SAMPLES,
            floor: DEFAULT_FLOOR,
        }
    }
}

struct Sampled {
    xs: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

impl Validator {
    pub fn new(samples: usize, floor: f64) -> Self {
        Validator { samples, floor }
    }

    fn sample(&self, b1: &FieldSpec, b2: &FieldSpec) -> Sampled {
        let m = self.samples.max(2);
        let xs: Vec<f64> = (0..m).map(|j| j as f64 / (m - 1) as f64).collect();
        let b1 = xs.iter().map(|&x| b1.value(x)).collect();
        let b2 = xs.iter().map(|&x| b2.value(x)).collect();
        Sampled { xs, b1, b2 }
    }

    /// Both speeds bounded away from zero, and different somewhere.
    pub fn assumption1(&self, b1: &FieldSpec, b2: &FieldSpec) -> ValidationReport {
        let s = self.sample(b1, b2);
        let weights = vec![1.0; s.xs.len()];
        self.report(&s, &weights, "|b1 - b2|")
    }

    /// Both speeds bounded away from zero, `sigma >= 0`, and `b1 != b2` where `sigma > 0`.
    pub fn assumption2(
        &self,
        b1: &FieldSpec,
        b2: &FieldSpec,
        sigma: &FieldSpec,
    ) -> Result<ValidationReport> {
        let s = self.sample(b1, b2);
        let mut weights = Vec::with_capacity(s.xs.len());
        for &x in &s.xs {
            let value = sigma.value(x);
            if value < -self.floor || !value.is_finite() {
                return Err(Error::InvalidCrossSection { x, value });
            }
            weights.push(value.max(0.0));
        }
        Ok(self.report(&s, &weights, "|b1 - b2| sigma"))
    }

    fn report(&self, s: &Sampled, weights: &[f64], quantity: &str) -> ValidationReport {
        let sign = [Sign::of_samples(&s.b1), Sign::of_samples(&s.b2)];
        let mut min_abs_value = f64::INFINITY;
        let mut degeneracy_x = 0.0;
        let mut max_difference = f64::NEG_INFINITY;
        let mut min_difference = f64::INFINITY;
        let mut witness_x = 0.0;
        for (j, &x) in s.xs.iter().enumerate() {
            let m = s.b1[j].abs().min(s.b2[j].abs());
            if m < min_abs_value {
                min_abs_value = m;
                degeneracy_x = x;
            }
            let diff = (s.b1[j] - s.b2[j]).abs();
            min_difference = min_difference.min(diff);
            let weighted = diff * weights[j];
            if weighted > max_difference {
                max_difference = weighted;
                witness_x = x;
            }
        }
        let single_signed = sign.iter().all(|&sg| sg != Sign::Mixed);
        let nondegenerate = single_signed && min_abs_value > self.floor;
        let distinguishable = max_difference > self.floor;
        let passed = nondegenerate && distinguishable;
        let mut detail = format!(
            "{} samples, floor {:e}: min |b| = {:e} at x = {}; max {} = {:e} at x* = {}",
            s.xs.len(),
            self.floor,
            min_abs_value,
            degeneracy_x,
            quantity,
            max_difference,
            witness_x
        );
        if !single_signed {
            detail.push_str("; a velocity field changes sign (degenerate)");
        } else if !nondegenerate {
            detail.push_str("; a velocity field vanishes (degenerate)");
        }
        if !distinguishable {
            if min_difference.max(0.0) == 0.0 && max_difference_unweighted(s) <= self.floor {
                detail.push_str("; indistinguishable fields (b1 = b2 on the grid)");
            } else {
                detail.push_str("; b1 - b2 and sigma are never simultaneously non-zero");
            }
        }
        ValidationReport {
            passed,
            min_abs_value,
            degeneracy_x,
            sign,
            max_difference,
            min_difference,
            witness_x,
            samples: s.xs.len(),
            floor: self.floor,
            detail,
        }
    }
}

fn max_difference_unweighted(s: &Sampled) -> f64 {
    s.b1.iter()
        .zip(&s.b2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Sampled check that `b1`, `b2` are non-degenerate and distinguishable, at the default floor.
pub fn validate_assumption1(b1: &FieldSpec, b2: &FieldSpec, samples: usize) -> ValidationReport {
    Validator::new(samples, DEFAULT_FLOOR).assumption1(b1, b2)
}

/// Sampled check of the variable cross-section assumption, at the default floor.
pub fn validate_assumption2(
    b1: &FieldSpec,
    b2: &FieldSpec,
    sigma: &FieldSpec,
    samples: usize,
) -> Result<ValidationReport> {
    Validator::new(samples, DEFAULT_FLOOR).assumption2(b1, b2, sigma)
}
