//! Positive steady state of the two-speed model.
//!
//! With fluxes `J_i = b_i p_i` the steady equations become the linear ODE
//!
//! ```text
//! J' = sigma(x) [[-1, 1], [1, -1]] diag(1/b1, 1/b2) J,    J(0) = J(1),
//! ```
//!
//! so steady fluxes are fixed vectors of the fundamental matrix `Phi(1)`.
//! `(1, 1)` is a left eigenvector of `Phi(x)` for every `x`, hence `J1 + J2`
//! is constant along the interval.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{FieldSpec, ScalarField, DEFAULT_FLOOR};
use crate::io::write_table;

/// Row-major 2x2 real matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Matrix2(pub [[f64; 2]; 2]);

impl Matrix2 {
    pub const IDENTITY: Matrix2 = Matrix2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn mul(&self, rhs: &Matrix2) -> Matrix2 {
        let (a, b) = (&self.0, &rhs.0);
        Matrix2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let a = &self.0;
        [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
    }

    fn axpy(&self, s: f64, other: &Matrix2) -> Matrix2 {
        let mut out = *self;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] += s * other.0[i][j];
            }
        }
        out
    }

    pub fn column_sums(&self) -> [f64; 2] {
        [self.0[0][0] + self.0[1][0], self.0[0][1] + self.0[1][1]]
    }

    pub fn max_abs_diff(&self, other: &Matrix2) -> f64 {
        let mut m = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                m = m.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        m
    }

    /// Singular values `(largest, smallest)`.
    pub fn singular_values(&self) -> (f64, f64) {
        let a = &self.0;
        let fro2 = a[0][0].powi(2) + a[0][1].powi(2) + a[1][0].powi(2) + a[1][1].powi(2);
        let det = (a[0][0] * a[1][1] - a[0][1] * a[1][0]).abs();
        let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
        let smax = (0.5 * (fro2 + disc)).sqrt();
        let smin = if smax > 0.0 { det / smax } else { 0.0 };
        (smax, smin)
    }
}

/// Tuning of the steady-state solver.
#[derive(Clone, Copy, Debug)]
pub struct SteadyOptions {
    /// Integrator steps over the whole interval (rounded up to a multiple of the grid size).
    pub steps: usize,
    /// Relative rank tolerance for the kernel of `Phi(1) - I`.
    pub rank_tol: f64,
    pub floor: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions {
            steps: 4096,
            rank_tol: 1e-8,
            floor: DEFAULT_FLOOR,
        }
    }
}

/// Nodal steady state on `n + 1` uniform nodes, unit total mass.
#[derive(Clone, Debug, Serialize)]
pub struct SteadyState {
    pub x: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub j1: Vec<f64>,
    pub j2: Vec<f64>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub residual: f64,
    /// Trapezoid masses of the two components.
    pub component_masses: [f64; 2],
    /// `Phi(1)` as used for the kernel extraction.
    pub monodromy: Matrix2,
}

impl SteadyState {
    /// Number of cells of the nodal grid.
    pub fn n(&self) -> usize {
        self.x.len() - 1
    }

    /// Writes columns `x, p1, p2, J1, J2`.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let rows = (0..self.x.len())
            .map(|k| vec![self.x[k], self.p1[k], self.p2[k], self.j1[k], self.j2[k]]);
        write_table(out, comment, &["x", "p1", "p2", "J1", "J2"], rows)
    }
}

struct FluxSystem<'a> {
    b1: &'a FieldSpec,
    b2: &'a FieldSpec,
    sigma: &'a FieldSpec,
    floor: f64,
}

impl FluxSystem<'_> {
    // sigma K diag(1/b1, 1/b2)
    fn coefficient(&self, x: f64) -> Result<Matrix2> {
        let x = x.clamp(0.0, 1.0);
        let b1 = self.b1.value(x);
        let b2 = self.b2.value(x);
        for (component, value) in [(1, b1), (2, b2)] {
            if !(value.abs() >= self.floor) {
                return Err(Error::Degenerate { component, x, value });
            }
        }
        let s = self.sigma.value(x);
        let (r1, r2) = (s / b1, s / b2);
        Ok(Matrix2([[-r1, r2], [r1, -r2]]))
    }

    fn rk4_matrix(&self, x: f64, h: f64, phi: &Matrix2) -> Result<Matrix2> {
        let f0 = self.coefficient(x)?;
        let fm = self.coefficient(x + 0.5 * h)?;
        let f1 = self.coefficient(x + h)?;
        let k1 = f0.mul(phi);
        let k2 = fm.mul(&phi.axpy(0.5 * h, &k1));
        let k3 = fm.mul(&phi.axpy(0.5 * h, &k2));
        let k4 = f1.mul(&phi.axpy(h, &k3));
        let mut out = *phi;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] += h / 6.0
                    * (k1.0[i][j] + 2.0 * k2.0[i][j] + 2.0 * k3.0[i][j] + k4.0[i][j]);
            }
        }
        Ok(out)
    }

    fn rk4_vector(&self, x: f64, h: f64, v: [f64; 2]) -> Result<[f64; 2]> {
        let f0 = self.coefficient(x)?;
        let fm = self.coefficient(x + 0.5 * h)?;
        let f1 = self.coefficient(x + h)?;
        let k1 = f0.apply(v);
        let k2 = fm.apply([v[0] + 0.5 * h * k1[0], v[1] + 0.5 * h * k1[1]]);
        let k3 = fm.apply([v[0] + 0.5 * h * k2[0], v[1] + 0.5 * h * k2[1]]);
        let k4 = f1.apply([v[0] + h * k3[0], v[1] + h * k3[1]]);
        Ok([
            v[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            v[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ])
    }

    fn propagate(&self, x_end: f64, steps: usize) -> Result<Matrix2> {
        let h = x_end / steps as f64;
        let mut phi = Matrix2::IDENTITY;
        for s in 0..steps {
            phi = self.rk4_matrix(s as f64 * h, h, &phi)?;
        }
        Ok(phi)
    }
}

/// Fundamental matrix `Phi(x)` of the flux ODE by `steps` classical RK4 steps.
pub fn fundamental_matrix(
    b1: &FieldSpec,
    b2: &FieldSpec,
    sigma: &FieldSpec,
    x: f64,
    steps: usize,
) -> Result<Matrix2> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain { x });
    }
    if steps == 0 {
        return Err(Error::Config("fundamental_matrix needs at least one step".into()));
    }
    let system = FluxSystem {
        b1,
        b2,
        sigma,
        floor: DEFAULT_FLOOR,
    };
    system.propagate(x, steps)
}

/// Unique positive steady state with unit total mass, with default options.
pub fn solve_steady(
    b1: &FieldSpec,
    b2: &FieldSpec,
    sigma: &FieldSpec,
    n: usize,
) -> Result<SteadyState> {
    solve_steady_with(b1, b2, sigma, n, &SteadyOptions::default())
}

pub fn solve_steady_with(
    b1: &FieldSpec,
    b2: &FieldSpec,
    sigma: &FieldSpec,
    n: usize,
    opts: &SteadyOptions,
) -> Result<SteadyState> {
    if n < 8 {
        return Err(Error::Config(format!("steady grid needs n >= 8 cells, got {n}")));
    }
    let system = FluxSystem {
        b1,
        b2,
        sigma,
        floor: opts.floor,
    };
    // same step sequence for Phi(1) and for the nodal propagation
    let substeps = opts.steps.div_ceil(n).max(1);
    let h_node = 1.0 / n as f64;
    let h_step = h_node / substeps as f64;

    let monodromy = system.propagate(1.0, n * substeps)?;
    let kernel = kernel_direction(&monodromy, opts.rank_tol)?;

    let mut j1 = Vec::with_capacity(n + 1);
    let mut j2 = Vec::with_capacity(n + 1);
    let mut state = kernel;
    j1.push(state[0]);
    j2.push(state[1]);
    for k in 0..n {
        for s in 0..substeps {
            let x = k as f64 * h_node + s as f64 * h_step;
            state = system.rk4_vector(x, h_step, state)?;
        }
        j1.push(state[0]);
        j2.push(state[1]);
    }

    let x: Vec<f64> = (0..=n).map(|k| k as f64 * h_node).collect();
    let mut p1: Vec<f64> = x.iter().zip(&j1).map(|(&xk, &j)| j / b1.value(xk)).collect();
    let mut p2: Vec<f64> = x.iter().zip(&j2).map(|(&xk, &j)| j / b2.value(xk)).collect();

    let total = trapezoid(&p1, h_node) + trapezoid(&p2, h_node);
    if !(total.abs() > 0.0) || !total.is_finite() {
        return Err(Error::Numerical(format!(
            "steady state has total mass {total}; cannot normalize"
        )));
    }
    let scale = 1.0 / total;
    for v in p1.iter_mut().chain(p2.iter_mut()) {
        *v *= scale;
    }
    for v in j1.iter_mut().chain(j2.iter_mut()) {
        *v *= scale;
    }
    for (index, &value) in p1.iter().chain(p2.iter()).enumerate() {
        if !(value > 0.0) {
            return Err(Error::Positivity { index, value });
        }
    }

    let lower_bound = p1.iter().chain(&p2).copied().fold(f64::INFINITY, f64::min);
    let upper_bound = p1.iter().chain(&p2).copied().fold(f64::NEG_INFINITY, f64::max);
    let component_masses = [trapezoid(&p1, h_node), trapezoid(&p2, h_node)];
    let mut ss = SteadyState {
        x,
        p1,
        p2,
        j1,
        j2,
        lower_bound,
        upper_bound,
        residual: f64::NAN,
        component_masses,
        monodromy,
    };
    ss.residual = steady_residual(&ss, b1, b2, sigma)?;
    Ok(ss)
}

/// Kernel direction of `Phi(1) - I`, which must be exactly one-dimensional.
fn kernel_direction(monodromy: &Matrix2, rank_tol: f64) -> Result<[f64; 2]> {
    let mut m = *monodromy;
    m.0[0][0] -= 1.0;
    m.0[1][1] -= 1.0;
    let (phi_norm, _) = monodromy.singular_values();
    let tolerance = rank_tol * phi_norm;
    let (sigma_max, sigma_min) = m.singular_values();
    let dimension = if sigma_max <= tolerance {
        2
    } else if sigma_min > tolerance {
        0
    } else {
        1
    };
    if dimension != 1 {
        return Err(Error::NonUniqueSteady {
            dimension,
            sigma_max,
            sigma_min,
            tolerance,
        });
    }
    // for a rank-one matrix the kernel is orthogonal to its dominant row
    let rows = m.0;
    let r = if rows[0][0].hypot(rows[0][1]) >= rows[1][0].hypot(rows[1][1]) {
        rows[0]
    } else {
        rows[1]
    };
    let norm = r[0].hypot(r[1]);
    Ok([-r[1] / norm, r[0] / norm])
}

pub(crate) fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Max-norm defect of both steady equations and of the flux-periodic boundary condition.
///
/// Fluxes are recomputed from the nodal densities and the fields; derivatives use
/// fourth-order finite differences (centered in the interior, one-sided at the ends).
pub fn steady_residual(
    ss: &SteadyState,
    b1: &FieldSpec,
    b2: &FieldSpec,
    sigma: &FieldSpec,
) -> Result<f64> {
    let nodes = ss.x.len();
    for len in [ss.p1.len(), ss.p2.len()] {
        if len != nodes {
            return Err(Error::Shape {
                expected: nodes,
                found: len,
            });
        }
    }
    if nodes < 9 {
        return Err(Error::Shape {
            expected: 9,
            found: nodes,
        });
    }
    let n = nodes - 1;
    let h = 1.0 / n as f64;
    let flux1: Vec<f64> = ss.x.iter().zip(&ss.p1).map(|(&x, &p)| b1.value(x) * p).collect();
    let flux2: Vec<f64> = ss.x.iter().zip(&ss.p2).map(|(&x, &p)| b2.value(x) * p).collect();
    let d1 = derivative4(&flux1, h);
    let d2 = derivative4(&flux2, h);
    let mut defect = 0.0f64;
    for k in 0..nodes {
        let s = sigma.value(ss.x[k]);
        let exchange = s * (ss.p1[k] - ss.p2[k]);
        defect = defect.max((d1[k] + exchange).abs());
        defect = defect.max((d2[k] - exchange).abs());
    }
    defect = defect.max((flux1[0] - flux1[n]).abs());
    defect = defect.max((flux2[0] - flux2[n]).abs());
    Ok(defect)
}

fn derivative4(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len() - 1;
    let c = 1.0 / (12.0 * h);
    let mut d = vec![0.0; n + 1];
    d[0] = c * (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]);
    d[1] = c * (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]);
    for k in 2..n - 1 {
        d[k] = c * (f[k - 2] - 8.0 * f[k - 1] + 8.0 * f[k + 1] - f[k + 2]);
    }
    d[n - 1] = c * (3.0 * f[n] + 10.0 * f[n - 1] - 18.0 * f[n - 2] + 6.0 * f[n - 3] - f[n - 4]);
    d[n] = c * (25.0 * f[n] - 48.0 * f[n - 1] + 36.0 * f[n - 2] - 16.0 * f[n - 3] + 3.0 * f[n - 4]);
    d
}
