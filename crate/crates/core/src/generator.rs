//! Upwind finite-volume discretization of the two-speed generator.
//!
//! Unknowns are cell averages stacked as `(p1 cells, p2 cells)`. Face `n` is
//! identified with face `0` in the flux variable, which is the discrete form of
//! the flux-periodic boundary condition `b_i(0) p_i(0) = b_i(1) p_i(1)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::{FieldSpec, ScalarField, DEFAULT_FLOOR};
use crate::io::fmt_real;
use crate::linalg::DENSE_CAP;

/// Uniform cell grid on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::Config(format!("grid needs n >= 8 cells, got {n}")));
        }
        Ok(Grid { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.n as f64
    }

    pub fn face(&self, f: usize) -> f64 {
        f as f64 / self.n as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.center(k)).collect()
    }
}

/// Assembled generator with its discrete steady state.
#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    grid: Grid,
    matrix: DMatrix<f64>,
    face_speeds: [Vec<f64>; 2],
    sigma_cells: Vec<f64>,
    discrete_steady: Vec<f64>,
    weights: Vec<f64>,
    steady_defect: f64,
}

/// Builds the generator for the given fields.
pub fn assemble(
    b1: &FieldSpec,
    b2: &FieldSpec,
    sigma: &FieldSpec,
    grid: Grid,
) -> Result<GeneratorMatrix> {
    let n = grid.n();
    let dim = 2 * n;
    if dim > DENSE_CAP {
        return Err(Error::TooLarge {
            size: dim,
            cap: DENSE_CAP,
        });
    }
    let h = grid.h();
    let face_speeds = [
        (0..=n).map(|f| b1.value(grid.face(f))).collect::<Vec<_>>(),
        (0..=n).map(|f| b2.value(grid.face(f))).collect::<Vec<_>>(),
    ];
    if face_speeds.iter().flatten().any(|b| !b.is_finite()) {
        return Err(Error::InvalidField("non-finite velocity at a face".into()));
    }
    let mut sigma_cells = Vec::with_capacity(n);
    for k in 0..n {
        let x = grid.center(k);
        let s = sigma.value(x);
        if !(s >= -DEFAULT_FLOOR) {
            return Err(Error::InvalidCrossSection { x, value: s });
        }
        sigma_cells.push(s.max(0.0));
    }

    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for (c, speeds) in face_speeds.iter().enumerate() {
        let off = c * n;
        for f in 0..n {
            // face f separates cell f-1 (left, wrapping) from cell f (right)
            let left = if f == 0 { n - 1 } else { f - 1 };
            let right = f;
            let b = if f == 0 {
                if speeds[n] > 0.0 {
                    speeds[n]
                } else if speeds[0] < 0.0 {
                    speeds[0]
                } else {
                    0.0
                }
            } else {
                speeds[f]
            };
            let rate = b / h;
            if b > 0.0 {
                a[(off + right, off + left)] += rate;
            } else if b < 0.0 {
                a[(off + left, off + right)] -= rate;
            }
        }
    }
    for k in 0..n {
        let s = sigma_cells[k];
        a[(n + k, k)] += s;
        a[(k, n + k)] += s;
    }
    // diagonal closes every column to an exact zero sum
    for j in 0..dim {
        a[(j, j)] = 0.0;
        let off: f64 = (0..dim).filter(|&i| i != j).map(|i| a[(i, j)]).sum();
        a[(j, j)] = -off;
    }

    let discrete_steady = null_state(&a, h)?;
    let weights: Vec<f64> = discrete_steady.iter().map(|q| 1.0 / q).collect();
    let q = DVector::from_column_slice(&discrete_steady);
    let defect = (&a * &q).amax();

    Ok(GeneratorMatrix {
        grid,
        matrix: a,
        face_speeds,
        sigma_cells,
        discrete_steady,
        weights,
        steady_defect: defect,
    })
}

// Bordered solve: the first row of A is replaced by the mass functional.
fn null_state(a: &DMatrix<f64>, h: f64) -> Result<Vec<f64>> {
    let dim = a.nrows();
    let mut bordered = a.clone();
    for j in 0..dim {
        bordered[(0, j)] = h;
    }
    let lu = bordered.lu();
    let u = lu.u();
    let pivots = u.diagonal().map(f64::abs);
    let (pmin, pmax) = (pivots.min(), pivots.max());
    if !(pmin > 1e-12 * pmax) {
        return Err(Error::DefectiveGenerator(format!(
            "kernel is not one-dimensional: pivot ratio {:e}",
            pmin / pmax
        )));
    }
    let mut rhs = DVector::<f64>::zeros(dim);
    rhs[0] = 1.0;
    let q = lu
        .solve(&rhs)
        .ok_or_else(|| Error::DefectiveGenerator("bordered system is singular".into()))?;
    let norm_a = a.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let defect = (a * &q).amax();
    if !(defect <= 1e-8 * norm_a * q.amax()) {
        return Err(Error::DefectiveGenerator(format!(
            "null state defect {defect:e} exceeds the rank tolerance"
        )));
    }
    for (index, &value) in q.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::Positivity { index, value });
        }
    }
    Ok(q.as_slice().to_vec())
}

impl GeneratorMatrix {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Speeds `b_i` at the `n + 1` faces, for `component` 0 or 1.
    pub fn face_speeds(&self, component: usize) -> &[f64] {
        &self.face_speeds[component]
    }

    pub fn sigma_cells(&self) -> &[f64] {
        &self.sigma_cells
    }

    /// Positive null vector with `h * sum = 1`.
    pub fn discrete_steady(&self) -> &[f64] {
        &self.discrete_steady
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `max |A q|` for the stored null state.
    pub fn steady_defect(&self) -> f64 {
        self.steady_defect
    }

    pub fn max_speed(&self) -> f64 {
        self.face_speeds.iter().flatten().fold(0.0f64, |m, b| m.max(b.abs()))
    }

    pub fn min_speed(&self) -> f64 {
        self.face_speeds
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, b| m.min(b.abs()))
    }

    /// Max row sum norm.
    pub fn norm_inf(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }

    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p.len())?;
        let v = DVector::from_column_slice(p);
        Ok((&self.matrix * v).as_slice().to_vec())
    }

    pub fn apply_complex(&self, p: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(p.len())?;
        let dim = self.dim();
        let mut out = vec![Complex64::new(0.0, 0.0); dim];
        for j in 0..dim {
            let pj = p[j];
            for (i, &aij) in self.matrix.column(j).iter().enumerate() {
                if aij != 0.0 {
                    out[i] += pj * aij;
                }
            }
        }
        Ok(out)
    }

    /// Discrete total mass `h * sum(p)`.
    pub fn mass(&self, p: &[f64]) -> f64 {
        self.h() * p.iter().sum::<f64>()
    }

    /// Column sums, off-diagonal entries first, then the diagonal.
    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                let off: f64 = (0..self.dim())
                    .filter(|&i| i != j)
                    .map(|i| self.matrix[(i, j)])
                    .sum();
                off + self.matrix[(j, j)]
            })
            .collect()
    }

    /// Weighted inner product `sum_k h p_k conj(q_k) / q_inf,k`.
    pub fn inner(&self, p: &[Complex64], q: &[Complex64]) -> Result<Complex64> {
        self.check_len(p.len())?;
        self.check_len(q.len())?;
        let s: Complex64 = p
            .iter()
            .zip(q)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b.conj() * *w)
            .sum();
        Ok(s * self.h())
    }

    /// `Re <A p, p> / <p, p>` in the weighted metric.
    pub fn rayleigh_quotient(&self, p: &[Complex64]) -> Result<f64> {
        let ap = self.apply_complex(p)?;
        let num = self.inner(&ap, p)?.re;
        let den = self.inner(p, p)?.re;
        Ok(num / den)
    }

    /// Largest weighted Rayleigh quotient over `trials` random complex states.
    pub fn dissipativity_check(&self, trials: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..trials.max(1) {
            let p: Vec<Complex64> = (0..self.dim())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let r = self
                .rayleigh_quotient(&p)
                .expect("random state has the generator's dimension");
            worst = worst.max(r);
        }
        worst
    }

    /// `W^{1/2} A W^{-1/2}` with `W = diag(1 / q)`: the generator in coordinates
    /// where the weighted metric is Euclidean.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let s: Vec<f64> = self.discrete_steady.iter().map(|q| q.sqrt()).collect();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.matrix[(i, j)] * s[j] / s[i])
    }

    /// Unit vector along `W^{1/2} q`; it spans both the kernel and the co-kernel
    /// of the symmetrized matrix.
    pub fn steady_direction(&self) -> DVector<f64> {
        let v = DVector::from_iterator(self.dim(), self.discrete_steady.iter().map(|q| q.sqrt()));
        let norm = v.norm();
        v.unscale(norm)
    }

    /// Top eigenvalue of the Hermitian part of the symmetrized matrix.
    pub fn hermitian_top_eigenvalue(&self) -> f64 {
        let b = self.symmetrized();
        let herm = (&b + b.transpose()).scale(0.5);
        SymmetricEigen::new(herm).eigenvalues.max()
    }

    /// The symmetrized generator restricted to the mass-zero subspace, in an
    /// orthonormal basis of the complement of the steady direction.
    pub fn restricted(&self) -> DMatrix<f64> {
        let b = self.symmetrized();
        let u = self.steady_direction();
        let dim = self.dim();
        // Householder reflector mapping u to -e1
        let mut v = u.clone();
        v[0] += 1.0f64.copysign(u[0]);
        let vv = v.norm_squared();
        let left = v.transpose() * &b;
        let hb = &b - (&v * left).scale(2.0 / vv);
        let right = &hb * &v;
        let hbh = &hb - (right * v.transpose()).scale(2.0 / vv);
        hbh.view((1, 1), (dim - 1, dim - 1)).into_owned()
    }

    /// Steady state plus the mass-free perturbation `a cos(2 pi k x) (1, -1)`.
    pub fn steady_plus_mode(&self, k: u32, amplitude: f64) -> Vec<f64> {
        let n = self.n();
        let mut p = self.discrete_steady.clone();
        for j in 0..n {
            let s = amplitude * (2.0 * std::f64::consts::PI * k as f64 * self.grid.center(j)).cos();
            p[j] += s;
            p[n + j] -= s;
        }
        p
    }

    /// `((1 + a) q1, (1 - a) q2)`: equal mass shifted between the components.
    pub fn component_imbalance(&self, amplitude: f64) -> Vec<f64> {
        let n = self.n();
        let mut p = self.discrete_steady.clone();
        let (m1, m2) = (self.mass(&p[..n]), self.mass(&p[n..]));
        for j in 0..n {
            p[j] *= 1.0 + amplitude;
            p[n + j] *= 1.0 - amplitude * m1 / m2;
        }
        p
    }

    /// Writes the dense matrix row by row.
    pub fn write_matrix_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(comment) = comment {
            writeln!(out, "# {comment}")?;
        }
        let mut writer = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..self.dim()).map(|j| format!("c{j}")).collect();
        writer.write_record(&header)?;
        for row in self.matrix.row_iter() {
            writer.write_record(row.iter().map(|&v| fmt_real(v)))?;
        }
        writer.flush()?;
        Ok(())
    }
}
