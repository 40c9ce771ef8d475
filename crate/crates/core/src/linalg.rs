//! Dense kernels: real Schur eigenvalues, shifted complex Hessenberg LU,
//! Lanczos extremal estimates and the matrix exponential.

use nalgebra::{ComplexField, DMatrix, DVector, Hessenberg};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default cap on the dimension handed to the dense O(N^3) kernels.
pub const DENSE_CAP: usize = 4096;

/// Iteration budget per eigenvalue in the shifted QR iteration.
const QR_ITERATIONS: usize = 60;

/// Eigenvalues of a real square matrix.
///
/// Householder reduction to Hessenberg form followed by Francis double-shift QR
/// with exceptional shifts, as in EISPACK `hqr`.
pub fn eigenvalues(matrix: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::Shape {
            expected: n,
            found: matrix.ncols(),
        });
    }
    if n > DENSE_CAP {
        return Err(Error::TooLarge {
            size: n,
            cap: DENSE_CAP,
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let h = Hessenberg::new(matrix.clone()).unpack_h();
    hessenberg_eigenvalues(&h)
}

/// Eigenvalues of an upper Hessenberg matrix (entries below the subdiagonal are ignored).
pub fn hessenberg_eigenvalues(h: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = h.nrows();
    // 1-based working copy keeps the classical index arithmetic intact
    let stride = n + 1;
    let mut a = vec![0.0f64; stride * stride];
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            a[(i + 1) * stride + j + 1] = h[(i, j)];
        }
    }
    macro_rules! a {
        ($i:expr, $j:expr) => {
            a[($i) * stride + ($j)]
        };
    }

    let mut wr = vec![0.0f64; n + 1];
    let mut wi = vec![0.0f64; n + 1];
    let mut anorm = 0.0f64;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a!(i, j).abs();
        }
    }

    let mut nn = n;
    let mut t = 0.0f64;
    let mut its = 0usize;
    let mut total_its = 0usize;
    while nn >= 1 {
        let mut l = nn;
        while l >= 2 {
            let mut s = a!(l - 1, l - 1).abs() + a!(l, l).abs();
            if s == 0.0 {
                s = anorm;
            }
            if a!(l, l - 1).abs() <= f64::EPSILON * s {
                a!(l, l - 1) = 0.0;
                break;
            }
            l -= 1;
        }
        let mut x = a!(nn, nn);
        if l == nn {
            wr[nn] = x + t;
            wi[nn] = 0.0;
            nn -= 1;
            its = 0;
            continue;
        }
        let mut y = a!(nn - 1, nn - 1);
        let mut w = a!(nn, nn - 1) * a!(nn - 1, nn);
        if l == nn - 1 {
            let p = 0.5 * (y - x);
            let q = p * p + w;
            let mut z = q.abs().sqrt();
            x += t;
            if q >= 0.0 {
                z = p + z.copysign(p);
                wr[nn - 1] = x + z;
                wr[nn] = if z != 0.0 { x - w / z } else { x + z };
                wi[nn - 1] = 0.0;
                wi[nn] = 0.0;
            } else {
                wr[nn - 1] = x + p;
                wr[nn] = x + p;
                wi[nn - 1] = -z;
                wi[nn] = z;
            }
            nn = nn.saturating_sub(2);
            its = 0;
            continue;
        }

        if its == QR_ITERATIONS {
            return Err(Error::Numerical(format!(
                "QR iteration did not converge: {its} iterations on the trailing block of size {nn} \
                 ({} eigenvalues found, {total_its} iterations in total)",
                n - nn
            )));
        }
        if its == 10 || its == 20 || its == 40 {
            t += x;
            for i in 1..=nn {
                a!(i, i) -= x;
            }
            let s = a!(nn, nn - 1).abs() + a!(nn - 1, nn - 2).abs();
            x = 0.75 * s;
            y = x;
            w = -0.4375 * s * s;
        }
        its += 1;
        total_its += 1;

        let (mut p, mut q, mut r);
        let mut m = nn - 2;
        loop {
            let z = a!(m, m);
            r = x - z;
            let s = y - z;
            p = (r * s - w) / a!(m + 1, m) + a!(m, m + 1);
            q = a!(m + 1, m + 1) - z - r - s;
            r = a!(m + 2, m + 1);
            let s = p.abs() + q.abs() + r.abs();
            p /= s;
            q /= s;
            r /= s;
            if m == l {
                break;
            }
            let u = a!(m, m - 1).abs() * (q.abs() + r.abs());
            let v = p.abs() * (a!(m - 1, m - 1).abs() + z.abs() + a!(m + 1, m + 1).abs());
            if u <= f64::EPSILON * v {
                break;
            }
            m -= 1;
        }
        for i in m + 2..=nn {
            a!(i, i - 2) = 0.0;
            if i != m + 2 {
                a!(i, i - 3) = 0.0;
            }
        }
        let mut k = m;
        while k < nn {
            if k != m {
                p = a!(k, k - 1);
                q = a!(k + 1, k - 1);
                r = if k != nn - 1 { a!(k + 2, k - 1) } else { 0.0 };
                x = p.abs() + q.abs() + r.abs();
                if x != 0.0 {
                    p /= x;
                    q /= x;
                    r /= x;
                }
            }
            let s = (p * p + q * q + r * r).sqrt().copysign(p);
            if s != 0.0 {
                if k == m {
                    if l != m {
                        a!(k, k - 1) = -a!(k, k - 1);
                    }
                } else {
                    a!(k, k - 1) = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=nn {
                    let mut pp = a!(k, j) + q * a!(k + 1, j);
                    if k != nn - 1 {
                        pp += r * a!(k + 2, j);
                        a!(k + 2, j) -= pp * z;
                    }
                    a!(k + 1, j) -= pp * y;
                    a!(k, j) -= pp * x;
                }
                let mmin = nn.min(k + 3);
                for i in l..=mmin {
                    let mut pp = x * a!(i, k) + y * a!(i, k + 1);
                    if k != nn - 1 {
                        pp += z * a!(i, k + 2);
                        a!(i, k + 2) -= pp * r;
                    }
                    a!(i, k + 1) -= pp * q;
                    a!(i, k) -= pp;
                }
            }
            k += 1;
        }
    }
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

/// LU factorization of `H - shift I` for a real upper Hessenberg `H`, with
/// partial pivoting between adjacent rows.
pub struct HessenbergLu {
    n: usize,
    u: Vec<Complex64>,
    l: Vec<Complex64>,
    swap: Vec<bool>,
}

impl HessenbergLu {
    pub fn new(h: &DMatrix<f64>, shift: Complex64) -> Self {
        let n = h.nrows();
        let mut u = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in i.saturating_sub(1)..n {
                u[i * n + j] = Complex64::new(h[(i, j)], 0.0);
            }
            u[i * n + i] -= shift;
        }
        let mut l = vec![Complex64::new(0.0, 0.0); n.saturating_sub(1)];
        let mut swap = vec![false; n.saturating_sub(1)];
        for k in 0..n.saturating_sub(1) {
            let (top, bottom) = u.split_at_mut((k + 1) * n);
            let row_k = &mut top[k * n..];
            let row_r = &mut bottom[..n];
            if row_r[k].norm() > row_k[k].norm() {
                for j in k..n {
                    std::mem::swap(&mut row_k[j], &mut row_r[j]);
                }
                swap[k] = true;
            }
            if row_k[k] == Complex64::new(0.0, 0.0) {
                continue;
            }
            let factor = row_r[k] / row_k[k];
            l[k] = factor;
            row_r[k] = Complex64::new(0.0, 0.0);
            for j in k + 1..n {
                row_r[j] -= factor * row_k[j];
            }
        }
        HessenbergLu { n, u, l, swap }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Whether some pivot vanished exactly, i.e. the shifted matrix is singular.
    pub fn is_singular(&self) -> bool {
        (0..self.n).any(|i| self.u[i * self.n + i] == Complex64::new(0.0, 0.0))
    }

    /// Overwrites `b` with `(H - shift)^{-1} b`.
    pub fn solve(&self, b: &mut [Complex64]) {
        let n = self.n;
        for k in 0..n.saturating_sub(1) {
            if self.swap[k] {
                b.swap(k, k + 1);
            }
            let bk = b[k];
            b[k + 1] -= self.l[k] * bk;
        }
        for i in (0..n).rev() {
            let row = &self.u[i * n..(i + 1) * n];
            let mut acc = b[i];
            for j in i + 1..n {
                acc -= row[j] * b[j];
            }
            b[i] = acc / row[i];
        }
    }

    /// Overwrites `b` with `(H - shift)^{-*} b`.
    pub fn solve_adjoint(&self, b: &mut [Complex64]) {
        let n = self.n;
        for j in 0..n {
            let row = &self.u[j * n..(j + 1) * n];
            let zj = b[j] / row[j].conj();
            b[j] = zj;
            for i in j + 1..n {
                b[i] -= row[i].conj() * zj;
            }
        }
        for k in (0..n.saturating_sub(1)).rev() {
            let next = b[k + 1];
            b[k] -= self.l[k].conj() * next;
            if self.swap[k] {
                b.swap(k, k + 1);
            }
        }
    }
}

/// Outcome of a Lanczos extremal eigenvalue estimate.
#[derive(Clone, Copy, Debug)]
pub struct LanczosResult {
    pub value: f64,
    /// Relative change of the top Ritz value over the last step.
    pub change: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Largest eigenvalue of a Hermitian positive semidefinite operator by Lanczos
/// with full reorthogonalization.
///
/// Stops once the top Ritz value (which increases monotonically) changes by at
/// most `tol` relative over two consecutive steps, or on an invariant subspace.
pub fn lanczos_max<T, F>(
    mut op: F,
    start: &DVector<T>,
    max_steps: usize,
    tol: f64,
) -> LanczosResult
where
    T: ComplexField<RealField = f64>,
    F: FnMut(&DVector<T>) -> DVector<T>,
{
    let dim = start.len();
    let max_steps = max_steps.min(dim).max(1);
    let mut basis: Vec<DVector<T>> = Vec::with_capacity(max_steps);
    let mut alpha: Vec<f64> = Vec::with_capacity(max_steps);
    let mut beta: Vec<f64> = Vec::with_capacity(max_steps);
    let mut v = start.clone();
    let norm = v.norm();
    v.unscale_mut(norm);

    let mut history = [f64::NAN; 2];
    let mut best = LanczosResult {
        value: 0.0,
        change: f64::INFINITY,
        steps: 0,
        converged: false,
    };
    for step in 0..max_steps {
        let mut w = op(&v);
        let a = v.dotc(&w).real();
        basis.push(v.clone());
        alpha.push(a);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for q in &basis {
                let c = q.dotc(&w);
                w.axpy(-c, q, T::one());
            }
        }
        let b = w.norm();
        let theta = tridiagonal_max(&alpha, &beta);
        let change = ((theta - history[1]).abs()).max((history[1] - history[0]).abs()) / theta.abs();
        history = [history[1], theta];
        let invariant = b <= f64::EPSILON * theta.abs();
        best = LanczosResult {
            value: theta,
            change,
            steps: step + 1,
            converged: invariant || change <= tol,
        };
        if best.converged {
            break;
        }
        beta.push(b);
        v = w.unscale(b);
    }
    best
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`, by Sturm-sequence bisection.
pub fn tridiagonal_max(alpha: &[f64], beta: &[f64]) -> f64 {
    let m = alpha.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        let r = if i > 0 { beta[i - 1].abs() } else { 0.0 } + if i + 1 < m { beta[i].abs() } else { 0.0 };
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    // number of eigenvalues strictly greater than x
    let above = |x: f64| {
        let mut count = 0usize;
        let mut d = 1.0f64;
        for i in 0..m {
            let b2 = if i > 0 { beta[i - 1] * beta[i - 1] } else { 0.0 };
            d = alpha[i] - x - if i > 0 { b2 / d } else { 0.0 };
            if d == 0.0 {
                d = -f64::EPSILON * (x.abs() + f64::MIN_POSITIVE);
            }
            if d > 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if above(mid) >= 1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Smallest singular value of `H - shift I` by inverse Lanczos on `(M^* M)^{-1}`.
///
/// `tol` bounds the relative stagnation of the Ritz value `1 / sigma^2`.
pub fn sigma_min_shifted(
    h: &DMatrix<f64>,
    shift: Complex64,
    start: &DVector<Complex64>,
    tol: f64,
) -> Result<(f64, LanczosResult)> {
    let lu = HessenbergLu::new(h, shift);
    if lu.is_singular() {
        let exact = LanczosResult {
            value: f64::INFINITY,
            change: 0.0,
            steps: 0,
            converged: true,
        };
        return Ok((0.0, exact));
    }
    let result = lanczos_max(
        |v| {
            let mut x = v.clone();
            lu.solve_adjoint(x.as_mut_slice());
            lu.solve(x.as_mut_slice());
            x
        },
        start,
        80,
        tol,
    );
    if !result.value.is_finite() || result.value <= 0.0 {
        return Err(Error::Numerical(format!(
            "inverse Lanczos failed at shift {shift}: Ritz value {}",
            result.value
        )));
    }
    Ok((1.0 / result.value.sqrt(), result))
}

/// Largest singular value of a real matrix by Lanczos on `E^T E`.
pub fn spectral_norm(e: &DMatrix<f64>) -> f64 {
    let n = e.ncols();
    if n == 0 {
        return 0.0;
    }
    let start = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i * 7919) % 101) as f64 / 101.0);
    let r = lanczos_max(|v| e.tr_mul(&(e * v)), &start, 120, 1e-14);
    r.value.max(0.0).sqrt()
}

/// Unit vector approximately spanning the kernel of `matrix - mu I`, by
/// inverse iteration with a slightly perturbed complex shift.
pub fn inverse_iteration(matrix: &DMatrix<f64>, mu: Complex64) -> Result<DVector<Complex64>> {
    let n = matrix.nrows();
    let scale = matrix.norm().max(1.0);
    let shift = mu + Complex64::new(1e-10 * scale, 0.0);
    let shifted = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        let mut z = Complex64::new(matrix[(i, j)], 0.0);
        if i == j {
            z -= shift;
        }
        z
    });
    let lu = shifted.lu();
    let mut v = DVector::<Complex64>::from_fn(n, |i, _| {
        Complex64::new(1.0 + ((i * 37) % 11) as f64 / 11.0, 0.0)
    });
    for _ in 0..3 {
        v = lu
            .solve(&v)
            .ok_or_else(|| Error::Numerical("singular shift in inverse iteration".into()))?;
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Numerical("inverse iteration broke down".into()));
        }
        v.unscale_mut(norm);
    }
    Ok(v)
}

/// `||matrix v - mu v|| / ||v||` for the inverse-iteration eigenvector at `mu`.
pub fn eigenpair_residual(matrix: &DMatrix<f64>, mu: Complex64) -> Result<f64> {
    let v = inverse_iteration(matrix, mu)?;
    let mc = matrix.map(|x| Complex64::new(x, 0.0));
    let r = &mc * &v - v.scale(1.0) * mu;
    Ok(r.norm() / v.norm())
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

/// Matrix exponential by scaling and squaring with a degree 3 to 13 Pade core.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Shape {
            expected: n,
            found: a.ncols(),
        });
    }
    let norm = norm1(a);
    if !norm.is_finite() {
        return Err(Error::Numerical("non-finite matrix passed to expm".into()));
    }
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let low: [&[f64]; 4] = [&PADE3, &PADE5, &PADE7, &PADE9];
    for (deg, c) in low.iter().enumerate() {
        if norm <= THETA[deg] {
            let mut even = ident.scale(c[0]);
            let mut odd = ident.scale(c[1]);
            let mut power = ident.clone();
            for k in 1..c.len() / 2 {
                power = &power * &a2;
                even += power.scale(c[2 * k]);
                odd += power.scale(c[2 * k + 1]);
            }
            let u = a * odd;
            return pade_solve(&even, &u);
        }
    }

    let s = (norm / THETA[4]).log2().ceil().max(0.0) as i32;
    let scale = 0.5f64.powi(s);
    let a1 = a.scale(scale);
    let b = &PADE13;
    let a2 = &a1 * &a1;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = a6.scale(b[13]) + a4.scale(b[11]) + a2.scale(b[9]);
    let u = &a1
        * (&a6 * inner_u + a6.scale(b[7]) + a4.scale(b[5]) + a2.scale(b[3]) + ident.scale(b[1]));
    let inner_v = a6.scale(b[12]) + a4.scale(b[10]) + a2.scale(b[8]);
    let v = &a6 * inner_v + a6.scale(b[6]) + a4.scale(b[4]) + a2.scale(b[2]) + ident.scale(b[0]);
    let mut r = pade_solve(&v, &u)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!(
            "matrix exponential overflowed after {s} squarings"
        )));
    }
    Ok(r)
}

fn pade_solve(v: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = v - u;
    let p = v + u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::Numerical("singular Pade denominator in expm".into()))
}
