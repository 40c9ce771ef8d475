//! Weighted Hilbert space with weights `1 / p_inf`, the equilibrium projector
//! and the mass-zero subspace.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::generator::GeneratorMatrix;
use crate::steady_state::SteadyState;

/// Complex two-component state sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub x: Vec<f64>,
    pub p1: Vec<Complex64>,
    pub p2: Vec<Complex64>,
}

impl StateVector {
    pub fn new(x: Vec<f64>, p1: Vec<Complex64>, p2: Vec<Complex64>) -> Result<Self> {
        for len in [p1.len(), p2.len()] {
            if len != x.len() {
                return Err(Error::Shape {
                    expected: x.len(),
                    found: len,
                });
            }
        }
        if p1.iter().chain(&p2).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("state has non-finite entries".into()));
        }
        Ok(StateVector { x, p1, p2 })
    }

    pub fn from_real(x: Vec<f64>, p1: &[f64], p2: &[f64]) -> Result<Self> {
        let c = |v: &[f64]| v.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        Self::new(x, c(p1), c(p2))
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn scale(&self, s: Complex64) -> StateVector {
        StateVector {
            x: self.x.clone(),
            p1: self.p1.iter().map(|z| z * s).collect(),
            p2: self.p2.iter().map(|z| z * s).collect(),
        }
    }

    /// `self - other` on a shared grid.
    pub fn sub(&self, other: &StateVector) -> StateVector {
        StateVector {
            x: self.x.clone(),
            p1: self.p1.iter().zip(&other.p1).map(|(a, b)| a - b).collect(),
            p2: self.p2.iter().zip(&other.p2).map(|(a, b)| a - b).collect(),
        }
    }

    /// Components stacked as `(p1, p2)`.
    pub fn stacked(&self) -> Vec<Complex64> {
        self.p1.iter().chain(&self.p2).copied().collect()
    }
}

/// Inner-product structure induced by a positive steady state.
#[derive(Clone, Debug)]
pub struct WeightedSpace {
    x: Vec<f64>,
    steady: [Vec<f64>; 2],
    weights: [Vec<f64>; 2],
    quadrature: Vec<f64>,
    lower_bound: f64,
    upper_bound: f64,
}

impl WeightedSpace {
    /// Nodal space of an ODE steady state, with trapezoid quadrature.
    pub fn from_steady(ss: &SteadyState) -> Result<Self> {
        let n = ss.x.len();
        if n < 2 {
            return Err(Error::Shape {
                expected: 2,
                found: n,
            });
        }
        let h = 1.0 / (n - 1) as f64;
        let mut quadrature = vec![h; n];
        quadrature[0] = 0.5 * h;
        quadrature[n - 1] = 0.5 * h;
        Self::build(ss.x.clone(), ss.p1.clone(), ss.p2.clone(), quadrature)
    }

    /// Cell space of a generator's discrete steady state, with weights `h`.
    pub fn from_generator(gen: &GeneratorMatrix) -> Result<Self> {
        let n = gen.n();
        let q = gen.discrete_steady();
        Self::build(
            gen.grid().centers(),
            q[..n].to_vec(),
            q[n..].to_vec(),
            vec![gen.h(); n],
        )
    }

    fn build(x: Vec<f64>, p1: Vec<f64>, p2: Vec<f64>, quadrature: Vec<f64>) -> Result<Self> {
        for (index, &value) in p1.iter().chain(&p2).enumerate() {
            if !(value > 0.0) {
                return Err(Error::Positivity { index, value });
            }
        }
        let lower_bound = p1.iter().chain(&p2).copied().fold(f64::INFINITY, f64::min);
        let upper_bound = p1.iter().chain(&p2).copied().fold(f64::NEG_INFINITY, f64::max);
        let weights = [
            p1.iter().map(|p| 1.0 / p).collect(),
            p2.iter().map(|p| 1.0 / p).collect(),
        ];
        Ok(WeightedSpace {
            x,
            steady: [p1, p2],
            weights,
            quadrature,
            lower_bound,
            upper_bound,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.x
    }

    pub fn weights(&self, component: usize) -> &[f64] {
        &self.weights[component]
    }

    pub fn quadrature(&self) -> &[f64] {
        &self.quadrature
    }

    /// `c`: smallest steady-state value.
    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    /// `C`: largest steady-state value.
    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn steady(&self) -> StateVector {
        StateVector::from_real(self.x.clone(), &self.steady[0], &self.steady[1])
            .expect("steady state shares the grid")
    }

    fn check(&self, p: &StateVector) -> Result<()> {
        if p.len() != self.x.len() {
            return Err(Error::Shape {
                expected: self.x.len(),
                found: p.len(),
            });
        }
        let drift = p
            .x
            .iter()
            .zip(&self.x)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if drift > 1e-14 {
            return Err(Error::Shape {
                expected: self.x.len(),
                found: p.len(),
            });
        }
        Ok(())
    }

    /// `sum_i int p_i conj(q_i) / p_i,inf dx`.
    pub fn inner(&self, p: &StateVector, q: &StateVector) -> Result<Complex64> {
        self.check(p)?;
        self.check(q)?;
        let mut s = Complex64::new(0.0, 0.0);
        for k in 0..self.x.len() {
            let a = p.p1[k] * q.p1[k].conj() * self.weights[0][k]
                + p.p2[k] * q.p2[k].conj() * self.weights[1][k];
            s += a * self.quadrature[k];
        }
        Ok(s)
    }

    pub fn norm(&self, p: &StateVector) -> Result<f64> {
        Ok(self.inner(p, p)?.re.max(0.0).sqrt())
    }

    /// Plain (unweighted) squared L2 norm with the same quadrature.
    pub fn l2_norm_squared(&self, p: &StateVector) -> Result<f64> {
        self.check(p)?;
        Ok((0..self.x.len())
            .map(|k| self.quadrature[k] * (p.p1[k].norm_sqr() + p.p2[k].norm_sqr()))
            .sum())
    }

    /// `int (p1 + p2) dx`.
    pub fn total_mass(&self, p: &StateVector) -> Result<Complex64> {
        self.check(p)?;
        Ok((0..self.x.len())
            .map(|k| (p.p1[k] + p.p2[k]) * self.quadrature[k])
            .sum())
    }

    /// `Pi p = (int (p1 + p2) dx) p_inf`.
    pub fn project_equilibrium(&self, p: &StateVector) -> Result<StateVector> {
        let m = self.total_mass(p)?;
        Ok(self.steady().scale(m))
    }

    /// `p - Pi p`.
    pub fn deflate_to_x0(&self, p: &StateVector) -> Result<StateVector> {
        Ok(p.sub(&self.project_equilibrium(p)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldSpec;
    use crate::generator::{assemble, Grid};
    use crate::steady_state::solve_steady;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space() -> WeightedSpace {
        let ss = solve_steady(
            &FieldSpec::constant(1.0),
            &FieldSpec::trigonometric(-1.0, 0.4, 0.0),
            &FieldSpec::constant(1.0),
            64,
        )
        .unwrap();
        WeightedSpace::from_steady(&ss).unwrap()
    }

    fn random_state(sp: &WeightedSpace, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = sp.grid().len();
        let p1 = (0..n).map(|_| c()).collect();
        let p2 = (0..n).map(|_| c()).collect();
        StateVector::new(sp.grid().to_vec(), p1, p2).unwrap()
    }

    #[test]
    fn steady_has_unit_norm() {
        let sp = space();
        let q = sp.steady();
        assert!((sp.inner(&q, &q).unwrap().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inner_with_steady_is_total_mass() {
        let sp = space();
        let p = random_state(&sp, 1);
        let a = sp.inner(&p, &sp.steady()).unwrap();
        let b = sp.total_mass(&p).unwrap();
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn projector_fixes_steady_and_kills_antisymmetric_profiles() {
        let sp = space();
        let q = sp.steady();
        let pq = sp.project_equilibrium(&q).unwrap();
        assert!(pq.sub(&q).stacked().iter().all(|z| z.norm() < 1e-12));
        let s: Vec<f64> = sp.grid().iter().map(|x| (7.0 * x).sin() + x * x).collect();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let p = StateVector::from_real(sp.grid().to_vec(), &s, &neg).unwrap();
        let pp = sp.project_equilibrium(&p).unwrap();
        assert!(pp.stacked().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn deflation_removes_mass() {
        let sp = space();
        let q = sp.steady();
        let zero = vec![0.0; q.len()];
        let p1: Vec<f64> = q.p1.iter().map(|z| z.re).collect();
        let p = StateVector::from_real(q.x.clone(), &p1, &zero).unwrap();
        let d = sp.deflate_to_x0(&p).unwrap();
        assert!(sp.total_mass(&d).unwrap().norm() < 1e-12);
        assert!(sp
            .deflate_to_x0(&q)
            .unwrap()
            .stacked()
            .iter()
            .all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn generator_space_matches_matrix_weights() {
        let gen = assemble(
            &FieldSpec::constant(1.0),
            &FieldSpec::trigonometric(-1.0, 0.4, 0.0),
            &FieldSpec::constant(1.0),
            Grid::new(32).unwrap(),
        )
        .unwrap();
        let sp = WeightedSpace::from_generator(&gen).unwrap();
        let p = random_state(&sp, 5);
        let stacked = p.stacked();
        let a = sp.inner(&p, &p).unwrap();
        let b = gen.inner(&stacked, &stacked).unwrap();
        assert!((a - b).norm() < 1e-13 * a.norm());
        assert!((sp.inner(&sp.steady(), &sp.steady()).unwrap().re - 1.0).abs() < 1e-13);
    }

    #[test]
    fn grid_mismatch_is_a_shape_error() {
        let sp = space();
        let p = StateVector::from_real(vec![0.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(matches!(sp.inner(&p, &p), Err(Error::Shape { .. })));
        assert!(StateVector::from_real(vec![0.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn conjugate_symmetry(a in 0u64..10_000, b in 0u64..10_000) {
            let sp = space();
            let p = random_state(&sp, a);
            let q = random_state(&sp, b.wrapping_add(1 << 20));
            let pq = sp.inner(&p, &q).unwrap();
            let qp = sp.inner(&q, &p).unwrap();
            prop_assert!((pq - qp.conj()).norm() < 1e-14);
        }

        #[test]
        fn projector_is_self_adjoint_and_idempotent(a in 0u64..10_000) {
            let sp = space();
            let p = random_state(&sp, a);
            let q = random_state(&sp, a + 77_777);
            let l = sp.inner(&sp.project_equilibrium(&p).unwrap(), &q).unwrap();
            let r = sp.inner(&p, &sp.project_equilibrium(&q).unwrap()).unwrap();
            prop_assert!((l - r).norm() < 1e-13);
            let once = sp.deflate_to_x0(&p).unwrap();
            let twice = sp.project_equilibrium(&once).unwrap();
            prop_assert!(twice.stacked().iter().all(|z| z.norm() < 1e-13));
        }

        #[test]
        fn norm_equivalence(a in 0u64..10_000) {
            let sp = space();
            let p = random_state(&sp, a);
            let w = sp.norm(&p).unwrap().powi(2);
            let l2 = sp.l2_norm_squared(&p).unwrap();
            prop_assert!(l2 / sp.upper_bound() <= w * (1.0 + 1e-13));
            prop_assert!(w <= l2 / sp.lower_bound() * (1.0 + 1e-13));
            prop_assert!(w > 0.0);
        }
    }
}
