//! Penalized covariance families on symmetric matrices.
//!
//! The driving nonlinearity of everything in this crate is a pair of
//! functions on symmetric d×d matrices,
//!
//! ```text
//! sublinear envelope   g(A)  = max_i  tr(S_i A) / 2
//! dominated generator  g~(A) = max_i (tr(S_i A) / 2 - c_i)
//! ```
//!
//! over a finite family of covariance atoms (S_i, c_i) with penalties
//! c_i >= 0, at least one of them zero, and every S_i bounded below by an
//! ellipticity floor `sigma_min * I`. By construction g~ is monotone in the
//! semidefinite order, vanishes at zero, and satisfies the domination
//! inequality `g~(A) - g~(B) <= g(A - B)`; with all penalties zero it is the
//! sublinear envelope itself, and with a single zero-penalty atom it reduces
//! to the linear (classical) case.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = -1e-10;
const FACTOR_TOL: f64 = 1e-12;

/// One covariance matrix with its penalty and a cached square-root factor.
#[derive(Debug, Clone)]
pub struct CovarianceAtom {
    sigma: DMatrix<f64>,
    penalty: f64,
    factor: DMatrix<f64>,
}

impl CovarianceAtom {
    /// The covariance matrix S.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// The penalty c >= 0.
    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    /// A matrix L with L Lᵀ = S, from a symmetric eigendecomposition with
    /// eigenvalues clamped below at zero before rooting.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

/// A finite penalized covariance family.
#[derive(Debug, Clone)]
pub struct Generator {
    atoms: Vec<CovarianceAtom>,
    dim: usize,
    sigma_min: f64,
}

impl Generator {
    /// Builds and validates a generator from (covariance, penalty) pairs.
    pub fn new(dim: usize, sigma_min: f64, atoms: Vec<(DMatrix<f64>, f64)>) -> Result<Generator> {
        if atoms.is_empty() {
            return Err(Error::EmptyGenerator);
        }
        if !(sigma_min > 0.0) {
            return Err(Error::NonPositiveFloor(sigma_min));
        }
        let mut built = Vec::with_capacity(atoms.len());
        let mut min_penalty = f64::INFINITY;
        for (index, (sigma, penalty)) in atoms.into_iter().enumerate() {
            if sigma.nrows() != dim || sigma.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: sigma.nrows().max(sigma.ncols()),
                    context: "covariance atom",
                });
            }
            check_symmetric(&sigma)?;
            if !(penalty >= 0.0) {
                return Err(Error::NegativePenalty { index, penalty });
            }
            min_penalty = min_penalty.min(penalty);

            let eigen = nalgebra::SymmetricEigen::new(sigma.clone());
            let eigmin = eigen.eigenvalues.min();
            if eigmin < sigma_min + PSD_TOL {
                return Err(Error::BelowEllipticityFloor {
                    index,
                    eigmin,
                    floor: sigma_min,
                });
            }
            let roots =
                DVector::from_iterator(dim, eigen.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
            let factor = &eigen.eigenvectors * DMatrix::from_diagonal(&roots);
            let err = (&factor * factor.transpose() - &sigma).abs().max();
            if err > FACTOR_TOL {
                return Err(Error::FactorMismatch { error: err });
            }
            built.push(CovarianceAtom {
                sigma,
                penalty,
                factor,
            });
        }
        if min_penalty > 0.0 {
            return Err(Error::MissingZeroPenalty { min_penalty });
        }
        Ok(Generator {
            atoms: built,
            dim,
            sigma_min,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn atoms(&self) -> &[CovarianceAtom] {
        &self.atoms
    }

    fn check_input(&self, a: &DMatrix<f64>) -> Result<()> {
        if a.nrows() != self.dim || a.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: a.nrows().max(a.ncols()),
                context: "generator argument",
            });
        }
        check_symmetric(a)
    }

    /// The sublinear envelope `g(A) = max_i tr(S_i A)/2`; penalties ignored.
    pub fn eval_g(&self, a: &DMatrix<f64>) -> Result<f64> {
        self.check_input(a)?;
        Ok(self
            .atoms
            .iter()
            .map(|atom| 0.5 * trace_product(&atom.sigma, a))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// The dominated generator `g~(A) = max_i (tr(S_i A)/2 - c_i)`.
    pub fn eval_g_tilde(&self, a: &DMatrix<f64>) -> Result<f64> {
        self.check_input(a)?;
        Ok(self
            .atoms
            .iter()
            .map(|atom| 0.5 * trace_product(&atom.sigma, a) - atom.penalty)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// `g(A1 - A2) - (g~(A1) - g~(A2))`, nonnegative by construction.
    pub fn domination_margin(&self, a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> Result<f64> {
        self.check_input(a1)?;
        self.check_input(a2)?;
        let diff = a1 - a2;
        Ok(self.eval_g(&diff)? - (self.eval_g_tilde(a1)? - self.eval_g_tilde(a2)?))
    }

    /// For `A >= B` in the semidefinite order, returns
    /// `g(A) - g(B) - sigma_min * tr(A - B) / 2`, nonnegative by the floor.
    pub fn ellipticity_check(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
        self.check_input(a)?;
        self.check_input(b)?;
        let diff = a - b;
        let eigmin = nalgebra::SymmetricEigen::new(diff.clone())
            .eigenvalues
            .min();
        if eigmin < PSD_TOL {
            return Err(Error::NotPsdOrdered { eigmin });
        }
        Ok(self.eval_g(a)? - self.eval_g(b)? - 0.5 * self.sigma_min * diff.trace())
    }

    /// Per-atom value `tr(S_i A)/2 - c_i`, the bracket the maxima range over.
    pub fn atom_value(&self, index: usize, a: &DMatrix<f64>) -> f64 {
        let atom = &self.atoms[index];
        0.5 * trace_product(&atom.sigma, a) - atom.penalty
    }
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let asymmetry = (a - a.transpose()).abs().max();
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            asymmetry,
            tolerance: SYMMETRY_TOL,
        });
    }
    Ok(())
}

fn trace_product(s: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let n = s.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += s[(i, j)] * a[(j, i)];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 1, &[v])
    }

    /// d=1 atoms {0.25, 1.0}, penalty free.
    fn gen_plain() -> Generator {
        Generator::new(1, 0.25, vec![(m1(0.25), 0.0), (m1(1.0), 0.0)]).unwrap()
    }

    /// d=1 atoms {(0.25, 0.3), (1.0, 0)}.
    fn gen_penalized() -> Generator {
        Generator::new(1, 0.25, vec![(m1(0.25), 0.3), (m1(1.0), 0.0)]).unwrap()
    }

    fn random_symmetric(rng: &mut impl Rng, d: usize, scale: f64) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-scale..scale));
        (&m + m.transpose()) * 0.5
    }

    fn random_psd(rng: &mut impl Rng, d: usize, scale: f64) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-scale..scale));
        &m * m.transpose()
    }

    #[test]
    fn eval_g_examples() {
        let g = gen_plain();
        assert_eq!(g.eval_g(&m1(0.0)).unwrap(), 0.0);
        assert_eq!(g.eval_g(&m1(2.0)).unwrap(), 1.0);
        assert_eq!(g.eval_g(&m1(-2.0)).unwrap(), -0.25);
    }

    #[test]
    fn eval_g_tilde_examples() {
        let g = gen_penalized();
        assert_eq!(g.eval_g_tilde(&m1(0.0)).unwrap(), 0.0);
        assert_eq!(g.eval_g_tilde(&m1(2.0)).unwrap(), 1.0);
        assert_eq!(g.eval_g_tilde(&m1(-2.0)).unwrap(), -0.55);
    }

    #[test]
    fn domination_margin_examples() {
        let g = gen_penalized();
        // identical arguments: margin = g(0) - 0 = 0
        let a = m1(1.7);
        assert!(g.domination_margin(&a, &a).unwrap().abs() <= 1e-12);
        // hand-enumerated case
        let margin = g.domination_margin(&m1(2.0), &m1(-2.0)).unwrap();
        assert!((margin - 0.45).abs() <= 1e-12, "margin {margin}");
    }

    #[test]
    fn ellipticity_examples() {
        let g = gen_plain();
        let zero = g.ellipticity_check(&m1(3.0), &m1(3.0)).unwrap();
        assert!(zero.abs() <= 1e-12);
        let v = g.ellipticity_check(&m1(1.0), &m1(0.0)).unwrap();
        assert!((v - 0.375).abs() <= 1e-12, "got {v}");
        assert!(g.ellipticity_check(&m1(0.0), &m1(1.0)).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = gen_plain();
        let wrong_dim = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            g.eval_g(&wrong_dim),
            Err(Error::DimensionMismatch { .. })
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        let g2 = Generator::new(2, 0.1, vec![(DMatrix::identity(2, 2), 0.0)]).unwrap();
        assert!(matches!(g2.eval_g(&asym), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn rejects_bad_atoms() {
        assert!(matches!(
            Generator::new(1, 0.25, vec![]),
            Err(Error::EmptyGenerator)
        ));
        assert!(matches!(
            Generator::new(1, 0.25, vec![(m1(0.1), 0.0)]),
            Err(Error::BelowEllipticityFloor { .. })
        ));
        assert!(matches!(
            Generator::new(1, 0.25, vec![(m1(1.0), -0.5)]),
            Err(Error::NegativePenalty { .. })
        ));
        assert!(matches!(
            Generator::new(1, 0.25, vec![(m1(1.0), 0.3), (m1(0.5), 0.2)]),
            Err(Error::MissingZeroPenalty { .. })
        ));
        assert!(matches!(
            Generator::new(1, -1.0, vec![(m1(1.0), 0.0)]),
            Err(Error::NonPositiveFloor(_))
        ));
    }

    #[test]
    fn factor_reproduces_sigma() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let base = random_psd(&mut rng, 3, 1.0) + DMatrix::identity(3, 3) * 0.5;
            let g = Generator::new(3, 0.25, vec![(base.clone(), 0.0)]).unwrap();
            let atom = &g.atoms()[0];
            let err = (atom.factor() * atom.factor().transpose() - &base)
                .abs()
                .max();
            assert!(err <= 1e-12, "factor error {err}");
        }
    }

    #[test]
    fn domination_holds_on_random_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for d in [1usize, 2, 3] {
            let atoms = vec![
                (random_psd(&mut rng, d, 0.6) + DMatrix::identity(d, d), 0.0),
                (
                    random_psd(&mut rng, d, 0.8) + DMatrix::identity(d, d) * 0.5,
                    0.4,
                ),
                (
                    random_psd(&mut rng, d, 0.4) + DMatrix::identity(d, d) * 2.0,
                    1.1,
                ),
            ];
            let g = Generator::new(d, 0.25, atoms).unwrap();
            for _ in 0..200 {
                let a1 = random_symmetric(&mut rng, d, 3.0);
                let a2 = random_symmetric(&mut rng, d, 3.0);
                let margin = g.domination_margin(&a1, &a2).unwrap();
                assert!(margin >= -1e-12, "domination violated: {margin}");
            }
        }
    }

    #[test]
    fn g_tilde_monotone_on_ordered_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let g = gen_penalized();
        for _ in 0..200 {
            let a2 = random_symmetric(&mut rng, 1, 3.0);
            let a1 = &a2 + random_psd(&mut rng, 1, 1.5);
            let v1 = g.eval_g_tilde(&a1).unwrap();
            let v2 = g.eval_g_tilde(&a2).unwrap();
            assert!(v1 >= v2 - 1e-12, "monotonicity violated: {v1} < {v2}");
        }
        // and in d = 2 with a correlated atom
        let mut atoms = vec![(DMatrix::identity(2, 2), 0.0)];
        atoms.push((DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]), 0.2));
        let g2 = Generator::new(2, 0.3, atoms).unwrap();
        for _ in 0..200 {
            let a2 = random_symmetric(&mut rng, 2, 3.0);
            let a1 = &a2 + random_psd(&mut rng, 2, 1.5);
            assert!(g2.eval_g_tilde(&a1).unwrap() >= g2.eval_g_tilde(&a2).unwrap() - 1e-12);
        }
    }

    #[test]
    fn sublinearity_of_envelope() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let g = gen_plain();
        for _ in 0..200 {
            let a = random_symmetric(&mut rng, 1, 3.0);
            let b = random_symmetric(&mut rng, 1, 3.0);
            for lambda in [0.0, 0.5, 2.0] {
                let left = g.eval_g(&(&a * lambda)).unwrap();
                let right = lambda * g.eval_g(&a).unwrap();
                assert!((left - right).abs() <= 1e-12);
            }
            let sum = g.eval_g(&(&a + &b)).unwrap();
            assert!(sum <= g.eval_g(&a).unwrap() + g.eval_g(&b).unwrap() + 1e-12);
        }
    }

    #[test]
    fn penalty_free_tilde_equals_envelope() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let g = gen_plain();
        for _ in 0..100 {
            let a = random_symmetric(&mut rng, 1, 4.0);
            assert_eq!(g.eval_g(&a).unwrap(), g.eval_g_tilde(&a).unwrap());
        }
    }

    #[test]
    fn ellipticity_on_random_ordered_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let g = gen_penalized();
        for _ in 0..200 {
            let b = random_symmetric(&mut rng, 1, 3.0);
            let a = &b + random_psd(&mut rng, 1, 2.0);
            let v = g.ellipticity_check(&a, &b).unwrap();
            assert!(v >= -1e-12, "ellipticity violated: {v}");
        }
    }
}
