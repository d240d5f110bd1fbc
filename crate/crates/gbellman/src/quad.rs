//! Increment quadrature rules.
//!
//! A [`Quadrature`] discretizes a standard d-dimensional normal increment:
//! weights sum to one, the mean is zero, the covariance is the identity and
//! all third raw moments vanish (the moment conditions behind the one-step
//! lattice operator's consistency). Two constructors are provided:
//!
//! * [`Quadrature::gauss_hermite`] — tensor-product Gauss–Hermite rules
//!   (probabilists' weight), exact on polynomials of degree 2k-1 per axis;
//! * [`Quadrature::scaled_ternary`] — a symmetric three-point rule
//!   `{-a, 0, +a}` per axis with weights `{1/(2a²), 1-1/a², 1/(2a²)}`,
//!   valid for any spread `a >= 1`. Choosing the spread so that the lattice
//!   displacements `√Δ·L·ξ` are whole numbers of grid cells makes the
//!   one-step operator land exactly on grid nodes, which removes all
//!   interpolation bias from a value sweep.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

const MOMENT_TOL: f64 = 1e-12;

/// Nodes and weights for a d-dimensional increment law.
#[derive(Debug, Clone)]
pub struct Quadrature {
    dim: usize,
    nodes: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl Quadrature {
    /// Tensor-product Gauss–Hermite rule with `points_per_axis` nodes per axis.
    pub fn gauss_hermite(dim: usize, points_per_axis: usize) -> Result<Quadrature> {
        if points_per_axis < 2 {
            return Err(Error::QuadratureTooSmall(points_per_axis));
        }
        let (nodes_1d, weights_1d) = hermite_rule(points_per_axis);
        Self::tensor(dim, &nodes_1d, &weights_1d)
    }

    /// Symmetric three-point rule `{-spread, 0, +spread}` per axis.
    ///
    /// At `spread == 1` the centre weight vanishes and the rule degenerates
    /// to the two-point rule `{-1, +1}`.
    pub fn scaled_ternary(dim: usize, spread: f64) -> Result<Quadrature> {
        if !(spread >= 1.0) || !spread.is_finite() {
            return Err(Error::BadQuadratureSpread(spread));
        }
        let side = 0.5 / (spread * spread);
        let centre = 1.0 - 1.0 / (spread * spread);
        let (nodes_1d, weights_1d) = if centre > 0.0 {
            (vec![-spread, 0.0, spread], vec![side, centre, side])
        } else {
            (vec![-spread, spread], vec![side, side])
        };
        Self::tensor(dim, &nodes_1d, &weights_1d)
    }

    fn tensor(dim: usize, nodes_1d: &[f64], weights_1d: &[f64]) -> Result<Quadrature> {
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
                context: "quadrature dimension",
            });
        }
        let k = nodes_1d.len();
        let total = k.pow(dim as u32);
        let mut nodes = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rest = flat;
            let mut node = DVector::zeros(dim);
            let mut w = 1.0;
            // last axis varies fastest
            for axis in (0..dim).rev() {
                let idx = rest % k;
                rest /= k;
                node[axis] = nodes_1d[idx];
                w *= weights_1d[idx];
            }
            nodes.push(node);
            weights.push(w);
        }
        let quad = Quadrature {
            dim,
            nodes,
            weights,
        };
        quad.validate_moments()?;
        Ok(quad)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DVector<f64>, f64)> {
        self.nodes.iter().zip(self.weights.iter().copied())
    }

    /// Checks the moment conditions (orders 0 through 3) at 1e-12.
    pub fn validate_moments(&self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > MOMENT_TOL {
            return Err(Error::QuadratureMoments {
                which: "total weight",
                error: (total - 1.0).abs(),
            });
        }
        if self.weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::QuadratureMoments {
                which: "weight positivity",
                error: 0.0,
            });
        }
        let mut mean = DVector::zeros(self.dim);
        for (node, w) in self.iter() {
            mean += node * w;
        }
        if mean.abs().max() > MOMENT_TOL {
            return Err(Error::QuadratureMoments {
                which: "mean",
                error: mean.abs().max(),
            });
        }
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for (node, w) in self.iter() {
            cov += node * node.transpose() * w;
        }
        let cov_err = (&cov - DMatrix::identity(self.dim, self.dim)).abs().max();
        if cov_err > MOMENT_TOL {
            return Err(Error::QuadratureMoments {
                which: "covariance",
                error: cov_err,
            });
        }
        // third raw moments E[xi_a xi_b xi_c] over all index triples
        for a in 0..self.dim {
            for b in a..self.dim {
                for c in b..self.dim {
                    let m3: f64 = self
                        .iter()
                        .map(|(node, w)| w * node[a] * node[b] * node[c])
                        .sum();
                    if m3.abs() > MOMENT_TOL {
                        return Err(Error::QuadratureMoments {
                            which: "third moment",
                            error: m3.abs(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// One-dimensional Gauss–Hermite rule for the standard normal weight,
/// by Golub–Welsch on the probabilists' Hermite recurrence.
fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eigen = nalgebra::SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eigen.eigenvalues[i];
            let w = eigen.eigenvectors[(0, i)].powi(2);
            (node, w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Enforce exact symmetry, then rescale so the variance is exactly one.
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let mag = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -mag;
        nodes[j] = mag;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let variance: f64 = nodes
        .iter()
        .zip(weights.iter())
        .map(|(x, w)| w * x * x)
        .sum();
    let scale = variance.sqrt().recip();
    for x in &mut nodes {
        *x *= scale;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_two_point() {
        let q = Quadrature::gauss_hermite(1, 2).unwrap();
        assert_eq!(q.len(), 2);
        assert!((q.nodes()[0][0] + 1.0).abs() <= 1e-12);
        assert!((q.nodes()[1][0] - 1.0).abs() <= 1e-12);
        assert!((q.weights()[0] - 0.5).abs() <= 1e-12);
        assert!((q.weights()[1] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn gauss_three_point() {
        let q = Quadrature::gauss_hermite(1, 3).unwrap();
        let sqrt3 = 3.0f64.sqrt();
        assert!((q.nodes()[0][0] + sqrt3).abs() <= 1e-12);
        assert!((q.nodes()[1][0]).abs() <= 1e-12);
        assert!((q.nodes()[2][0] - sqrt3).abs() <= 1e-12);
        assert!((q.weights()[0] - 1.0 / 6.0).abs() <= 1e-12);
        assert!((q.weights()[1] - 2.0 / 3.0).abs() <= 1e-12);
        assert!((q.weights()[2] - 1.0 / 6.0).abs() <= 1e-12);
    }

    #[test]
    fn gauss_tensor_2d() {
        let q = Quadrature::gauss_hermite(2, 2).unwrap();
        assert_eq!(q.len(), 4);
        for (node, w) in q.iter() {
            assert!((node[0].abs() - 1.0).abs() <= 1e-12);
            assert!((node[1].abs() - 1.0).abs() <= 1e-12);
            assert!((w - 0.25).abs() <= 1e-12);
        }
    }

    #[test]
    fn moment_conditions_across_sizes() {
        for d in 1..=3 {
            for pts in 2..=7 {
                let q = Quadrature::gauss_hermite(d, pts).unwrap();
                q.validate_moments().unwrap();
            }
        }
    }

    #[test]
    fn ternary_rule() {
        let q = Quadrature::scaled_ternary(1, std::f64::consts::SQRT_2).unwrap();
        assert_eq!(q.len(), 3);
        assert!((q.weights()[0] - 0.25).abs() <= 1e-15);
        assert!((q.weights()[1] - 0.5).abs() <= 1e-15);
        assert!((q.weights()[2] - 0.25).abs() <= 1e-15);
        q.validate_moments().unwrap();
        // spread 1 degenerates to the two-point rule
        let q1 = Quadrature::scaled_ternary(1, 1.0).unwrap();
        assert_eq!(q1.len(), 2);
        q1.validate_moments().unwrap();
        // tensorized version keeps the moments
        Quadrature::scaled_ternary(2, 2.0)
            .unwrap()
            .validate_moments()
            .unwrap();
    }

    #[test]
    fn larger_rules_keep_the_moment_contract() {
        for pts in [10usize, 15] {
            let q = Quadrature::gauss_hermite(1, pts).unwrap();
            q.validate_moments().unwrap();
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Quadrature::gauss_hermite(1, 1).is_err());
        assert!(Quadrature::scaled_ternary(1, 0.5).is_err());
        assert!(Quadrature::scaled_ternary(0, 2.0).is_err());
    }

    #[test]
    fn gauss_matches_fourth_moment() {
        // 3-point Gauss-Hermite integrates x^4 exactly (value 3)
        let q = Quadrature::gauss_hermite(1, 3).unwrap();
        let m4: f64 = q.iter().map(|(x, w)| w * x[0].powi(4)).sum();
        assert!((m4 - 3.0).abs() <= 1e-10, "m4 = {m4}");
    }
}
