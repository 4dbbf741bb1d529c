//! Symmetric-matrix spectral utilities: graph Laplacian, oriented incidence
//! matrix, eigendecomposition, algebraic connectivity, generalized inverse,
//! pseudo-determinant, and the degenerate Gaussian `N†(0, cL)` that governs
//! the zero-sum masks.

mod gaussian;
mod jacobi;

pub use gaussian::{gaussian_kl, sample_mask_vector, DegenerateGaussian};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::Topology;

/// Eigenvalues below `RANK_CUTOFF * max|eigenvalue|` are treated as zero when
/// forming generalized inverses, pseudo-determinants and support tests.
pub const RANK_CUTOFF: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;

/// Dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Accepts `m` if it is square and symmetric to within `1e-12` relative;
    /// the stored matrix is exactly symmetrized.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::domain(format!("matrix is {}x{}, expected square", m.nrows(), m.ncols())));
        }
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * m.amax().max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::domain("rows must form a square matrix"));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Row-major nested vectors, the JSON debug-dump layout.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        to_rows(&self.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Eigenvalues in ascending order with orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues) * self.eigenvectors.transpose()
    }

    /// Largest eigenvalue magnitude.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.amax()
    }

    fn is_zero(&self, mu: f64) -> bool {
        mu.abs() <= RANK_CUTOFF * self.spectral_radius()
    }

    /// Number of eigenvalues above the rank cutoff.
    pub fn rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&mu| !self.is_zero(mu)).count()
    }

    /// `M Diag(f(mu)) Mᵀ` where `f` is applied to nonzero eigenvalues and
    /// zero eigenvalues map to zero.
    fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.eigenvalues.map(|mu| if self.is_zero(mu) { 0.0 } else { f(mu) });
        &self.eigenvectors * DMatrix::from_diagonal(&d) * self.eigenvectors.transpose()
    }

    /// Moore–Penrose inverse inverting only the nonzero spectrum.
    pub fn pseudo_inverse(&self) -> SymmetricMatrix {
        let m = self.spectral_map(|mu| 1.0 / mu);
        SymmetricMatrix((&m + m.transpose()) * 0.5)
    }

    /// Orthogonal projector onto the column space.
    pub fn range_projector(&self) -> DMatrix<f64> {
        self.spectral_map(|_| 1.0)
    }

    /// Product of the nonzero eigenvalues.
    pub fn pseudo_determinant(&self) -> f64 {
        self.eigenvalues.iter().filter(|&&mu| !self.is_zero(mu)).product()
    }

    /// Natural log of [`Self::pseudo_determinant`].
    pub fn log_pseudo_determinant(&self) -> f64 {
        self.eigenvalues.iter().filter(|&&mu| !self.is_zero(mu)).map(|mu| mu.ln()).sum()
    }
}

/// Graph Laplacian `L = D - Adjacency`.
pub fn laplacian(topology: &Topology) -> SymmetricMatrix {
    let n = topology.n();
    let mut l = DMatrix::zeros(n, n);
    for &(i, j) in topology.edges() {
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
        l[(i, j)] -= 1.0;
        l[(j, i)] -= 1.0;
    }
    SymmetricMatrix(l)
}

/// Oriented incidence matrix (`n x |E|`): the column for edge `{i, j}` with
/// `i < j` has `+1` at row `i` and `-1` at row `j`. Columns follow the
/// topology's oriented edge list.
pub fn incidence(topology: &Topology) -> DMatrix<f64> {
    let mut theta = DMatrix::zeros(topology.n(), topology.edge_count());
    for (col, &(i, j)) in topology.edges().iter().enumerate() {
        theta[(i, col)] = 1.0;
        theta[(j, col)] = -1.0;
    }
    theta
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn eigendecompose(m: &SymmetricMatrix) -> EigenDecomposition {
    let (values, vectors) = jacobi::jacobi(&m.0);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let n = values.len();
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| values[k]));
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    EigenDecomposition { eigenvalues, eigenvectors }
}

/// Second-smallest eigenvalue of a Laplacian.
pub fn algebraic_connectivity(l: &SymmetricMatrix) -> Result<f64> {
    if l.dim() < 2 {
        return Err(Error::domain("algebraic connectivity needs at least two vertices"));
    }
    Ok(eigendecompose(l).eigenvalues[1])
}

fn connected_laplacian_eigen(l: &SymmetricMatrix) -> Result<EigenDecomposition> {
    let eig = eigendecompose(l);
    let zeros = l.dim() - eig.rank();
    if zeros != 1 {
        return Err(Error::RankDeficient { zeros });
    }
    Ok(eig)
}

/// `L† = M Diag(0, 1/mu_2, ..., 1/mu_n) Mᵀ` for the Laplacian of a connected
/// graph.
pub fn generalized_inverse(l: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    if l.dim() == 1 {
        return Ok(SymmetricMatrix(DMatrix::zeros(1, 1)));
    }
    Ok(connected_laplacian_eigen(l)?.pseudo_inverse())
}

/// `det*(2 pi c L) = (2 pi c)^(n-1) * prod_{i>=2} mu_i`.
pub fn pseudo_determinant(l: &SymmetricMatrix, scale: f64) -> Result<f64> {
    if scale.is_nan() || scale <= 0.0 {
        return Err(Error::domain(format!("scale must be positive, got {scale}")));
    }
    let n = l.dim();
    let prod = if n == 1 { 1.0 } else { connected_laplacian_eigen(l)?.pseudo_determinant() };
    Ok((2.0 * std::f64::consts::PI * scale).powi(n as i32 - 1) * prod)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    /// Roots of the characteristic polynomial found by bisection on
    /// det(M - x I), evaluated with LU. Independent of the Jacobi path.
    fn char_poly_roots(m: &DMatrix<f64>, lo: f64, hi: f64) -> Vec<f64> {
        let n = m.nrows();
        let det = |x: f64| (m - DMatrix::<f64>::identity(n, n) * x).determinant();
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let mut roots = Vec::new();
        let mut prev = det(lo);
        for k in 1..=steps {
            let x = lo + h * k as f64;
            let cur = det(x);
            if prev.signum() != cur.signum() {
                let (mut a, mut b) = (x - h, x);
                for _ in 0..100 {
                    let mid = 0.5 * (a + b);
                    if det(a).signum() == det(mid).signum() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            prev = cur;
        }
        roots
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(
            laplacian(&Topology::complete(3)).into_matrix(),
            mat(&[&[2., -1., -1.], &[-1., 2., -1.], &[-1., -1., 2.]])
        );
        assert_eq!(laplacian(&Topology::path(2)).into_matrix(), mat(&[&[1., -1.], &[-1., 1.]]));
        assert_eq!(
            laplacian(&Topology::path(3)).into_matrix(),
            mat(&[&[1., -1., 0.], &[-1., 2., -1.], &[0., -1., 1.]])
        );
    }

    #[test]
    fn incidence_examples() {
        let k3 = Topology::complete(3);
        let theta = incidence(&k3);
        assert_eq!(theta, mat(&[&[1., 1., 0.], &[-1., 0., 1.], &[0., -1., -1.]]));
        assert_eq!(incidence(&Topology::path(2)), mat(&[&[1.], &[-1.]]));

        // direct product, entry by entry
        let mut prod = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                for e in 0..3 {
                    prod[(i, j)] += theta[(i, e)] * theta[(j, e)];
                }
            }
        }
        assert_eq!(prod, laplacian(&k3).into_matrix());
        assert_eq!(theta.row_sum().amax(), 0.0);
    }

    #[test]
    fn eigendecompose_examples() {
        let edge = laplacian(&Topology::path(2));
        let e = eigendecompose(&edge);
        assert_eq!(e.eigenvalues.as_slice(), &[0.0, 2.0]);

        let k3 = laplacian(&Topology::complete(3));
        let e = eigendecompose(&k3);
        // det(L - xI) = -x (x - 3)^2; the double root is a tangency so only
        // the sign change at 0 shows up under bisection.
        let roots = char_poly_roots(k3.matrix(), -0.5123, 0.4871);
        assert_eq!(roots.len(), 1);
        assert_relative_eq!(e.eigenvalues[0], roots[0], epsilon = 1e-9);
        assert_relative_eq!(e.eigenvalues[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(e.eigenvalues[2], 3.0, epsilon = 1e-12);

        let e = eigendecompose(&SymmetricMatrix::identity(3));
        assert_eq!(e.eigenvalues.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn eigendecompose_matches_characteristic_polynomial_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = Topology::random_connected(6, 0.5, &mut rng);
            let l = laplacian(&g);
            let e = eigendecompose(&l);
            let roots = char_poly_roots(l.matrix(), -0.5123, 12.4871);
            // every simple root must appear among the eigenvalues
            for r in roots {
                assert!(e.eigenvalues.iter().any(|mu| (mu - r).abs() < 1e-5), "root {r} missing");
            }
            let nalg = nalgebra::SymmetricEigen::new(l.matrix().clone());
            let mut other: Vec<f64> = nalg.eigenvalues.iter().copied().collect();
            other.sort_by(f64::total_cmp);
            for (a, b) in e.eigenvalues.iter().zip(other) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn eigendecomposition_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..12 {
            let raw = DMatrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -5.0..5.0));
            let sym = SymmetricMatrix::new(&raw + raw.transpose()).unwrap();
            let e = eigendecompose(&sym);
            let norm = sym.matrix().norm().max(1e-300);
            assert!((e.reconstruct() - sym.matrix()).norm() <= 1e-9 * norm);
            let gram = e.eigenvectors.transpose() * &e.eigenvectors;
            assert!((gram - DMatrix::identity(n, n)).amax() <= 1e-9);
            assert!(e.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn rejects_non_symmetric() {
        assert!(matches!(SymmetricMatrix::new(mat(&[&[1., 2.], &[0., 1.]])), Err(Error::NotSymmetric(_))));
        assert!(SymmetricMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn algebraic_connectivity_examples() {
        assert_eq!(algebraic_connectivity(&laplacian(&Topology::path(2))).unwrap(), 2.0);
        assert_relative_eq!(algebraic_connectivity(&laplacian(&Topology::complete(3))).unwrap(), 3.0, epsilon = 1e-12);
        // det(L - xI) = -x (x - 1)(x - 3) for the 3-path
        let p3 = laplacian(&Topology::path(3));
        let roots = char_poly_roots(p3.matrix(), -0.5123, 3.4871);
        assert_eq!(roots.len(), 3);
        assert_relative_eq!(algebraic_connectivity(&p3).unwrap(), roots[1], epsilon = 1e-9);
        assert_relative_eq!(algebraic_connectivity(&p3).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn generalized_inverse_examples() {
        let edge = laplacian(&Topology::path(2));
        let inv = generalized_inverse(&edge).unwrap();
        let expected = mat(&[&[0.25, -0.25], &[-0.25, 0.25]]);
        assert!((inv.matrix() - expected).amax() < 1e-15);

        let k3 = laplacian(&Topology::complete(3));
        let inv = generalized_inverse(&k3).unwrap();
        let l = k3.matrix();
        assert!((l * inv.matrix() * l - l).amax() < 1e-12);
        let e = eigendecompose(&inv);
        assert_relative_eq!(e.eigenvalues[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(e.eigenvalues[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(e.eigenvalues[2], 1.0 / 3.0, epsilon = 1e-12);

        let disconnected = laplacian(&Topology::new(3, [(0, 1)]).unwrap());
        assert!(matches!(generalized_inverse(&disconnected), Err(Error::RankDeficient { zeros: 2 })));
    }

    #[test]
    fn generalized_inverse_penrose_identities_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..10 {
            let g = Topology::random_connected(n, 0.4, &mut rng);
            let l = laplacian(&g);
            let li = generalized_inverse(&l).unwrap();
            let (l, li) = (l.matrix(), li.matrix());
            assert!((l * li * l - l).norm() <= 1e-8 * l.norm());
            assert!((li * l * li - li).norm() <= 1e-8 * li.norm());
            assert!((li * DVector::from_element(n, 1.0)).amax() < 1e-8);
        }
    }

    #[test]
    fn pseudo_determinant_examples() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let edge = laplacian(&Topology::path(2));
        assert_relative_eq!(pseudo_determinant(&edge, 1.0).unwrap(), two_pi * 2.0, max_relative = 1e-14);
        let k3 = laplacian(&Topology::complete(3));
        assert_relative_eq!(pseudo_determinant(&k3, 1.0).unwrap(), two_pi.powi(2) * 9.0, max_relative = 1e-12);
        let c = 3.7;
        let g = laplacian(&Topology::cycle(5));
        assert_relative_eq!(
            pseudo_determinant(&g, c).unwrap(),
            c.powi(4) * pseudo_determinant(&g, 1.0).unwrap(),
            max_relative = 1e-12
        );
        assert!(pseudo_determinant(&edge, 0.0).is_err());
        assert!(pseudo_determinant(&edge, -1.0).is_err());
    }
}
