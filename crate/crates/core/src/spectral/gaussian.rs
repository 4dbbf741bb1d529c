use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{eigendecompose, generalized_inverse, pseudo_determinant, SymmetricMatrix};
use crate::error::{Error, Result};
use crate::graph::Topology;

/// Two covariance supports are the same if their range projectors differ by
/// at most this much in Frobenius norm.
const SUPPORT_TOL: f64 = 1e-6;

/// Degenerate Gaussian `N†(0_n, cL)` for the Laplacian `L` of a connected
/// graph. Its support is the hyperplane `rᵀ1 = 0`.
#[derive(Debug, Clone)]
pub struct DegenerateGaussian {
    scale: f64,
    laplacian: SymmetricMatrix,
    pinv: SymmetricMatrix,
    pdet: f64,
}

impl DegenerateGaussian {
    pub fn new(laplacian: SymmetricMatrix, scale: f64) -> Result<Self> {
        let pdet = pseudo_determinant(&laplacian, scale)?;
        let pinv = generalized_inverse(&laplacian)?;
        Ok(Self { scale, laplacian, pinv, pdet })
    }

    pub fn for_topology(topology: &Topology, scale: f64) -> Result<Self> {
        if !topology.is_connected() {
            return Err(Error::Disconnected);
        }
        Self::new(super::laplacian(topology), scale)
    }

    pub fn dim(&self) -> usize {
        self.laplacian.dim()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Covariance `cL`.
    pub fn covariance(&self) -> SymmetricMatrix {
        self.laplacian.scaled(self.scale)
    }

    /// `det*(2 pi c L)`.
    pub fn pseudo_determinant(&self) -> f64 {
        self.pdet
    }

    pub fn in_support(&self, r: &DVector<f64>) -> bool {
        let s = r.sum().abs();
        s == 0.0 || s <= 1e-9 * r.norm()
    }

    /// Density with respect to Lebesgue measure on the support hyperplane.
    pub fn density(&self, r: &DVector<f64>) -> f64 {
        if r.len() != self.dim() || !self.in_support(r) {
            return 0.0;
        }
        let q = r.dot(&(self.pinv.matrix() * r));
        (-q / (2.0 * self.scale)).exp() / self.pdet.sqrt()
    }
}

/// One draw of the mask vector for a single coordinate: an independent
/// `N(0, 2 sigma^2)` variate per edge, mapped through the oriented incidence
/// matrix. The result is orthogonal to the all-ones vector.
pub fn sample_mask_vector<R: Rng + ?Sized>(topology: &Topology, sigma: f64, rng: &mut R) -> DVector<f64> {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    let sd = std::f64::consts::SQRT_2 * sigma;
    let mut u = DVector::zeros(topology.n());
    for &(i, j) in topology.edges() {
        let z: f64 = rng.sample(StandardNormal);
        let c = sd * z;
        u[i] += c;
        u[j] -= c;
    }
    u
}

/// KL divergence `D(N(mean_a, cov_a) || N(mean_b, cov_b))` for possibly
/// singular covariances sharing one support.
///
/// Equal covariances give `0.5 Δᵀ Σ† Δ`. Otherwise the usual Gaussian formula
/// is used with pseudo-inverse and pseudo-determinant in place of inverse and
/// determinant. Mismatched supports (different column spaces, or a mean shift
/// leaving the column space) yield [`Error::InfiniteDivergence`].
pub fn gaussian_kl(
    mean_a: &DVector<f64>,
    cov_a: &SymmetricMatrix,
    mean_b: &DVector<f64>,
    cov_b: &SymmetricMatrix,
) -> Result<f64> {
    let n = mean_a.len();
    for found in [mean_b.len(), cov_a.dim(), cov_b.dim()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    let eig_b = eigendecompose(cov_b);
    let proj_b = eig_b.range_projector();
    let delta = mean_a - mean_b;
    let off_support = (DMatrix::<f64>::identity(n, n) - &proj_b) * &delta;
    let tol = 1e-8 * (1.0 + mean_a.norm() + mean_b.norm());
    if off_support.norm() > tol {
        return Err(Error::InfiniteDivergence(format!(
            "mean shift leaves the covariance support (residual {:e})",
            off_support.norm()
        )));
    }
    let pinv_b = eig_b.pseudo_inverse();
    let mahalanobis = delta.dot(&(pinv_b.matrix() * &delta));
    if cov_a == cov_b {
        return Ok((0.5 * mahalanobis).max(0.0));
    }
    let eig_a = eigendecompose(cov_a);
    let mismatch = (eig_a.range_projector() - &proj_b).norm();
    if eig_a.rank() != eig_b.rank() || mismatch > SUPPORT_TOL {
        return Err(Error::InfiniteDivergence(format!(
            "covariance supports differ (ranks {} vs {}, projector gap {:e})",
            eig_a.rank(),
            eig_b.rank(),
            mismatch
        )));
    }
    let rank = eig_b.rank() as f64;
    let trace = (pinv_b.matrix() * cov_a.matrix()).trace();
    let log_ratio = eig_b.log_pseudo_determinant() - eig_a.log_pseudo_determinant();
    Ok((0.5 * (trace - rank + mahalanobis + log_ratio)).max(0.0))
}
