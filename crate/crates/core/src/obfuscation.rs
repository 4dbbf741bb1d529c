//! Phase I of the protocol: pairwise noise exchange over every edge, zero-sum
//! masks, and effective costs whose sum equals the sum of the original costs.
//!
//! The exchange is one synchronous round: every agent draws and sends its
//! noise before any mask is computed, over reliable links.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::cost::{CoefficientMatrix, Cost, PolynomialCost};
use crate::error::{Error, Result};
use crate::graph::Topology;

/// Noise vectors `r_ij` for both directions of every edge.
///
/// Slot `2l` holds `r_ij` and slot `2l + 1` holds `r_ji` for the `l`-th edge
/// `(i, j)` of the oriented edge list (`i < j`).
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseNoise {
    dim: usize,
    values: Vec<DVector<f64>>,
}

impl PairwiseNoise {
    pub fn zeros(topology: &Topology, dim: usize) -> Self {
        Self { dim, values: vec![DVector::zeros(dim); 2 * topology.edge_count()] }
    }

    /// Builds from an explicit map of directed pairs; every direction of
    /// every edge must be present.
    pub fn from_map(topology: &Topology, map: &HashMap<(usize, usize), DVector<f64>>) -> Result<Self> {
        let mut values = Vec::with_capacity(2 * topology.edge_count());
        let mut dim = None;
        for &(i, j) in topology.edges() {
            for key in [(i, j), (j, i)] {
                let v = map.get(&key).ok_or_else(|| {
                    Error::domain(format!("missing noise for directed edge {}->{}", key.0 + 1, key.1 + 1))
                })?;
                let d = *dim.get_or_insert(v.len());
                if v.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: v.len() });
                }
                values.push(v.clone());
            }
        }
        if map.len() != values.len() {
            return Err(Error::domain("noise map has entries for pairs that are not edges"));
        }
        Ok(Self { dim: dim.unwrap_or(0), values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of directed entries, `2|E|`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `r_ij` for an edge `{i, j}`.
    pub fn get(&self, topology: &Topology, i: usize, j: usize) -> Option<&DVector<f64>> {
        let l = topology.edge_index(i, j)?;
        self.values.get(if i < j { 2 * l } else { 2 * l + 1 })
    }

    /// Mutable access to `r_ij`, for fault injection and hand-built cases.
    pub fn get_mut(&mut self, topology: &Topology, i: usize, j: usize) -> Option<&mut DVector<f64>> {
        let l = topology.edge_index(i, j)?;
        self.values.get_mut(if i < j { 2 * l } else { 2 * l + 1 })
    }

    /// `(r_ij, r_ji)` for the `l`-th oriented edge.
    pub fn edge_pair(&self, l: usize) -> (&DVector<f64>, &DVector<f64>) {
        (&self.values[2 * l], &self.values[2 * l + 1])
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }
}

/// Masks `u_i`, one per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Vec<DVector<f64>>,
}

impl MaskSet {
    pub fn masks(&self) -> &[DVector<f64>] {
        &self.masks
    }

    pub fn mask(&self, i: usize) -> &DVector<f64> {
        &self.masks[i]
    }

    /// `Σ_i u_i`; zero up to rounding for any topology.
    pub fn total(&self) -> DVector<f64> {
        let dim = self.masks.first().map_or(0, DVector::len);
        self.masks.iter().fold(DVector::zeros(dim), |acc, u| acc + u)
    }

    /// Mask coordinate `k` across agents: the vector `U^k`.
    pub fn coordinate(&self, k: usize) -> DVector<f64> {
        DVector::from_iterator(self.masks.len(), self.masks.iter().map(|u| u[k]))
    }

    /// Mutable access for fault injection.
    pub fn mask_mut(&mut self, i: usize) -> &mut DVector<f64> {
        &mut self.masks[i]
    }
}

/// Per-agent effective costs `h̃_i(x) = h_i(x) + u_iᵀx`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveCostSet {
    costs: Vec<Cost>,
}

impl EffectiveCostSet {
    pub fn costs(&self) -> &[Cost] {
        &self.costs
    }

    pub fn into_costs(self) -> Vec<Cost> {
        self.costs
    }

    /// `Ã`, the effective affine coefficients.
    pub fn coefficients(&self) -> CoefficientMatrix {
        crate::cost::affine_coefficients(&self.costs).expect("effective costs share a dimension")
    }
}

/// Everything one Phase I execution stores: the original coefficients, the
/// exchanged noise, the masks and the effective coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOneRecord {
    pub original: CoefficientMatrix,
    pub noise: PairwiseNoise,
    pub masks: MaskSet,
    pub effective: CoefficientMatrix,
}

impl PhaseOneRecord {
    /// Audit dump: `{"r": {"i->j": [..]}, "u": {"i": [..]}}` with 1-based ids.
    pub fn trace_json(&self, topology: &Topology) -> Value {
        let mut r = BTreeMap::new();
        for (l, &(i, j)) in topology.edges().iter().enumerate() {
            let (rij, rji) = self.noise.edge_pair(l);
            r.insert(format!("{}->{}", i + 1, j + 1), rij.iter().copied().collect::<Vec<_>>());
            r.insert(format!("{}->{}", j + 1, i + 1), rji.iter().copied().collect::<Vec<_>>());
        }
        let u: BTreeMap<String, Vec<f64>> = self
            .masks
            .masks
            .iter()
            .enumerate()
            .map(|(i, v)| ((i + 1).to_string(), v.iter().copied().collect()))
            .collect();
        json!({ "r": r, "u": u })
    }
}

/// Draws one `N(0_m, sigma² I_m)` vector per edge direction, in oriented
/// edge order (`r_ij` then `r_ji`).
pub fn draw_noise<R: Rng + ?Sized>(topology: &Topology, sigma: f64, m: usize, rng: &mut R) -> Result<PairwiseNoise> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    let values = (0..2 * topology.edge_count())
        .map(|_| DVector::from_fn(m, |_, _| sigma * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Ok(PairwiseNoise { dim: m, values })
}

/// `u_i = Σ_{j ∈ N_i} (r_ij - r_ji)`.
pub fn compute_masks(topology: &Topology, noise: &PairwiseNoise) -> Result<MaskSet> {
    if noise.values.len() != 2 * topology.edge_count() {
        return Err(Error::domain(format!(
            "noise covers {} directed edges, topology has {}",
            noise.values.len(),
            2 * topology.edge_count()
        )));
    }
    let mut masks = vec![DVector::zeros(noise.dim); topology.n()];
    for (l, &(i, j)) in topology.edges().iter().enumerate() {
        let (rij, rji) = noise.edge_pair(l);
        let d = rij - rji;
        masks[i] += &d;
        masks[j] -= &d;
    }
    Ok(MaskSet { masks })
}

/// Shifts each cost's affine coefficient by its mask.
pub fn effective_costs(costs: &[Cost], masks: &MaskSet) -> Result<EffectiveCostSet> {
    if costs.len() != masks.masks.len() {
        return Err(Error::DimensionMismatch { expected: costs.len(), found: masks.masks.len() });
    }
    let costs = costs
        .iter()
        .zip(&masks.masks)
        .map(|(c, u)| {
            if u.len() != c.dim() {
                return Err(Error::DimensionMismatch { expected: c.dim(), found: u.len() });
            }
            c.with_affine(c.affine() + u)
        })
        .collect::<Result<_>>()?;
    Ok(EffectiveCostSet { costs })
}

/// Phase I applied to a bare coefficient matrix (one column per agent).
pub fn mask_coefficients<R: Rng + ?Sized>(
    topology: &Topology,
    coefficients: &CoefficientMatrix,
    sigma: f64,
    rng: &mut R,
) -> Result<PhaseOneRecord> {
    if coefficients.agents() != topology.n() {
        return Err(Error::DimensionMismatch { expected: topology.n(), found: coefficients.agents() });
    }
    let noise = draw_noise(topology, sigma, coefficients.dim(), rng)?;
    let masks = compute_masks(topology, &noise)?;
    let mut effective = coefficients.matrix().clone();
    for (i, u) in masks.masks.iter().enumerate() {
        let mut col = effective.column_mut(i);
        col += u;
    }
    Ok(PhaseOneRecord { original: coefficients.clone(), noise, masks, effective: CoefficientMatrix::new(effective) })
}

/// Full Phase I on costs: draw noise, build masks, shift affine terms.
pub fn run_phase_one<R: Rng + ?Sized>(
    topology: &Topology,
    costs: &[Cost],
    sigma: f64,
    rng: &mut R,
) -> Result<(EffectiveCostSet, PhaseOneRecord)> {
    let original = crate::cost::affine_coefficients(costs)?;
    let record = mask_coefficients(topology, &original, sigma, rng)?;
    let effective = effective_costs(costs, &record.masks)?;
    Ok((effective, record))
}

fn univariate(costs: &[Cost]) -> Result<Vec<PolynomialCost>> {
    costs
        .iter()
        .map(|c| c.as_polynomial().ok_or_else(|| Error::domain("degree masking needs univariate costs")))
        .collect()
}

/// Masks the degree-`ell` coefficients and returns the masked costs together
/// with the Phase I record over `A^(ell)`.
pub fn mask_degree_recorded<R: Rng + ?Sized>(
    costs: &[Cost],
    ell: usize,
    topology: &Topology,
    sigma: f64,
    rng: &mut R,
) -> Result<(Vec<PolynomialCost>, PhaseOneRecord)> {
    let polys = univariate(costs)?;
    let max_degree = polys.iter().map(PolynomialCost::degree).max().unwrap_or(0);
    if ell == 0 || ell > max_degree {
        return Err(Error::domain(format!("degree {ell} outside 1..={max_degree}")));
    }
    let coeffs: Vec<f64> = polys.iter().map(|p| p.coeff(ell)).collect();
    let record = mask_coefficients(topology, &CoefficientMatrix::from_scalars(&coeffs), sigma, rng)?;
    let masked = polys
        .iter()
        .enumerate()
        .map(|(i, p)| p.with_coeff(ell, record.effective.matrix()[(0, i)]))
        .collect();
    Ok((masked, record))
}

/// Replaces every agent's degree-`ell` coefficient `a_i` by `a_i + u_i` with
/// fresh zero-sum masks. Other degrees are untouched.
pub fn mask_degree<R: Rng + ?Sized>(
    costs: &[Cost],
    ell: usize,
    topology: &Topology,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<PolynomialCost>> {
    mask_degree_recorded(costs, ell, topology, sigma, rng).map(|(masked, _)| masked)
}

/// Masks every degree `1..=d` with independent noise, lowest degree first.
pub fn mask_all_degrees<R: Rng + ?Sized>(
    costs: &[Cost],
    topology: &Topology,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<PolynomialCost>> {
    let mut polys = univariate(costs)?;
    let max_degree = polys.iter().map(PolynomialCost::degree).max().unwrap_or(0);
    for ell in 1..=max_degree {
        let current: Vec<Cost> = polys.into_iter().map(Cost::Polynomial).collect();
        polys = mask_degree(&current, ell, topology, sigma, rng)?;
    }
    Ok(polys)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::cost::QuadraticCost;
    use crate::spectral::incidence;

    fn demo_costs() -> Vec<Cost> {
        (1..=3).map(|a| Cost::Quadratic(QuadraticCost::scalar(2.0, a as f64))).collect()
    }

    #[test]
    fn draw_noise_examples() {
        let k3 = Topology::complete(3);
        let noise = draw_noise(&k3, 1.0, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(noise.len(), 6);
        let again = draw_noise(&k3, 1.0, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(noise, again);
        assert!(draw_noise(&k3, 0.0, 1, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        assert!(draw_noise(&k3, -1.0, 1, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn draw_noise_has_requested_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Topology::path(2);
        let sigma = 2.5;
        let trials = 100_000;
        let mut sums = [0.0f64; 2];
        let mut squares = [0.0f64; 2];
        for _ in 0..trials {
            let noise = draw_noise(&g, sigma, 1, &mut rng).unwrap();
            for (k, v) in noise.values().iter().enumerate() {
                sums[k] += v[0];
                squares[k] += v[0] * v[0];
            }
        }
        for k in 0..2 {
            let mean = sums[k] / trials as f64;
            let var = (squares[k] - trials as f64 * mean * mean) / (trials as f64 - 1.0);
            assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "variance {var}");
        }
    }

    #[test]
    fn compute_masks_examples() {
        let k3 = Topology::complete(3);
        let masks = compute_masks(&k3, &PairwiseNoise::zeros(&k3, 2)).unwrap();
        assert!(masks.masks().iter().all(|u| u.iter().all(|&x| x == 0.0)));

        let g = Topology::path(2);
        let (a, b) = (DVector::from_element(1, 0.7), DVector::from_element(1, -1.9));
        let map = HashMap::from([((0, 1), a.clone()), ((1, 0), b.clone())]);
        let masks = compute_masks(&g, &PairwiseNoise::from_map(&g, &map).unwrap()).unwrap();
        assert_eq!(masks.mask(0), &(&a - &b));
        assert_eq!(masks.mask(1), &(&b - &a));

        let partial = HashMap::from([((0, 1), a)]);
        assert!(PairwiseNoise::from_map(&g, &partial).is_err());
        assert!(compute_masks(&k3, &PairwiseNoise::zeros(&g, 1)).is_err());
    }

    #[test]
    fn masks_are_zero_sum_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rand::Rng::random_range(&mut rng, 1..9);
            let g = Topology::random(n, 0.5, &mut rng);
            let sigma = rand::Rng::random_range(&mut rng, 0.1..10.0);
            let noise = draw_noise(&g, sigma, 3, &mut rng).unwrap();
            let total = compute_masks(&g, &noise).unwrap().total();
            assert!(total.amax() <= 1e-9 * n as f64 * sigma);
        }
    }

    #[test]
    fn masks_agree_with_incidence_route() {
        // With c_e = r_ji - r_ij, Θc collects Σ (r_ji - r_ij) = -u_i.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Topology::random_connected(6, 0.5, &mut rng);
        let noise = draw_noise(&g, 1.3, 1, &mut rng).unwrap();
        let masks = compute_masks(&g, &noise).unwrap();
        let c = DVector::from_iterator(g.edge_count(), (0..g.edge_count()).map(|l| {
            let (rij, rji) = noise.edge_pair(l);
            rji[0] - rij[0]
        }));
        let theta_c = incidence(&g) * c;
        assert!((theta_c + masks.coordinate(0)).amax() < 1e-12);
    }

    #[test]
    fn effective_costs_examples() {
        let k3 = Topology::complete(3);
        let costs = demo_costs();
        let zero = compute_masks(&k3, &PairwiseNoise::zeros(&k3, 1)).unwrap();
        assert_eq!(effective_costs(&costs, &zero).unwrap().costs(), costs.as_slice());

        let (eff, record) = run_phase_one(&k3, &costs, 1.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let x = DVector::from_element(1, 1.0);
        let total: f64 = eff.costs().iter().map(|c| c.evaluate(&x).unwrap()).sum();
        assert!((total - 9.0).abs() < 1e-12);
        let before = record.original.column_sum(&[0, 1, 2]);
        let after = eff.coefficients().column_sum(&[0, 1, 2]);
        assert!((before - after).amax() < 1e-9);
        assert!(effective_costs(&costs[..2], &zero).is_err());
    }

    #[test]
    fn trace_json_layout() {
        let g = Topology::path(2);
        let map = HashMap::from([((0, 1), DVector::from_element(1, 1.0)), ((1, 0), DVector::from_element(1, 0.25))]);
        let noise = PairwiseNoise::from_map(&g, &map).unwrap();
        let masks = compute_masks(&g, &noise).unwrap();
        let record = PhaseOneRecord {
            original: CoefficientMatrix::from_scalars(&[0.0, 0.0]),
            effective: CoefficientMatrix::from_scalars(&[0.75, -0.75]),
            noise,
            masks,
        };
        assert_eq!(
            record.trace_json(&g),
            json!({"r": {"1->2": [1.0], "2->1": [0.25]}, "u": {"1": [0.75], "2": [-0.75]}})
        );
    }

    fn cubic_costs() -> Vec<Cost> {
        [[0.0, -2.0, 1.0, 0.5], [1.0, -7.0, 0.5, -0.2], [0.0, 0.0, 0.0, 0.0]]
            .iter()
            .map(|c| Cost::Polynomial(PolynomialCost::new(c.to_vec()).unwrap()))
            .collect()
    }

    #[test]
    fn mask_degree_preserves_sums_and_other_degrees() {
        let k3 = Topology::complete(3);
        let costs = cubic_costs();
        let before = PolynomialCost::sum(&univariate(&costs).unwrap());
        for ell in 1..=3 {
            let masked = mask_degree(&costs, ell, &k3, 2.0, &mut ChaCha8Rng::seed_from_u64(ell as u64)).unwrap();
            let after = PolynomialCost::sum(&masked);
            assert!((after[ell] - before[ell]).abs() < 1e-9);
            for (orig, m) in univariate(&costs).unwrap().iter().zip(&masked) {
                for other in (0..=3).filter(|&d| d != ell) {
                    assert_eq!(orig.coeff(other), m.coeff(other));
                }
            }
        }
        assert!(mask_degree(&costs, 0, &k3, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(mask_degree(&costs, 4, &k3, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let multi = vec![Cost::Quadratic(
            QuadraticCost::new(nalgebra::DMatrix::identity(2, 2), DVector::zeros(2), 0.0).unwrap(),
        )];
        assert!(mask_degree(&multi, 1, &Topology::complete(1), 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn degree_one_masking_matches_effective_costs() {
        let k3 = Topology::complete(3);
        let costs = demo_costs();
        let masked = mask_degree(&costs, 1, &k3, 1.0, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let (eff, _) = run_phase_one(&k3, &costs, 1.0, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        for (p, c) in masked.iter().zip(eff.costs()) {
            assert_eq!(Cost::Polynomial(p.clone()).as_polynomial(), c.as_polynomial());
        }
    }

    #[test]
    fn quadratic_masking_can_make_a_local_cost_concave() {
        // Sum 3x² stays convex; a large enough mask pushes one agent negative.
        let k3 = Topology::complete(3);
        let costs: Vec<Cost> =
            (0..3).map(|_| Cost::Polynomial(PolynomialCost::new(vec![0.0, 0.0, 1.0]).unwrap())).collect();
        let mut seed = 0;
        let masked = loop {
            let m = mask_degree(&costs, 2, &k3, 3.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            if m.iter().any(|p| p.second_derivative(0.0) < 0.0) {
                break m;
            }
            seed += 1;
        };
        let sum = PolynomialCost::new(PolynomialCost::sum(&masked)).unwrap();
        assert!((sum.second_derivative(0.0) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn mask_all_degrees_preserves_sum_polynomial() {
        let k3 = Topology::complete(3);
        let costs = cubic_costs();
        let before = PolynomialCost::sum(&univariate(&costs).unwrap());
        let masked = mask_all_degrees(&costs, &k3, 1.5, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let after = PolynomialCost::sum(&masked);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-9);
        }
        // d = 1: identical to masking degree 1 with the same stream
        let linear: Vec<Cost> =
            (1..=3).map(|a| Cost::Polynomial(PolynomialCost::new(vec![0.0, a as f64]).unwrap())).collect();
        let all = mask_all_degrees(&linear, &k3, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let one = mask_degree(&linear, 1, &k3, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(all, one);
    }
}
