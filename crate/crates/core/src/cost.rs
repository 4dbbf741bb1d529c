//! Local cost functions: a public non-affine part plus a private affine
//! coefficient, with gradients, aggregation, and an aggregate minimizer used
//! as the convergence oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{eigendecompose, SymmetricMatrix, RANK_CUTOFF};

/// `h(x) = ½ xᵀQx + αᵀx + γ` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    alpha: DVector<f64>,
    gamma: f64,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, alpha: DVector<f64>, gamma: f64) -> Result<Self> {
        if q.nrows() != alpha.len() {
            return Err(Error::DimensionMismatch { expected: alpha.len(), found: q.nrows() });
        }
        let sym = SymmetricMatrix::new(q)?;
        let eig = eigendecompose(&sym);
        let floor = -1e-9 * sym.matrix().norm();
        if eig.eigenvalues.iter().any(|&mu| mu < floor) {
            return Err(Error::domain("quadratic cost matrix is not positive semidefinite"));
        }
        Ok(Self { q: sym.into_matrix(), alpha, gamma })
    }

    /// Univariate `½ q x² + αx`.
    pub fn scalar(q: f64, alpha: f64) -> Self {
        Self::new(DMatrix::from_element(1, 1, q), DVector::from_element(1, alpha), 0.0).expect("q must be >= 0")
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Univariate polynomial `Σ_l a_l x^l`, degree at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialCost {
    coeffs: Vec<f64>,
}

impl PolynomialCost {
    /// `coeffs[l]` multiplies `x^l`.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::domain("polynomial cost needs degree >= 1"));
        }
        Ok(Self { coeffs })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, ell: usize) -> f64 {
        self.coeffs.get(ell).copied().unwrap_or(0.0)
    }

    pub fn with_coeff(&self, ell: usize, value: f64) -> Self {
        let mut coeffs = self.coeffs.clone();
        if coeffs.len() <= ell {
            coeffs.resize(ell + 1, 0.0);
        }
        coeffs[ell] = value;
        Self { coeffs }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.coeffs.iter().enumerate().skip(1).rev().fold(0.0, |acc, (l, &a)| acc * x + l as f64 * a)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (l, &a)| acc * x + (l * (l - 1)) as f64 * a)
    }

    /// Coefficient-wise sum, padded to the longest input.
    pub fn sum<'a>(polys: impl IntoIterator<Item = &'a PolynomialCost>) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for p in polys {
            if out.len() < p.coeffs.len() {
                out.resize(p.coeffs.len(), 0.0);
            }
            for (o, a) in out.iter_mut().zip(&p.coeffs) {
                *o += a;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cost {
    Quadratic(QuadraticCost),
    Polynomial(PolynomialCost),
}

impl Cost {
    /// Decision-variable dimension `m`.
    pub fn dim(&self) -> usize {
        match self {
            Cost::Quadratic(c) => c.alpha.len(),
            Cost::Polynomial(_) => 1,
        }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            Cost::Quadratic(c) => 0.5 * x.dot(&(&c.q * x)) + c.alpha.dot(x) + c.gamma,
            Cost::Polynomial(p) => p.eval(x[0]),
        })
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(match self {
            Cost::Quadratic(c) => &c.q * x + &c.alpha,
            Cost::Polynomial(p) => DVector::from_element(1, p.derivative(x[0])),
        })
    }

    /// The private affine coefficient `α`.
    pub fn affine(&self) -> DVector<f64> {
        match self {
            Cost::Quadratic(c) => c.alpha.clone(),
            Cost::Polynomial(p) => DVector::from_element(1, p.coeff(1)),
        }
    }

    /// Same non-affine part with the affine coefficient replaced.
    pub fn with_affine(&self, alpha: DVector<f64>) -> Result<Cost> {
        if alpha.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: alpha.len() });
        }
        Ok(match self {
            Cost::Quadratic(c) => Cost::Quadratic(QuadraticCost { alpha, ..c.clone() }),
            Cost::Polynomial(p) => Cost::Polynomial(p.with_coeff(1, alpha[0])),
        })
    }

    /// Univariate polynomial view; quadratics with `m = 1` convert exactly.
    pub fn as_polynomial(&self) -> Option<PolynomialCost> {
        match self {
            Cost::Polynomial(p) => Some(p.clone()),
            Cost::Quadratic(c) if c.alpha.len() == 1 => {
                Some(PolynomialCost { coeffs: vec![c.gamma, c.alpha[0], 0.5 * c.q[(0, 0)]] })
            }
            Cost::Quadratic(_) => None,
        }
    }
}

/// Feasible set: an axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxJson", into = "BoxJson")]
pub struct FeasibleBox {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxJson {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<BoxJson> for FeasibleBox {
    type Error = Error;
    fn try_from(b: BoxJson) -> Result<Self> {
        FeasibleBox::new(DVector::from_vec(b.lo), DVector::from_vec(b.hi))
    }
}

impl From<FeasibleBox> for BoxJson {
    fn from(b: FeasibleBox) -> Self {
        BoxJson { lo: b.lo.iter().copied().collect(), hi: b.hi.iter().copied().collect() }
    }
}

impl FeasibleBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !l.is_finite() || !h.is_finite() || l > h) {
            return Err(Error::domain("box bounds must be finite with lo <= hi"));
        }
        Ok(Self { lo, hi })
    }

    /// `[lo, hi]^m`.
    pub fn cube(m: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(DVector::from_element(m, lo), DVector::from_element(m, hi))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lo + &self.hi) * 0.5
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(self.hi.iter())).all(|(v, (l, h))| l <= v && v <= h)
    }

    /// Componentwise clamp.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter().zip(self.lo.iter().zip(self.hi.iter())).map(|(v, (l, h))| v.clamp(*l, *h)),
        )
    }
}

/// Column-wise stack of affine coefficients, `m x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix(DMatrix<f64>);

impl CoefficientMatrix {
    pub fn new(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    /// Builds from per-agent coefficient vectors.
    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(Error::domain("coefficient matrix needs at least one agent"));
        };
        let m = first.len();
        if let Some(bad) = columns.iter().find(|c| c.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, found: bad.len() });
        }
        Ok(Self(DMatrix::from_columns(columns)))
    }

    /// Univariate coefficients, one per agent.
    pub fn from_scalars(values: &[f64]) -> Self {
        Self(DMatrix::from_row_slice(1, values.len(), values))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn agents(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.0.column(i).into_owned()
    }

    /// Sum of the columns in `agents`.
    pub fn column_sum(&self, agents: &[usize]) -> DVector<f64> {
        agents.iter().fold(DVector::zeros(self.dim()), |acc, &i| acc + self.0.column(i))
    }

    /// Squared Frobenius distance.
    pub fn distance_squared(&self, other: &CoefficientMatrix) -> f64 {
        (&self.0 - &other.0).norm_squared()
    }
}

/// Stacks each cost's affine coefficient as a column.
pub fn affine_coefficients(costs: &[Cost]) -> Result<CoefficientMatrix> {
    CoefficientMatrix::from_columns(&costs.iter().map(Cost::affine).collect::<Vec<_>>())
}

/// Checks all costs share dimension `m` and returns it.
pub fn common_dim(costs: &[Cost]) -> Result<usize> {
    let Some(first) = costs.first() else {
        return Err(Error::domain("no costs given"));
    };
    let m = first.dim();
    if let Some(bad) = costs.iter().find(|c| c.dim() != m) {
        return Err(Error::DimensionMismatch { expected: m, found: bad.dim() });
    }
    Ok(m)
}

/// Minimizer of `Σ h_i` over the box.
///
/// Quadratic aggregates solve `(ΣQ_i) x = -Σα_i`; the solution is returned if
/// feasible, otherwise the box-constrained problem is finished by projected
/// gradient. Univariate polynomial aggregates compare the endpoints with every
/// critical point inside the box.
pub fn aggregate_minimizer(costs: &[Cost], feasible: &FeasibleBox) -> Result<DVector<f64>> {
    let m = common_dim(costs)?;
    if feasible.dim() != m {
        return Err(Error::DimensionMismatch { expected: m, found: feasible.dim() });
    }
    if costs.iter().all(|c| matches!(c, Cost::Quadratic(_))) {
        let mut q = DMatrix::zeros(m, m);
        let mut alpha = DVector::zeros(m);
        for c in costs {
            if let Cost::Quadratic(c) = c {
                q += &c.q;
                alpha += &c.alpha;
            }
        }
        return quadratic_box_minimizer(&q, &alpha, feasible);
    }
    if m != 1 {
        return Err(Error::domain("polynomial costs must be univariate"));
    }
    let polys: Vec<PolynomialCost> = costs.iter().filter_map(Cost::as_polynomial).collect();
    let sum = PolynomialCost::new(PolynomialCost::sum(&polys))?;
    polynomial_box_minimizer(&sum, feasible.lo[0], feasible.hi[0]).map(|x| DVector::from_element(1, x))
}

fn quadratic_box_minimizer(q: &DMatrix<f64>, alpha: &DVector<f64>, feasible: &FeasibleBox) -> Result<DVector<f64>> {
    let eig = eigendecompose(&SymmetricMatrix::new(q.clone())?);
    let (lo, hi) = (eig.eigenvalues[0], eig.spectral_radius());
    if lo.is_nan() || lo <= RANK_CUTOFF * hi {
        return Err(Error::NonUniqueMinimizer);
    }
    let free = q.clone().cholesky().ok_or(Error::NonUniqueMinimizer)?.solve(&(-alpha));
    if feasible.contains(&free) {
        return Ok(free);
    }
    // Strongly convex: projected gradient with step 1/L converges linearly.
    let step = 1.0 / hi;
    let mut x = feasible.project(&free);
    for _ in 0..1_000_000 {
        let next = feasible.project(&(&x - (q * &x + alpha) * step));
        let moved = (&next - &x).amax();
        x = next;
        if moved <= 1e-15 * (1.0 + x.amax()) {
            break;
        }
    }
    Ok(x)
}

fn polynomial_box_minimizer(p: &PolynomialCost, lo: f64, hi: f64) -> Result<f64> {
    let mut candidates = vec![lo, hi];
    if p.degree() == 2 && p.coeff(2) > 0.0 {
        candidates.push((-p.coeff(1) / (2.0 * p.coeff(2))).clamp(lo, hi));
    } else if hi > lo {
        let steps = 4096;
        let h = (hi - lo) / steps as f64;
        let mut a = lo;
        let mut fa = p.derivative(a);
        for k in 1..=steps {
            let b = if k == steps { hi } else { lo + h * k as f64 };
            let fb = p.derivative(b);
            if fa == 0.0 {
                candidates.push(a);
            } else if fa.signum() != fb.signum() && fb != 0.0 {
                let (mut l, mut r) = (a, b);
                for _ in 0..200 {
                    let mid = 0.5 * (l + r);
                    if p.derivative(mid).signum() == fa.signum() {
                        l = mid;
                    } else {
                        r = mid;
                    }
                }
                candidates.push(0.5 * (l + r));
            }
            a = b;
            fa = fb;
        }
    }
    let best = candidates.iter().copied().min_by(|x, y| p.eval(*x).total_cmp(&p.eval(*y))).expect("nonempty");
    let fbest = p.eval(best);
    let tie = candidates
        .iter()
        .any(|&x| (x - best).abs() > 1e-9 * (1.0 + best.abs()) && (p.eval(x) - fbest).abs() <= 1e-12 * (1.0 + fbest.abs()));
    if tie {
        return Err(Error::NonUniqueMinimizer);
    }
    Ok(best)
}

/// JSON form of a cost:
/// `{"kind": "quadratic", "Q": [[..]], "alpha": [..], "gamma": 0.0}` or
/// `{"kind": "polynomial", "coeffs": [a0, a1, ..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CostJson {
    Quadratic {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        alpha: Vec<f64>,
        #[serde(default)]
        gamma: f64,
    },
    Polynomial {
        coeffs: Vec<f64>,
    },
}

impl TryFrom<CostJson> for Cost {
    type Error = Error;

    fn try_from(raw: CostJson) -> Result<Self> {
        match raw {
            CostJson::Quadratic { q, alpha, gamma } => {
                let m = alpha.len();
                if q.len() != m || q.iter().any(|r| r.len() != m) {
                    return Err(Error::Config(format!("Q must be {m}x{m} to match alpha")));
                }
                let q = DMatrix::from_fn(m, m, |i, j| q[i][j]);
                Ok(Cost::Quadratic(QuadraticCost::new(q, DVector::from_vec(alpha), gamma)?))
            }
            CostJson::Polynomial { coeffs } => Ok(Cost::Polynomial(PolynomialCost::new(coeffs)?)),
        }
    }
}

impl From<&Cost> for CostJson {
    fn from(c: &Cost) -> Self {
        match c {
            Cost::Quadratic(c) => CostJson::Quadratic {
                q: crate::spectral::to_rows(&c.q),
                alpha: c.alpha.iter().copied().collect(),
                gamma: c.gamma,
            },
            Cost::Polynomial(p) => CostJson::Polynomial { coeffs: p.coeffs.clone() },
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn x1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    /// The three univariate costs x² + αx with α = 1, 2, 3.
    fn demo_costs() -> Vec<Cost> {
        (1..=3).map(|a| Cost::Quadratic(QuadraticCost::scalar(2.0, a as f64))).collect()
    }

    fn random_quadratic(m: usize, rng: &mut impl Rng) -> QuadraticCost {
        let b = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let q = &b * b.transpose() + DMatrix::identity(m, m) * 0.1;
        let alpha = DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0));
        QuadraticCost::new(q, alpha, rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let c = demo_costs();
        assert_eq!(c[0].evaluate(&x1(1.0)).unwrap(), 2.0);
        assert_eq!(c[2].evaluate(&x1(-1.0)).unwrap(), -2.0);
        let zero = Cost::Quadratic(QuadraticCost::scalar(0.0, 0.0));
        assert_eq!(zero.evaluate(&x1(17.0)).unwrap(), 0.0);
        let poly = Cost::Polynomial(PolynomialCost::new(vec![1.0, 1.0, 1.0]).unwrap());
        assert_eq!(poly.evaluate(&x1(2.0)).unwrap(), 7.0);
        assert!(c[0].evaluate(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(demo_costs()[0].gradient(&x1(0.0)).unwrap()[0], 1.0);
        let flat = Cost::Quadratic(
            QuadraticCost::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.5, -2.0]), 0.0).unwrap(),
        );
        for x in [DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![9.0, -4.0])] {
            assert_eq!(flat.gradient(&x).unwrap(), DVector::from_vec(vec![1.5, -2.0]));
        }
        assert!(flat.gradient(&x1(0.0)).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for k in 0..100 {
            let m = 1 + k % 4;
            let cost = Cost::Quadratic(random_quadratic(m, &mut rng));
            let x = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
            let g = cost.gradient(&x).unwrap();
            for d in 0..m {
                let mut e = DVector::zeros(m);
                e[d] = h;
                let fd = (cost.evaluate(&(&x + &e)).unwrap() - cost.evaluate(&(&x - &e)).unwrap()) / (2.0 * h);
                assert!((fd - g[d]).abs() <= 1e-6 * g[d].abs().max(1.0), "{fd} vs {}", g[d]);
            }
        }
        for _ in 0..50 {
            let coeffs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = Cost::Polynomial(PolynomialCost::new(coeffs).unwrap());
            let x = rng.random_range(-2.0..2.0);
            let fd = (p.evaluate(&x1(x + h)).unwrap() - p.evaluate(&x1(x - h)).unwrap()) / (2.0 * h);
            let g = p.gradient(&x1(x)).unwrap()[0];
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0));
        }
    }

    #[test]
    fn aggregate_minimizer_examples() {
        let wide = FeasibleBox::cube(1, -100.0, 100.0).unwrap();
        assert_relative_eq!(aggregate_minimizer(&demo_costs(), &wide).unwrap()[0], -1.0, epsilon = 1e-12);
        let half = vec![Cost::Quadratic(QuadraticCost::scalar(1.0, 0.0))];
        assert_eq!(aggregate_minimizer(&half, &wide).unwrap()[0], 0.0);
        // unconstrained minimizer at 150
        let far = vec![Cost::Quadratic(QuadraticCost::scalar(1.0, -150.0))];
        assert_eq!(aggregate_minimizer(&far, &wide).unwrap()[0], 100.0);
        let flat = vec![Cost::Quadratic(QuadraticCost::scalar(0.0, 0.0))];
        assert!(matches!(aggregate_minimizer(&flat, &wide), Err(Error::NonUniqueMinimizer)));
    }

    #[test]
    fn polynomial_minimizer_matches_grid_search() {
        let feasible = FeasibleBox::cube(1, 0.0, 4.0).unwrap();
        // 0.3x³ + 1.5x² − 9x is convex on [0, 4]
        let costs = vec![
            Cost::Polynomial(PolynomialCost::new(vec![0.0, -2.0, 1.0, 0.5]).unwrap()),
            Cost::Polynomial(PolynomialCost::new(vec![0.0, -7.0, 0.5, -0.2]).unwrap()),
        ];
        let z = aggregate_minimizer(&costs, &feasible).unwrap()[0];
        let f = |x: f64| costs.iter().map(|c| c.evaluate(&x1(x)).unwrap()).sum::<f64>();
        let grid = (0..=400_000).map(|k| k as f64 * 1e-5).min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
        assert!((z - grid).abs() < 1e-4);
        assert_relative_eq!(z, (-3.0 + (9.0f64 + 32.4).sqrt()) / 1.8, epsilon = 1e-9);
    }

    #[test]
    fn first_order_optimality_on_random_box_qps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let m = rng.random_range(1..4);
            let costs: Vec<Cost> = (0..3).map(|_| Cost::Quadratic(random_quadratic(m, &mut rng))).collect();
            let feasible = FeasibleBox::cube(m, -0.3, 0.2).unwrap();
            let z = aggregate_minimizer(&costs, &feasible).unwrap();
            let g = costs.iter().fold(DVector::zeros(m), |acc, c| acc + c.gradient(&z).unwrap());
            for _ in 0..100 {
                let x = DVector::from_fn(m, |_, _| rng.random_range(-0.3..0.2));
                assert!(g.dot(&(x - &z)) >= -1e-6);
            }
        }
    }

    #[test]
    fn project_examples() {
        let b = FeasibleBox::cube(1, -100.0, 100.0).unwrap();
        assert_eq!(b.project(&x1(150.0))[0], 100.0);
        assert_eq!(b.project(&x1(3.5))[0], 3.5);
        assert!(FeasibleBox::cube(1, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            x in prop::collection::vec(-50.0f64..50.0, 3),
            y in prop::collection::vec(-50.0f64..50.0, 3),
        ) {
            let b = FeasibleBox::new(DVector::from_vec(vec![-1.0, 0.0, -10.0]), DVector::from_vec(vec![1.0, 5.0, -2.0])).unwrap();
            let (x, y) = (DVector::from_vec(x), DVector::from_vec(y));
            let px = b.project(&x);
            prop_assert_eq!(b.project(&px), px.clone());
            prop_assert!((&px - b.project(&y)).norm() <= (&x - &y).norm() + 1e-12);
        }
    }

    #[test]
    fn affine_coefficients_examples() {
        let a = affine_coefficients(&demo_costs()).unwrap();
        assert_eq!(a.matrix(), &DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]));
        let zeros = vec![Cost::Quadratic(QuadraticCost::scalar(1.0, 0.0)); 4];
        assert_eq!(affine_coefficients(&zeros).unwrap().matrix(), &DMatrix::zeros(1, 4));
        let single = affine_coefficients(&demo_costs()[..1]).unwrap();
        assert_eq!(single.agents(), 1);
        let mixed = vec![demo_costs()[0].clone(), Cost::Quadratic(random_quadratic(2, &mut ChaCha8Rng::seed_from_u64(0)))];
        assert!(affine_coefficients(&mixed).is_err());
    }

    #[test]
    fn rejects_indefinite_quadratic() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QuadraticCost::new(q, DVector::zeros(2), 0.0).is_err());
    }

    #[test]
    fn cost_json_forms() {
        let q: CostJson = serde_json::from_str(r#"{"kind":"quadratic","Q":[[2]],"alpha":[1],"gamma":0.0}"#).unwrap();
        assert_eq!(Cost::try_from(q).unwrap(), demo_costs()[0]);
        let p: CostJson = serde_json::from_str(r#"{"kind":"polynomial","coeffs":[0,1,2,3]}"#).unwrap();
        let p = Cost::try_from(p).unwrap();
        assert_eq!(p.as_polynomial().unwrap().degree(), 3);
        let bad: CostJson = serde_json::from_str(r#"{"kind":"quadratic","Q":[[2,0]],"alpha":[1]}"#).unwrap();
        assert!(Cost::try_from(bad).is_err());
    }
}
