//! Passive adversary: what a corrupted coalition observes, the reduced view
//! that carries all information about honest coefficients, and the privacy
//! bounds derived from the honest subgraph's algebraic connectivity.

use std::collections::BTreeMap;
use std::fmt;

use itertools::Itertools;
use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Serialize, Serializer};

use crate::cost::CoefficientMatrix;
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::obfuscation::PhaseOneRecord;
use crate::spectral::{algebraic_connectivity, laplacian};

mod empirical;

pub use empirical::{
    empirical_kl, empirical_kl_with, sample_reduced_view, AuditOptions, BranchMoments, Histogram, PrivacyReport,
    EVIDENCE_FLAG, MIN_TRIALS, SINGLE_HONEST_FLAG, SUPPORT_FLAG, VERTEX_CUT_FLAG,
};

/// Agents controlled by the adversary, and their honest complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptedSet {
    n: usize,
    corrupted: Vec<usize>,
    honest: Vec<usize>,
}

impl CorruptedSet {
    /// `c` holds 0-based ids. At least one agent must stay honest.
    pub fn new(n: usize, c: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut corrupted: Vec<usize> = c.into_iter().collect();
        corrupted.sort_unstable();
        corrupted.dedup();
        if let Some(&bad) = corrupted.iter().find(|&&v| v >= n) {
            return Err(Error::domain(format!("corrupted agent {} outside 1..={n}", bad + 1)));
        }
        if corrupted.len() >= n {
            return Err(Error::domain("at least one agent must be honest"));
        }
        let honest = (0..n).filter(|v| corrupted.binary_search(v).is_err()).collect();
        Ok(Self { n, corrupted, honest })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, corrupted: Vec::new(), honest: (0..n).collect() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn corrupted(&self) -> &[usize] {
        &self.corrupted
    }

    pub fn honest(&self) -> &[usize] {
        &self.honest
    }

    pub fn contains(&self, i: usize) -> bool {
        self.corrupted.binary_search(&i).is_ok()
    }

    fn check_topology(&self, topology: &Topology) -> Result<()> {
        if topology.n() != self.n {
            return Err(Error::DimensionMismatch { expected: topology.n(), found: self.n });
        }
        Ok(())
    }
}

/// Everything the coalition sees in one execution, assuming every effective
/// cost is eventually revealed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryView {
    pub corrupted: CorruptedSet,
    /// Private coefficients `α_i`, `i ∈ C`, in corrupted order.
    pub corrupted_private: Vec<DVector<f64>>,
    /// Effective coefficients `α̃_i`, `i ∈ C`.
    pub corrupted_effective: Vec<DVector<f64>>,
    /// `r_ij` for every directed edge with an endpoint in `C`.
    pub noise: BTreeMap<(usize, usize), DVector<f64>>,
    /// Effective coefficients `α̃_i`, `i ∈ H`, in honest order.
    pub honest_effective: Vec<DVector<f64>>,
}

/// Honest coefficients with the coalition-known noise removed:
/// `ᾱ_i = α̃_i − Σ_{j ∈ N_i ∩ C} (r_ij − r_ji)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedView {
    pub honest: Vec<usize>,
    pub values: Vec<DVector<f64>>,
}

impl ReducedView {
    pub fn total(&self) -> DVector<f64> {
        let dim = self.values.first().map_or(0, DVector::len);
        self.values.iter().fold(DVector::zeros(dim), |acc, v| acc + v)
    }
}

pub fn extract_view(topology: &Topology, record: &PhaseOneRecord, c: &CorruptedSet) -> Result<AdversaryView> {
    c.check_topology(topology)?;
    if c.corrupted.is_empty() {
        return Err(Error::domain("the adversary must corrupt at least one agent"));
    }
    let mut noise = BTreeMap::new();
    for (l, &(i, j)) in topology.edges().iter().enumerate() {
        if c.contains(i) || c.contains(j) {
            let (rij, rji) = record.noise.edge_pair(l);
            noise.insert((i, j), rij.clone());
            noise.insert((j, i), rji.clone());
        }
    }
    let pick = |m: &CoefficientMatrix, ids: &[usize]| ids.iter().map(|&i| m.column(i)).collect::<Vec<_>>();
    Ok(AdversaryView {
        corrupted: c.clone(),
        corrupted_private: pick(&record.original, &c.corrupted),
        corrupted_effective: pick(&record.effective, &c.corrupted),
        noise,
        honest_effective: pick(&record.effective, &c.honest),
    })
}

pub fn reduce_view(view: &AdversaryView, topology: &Topology) -> Result<ReducedView> {
    let c = &view.corrupted;
    c.check_topology(topology)?;
    let mut values = Vec::with_capacity(c.honest.len());
    for (&i, effective) in c.honest.iter().zip(&view.honest_effective) {
        let mut v = effective.clone();
        for &j in topology.neighbors(i)?.iter().filter(|&&j| c.contains(j)) {
            let missing = || Error::domain(format!("view lacks noise on edge {}-{}", i + 1, j + 1));
            let rij = view.noise.get(&(i, j)).ok_or_else(missing)?;
            let rji = view.noise.get(&(j, i)).ok_or_else(missing)?;
            v -= rij - rji;
        }
        values.push(v);
    }
    Ok(ReducedView { honest: c.honest.clone(), values })
}

/// Which admissibility constraint a scenario pair breaks.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioViolation {
    /// 1-based agent id.
    CorruptedMismatch { agent: usize },
    HonestSumMismatch,
    Shape(String),
}

impl fmt::Display for ScenarioViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioViolation::CorruptedMismatch { agent } => {
                write!(f, "corrupted coefficient mismatch at agent {agent}")
            }
            ScenarioViolation::HonestSumMismatch => f.write_str("honest sum mismatch"),
            ScenarioViolation::Shape(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for ScenarioViolation {}

/// Two coefficient matrices the adversary should not be able to tell apart.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPair {
    pub a: CoefficientMatrix,
    pub b: CoefficientMatrix,
    pub c: CorruptedSet,
}

impl ScenarioPair {
    /// `‖A − B‖²` (Frobenius).
    pub fn distance_squared(&self) -> f64 {
        self.a.distance_squared(&self.b)
    }
}

const SCENARIO_TOL: f64 = 1e-12;

/// Checks `α_i = β_i` on `C` and `Σ_H α_i = Σ_H β_i`, both within 1e-12.
pub fn validate_scenario(s: &ScenarioPair) -> std::result::Result<(), ScenarioViolation> {
    if s.a.matrix().shape() != s.b.matrix().shape() {
        return Err(ScenarioViolation::Shape(format!(
            "coefficient shapes differ: {:?} vs {:?}",
            s.a.matrix().shape(),
            s.b.matrix().shape()
        )));
    }
    if s.a.agents() != s.c.n() {
        return Err(ScenarioViolation::Shape(format!(
            "{} coefficient columns for {} agents",
            s.a.agents(),
            s.c.n()
        )));
    }
    for &i in s.c.corrupted() {
        if (s.a.column(i) - s.b.column(i)).amax() > SCENARIO_TOL {
            return Err(ScenarioViolation::CorruptedMismatch { agent: i + 1 });
        }
    }
    if (s.a.column_sum(s.c.honest()) - s.b.column_sum(s.c.honest())).amax() > SCENARIO_TOL {
        return Err(ScenarioViolation::HonestSumMismatch);
    }
    Ok(())
}

/// Outcome of a privacy bound computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyBound {
    /// `ε = 1/(4σ²μ₂(L_H))`.
    Epsilon { epsilon: f64, mu2: f64 },
    /// One honest agent: its coefficient is pinned by the honest sum, so any
    /// admissible pair has `A = B` and `ε = 0`.
    SingleHonest,
    /// `C` is a vertex cut.
    NoGuarantee,
}

impl PrivacyBound {
    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            PrivacyBound::Epsilon { epsilon, .. } => Some(epsilon),
            PrivacyBound::SingleHonest => Some(0.0),
            PrivacyBound::NoGuarantee => None,
        }
    }

    pub fn mu2(&self) -> Option<f64> {
        match *self {
            PrivacyBound::Epsilon { mu2, .. } => Some(mu2),
            _ => None,
        }
    }

    /// `ε·d` for a squared distance `d`.
    pub fn kl_bound(&self, distance_squared: f64) -> Option<f64> {
        self.epsilon().map(|e| e * distance_squared)
    }

    /// Total order with "no guarantee" above every number.
    fn worse_than(&self, other: &PrivacyBound) -> bool {
        match (self.epsilon(), other.epsilon()) {
            (None, Some(_)) => true,
            (Some(a), Some(b)) => a > b,
            _ => false,
        }
    }
}

impl fmt::Display for PrivacyBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.epsilon() {
            Some(e) => write!(f, "{e}"),
            None => f.write_str("no guarantee"),
        }
    }
}

/// A number, or the string `"no guarantee"`.
impl Serialize for PrivacyBound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.epsilon() {
            Some(e) => s.serialize_f64(e),
            None => s.serialize_str("no guarantee"),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("sigma must be positive, got {sigma}")))
    }
}

/// Privacy level against coalition `c`: `1/(4σ²μ₂(L_H))` unless `c` is a
/// vertex cut.
pub fn theoretical_epsilon(topology: &Topology, c: &CorruptedSet, sigma: f64) -> Result<PrivacyBound> {
    check_sigma(sigma)?;
    c.check_topology(topology)?;
    if topology.is_vertex_cut(c.corrupted())? {
        return Ok(PrivacyBound::NoGuarantee);
    }
    if c.honest().len() == 1 {
        return Ok(PrivacyBound::SingleHonest);
    }
    let (honest_graph, _) = topology.induced_subgraph(c.honest())?;
    let mu2 = algebraic_connectivity(&laplacian(&honest_graph))?;
    Ok(PrivacyBound::Epsilon { epsilon: 1.0 / (4.0 * sigma * sigma * mu2), mu2 })
}

/// Same bound for the degree-`ell` coefficients of polynomial costs: the
/// masking of each degree is the affine mechanism applied to that degree.
pub fn degree_privacy_epsilon(topology: &Topology, c: &CorruptedSet, sigma: f64, ell: usize) -> Result<PrivacyBound> {
    if ell == 0 {
        return Err(Error::domain("degree must be at least 1"));
    }
    theoretical_epsilon(topology, c, sigma)
}

/// Largest `n` for exhaustive enumeration of coalitions.
pub const ENUMERATION_CAP: usize = 20;

/// Worst case over coalitions of one size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeRow {
    pub size: usize,
    pub bound: PrivacyBound,
    /// 1-based ids of a coalition attaining the worst case.
    pub worst: Vec<usize>,
    pub coalitions_checked: usize,
}

/// Worst-case privacy over all coalitions with `|C| ≤ t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorollaryTable {
    pub t: usize,
    pub vertex_connectivity: Option<usize>,
    pub bound: PrivacyBound,
    pub rows: Vec<SizeRow>,
    /// False in sampling mode, where `bound` is only a lower bound on the
    /// true worst case.
    pub exhaustive: bool,
}

fn worst_row(
    topology: &Topology,
    size: usize,
    sigma: f64,
    coalitions: impl Iterator<Item = Vec<usize>>,
) -> Result<SizeRow> {
    let mut row = SizeRow { size, bound: PrivacyBound::SingleHonest, worst: Vec::new(), coalitions_checked: 0 };
    let mut first = true;
    for c in coalitions {
        let bound = theoretical_epsilon(topology, &CorruptedSet::new(topology.n(), c.iter().copied())?, sigma)?;
        row.coalitions_checked += 1;
        if first || bound.worse_than(&row.bound) {
            row.bound = bound;
            row.worst = c.iter().map(|v| v + 1).collect();
            first = false;
        }
    }
    Ok(row)
}

/// Exhaustive worst case over `|C| ≤ t` (`C = ∅` included). Graphs that are
/// not `(t+1)`-connected give "no guarantee".
pub fn corollary_epsilon(topology: &Topology, t: usize, sigma: f64) -> Result<CorollaryTable> {
    check_sigma(sigma)?;
    let n = topology.n();
    if n > ENUMERATION_CAP {
        return Err(Error::EnumerationTooLarge { n, cap: ENUMERATION_CAP });
    }
    let kappa = topology.vertex_connectivity();
    let mut rows = Vec::new();
    for size in 0..=t.min(n - 1) {
        rows.push(worst_row(topology, size, sigma, (0..n).combinations(size))?);
    }
    let bound = if kappa < t + 1 {
        PrivacyBound::NoGuarantee
    } else {
        rows.iter().fold(rows[0].bound, |acc, r| if r.bound.worse_than(&acc) { r.bound } else { acc })
    };
    Ok(CorollaryTable { t, vertex_connectivity: Some(kappa), bound, rows, exhaustive: true })
}

/// Sampling mode for large graphs: `samples` random coalitions per size.
/// The result is a lower bound on the worst case.
pub fn corollary_epsilon_sampled<R: Rng + ?Sized>(
    topology: &Topology,
    t: usize,
    sigma: f64,
    samples: usize,
    rng: &mut R,
) -> Result<CorollaryTable> {
    check_sigma(sigma)?;
    let n = topology.n();
    let mut rows = Vec::new();
    for size in 0..=t.min(n - 1) {
        let draws: Vec<Vec<usize>> = (0..if size == 0 { 1 } else { samples })
            .map(|_| {
                let mut c = sample(rng, n, size).into_vec();
                c.sort_unstable();
                c
            })
            .collect();
        rows.push(worst_row(topology, size, sigma, draws.into_iter())?);
    }
    let bound = rows.iter().fold(rows[0].bound, |acc, r| if r.bound.worse_than(&acc) { r.bound } else { acc });
    Ok(CorollaryTable { t, vertex_connectivity: None, bound, rows, exhaustive: false })
}
