//! Monte Carlo estimate of the divergence between the coalition's views under
//! two admissible coefficient matrices.
//!
//! Each trial runs a full Phase I execution, extracts the coalition's view and
//! reduces it to `ᾱ_H`. Per branch, the sample mean and covariance of `ᾱ_H`
//! are accumulated; the KL divergence of the fitted Gaussians is reported next
//! to the theoretical bound.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::{extract_view, reduce_view, theoretical_epsilon, validate_scenario, CorruptedSet, PrivacyBound, ReducedView, ScenarioPair};
use crate::cost::CoefficientMatrix;
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::obfuscation::mask_coefficients;
use crate::rng::{stream, Domain};
use crate::spectral::{eigendecompose, gaussian_kl, to_rows, SymmetricMatrix, RANK_CUTOFF};

/// Trials per parallel work unit. Fixed, so the floating-point summation
/// order never depends on the thread count.
const CHUNK: usize = 1024;

pub const MIN_TRIALS: usize = 10_000;

pub const EVIDENCE_FLAG: &str = "evidence, not proof: a finite number of scenario pairs was checked";
pub const VERTEX_CUT_FLAG: &str = "C is a vertex cut: no privacy guarantee";
pub const SUPPORT_FLAG: &str = "support mismatch";
pub const SINGLE_HONEST_FLAG: &str = "single honest agent: its coefficient is fixed by the honest sum";

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOptions {
    pub trials: usize,
    pub seed: u64,
    /// Histogram bins per honest agent and coordinate; `None` skips them.
    pub histogram_bins: Option<usize>,
}

/// Fitted Gaussian of one branch, one block per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMoments {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

/// Counts of `ᾱ_i` for one branch, honest agent and coordinate over
/// `bins` equal cells of `[lo, hi]`. Values outside the range land in the end
/// cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub branch: char,
    pub agent: usize,
    pub coordinate: usize,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn add(&mut self, x: f64) {
        let bins = self.counts.len();
        let t = (x - self.lo) / (self.hi - self.lo) * bins as f64;
        let k = if t.is_nan() { 0 } else { (t.max(0.0) as usize).min(bins - 1) };
        self.counts[k] += 1;
    }

    fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyReport {
    pub corrupted: Vec<usize>,
    pub honest: Vec<usize>,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub epsilon_theory: PrivacyBound,
    pub distance_squared: f64,
    /// `ε·‖A − B‖²`; `None` without a guarantee.
    pub kl_bound: Option<f64>,
    /// Summed over coordinates; `None` on a support mismatch.
    pub kl_empirical: Option<f64>,
    pub kl_per_coordinate: Vec<Option<f64>>,
    pub kl_std_error: f64,
    /// Rank of the pooled covariance, summed over coordinates.
    pub support_rank: usize,
    pub moments_a: BranchMoments,
    pub moments_b: BranchMoments,
    /// Average of the two branch covariances, per coordinate.
    pub pooled_cov: Vec<DMatrix<f64>>,
    pub histograms: Vec<Histogram>,
    pub flags: Vec<String>,
}

fn flat(blocks: &[DVector<f64>]) -> Vec<f64> {
    blocks.iter().flat_map(|b| b.iter().copied()).collect()
}

fn block_diagonal(blocks: &[DMatrix<f64>]) -> Vec<Vec<f64>> {
    let size: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(size, size);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), b.shape()).copy_from(b);
        at += b.nrows();
    }
    to_rows(&out)
}

fn one_based(ids: &[usize]) -> Vec<usize> {
    ids.iter().map(|v| v + 1).collect()
}

impl PrivacyReport {
    /// JSON form. Means are listed coordinate by coordinate (all honest agents
    /// for coordinate 1, then coordinate 2, ...); covariances are the matching
    /// block-diagonal matrices.
    pub fn to_json(&self) -> Value {
        let number_or_null = |v: Option<f64>| v.map_or(Value::Null, |x| json!(x));
        let bound = match self.kl_bound {
            Some(b) => json!(b),
            None => json!("no guarantee"),
        };
        json!({
            "epsilon_theory": self.epsilon_theory,
            "mu2_honest": number_or_null(self.epsilon_theory.mu2()),
            "kl_empirical": number_or_null(self.kl_empirical),
            "kl_per_coordinate": self.kl_per_coordinate.iter().map(|v| number_or_null(*v)).collect::<Vec<_>>(),
            "kl_bound": bound,
            "kl_std_error": self.kl_std_error,
            "distance_squared": self.distance_squared,
            "support_rank": self.support_rank,
            "trials": self.trials,
            "seed": self.seed,
            "sigma": self.sigma,
            "corrupted": one_based(&self.corrupted),
            "honest": one_based(&self.honest),
            "mean_A": flat(&self.moments_a.mean),
            "mean_B": flat(&self.moments_b.mean),
            "cov": block_diagonal(&self.pooled_cov),
            "cov_A": block_diagonal(&self.moments_a.cov),
            "cov_B": block_diagonal(&self.moments_b.cov),
            "flags": self.flags,
        })
    }

    /// Whether the empirical value respects the bound up to `z` standard
    /// errors. Without a guarantee or a finite estimate there is nothing to
    /// check, and the answer is `None`.
    pub fn within_bound(&self, z: f64) -> Option<bool> {
        Some(self.kl_empirical? <= self.kl_bound? + z * self.kl_std_error)
    }
}

/// One Phase I execution on `coefficients`, seen and reduced by `c`.
pub fn sample_reduced_view<R: Rng + ?Sized>(
    topology: &Topology,
    coefficients: &CoefficientMatrix,
    c: &CorruptedSet,
    sigma: f64,
    rng: &mut R,
) -> Result<ReducedView> {
    let record = mask_coefficients(topology, coefficients, sigma, rng)?;
    reduce_view(&extract_view(topology, &record, c)?, topology)
}

/// Shifted first and second moment sums for one branch.
#[derive(Clone)]
struct Accumulator {
    count: usize,
    sums: Vec<DVector<f64>>,
    outer: Vec<DMatrix<f64>>,
    histograms: Vec<Histogram>,
}

impl Accumulator {
    fn new(h: usize, m: usize, histograms: Vec<Histogram>) -> Self {
        Self { count: 0, sums: vec![DVector::zeros(h); m], outer: vec![DMatrix::zeros(h, h); m], histograms }
    }

    fn merge(&mut self, other: &Accumulator) {
        self.count += other.count;
        for k in 0..self.sums.len() {
            self.sums[k] += &other.sums[k];
            self.outer[k] += &other.outer[k];
        }
        for (a, b) in self.histograms.iter_mut().zip(&other.histograms) {
            a.merge(b);
        }
    }
}

struct Branch<'a> {
    coefficients: &'a CoefficientMatrix,
    /// `α_H` per coordinate; samples are accumulated relative to it.
    center: Vec<DVector<f64>>,
    domain: Domain,
    histograms: Vec<Histogram>,
}

fn run_branch(
    topology: &Topology,
    c: &CorruptedSet,
    sigma: f64,
    options: &AuditOptions,
    branch: &Branch<'_>,
) -> Result<Accumulator> {
    let h = c.honest().len();
    let m = branch.coefficients.dim();
    let chunks: Vec<usize> = (0..options.trials).step_by(CHUNK).collect();
    let partials: Vec<Result<Accumulator>> = chunks
        .par_iter()
        .map(|&start| {
            let mut acc = Accumulator::new(h, m, branch.histograms.clone());
            for trial in start..(start + CHUNK).min(options.trials) {
                let mut rng = stream(options.seed, branch.domain, trial as u64);
                let view = sample_reduced_view(topology, branch.coefficients, c, sigma, &mut rng)?;
                for k in 0..m {
                    let x = DVector::from_iterator(
                        h,
                        view.values.iter().zip(branch.center[k].iter()).map(|(v, center)| v[k] - center),
                    );
                    acc.outer[k].ger(1.0, &x, &x, 1.0);
                    acc.sums[k] += &x;
                }
                for hist in &mut acc.histograms {
                    let pos = c.honest().binary_search(&hist.agent).expect("histogram agent is honest");
                    hist.add(view.values[pos][hist.coordinate]);
                }
                acc.count += 1;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Accumulator::new(h, m, branch.histograms.clone());
    for partial in partials {
        total.merge(&partial?);
    }
    Ok(total)
}

fn finalize(acc: &Accumulator, center: &[DVector<f64>]) -> BranchMoments {
    let n = acc.count as f64;
    let mut mean = Vec::new();
    let mut cov = Vec::new();
    for ((sum, outer), center) in acc.sums.iter().zip(&acc.outer).zip(center) {
        let shift_mean = sum / n;
        let scatter = outer - &shift_mean * shift_mean.transpose() * n;
        let c = (&scatter + scatter.transpose()) * (0.5 / (n - 1.0));
        mean.push(center + shift_mean);
        cov.push(c);
    }
    BranchMoments { mean, cov }
}

/// Zeroes eigenvalues under the rank cutoff relative to the spectral radius,
/// and any under the absolute `floor`. Without the floor, a covariance that is
/// zero up to rounding would look full rank.
fn truncate(cov: &SymmetricMatrix, floor: f64) -> (SymmetricMatrix, usize) {
    let mut eig = eigendecompose(cov);
    let threshold = (RANK_CUTOFF * eig.spectral_radius()).max(floor);
    let mut rank = 0;
    for mu in eig.eigenvalues.iter_mut() {
        if *mu <= threshold {
            *mu = 0.0;
        } else {
            rank += 1;
        }
    }
    let m = eig.reconstruct();
    (SymmetricMatrix::new((&m + m.transpose()) * 0.5).expect("symmetrized"), rank)
}

fn honest_block(coefficients: &CoefficientMatrix, honest: &[usize]) -> Vec<DVector<f64>> {
    (0..coefficients.dim())
        .map(|k| DVector::from_iterator(honest.len(), honest.iter().map(|&i| coefficients.matrix()[(k, i)])))
        .collect()
}

fn histogram_templates(topology: &Topology, c: &CorruptedSet, sigma: f64, center: &[DVector<f64>], branch: char, bins: usize) -> Vec<Histogram> {
    let mut out = Vec::new();
    for (pos, &i) in c.honest().iter().enumerate() {
        let honest_degree = topology.neighbors(i).map_or(0, |nb| nb.iter().filter(|&&j| !c.contains(j)).count());
        let sd = sigma * (2.0 * honest_degree as f64).sqrt();
        let half = if sd > 0.0 { 6.0 * sd } else { 0.5 };
        for (k, block) in center.iter().enumerate() {
            out.push(Histogram {
                branch,
                agent: i,
                coordinate: k,
                lo: block[pos] - half,
                hi: block[pos] + half,
                counts: vec![0; bins],
            });
        }
    }
    out
}

/// [`empirical_kl_with`] without histograms.
pub fn empirical_kl(scenario: &ScenarioPair, topology: &Topology, sigma: f64, trials: usize, seed: u64) -> Result<PrivacyReport> {
    empirical_kl_with(scenario, topology, sigma, &AuditOptions { trials, seed, histogram_bins: None })
}

/// Runs `trials` executions per branch with independent noise and compares
/// the fitted view distributions.
///
/// Both branches are fitted with one pooled covariance, the average of the
/// two sample covariances, since the true covariances coincide. The KL value
/// is then `½ Δᵀ Σ† Δ` per coordinate, and its standard error is the
/// delta-method value `sqrt(4 KL / N + 2 r / N²)`, with `r` the support rank.
pub fn empirical_kl_with(scenario: &ScenarioPair, topology: &Topology, sigma: f64, options: &AuditOptions) -> Result<PrivacyReport> {
    validate_scenario(scenario).map_err(Error::Scenario)?;
    let c = &scenario.c;
    if c.n() != topology.n() {
        return Err(Error::DimensionMismatch { expected: topology.n(), found: c.n() });
    }
    if c.corrupted().is_empty() {
        return Err(Error::domain("the adversary must corrupt at least one agent"));
    }
    if options.trials < MIN_TRIALS {
        return Err(Error::domain(format!("at least {MIN_TRIALS} trials are required, got {}", options.trials)));
    }
    if options.histogram_bins == Some(0) {
        return Err(Error::domain("histogram needs at least one bin"));
    }
    let epsilon = theoretical_epsilon(topology, c, sigma)?;
    let distance_squared = scenario.distance_squared();

    let mut flags = vec![EVIDENCE_FLAG.to_string()];
    match epsilon {
        PrivacyBound::NoGuarantee => flags.push(VERTEX_CUT_FLAG.to_string()),
        PrivacyBound::SingleHonest => flags.push(SINGLE_HONEST_FLAG.to_string()),
        PrivacyBound::Epsilon { .. } => {}
    }

    let branches: Vec<Branch<'_>> = [(&scenario.a, Domain::BranchA, 'A'), (&scenario.b, Domain::BranchB, 'B')]
        .into_iter()
        .map(|(coefficients, domain, label)| {
            let center = honest_block(coefficients, c.honest());
            let histograms = options
                .histogram_bins
                .map_or_else(Vec::new, |bins| histogram_templates(topology, c, sigma, &center, label, bins));
            Branch { coefficients, center, domain, histograms }
        })
        .collect();
    let accumulators =
        branches.iter().map(|b| run_branch(topology, c, sigma, options, b)).collect::<Result<Vec<_>>>()?;
    let moments_a = finalize(&accumulators[0], &branches[0].center);
    let moments_b = finalize(&accumulators[1], &branches[1].center);

    let mut pooled_cov = Vec::new();
    let mut kl_per_coordinate = Vec::new();
    let mut support_rank = 0;
    let mut mismatch = false;
    for k in 0..moments_a.mean.len() {
        let cov_a = SymmetricMatrix::new(moments_a.cov[k].clone())?;
        let cov_b = SymmetricMatrix::new(moments_b.cov[k].clone())?;
        let floor = RANK_CUTOFF * sigma * sigma;
        let (pooled, rank) = truncate(&SymmetricMatrix::new((cov_a.matrix() + cov_b.matrix()) * 0.5)?, floor);
        support_rank += rank;
        let ranks_agree = truncate(&cov_a, floor).1 == rank && truncate(&cov_b, floor).1 == rank;
        let kl = if ranks_agree {
            match gaussian_kl(&moments_a.mean[k], &pooled, &moments_b.mean[k], &pooled) {
                Ok(v) => Some(v),
                Err(Error::InfiniteDivergence(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        mismatch |= kl.is_none();
        kl_per_coordinate.push(kl);
        pooled_cov.push(pooled.into_matrix());
    }
    if mismatch {
        flags.push(SUPPORT_FLAG.to_string());
    }
    let kl_empirical = kl_per_coordinate.iter().copied().sum::<Option<f64>>();
    let n = options.trials as f64;
    let kl_std_error = match kl_empirical {
        Some(kl) => (4.0 * kl / n + 2.0 * support_rank as f64 / (n * n)).sqrt(),
        None => f64::NAN,
    };
    let histograms = accumulators.iter().flat_map(|a| a.histograms.iter().cloned()).collect();

    Ok(PrivacyReport {
        corrupted: c.corrupted().to_vec(),
        honest: c.honest().to_vec(),
        sigma,
        trials: options.trials,
        seed: options.seed,
        epsilon_theory: epsilon,
        distance_squared,
        kl_bound: epsilon.kl_bound(distance_squared),
        kl_empirical,
        kl_per_coordinate,
        kl_std_error,
        support_rank,
        moments_a,
        moments_b,
        pooled_cov,
        histograms,
        flags,
    })
}
