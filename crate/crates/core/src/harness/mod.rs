//! Experiment orchestration behind the `fsp` command line: load a config, run
//! the protocol or an audit, and write reports plus a manifest.
//!
//! Every output is a pure function of the config bytes, the overrides and the
//! seed, so reruns are byte-identical. JSON is pretty-printed with sorted keys.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::adversary::{
    corollary_epsilon, corollary_epsilon_sampled, empirical_kl_with, theoretical_epsilon, AuditOptions, CorollaryTable,
    CorruptedSet, PrivacyReport, ScenarioPair, ENUMERATION_CAP, MIN_TRIALS,
};
use crate::cost::{CoefficientMatrix, Cost, PolynomialCost, QuadraticCost};
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::obfuscation::{compute_masks, draw_noise, effective_costs, mask_all_degrees, run_phase_one};
use crate::optimizer::{dgd_run, ExecutionTrace};
use crate::rng::{stream, Domain};
use crate::spectral::{algebraic_connectivity, laplacian};

mod config;

pub use config::{ExperimentConfig, Masking};

/// Command-line overrides applied on top of the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Output directory writer that remembers each file's digest.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn pretty_json(value: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("JSON values serialize");
    bytes.push(b'\n');
    bytes
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        self.write(name, &pretty_json(value))
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    /// Writes `manifest.json` listing every file written so far.
    fn finish(mut self, manifest: RunManifest) -> Result<RunManifest> {
        let mut manifest = manifest;
        manifest.outputs = std::mem::take(&mut self.files);
        fs::write(self.dir.join("manifest.json"), pretty_json(&manifest.to_json()))?;
        Ok(manifest)
    }
}

/// Inputs and outputs of one run. No timestamps, so identical inputs give an
/// identical manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: Option<String>,
    pub seed: u64,
    /// The config had no seed and none was given on the command line.
    pub seed_generated: bool,
    pub trials: Option<usize>,
    pub version: String,
    /// `(file name, sha256)` in write order.
    pub outputs: Vec<(String, String)>,
}

impl RunManifest {
    fn new(command: &str, config_bytes: Option<&[u8]>, seed: u64, seed_generated: bool) -> Self {
        Self {
            command: command.to_string(),
            config_sha256: config_bytes.map(sha256_hex),
            seed,
            seed_generated,
            trials: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "seed_generated": self.seed_generated,
            "trials": self.trials,
            "version": self.version,
            "outputs": self.outputs.iter().map(|(f, h)| json!({"file": f, "sha256": h})).collect::<Vec<_>>(),
        })
    }
}

/// Loaded config plus the raw bytes it came from.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub bytes: Vec<u8>,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let (config, bytes) = ExperimentConfig::load(path)?;
        Ok(Self { config, bytes })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Self { config: ExperimentConfig::from_json(text)?, bytes: text.as_bytes().to_vec() })
    }

    fn seed(&self, options: &RunOptions) -> (u64, bool) {
        match options.seed.or(self.config.seed) {
            Some(s) => (s, false),
            None => (rand::rng().random(), true),
        }
    }

    fn out_dir(&self, options: &RunOptions) -> PathBuf {
        options.out.clone().or_else(|| self.config.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn vector_json(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn trace_summary(trace: &ExecutionTrace) -> Value {
    json!({
        "rounds": trace.rounds(),
        "stopped_early": trace.stopped_early(),
        "final_error": trace.final_error(),
        "final_mean": vector_json(&trace.final_mean()),
        "final_disagreement": trace.disagreements().last(),
    })
}

/// Runs Phase I and Phase II on the configured costs, plus an unmasked
/// baseline, and writes traces and `summary.json`.
pub fn cmd_optimize(loaded: &LoadedConfig, options: &RunOptions) -> Result<(Value, RunManifest)> {
    let config = &loaded.config;
    let (seed, generated) = loaded.seed(options);
    let mut rng = stream(seed, Domain::Optimize, 0);
    let mut out = Outputs::create(&loaded.out_dir(options))?;

    let (masked_costs, sum_residual) = match config.masking {
        Masking::Affine => {
            let (eff, record) = run_phase_one(&config.topology, &config.costs, config.sigma, &mut rng)?;
            out.write_json("phase_one.json", &record.trace_json(&config.topology))?;
            let all: Vec<usize> = (0..config.topology.n()).collect();
            let residual = (record.original.column_sum(&all) - record.effective.column_sum(&all)).amax();
            (eff.into_costs(), vec![residual])
        }
        Masking::AllDegrees => {
            let masked = mask_all_degrees(&config.costs, &config.topology, config.sigma, &mut rng)?;
            let before: Vec<PolynomialCost> = config.costs.iter().filter_map(Cost::as_polynomial).collect();
            let (s0, s1) = (PolynomialCost::sum(&before), PolynomialCost::sum(&masked));
            let residual = (0..s0.len().max(s1.len()))
                .map(|d| (s0.get(d).unwrap_or(&0.0) - s1.get(d).unwrap_or(&0.0)).abs())
                .collect();
            (masked.into_iter().map(Cost::Polynomial).collect(), residual)
        }
    };
    let masked = dgd_run(&masked_costs, &config.topology, &config.dgd)?;
    let baseline = dgd_run(&config.costs, &config.topology, &config.dgd)?;
    out.write_with("masked_trace.csv", |b| masked.write_estimates_csv(b))?;
    out.write_with("masked_rounds.csv", |b| masked.write_rounds_csv(b))?;
    out.write_with("baseline_trace.csv", |b| baseline.write_estimates_csv(b))?;
    out.write_with("baseline_rounds.csv", |b| baseline.write_rounds_csv(b))?;
    let summary = json!({
        "oracle": masked.oracle().map(vector_json),
        "masked": trace_summary(&masked),
        "baseline": trace_summary(&baseline),
        "masking": match config.masking { Masking::Affine => "affine", Masking::AllDegrees => "all_degrees" },
        "coefficient_sum_residual": sum_residual,
        "seed": seed,
    });
    out.write_json("summary.json", &summary)?;
    let manifest = out.finish(RunManifest::new("optimize", Some(&loaded.bytes), seed, generated))?;
    Ok((summary, manifest))
}

fn moments_csv(report: &PrivacyReport, buf: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(["branch", "coordinate", "agent", "mean", "variance"]).map_err(io)?;
    for (label, moments) in [("A", &report.moments_a), ("B", &report.moments_b)] {
        for (k, (mean, cov)) in moments.mean.iter().zip(&moments.cov).enumerate() {
            for (pos, agent) in report.honest.iter().enumerate() {
                w.write_record([
                    label.to_string(),
                    (k + 1).to_string(),
                    (agent + 1).to_string(),
                    mean[pos].to_string(),
                    cov[(pos, pos)].to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn histogram_csv(report: &PrivacyReport, buf: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(["branch", "agent", "coordinate", "bin_lo", "bin_hi", "count"]).map_err(io)?;
    for h in &report.histograms {
        let width = (h.hi - h.lo) / h.counts.len() as f64;
        for (b, count) in h.counts.iter().enumerate() {
            w.write_record([
                h.branch.to_string(),
                (h.agent + 1).to_string(),
                (h.coordinate + 1).to_string(),
                (h.lo + width * b as f64).to_string(),
                (h.lo + width * (b + 1) as f64).to_string(),
                count.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Monte Carlo privacy audit of the configured scenario pair.
pub fn cmd_privacy_audit(loaded: &LoadedConfig, options: &RunOptions) -> Result<(PrivacyReport, RunManifest)> {
    let config = &loaded.config;
    let (seed, generated) = loaded.seed(options);
    let trials = options.trials.unwrap_or(config.trials);
    let scenario = config.scenario()?;
    let audit = AuditOptions { trials, seed, histogram_bins: config.histogram_bins };
    let report = empirical_kl_with(&scenario, &config.topology, config.sigma, &audit)?;
    let mut out = Outputs::create(&loaded.out_dir(options))?;
    out.write_json("privacy_report.json", &report.to_json())?;
    out.write_with("moments.csv", |b| moments_csv(&report, b))?;
    if !report.histograms.is_empty() {
        out.write_with("histogram.csv", |b| histogram_csv(&report, b))?;
    }
    let mut manifest = RunManifest::new("privacy-audit", Some(&loaded.bytes), seed, generated);
    manifest.trials = Some(trials);
    let manifest = out.finish(manifest)?;
    Ok((report, manifest))
}

pub const CUT_VERDICT: &str = "C is a vertex cut: no privacy guarantee";

/// Coalitions drawn per size in sampling mode.
const SAMPLED_COALITIONS: usize = 1000;

fn corollary_json(table: &CorollaryTable) -> Value {
    json!({
        "t": table.t,
        "worst_case_epsilon": table.bound,
        "exhaustive": table.exhaustive,
        "rows": table.rows,
    })
}

/// Connectivity, spectrum, worst-case table and the verdict for the
/// configured coalition.
pub fn graph_report(topology: &Topology, c: &CorruptedSet, t: usize, sigma: f64, seed: u64) -> Result<Value> {
    let n = topology.n();
    let mut flags = Vec::new();
    let (table, kappa) = if n <= ENUMERATION_CAP {
        let table = corollary_epsilon(topology, t, sigma)?;
        let kappa = table.vertex_connectivity;
        (table, kappa)
    } else {
        flags.push(format!(
            "partial: n = {n} exceeds the enumeration cap of {ENUMERATION_CAP}; the worst case is a lower bound over sampled coalitions"
        ));
        let mut rng = stream(seed, Domain::Auxiliary, 0);
        (corollary_epsilon_sampled(topology, t, sigma, SAMPLED_COALITIONS, &mut rng)?, None)
    };
    let mu2 = if n >= 2 { Some(algebraic_connectivity(&laplacian(topology))?) } else { None };
    let bound = theoretical_epsilon(topology, c, sigma)?;
    let verdict = match bound.epsilon() {
        None => CUT_VERDICT.to_string(),
        Some(e) => format!("C is not a vertex cut: epsilon = {e}"),
    };
    Ok(json!({
        "n": n,
        "edges": topology.edges().iter().map(|&(i, j)| [i + 1, j + 1]).collect::<Vec<_>>(),
        "connected": topology.is_connected(),
        "vertex_connectivity": kappa,
        "mu2": mu2,
        "sigma": sigma,
        "corollary": corollary_json(&table),
        "corrupted": c.corrupted().iter().map(|v| v + 1).collect::<Vec<_>>(),
        "epsilon": bound,
        "mu2_honest": bound.mu2(),
        "verdict": verdict,
        "flags": flags,
    }))
}

pub fn cmd_graph_report(loaded: &LoadedConfig, options: &RunOptions) -> Result<(Value, RunManifest)> {
    let config = &loaded.config;
    let (seed, generated) = loaded.seed(options);
    let report = graph_report(&config.topology, &config.corrupted, config.max_corrupted, config.sigma, seed)?;
    let mut out = Outputs::create(&loaded.out_dir(options))?;
    out.write_json("graph_report.json", &report)?;
    let manifest = out.finish(RunManifest::new("graph-report", Some(&loaded.bytes), seed, generated))?;
    Ok((report, manifest))
}

/// Deliberate defects for checking that the self-test can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs one agent's mask after it is computed.
    CorruptMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Monte Carlo trials per branch for the bound check.
    pub trials: usize,
    pub fault: Option<Fault>,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self { seed: 0, trials: MIN_TRIALS, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "seed": self.seed,
            "passed": self.passed(),
            "checks": self.checks.iter().map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail})).collect::<Vec<_>>(),
        })
    }
}

fn random_quadratics<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<Cost>> {
    (0..n)
        .map(|_| {
            let b = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let q = &b * b.transpose();
            let alpha = DVector::from_fn(m, |_, _| rng.random_range(-5.0..5.0));
            Ok(Cost::Quadratic(QuadraticCost::new(q, alpha, rng.random_range(-1.0..1.0))?))
        })
        .collect()
}

fn check_zero_sum(seed: u64, fault: Option<Fault>) -> Result<Check> {
    let mut rng = stream(seed, Domain::Selftest, 1);
    let mut worst = 0.0f64;
    let mut failures = 0;
    let executions = 200;
    for _ in 0..executions {
        let n = rng.random_range(2..=8);
        let topology = Topology::random(n, 0.5, &mut rng);
        let sigma = rng.random_range(0.1..10.0);
        let noise = draw_noise(&topology, sigma, 2, &mut rng)?;
        let mut masks = compute_masks(&topology, &noise)?;
        if fault == Some(Fault::CorruptMask) {
            masks.mask_mut(0)[0] += 1e-3;
        }
        let ratio = masks.total().amax() / (n as f64 * sigma);
        worst = worst.max(ratio);
        if ratio > 1e-9 {
            failures += 1;
        }
    }
    Ok(Check {
        name: "zero_sum",
        passed: failures == 0,
        detail: format!("{failures} of {executions} executions failed; worst |sum u|/(n sigma) = {worst:e}"),
    })
}

fn check_mask_covariance(seed: u64) -> Result<Check> {
    let mut rng = stream(seed, Domain::Selftest, 2);
    let samples = 50_000;
    let sigma = 1.5;
    let graphs = [Topology::complete(3), Topology::random_connected(6, 0.5, &mut rng)];
    let mut worst = 0.0f64;
    for g in &graphs {
        let n = g.n();
        let mut second = DMatrix::<f64>::zeros(n, n);
        let mut sum = DVector::<f64>::zeros(n);
        for _ in 0..samples {
            let u = compute_masks(g, &draw_noise(g, sigma, 1, &mut rng)?)?.coordinate(0);
            second.ger(1.0, &u, &u, 1.0);
            sum += &u;
        }
        let mean = &sum / samples as f64;
        let cov = (second - &mean * mean.transpose() * samples as f64) / (samples as f64 - 1.0);
        let target = laplacian(g).into_matrix() * (2.0 * sigma * sigma);
        worst = worst.max((cov - &target).norm() / target.norm());
    }
    Ok(Check {
        name: "mask_covariance",
        passed: worst < 0.05,
        detail: format!("worst relative Frobenius error {worst:.4} against 2 sigma^2 L over {samples} samples"),
    })
}

fn check_sum_preservation(seed: u64, fault: Option<Fault>) -> Result<Check> {
    let mut rng = stream(seed, Domain::Selftest, 3);
    let mut worst = 0.0f64;
    let executions = 100;
    for _ in 0..executions {
        let n = rng.random_range(2..=8);
        let topology = Topology::random(n, 0.5, &mut rng);
        let costs = random_quadratics(n, 2, &mut rng)?;
        let sigma = rng.random_range(0.1..10.0);
        let noise = draw_noise(&topology, sigma, 2, &mut rng)?;
        let mut masks = compute_masks(&topology, &noise)?;
        if fault == Some(Fault::CorruptMask) {
            masks.mask_mut(0)[0] += 1e-3;
        }
        let eff = effective_costs(&costs, &masks)?;
        for _ in 0..20 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
            let before: f64 = costs.iter().map(|c| c.evaluate(&x)).sum::<Result<f64>>()?;
            let after: f64 = eff.costs().iter().map(|c| c.evaluate(&x)).sum::<Result<f64>>()?;
            worst = worst.max((before - after).abs());
        }
    }
    Ok(Check {
        name: "sum_preservation",
        passed: worst <= 1e-7,
        detail: format!("worst |sum h~(x) - sum h(x)| = {worst:e} over {executions} executions"),
    })
}

/// A random admissible pair on a random connected graph whose coalition is
/// not a vertex cut.
pub fn random_admissible_scenario<R: Rng + ?Sized>(max_n: usize, rng: &mut R) -> Result<(Topology, ScenarioPair)> {
    loop {
        let n = rng.random_range(3..=max_n);
        let topology = Topology::random_connected(n, 0.6, rng);
        let size = rng.random_range(1..=n - 2);
        let mut ids: Vec<usize> = (0..n).collect();
        for k in 0..size {
            let j = rng.random_range(k..n);
            ids.swap(k, j);
        }
        let c = CorruptedSet::new(n, ids[..size].iter().copied())?;
        if topology.is_vertex_cut(c.corrupted())? {
            continue;
        }
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut b = a.clone();
        let honest = c.honest();
        // Shift mass between honest agents; integers keep the sums exact.
        for _ in 0..2 {
            let (i, j) = (honest[rng.random_range(0..honest.len())], honest[rng.random_range(0..honest.len())]);
            let d = rng.random_range(-2..=2) as f64;
            b[i] += d;
            b[j] -= d;
        }
        let scenario =
            ScenarioPair { a: CoefficientMatrix::from_scalars(&a), b: CoefficientMatrix::from_scalars(&b), c };
        if crate::adversary::validate_scenario(&scenario).is_ok() {
            return Ok((topology, scenario));
        }
    }
}

fn check_bound_compliance(seed: u64, trials: usize) -> Result<Check> {
    let mut rng = stream(seed, Domain::Selftest, 4);
    let scenarios = 3;
    let mut details = Vec::new();
    let mut passed = true;
    for k in 0..scenarios {
        let (topology, scenario) = random_admissible_scenario(6, &mut rng)?;
        let sigma = rng.random_range(0.5..2.0);
        let options = AuditOptions { trials, seed: seed.wrapping_add(k), histogram_bins: None };
        let report = empirical_kl_with(&scenario, &topology, sigma, &options)?;
        let ok = report.within_bound(3.0) == Some(true);
        passed &= ok;
        details.push(format!(
            "kl {:.5} vs bound {:.5} (se {:.5})",
            report.kl_empirical.unwrap_or(f64::NAN),
            report.kl_bound.unwrap_or(f64::NAN),
            report.kl_std_error
        ));
    }
    Ok(Check { name: "bound_compliance", passed, detail: details.join("; ") })
}

/// Runs the invariant checks. Check failures are reported, not returned as
/// errors.
pub fn selftest(options: &SelftestOptions) -> Result<SelftestReport> {
    if options.trials < MIN_TRIALS {
        return Err(Error::domain(format!("self-test needs at least {MIN_TRIALS} trials")));
    }
    let checks = vec![
        check_zero_sum(options.seed, options.fault)?,
        check_mask_covariance(options.seed)?,
        check_sum_preservation(options.seed, options.fault)?,
        check_bound_compliance(options.seed, options.trials)?,
    ];
    Ok(SelftestReport { seed: options.seed, checks })
}

/// [`selftest`], writing `selftest.json` and a manifest when `out` is given.
pub fn cmd_selftest(options: &SelftestOptions, out: Option<&Path>) -> Result<SelftestReport> {
    let report = selftest(options)?;
    if let Some(dir) = out {
        let mut outputs = Outputs::create(dir)?;
        outputs.write_json("selftest.json", &report.to_json())?;
        let mut manifest = RunManifest::new("selftest", None, options.seed, false);
        manifest.trials = Some(options.trials);
        outputs.finish(manifest)?;
    }
    Ok(report)
}
