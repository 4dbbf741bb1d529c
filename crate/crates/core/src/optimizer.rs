//! Phase II: synchronous projected distributed gradient descent.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{aggregate_minimizer, common_dim, Cost, FeasibleBox};
use crate::error::{Error, Result};
use crate::graph::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `η_0 / √(k+1)`
    #[default]
    InverseSqrt,
    /// `η_0 / (k+1)`
    InverseLinear,
    Constant,
}

impl StepSchedule {
    pub fn step(self, step0: f64, k: usize) -> f64 {
        match self {
            StepSchedule::InverseSqrt => step0 / ((k + 1) as f64).sqrt(),
            StepSchedule::InverseLinear => step0 / (k + 1) as f64,
            StepSchedule::Constant => step0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Metropolis,
}

/// Order of the local gradient step and the neighbor average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// `x_i ← P(Σ_j w_ij (x_j − η ∇h_j(x_j)))`: each agent takes its gradient
    /// step, then averages the neighbors' stepped estimates.
    #[default]
    AdaptThenCombine,
    /// `x_i ← P(Σ_j w_ij x_j − η ∇h_i(x_i))`.
    CombineThenAdapt,
}

/// Starting estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    /// Every agent starts at the box center.
    #[default]
    Center,
    Zeros,
    /// One m-vector per agent.
    Explicit(Vec<DVector<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InitJson {
    Named(String),
    Points(Vec<Vec<f64>>),
}

impl Serialize for Init {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Init::Center => InitJson::Named("center".into()),
            Init::Zeros => InitJson::Named("zeros".into()),
            Init::Explicit(points) => InitJson::Points(points.iter().map(|p| p.iter().copied().collect()).collect()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Init {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match InitJson::deserialize(d)? {
            InitJson::Named(name) => match name.as_str() {
                "center" => Ok(Init::Center),
                "zeros" => Ok(Init::Zeros),
                other => Err(serde::de::Error::custom(format!(
                    "unknown init `{other}`, expected \"center\", \"zeros\" or a list of points"
                ))),
            },
            InitJson::Points(points) => Ok(Init::Explicit(points.into_iter().map(DVector::from_vec).collect())),
        }
    }
}

fn default_max_rounds() -> usize {
    5000
}

fn default_step0() -> f64 {
    1.0
}

fn default_tolerance() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgdConfig {
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_step0")]
    pub step0: f64,
    #[serde(default)]
    pub step_schedule: StepSchedule,
    #[serde(default)]
    pub weight_scheme: WeightScheme,
    #[serde(default)]
    pub update: UpdateOrder,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(rename = "box")]
    pub feasible: FeasibleBox,
    #[serde(default)]
    pub init: Init,
}

impl DgdConfig {
    pub fn new(feasible: FeasibleBox) -> Self {
        Self {
            max_rounds: default_max_rounds(),
            step0: default_step0(),
            step_schedule: StepSchedule::default(),
            weight_scheme: WeightScheme::default(),
            update: UpdateOrder::default(),
            tolerance: default_tolerance(),
            feasible,
            init: Init::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::domain("max_rounds must be positive"));
        }
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return Err(Error::domain(format!("step0 must be positive, got {}", self.step0)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::domain(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        Ok(())
    }

    fn initial_points(&self, n: usize) -> Result<Vec<DVector<f64>>> {
        let m = self.feasible.dim();
        match &self.init {
            Init::Center => Ok(vec![self.feasible.center(); n]),
            Init::Zeros => Ok(vec![self.feasible.project(&DVector::zeros(m)); n]),
            Init::Explicit(points) => {
                if points.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, found: points.len() });
                }
                points
                    .iter()
                    .map(|p| {
                        if p.len() != m {
                            return Err(Error::DimensionMismatch { expected: m, found: p.len() });
                        }
                        Ok(self.feasible.project(p))
                    })
                    .collect()
            }
        }
    }
}

/// Metropolis weights `w_ij = 1/(1 + max(deg_i, deg_j))` on edges, the
/// remainder on the diagonal.
pub fn consensus_weights(topology: &Topology) -> Result<DMatrix<f64>> {
    if !topology.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = topology.n();
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in topology.edges() {
        let v = 1.0 / (1 + topology.degree(i).max(topology.degree(j))) as f64;
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = topology.neighbors(i)?.iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    Ok(w)
}

/// Full record of one DGD run. Round 0 is the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    /// `estimates[k]` is m×n with column `i` holding `x_i(k)`.
    estimates: Vec<DMatrix<f64>>,
    disagreement: Vec<f64>,
    error_to_oracle: Option<Vec<f64>>,
    oracle: Option<DVector<f64>>,
    stopped_early: bool,
}

impl ExecutionTrace {
    /// Number of completed update rounds.
    pub fn rounds(&self) -> usize {
        self.estimates.len() - 1
    }

    pub fn estimates(&self, round: usize) -> Result<&DMatrix<f64>> {
        self.estimates.get(round).ok_or_else(|| out_of_range(round, self.rounds()))
    }

    pub fn final_estimates(&self) -> &DMatrix<f64> {
        self.estimates.last().expect("trace has round 0")
    }

    /// Average of the agents' estimates at `round`.
    pub fn mean_estimate(&self, round: usize) -> Result<DVector<f64>> {
        let x = self.estimates(round)?;
        Ok(x.column_mean())
    }

    pub fn final_mean(&self) -> DVector<f64> {
        self.final_estimates().column_mean()
    }

    pub fn oracle(&self) -> Option<&DVector<f64>> {
        self.oracle.as_ref()
    }

    /// `max_i ‖x_i(k) − x*‖` per round, when the oracle minimizer is known.
    pub fn error_to_oracle(&self) -> Option<&[f64]> {
        self.error_to_oracle.as_deref()
    }

    pub fn final_error(&self) -> Option<f64> {
        self.error_to_oracle.as_ref().and_then(|e| e.last().copied())
    }

    pub fn disagreements(&self) -> &[f64] {
        &self.disagreement
    }

    pub fn stopped_early(&self) -> bool {
        self.stopped_early
    }

    /// Long-format trace: `round,agent,coordinate,value` with 1-based ids.
    pub fn write_estimates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "agent", "coordinate", "value"]).map_err(csv_error)?;
        for (k, x) in self.estimates.iter().enumerate() {
            for i in 0..x.ncols() {
                for c in 0..x.nrows() {
                    w.write_record([k.to_string(), (i + 1).to_string(), (c + 1).to_string(), x[(c, i)].to_string()])
                        .map_err(csv_error)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `round,disagreement,error_to_oracle`; the last column is empty when no
    /// oracle is available.
    pub fn write_rounds_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "disagreement", "error_to_oracle"]).map_err(csv_error)?;
        for (k, d) in self.disagreement.iter().enumerate() {
            let e = self.error_to_oracle.as_ref().map_or(String::new(), |e| e[k].to_string());
            w.write_record([k.to_string(), d.to_string(), e]).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn out_of_range(round: usize, last: usize) -> Error {
    Error::domain(format!("round {round} not recorded (trace has rounds 0..={last})"))
}

fn max_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let n = x.ncols();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            best = best.max((x.column(i) - x.column(j)).norm());
        }
    }
    best
}

fn max_distance_to(x: &DMatrix<f64>, target: &DVector<f64>) -> f64 {
    x.column_iter().map(|c| (c - target).norm()).fold(0.0, f64::max)
}

/// Max pairwise disagreement `max_{i,j} ‖x_i(k) − x_j(k)‖` at `round`.
pub fn disagreement(trace: &ExecutionTrace, round: usize) -> Result<f64> {
    trace.disagreement.get(round).copied().ok_or_else(|| out_of_range(round, trace.rounds()))
}

/// Rounds of consecutive small steps required before stopping early.
const PATIENCE: usize = 10;

/// Runs projected DGD on `costs` and records every round.
///
/// The oracle minimizer of `Σ h_i` over the box is computed when it exists and
/// is unique; masked costs share it with the originals.
pub fn dgd_run(costs: &[Cost], topology: &Topology, config: &DgdConfig) -> Result<ExecutionTrace> {
    config.validate()?;
    let n = topology.n();
    if costs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: costs.len() });
    }
    let m = common_dim(costs)?;
    if config.feasible.dim() != m {
        return Err(Error::DimensionMismatch { expected: m, found: config.feasible.dim() });
    }
    let w = match config.weight_scheme {
        WeightScheme::Metropolis => consensus_weights(topology)?,
    };
    let oracle = match aggregate_minimizer(costs, &config.feasible) {
        Ok(x) => Some(x),
        Err(Error::NonUniqueMinimizer) => None,
        Err(e) => return Err(e),
    };

    let mut x = DMatrix::from_columns(&config.initial_points(n)?);
    let mut estimates = vec![x.clone()];
    let mut disagreement = vec![max_pairwise_distance(&x)];
    let mut errors = oracle.as_ref().map(|o| vec![max_distance_to(&x, o)]);
    let mut quiet = 0;
    let mut stopped_early = false;

    for k in 0..config.max_rounds {
        let eta = config.step_schedule.step(config.step0, k);
        let mut grads = DMatrix::zeros(m, n);
        for (i, cost) in costs.iter().enumerate() {
            grads.set_column(i, &cost.gradient(&x.column(i).into_owned())?);
        }
        let mixed = match config.update {
            UpdateOrder::AdaptThenCombine => (&x - &grads * eta) * &w,
            UpdateOrder::CombineThenAdapt => &x * &w - &grads * eta,
        };
        // Checked before projection, which would clamp infinities back into the box.
        if mixed.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { round: k + 1 });
        }
        let mut next = DMatrix::zeros(m, n);
        for i in 0..n {
            next.set_column(i, &config.feasible.project(&mixed.column(i).into_owned()));
        }
        let step = (&next - &x).column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        x = next;
        disagreement.push(max_pairwise_distance(&x));
        if let (Some(e), Some(o)) = (errors.as_mut(), oracle.as_ref()) {
            e.push(max_distance_to(&x, o));
        }
        estimates.push(x.clone());
        quiet = if step < config.tolerance * eta { quiet + 1 } else { 0 };
        if quiet >= PATIENCE {
            stopped_early = true;
            break;
        }
    }
    Ok(ExecutionTrace { estimates, disagreement, error_to_oracle: errors, oracle, stopped_early })
}
