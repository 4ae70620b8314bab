//! Benchmark vector fields, reference RK4 integration, and trajectory datasets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{JetField, RationalField, Scalar, VectorField};

/// Minimum RK4 substeps per data step when generating datasets.
pub const MIN_DATA_SUBSTEPS: usize = 20;
/// Default RK4 substeps per data step.
pub const DEFAULT_DATA_SUBSTEPS: usize = 100;

/// Cubic damped oscillator on `(p, q)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DampedOscillator;

impl RationalField for DampedOscillator {
    fn dim(&self) -> usize {
        2
    }

    fn apply<S: Scalar>(&self, y: &[S]) -> Result<Vec<S>> {
        let p3 = y[0].powi(3);
        let q3 = y[1].powi(3);
        Ok(vec![p3.clone() * -0.1 + q3.clone() * 2.0, p3 * -2.0 - q3 * 0.1])
    }
}

/// The normalized Lorenz system on `(p, q, r)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lorenz;

impl RationalField for Lorenz {
    fn dim(&self) -> usize {
        3
    }

    fn apply<S: Scalar>(&self, y: &[S]) -> Result<Vec<S>> {
        let (p, q, r) = (y[0].clone(), y[1].clone(), y[2].clone());
        Ok(vec![
            (q.clone() - p.clone()) * 10.0,
            p.clone() * (r.clone() * -10.0 + 28.0) - q.clone(),
            p * q * 10.0 - r * (8.0 / 3.0),
        ])
    }
}

/// Rate constants of the seven-species glycolytic oscillator. These are supplied by
/// the user; `configs/glycolytic.example.json` holds a commonly used set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlycolyticParams {
    #[serde(rename = "J0")]
    pub j0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    /// Outflow rate of S7 (`k` in the model).
    pub k: f64,
    pub kappa: f64,
    /// Hill exponent of the S6 inhibition; must be a positive integer.
    pub q: u32,
    /// Inhibition constant (`K1`).
    #[serde(rename = "K1")]
    pub k1_inhibition: f64,
    pub psi: f64,
    /// Total NAD+/NADH pool (`N`).
    #[serde(rename = "N")]
    pub n_total: f64,
    /// Total ADP/ATP pool (`A`).
    #[serde(rename = "A")]
    pub a_total: f64,
    /// Free-form provenance note; ignored by the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl GlycolyticParams {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

#[derive(Debug, Clone)]
pub struct Glycolytic {
    params: GlycolyticParams,
}

impl Glycolytic {
    pub fn new(params: GlycolyticParams) -> Result<Self> {
        let p = &params;
        let rates = [
            p.j0, p.k1, p.k2, p.k3, p.k4, p.k5, p.k6, p.k, p.kappa, p.psi, p.n_total, p.a_total,
        ];
        if rates.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::contract("glycolytic parameters must be finite and non-negative"));
        }
        if !(p.k1_inhibition > 0.0 && p.k1_inhibition.is_finite()) {
            return Err(Error::contract("glycolytic K1 must be positive"));
        }
        if p.q == 0 {
            return Err(Error::contract("glycolytic exponent q must be a positive integer"));
        }
        Ok(Glycolytic { params })
    }

    pub fn params(&self) -> &GlycolyticParams {
        &self.params
    }
}

impl RationalField for Glycolytic {
    fn dim(&self) -> usize {
        7
    }

    fn apply<S: Scalar>(&self, y: &[S]) -> Result<Vec<S>> {
        let p = &self.params;
        let s = |i: usize| y[i - 1].clone();
        let inhibition = (s(6) * (1.0 / p.k1_inhibition)).powi(p.q) + 1.0;
        let uptake = (s(1) * s(6) * p.k1).try_div(inhibition)?;
        let v2 = s(2) * (-s(5) + p.n_total) * p.k2;
        let v3 = s(3) * (-s(6) + p.a_total) * p.k3;
        let v4 = s(4) * s(5) * p.k4;
        let v6 = s(2) * s(5) * p.k6;
        let exchange = (s(4) - s(7)) * p.kappa;
        Ok(vec![
            -uptake.clone() + p.j0,
            uptake.clone() * 2.0 - v2.clone() - v6.clone(),
            v2.clone() - v3.clone(),
            v3.clone() - v4.clone() - exchange.clone(),
            v2 - v4 - v6,
            uptake * -2.0 + v3 * 2.0 - s(6) * p.k5,
            exchange * p.psi - s(7) * p.k,
        ])
    }
}

/// `f(y) = A y`.
#[derive(Debug, Clone)]
pub struct LinearField {
    matrix: Vec<Vec<f64>>,
}

impl LinearField {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let d = matrix.len();
        if d == 0 || matrix.iter().any(|r| r.len() != d) {
            return Err(Error::contract("linear field needs a square, non-empty matrix"));
        }
        Ok(LinearField { matrix })
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }
}

impl RationalField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.len()
    }

    fn apply<S: Scalar>(&self, y: &[S]) -> Result<Vec<S>> {
        Ok(self
            .matrix
            .iter()
            .map(|row| {
                row.iter()
                    .zip(y)
                    .skip(1)
                    .fold(y[0].clone() * row[0], |acc, (a, yj)| acc + yj.clone() * *a)
            })
            .collect())
    }
}

/// `f(y) = c`.
#[derive(Debug, Clone)]
pub struct ConstantField {
    value: Vec<f64>,
}

impl ConstantField {
    pub fn new(value: Vec<f64>) -> Result<Self> {
        if value.is_empty() {
            return Err(Error::contract("constant field needs a non-empty value"));
        }
        Ok(ConstantField { value })
    }
}

impl RationalField for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn apply<S: Scalar>(&self, y: &[S]) -> Result<Vec<S>> {
        Ok(self.value.iter().map(|c| y[0].lift(*c)).collect())
    }
}

/// Serializable choice of system, as it appears in experiment files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    DampedOscillator,
    Lorenz,
    Glycolytic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<GlycolyticParams>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params_file: Option<PathBuf>,
    },
    Linear {
        matrix: Vec<Vec<f64>>,
    },
    Constant {
        value: Vec<f64>,
    },
}

impl SystemSpec {
    /// Relative `params_file` paths resolve against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<Arc<dyn JetField>> {
        Ok(match self {
            SystemSpec::DampedOscillator => Arc::new(DampedOscillator),
            SystemSpec::Lorenz => Arc::new(Lorenz),
            SystemSpec::Glycolytic { params, params_file } => {
                let params = match (params, params_file) {
                    (Some(p), _) => p.clone(),
                    (None, Some(file)) => {
                        let path = match base_dir {
                            Some(dir) if file.is_relative() => dir.join(file),
                            _ => file.clone(),
                        };
                        GlycolyticParams::from_file(&path)?
                    }
                    (None, None) => {
                        return Err(Error::contract("glycolytic system requires `params` or `params_file`"))
                    }
                };
                Arc::new(Glycolytic::new(params)?)
            }
            SystemSpec::Linear { matrix } => Arc::new(LinearField::new(matrix.clone())?),
            SystemSpec::Constant { value } => Arc::new(ConstantField::new(value.clone())?),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            SystemSpec::DampedOscillator => "damped_oscillator",
            SystemSpec::Lorenz => "lorenz",
            SystemSpec::Glycolytic { .. } => "glycolytic",
            SystemSpec::Linear { .. } => "linear",
            SystemSpec::Constant { .. } => "constant",
        }
    }
}

/// Classical RK4 over `[0, t]` with `substeps` uniform steps.
pub fn rk4_flow(f: &dyn VectorField, x: &[f64], t: f64, substeps: usize) -> Result<Vec<f64>> {
    if substeps == 0 {
        return Err(Error::contract("rk4 needs at least one substep"));
    }
    if !t.is_finite() {
        return Err(Error::contract("rk4 duration must be finite"));
    }
    crate::jets::check_dim(f.dim(), x.len())?;
    let dt = t / substeps as f64;
    let mut y = x.to_vec();
    let mut tmp = vec![0.0; y.len()];
    for _ in 0..substeps {
        let k1 = f.eval(&y)?;
        axpy(&y, 0.5 * dt, &k1, &mut tmp);
        let k2 = f.eval(&tmp)?;
        axpy(&y, 0.5 * dt, &k2, &mut tmp);
        let k3 = f.eval(&tmp)?;
        axpy(&y, dt, &k3, &mut tmp);
        let k4 = f.eval(&tmp)?;
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite state during RK4 integration from {x:?}"
            )));
        }
    }
    Ok(y)
}

fn axpy(y: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, yi), ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + a * ki;
    }
}

/// States sampled every `h` along one solution, starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// CSV with header `t,x0,...,x{D-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.dim() {
            let _ = write!(out, ",x{i}");
        }
        out.push('\n');
        for (n, s) in self.states.iter().enumerate() {
            let _ = write!(out, "{}", n as f64 * self.h);
            for v in s {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV form; the step is recovered from the first two time stamps.
    pub fn from_csv(text: &str) -> Result<Trajectory> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(Error::Parse(format!("bad trajectory header `{header}`")));
        }
        for (i, c) in cols[1..].iter().enumerate() {
            if *c != format!("x{i}") {
                return Err(Error::Parse(format!("bad trajectory header `{header}`")));
            }
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let vals = parse_row(line, lineno + 2)?;
            if vals.len() != dim + 1 {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, got {}",
                    lineno + 2,
                    dim + 1,
                    vals.len()
                )));
            }
            if let Some(&prev) = times.last() {
                if vals[0] <= prev {
                    return Err(Error::Parse(format!("line {}: time is not increasing", lineno + 2)));
                }
            }
            times.push(vals[0]);
            states.push(vals[1..].to_vec());
        }
        let h = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };
        Ok(Trajectory { h, states })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Trajectory> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Trajectory::from_csv(&text)
    }
}

pub(crate) fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {lineno}: `{}`: {e}", v.trim())))
        })
        .collect()
}

/// One training sample `(x_n, phi_h(x_n), ..., phi_{Mh}(x_n))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrajectoryWindow {
    pub states: Vec<Vec<f64>>,
}

/// Homogeneous collection of windows sharing `dim`, `M` and `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRecord")]
pub struct Dataset {
    pub dim: usize,
    #[serde(rename = "M")]
    pub steps: usize,
    pub h: f64,
    pub windows: Vec<TrajectoryWindow>,
}

#[derive(Deserialize)]
struct DatasetRecord {
    dim: usize,
    #[serde(rename = "M")]
    steps: usize,
    h: f64,
    windows: Vec<TrajectoryWindow>,
}

impl TryFrom<DatasetRecord> for Dataset {
    type Error = Error;

    fn try_from(r: DatasetRecord) -> Result<Dataset> {
        let ds = Dataset {
            dim: r.dim,
            steps: r.steps,
            h: r.h,
            windows: r.windows,
        };
        ds.check()?;
        Ok(ds)
    }
}

impl Dataset {
    pub fn new(dim: usize, steps: usize, h: f64) -> Dataset {
        Dataset {
            dim,
            steps,
            h,
            windows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Verifies the homogeneity invariants.
    pub fn check(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::contract(format!("dataset step h = {} must be positive", self.h)));
        }
        if self.steps == 0 {
            return Err(Error::contract("dataset M must be at least 1"));
        }
        for (i, w) in self.windows.iter().enumerate() {
            if w.states.len() != self.steps + 1 {
                return Err(Error::contract(format!(
                    "window {i} has {} states, expected {}",
                    w.states.len(),
                    self.steps + 1
                )));
            }
            if w.states.iter().any(|s| s.len() != self.dim) {
                return Err(Error::contract(format!(
                    "window {i} has a state of the wrong dimension"
                )));
            }
            if w.states.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!("window {i} has a non-finite state")));
            }
        }
        Ok(())
    }

    /// Concatenates datasets with identical `dim`, `M`, `h`.
    pub fn extend(&mut self, other: Dataset) -> Result<()> {
        if other.dim != self.dim || other.steps != self.steps || other.h != self.h {
            return Err(Error::contract("cannot merge datasets with different dim, M or h"));
        }
        self.windows.extend(other.windows);
        Ok(())
    }

    /// First state of every window.
    pub fn initial_states(&self) -> Vec<Vec<f64>> {
        self.windows.iter().map(|w| w.states[0].clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("dataset", e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// All maximal sliding windows of length `M + 1` over consecutive states.
pub fn window_trajectory(states: &[Vec<f64>], steps: usize, h: f64) -> Result<Dataset> {
    if steps == 0 {
        return Err(Error::contract("M must be at least 1"));
    }
    if states.len() < steps + 1 {
        return Err(Error::contract(format!(
            "{} states are too few for windows of M = {steps}",
            states.len()
        )));
    }
    let dim = states[0].len();
    let mut ds = Dataset::new(dim, steps, h);
    ds.windows = states
        .windows(steps + 1)
        .map(|w| TrajectoryWindow { states: w.to_vec() })
        .collect();
    ds.check()?;
    Ok(ds)
}

/// Integrates `steps` data steps from `x`. On divergence the states computed so far
/// are returned together with the error.
pub fn integrate_trajectory(
    f: &dyn VectorField,
    x: &[f64],
    steps: usize,
    h: f64,
    substeps_per_h: usize,
) -> (Trajectory, Option<Error>) {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x.to_vec());
    for _ in 0..steps {
        match rk4_flow(f, states.last().expect("non-empty"), h, substeps_per_h) {
            Ok(next) => states.push(next),
            Err(e) => return (Trajectory { h, states }, Some(e)),
        }
    }
    (Trajectory { h, states }, None)
}

/// One trajectory per initial state, `steps` subsequent states each.
///
/// Trajectories that diverge are truncated at the last finite state; the number of
/// affected trajectories is returned alongside.
pub fn generate_trajectories(
    f: &dyn VectorField,
    initials: &[Vec<f64>],
    steps: usize,
    h: f64,
    substeps_per_h: usize,
) -> Result<(Vec<Trajectory>, usize)> {
    if substeps_per_h < MIN_DATA_SUBSTEPS {
        return Err(Error::contract(format!(
            "data generation needs at least {MIN_DATA_SUBSTEPS} RK4 substeps per h, got {substeps_per_h}"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract(format!("step h = {h} must be positive")));
    }
    let mut diverged = 0;
    let mut out = Vec::with_capacity(initials.len());
    for x in initials {
        crate::jets::check_dim(f.dim(), x.len())?;
        let (traj, err) = integrate_trajectory(f, x, steps, h, substeps_per_h);
        if let Some(e) = err {
            diverged += 1;
            log::warn!(
                "trajectory from {x:?} truncated after {} states: {e}",
                traj.states.len()
            );
        }
        out.push(traj);
    }
    Ok((out, diverged))
}

/// Windows every trajectory; trajectories too short for one window contribute nothing.
pub fn dataset_from_trajectories(trajs: &[Trajectory], dim: usize, steps: usize, h: f64) -> Result<Dataset> {
    let mut ds = Dataset::new(dim, steps, h);
    let mut dropped = 0;
    for t in trajs {
        if t.states.len() < steps + 1 {
            dropped += 1;
            continue;
        }
        ds.extend(window_trajectory(&t.states, steps, h)?)?;
    }
    if dropped > 0 {
        log::warn!("{dropped} trajectories were too short to yield a window");
    }
    Ok(ds)
}

/// Integrates every initial state and emits all length-`M + 1` windows.
pub fn generate_dataset(
    f: &dyn VectorField,
    initials: &[Vec<f64>],
    steps_per_trajectory: usize,
    window_steps: usize,
    h: f64,
    substeps_per_h: usize,
) -> Result<Dataset> {
    let (trajs, diverged) = generate_trajectories(f, initials, steps_per_trajectory, h, substeps_per_h)?;
    if diverged > 0 {
        log::warn!("{diverged} of {} trajectories diverged", initials.len());
    }
    dataset_from_trajectories(&trajs, f.dim(), window_steps, h)
}

/// Independent stream seed for item `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` points drawn uniformly from the box; point `i` depends only on `(seed, i)`.
pub fn sample_box(bounds: &[[f64; 2]], count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if bounds.is_empty()
        || bounds
            .iter()
            .any(|[lo, hi]| !lo.is_finite() || !hi.is_finite() || lo > hi)
    {
        return Err(Error::contract("sampling box needs finite bounds with lo <= hi"));
    }
    Ok((0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            bounds
                .iter()
                .map(|&[lo, hi]| if lo == hi { lo } else { rng.random_range(lo..hi) })
                .collect()
        })
        .collect())
}
