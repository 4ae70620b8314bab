//! Experiment files and the scheme x h x seed convergence grid.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    dataset_from_trajectories, derive_seed, generate_trajectories, integrate_trajectory, rk4_flow, sample_box, Dataset,
    SystemSpec, TrajectoryWindow, DEFAULT_DATA_SUBSTEPS,
};
use crate::error::{Error, Result};
use crate::imde::{ImdeAtStep, TruncatedImde, Truncation, DEFAULT_REPRODUCTION_K};
use crate::jets::{JetField, VectorField};
use crate::lmm::{catalog, LmmScheme};
use crate::model::{Mlp, Normalization};
use crate::train::{
    fill_orders, loglog_slope, metrics_to_csv, test_loss, train, write_history, MetricsRow, RegularizerConfig,
    TrainConfig,
};

fn default_substeps() -> usize {
    DEFAULT_DATA_SUBSTEPS
}

fn default_imde_k() -> Option<usize> {
    Some(DEFAULT_REPRODUCTION_K)
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_lr_start() -> f64 {
    1e-2
}

fn default_lr_end() -> f64 {
    1e-4
}

fn default_log_every() -> usize {
    100
}

/// How training and test windows are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// Independent trajectories from initial states drawn uniformly in a box.
    Box {
        bounds: Vec<[f64; 2]>,
        trajectories: usize,
        /// Data steps after each initial state.
        steps: usize,
        test_trajectories: usize,
        #[serde(default = "default_substeps")]
        substeps: usize,
    },
    /// One long trajectory for training; test windows start every `test_step`
    /// along the same solution and the error is measured at their initial states.
    SingleTrajectory {
        initial: Vec<f64>,
        t_end: f64,
        test_step: f64,
        #[serde(default = "default_substeps")]
        substeps: usize,
    },
}

impl DataSpec {
    fn substeps(&self) -> usize {
        match self {
            DataSpec::Box { substeps, .. } | DataSpec::SingleTrajectory { substeps, .. } => *substeps,
        }
    }
}

/// Points where `Error(g1, g2)` is evaluated (box data only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub bounds: Vec<[f64; 2]>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    /// Standardize inputs and outputs with statistics of the training data.
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    #[serde(default = "default_lr_start")]
    pub lr_start: f64,
    #[serde(default = "default_lr_end")]
    pub lr_end: f64,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub regularizer: Option<RegularizerConfig>,
}

/// A whole study in one file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub system: SystemSpec,
    pub schemes: Vec<String>,
    pub hs: Vec<f64>,
    pub data: DataSpec,
    #[serde(default)]
    pub eval: Option<EvalSpec>,
    pub net: NetSpec,
    pub train: TrainOptions,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Truncation order of the modified field compared against; `null` skips it.
    #[serde(default = "default_imde_k")]
    pub imde_k: Option<usize>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<ExperimentSpec> {
        serde_json::from_str(text).map_err(|e| Error::json("experiment spec", e))
    }

    pub fn from_file(path: &Path) -> Result<ExperimentSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn schemes(&self) -> Result<Vec<LmmScheme>> {
        self.schemes.iter().map(|s| catalog(s)).collect()
    }

    /// Checks everything that does not require running anything.
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::contract("experiment lists no schemes"));
        }
        self.schemes()?;
        if self.hs.is_empty() || self.hs.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::contract("experiment needs positive step sizes"));
        }
        if self.seeds.is_empty() {
            return Err(Error::contract("experiment lists no seeds"));
        }
        if self.net.hidden.contains(&0) {
            return Err(Error::contract("hidden widths must be positive"));
        }
        if self.data.substeps() == 0 {
            return Err(Error::contract("substeps must be positive"));
        }
        match &self.data {
            DataSpec::Box {
                trajectories,
                steps,
                test_trajectories,
                ..
            } => {
                if *trajectories == 0 || *test_trajectories == 0 {
                    return Err(Error::contract("box data needs training and test trajectories"));
                }
                let max_m = self.schemes()?.iter().map(LmmScheme::steps).max().unwrap_or(1);
                if *steps < max_m {
                    return Err(Error::contract(format!(
                        "trajectories of {steps} steps are too short for M = {max_m}"
                    )));
                }
            }
            DataSpec::SingleTrajectory { t_end, test_step, .. } => {
                if !(*t_end > 0.0 && *test_step > 0.0) {
                    return Err(Error::contract(
                        "single-trajectory data needs positive t_end and test_step",
                    ));
                }
            }
        }
        self.train_config(&catalog(&self.schemes[0])?, 0).validate()
    }

    /// Studies need at least three step sizes, each double the previous once sorted.
    pub fn validate_study(&self) -> Result<()> {
        self.validate()?;
        let hs = sorted_hs(&self.hs);
        if hs.len() < 3 {
            return Err(Error::contract(format!(
                "a convergence study needs at least 3 step sizes, got {}",
                hs.len()
            )));
        }
        for w in hs.windows(2) {
            if ((w[1] / w[0]) - 2.0).abs() > 1e-9 {
                return Err(Error::contract(format!(
                    "step sizes must double: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn train_config(&self, scheme: &LmmScheme, seed: u64) -> TrainConfig {
        TrainConfig {
            scheme: scheme.clone(),
            epochs: self.train.epochs,
            lr_start: self.train.lr_start,
            lr_end: self.train.lr_end,
            batch: self.train.batch,
            seed: derive_seed(seed, STREAM_BATCHES),
            log_every: self.train.log_every,
            regularizer: self.train.regularizer.clone(),
        }
    }
}

fn sorted_hs(hs: &[f64]) -> Vec<f64> {
    let mut v = hs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

// Random streams derived from a run seed.
const STREAM_TRAIN_INITIALS: u64 = 0;
const STREAM_TEST_INITIALS: u64 = 1;
const STREAM_NET: u64 = 2;
const STREAM_BATCHES: u64 = 3;
const STREAM_EVAL: u64 = 4;

/// Training and test windows plus evaluation points for one `(h, M, seed)`.
#[derive(Debug, Clone)]
pub struct CellData {
    pub train: Dataset,
    pub test: Dataset,
    pub eval_points: Vec<Vec<f64>>,
}

/// Number of data steps of length `h` that fit in `[0, t]`.
fn steps_in(t: f64, h: f64) -> usize {
    let n = t / h;
    if (n - n.round()).abs() < 1e-9 * n.max(1.0) {
        n.round() as usize
    } else {
        n.floor() as usize
    }
}

/// Generates the data of one grid cell.
pub fn cell_data(spec: &ExperimentSpec, field: &dyn VectorField, h: f64, steps: usize, seed: u64) -> Result<CellData> {
    let substeps = spec.data.substeps();
    match &spec.data {
        DataSpec::Box {
            bounds,
            trajectories,
            steps: traj_steps,
            test_trajectories,
            ..
        } => {
            let dim = field.dim();
            if bounds.len() != dim {
                return Err(Error::contract(format!(
                    "data box has {} bounds for a {dim}-dimensional system",
                    bounds.len()
                )));
            }
            let make = |count: usize, stream: u64| -> Result<Dataset> {
                let initials = sample_box(bounds, count, derive_seed(seed, stream))?;
                let (trajs, diverged) = generate_trajectories(field, &initials, *traj_steps, h, substeps)?;
                if diverged > 0 {
                    log::warn!("{diverged} of {count} trajectories diverged at h = {h}");
                }
                dataset_from_trajectories(&trajs, dim, steps, h)
            };
            let eval_points = match &spec.eval {
                Some(e) => sample_box(&e.bounds, e.points, derive_seed(seed, STREAM_EVAL))?,
                None => sample_box(bounds, 1000, derive_seed(seed, STREAM_EVAL))?,
            };
            Ok(CellData {
                train: make(*trajectories, STREAM_TRAIN_INITIALS)?,
                test: make(*test_trajectories, STREAM_TEST_INITIALS)?,
                eval_points,
            })
        }
        DataSpec::SingleTrajectory {
            initial,
            t_end,
            test_step,
            ..
        } => {
            let n = steps_in(*t_end, h);
            let (traj, err) = integrate_trajectory(field, initial, n, h, substeps);
            if let Some(e) = err {
                return Err(e);
            }
            let train = dataset_from_trajectories(&[traj], field.dim(), steps, h)?;
            let span = *t_end - steps as f64 * h;
            if span < 0.0 {
                return Err(Error::contract("t_end is shorter than one window"));
            }
            let test_n = steps_in(span, *test_step);
            let (starts, err) = integrate_trajectory(field, initial, test_n, *test_step, substeps);
            if let Some(e) = err {
                return Err(e);
            }
            let mut test = Dataset::new(field.dim(), steps, h);
            for x in &starts.states {
                let mut states = vec![x.clone()];
                for _ in 0..steps {
                    let next = rk4_flow(field, states.last().expect("non-empty"), h, substeps)?;
                    states.push(next);
                }
                test.windows.push(TrajectoryWindow { states });
            }
            test.check()?;
            Ok(CellData {
                train,
                test,
                eval_points: starts.states,
            })
        }
    }
}

/// Input/output standardization from the training windows: states for the input,
/// `(y_M - y_0) / (M h)` for the output.
pub fn normalization_for(data: &Dataset) -> Result<Normalization> {
    let inputs: Vec<Vec<f64>> = data.windows.iter().flat_map(|w| w.states.iter().cloned()).collect();
    let span = data.steps as f64 * data.h;
    let outputs: Vec<Vec<f64>> = data
        .windows
        .iter()
        .map(|w| {
            let (a, b) = (&w.states[0], &w.states[data.steps]);
            a.iter().zip(b).map(|(x, y)| (y - x) / span).collect()
        })
        .collect();
    Normalization::from_samples(&inputs, &outputs)
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scheme: String,
    #[serde(rename = "M")]
    pub steps: usize,
    pub h: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub train_loss: Option<f64>,
    pub test_loss_sqrt: Option<f64>,
    pub error_f: Option<f64>,
    pub error_imde: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

impl RunStatus {
    fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
        }
    }
}

pub const RUNS_HEADER: &str = "scheme,M,h,seed,status,train_loss,test_loss_sqrt,error_f,error_imde";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn runs_to_csv(rows: &[RunRow]) -> String {
    let mut out = format!("{RUNS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scheme,
            r.steps,
            r.h,
            r.seed,
            r.status.as_str(),
            opt(r.train_loss),
            opt(r.test_loss_sqrt),
            opt(r.error_f),
            opt(r.error_imde)
        );
    }
    out
}

pub fn runs_from_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RUNS_HEADER) {
        return Err(Error::Parse(format!("runs CSV must start with `{RUNS_HEADER}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split(',').map(str::trim).collect();
            let bad = || Error::Parse(format!("bad runs row `{l}`"));
            if c.len() != 9 {
                return Err(bad());
            }
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad())
                }
            };
            Ok(RunRow {
                scheme: c[0].to_string(),
                steps: c[1].parse().map_err(|_| bad())?,
                h: c[2].parse().map_err(|_| bad())?,
                seed: c[3].parse().map_err(|_| bad())?,
                status: match c[4] {
                    "ok" => RunStatus::Ok,
                    "diverged" => RunStatus::Diverged,
                    _ => return Err(bad()),
                },
                train_loss: num(c[5])?,
                test_loss_sqrt: num(c[6])?,
                error_f: num(c[7])?,
                error_imde: num(c[8])?,
            })
        })
        .collect()
}

/// Everything a single `(scheme, h, seed)` run produced.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub row: RunRow,
    pub net: Option<Mlp>,
    pub history: Vec<crate::train::LossRecord>,
}

/// Trains and evaluates one grid cell on pre-generated data. Training divergence
/// is reported in the row rather than as an error.
pub fn run_cell(
    spec: &ExperimentSpec,
    field: &Arc<dyn JetField>,
    scheme: &LmmScheme,
    data: &CellData,
    seed: u64,
) -> Result<CellResult> {
    let h = data.train.h;
    let dim = field.dim();
    let mut dims = vec![dim];
    dims.extend(&spec.net.hidden);
    dims.push(dim);
    let mut net = Mlp::new(&dims, derive_seed(seed, STREAM_NET))?;
    if spec.net.normalize {
        net.set_normalization(Some(normalization_for(&data.train)?))?;
    }
    let cfg = spec.train_config(scheme, seed);
    let mut row = RunRow {
        scheme: scheme.name().to_string(),
        steps: scheme.steps(),
        h,
        seed,
        status: RunStatus::Ok,
        train_loss: None,
        test_loss_sqrt: None,
        error_f: None,
        error_imde: None,
    };
    let (net, history) = match train(&cfg, net, &data.train) {
        Ok(out) => out,
        Err(Error::Divergence(msg)) => {
            log::warn!("{} h = {h} seed {seed}: {msg}", scheme.name());
            row.status = RunStatus::Diverged;
            return Ok(CellResult {
                row,
                net: None,
                history: Vec::new(),
            });
        }
        Err(e) => return Err(e),
    };
    row.train_loss = history.last().map(|r| r.loss);
    row.test_loss_sqrt = Some(test_loss(scheme, &net, &data.test)?.sqrt());
    let target: &dyn VectorField = field.as_ref();
    row.error_f = Some(crate::train::error_metric(&net, target, &data.eval_points)?);
    if let Some(k) = spec.imde_k {
        let imde = ImdeAtStep {
            imde: TruncatedImde::new(scheme, field.clone(), Truncation::Fixed(k))?,
            h,
        };
        row.error_imde = match crate::train::error_metric(&net, &imde, &data.eval_points) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("modified field unavailable for {} at h = {h}: {e}", scheme.name());
                None
            }
        };
    }
    Ok(CellResult {
        row,
        net: Some(net),
        history,
    })
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub metrics: Vec<MetricsRow>,
    pub runs: Vec<RunRow>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Seed-averaged table, rows ordered by scheme (as listed) then increasing `h`.
pub fn aggregate(schemes: &[LmmScheme], hs: &[f64], runs: &[RunRow]) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for s in schemes {
        for &h in hs {
            let cell: Vec<&RunRow> = runs
                .iter()
                .filter(|r| r.scheme == s.name() && r.h == h && r.status == RunStatus::Ok)
                .collect();
            rows.push(MetricsRow {
                scheme: s.name().to_string(),
                steps: s.steps(),
                h,
                test_loss_sqrt: mean(cell.iter().map(|r| r.test_loss_sqrt)),
                error_f: mean(cell.iter().map(|r| r.error_f)),
                error_imde: mean(cell.iter().map(|r| r.error_imde)),
                order: None,
            });
        }
    }
    fill_orders(&mut rows);
    rows
}

/// Runs the full grid. With `out`, writes `metrics.csv`, `runs.csv`, `study.json`
/// and one directory per run holding `loss.csv` and `checkpoint.json`.
pub fn run_study(spec: &ExperimentSpec, base_dir: Option<&Path>, out: Option<&Path>) -> Result<StudyOutcome> {
    spec.validate_study()?;
    let field = spec.system.build(base_dir)?;
    let schemes = spec.schemes()?;
    let hs = sorted_hs(&spec.hs);
    let mut steps: Vec<usize> = schemes.iter().map(LmmScheme::steps).collect();
    steps.sort_unstable();
    steps.dedup();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut runs = Vec::new();
    for &seed in &spec.seeds {
        for &h in &hs {
            for &m in &steps {
                let data = cell_data(spec, field.as_ref(), h, m, seed)?;
                for scheme in schemes.iter().filter(|s| s.steps() == m) {
                    log::info!("training {} at h = {h}, seed {seed}", scheme.name());
                    let res = run_cell(spec, &field, scheme, &data, seed)?;
                    if let Some(dir) = out {
                        write_cell(dir, &res)?;
                    }
                    runs.push(res.row);
                }
            }
        }
    }
    runs.sort_by(|a, b| {
        let ia = schemes.iter().position(|s| s.name() == a.scheme);
        let ib = schemes.iter().position(|s| s.name() == b.scheme);
        ia.cmp(&ib).then(a.h.total_cmp(&b.h)).then(a.seed.cmp(&b.seed))
    });
    let metrics = aggregate(&schemes, &hs, &runs);
    if let Some(dir) = out {
        write_text(&dir.join("metrics.csv"), &metrics_to_csv(&metrics))?;
        write_text(&dir.join("runs.csv"), &runs_to_csv(&runs))?;
        let meta = serde_json::json!({
            "run_id": run_id(spec)?,
            "version": env!("CARGO_PKG_VERSION"),
            "workers": 1,
            "spec": spec,
        });
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json("study metadata", e))?;
        write_text(&dir.join("study.json"), &text)?;
    }
    Ok(StudyOutcome { metrics, runs })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Subdirectory name of one run.
pub fn cell_dir(scheme: &str, h: f64, seed: u64) -> PathBuf {
    PathBuf::from(format!("{scheme}_h{h}_s{seed}"))
}

fn write_cell(dir: &Path, res: &CellResult) -> Result<()> {
    let sub = dir.join(cell_dir(&res.row.scheme, res.row.h, res.row.seed));
    std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    write_history(&sub.join("loss.csv"), &res.history)?;
    if let Some(net) = &res.net {
        net.save(&sub.join("checkpoint.json"))?;
    }
    Ok(())
}

/// Content hash of the spec, stable across runs.
pub fn run_id(spec: &ExperimentSpec) -> Result<String> {
    let text = serde_json::to_string(spec).map_err(|e| Error::json("experiment spec", e))?;
    // FNV-1a, 64 bit
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    Ok(format!("{hash:016x}"))
}

/// Thresholds checked by `study --assert`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Slope tolerance around 1 for first-order schemes.
    pub first_order_tol: f64,
    /// Slope tolerance around 2 for second-order schemes.
    pub second_order_tol: f64,
    /// Required `error_f / error_imde` at the largest `h` for first-order schemes.
    pub separation: f64,
    /// Second-order rows count only where `error_f` exceeds this many `sqrt(test loss)`.
    pub loss_margin: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            first_order_tol: 0.3,
            second_order_tol: 0.5,
            separation: 3.0,
            loss_margin: 3.0,
        }
    }
}

/// One verdict of the convergence checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub scheme: String,
    pub what: String,
    pub passed: bool,
    pub detail: String,
}

/// Convergence checks on a seed-averaged table: first-order schemes must show a
/// log-log slope near 1 and the separation from the modified field at the largest
/// step; second-order schemes a slope near 2 over the rows where the discretization
/// error dominates the residual loss. Higher orders are not checked.
pub fn check_study(rows: &[MetricsRow], th: &Thresholds) -> Vec<Check> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.scheme.as_str()) {
            names.push(&r.scheme);
        }
    }
    let mut checks = Vec::new();
    for name in names {
        let Ok(scheme) = catalog(name) else { continue };
        let mut cell: Vec<&MetricsRow> = rows.iter().filter(|r| r.scheme == name).collect();
        cell.sort_by(|a, b| a.h.total_cmp(&b.h));
        let slope_over = |rs: &[&MetricsRow]| -> Option<f64> {
            let hs: Vec<f64> = rs.iter().map(|r| r.h).collect();
            let es: Option<Vec<f64>> = rs.iter().map(|r| r.error_f).collect();
            loglog_slope(&hs, &es?).ok()
        };
        match scheme.order() {
            1 => {
                let slope = slope_over(&cell);
                checks.push(Check {
                    scheme: name.into(),
                    what: "slope".into(),
                    passed: slope.is_some_and(|s| (s - 1.0).abs() <= th.first_order_tol),
                    detail: format!("error_f slope {slope:?}, expected 1 +- {}", th.first_order_tol),
                });
                let last = cell.last();
                let (ef, ei) = (last.and_then(|r| r.error_f), last.and_then(|r| r.error_imde));
                checks.push(Check {
                    scheme: name.into(),
                    what: "separation".into(),
                    passed: matches!((ef, ei), (Some(f), Some(i)) if i < f / th.separation),
                    detail: format!(
                        "at h = {:?}: error_imde {ei:?} vs error_f {ef:?} / {}",
                        last.map(|r| r.h),
                        th.separation
                    ),
                });
            }
            2 => {
                let dominated: Vec<&MetricsRow> = cell
                    .iter()
                    .copied()
                    .filter(|r| matches!((r.error_f, r.test_loss_sqrt), (Some(e), Some(l)) if e > th.loss_margin * l))
                    .collect();
                let slope = if dominated.len() >= 2 {
                    slope_over(&dominated)
                } else {
                    None
                };
                checks.push(Check {
                    scheme: name.into(),
                    what: "slope".into(),
                    passed: slope.is_some_and(|s| (s - 2.0).abs() <= th.second_order_tol),
                    detail: format!(
                        "error_f slope {slope:?} over {} discretization-dominated rows, expected 2 +- {}",
                        dominated.len(),
                        th.second_order_tol
                    ),
                });
            }
            _ => {}
        }
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec::from_json(
            r#"{
                "system": {"kind": "damped_oscillator"},
                "schemes": ["AB1", "BDF2"],
                "hs": [0.02, 0.01, 0.04],
                "data": {"kind": "box", "bounds": [[-1, 1], [-1, 1]], "trajectories": 3,
                         "steps": 4, "test_trajectories": 2, "substeps": 20},
                "eval": {"bounds": [[-1, 1], [-1, 1]], "points": 10},
                "net": {"hidden": [4]},
                "train": {"epochs": 20, "log_every": 5},
                "seeds": [0, 1]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn spec_defaults_and_validation() {
        let spec = tiny_spec();
        assert_eq!(spec.imde_k, Some(4));
        assert_eq!(spec.train.lr_start, 1e-2);
        assert_eq!(spec.data.substeps(), 20);
        spec.validate_study().unwrap();

        let mut one_h = spec.clone();
        one_h.hs = vec![0.01];
        one_h.validate().unwrap();
        assert!(matches!(one_h.validate_study(), Err(Error::Contract(_))));

        let mut gap = spec.clone();
        gap.hs = vec![0.01, 0.02, 0.05];
        assert!(gap.validate_study().is_err());

        let mut unknown = spec.clone();
        unknown.schemes = vec!["RK4".into()];
        assert!(matches!(unknown.validate(), Err(Error::Catalog(_))));
    }

    #[test]
    fn box_cell_counts() {
        let spec = tiny_spec();
        let f = spec.system.build(None).unwrap();
        let d = cell_data(&spec, f.as_ref(), 0.01, 1, 0).unwrap();
        assert_eq!(d.train.len(), 3 * 4);
        assert_eq!(d.test.len(), 2 * 4);
        assert_eq!(d.eval_points.len(), 10);
        let d2 = cell_data(&spec, f.as_ref(), 0.01, 2, 0).unwrap();
        assert_eq!(d2.train.len(), 3 * 3);
        // Same seed, same initial states regardless of h.
        let d3 = cell_data(&spec, f.as_ref(), 0.02, 1, 0).unwrap();
        assert_eq!(d.train.windows[0].states[0], d3.train.windows[0].states[0]);
    }

    #[test]
    fn single_trajectory_cell_counts() {
        let mut spec = tiny_spec();
        spec.system = SystemSpec::Lorenz;
        spec.data = DataSpec::SingleTrajectory {
            initial: vec![-0.8, 0.7, 2.7],
            t_end: 1.0,
            test_step: 0.01,
            substeps: 20,
        };
        let f = spec.system.build(None).unwrap();
        let d = cell_data(&spec, f.as_ref(), 0.05, 1, 0).unwrap();
        assert_eq!(d.train.len(), 20);
        // starts at n * 0.01 for n = 0..=(1 - 0.05) / 0.01
        assert_eq!(d.test.len(), 96);
        assert_eq!(d.eval_points.len(), 96);
        assert_eq!(d.test.windows[5].states[0], d.eval_points[5]);
        let far = rk4_flow(f.as_ref(), &[-0.8, 0.7, 2.7], 0.05, 20).unwrap();
        assert_eq!(d.train.windows[0].states[1], far);
    }

    #[test]
    fn study_is_deterministic_and_round_trips() {
        let spec = tiny_spec();
        let dir = tempfile::tempdir().unwrap();
        let a = run_study(&spec, None, Some(dir.path())).unwrap();
        let first = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let b = run_study(&spec, None, Some(dir.path())).unwrap();
        let second = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(first, second);
        assert_eq!(a.runs, b.runs);
        assert_eq!(a.metrics.len(), 6);
        assert_eq!(a.runs.len(), 12);
        assert_eq!(crate::train::metrics_from_csv(&first).unwrap(), a.metrics);
        let runs_text = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
        assert_eq!(runs_from_csv(&runs_text).unwrap(), a.runs);
        assert!(a.metrics.iter().all(|r| r.error_f.is_some() && r.error_imde.is_some()));
        assert_eq!(a.metrics[0].order, None);
        assert!(a.metrics[1].order.is_some());
        let ck = dir.path().join(cell_dir("AB1", 0.01, 0)).join("checkpoint.json");
        Mlp::load(&ck).unwrap();
    }

    #[test]
    fn run_id_is_stable() {
        let spec = tiny_spec();
        assert_eq!(run_id(&spec).unwrap(), run_id(&spec.clone()).unwrap());
        let mut other = spec.clone();
        other.seeds = vec![5];
        assert_ne!(run_id(&spec).unwrap(), run_id(&other).unwrap());
    }

    fn row(scheme: &str, h: f64, ef: f64, ei: f64, loss: f64) -> MetricsRow {
        MetricsRow {
            scheme: scheme.into(),
            steps: catalog(scheme).unwrap().steps(),
            h,
            test_loss_sqrt: Some(loss),
            error_f: Some(ef),
            error_imde: Some(ei),
            order: None,
        }
    }

    #[test]
    fn study_checks() {
        let rows = vec![
            row("AB1", 0.01, 0.1, 0.01, 1e-3),
            row("AB1", 0.02, 0.2, 0.01, 1e-3),
            row("AB1", 0.04, 0.4, 0.01, 1e-3),
            row("AB2", 0.01, 1e-4, 1e-4, 1e-3),
            row("AB2", 0.02, 0.04, 1e-4, 1e-3),
            row("AB2", 0.04, 0.16, 1e-4, 1e-3),
            row("AB3", 0.01, 1.0, 1.0, 1.0),
        ];
        let checks = check_study(&rows, &Thresholds::default());
        assert_eq!(checks.len(), 3);
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");

        let mut bad = rows.clone();
        bad[2].error_imde = Some(0.2);
        bad[5].error_f = Some(0.05);
        let checks = check_study(&bad, &Thresholds::default());
        assert_eq!(checks.iter().filter(|c| !c.passed).count(), 2);
    }
}
