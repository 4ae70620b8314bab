//! The `lmnet` command line.
//!
//! Exit codes: 0 success, 1 bad input, 2 numerical divergence, 3 failed `--assert`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::dynamics::{rk4_flow, Dataset, SystemSpec, Trajectory, DEFAULT_DATA_SUBSTEPS};
use crate::error::{Error, Result};
use crate::imde::{residual, xi_coefficients, xi_series, TruncatedImde, Truncation};
use crate::jets::{JetField, VectorField};
use crate::lmm::{catalog, catalog_all, LmmScheme};
use crate::model::Mlp;
use crate::study::{
    cell_data, check_study, run_cell, run_id, run_study, CellData, DataSpec, ExperimentSpec, Thresholds,
};
use crate::train::{loglog_slope, metrics_to_csv, write_history, MetricsRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_ASSERT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "lmnet",
    version,
    about = "Learn ODE vector fields with linear multistep residuals"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Comma-separated reals, taken as one argument (an alias keeps clap from
/// treating it as a repeated option).
type List = Vec<f64>;

fn parse_list(s: &str) -> std::result::Result<List, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the scheme catalog with consistency, stability and order.
    Schemes {
        #[arg(long)]
        json: bool,
    },
    /// Print the modified-equation coefficients xi_0..xi_K as CSV.
    Xi {
        #[arg(long)]
        scheme: String,
        #[arg(long = "K", default_value_t = 6)]
        k: usize,
    },
    /// Generate training and test datasets for every step size of a spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_list)]
        h: Option<List>,
        /// Window length; defaults to every M used by the spec's schemes.
        #[arg(long = "M")]
        m: Option<usize>,
    },
    /// Train one network and write its checkpoint, loss history and metrics.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training windows; generated from the spec when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out windows; defaults to the training windows.
        #[arg(long)]
        test_data: Option<PathBuf>,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, value_parser = parse_list)]
        h: Option<List>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also compare against the modified field truncated at this order.
        #[arg(long = "K", alias = "imde-K")]
        k: Option<usize>,
    },
    /// Run the scheme x h x seed grid and write the convergence table.
    Study {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, value_parser = parse_list)]
        h: Option<List>,
        #[arg(long = "K")]
        k: Option<usize>,
        /// Exit with status 3 unless the convergence checks pass.
        #[arg(long)]
        assert: bool,
    },
    /// Tabulate the defining-relation residual of the truncated modified field.
    Residual {
        #[arg(long)]
        scheme: String,
        /// Spec file supplying the system; `--system` picks a built-in instead.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "damped_oscillator")]
        system: String,
        #[arg(long = "K", default_value_t = 0)]
        k: usize,
        #[arg(long, value_parser = parse_list, default_value = "0.02,0.01,0.005")]
        h: List,
        #[arg(long, value_parser = parse_list, default_value = "2,0")]
        x: List,
        #[arg(long, default_value_t = 400)]
        substeps: usize,
    },
    /// Simulate a trained network with RK4 and write the trajectory CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_list)]
        x0: List,
        #[arg(long = "T")]
        t: f64,
        /// Output states after the initial one.
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 10)]
        substeps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses arguments, runs the command, prints errors and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) | Error::Singularity(_) => EXIT_DIVERGENCE,
        _ => EXIT_INPUT,
    }
}

fn emit(out: &mut dyn std::io::Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_spec(path: &Path) -> Result<(ExperimentSpec, Option<PathBuf>)> {
    let spec = ExperimentSpec::from_file(path)?;
    Ok((spec, path.parent().map(Path::to_path_buf)))
}

fn apply_overrides(spec: &mut ExperimentSpec, seed: Option<u64>, scheme: Option<&str>, h: Option<&[f64]>) {
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    if let Some(s) = scheme {
        spec.schemes = s.split(',').map(|v| v.trim().to_string()).collect();
    }
    if let Some(h) = h {
        spec.hs = h.to_vec();
    }
}

/// Runs one command, writing human-readable output to `out`.
pub fn run(command: Command, out: &mut dyn std::io::Write) -> Result<i32> {
    match command {
        Command::Schemes { json } => cmd_schemes(json, out),
        Command::Xi { scheme, k } => cmd_xi(&scheme, k, out),
        Command::GenData {
            spec,
            out: dir,
            seed,
            h,
            m,
        } => {
            let (mut s, base) = load_spec(&spec)?;
            apply_overrides(&mut s, seed, None, h.as_deref());
            let files = cmd_gen_data(&s, base.as_deref(), &dir, m)?;
            for f in files {
                emit(out, &format!("{}\n", f.display()))?;
            }
            Ok(EXIT_OK)
        }
        Command::Train {
            spec,
            out: dir,
            data,
            test_data,
            scheme,
            h,
            seed,
            k,
        } => {
            let (mut s, base) = load_spec(&spec)?;
            apply_overrides(&mut s, seed, scheme.as_deref(), h.as_deref());
            s.imde_k = k;
            let row = cmd_train(&s, base.as_deref(), &dir, data.as_deref(), test_data.as_deref())?;
            emit(out, &metrics_to_csv(&[row]))?;
            Ok(EXIT_OK)
        }
        Command::Study {
            spec,
            out: dir,
            seed,
            scheme,
            h,
            k,
            assert,
        } => {
            let (mut s, base) = load_spec(&spec)?;
            apply_overrides(&mut s, seed, scheme.as_deref(), h.as_deref());
            if k.is_some() {
                s.imde_k = k;
            }
            let outcome = run_study(&s, base.as_deref(), Some(&dir))?;
            emit(out, &metrics_to_csv(&outcome.metrics))?;
            if assert {
                let checks = check_study(&outcome.metrics, &Thresholds::default());
                let mut failed = false;
                for c in &checks {
                    failed |= !c.passed;
                    let verdict = if c.passed { "PASS" } else { "FAIL" };
                    emit(out, &format!("{verdict} {} {}: {}\n", c.scheme, c.what, c.detail))?;
                }
                if failed {
                    return Ok(EXIT_ASSERT);
                }
            }
            Ok(EXIT_OK)
        }
        Command::Residual {
            scheme,
            spec,
            system,
            k,
            h,
            x,
            substeps,
        } => {
            let field = match spec {
                Some(p) => {
                    let (s, base) = load_spec(&p)?;
                    s.system.build(base.as_deref())?
                }
                None => builtin_system(&system)?.build(None)?,
            };
            let table = cmd_residual(&catalog(&scheme)?, field, k, &h, &x, substeps)?;
            emit(out, &table)?;
            Ok(EXIT_OK)
        }
        Command::Predict {
            checkpoint,
            x0,
            t,
            steps,
            substeps,
            out: path,
        } => {
            let net = Mlp::load(&checkpoint)?;
            let traj = cmd_predict(&net, &x0, t, steps, substeps)?;
            match path {
                Some(p) => traj.write_csv(&p)?,
                None => emit(out, &traj.to_csv())?,
            }
            Ok(EXIT_OK)
        }
    }
}

fn builtin_system(name: &str) -> Result<SystemSpec> {
    match name {
        "damped_oscillator" => Ok(SystemSpec::DampedOscillator),
        "lorenz" => Ok(SystemSpec::Lorenz),
        other => Err(Error::contract(format!(
            "unknown built-in system `{other}` (use damped_oscillator, lorenz, or --spec)"
        ))),
    }
}

pub fn cmd_schemes(json: bool, out: &mut dyn std::io::Write) -> Result<i32> {
    let all = catalog_all();
    if json {
        let text = serde_json::to_string_pretty(&all).map_err(|e| Error::json("schemes", e))?;
        emit(out, &format!("{text}\n"))?;
        return Ok(EXIT_OK);
    }
    let mut text = String::from("scheme  M  order  consistent  weakly_stable  explicit\n");
    for s in &all {
        let r = s.validate();
        let _ = writeln!(
            text,
            "{:<6} {:>2} {:>6}  {:<10}  {:<13}  {}",
            s.name(),
            s.steps(),
            r.order,
            r.consistent,
            r.weakly_stable,
            s.is_explicit()
        );
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

pub fn cmd_xi(scheme: &str, k: usize, out: &mut dyn std::io::Write) -> Result<i32> {
    let s = catalog(scheme)?;
    let xi = xi_coefficients(&s, k)?;
    let series = if k <= 12 { Some(xi_series(&s, k)?) } else { None };
    let mut text = String::from("scheme,k,xi,xi_series\n");
    for (i, v) in xi.values().iter().enumerate() {
        let col = series.as_ref().map(|x| format!("{}", x[i])).unwrap_or_default();
        let _ = writeln!(text, "{},{i},{v},{col}", s.name());
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn window_steps(spec: &ExperimentSpec, m: Option<usize>) -> Result<Vec<usize>> {
    if let Some(m) = m {
        return Ok(vec![m]);
    }
    let mut steps: Vec<usize> = spec.schemes()?.iter().map(LmmScheme::steps).collect();
    steps.sort_unstable();
    steps.dedup();
    Ok(steps)
}

/// Writes `train_h{h}_M{m}_s{seed}.json` and `test_...json` per cell; single
/// trajectory specs also get `trajectory_h{h}.csv`.
pub fn cmd_gen_data(spec: &ExperimentSpec, base: Option<&Path>, dir: &Path, m: Option<usize>) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let field = spec.system.build(base)?;
    create_dir(dir)?;
    let mut files = Vec::new();
    for &seed in &spec.seeds {
        for &h in &spec.hs {
            for steps in window_steps(spec, m)? {
                let data = cell_data(spec, field.as_ref(), h, steps, seed)?;
                let train = dir.join(format!("train_h{h}_M{steps}_s{seed}.json"));
                let test = dir.join(format!("test_h{h}_M{steps}_s{seed}.json"));
                data.train.write_json(&train)?;
                data.test.write_json(&test)?;
                files.push(train);
                files.push(test);
            }
            if let DataSpec::SingleTrajectory {
                initial,
                t_end,
                substeps,
                ..
            } = &spec.data
            {
                let n = (t_end / h).round() as usize;
                let (traj, err) = crate::dynamics::integrate_trajectory(field.as_ref(), initial, n, h, *substeps);
                if let Some(e) = err {
                    return Err(e);
                }
                let path = dir.join(format!("trajectory_h{h}.csv"));
                if !files.contains(&path) {
                    traj.write_csv(&path)?;
                    files.push(path);
                }
            }
        }
    }
    Ok(files)
}

/// Trains the first scheme at the first `h` and seed of the spec (after overrides).
pub fn cmd_train(
    spec: &ExperimentSpec,
    base: Option<&Path>,
    dir: &Path,
    data: Option<&Path>,
    test_data: Option<&Path>,
) -> Result<MetricsRow> {
    spec.validate()?;
    let field: Arc<dyn JetField> = spec.system.build(base)?;
    let scheme = catalog(&spec.schemes[0])?;
    let seed = spec.seeds[0];
    let cell = match data {
        Some(path) => {
            let train = Dataset::read_json(path)?;
            let test = match test_data {
                Some(p) => Dataset::read_json(p)?,
                None => train.clone(),
            };
            if test.h != train.h || test.steps != train.steps {
                return Err(Error::contract("test data must share h and M with the training data"));
            }
            CellData {
                eval_points: test.initial_states(),
                train,
                test,
            }
        }
        None => cell_data(spec, field.as_ref(), spec.hs[0], scheme.steps(), seed)?,
    };
    let res = run_cell(spec, &field, &scheme, &cell, seed)?;
    let (Some(net), crate::study::RunStatus::Ok) = (&res.net, res.row.status) else {
        return Err(Error::Divergence(format!(
            "training {} at h = {} diverged",
            scheme.name(),
            cell.train.h
        )));
    };
    create_dir(dir)?;
    net.save(&dir.join("checkpoint.json"))?;
    write_history(&dir.join("loss.csv"), &res.history)?;
    let row = MetricsRow {
        scheme: res.row.scheme.clone(),
        steps: res.row.steps,
        h: res.row.h,
        test_loss_sqrt: res.row.test_loss_sqrt,
        error_f: res.row.error_f,
        error_imde: res.row.error_imde,
        order: None,
    };
    write_file(&dir.join("metrics.csv"), &metrics_to_csv(std::slice::from_ref(&row)))?;
    let meta = serde_json::json!({
        "run_id": run_id(spec)?,
        "version": env!("CARGO_PKG_VERSION"),
        "workers": 1,
        "seed": seed,
        "config": spec.train_config(&scheme, seed),
        "data": data.map(|p| p.display().to_string()),
        "test_data": test_data.map(|p| p.display().to_string()),
        "windows": cell.train.len(),
        "final_loss": res.row.train_loss,
    });
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json("run metadata", e))?;
    write_file(&dir.join("run.json"), &text)?;
    Ok(row)
}

/// CSV `h,residual_l1,slope`; the slope column compares each row with the previous.
pub fn cmd_residual(
    scheme: &LmmScheme,
    field: Arc<dyn JetField>,
    k: usize,
    hs: &[f64],
    x: &[f64],
    substeps: usize,
) -> Result<String> {
    let imde = TruncatedImde::new(scheme, field, Truncation::Fixed(k))?;
    let mut text = String::from("h,residual_l1,slope\n");
    let mut prev: Option<(f64, f64)> = None;
    for &h in hs {
        let r: f64 = residual(&imde, x, h, substeps)?.iter().map(|v| v.abs()).sum();
        let slope = match prev {
            Some((ph, pr)) if r > 0.0 && pr > 0.0 => loglog_slope(&[ph, h], &[pr, r]).ok(),
            _ => None,
        };
        let _ = writeln!(text, "{h},{r},{}", slope.map(|s| format!("{s}")).unwrap_or_default());
        prev = Some((h, r));
    }
    Ok(text)
}

/// Solution of `dy/dt = f_theta(y)` sampled at `steps` uniform times up to `t`.
pub fn cmd_predict(net: &Mlp, x0: &[f64], t: f64, steps: usize, substeps: usize) -> Result<Trajectory> {
    if steps == 0 || !(t > 0.0 && t.is_finite()) {
        return Err(Error::contract("prediction needs T > 0 and at least one step"));
    }
    crate::jets::check_dim(VectorField::dim(net), x0.len())?;
    let h = t / steps as f64;
    let mut states = vec![x0.to_vec()];
    for _ in 0..steps {
        let next = rk4_flow(net, states.last().expect("non-empty"), h, substeps)?;
        states.push(next);
    }
    Ok(Trajectory { h, states })
}

/// Default substeps for data generation, re-exported for help text and docs.
pub const DATA_SUBSTEPS: usize = DEFAULT_DATA_SUBSTEPS;
