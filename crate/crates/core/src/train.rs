//! Multistep residual loss, the derivative-norm regularizer, Adam training and
//! the error metrics used to read off convergence orders.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::Dataset;
use crate::error::{Error, Result};
use crate::jets::VectorField;
use crate::lmm::LmmScheme;
use crate::model::{BatchWorkspace, Mlp, MlpGradient, MAX_DERIVATIVE_ORDER};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn default_scale() -> f64 {
    1e-3
}

/// Analyticity penalty `sum_{i<=I} r1^i/i! max_j ||f^(i)(z_j)|| + scale * max|theta|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub r1: f64,
    /// Highest derivative order `I`, at most 2.
    pub order: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub grid: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scheme: LmmScheme,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Windows per optimizer step; `None` is full batch.
    pub batch: Option<usize>,
    pub seed: u64,
    pub log_every: usize,
    pub regularizer: Option<RegularizerConfig>,
}

impl TrainConfig {
    pub fn new(scheme: LmmScheme, epochs: usize) -> TrainConfig {
        TrainConfig {
            scheme,
            epochs,
            lr_start: 1e-2,
            lr_end: 1e-4,
            batch: None,
            seed: 0,
            log_every: 100,
            regularizer: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.require_admissible()?;
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be at least 1"));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::contract(format!(
                "learning rates need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if self.batch == Some(0) {
            return Err(Error::contract("batch size must be positive"));
        }
        if let Some(r) = &self.regularizer {
            if r.order > MAX_DERIVATIVE_ORDER {
                return Err(Error::UnsupportedOrder(r.order));
            }
            if !(r.r1 >= 0.0 && r.scale >= 0.0) {
                return Err(Error::contract("regularizer radius and scale must be non-negative"));
            }
        }
        Ok(())
    }

    /// Geometric interpolation from `lr_start` at epoch 0 towards `lr_end`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let frac = epoch as f64 / self.epochs as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

/// A dataset lowered for one scheme: unique states, the `(point, beta)` terms of
/// every window and the data part `sum alpha_m y_m / h` of the residual.
#[derive(Debug, Clone)]
pub struct LossProblem {
    dim: usize,
    points: Array2<f64>,
    /// Per window: range into `terms`.
    offsets: Vec<usize>,
    terms: Vec<(usize, f64)>,
    targets: Array2<f64>,
}

impl LossProblem {
    pub fn new(scheme: &LmmScheme, data: &Dataset) -> Result<LossProblem> {
        if data.steps != scheme.steps() {
            return Err(Error::contract(format!(
                "dataset has M = {} but scheme {} has M = {}",
                data.steps,
                scheme.name(),
                scheme.steps()
            )));
        }
        if !scheme.is_normalized() {
            return Err(Error::contract(format!("scheme {} is not normalized", scheme.name())));
        }
        let dim = data.dim;
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut points: Vec<f64> = Vec::new();
        let mut offsets = Vec::with_capacity(data.len() + 1);
        let mut terms = Vec::new();
        let mut targets = Array2::zeros((data.len(), dim));
        offsets.push(0);
        for (n, w) in data.windows.iter().enumerate() {
            for (m, state) in w.states.iter().enumerate() {
                let a = scheme.alphas()[m];
                for (t, s) in targets.row_mut(n).iter_mut().zip(state) {
                    *t += a * s / data.h;
                }
                let b = scheme.betas()[m];
                if b == 0.0 {
                    continue;
                }
                let key: Vec<u64> = state.iter().map(|v| v.to_bits()).collect();
                let next = index.len();
                let idx = *index.entry(key).or_insert_with(|| {
                    points.extend_from_slice(state);
                    next
                });
                terms.push((idx, b));
            }
            offsets.push(terms.len());
        }
        let points = Array2::from_shape_vec((points.len() / dim.max(1), dim), points)
            .map_err(|e| Error::contract(format!("loss problem layout: {e}")))?;
        Ok(LossProblem {
            dim,
            points,
            offsets,
            terms,
            targets,
        })
    }

    pub fn windows(&self) -> usize {
        self.targets.nrows()
    }

    pub fn unique_points(&self) -> usize {
        self.points.nrows()
    }

    /// Restriction to a subset of windows.
    pub fn subset(&self, windows: &[usize]) -> LossProblem {
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut points = Vec::new();
        let mut offsets = vec![0];
        let mut terms = Vec::new();
        let mut targets = Array2::zeros((windows.len(), self.dim));
        for (row, &n) in windows.iter().enumerate() {
            targets.row_mut(row).assign(&self.targets.row(n));
            for &(idx, b) in &self.terms[self.offsets[n]..self.offsets[n + 1]] {
                let next = remap.len();
                let new = *remap.entry(idx).or_insert_with(|| {
                    points.extend(self.points.row(idx).iter().copied());
                    next
                });
                terms.push((new, b));
            }
            offsets.push(terms.len());
        }
        LossProblem {
            dim: self.dim,
            points: Array2::from_shape_vec((points.len() / self.dim.max(1), self.dim), points).expect("subset layout"),
            offsets,
            terms,
            targets,
        }
    }

    fn check_net(&self, net: &Mlp) -> Result<()> {
        if net.input_dim() != self.dim || net.output_dim() != self.dim {
            return Err(Error::contract(format!(
                "network maps R^{} -> R^{} but the data lives in R^{}",
                net.input_dim(),
                net.output_dim(),
                self.dim
            )));
        }
        Ok(())
    }

    fn residuals(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut r = self.targets.clone();
        for n in 0..self.windows() {
            for &(idx, b) in &self.terms[self.offsets[n]..self.offsets[n + 1]] {
                for d in 0..self.dim {
                    r[[n, d]] -= b * values[[idx, d]];
                }
            }
        }
        r
    }

    pub fn loss(&self, net: &Mlp) -> Result<f64> {
        self.check_net(net)?;
        if self.windows() == 0 {
            return Err(Error::contract("loss over an empty dataset"));
        }
        let (values, _) = net.forward_batch(self.points.view());
        let r = self.residuals(&values);
        Ok(r.iter().map(|v| v * v).sum::<f64>() / self.windows() as f64)
    }

    pub fn loss_and_grad(&self, net: &Mlp) -> Result<(f64, MlpGradient)> {
        let mut grad = MlpGradient::zeros_like(net);
        let loss = self.loss_and_grad_into(net, &mut BatchWorkspace::default(), &mut grad)?;
        Ok((loss, grad))
    }

    /// [`LossProblem::loss_and_grad`] with reused buffers; overwrites `grad`.
    pub fn loss_and_grad_into(&self, net: &Mlp, ws: &mut BatchWorkspace, grad: &mut MlpGradient) -> Result<f64> {
        self.check_net(net)?;
        if self.windows() == 0 {
            return Err(Error::contract("loss over an empty dataset"));
        }
        let n_inv = 1.0 / self.windows() as f64;
        net.forward_batch_into(self.points.view(), ws);
        let values = ws.output();
        let r = self.residuals(values);
        let loss = r.iter().map(|v| v * v).sum::<f64>() * n_inv;
        let mut upstream = Array2::zeros(values.raw_dim());
        for n in 0..self.windows() {
            for &(idx, b) in &self.terms[self.offsets[n]..self.offsets[n + 1]] {
                for d in 0..self.dim {
                    upstream[[idx, d]] -= 2.0 * b * r[[n, d]] * n_inv;
                }
            }
        }
        net.backward_batch_into(ws, upstream.view(), grad);
        Ok(loss)
    }
}

/// `(1/N) sum_n || sum_m alpha_m y_m / h - sum_m beta_m f_theta(y_m) ||^2`.
pub fn lmm_loss(scheme: &LmmScheme, net: &Mlp, data: &Dataset) -> Result<f64> {
    LossProblem::new(scheme, data)?.loss(net)
}

/// The training loss evaluated on held-out windows.
pub fn test_loss(scheme: &LmmScheme, net: &Mlp, data: &Dataset) -> Result<f64> {
    lmm_loss(scheme, net, data)
}

fn factorial(i: usize) -> f64 {
    (1..=i).map(|k| k as f64).product()
}

fn penalty_weight(samples: usize, dim: usize) -> f64 {
    (samples as f64).powf(-1.0 / dim as f64 - 0.5)
}

/// Penalty term `N^{-1/D-1/2} R(theta)` and optionally its parameter gradient.
fn penalty(reg: &RegularizerConfig, net: &Mlp, samples: usize, with_grad: bool) -> Result<(f64, Option<MlpGradient>)> {
    if reg.order > MAX_DERIVATIVE_ORDER {
        return Err(Error::UnsupportedOrder(reg.order));
    }
    let weight = penalty_weight(samples.max(1), net.input_dim());
    let mut value = 0.0;
    let mut grad = with_grad.then(|| MlpGradient::zeros_like(net));
    for i in 0..=reg.order {
        let coef = reg.r1.powi(i as i32) / factorial(i);
        let mut best: Option<(f64, usize)> = None;
        for (j, z) in reg.grid.iter().enumerate() {
            let v = net.derivative_norms(z, i)?[i];
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, j));
            }
        }
        if let Some((v, j)) = best {
            value += coef * v;
            if let Some(g) = grad.as_mut() {
                let (_, dg) = net.derivative_norm_grad(&reg.grid[j], i)?;
                g.scale_add(weight * coef, &dg);
            }
        }
    }
    let (max_abs, at) = net.max_abs_param();
    value += reg.scale * max_abs;
    if let Some(g) = grad.as_mut() {
        let sign = net_param(net, at).signum();
        let mut idx = 0;
        for l in &mut g.layers {
            for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                if idx == at {
                    *v += weight * reg.scale * sign;
                }
                idx += 1;
            }
        }
    }
    Ok((weight * value, grad))
}

fn net_param(net: &Mlp, at: usize) -> f64 {
    net.layers()
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
        .nth(at)
        .copied()
        .unwrap_or(0.0)
}

/// `lmm_loss + N^{-1/D-1/2} R(theta)`; `samples` is the `N` of the weight.
pub fn regularized_loss(cfg: &TrainConfig, net: &Mlp, data: &Dataset, samples: usize) -> Result<f64> {
    let base = lmm_loss(&cfg.scheme, net, data)?;
    match &cfg.regularizer {
        Some(reg) => Ok(base + penalty(reg, net, samples, false)?.0),
        None => Ok(base),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Adam over the (optionally regularized) loss.
///
/// The history holds the loss before the update at every `log_every`-th epoch,
/// plus a final record at `epoch = epochs` with the loss of the returned network.
pub fn train(cfg: &TrainConfig, net: Mlp, data: &Dataset) -> Result<(Mlp, Vec<LossRecord>)> {
    cfg.validate()?;
    let problem = LossProblem::new(&cfg.scheme, data)?;
    if problem.windows() == 0 {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let mut net = net;
    let n_params = net.param_count();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..problem.windows()).collect();
    let mut history = Vec::new();
    let log_every = cfg.log_every.max(1);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let mut ws = BatchWorkspace::default();
    let mut grad = MlpGradient::zeros_like(&net);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss = match cfg.batch {
            Some(b) if b < problem.windows() => {
                order.shuffle(&mut rng);
                problem
                    .subset(&order[..b])
                    .loss_and_grad_into(&net, &mut ws, &mut grad)?
            }
            _ => problem.loss_and_grad_into(&net, &mut ws, &mut grad)?,
        };
        if let Some(reg) = &cfg.regularizer {
            let (p, g) = penalty(reg, &net, data.len(), true)?;
            loss += p;
            grad.scale_add(1.0, &g.expect("gradient requested"));
        }
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "loss became {loss} at epoch {epoch} (scheme {}, h = {})",
                cfg.scheme.name(),
                data.h
            )));
        }
        if epoch % log_every == 0 {
            history.push(LossRecord { epoch, loss, lr });
        }
        b1t *= ADAM_BETA1;
        b2t *= ADAM_BETA2;
        let (c1, c2) = (1.0 / (1.0 - b1t), 1.0 / (1.0 - b2t));
        let mut k = 0;
        net.apply_update(&grad, |p, g| {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (m[k] * c1) / ((v[k] * c2).sqrt() + ADAM_EPS);
            k += 1;
        });
    }
    let mut final_loss = problem.loss(&net)?;
    if let Some(reg) = &cfg.regularizer {
        final_loss += penalty(reg, &net, data.len(), false)?.0;
    }
    if !final_loss.is_finite() {
        return Err(Error::Divergence(format!("final loss is {final_loss}")));
    }
    history.push(LossRecord {
        epoch: cfg.epochs,
        loss: final_loss,
        lr: cfg.lr_end,
    });
    Ok((net, history))
}

/// `(1/|T|) sum_{x in T} ||g1(x) - g2(x)||_1`.
pub fn error_metric(g1: &dyn VectorField, g2: &dyn VectorField, points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::contract("error metric over an empty point set"));
    }
    if g1.dim() != g2.dim() {
        return Err(Error::contract("fields of different dimension"));
    }
    let mut total = 0.0;
    for x in points {
        let a = g1.eval(x)?;
        let b = g2.eval(x)?;
        total += a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>();
    }
    Ok(total / points.len() as f64)
}

/// Relative tolerance on the factor-two spacing of step sizes.
const DOUBLING_TOL: f64 = 1e-9;

/// `log2(e_{i+1} / e_i)` for step sizes doubling from one entry to the next.
pub fn convergence_orders(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() {
        return Err(Error::contract("errors and step sizes differ in length"));
    }
    for w in hs.windows(2) {
        if ((w[1] / w[0]) - 2.0).abs() > DOUBLING_TOL * 2.0 {
            return Err(Error::contract(format!("step sizes must double: {} -> {}", w[0], w[1])));
        }
    }
    Ok(errors.windows(2).map(|w| (w[1] / w[0]).log2()).collect())
}

/// Least-squares slope of `log e` against `log h`.
pub fn loglog_slope(hs: &[f64], errors: &[f64]) -> Result<f64> {
    if hs.len() != errors.len() || hs.len() < 2 {
        return Err(Error::contract("a slope needs at least two (h, error) pairs"));
    }
    if hs.iter().chain(errors).any(|v| v.is_nan() || *v <= 0.0) {
        return Err(Error::contract("log-log slope needs positive values"));
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("step sizes must not all coincide"));
    }
    Ok(sxy / sxx)
}

/// Writes `epoch,loss,lr`.
pub fn history_to_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("epoch,loss,lr\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.loss, r.lr);
    }
    out
}

pub fn history_from_csv(text: &str) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("epoch,loss,lr") {
        return Err(Error::Parse("loss history must start with `epoch,loss,lr`".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let bad = || Error::Parse(format!("bad loss history row `{l}`"));
            if cols.len() != 3 {
                return Err(bad());
            }
            Ok(LossRecord {
                epoch: cols[0].trim().parse().map_err(|_| bad())?,
                loss: cols[1].trim().parse().map_err(|_| bad())?,
                lr: cols[2].trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn write_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    std::fs::write(path, history_to_csv(history)).map_err(|e| Error::io(path, e))
}

/// One row of the convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scheme: String,
    #[serde(rename = "M")]
    pub steps: usize,
    pub h: f64,
    pub test_loss_sqrt: Option<f64>,
    pub error_f: Option<f64>,
    pub error_imde: Option<f64>,
    /// Order against the row with half the step size.
    pub order: Option<f64>,
}

pub const METRICS_HEADER: &str = "scheme,M,h,test_loss_sqrt,error_f,error_imde,order";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scheme,
            r.steps,
            r.h,
            opt(r.test_loss_sqrt),
            opt(r.error_f),
            opt(r.error_imde),
            opt(r.order)
        );
    }
    out
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(Error::Parse(format!("metrics CSV must start with `{METRICS_HEADER}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split(',').map(str::trim).collect();
            let bad = || Error::Parse(format!("bad metrics row `{l}`"));
            if cols.len() != 7 {
                return Err(bad());
            }
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad())
                }
            };
            Ok(MetricsRow {
                scheme: cols[0].to_string(),
                steps: cols[1].parse().map_err(|_| bad())?,
                h: cols[2].parse().map_err(|_| bad())?,
                test_loss_sqrt: num(cols[3])?,
                error_f: num(cols[4])?,
                error_imde: num(cols[5])?,
                order: num(cols[6])?,
            })
        })
        .collect()
}

/// Fills `order` per scheme from `error_f`, rows taken in increasing `h`.
pub fn fill_orders(rows: &mut [MetricsRow]) {
    let mut by_scheme: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_scheme.entry(r.scheme.clone()).or_default().push(i);
    }
    for idx in by_scheme.values_mut() {
        idx.sort_by(|a, b| rows[*a].h.total_cmp(&rows[*b].h));
        rows[idx[0]].order = None;
        for w in idx.windows(2) {
            let (prev, cur) = (&rows[w[0]], &rows[w[1]]);
            let doubled = ((cur.h / prev.h) - 2.0).abs() <= DOUBLING_TOL * 2.0;
            rows[w[1]].order = match (prev.error_f, cur.error_f) {
                (Some(a), Some(b)) if doubled && a > 0.0 && b > 0.0 => Some((b / a).log2()),
                _ => None,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_dataset, sample_box, window_trajectory, DampedOscillator, TrajectoryWindow};
    use crate::lmm::catalog;
    use approx::assert_relative_eq;
    use ndarray::{array, Array1};

    /// Net whose output is the constant `c` everywhere.
    fn constant_net(hidden: usize, c: &[f64]) -> Mlp {
        let d = c.len();
        let mut net = Mlp::zeros(&[d, hidden, d]).unwrap();
        net.layers_mut()[1].biases = Array1::from_vec(c.to_vec());
        net
    }

    fn constant_data(c: &[f64], h: f64, steps: usize) -> Dataset {
        let states: Vec<Vec<f64>> = (0..6)
            .map(|n| c.iter().map(|ci| 0.25 + ci * h * n as f64).collect())
            .collect();
        window_trajectory(&states, steps, h).unwrap()
    }

    #[test]
    fn constant_field_loss_is_exactly_zero() {
        let c = [1.0, -2.0];
        let net = constant_net(3, &c);
        for name in ["AB1", "AB2", "BDF1", "BDF2", "AM1"] {
            let s = catalog(name).unwrap();
            let data = constant_data(&c, 0.5, s.steps());
            assert_eq!(lmm_loss(&s, &net, &data).unwrap(), 0.0, "{name}");
        }
    }

    #[test]
    fn single_window_ab1_instantiation() {
        let net = Mlp::new(&[2, 4, 2], 3).unwrap();
        let y0 = vec![0.3, -0.4];
        let y1 = vec![0.35, -0.1];
        let data = Dataset {
            dim: 2,
            steps: 1,
            h: 0.1,
            windows: vec![TrajectoryWindow {
                states: vec![y0.clone(), y1.clone()],
            }],
        };
        let f0 = net.forward(&y0).unwrap();
        let expect: f64 = (0..2).map(|d| ((y1[d] - y0[d]) / 0.1 - f0[d]).powi(2)).sum();
        assert_relative_eq!(
            lmm_loss(&catalog("AB1").unwrap(), &net, &data).unwrap(),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mismatched_steps_is_a_contract_error() {
        let data = constant_data(&[1.0], 0.5, 1);
        let net = constant_net(2, &[1.0]);
        assert!(matches!(
            lmm_loss(&catalog("AB2").unwrap(), &net, &data),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let s = catalog("AM1").unwrap();
        let initials = sample_box(&[[-1.0, 1.0], [-1.0, 1.0]], 3, 1).unwrap();
        let data = generate_dataset(&DampedOscillator, &initials, 4, 1, 0.05, 20).unwrap();
        let problem = LossProblem::new(&s, &data).unwrap();
        assert!(problem.unique_points() < data.len() * 2);
        let net = Mlp::new(&[2, 5, 2], 2).unwrap();
        let (loss, grad) = problem.loss_and_grad(&net).unwrap();
        assert_relative_eq!(loss, lmm_loss(&s, &net, &data).unwrap(), epsilon = 1e-12);
        let exact = grad.flat();
        let eps = 1e-6;
        for idx in 0..net.param_count() {
            let eval = |delta: f64| {
                let mut p = net.clone();
                let mut k = 0;
                p.apply_update(&grad, |v, _| {
                    if k == idx {
                        *v += delta;
                    }
                    k += 1;
                });
                problem.loss(&p).unwrap()
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            assert!(
                (exact[idx] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "{idx}: {} vs {fd}",
                exact[idx]
            );
        }
    }

    #[test]
    fn subset_matches_selected_windows() {
        let s = catalog("BDF2").unwrap();
        let initials = sample_box(&[[-1.0, 1.0], [-1.0, 1.0]], 2, 4).unwrap();
        let data = generate_dataset(&DampedOscillator, &initials, 6, 2, 0.05, 20).unwrap();
        let net = Mlp::new(&[2, 4, 2], 0).unwrap();
        let problem = LossProblem::new(&s, &data).unwrap();
        let picked = [4, 0, 7];
        let sub = Dataset {
            windows: picked.iter().map(|i| data.windows[*i].clone()).collect(),
            ..data.clone()
        };
        assert_relative_eq!(
            problem.subset(&picked).loss(&net).unwrap(),
            lmm_loss(&s, &net, &sub).unwrap(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn exact_field_residual_scales_with_order() {
        // With f_theta = f the loss is the squared local defect, O(h^{2p}).
        struct Exact;
        impl VectorField for Exact {
            fn dim(&self) -> usize {
                2
            }
            fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
                DampedOscillator.eval(x)
            }
        }
        let s = catalog("AB2").unwrap();
        let x0 = vec![vec![1.2, -0.4], vec![-0.7, 0.9]];
        let mut losses = Vec::new();
        let hs = [0.04, 0.02, 0.01];
        for h in hs {
            let data = generate_dataset(&DampedOscillator, &x0, 2, 2, h, 200).unwrap();
            let problem = LossProblem::new(&s, &data).unwrap();
            let mut total = 0.0;
            for n in 0..problem.windows() {
                let mut r = problem.targets.row(n).to_owned();
                for &(idx, b) in &problem.terms[problem.offsets[n]..problem.offsets[n + 1]] {
                    let row: Vec<f64> = problem.points.row(idx).to_vec();
                    let f = Exact.eval(&row).unwrap();
                    for d in 0..2 {
                        r[d] -= b * f[d];
                    }
                }
                total += r.iter().map(|v| v * v).sum::<f64>();
            }
            losses.push(total / problem.windows() as f64);
        }
        let slope = loglog_slope(&hs, &losses).unwrap();
        assert!((slope - 4.0).abs() < 0.4, "slope {slope}");
    }

    #[test]
    fn rescaled_scheme_gives_the_same_loss() {
        let s = catalog("BDF2").unwrap();
        let scaled = LmmScheme::new(
            "scaled",
            s.alphas().iter().map(|a| a * 3.0).collect(),
            s.betas().iter().map(|b| b * 3.0).collect(),
        )
        .unwrap()
        .normalize()
        .unwrap();
        let initials = sample_box(&[[-1.0, 1.0], [-1.0, 1.0]], 2, 4).unwrap();
        let data = generate_dataset(&DampedOscillator, &initials, 4, 2, 0.05, 20).unwrap();
        let net = Mlp::new(&[2, 4, 2], 0).unwrap();
        assert_relative_eq!(
            lmm_loss(&s, &net, &data).unwrap(),
            lmm_loss(&scaled, &net, &data).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn regularizer_examples() {
        let s = catalog("AB1").unwrap();
        let data = constant_data(&[1.0, 2.0], 0.5, 1);
        let mut net = Mlp::zeros(&[2, 4, 2]).unwrap();
        net.layers_mut()[1].biases = array![0.5, -1.5];
        let mut cfg = TrainConfig::new(s.clone(), 10);
        cfg.regularizer = Some(RegularizerConfig {
            r1: 1.0,
            order: 2,
            scale: 0.0,
            grid: vec![],
        });
        let base = lmm_loss(&s, &net, &data).unwrap();
        assert_eq!(regularized_loss(&cfg, &net, &data, data.len()).unwrap(), base);

        cfg.regularizer = Some(RegularizerConfig {
            r1: 1.0,
            order: 0,
            scale: 0.0,
            grid: vec![vec![0.0, 0.0]],
        });
        let n = data.len();
        let expect = base + (n as f64).powf(-1.0 / 2.0 - 0.5) * 2.0;
        assert_relative_eq!(regularized_loss(&cfg, &net, &data, n).unwrap(), expect, epsilon = 1e-15);

        cfg.regularizer.as_mut().unwrap().order = 3;
        assert!(matches!(
            regularized_loss(&cfg, &net, &data, n),
            Err(Error::UnsupportedOrder(3))
        ));
    }

    #[test]
    fn penalty_is_monotone_in_radius_and_non_negative() {
        let s = catalog("AB1").unwrap();
        let data = constant_data(&[1.0, 2.0], 0.5, 1);
        let net = Mlp::new(&[2, 6, 2], 1).unwrap();
        let base = lmm_loss(&s, &net, &data).unwrap();
        let mut prev = base;
        for r1 in [0.0, 0.5, 1.0, 2.0] {
            let mut cfg = TrainConfig::new(s.clone(), 10);
            cfg.regularizer = Some(RegularizerConfig {
                r1,
                order: 2,
                scale: 1e-3,
                grid: vec![vec![0.0, 0.0], vec![0.5, -0.5]],
            });
            let v = regularized_loss(&cfg, &net, &data, data.len()).unwrap();
            assert!(v >= prev && v >= base);
            prev = v;
        }
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let net = Mlp::new(&[2, 4, 2], 6).unwrap();
        let reg = RegularizerConfig {
            r1: 0.7,
            order: 2,
            scale: 0.1,
            grid: vec![vec![0.2, 0.1], vec![-0.4, 0.6]],
        };
        let (_, grad) = penalty(&reg, &net, 50, true).unwrap();
        let exact = grad.unwrap().flat();
        let eps = 1e-7;
        for idx in 0..net.param_count() {
            let eval = |delta: f64| {
                let mut p = net.clone();
                let mut k = 0;
                let zero = MlpGradient::zeros_like(&net);
                p.apply_update(&zero, |v, _| {
                    if k == idx {
                        *v += delta;
                    }
                    k += 1;
                });
                penalty(&reg, &p, 50, false).unwrap().0
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            assert!(
                (exact[idx] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "{idx}: {} vs {fd}",
                exact[idx]
            );
        }
    }

    #[test]
    fn constant_field_training_converges() {
        let c = [0.5, -0.25];
        let data = constant_data(&c, 0.5, 1);
        let mut cfg = TrainConfig::new(catalog("AB1").unwrap(), 2000);
        cfg.seed = 3;
        let net = Mlp::zeros(&[2, 4, 2]).unwrap();
        let (net, history) = train(&cfg, net, &data).unwrap();
        let last = history.last().unwrap();
        assert_eq!(last.epoch, 2000);
        assert!(last.loss < 1e-10, "final loss {}", last.loss);
        assert_eq!(last.loss, lmm_loss(&cfg.scheme, &net, &data).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let initials = sample_box(&[[-1.0, 1.0], [-1.0, 1.0]], 4, 9).unwrap();
        let data = generate_dataset(&DampedOscillator, &initials, 5, 1, 0.05, 20).unwrap();
        let mut cfg = TrainConfig::new(catalog("AB1").unwrap(), 200);
        cfg.batch = Some(7);
        cfg.log_every = 10;
        let a = train(&cfg, Mlp::new(&[2, 8, 2], 1).unwrap(), &data).unwrap();
        let b = train(&cfg, Mlp::new(&[2, 8, 2], 1).unwrap(), &data).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(history_to_csv(&a.1), history_to_csv(&b.1));
        assert_eq!(history_from_csv(&history_to_csv(&a.1)).unwrap(), a.1);
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::new(catalog("AB1").unwrap(), 100);
        assert_eq!(cfg.lr_at(0), 1e-2);
        assert_relative_eq!(cfg.lr_at(50), 1e-3, max_relative = 1e-12);
        assert_relative_eq!(cfg.lr_at(100), 1e-4, max_relative = 1e-12);
        let mut bad = cfg.clone();
        bad.lr_end = 1.0;
        assert!(bad.validate().is_err());
        bad = cfg.clone();
        bad.epochs = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let data = constant_data(&[1.0], 0.5, 1);
        let mut net = constant_net(2, &[1.0]);
        net.layers_mut()[0].weights[[0, 0]] = f64::NAN;
        let cfg = TrainConfig::new(catalog("AB1").unwrap(), 5);
        assert!(matches!(train(&cfg, net, &data), Err(Error::Divergence(_))));
    }

    struct Shift(Vec<f64>);

    impl VectorField for Shift {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(x.iter().zip(&self.0).map(|(a, b)| a + b).collect())
        }
    }

    #[test]
    fn error_metric_examples() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]];
        let id = Shift(vec![0.0, 0.0]);
        assert_eq!(error_metric(&id, &id, &pts).unwrap(), 0.0);
        assert_eq!(error_metric(&Shift(vec![1.0, 0.0]), &id, &pts).unwrap(), 1.0);
        assert!(error_metric(&id, &id, &[]).is_err());
    }

    #[test]
    fn convergence_order_examples() {
        let e = 0.013;
        let o = convergence_orders(&[e, 2.0 * e, 4.0 * e], &[0.1, 0.2, 0.4]).unwrap();
        assert_relative_eq!(o[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(o[1], 1.0, epsilon = 1e-14);
        assert_relative_eq!(
            convergence_orders(&[e, 8.0 * e], &[0.1, 0.2]).unwrap()[0],
            3.0,
            epsilon = 1e-14
        );
        let table = convergence_orders(&[1.709e-1, 3.418e-1], &[0.002, 0.004]).unwrap();
        assert!((table[0] - 1.000).abs() < 5e-4);
        assert!(convergence_orders(&[1.0, 2.0], &[0.1, 0.3]).is_err());
        assert_relative_eq!(
            loglog_slope(&[0.1, 0.2, 0.4], &[1.0, 4.0, 16.0]).unwrap(),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn metrics_csv_round_trip() {
        let mut rows = vec![
            MetricsRow {
                scheme: "AB1".into(),
                steps: 1,
                h: 0.016,
                test_loss_sqrt: Some(1e-3),
                error_f: Some(0.2),
                error_imde: Some(0.01),
                order: None,
            },
            MetricsRow {
                scheme: "AB1".into(),
                steps: 1,
                h: 0.008,
                test_loss_sqrt: Some(2e-3),
                error_f: Some(0.1),
                error_imde: None,
                order: None,
            },
        ];
        fill_orders(&mut rows);
        assert_eq!(rows[1].order, None);
        assert_relative_eq!(rows[0].order.unwrap(), 1.0, epsilon = 1e-12);
        let text = metrics_to_csv(&rows);
        assert!(text.starts_with(METRICS_HEADER));
        assert_eq!(metrics_from_csv(&text).unwrap(), rows);
        assert!(metrics_from_csv("scheme,h\n").is_err());
    }

    #[test]
    fn loss_problem_skips_zero_beta_states() {
        let s = catalog("AB1").unwrap();
        let data = constant_data(&[1.0], 0.5, 1);
        let p = LossProblem::new(&s, &data).unwrap();
        assert_eq!(p.unique_points(), data.len());
        let am = LossProblem::new(&catalog("AM1").unwrap(), &data).unwrap();
        assert_eq!(am.unique_points(), data.len() + 1);
    }
}
