//! Tanh feedforward networks `f_theta(x) = W_{L+1} h_L(...h_1(x)) + b_{L+1}`.
//!
//! Two evaluation paths exist. The batched `ndarray` path is what training uses.
//! The per-sample path is generic over [`Num`], so running it on [`HyperDual`]
//! numbers yields exact first and second input derivatives, and running the
//! reverse sweep in the same arithmetic yields parameter gradients of those
//! derivatives (needed by the derivative-norm regularizer).

use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{check_dim, VectorField};
use crate::kernels::tanh_in_place;

/// Highest derivative order the norm probes support.
pub const MAX_DERIVATIVE_ORDER: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `d_l x d_{l-1}`
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Optional affine maps around the network:
/// `f(x) = out_scale * net((x - in_shift) / in_scale) + out_shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub in_shift: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_shift: Vec<f64>,
    pub out_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(d_in: usize, d_out: usize) -> Normalization {
        Normalization {
            in_shift: vec![0.0; d_in],
            in_scale: vec![1.0; d_in],
            out_shift: vec![0.0; d_out],
            out_scale: vec![1.0; d_out],
        }
    }

    /// Per-coordinate mean / standard deviation of the inputs and outputs.
    pub fn from_samples(inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<Normalization> {
        let (in_shift, in_scale) = mean_std(inputs)?;
        let (out_shift, out_scale) = mean_std(outputs)?;
        Ok(Normalization {
            in_shift,
            in_scale,
            out_shift,
            out_scale,
        })
    }

    fn check(&self, d_in: usize, d_out: usize) -> Result<()> {
        if self.in_shift.len() != d_in
            || self.in_scale.len() != d_in
            || self.out_shift.len() != d_out
            || self.out_scale.len() != d_out
        {
            return Err(Error::contract("normalization dimensions do not match the network"));
        }
        let all = self
            .in_shift
            .iter()
            .chain(&self.in_scale)
            .chain(&self.out_shift)
            .chain(&self.out_scale);
        if all.clone().any(|v| !v.is_finite()) || self.in_scale.contains(&0.0) {
            return Err(Error::contract(
                "normalization must be finite with nonzero input scales",
            ));
        }
        Ok(())
    }
}

fn mean_std(rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::contract("cannot normalize from an empty sample"))?;
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std = var
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    Ok((mean, std))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    seed: Option<u64>,
    normalization: Option<Normalization>,
}

/// Parameter-shaped container, used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub layers: Vec<Layer>,
}

impl MlpGradient {
    pub fn zeros_like(net: &Mlp) -> MlpGradient {
        MlpGradient {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn scale_add(&mut self, a: f64, other: &MlpGradient) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.weights.scaled_add(a, &o.weights);
            l.biases.scaled_add(a, &o.biases);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }
}

/// Cached activations of a batched forward pass.
#[derive(Debug, Clone, Default)]
pub struct BatchCache {
    inputs: Array2<f64>,
    hidden: Vec<Array2<f64>>,
}

/// Buffers kept across batched passes, so a training loop does not allocate
/// (and page in) its activations every epoch.
#[derive(Debug, Clone, Default)]
pub struct BatchWorkspace {
    cache: BatchCache,
    output: Array2<f64>,
    delta: Array2<f64>,
    spare: Array2<f64>,
}

impl BatchWorkspace {
    /// Network outputs of the last forward pass.
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

fn reshape(a: &mut Array2<f64>, shape: (usize, usize)) {
    if a.dim() != shape {
        *a = Array2::zeros(shape);
    }
}

/// `out = prev W^T + b`.
fn affine_into(prev: &Array2<f64>, layer: &Layer, out: &mut Array2<f64>, n: usize) {
    reshape(out, (n, layer.weights.nrows()));
    out.assign(&layer.biases);
    general_mat_mul(1.0, prev, &layer.weights.t(), 1.0, out);
}

impl Mlp {
    /// Layer widths `(d_0, ..., d_{L+1})`; weights and biases drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Mlp> {
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                let biases = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
                Layer { weights, biases }
            })
            .collect();
        Ok(Mlp {
            layers,
            seed: Some(seed),
            normalization: None,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Mlp> {
        check_dims(dims)?;
        Ok(Mlp {
            layers: dims
                .windows(2)
                .map(|w| Layer {
                    weights: Array2::zeros((w[1], w[0])),
                    biases: Array1::zeros(w[1]),
                })
                .collect(),
            seed: None,
            normalization: None,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Mlp> {
        if layers.is_empty() {
            return Err(Error::contract("a network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.nrows() != l.biases.len() || l.weights.is_empty() {
                return Err(Error::contract(format!("layer {i}: weight/bias shapes disagree")));
            }
            if i > 0 && l.weights.ncols() != layers[i - 1].weights.nrows() {
                return Err(Error::contract(format!("layer {i}: input width mismatch")));
            }
            if l.weights.iter().chain(l.biases.iter()).any(|v| !v.is_finite()) {
                return Err(Error::contract(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(Mlp {
            layers,
            seed: None,
            normalization: None,
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].weights.ncols())
            .chain(self.layers.iter().map(|l| l.weights.nrows()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn set_normalization(&mut self, norm: Option<Normalization>) -> Result<()> {
        if let Some(n) = &norm {
            n.check(self.input_dim(), self.output_dim())?;
        }
        self.normalization = norm;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Largest parameter magnitude and its flat index.
    pub fn max_abs_param(&self) -> (f64, usize) {
        let mut best = (0.0, 0);
        let mut idx = 0;
        for l in &self.layers {
            for v in l.weights.iter().chain(l.biases.iter()) {
                if v.abs() > best.0 {
                    best = (v.abs(), idx);
                }
                idx += 1;
            }
        }
        best
    }

    /// Applies `update(param, grad)` pairwise over every parameter.
    pub fn apply_update(&mut self, grad: &MlpGradient, mut update: impl FnMut(&mut f64, f64)) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            l.weights
                .iter_mut()
                .zip(g.weights.iter())
                .for_each(|(p, g)| update(p, *g));
            l.biases
                .iter_mut()
                .zip(g.biases.iter())
                .for_each(|(p, g)| update(p, *g));
        }
    }

    fn norm_parts(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// Single-point evaluation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.forward_generic(x).0)
    }

    /// Exact gradient of `upstream . f_theta(x)` with respect to every parameter.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<MlpGradient> {
        check_dim(self.input_dim(), x.len())?;
        check_dim(self.output_dim(), upstream.len())?;
        let (_, cache) = self.forward_generic(x);
        let grads = self.backward_generic(&cache, upstream);
        Ok(self.gradient_from(grads, |v| v))
    }

    /// Per-sample forward in any [`Num`]. Returns the output and the layer inputs.
    pub fn forward_generic<T: Num>(&self, x: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
        let mut a: Vec<T> = match self.norm_parts() {
            Some(n) => x
                .iter()
                .zip(n.in_shift.iter().zip(&n.in_scale))
                .map(|(v, (s, c))| (*v - T::cst(*s)) * T::cst(1.0 / c))
                .collect(),
            None => x.to_vec(),
        };
        let last = self.layers.len() - 1;
        let mut cache = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.biases.len());
            for (row, b) in layer.weights.outer_iter().zip(layer.biases.iter()) {
                let mut acc = T::cst(*b);
                for (w, v) in row.iter().zip(&a) {
                    acc = acc + *v * T::cst(*w);
                }
                next.push(if li == last { acc } else { acc.tanh() });
            }
            cache.push(std::mem::replace(&mut a, next));
        }
        if let Some(n) = self.norm_parts() {
            for (v, (s, c)) in a.iter_mut().zip(n.out_shift.iter().zip(&n.out_scale)) {
                *v = *v * T::cst(*c) + T::cst(*s);
            }
        }
        (a, cache)
    }

    /// Reverse sweep for `upstream . f`; returns per-layer `(dW row-major, db)`.
    pub fn backward_generic<T: Num, U: Copy + Into<T>>(
        &self,
        cache: &[Vec<T>],
        upstream: &[U],
    ) -> Vec<(Vec<T>, Vec<T>)> {
        let mut g: Vec<T> = match self.norm_parts() {
            Some(n) => upstream
                .iter()
                .zip(&n.out_scale)
                .map(|(u, c)| (*u).into() * T::cst(*c))
                .collect(),
            None => upstream.iter().map(|u| (*u).into()).collect(),
        };
        let last = self.layers.len() - 1;
        let mut grads = vec![(Vec::new(), Vec::new()); self.layers.len()];
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache[li];
            if li != last {
                // g currently holds d/d(activation) of layer li's output
                let out = &cache[li + 1];
                for (gi, a) in g.iter_mut().zip(out) {
                    *gi = *gi * (T::cst(1.0) - *a * *a);
                }
            }
            let mut dw = Vec::with_capacity(layer.weights.len());
            for gi in &g {
                for a in input {
                    dw.push(*gi * *a);
                }
            }
            let mut prev = vec![T::cst(0.0); input.len()];
            if li > 0 {
                for (row, gi) in layer.weights.outer_iter().zip(&g) {
                    for (p, w) in prev.iter_mut().zip(row.iter()) {
                        *p = *p + *gi * T::cst(*w);
                    }
                }
            }
            grads[li] = (dw, g);
            g = prev;
        }
        grads
    }

    fn gradient_from<T>(&self, grads: Vec<(Vec<T>, Vec<T>)>, part: impl Fn(T) -> T) -> MlpGradient
    where
        T: Num + Into<f64>,
    {
        MlpGradient {
            layers: self
                .layers
                .iter()
                .zip(grads)
                .map(|(l, (dw, db))| Layer {
                    weights: Array2::from_shape_vec(
                        l.weights.raw_dim(),
                        dw.into_iter().map(|v| part(v).into()).collect(),
                    )
                    .expect("gradient shape"),
                    biases: Array1::from_vec(db.into_iter().map(|v| part(v).into()).collect()),
                })
                .collect(),
        }
    }

    /// Batched forward; rows of `x` are points.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> (Array2<f64>, BatchCache) {
        let mut ws = BatchWorkspace::default();
        self.forward_batch_into(x, &mut ws);
        (ws.output, ws.cache)
    }

    /// [`Mlp::forward_batch`] into reused buffers; the result is `ws.output()`.
    pub fn forward_batch_into(&self, x: ArrayView2<f64>, ws: &mut BatchWorkspace) {
        let n = x.nrows();
        let cache = &mut ws.cache;
        reshape(&mut cache.inputs, x.dim());
        cache.inputs.assign(&x);
        if let Some(norm) = self.norm_parts() {
            for (mut col, (s, c)) in cache
                .inputs
                .axis_iter_mut(Axis(1))
                .zip(norm.in_shift.iter().zip(&norm.in_scale))
            {
                col.mapv_inplace(|v| (v - s) / c);
            }
        }
        let last = self.layers.len() - 1;
        cache.hidden.resize_with(last, || Array2::zeros((0, 0)));
        for (li, layer) in self.layers[..last].iter().enumerate() {
            let (done, todo) = cache.hidden.split_at_mut(li);
            let prev = done.last().unwrap_or(&cache.inputs);
            let z = &mut todo[0];
            affine_into(prev, layer, z, n);
            match z.as_slice_mut() {
                Some(s) => tanh_in_place(s),
                None => z.mapv_inplace(f64::tanh),
            }
        }
        let prev = cache.hidden.last().unwrap_or(&cache.inputs);
        affine_into(prev, &self.layers[last], &mut ws.output, n);
        if let Some(norm) = self.norm_parts() {
            for (mut col, (s, c)) in ws
                .output
                .axis_iter_mut(Axis(1))
                .zip(norm.out_shift.iter().zip(&norm.out_scale))
            {
                col.mapv_inplace(|v| v * c + s);
            }
        }
    }

    /// Gradient of `sum_i upstream_i . f(x_i)` over a batch.
    pub fn backward_batch(&self, cache: &BatchCache, upstream: ArrayView2<f64>) -> MlpGradient {
        let mut grad = MlpGradient::zeros_like(self);
        let mut delta = Array2::zeros((0, 0));
        let mut spare = Array2::zeros((0, 0));
        self.backward_into(cache, upstream, &mut grad, &mut delta, &mut spare);
        grad
    }

    /// [`Mlp::backward_batch`] after [`Mlp::forward_batch_into`], overwriting `grad`.
    pub fn backward_batch_into(&self, ws: &mut BatchWorkspace, upstream: ArrayView2<f64>, grad: &mut MlpGradient) {
        let BatchWorkspace {
            cache, delta, spare, ..
        } = ws;
        self.backward_into(cache, upstream, grad, delta, spare);
    }

    fn backward_into(
        &self,
        cache: &BatchCache,
        upstream: ArrayView2<f64>,
        grad: &mut MlpGradient,
        delta: &mut Array2<f64>,
        spare: &mut Array2<f64>,
    ) {
        reshape(delta, upstream.dim());
        delta.assign(&upstream);
        if let Some(norm) = self.norm_parts() {
            for (mut col, c) in delta.axis_iter_mut(Axis(1)).zip(&norm.out_scale) {
                col.mapv_inplace(|v| v * c);
            }
        }
        let last = self.layers.len() - 1;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            if li != last {
                ndarray::Zip::from(&mut *delta)
                    .and(&cache.hidden[li])
                    .for_each(|d, a| *d *= 1.0 - a * a);
            }
            let input = if li == 0 { &cache.inputs } else { &cache.hidden[li - 1] };
            let g = &mut grad.layers[li];
            general_mat_mul(1.0, &delta.t(), input, 0.0, &mut g.weights);
            g.biases.fill(0.0);
            for row in delta.rows() {
                g.biases += &row;
            }
            if li > 0 {
                reshape(spare, (delta.nrows(), layer.weights.ncols()));
                general_mat_mul(1.0, delta, &layer.weights, 0.0, spare);
                std::mem::swap(delta, spare);
            }
        }
    }

    /// `||f^(i)(z)||` for `i = 0..=max_order`: the l1 norm of the output, the l1-induced
    /// norm of the Jacobian, and `max_{j,k} sum_i |d^2 f_i / dx_j dx_k|` (the norm of the
    /// second derivative as a bilinear map on l1).
    pub fn derivative_norms(&self, z: &[f64], max_order: usize) -> Result<Vec<f64>> {
        if max_order > MAX_DERIVATIVE_ORDER {
            return Err(Error::UnsupportedOrder(max_order));
        }
        (0..=max_order)
            .map(|i| Ok(self.derivative_probe(z, i)?.value))
            .collect()
    }

    /// Norm of the `order`-th derivative at `z` together with a subgradient of it
    /// with respect to the parameters.
    pub fn derivative_norm_grad(&self, z: &[f64], order: usize) -> Result<(f64, MlpGradient)> {
        let probe = self.derivative_probe(z, order)?;
        let mut point: Vec<HyperDual> = z.iter().map(|v| HyperDual::cst(*v)).collect();
        if let Some(j) = probe.first {
            point[j].e1 = 1.0;
        }
        if let Some(k) = probe.second {
            point[k].e2 = 1.0;
        }
        let (_, cache) = self.forward_generic(&point);
        let grads = self.backward_generic(&cache, &probe.signs);
        let grad = match order {
            0 => self.gradient_from(grads, |v| HyperDual::cst(v.re)),
            1 => self.gradient_from(grads, |v| HyperDual::cst(v.e1)),
            _ => self.gradient_from(grads, |v| HyperDual::cst(v.e12)),
        };
        Ok((probe.value, grad))
    }

    fn derivative_probe(&self, z: &[f64], order: usize) -> Result<Probe> {
        check_dim(self.input_dim(), z.len())?;
        let d = self.input_dim();
        let lift = |j: Option<usize>, k: Option<usize>| -> Vec<f64> {
            let mut p: Vec<HyperDual> = z.iter().map(|v| HyperDual::cst(*v)).collect();
            if let Some(j) = j {
                p[j].e1 = 1.0;
            }
            if let Some(k) = k {
                p[k].e2 = 1.0;
            }
            let out = self.forward_generic(&p).0;
            out.iter()
                .map(|v| match (j, k) {
                    (Some(_), Some(_)) => v.e12,
                    (Some(_), None) => v.e1,
                    _ => v.re,
                })
                .collect()
        };
        let best = |candidates: Vec<(Option<usize>, Option<usize>)>| -> Probe {
            let mut top: Option<Probe> = None;
            for (j, k) in candidates {
                let col = if j.is_none() {
                    self.forward_generic(z).0
                } else {
                    lift(j, k)
                };
                let value: f64 = col.iter().map(|v| v.abs()).sum();
                if top.as_ref().is_none_or(|t| value > t.value) {
                    top = Some(Probe {
                        value,
                        signs: col.iter().map(|v| v.signum() * f64::from(*v != 0.0)).collect(),
                        first: j,
                        second: k,
                    });
                }
            }
            top.expect("at least one candidate")
        };
        Ok(match order {
            0 => best(vec![(None, None)]),
            1 => best((0..d).map(|j| (Some(j), None)).collect()),
            2 => best((0..d).flat_map(|j| (j..d).map(move |k| (Some(j), Some(k)))).collect()),
            o => return Err(Error::UnsupportedOrder(o)),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dims: self.dims(),
            weights: self
                .layers
                .iter()
                .map(|l| l.weights.iter().copied().collect())
                .collect(),
            biases: self.layers.iter().map(|l| l.biases.to_vec()).collect(),
            seed: self.seed,
            normalization: self.normalization.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Mlp> {
        check_dims(&ck.dims)?;
        if ck.weights.len() != ck.dims.len() - 1 || ck.biases.len() != ck.dims.len() - 1 {
            return Err(Error::contract("checkpoint layer count does not match dims"));
        }
        let layers = ck
            .dims
            .windows(2)
            .zip(ck.weights.into_iter().zip(ck.biases))
            .map(|(w, (wv, bv))| {
                let weights = Array2::from_shape_vec((w[1], w[0]), wv)
                    .map_err(|e| Error::contract(format!("checkpoint weights: {e}")))?;
                if bv.len() != w[1] {
                    return Err(Error::contract("checkpoint bias length does not match dims"));
                }
                Ok(Layer {
                    weights,
                    biases: Array1::from_vec(bv),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = Mlp::from_layers(layers)?;
        net.seed = ck.seed;
        net.set_normalization(ck.normalization)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint()).map_err(|e| Error::json("checkpoint", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Mlp> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mlp::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(path.display().to_string(), source),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Mlp> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::json("checkpoint", e))?;
        Mlp::from_checkpoint(ck)
    }
}

struct Probe {
    value: f64,
    signs: Vec<f64>,
    first: Option<usize>,
    second: Option<usize>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::contract(format!(
            "network widths must be positive with at least input and output: {dims:?}"
        )));
    }
    Ok(())
}

impl VectorField for Mlp {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.input_dim() != self.output_dim() {
            return Err(Error::contract(
                "network is not a vector field (input and output widths differ)",
            ));
        }
        self.forward(x)
    }
}

/// On-disk network: row-major weights per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

/// Scalars the per-sample network path can run on.
pub trait Num:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> + From<f64>
{
    fn cst(v: f64) -> Self;
    fn tanh(self) -> Self;
}

impl Num for f64 {
    fn cst(v: f64) -> f64 {
        v
    }

    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
}

/// `re + e1 eps1 + e2 eps2 + e12 eps1 eps2` with `eps1^2 = eps2^2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperDual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    fn chain(self, f: f64, df: f64, d2f: f64) -> HyperDual {
        HyperDual {
            re: f,
            e1: df * self.e1,
            e2: df * self.e2,
            e12: df * self.e12 + d2f * self.e1 * self.e2,
        }
    }
}

impl From<f64> for HyperDual {
    fn from(v: f64) -> Self {
        HyperDual::cst(v)
    }
}

impl From<HyperDual> for f64 {
    fn from(v: HyperDual) -> f64 {
        v.re
    }
}

impl Add for HyperDual {
    type Output = HyperDual;
    fn add(self, o: HyperDual) -> HyperDual {
        HyperDual {
            re: self.re + o.re,
            e1: self.e1 + o.e1,
            e2: self.e2 + o.e2,
            e12: self.e12 + o.e12,
        }
    }
}

impl Sub for HyperDual {
    type Output = HyperDual;
    fn sub(self, o: HyperDual) -> HyperDual {
        self + (-o)
    }
}

impl Neg for HyperDual {
    type Output = HyperDual;
    fn neg(self) -> HyperDual {
        HyperDual {
            re: -self.re,
            e1: -self.e1,
            e2: -self.e2,
            e12: -self.e12,
        }
    }
}

impl Mul for HyperDual {
    type Output = HyperDual;
    fn mul(self, o: HyperDual) -> HyperDual {
        HyperDual {
            re: self.re * o.re,
            e1: self.re * o.e1 + self.e1 * o.re,
            e2: self.re * o.e2 + self.e2 * o.re,
            e12: self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        }
    }
}

impl Num for HyperDual {
    fn cst(v: f64) -> HyperDual {
        HyperDual {
            re: v,
            ..Default::default()
        }
    }

    fn tanh(self) -> HyperDual {
        let t = self.re.tanh();
        let dt = 1.0 - t * t;
        self.chain(t, dt, -2.0 * t * dt)
    }
}
