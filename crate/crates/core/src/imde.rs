//! Inverse modified differential equations of linear multistep schemes.
//!
//! For a normalized, consistent, weakly stable scheme the modified field is
//! `f_h = sum_k h^k xi_k D^k f`, where the scalars `xi_k` depend on the
//! coefficients only. This module computes the `xi_k`, evaluates truncations
//! `f_h^K`, and measures how well a truncation satisfies the defining relation
//! `sum_m alpha_m phi_{mh}(x) = h sum_m beta_m f_h^K(phi_{mh}(x))`.

use std::sync::Arc;

use crate::dynamics::rk4_flow;
use crate::error::{Error, Result};
use crate::jets::{lie_derivatives, JetField, Series};
use crate::lmm::{power_over_factorial, LmmScheme};

/// Upper bound on `K` for the adaptive truncation policy.
pub const DEFAULT_MAX_TRUNCATION: usize = 10;
/// `K` used by reproduction runs.
pub const DEFAULT_REPRODUCTION_K: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct XiSequence {
    scheme: LmmScheme,
    xis: Vec<f64>,
}

impl XiSequence {
    pub fn scheme(&self) -> &LmmScheme {
        &self.scheme
    }

    pub fn values(&self) -> &[f64] {
        &self.xis
    }

    pub fn get(&self, k: usize) -> f64 {
        self.xis[k]
    }

    pub fn max_k(&self) -> usize {
        self.xis.len() - 1
    }
}

/// `xi_0 = 1`,
/// `xi_k = sum_m alpha_m m^(k+1)/(k+1)! - sum_m beta_m sum_{j=1..k} m^j/j! xi_{k-j}`.
pub fn xi_coefficients(scheme: &LmmScheme, max_k: usize) -> Result<XiSequence> {
    scheme.require_admissible()?;
    let mut xis = Vec::with_capacity(max_k + 1);
    xis.push(1.0);
    for k in 1..=max_k {
        let mut value = 0.0;
        for (m, (a, b)) in scheme.alphas().iter().zip(scheme.betas()).enumerate() {
            let mf = m as f64;
            value += a * power_over_factorial(mf, k + 1);
            let inner: f64 = (1..=k).map(|j| power_over_factorial(mf, j) * xis[k - j]).sum();
            value -= b * inner;
        }
        xis.push(value);
    }
    Ok(XiSequence {
        scheme: scheme.clone(),
        xis,
    })
}

/// Order `p` and the coefficient of `h^p D^p f` in `f_h - f`.
pub fn leading_term(scheme: &LmmScheme) -> Result<(usize, f64)> {
    scheme.require_admissible()?;
    let p = scheme.order();
    if p == 0 {
        return Err(Error::contract(format!("scheme `{}` is not consistent", scheme.name())));
    }
    let xi = xi_coefficients(scheme, p)?;
    Ok((p, xi.get(p)))
}

/// Taylor coefficients of `(sum_m alpha_m (e^{mz} - 1)/z) / (sum_m beta_m e^{mz}) - 1`,
/// computed by series arithmetic independently of the recursion. Entry 0 is the
/// constant term plus one, so it lines up with `xi_0 = 1`.
pub fn xi_series(scheme: &LmmScheme, max_k: usize) -> Result<Vec<f64>> {
    // The numerator loses one degree when divided by z.
    let degree = max_k + 1;
    let mut numerator = Series::zero(degree);
    let mut denominator = Series::zero(max_k);
    for (m, (a, b)) in scheme.alphas().iter().zip(scheme.betas()).enumerate() {
        let e = Series::exp_linear(m as f64, degree);
        numerator = numerator + (e.clone() - 1.0) * *a;
        denominator = denominator + e.truncate(max_k) * *b;
    }
    let ratio = numerator.shift_down().div_series(&denominator)?;
    Ok(ratio.coeffs().to_vec())
}

/// Largest deviation between the recursion and the generating-function expansion.
pub fn xi_oracle_check(scheme: &LmmScheme, max_k: usize) -> Result<f64> {
    if max_k > 12 {
        return Err(Error::contract("generating-function check supports K <= 12"));
    }
    let xi = xi_coefficients(scheme, max_k)?;
    let series = xi_series(scheme, max_k)?;
    Ok(xi
        .values()
        .iter()
        .zip(&series)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// How many terms of the expansion to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Fixed(usize),
    /// Add terms while their l1 norm does not grow, up to `max`. Terms with
    /// `xi_k = 0` are skipped rather than compared.
    Adaptive {
        max: usize,
    },
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Adaptive {
            max: DEFAULT_MAX_TRUNCATION,
        }
    }
}

impl Truncation {
    fn max_k(self) -> usize {
        match self {
            Truncation::Fixed(k) => k,
            Truncation::Adaptive { max } => max,
        }
    }
}

/// `f_h^K = sum_{k <= K} h^k xi_k D^k f`.
#[derive(Clone)]
pub struct TruncatedImde {
    xis: XiSequence,
    field: Arc<dyn JetField>,
    truncation: Truncation,
}

impl std::fmt::Debug for TruncatedImde {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TruncatedImde")
            .field("scheme", &self.xis.scheme().name())
            .field("dim", &self.field.dim())
            .field("truncation", &self.truncation)
            .finish()
    }
}

impl TruncatedImde {
    pub fn new(scheme: &LmmScheme, field: Arc<dyn JetField>, truncation: Truncation) -> Result<Self> {
        let xis = xi_coefficients(scheme, truncation.max_k())?;
        Ok(TruncatedImde { xis, field, truncation })
    }

    pub fn scheme(&self) -> &LmmScheme {
        self.xis.scheme()
    }

    pub fn field(&self) -> &Arc<dyn JetField> {
        &self.field
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn eval(&self, x: &[f64], h: f64) -> Result<Vec<f64>> {
        Ok(self.eval_with_order(x, h)?.0)
    }

    /// Value together with the index of the last term included.
    pub fn eval_with_order(&self, x: &[f64], h: f64) -> Result<(Vec<f64>, usize)> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::contract(format!("step h = {h} must be non-negative")));
        }
        let derivs = lie_derivatives(self.field.as_ref(), x, self.truncation.max_k())?;
        let mut out = derivs[0].clone();
        let mut used = 0;
        let mut last_norm = l1(&out);
        let mut hk = 1.0;
        for (k, dk) in derivs.iter().enumerate().skip(1) {
            hk *= h;
            let c = hk * self.xis.get(k);
            if let Truncation::Adaptive { .. } = self.truncation {
                if self.xis.get(k).abs() < crate::lmm::ORDER_TOL {
                    continue;
                }
                let norm = c.abs() * l1(dk);
                if norm > last_norm {
                    break;
                }
                last_norm = norm;
            }
            for (o, d) in out.iter_mut().zip(dk) {
                *o += c * d;
            }
            used = k;
        }
        Ok((out, used))
    }
}

/// A truncated modified field frozen at one step size, usable wherever a
/// [`VectorField`](crate::jets::VectorField) is expected.
#[derive(Debug, Clone)]
pub struct ImdeAtStep {
    pub imde: TruncatedImde,
    pub h: f64,
}

impl crate::jets::VectorField for ImdeAtStep {
    fn dim(&self) -> usize {
        self.imde.field.dim()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.imde.eval(x, self.h)
    }
}

/// `sum_m alpha_m phi_{mh}(x) - h sum_m beta_m f_h^K(phi_{mh}(x))`, with the exact
/// flow replaced by RK4 at `substeps_per_h` substeps per step.
pub fn residual(imde: &TruncatedImde, x: &[f64], h: f64, substeps_per_h: usize) -> Result<Vec<f64>> {
    let scheme = imde.scheme();
    let field: &dyn crate::jets::VectorField = imde.field.as_ref();
    let mut state = x.to_vec();
    let mut out = vec![0.0; x.len()];
    for (m, (a, b)) in scheme.alphas().iter().zip(scheme.betas()).enumerate() {
        if m > 0 {
            state = rk4_flow(field, &state, h, substeps_per_h)?;
        }
        for (o, s) in out.iter_mut().zip(&state) {
            *o += a * s;
        }
        if *b != 0.0 {
            let fh = imde.eval(&state, h)?;
            for (o, v) in out.iter_mut().zip(&fh) {
                *o -= h * b * v;
            }
        }
    }
    Ok(out)
}

pub(crate) fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ConstantField, DampedOscillator, LinearField};
    use crate::lmm::{catalog, catalog_all};
    use approx::assert_relative_eq;

    #[test]
    fn leading_coefficients() {
        let table = [
            ("AB2", 2, 5.0 / 12.0),
            ("BDF2", 2, -1.0 / 3.0),
            ("AM1", 2, -1.0 / 12.0),
            ("AB3", 3, 3.0 / 8.0),
            ("BDF3", 3, -1.0 / 4.0),
            ("AM2", 3, -1.0 / 24.0),
            ("AB1", 1, 1.0 / 2.0),
            ("BDF1", 1, -1.0 / 2.0),
        ];
        for (name, p, c) in table {
            let s = catalog(name).unwrap();
            let xi = xi_coefficients(&s, 6).unwrap();
            assert_relative_eq!(xi.get(p), c, epsilon = 1e-12);
            assert_eq!(xi.get(0), 1.0);
            let (lp, lc) = leading_term(&s).unwrap();
            assert_eq!(lp, p);
            assert_relative_eq!(lc, c, epsilon = 1e-12);
            // Leading coefficient straight from the order-p+1 condition.
            let bracket: f64 = s
                .alphas()
                .iter()
                .zip(s.betas())
                .enumerate()
                .map(|(m, (a, b))| a * power_over_factorial(m as f64, p + 1) - b * power_over_factorial(m as f64, p))
                .sum();
            assert_relative_eq!(lc, bracket, epsilon = 1e-13);
        }
    }

    #[test]
    fn gap_below_order() {
        for s in catalog_all() {
            let p = s.order();
            let xi = xi_coefficients(&s, p).unwrap();
            for k in 1..p {
                assert!(xi.get(k).abs() < 1e-12, "{} xi_{k} = {}", s.name(), xi.get(k));
            }
            assert!(xi.get(p).abs() > 1e-6);
        }
    }

    #[test]
    fn unnormalized_scheme_is_rejected() {
        let raw = LmmScheme::new("x", vec![-2.0, 2.0], vec![2.0, 0.0]).unwrap();
        assert!(matches!(xi_coefficients(&raw, 3), Err(Error::Contract(_))));
        let bad = LmmScheme::new("x", vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert!(leading_term(&bad).is_err());
    }

    #[test]
    fn generating_function_agrees() {
        for s in catalog_all() {
            let dev = xi_oracle_check(&s, 10).unwrap();
            assert!(dev < 1e-9, "{}: {dev}", s.name());
            assert!(xi_oracle_check(&s, 0).unwrap() < 1e-15);
        }
        assert!(xi_oracle_check(&catalog("AB2").unwrap(), 13).is_err());
    }

    #[test]
    fn zero_truncation_and_zero_step_give_the_field() {
        let f: Arc<dyn JetField> = Arc::new(DampedOscillator);
        let x = [1.1, -0.7];
        let fx = f.eval(&x).unwrap();
        for s in catalog_all() {
            let k0 = TruncatedImde::new(&s, f.clone(), Truncation::Fixed(0)).unwrap();
            assert_eq!(k0.eval(&x, 0.05).unwrap(), fx);
            let k4 = TruncatedImde::new(&s, f.clone(), Truncation::Fixed(4)).unwrap();
            assert_eq!(k4.eval(&x, 0.0).unwrap(), fx);
            let adaptive = TruncatedImde::new(&s, f.clone(), Truncation::default()).unwrap();
            assert_eq!(adaptive.eval(&x, 0.0).unwrap(), fx);
        }
    }

    #[test]
    fn linear_field_matches_matrix_oracle() {
        let a = vec![vec![0.0, 1.0], vec![-1.0, -0.2]];
        let f: Arc<dyn JetField> = Arc::new(LinearField::new(a.clone()).unwrap());
        let s = catalog("AB1").unwrap();
        let imde = TruncatedImde::new(&s, f, Truncation::Fixed(2)).unwrap();
        let xi2 = xi_coefficients(&s, 2).unwrap().get(2);
        let x = [0.4, 1.5];
        let h = 0.1;
        let mv = |v: &[f64]| -> Vec<f64> { a.iter().map(|r| r.iter().zip(v).map(|(p, q)| p * q).sum()).collect() };
        let ax = mv(&x);
        let a2x = mv(&ax);
        let a3x = mv(&a2x);
        let got = imde.eval(&x, h).unwrap();
        for i in 0..2 {
            let expect = ax[i] + h / 2.0 * a2x[i] + xi2 * h * h * a3x[i];
            assert_relative_eq!(got[i], expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn constant_field_residual_vanishes() {
        let f: Arc<dyn JetField> = Arc::new(ConstantField::new(vec![1.0, -2.0]).unwrap());
        for s in catalog_all() {
            let imde = TruncatedImde::new(&s, f.clone(), Truncation::Fixed(3)).unwrap();
            let r = residual(&imde, &[0.5, 0.25], 0.125, 20).unwrap();
            assert!(r.iter().all(|v| v.abs() < 1e-14), "{}: {r:?}", s.name());
        }
    }

    #[test]
    fn adaptive_truncation_stops_when_terms_grow() {
        let f: Arc<dyn JetField> = Arc::new(DampedOscillator);
        let s = catalog("AB1").unwrap();
        let imde = TruncatedImde::new(&s, f, Truncation::default()).unwrap();
        let (_, small) = imde.eval_with_order(&[0.5, 0.5], 0.001).unwrap();
        assert_eq!(small, DEFAULT_MAX_TRUNCATION);
        let (_, large) = imde.eval_with_order(&[2.2, 2.2], 0.2).unwrap();
        assert!(large < DEFAULT_MAX_TRUNCATION);
    }
}
