//! Truncated Taylor arithmetic and Lie derivatives by jet transport.
//!
//! A [`Series`] is a scalar power series `c_0 + c_1 t + ... + c_K t^K` truncated at
//! degree `K`. Vector fields written once against the [`Scalar`] trait can be
//! evaluated both on points and on series, which is all that is needed to get the
//! Taylor expansion of a flow and the Lie derivatives `D^k f(x)` along it.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    coeffs: Vec<f64>,
}

impl Series {
    /// A series of the given degree with every coefficient zero.
    pub fn zero(degree: usize) -> Series {
        Series {
            coeffs: vec![0.0; degree + 1],
        }
    }

    pub fn constant(c: f64, degree: usize) -> Series {
        let mut s = Series::zero(degree);
        s.coeffs[0] = c;
        s
    }

    /// `c + t`, the independent variable shifted to `c`.
    pub fn variable(c: f64, degree: usize) -> Series {
        let mut s = Series::constant(c, degree);
        if degree > 0 {
            s.coeffs[1] = 1.0;
        }
        s
    }

    /// Panics on an empty coefficient list.
    pub fn from_coeffs(coeffs: Vec<f64>) -> Series {
        assert!(!coeffs.is_empty(), "a series needs at least one coefficient");
        Series { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs[k]
    }

    pub fn set_coeff(&mut self, k: usize, value: f64) {
        self.coeffs[k] = value;
    }

    /// `exp(a t)` expanded term by term.
    pub fn exp_linear(a: f64, degree: usize) -> Series {
        let mut coeffs = Vec::with_capacity(degree + 1);
        let mut term = 1.0;
        for k in 0..=degree {
            if k > 0 {
                term *= a / k as f64;
            }
            coeffs.push(term);
        }
        Series { coeffs }
    }

    /// Drops the constant term and divides by `t`; the result has one degree less.
    pub fn shift_down(&self) -> Series {
        if self.coeffs.len() == 1 {
            return Series::zero(0);
        }
        Series {
            coeffs: self.coeffs[1..].to_vec(),
        }
    }

    pub fn truncate(&self, degree: usize) -> Series {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(degree + 1, 0.0);
        Series { coeffs }
    }

    /// Horner evaluation at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    fn zip_with(&self, rhs: &Series, op: impl Fn(f64, f64) -> f64) -> Series {
        Series {
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| op(*a, *b)).collect(),
        }
    }

    /// Cauchy product truncated at the smaller of the two degrees.
    pub fn mul_series(&self, rhs: &Series) -> Series {
        let n = self.coeffs.len().min(rhs.coeffs.len());
        let coeffs = (0..n)
            .map(|k| (0..=k).map(|j| self.coeffs[j] * rhs.coeffs[k - j]).sum())
            .collect();
        Series { coeffs }
    }

    /// Quotient by the coefficient recurrence `q_k = (a_k - sum_{j>=1} b_j q_{k-j}) / b_0`.
    pub fn div_series(&self, rhs: &Series) -> Result<Series> {
        let b0 = rhs.coeffs[0];
        if b0 == 0.0 || !b0.is_finite() {
            return Err(Error::Singularity(format!(
                "series division by a denominator with constant term {b0}"
            )));
        }
        let n = self.coeffs.len().min(rhs.coeffs.len());
        let mut q: Vec<f64> = Vec::with_capacity(n);
        for k in 0..n {
            let acc: f64 = (1..=k).map(|j| rhs.coeffs[j] * q[k - j]).sum();
            q.push((self.coeffs[k] - acc) / b0);
        }
        Ok(Series { coeffs: q })
    }

    pub fn powi_series(&self, n: u32) -> Series {
        let mut result = Series::constant(1.0, self.degree());
        let mut base = self.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul_series(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_series(&base);
            }
        }
        result
    }
}

impl Add for Series {
    type Output = Series;
    fn add(self, rhs: Series) -> Series {
        self.zip_with(&rhs, |a, b| a + b)
    }
}

impl Sub for Series {
    type Output = Series;
    fn sub(self, rhs: Series) -> Series {
        self.zip_with(&rhs, |a, b| a - b)
    }
}

impl Mul for Series {
    type Output = Series;
    fn mul(self, rhs: Series) -> Series {
        self.mul_series(&rhs)
    }
}

impl Neg for Series {
    type Output = Series;
    fn neg(mut self) -> Series {
        self.coeffs.iter_mut().for_each(|c| *c = -*c);
        self
    }
}

impl Add<f64> for Series {
    type Output = Series;
    fn add(mut self, rhs: f64) -> Series {
        self.coeffs[0] += rhs;
        self
    }
}

impl Sub<f64> for Series {
    type Output = Series;
    fn sub(mut self, rhs: f64) -> Series {
        self.coeffs[0] -= rhs;
        self
    }
}

impl Mul<f64> for Series {
    type Output = Series;
    fn mul(mut self, rhs: f64) -> Series {
        self.coeffs.iter_mut().for_each(|c| *c *= rhs);
        self
    }
}

/// Arithmetic shared by plain reals and truncated series, so a field formula can be
/// written once and evaluated on either.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn try_div(self, rhs: Self) -> Result<Self>;
    fn powi(&self, n: u32) -> Self;
    /// The constant `c`, shaped like `self`.
    fn lift(&self, c: f64) -> Self;
}

impl Scalar for f64 {
    fn try_div(self, rhs: f64) -> Result<f64> {
        if rhs == 0.0 {
            return Err(Error::Singularity(format!("division of {self} by zero")));
        }
        Ok(self / rhs)
    }

    fn powi(&self, n: u32) -> f64 {
        f64::powi(*self, n as i32)
    }

    fn lift(&self, c: f64) -> f64 {
        c
    }
}

impl Scalar for Series {
    fn try_div(self, rhs: Series) -> Result<Series> {
        self.div_series(&rhs)
    }

    fn powi(&self, n: u32) -> Series {
        self.powi_series(n)
    }

    fn lift(&self, c: f64) -> Series {
        Series::constant(c, self.degree())
    }
}

/// An autonomous vector field `f: R^D -> R^D`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// A vector field that can also be applied to a vector of series.
pub trait JetField: VectorField {
    /// The field formula lifted to series arithmetic; the degree-0 coefficients of the
    /// output equal `eval` of the degree-0 input coefficients.
    fn eval_jet(&self, y: &[Series]) -> Result<Vec<Series>>;
}

/// Fields expressible with `+ - * /` and integer powers. Implementing this gives
/// [`VectorField`] and [`JetField`] for free.
pub trait RationalField: Send + Sync {
    fn dim(&self) -> usize;
    fn apply<S: Scalar>(&self, y: &[S]) -> Result<Vec<S>>;
}

impl<T: RationalField> VectorField for T {
    fn dim(&self) -> usize {
        RationalField::dim(self)
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(RationalField::dim(self), x.len())?;
        self.apply(x)
    }
}

impl<T: RationalField> JetField for T {
    fn eval_jet(&self, y: &[Series]) -> Result<Vec<Series>> {
        check_dim(RationalField::dim(self), y.len())?;
        self.apply(y)
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::contract(format!(
            "expected a point of dimension {expected}, got {got}"
        )));
    }
    Ok(())
}

/// Taylor coefficients `y_0..y_K` (each in `R^D`) of a curve `t -> y(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    coeffs: Vec<Vec<f64>>,
}

impl Jet {
    pub fn new(coeffs: Vec<Vec<f64>>) -> Result<Jet> {
        if coeffs.is_empty() {
            return Err(Error::contract("a jet needs at least one coefficient"));
        }
        let d = coeffs[0].len();
        if coeffs.iter().any(|c| c.len() != d) {
            return Err(Error::contract("jet coefficients must share a dimension"));
        }
        if coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Singularity("non-finite jet coefficient".into()));
        }
        Ok(Jet { coeffs })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn coeff(&self, k: usize) -> &[f64] {
        &self.coeffs[k]
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    /// One scalar series per component.
    pub fn components(&self) -> Vec<Series> {
        (0..self.dim())
            .map(|i| Series::from_coeffs(self.coeffs.iter().map(|c| c[i]).collect()))
            .collect()
    }

    /// Sums the truncated series at time `t`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.components().iter().map(|s| s.eval(t)).collect()
    }
}

/// Taylor expansion of the exact flow `t -> phi_t(x)` up to degree `degree`,
/// via `y_{k+1} = [f(y)]_k / (k + 1)`.
pub fn flow_jet(f: &dyn JetField, x: &[f64], degree: usize) -> Result<Jet> {
    check_dim(f.dim(), x.len())?;
    let mut y: Vec<Series> = x.iter().map(|&xi| Series::constant(xi, degree)).collect();
    for k in 0..degree {
        // The degree-k coefficient of f(y) only sees y_0..y_k, which are final.
        let fy = f.eval_jet(&y)?;
        for (yi, fi) in y.iter_mut().zip(&fy) {
            let c = fi.coeff(k) / (k + 1) as f64;
            if !c.is_finite() {
                return Err(Error::Singularity(format!(
                    "non-finite Taylor coefficient at degree {}",
                    k + 1
                )));
            }
            yi.set_coeff(k + 1, c);
        }
    }
    Jet::new((0..=degree).map(|k| y.iter().map(|s| s.coeff(k)).collect()).collect())
}

/// `[D^0 f(x), ..., D^K f(x)]`, where `D g = g' f`.
pub fn lie_derivatives(f: &dyn JetField, x: &[f64], max_order: usize) -> Result<Vec<Vec<f64>>> {
    let jet = flow_jet(f, x, max_order)?;
    let fy = f.eval_jet(&jet.components())?;
    let mut factorial = 1.0;
    let mut out = Vec::with_capacity(max_order + 1);
    for k in 0..=max_order {
        if k > 0 {
            factorial *= k as f64;
        }
        out.push(fy.iter().map(|s| factorial * s.coeff(k)).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    struct Linear(Vec<Vec<f64>>);

    impl RationalField for Linear {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn apply<S: Scalar>(&self, y: &[S]) -> Result<Vec<S>> {
            Ok(self
                .0
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

    struct Square;

    impl RationalField for Square {
        fn dim(&self) -> usize {
            1
        }
        fn apply<S: Scalar>(&self, y: &[S]) -> Result<Vec<S>> {
            Ok(vec![y[0].clone() * y[0].clone()])
        }
    }

    struct Pole;

    impl RationalField for Pole {
        fn dim(&self) -> usize {
            1
        }
        fn apply<S: Scalar>(&self, y: &[S]) -> Result<Vec<S>> {
            Ok(vec![y[0].lift(1.0).try_div(y[0].clone())?])
        }
    }

    fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
    }

    #[test]
    fn linear_flow_jet_is_exponential_series() {
        let a = vec![vec![0.0, 1.0], vec![-2.0, -0.5]];
        let x = [1.0, -0.5];
        let jet = flow_jet(&Linear(a.clone()), &x, 3).unwrap();
        let ax = matvec(&a, &x);
        let a2x = matvec(&a, &ax);
        let a3x = matvec(&a, &a2x);
        assert_eq!(jet.coeff(0), &x);
        for i in 0..2 {
            assert_relative_eq!(jet.coeff(1)[i], ax[i], epsilon = 1e-14);
            assert_relative_eq!(jet.coeff(2)[i], a2x[i] / 2.0, epsilon = 1e-14);
            assert_relative_eq!(jet.coeff(3)[i], a3x[i] / 6.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn riccati_flow_jet() {
        // phi_t(1) = 1 / (1 - t)
        let jet = flow_jet(&Square, &[1.0], 3).unwrap();
        for k in 0..=3 {
            assert_eq!(jet.coeff(k), &[1.0]);
        }
    }

    #[test]
    fn degree_zero_is_the_point() {
        let jet = flow_jet(&Square, &[0.3], 0).unwrap();
        assert_eq!(jet.coeffs(), &[vec![0.3]]);
        let d = lie_derivatives(&Square, &[0.3], 0).unwrap();
        assert_eq!(d, vec![vec![0.3 * 0.3]]);
    }

    #[test]
    fn riccati_lie_derivatives() {
        // D^k f(x) = k! (k + 1) x^(k + 2) for f(y) = y^2.
        let x = 0.7f64;
        let d = lie_derivatives(&Square, &[x], 8).unwrap();
        let mut fact = 1.0;
        for (k, dk) in d.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            let expect = fact * (k as f64 + 1.0) * x.powi(k as i32 + 2);
            assert_relative_eq!(dk[0], expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn singular_field_reports_error() {
        assert!(matches!(flow_jet(&Pole, &[0.0], 2), Err(Error::Singularity(_))));
        assert!(Pole.eval(&[0.0]).is_err());
    }

    #[test]
    fn division_recurrence() {
        // 1 / (1 - t) = 1 + t + t^2 + ...
        let one = Series::constant(1.0, 5);
        let den = Series::from_coeffs(vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        let q = one.div_series(&den).unwrap();
        assert_eq!(q.coeffs(), &[1.0; 6]);
        assert!(one.div_series(&Series::variable(0.0, 5)).is_err());
    }

    #[test]
    fn powers_and_exp() {
        let s = Series::variable(2.0, 4);
        let cube = s.powi(3);
        // (2 + t)^3 = 8 + 12 t + 6 t^2 + t^3
        assert_eq!(cube.coeffs(), &[8.0, 12.0, 6.0, 1.0, 0.0]);
        assert_eq!(s.powi(0).coeffs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let e = Series::exp_linear(2.0, 3);
        assert_eq!(e.coeffs(), &[1.0, 2.0, 2.0, 4.0 / 3.0]);
    }

    fn series_strategy(degree: usize) -> impl Strategy<Value = Series> {
        proptest::collection::vec(-3.0f64..3.0, degree + 1).prop_map(Series::from_coeffs)
    }

    fn close(a: &Series, b: &Series) -> bool {
        a.coeffs()
            .iter()
            .zip(b.coeffs())
            .all(|(x, y)| (x - y).abs() <= 1e-13 * (1.0 + x.abs().max(y.abs())))
    }

    proptest! {
        #[test]
        fn cauchy_product_commutative_associative(
            a in series_strategy(7),
            b in series_strategy(7),
            c in series_strategy(7),
        ) {
            prop_assert!(close(&(a.clone() * b.clone()), &(b.clone() * a.clone())));
            let left = (a.clone() * b.clone()) * c.clone();
            let right = a * (b * c);
            prop_assert!(close(&left, &right));
        }

        #[test]
        fn division_inverts_product(a in series_strategy(6), b in series_strategy(6), b0 in 0.5f64..3.0) {
            let mut b = b;
            b.set_coeff(0, b0);
            let q = (a.clone() * b.clone()).try_div(b).unwrap();
            prop_assert!(q.coeffs().iter().zip(a.coeffs()).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }
}
