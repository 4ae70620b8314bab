//! Linear multistep schemes: the catalog, normalization, and the classical
//! consistency / weak-stability / order checks.
//!
//! A scheme relates `M + 1` consecutive states through
//! `sum_m alpha_m y_{n+m} = h sum_m beta_m f(y_{n+m})`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the order-condition sums.
pub const ORDER_TOL: f64 = 1e-12;

/// Names accepted by [`catalog`].
pub const CATALOG_NAMES: [&str; 8] = ["AB1", "AB2", "AB3", "BDF1", "BDF2", "BDF3", "AM1", "AM2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemeRecord", into = "SchemeRecord")]
pub struct LmmScheme {
    name: String,
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

/// Serialized form. `M` and `order` are informative on output and checked on input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeRecord {
    pub name: String,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
}

impl TryFrom<SchemeRecord> for LmmScheme {
    type Error = Error;

    fn try_from(rec: SchemeRecord) -> Result<Self> {
        let scheme = LmmScheme::new(rec.name, rec.alphas, rec.betas)?;
        if let Some(m) = rec.steps {
            if m != scheme.steps() {
                return Err(Error::contract(format!(
                    "scheme `{}` declares M = {m} but has {} coefficients",
                    scheme.name,
                    scheme.alphas.len()
                )));
            }
        }
        Ok(scheme)
    }
}

impl From<LmmScheme> for SchemeRecord {
    fn from(s: LmmScheme) -> Self {
        let order = s.order();
        SchemeRecord {
            steps: Some(s.steps()),
            order: Some(order),
            name: s.name,
            alphas: s.alphas,
            betas: s.betas,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub consistent: bool,
    pub weakly_stable: bool,
    pub order: usize,
}

impl LmmScheme {
    /// Builds a scheme from raw coefficients `alpha_0..alpha_M`, `beta_0..beta_M`.
    ///
    /// Only admissibility is enforced here (`alpha_M != 0`, `|alpha_0| + |beta_0| > 0`);
    /// consistency and stability are reported by [`LmmScheme::validate`].
    pub fn new(name: impl Into<String>, alphas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if alphas.len() != betas.len() {
            return Err(Error::contract(format!(
                "scheme `{name}`: {} alphas but {} betas",
                alphas.len(),
                betas.len()
            )));
        }
        if alphas.len() < 2 {
            return Err(Error::contract(format!("scheme `{name}` needs M >= 1")));
        }
        if alphas.iter().chain(&betas).any(|c| !c.is_finite()) {
            return Err(Error::contract(format!("scheme `{name}` has non-finite coefficients")));
        }
        if alphas[alphas.len() - 1] == 0.0 {
            return Err(Error::contract(format!("scheme `{name}`: alpha_M must be nonzero")));
        }
        if alphas[0].abs() + betas[0].abs() == 0.0 {
            return Err(Error::contract(format!(
                "scheme `{name}`: |alpha_0| + |beta_0| must be positive"
            )));
        }
        Ok(LmmScheme { name, alphas, betas })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Step count `M`.
    pub fn steps(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn is_explicit(&self) -> bool {
        self.betas[self.steps()] == 0.0
    }

    pub fn beta_sum(&self) -> f64 {
        self.betas.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.beta_sum() - 1.0).abs() <= 1e-14
    }

    /// Rescales so that the betas sum to one. Leaves already-normalized schemes untouched.
    pub fn normalize(&self) -> Result<LmmScheme> {
        let s = self.beta_sum();
        if s.abs() < ORDER_TOL {
            return Err(Error::Normalization(self.name.clone()));
        }
        if self.is_normalized() {
            return Ok(self.clone());
        }
        Ok(LmmScheme {
            name: self.name.clone(),
            alphas: self.alphas.iter().map(|a| a / s).collect(),
            betas: self.betas.iter().map(|b| b / s).collect(),
        })
    }

    /// `sum_m alpha_m m^(k+1)/(k+1)! - sum_m beta_m m^k/k!`, the k-th order condition residual.
    pub fn order_condition(&self, k: usize) -> f64 {
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for (m, (a, b)) in self.alphas.iter().zip(&self.betas).enumerate() {
            let mf = m as f64;
            lhs += a * power_over_factorial(mf, k + 1);
            rhs += b * power_over_factorial(mf, k);
        }
        lhs - rhs
    }

    /// Largest `p <= cap` satisfying the first `p` order conditions; 0 if inconsistent.
    pub fn order_with_cap(&self, cap: usize) -> usize {
        let alpha_sum: f64 = self.alphas.iter().sum();
        if alpha_sum.abs() >= ORDER_TOL {
            return 0;
        }
        (0..cap)
            .take_while(|&k| self.order_condition(k).abs() < ORDER_TOL)
            .count()
    }

    /// Order with the default cap `M + 2`.
    pub fn order(&self) -> usize {
        self.order_with_cap(self.steps() + 2)
    }

    pub fn is_consistent(&self) -> bool {
        let alpha_sum: f64 = self.alphas.iter().sum();
        alpha_sum.abs() < ORDER_TOL && self.order_condition(0).abs() < ORDER_TOL
    }

    pub fn is_weakly_stable(&self) -> bool {
        self.weighted_alpha_sum().abs() > ORDER_TOL
    }

    /// `sum_m m alpha_m`.
    pub fn weighted_alpha_sum(&self) -> f64 {
        self.alphas.iter().enumerate().map(|(m, a)| m as f64 * a).sum()
    }

    pub fn validate(&self) -> SchemeReport {
        SchemeReport {
            consistent: self.is_consistent(),
            weakly_stable: self.is_weakly_stable(),
            order: self.order(),
        }
    }

    /// Errors unless the scheme is normalized, consistent and weakly stable.
    pub fn require_admissible(&self) -> Result<()> {
        if !self.is_normalized() {
            return Err(Error::contract(format!(
                "scheme `{}` is not normalized (sum of betas = {})",
                self.name,
                self.beta_sum()
            )));
        }
        let report = self.validate();
        if !report.consistent || !report.weakly_stable {
            return Err(Error::contract(format!(
                "scheme `{}` must be consistent and weakly stable ({report:?})",
                self.name
            )));
        }
        Ok(())
    }
}

/// `x^k / k!`
pub(crate) fn power_over_factorial(x: f64, k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, j| acc * x / j as f64)
}

/// Looks up a catalogued scheme by name (case-insensitive). Returned schemes are normalized.
pub fn catalog(name: &str) -> Result<LmmScheme> {
    let upper = name.trim().to_ascii_uppercase();
    let (alphas, betas): (Vec<f64>, Vec<f64>) = match upper.as_str() {
        "AB1" => (vec![-1.0, 1.0], vec![1.0, 0.0]),
        "AB2" => (vec![0.0, -1.0, 1.0], vec![-1.0 / 2.0, 3.0 / 2.0, 0.0]),
        "AB3" => (
            vec![0.0, 0.0, -1.0, 1.0],
            vec![5.0 / 12.0, -16.0 / 12.0, 23.0 / 12.0, 0.0],
        ),
        "BDF1" => (vec![-1.0, 1.0], vec![0.0, 1.0]),
        "BDF2" => (vec![1.0 / 2.0, -2.0, 3.0 / 2.0], vec![0.0, 0.0, 1.0]),
        "BDF3" => (vec![-1.0 / 3.0, 3.0 / 2.0, -3.0, 11.0 / 6.0], vec![0.0, 0.0, 0.0, 1.0]),
        "AM1" => (vec![-1.0, 1.0], vec![1.0 / 2.0, 1.0 / 2.0]),
        "AM2" => (vec![0.0, -1.0, 1.0], vec![-1.0 / 12.0, 8.0 / 12.0, 5.0 / 12.0]),
        _ => return Err(Error::Catalog(name.to_string())),
    };
    LmmScheme::new(upper, alphas, betas)?.normalize()
}

/// Every catalogued scheme, in [`CATALOG_NAMES`] order.
pub fn catalog_all() -> Vec<LmmScheme> {
    CATALOG_NAMES
        .iter()
        .map(|n| catalog(n).expect("catalog entry"))
        .collect()
}
