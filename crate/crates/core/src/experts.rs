//! Per-expert online forecasting rules.
//!
//! Two rules are provided: the running mean of the labels seen so far inside
//! the expert's rectangle, and the Vovk-Azoury-Warmuth (VAW) online ridge
//! forecaster over monomial features of the scaled coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{GridShape, LatticePoint};
use crate::linalg::cholesky_solve;

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} is not finite: {v}")))
    }
}

/// Running mean. Predicts 0 before any label has been absorbed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanExpertState {
    pub count: u64,
    pub sum: f64,
}

impl MeanExpertState {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn predict(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn update(&mut self, y: f64) -> Result<()> {
        check_finite("label", y)?;
        self.count += 1;
        self.sum += y;
        Ok(())
    }
}

/// Monomials `prod_i (u_i / n)^{e_i}` with total degree at most `degree`.
///
/// Multidegrees are listed in graded lexicographic order: by total degree,
/// then lexicographically with larger leading exponents first. For `d = 2`,
/// `degree = 2` this is `1, u1, u2, u1^2, u1 u2, u2^2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureMap", into = "RawFeatureMap")]
pub struct FeatureMap {
    d: usize,
    degree: u32,
    n: usize,
    exponents: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct RawFeatureMap {
    d: usize,
    degree: u32,
    n: usize,
}

impl TryFrom<RawFeatureMap> for FeatureMap {
    type Error = Error;

    fn try_from(raw: RawFeatureMap) -> Result<Self> {
        if raw.d == 0 || raw.n == 0 {
            return Err(Error::Config("feature map needs d >= 1 and n >= 1".into()));
        }
        Ok(FeatureMap::build(raw.d, raw.degree, raw.n))
    }
}

impl From<FeatureMap> for RawFeatureMap {
    fn from(map: FeatureMap) -> Self {
        RawFeatureMap {
            d: map.d,
            degree: map.degree,
            n: map.n,
        }
    }
}

fn push_multidegrees(d: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == d {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for e in (0..=total).rev() {
        prefix.push(e);
        push_multidegrees(d, total - e, prefix, out);
        prefix.pop();
    }
}

impl FeatureMap {
    pub fn new(shape: &GridShape, degree: u32) -> Self {
        Self::build(shape.d(), degree, shape.n())
    }

    fn build(d: usize, degree: u32, n: usize) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree {
            push_multidegrees(d, total, &mut Vec::with_capacity(d), &mut exponents);
        }
        FeatureMap {
            d,
            degree,
            n,
            exponents,
        }
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Number of features `L = C(degree + d, d)`.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn featurize(&self, p: &LatticePoint) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.featurize_into(&p.coords, &mut out);
        out
    }

    pub(crate) fn featurize_into(&self, coords: &[usize], out: &mut Vec<f64>) {
        out.clear();
        let inv_n = 1.0 / self.n as f64;
        out.extend(self.exponents.iter().map(|e| {
            e.iter()
                .zip(coords)
                .map(|(&k, &u)| (u as f64 * inv_n).powi(k as i32))
                .product::<f64>()
        }));
    }
}

/// VAW forecaster state: `gram = I + sum x x^T`, `moment = sum y x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VawExpertState {
    dim: usize,
    /// Row-major `dim x dim`.
    gram: Vec<f64>,
    moment: Vec<f64>,
}

/// Reusable buffers for [`VawExpertState::predict_with`].
#[derive(Debug, Default, Clone)]
pub struct VawScratch {
    matrix: Vec<f64>,
    rhs: Vec<f64>,
}

impl VawExpertState {
    pub fn new(dim: usize) -> Self {
        let mut gram = vec![0.0; dim * dim];
        for i in 0..dim {
            gram[i * dim + i] = 1.0;
        }
        VawExpertState {
            dim,
            gram,
            moment: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub fn moment(&self) -> &[f64] {
        &self.moment
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "feature vector has length {}, expected {}",
                x.len(),
                self.dim
            )))
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.predict_with(x, &mut VawScratch::default())
    }

    /// `solve(gram + x x^T, moment) . x`; the stored gram is left untouched.
    pub fn predict_with(&self, x: &[f64], scratch: &mut VawScratch) -> Result<f64> {
        self.check_dim(x)?;
        if self.moment.iter().all(|&m| m == 0.0) {
            return Ok(0.0);
        }
        let dim = self.dim;
        scratch.matrix.clear();
        scratch.matrix.extend_from_slice(&self.gram);
        for i in 0..dim {
            for j in 0..dim {
                scratch.matrix[i * dim + j] += x[i] * x[j];
            }
        }
        scratch.rhs.clear();
        scratch.rhs.extend_from_slice(&self.moment);
        cholesky_solve(&mut scratch.matrix, dim, &mut scratch.rhs).map_err(|pivot| {
            Error::Numeric(format!(
                "Cholesky pivot {pivot:e} on {dim}x{dim} gram (trace {:e})",
                (0..dim).map(|i| self.gram[i * dim + i]).sum::<f64>()
            ))
        })?;
        Ok(scratch.rhs.iter().zip(x).map(|(b, xi)| b * xi).sum())
    }

    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.check_dim(x)?;
        check_finite("label", y)?;
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("feature value is not finite: {bad}")));
        }
        let dim = self.dim;
        for i in 0..dim {
            for j in 0..dim {
                self.gram[i * dim + j] += x[i] * x[j];
            }
            self.moment[i] += y * x[i];
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertRuleKind {
    Mean,
    Vaw(FeatureMap),
}

impl ExpertRuleKind {
    pub fn vaw(shape: &GridShape, degree: u32) -> Self {
        ExpertRuleKind::Vaw(FeatureMap::new(shape, degree))
    }

    pub fn fresh_state(&self) -> ExpertState {
        match self {
            ExpertRuleKind::Mean => ExpertState::Mean(MeanExpertState::new()),
            ExpertRuleKind::Vaw(map) => ExpertState::Vaw(VawExpertState::new(map.len())),
        }
    }

    /// Short label used in reports: `mean` or `vaw:<degree>`.
    pub fn label(&self) -> String {
        match self {
            ExpertRuleKind::Mean => "mean".into(),
            ExpertRuleKind::Vaw(map) => format!("vaw:{}", map.degree()),
        }
    }

    pub(crate) fn featurize_into(&self, coords: &[usize], out: &mut Vec<f64>) {
        match self {
            ExpertRuleKind::Mean => out.clear(),
            ExpertRuleKind::Vaw(map) => map.featurize_into(coords, out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertState {
    Mean(MeanExpertState),
    Vaw(VawExpertState),
}

impl ExpertState {
    /// `features` is ignored by the mean rule.
    pub fn predict(&self, features: &[f64], scratch: &mut VawScratch) -> Result<f64> {
        match self {
            ExpertState::Mean(s) => Ok(s.predict()),
            ExpertState::Vaw(s) => s.predict_with(features, scratch),
        }
    }

    pub fn update(&mut self, features: &[f64], y: f64) -> Result<()> {
        match self {
            ExpertState::Mean(s) => s.update(y),
            ExpertState::Vaw(s) => s.update(features, y),
        }
    }
}
