//! Slow reference implementations for cross-checking the engine.
//!
//! Nothing here is incremental: expert predictions are recomputed from the
//! full revealed history every round, weights live in the linear domain with
//! explicit renormalization, and linear systems are solved by Gaussian
//! elimination rather than Cholesky.

use serde::{Deserialize, Serialize};

use crate::aggregator::{truncate, AggregatorConfig};
use crate::error::{Error, Result};
use crate::experts::ExpertRuleKind;
use crate::lattice::{enumerate_experts, DyadicRect, ExpertId, GridShape, LatticePoint, Ordering};

/// Largest grid [`naive_replay`] accepts.
pub const MAX_ORACLE_POINTS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRound {
    pub t: usize,
    pub point: LatticePoint,
    pub label: f64,
    /// Untruncated predictions of every expert containing the point.
    pub expert_predictions: Vec<(ExpertId, f64)>,
    pub active: Vec<ExpertId>,
    /// Weights normalized over `active`, same order.
    pub weights: Vec<f64>,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTrace {
    pub shape: GridShape,
    pub rounds: Vec<OracleRound>,
    /// Linear-domain weights of all experts after the last round, by id.
    pub final_weights: Vec<f64>,
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<f64>, dim: usize, mut b: Vec<f64>) -> Option<Vec<f64>> {
    for col in 0..dim {
        let pivot = (col..dim).max_by(|&i, &j| {
            a[i * dim + col]
                .abs()
                .partial_cmp(&a[j * dim + col].abs())
                .expect("finite entries")
        })?;
        if a[pivot * dim + col] == 0.0 {
            return None;
        }
        if pivot != col {
            for k in 0..dim {
                a.swap(pivot * dim + k, col * dim + k);
            }
            b.swap(pivot, col);
        }
        for row in (col + 1)..dim {
            let factor = a[row * dim + col] / a[col * dim + col];
            for k in col..dim {
                a[row * dim + k] -= factor * a[col * dim + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; dim];
    for row in (0..dim).rev() {
        let mut s = b[row];
        for k in (row + 1)..dim {
            s -= a[row * dim + k] * x[k];
        }
        x[row] = s / a[row * dim + row];
    }
    Some(x)
}

/// Prediction of a fresh expert at `p` after seeing `history`.
fn expert_prediction(rule: &ExpertRuleKind, history: &[(LatticePoint, f64)], p: &LatticePoint) -> Result<f64> {
    if history.is_empty() {
        return Ok(0.0);
    }
    match rule {
        ExpertRuleKind::Mean => Ok(history.iter().map(|(_, y)| y).sum::<f64>() / history.len() as f64),
        ExpertRuleKind::Vaw(map) => {
            let dim = map.len();
            let mut a = vec![0.0; dim * dim];
            for i in 0..dim {
                a[i * dim + i] = 1.0;
            }
            let mut b = vec![0.0; dim];
            let x_now = map.featurize(p);
            let mut add = |x: &[f64], y: Option<f64>| {
                for i in 0..dim {
                    for j in 0..dim {
                        a[i * dim + j] += x[i] * x[j];
                    }
                    if let Some(y) = y {
                        b[i] += y * x[i];
                    }
                }
            };
            for (q, y) in history {
                add(&map.featurize(q), Some(*y));
            }
            add(&x_now, None);
            let beta = solve_dense(a, dim, b).ok_or_else(|| Error::Numeric("singular regularized gram".into()))?;
            Ok(beta.iter().zip(&x_now).map(|(b, x)| b * x).sum())
        }
    }
}

/// Recomputes the aggregation from scratch each round.
///
/// `labels` are given in reveal order.
pub fn naive_replay(config: &AggregatorConfig, ordering: &Ordering, labels: &[f64]) -> Result<OracleTrace> {
    let shape = *config.shape();
    if shape.size() > MAX_ORACLE_POINTS {
        return Err(Error::TooLarge(format!(
            "{} points exceeds the oracle limit of {MAX_ORACLE_POINTS}",
            shape.size()
        )));
    }
    if labels.len() != shape.size() || ordering.len() != shape.size() {
        return Err(Error::InvalidArgument("ordering and labels must cover the grid".into()));
    }
    let rule = config.rule();
    let lambda = config.lambda();
    let alpha = config.alpha();
    let experts = enumerate_experts(&shape);
    let mut weights = vec![1.0 / experts.len() as f64; experts.len()];
    let mut history: Vec<(LatticePoint, f64)> = Vec::new();
    let mut rounds = Vec::with_capacity(shape.size());

    for (t, (p, &y)) in ordering.points().zip(labels).enumerate() {
        let mut expert_predictions = Vec::new();
        let mut active = Vec::new();
        let mut truncated = Vec::new();
        for (k, rect) in experts.iter().enumerate() {
            if !rect.contains(&p) {
                continue;
            }
            let own: Vec<(LatticePoint, f64)> = history.iter().filter(|(q, _)| rect.contains(q)).cloned().collect();
            let raw = expert_prediction(rule, &own, &p)?;
            expert_predictions.push((ExpertId(k as u64), raw));
            if t == 0 || !own.is_empty() {
                active.push(k);
                truncated.push(truncate(lambda, raw));
            }
        }
        let mass: f64 = active.iter().map(|&k| weights[k]).sum();
        let normalized: Vec<f64> = active.iter().map(|&k| weights[k] / mass).collect();
        let prediction: f64 = normalized.iter().zip(&truncated).map(|(w, v)| w * v).sum();

        let target = truncate(lambda, y);
        let factors: Vec<f64> = truncated
            .iter()
            .map(|v| (-alpha * (target - v).powi(2)).exp())
            .collect();
        let denom: f64 = active.iter().zip(&factors).map(|(&k, f)| weights[k] * f).sum();
        for (&k, f) in active.iter().zip(&factors) {
            weights[k] = weights[k] * f / denom * mass;
        }

        history.push((p.clone(), y));
        rounds.push(OracleRound {
            t: t + 1,
            point: p,
            label: y,
            expert_predictions,
            active: active.iter().map(|&k| ExpertId(k as u64)).collect(),
            weights: normalized,
            prediction,
        });
    }
    Ok(OracleTrace {
        shape,
        rounds,
        final_weights: weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertComparisonCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Absolute slack allowed when comparing the two sides.
pub const EXPERT_COMPARISON_SLACK: f64 = 1e-9;

/// Evaluates both sides of the per-expert comparison
///
/// `sum_S (y - yhat)^2 <= sum_S (y - yhat_S)^2 + 8 l^2 log(e |S|)
///     + 2 |y_S - clamp(y_S)|^2 + 4 l^2 #{s in S: |y_s| > l}`
///
/// from a replay trace. `y` is indexed by linear grid index.
pub fn check_expert_comparison(
    trace: &OracleTrace,
    y: &[f64],
    expert: &DyadicRect,
    lambda: f64,
) -> Result<ExpertComparisonCheck> {
    let shape = trace.shape;
    let id = shape.expert_id(expert)?;
    let num_experts = shape.num_experts() as f64;
    let mut lhs = 0.0;
    let mut expert_loss = 0.0;
    let mut clip_loss = 0.0;
    let mut exceed = 0usize;
    let mut covered = 0usize;
    for round in &trace.rounds {
        if !expert.contains(&round.point) {
            continue;
        }
        covered += 1;
        let ys = y[shape.linear_index(&round.point)?];
        let own = round
            .expert_predictions
            .iter()
            .find(|(e, _)| *e == id)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::InvalidArgument(format!("trace lacks expert {id:?}")))?;
        lhs += (ys - round.prediction).powi(2);
        expert_loss += (ys - own).powi(2);
        clip_loss += (ys - truncate(lambda, ys)).powi(2);
        if ys.abs() > lambda {
            exceed += 1;
        }
    }
    if covered != expert.volume() {
        return Err(Error::InvalidArgument(format!(
            "trace covers {covered} of {} points of {expert}",
            expert.volume()
        )));
    }
    let l2 = lambda * lambda;
    let rhs =
        expert_loss + 8.0 * l2 * (std::f64::consts::E * num_experts).ln() + 2.0 * clip_loss + 4.0 * l2 * exceed as f64;
    Ok(ExpertComparisonCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + EXPERT_COMPARISON_SLACK,
    })
}

/// `inf_beta sum_t (z_t - beta . x_t)^2 + |beta|^2`, attained at the ridge
/// solution `(I + X^T X)^{-1} X^T z`.
pub fn exact_ridge_infimum(xs: &[Vec<f64>], zs: &[f64]) -> Result<f64> {
    if xs.len() != zs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature vectors for {} labels",
            xs.len(),
            zs.len()
        )));
    }
    let Some(dim) = xs.first().map(Vec::len) else {
        return Ok(0.0);
    };
    if xs.iter().any(|x| x.len() != dim) {
        return Err(Error::InvalidArgument("ragged feature vectors".into()));
    }
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        a[i * dim + i] = 1.0;
    }
    let mut b = vec![0.0; dim];
    for (x, &z) in xs.iter().zip(zs) {
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] += x[i] * x[j];
            }
            b[i] += z * x[i];
        }
    }
    let beta = solve_dense(a, dim, b).ok_or_else(|| Error::Numeric("singular ridge system".into()))?;
    Ok(ridge_objective(xs, zs, &beta))
}

pub fn ridge_objective(xs: &[Vec<f64>], zs: &[f64], beta: &[f64]) -> f64 {
    let fit: f64 = xs
        .iter()
        .zip(zs)
        .map(|(x, z)| (z - x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum();
    fit + beta.iter().map(|b| b * b).sum::<f64>()
}

/// Excess loss of the running mean (predicting 0 first) over the best
/// constant, `|z - zhat|^2 - |z - mean(z)|^2`.
pub fn online_mean_excess_loss(zs: &[f64]) -> f64 {
    if zs.is_empty() {
        return 0.0;
    }
    let mut online = 0.0;
    let mut sum = 0.0;
    for (t, &z) in zs.iter().enumerate() {
        let pred = if t == 0 { 0.0 } else { sum / t as f64 };
        online += (z - pred).powi(2);
        sum += z;
    }
    let mean = sum / zs.len() as f64;
    online - zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>()
}

/// VAW cumulative squared loss minus the exact ridge infimum.
pub fn vaw_excess_loss(xs: &[Vec<f64>], zs: &[f64]) -> Result<f64> {
    let mut online = 0.0;
    for t in 0..zs.len() {
        let dim = xs[t].len();
        let mut a = vec![0.0; dim * dim];
        let mut b = vec![0.0; dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        for s in 0..=t {
            for i in 0..dim {
                for j in 0..dim {
                    a[i * dim + j] += xs[s][i] * xs[s][j];
                }
                if s < t {
                    b[i] += zs[s] * xs[s][i];
                }
            }
        }
        let beta = solve_dense(a, dim, b).ok_or_else(|| Error::Numeric("singular".into()))?;
        let pred: f64 = beta.iter().zip(&xs[t]).map(|(b, x)| b * x).sum();
        online += (zs[t] - pred).powi(2);
    }
    Ok(online - exact_ridge_infimum(xs, zs)?)
}
