//! Sleeping-experts exponential-weights aggregation with truncation.
//!
//! Every dyadic rectangle of the grid is an expert. In round `t` the point
//! `p = rho(t)` is revealed; the active set `A_t` holds the rectangles that
//! contain `p` and already contain an earlier revealed point (in round 1,
//! every rectangle containing `p`). The learner predicts the weighted average
//! of the active experts' predictions clamped to `[-lambda, lambda]`, then
//! receives the label and multiplies each active weight by
//! `exp(-alpha * loss)` with `alpha = 1 / (8 lambda^2)`, rescaling so that the
//! total mass of `A_t` is unchanged. Weights of experts outside `A_t` do not
//! move.
//!
//! Weights are kept in the log domain. Expert state is materialized lazily on
//! the first label an expert receives; an expert without state predicts 0 and
//! holds the initial weight `1 / |S|`.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{ExpertRuleKind, ExpertState, VawScratch};
use crate::lattice::{ExpertId, GridShape, LatticePoint, Ordering};

/// Clamp `x` into `[-lambda, lambda]`.
#[inline]
pub fn truncate(lambda: f64, x: f64) -> f64 {
    x.clamp(-lambda, lambda)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    shape: GridShape,
    rule: ExpertRuleKind,
    lambda: f64,
    /// Record per-expert weights and predictions in every [`RoundOutcome`].
    #[serde(default)]
    pub diagnostics: bool,
}

impl AggregatorConfig {
    pub fn new(shape: GridShape, rule: ExpertRuleKind, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "truncation level must be positive and finite, got {lambda}"
            )));
        }
        if let ExpertRuleKind::Vaw(map) = &rule {
            let d = map.exponents().first().map_or(0, Vec::len);
            if d != shape.d() {
                return Err(Error::Config(format!(
                    "feature map is {d}-dimensional, grid is {}-dimensional",
                    shape.d()
                )));
            }
        }
        Ok(AggregatorConfig {
            shape,
            rule,
            lambda,
            diagnostics: false,
        })
    }

    pub fn with_diagnostics(mut self, on: bool) -> Self {
        self.diagnostics = on;
        self
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn rule(&self) -> &ExpertRuleKind {
        &self.rule
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Learning rate `1 / (8 lambda^2)`.
    pub fn alpha(&self) -> f64 {
        1.0 / (8.0 * self.lambda * self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertDiagnostic {
    pub id: ExpertId,
    /// Weight normalized over the active set.
    pub weight: f64,
    /// Untruncated expert prediction.
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub t: usize,
    pub point: LatticePoint,
    pub prediction: f64,
    pub active: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experts: Option<Vec<ExpertDiagnostic>>,
}

/// Result of absorbing a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UpdateReport {
    /// The active mass underflowed and weights were reset to uniform over
    /// the active set.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub point: LatticePoint,
    pub prediction: f64,
    pub label: f64,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub shape: GridShape,
    pub rounds: Vec<RoundRecord>,
    /// Rounds in which the weight update fell back to uniform weights.
    #[serde(default)]
    pub degenerate_rounds: Vec<usize>,
}

impl PredictionTrace {
    fn new(shape: GridShape) -> Self {
        PredictionTrace {
            shape,
            rounds: Vec::with_capacity(shape.size()),
            degenerate_rounds: Vec::new(),
        }
    }

    /// Predictions laid out by linear grid index. Unrevealed points hold NaN.
    pub fn predictions_by_index(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.shape.size()];
        for r in &self.rounds {
            let i = self.shape.linear_index_unchecked(&r.point.coords);
            out[i] = r.prediction;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSnapshot {
    pub id: ExpertId,
    pub rect: String,
    pub log_weight: f64,
    pub state: ExpertState,
}

#[derive(Debug, Clone)]
struct Slot {
    log_weight: f64,
    seen: bool,
    state: ExpertState,
}

#[derive(Debug, Clone, Copy)]
struct ActiveEntry {
    id: ExpertId,
    log_weight: f64,
    truncated: f64,
}

/// One aggregation run over a grid.
#[derive(Debug, Clone)]
pub struct Aggregator {
    config: AggregatorConfig,
    initial_log_weight: f64,
    slots: FxHashMap<ExpertId, Slot>,
    revealed: Vec<bool>,
    round: usize,
    pending: Option<usize>,
    containing: Vec<ExpertId>,
    features: Vec<f64>,
    active: Vec<ActiveEntry>,
    scratch: VawScratch,
}

impl Aggregator {
    pub fn new(config: AggregatorConfig) -> Self {
        let shape = config.shape;
        Aggregator {
            initial_log_weight: -(shape.num_experts() as f64).ln(),
            slots: FxHashMap::default(),
            revealed: vec![false; shape.size()],
            round: 0,
            pending: None,
            containing: Vec::with_capacity(shape.experts_per_point()),
            features: Vec::new(),
            active: Vec::with_capacity(shape.experts_per_point()),
            scratch: VawScratch::default(),
            config,
        }
    }

    pub fn config(&self) -> &AggregatorConfig {
        &self.config
    }

    /// Number of completed rounds.
    pub fn rounds_completed(&self) -> usize {
        self.round
    }

    pub fn is_complete(&self) -> bool {
        self.round == self.config.shape.size()
    }

    /// Number of experts that have received at least one label.
    pub fn touched_experts(&self) -> usize {
        self.slots.len()
    }

    pub fn initial_log_weight(&self) -> f64 {
        self.initial_log_weight
    }

    pub fn log_weight(&self, id: ExpertId) -> f64 {
        self.slots.get(&id).map_or(self.initial_log_weight, |s| s.log_weight)
    }

    pub fn weight(&self, id: ExpertId) -> f64 {
        self.log_weight(id).exp()
    }

    /// Whether the expert has absorbed any label.
    pub fn seen(&self, id: ExpertId) -> bool {
        self.slots.get(&id).is_some_and(|s| s.seen)
    }

    pub fn expert_state(&self, id: ExpertId) -> Option<&ExpertState> {
        self.slots.get(&id).map(|s| &s.state)
    }

    /// Weights and sufficient statistics of every touched expert, by id.
    pub fn snapshot(&self) -> Vec<ExpertSnapshot> {
        let mut out: Vec<ExpertSnapshot> = self
            .slots
            .iter()
            .map(|(&id, slot)| ExpertSnapshot {
                id,
                rect: self.config.shape.rect(id).map(|r| r.to_string()).unwrap_or_default(),
                log_weight: slot.log_weight,
                state: slot.state.clone(),
            })
            .collect();
        out.sort_unstable_by_key(|e| e.id);
        out
    }

    pub fn is_revealed(&self, p: &LatticePoint) -> bool {
        self.config.shape.linear_index(p).is_ok_and(|i| self.revealed[i])
    }

    /// Steps 1-3 of a round: activate experts and predict at `p`.
    pub fn step_predict(&mut self, p: &LatticePoint) -> Result<RoundOutcome> {
        if self.pending.is_some() {
            return Err(Error::Protocol(
                "prediction requested before the previous label was supplied".into(),
            ));
        }
        let shape = self.config.shape;
        let index = shape.linear_index(p)?;
        if self.revealed[index] {
            return Err(Error::Protocol(format!("point {p} was already revealed")));
        }
        let first_round = self.round == 0;
        let lambda = self.config.lambda;

        shape.containing_ids_into(&p.coords, &mut self.containing);
        self.config.rule.featurize_into(&p.coords, &mut self.features);
        self.active.clear();
        let mut diagnostics = self.config.diagnostics.then(Vec::new);
        for &id in &self.containing {
            let slot = self.slots.get(&id);
            let seen = slot.is_some_and(|s| s.seen);
            if !(seen || first_round) {
                continue;
            }
            let raw = match slot {
                Some(s) => s.state.predict(&self.features, &mut self.scratch)?,
                None => 0.0,
            };
            self.active.push(ActiveEntry {
                id,
                log_weight: slot.map_or(self.initial_log_weight, |s| s.log_weight),
                truncated: truncate(lambda, raw),
            });
            if let Some(d) = diagnostics.as_mut() {
                d.push(ExpertDiagnostic {
                    id,
                    weight: 0.0,
                    prediction: raw,
                });
            }
        }
        // The full-grid rectangle contains every point and is seen from round 2 on.
        assert!(!self.active.is_empty(), "empty active set in round {}", self.round + 1);

        let lse = log_sum_exp(self.active.iter().map(|e| e.log_weight));
        let prediction = if lse.is_finite() {
            self.active
                .iter()
                .map(|e| (e.log_weight - lse).exp() * e.truncated)
                .sum::<f64>()
        } else {
            self.active.iter().map(|e| e.truncated).sum::<f64>() / self.active.len() as f64
        };
        if let Some(d) = diagnostics.as_mut() {
            for (diag, e) in d.iter_mut().zip(&self.active) {
                diag.weight = if lse.is_finite() {
                    (e.log_weight - lse).exp()
                } else {
                    1.0 / self.active.len() as f64
                };
            }
        }

        self.pending = Some(index);
        Ok(RoundOutcome {
            t: self.round + 1,
            point: p.clone(),
            prediction: truncate(lambda, prediction),
            active: self.active.len(),
            experts: diagnostics,
        })
    }

    /// Step 4 of a round: reweight the active experts and let every expert
    /// containing `p` absorb the label.
    pub fn step_update(&mut self, p: &LatticePoint, y: f64) -> Result<UpdateReport> {
        let index = self.config.shape.linear_index(p)?;
        match self.pending {
            Some(i) if i == index => {}
            Some(_) => {
                return Err(Error::Protocol(format!(
                    "label supplied for {p}, which is not the point of the current round"
                )))
            }
            None => return Err(Error::Protocol(format!("label supplied for {p} without a prediction"))),
        }
        if !y.is_finite() {
            return Err(Error::Data(format!("label at {p} is not finite: {y}")));
        }
        let lambda = self.config.lambda;
        let alpha = self.config.alpha();
        let target = truncate(lambda, y);

        let before = log_sum_exp(self.active.iter().map(|e| e.log_weight));
        let shifted = |e: &ActiveEntry| {
            let loss = (target - e.truncated).powi(2);
            e.log_weight - alpha * loss
        };
        let after = log_sum_exp(self.active.iter().map(shifted));
        let mut report = UpdateReport::default();
        let updated: Vec<(ExpertId, f64)> = if before.is_finite() && after.is_finite() {
            let shift = before - after;
            self.active.iter().map(|e| (e.id, shifted(e) + shift)).collect()
        } else {
            report.degenerate = true;
            let uniform = if before.is_finite() {
                before - (self.active.len() as f64).ln()
            } else {
                self.initial_log_weight
            };
            self.active.iter().map(|e| (e.id, uniform)).collect()
        };

        for &id in &self.containing {
            let rule = &self.config.rule;
            let initial = self.initial_log_weight;
            let slot = self.slots.entry(id).or_insert_with(|| Slot {
                log_weight: initial,
                seen: false,
                state: rule.fresh_state(),
            });
            slot.state.update(&self.features, y)?;
            slot.seen = true;
        }
        for (id, lw) in updated {
            self.slots
                .get_mut(&id)
                .expect("active experts contain the revealed point")
                .log_weight = lw;
        }

        self.revealed[index] = true;
        self.round += 1;
        self.pending = None;
        Ok(report)
    }
}

/// Chooses points from the history of the run and supplies their labels.
///
/// The point of round `t` may depend on everything revealed before `t`; the
/// label is requested only after the learner has committed to a prediction.
pub trait Adversary {
    fn next_point(&mut self, history: &[RoundRecord]) -> Option<LatticePoint>;
    fn label(&mut self, point: &LatticePoint) -> Option<f64>;
}

/// A finished run: the per-round trace and the final state.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: PredictionTrace,
    pub state: Aggregator,
}

/// Plays all `N` rounds against an adversary.
pub fn run_adaptive(config: AggregatorConfig, adversary: &mut dyn Adversary) -> Result<RunOutput> {
    let shape = config.shape;
    let mut agg = Aggregator::new(config);
    let mut trace = PredictionTrace::new(shape);
    while !agg.is_complete() {
        let Some(point) = adversary.next_point(&trace.rounds) else {
            return Err(Error::IncompleteRun {
                expected: shape.size(),
                partial: Box::new(trace),
            });
        };
        let outcome = agg.step_predict(&point)?;
        let Some(label) = adversary.label(&point) else {
            return Err(Error::IncompleteRun {
                expected: shape.size(),
                partial: Box::new(trace),
            });
        };
        if agg.step_update(&point, label)?.degenerate {
            trace.degenerate_rounds.push(outcome.t);
        }
        trace.rounds.push(RoundRecord {
            t: outcome.t,
            point,
            prediction: outcome.prediction,
            label,
            active: outcome.active,
        });
    }
    Ok(RunOutput { trace, state: agg })
}

struct FixedOrder<'a, I> {
    ordering: &'a Ordering,
    labels: I,
}

impl<I: Iterator<Item = f64>> Adversary for FixedOrder<'_, I> {
    fn next_point(&mut self, history: &[RoundRecord]) -> Option<LatticePoint> {
        let &index = self.ordering.indices().get(history.len())?;
        self.ordering.shape().point(index).ok()
    }

    fn label(&mut self, _point: &LatticePoint) -> Option<f64> {
        self.labels.next()
    }
}

/// Runs over a fixed ordering with labels supplied in reveal order.
pub fn run(config: AggregatorConfig, ordering: &Ordering, labels: impl IntoIterator<Item = f64>) -> Result<RunOutput> {
    if ordering.shape() != config.shape() {
        return Err(Error::Protocol(format!(
            "ordering is over {}, aggregator over {}",
            ordering.shape(),
            config.shape()
        )));
    }
    run_adaptive(
        config,
        &mut FixedOrder {
            ordering,
            labels: labels.into_iter(),
        },
    )
}

/// Runs over a fixed ordering with labels given as a grid array in linear
/// index order.
pub fn run_on_grid(config: AggregatorConfig, ordering: &Ordering, y: &[f64]) -> Result<RunOutput> {
    if y.len() != config.shape().size() {
        return Err(Error::InvalidArgument(format!(
            "label array has {} entries, grid has {}",
            y.len(),
            config.shape().size()
        )));
    }
    run(config, ordering, ordering.indices().iter().map(|&i| y[i]))
}
