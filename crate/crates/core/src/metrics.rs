//! Global and regional mean squared error, and the per-partition regret of
//! standalone experts against a comparator signal.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{ExpertRuleKind, VawScratch};
use crate::lattice::{DyadicInterval, DyadicRect, GridShape, LatticePoint, Ordering};
use crate::signals::Signal;

/// Axis-aligned box `[lo_i, hi_i]` (inclusive, 1-based) per coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl Rect {
    pub fn new(lo: impl Into<Vec<usize>>, hi: impl Into<Vec<usize>>) -> Self {
        Rect {
            lo: lo.into(),
            hi: hi.into(),
        }
    }

    pub fn interval(lo: usize, hi: usize) -> Self {
        Rect::new([lo], [hi])
    }

    fn contains_coords(&self, coords: &[usize]) -> bool {
        coords
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(u, (lo, hi))| (lo..=hi).contains(&u))
    }

    fn validate(&self, shape: &GridShape) -> Result<()> {
        if self.lo.len() != shape.d() || self.hi.len() != shape.d() {
            return Err(Error::InvalidArgument(format!(
                "rectangle has wrong dimension for {shape}"
            )));
        }
        for (&lo, &hi) in self.lo.iter().zip(&self.hi) {
            if lo < 1 || lo > hi || hi > shape.n() {
                return Err(Error::InvalidArgument(format!(
                    "rectangle side [{lo}, {hi}] is empty or outside [1, {}]",
                    shape.n()
                )));
            }
        }
        Ok(())
    }
}

impl From<&DyadicRect> for Rect {
    fn from(r: &DyadicRect) -> Self {
        Rect {
            lo: r.intervals.iter().map(|iv| iv.lo() + 1).collect(),
            hi: r.intervals.iter().map(DyadicInterval::hi).collect(),
        }
    }
}

/// A nonempty set of grid points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Rect(Rect),
    Dyadic(DyadicRect),
    Points(Vec<LatticePoint>),
}

impl Region {
    pub fn full(shape: &GridShape) -> Self {
        Region::Dyadic(shape.full_rect())
    }

    /// The `(n / side)^d` dyadic squares of the given side length.
    pub fn dyadic_squares(shape: &GridShape, side: usize) -> Result<Vec<Region>> {
        if !side.is_power_of_two() || side > shape.n() {
            return Err(Error::InvalidArgument(format!(
                "square side {side} is not a power of two at most {}",
                shape.n()
            )));
        }
        let scale = side.trailing_zeros();
        let per_axis = shape.n() / side;
        let count = per_axis.pow(shape.d() as u32);
        Ok((0..count)
            .map(|mut k| {
                let mut intervals = vec![DyadicInterval::new(scale, 1); shape.d()];
                for iv in intervals.iter_mut().rev() {
                    iv.position = k % per_axis + 1;
                    k /= per_axis;
                }
                Region::Dyadic(DyadicRect::new(intervals))
            })
            .collect())
    }

    /// Linear indices of the members in ascending order.
    pub fn indices(&self, shape: &GridShape) -> Result<Vec<usize>> {
        let out: Vec<usize> = match self {
            Region::Rect(r) => {
                r.validate(shape)?;
                (0..shape.size())
                    .filter(|&i| r.contains_coords(&shape.point(i).expect("in range").coords))
                    .collect()
            }
            Region::Dyadic(r) => {
                let id = shape.expert_id(r)?;
                let r = shape.rect(id)?;
                (0..shape.size())
                    .filter(|&i| r.contains_coords(&shape.point(i).expect("in range").coords))
                    .collect()
            }
            Region::Points(points) => {
                let set = points
                    .iter()
                    .map(|p| shape.linear_index(p))
                    .collect::<Result<BTreeSet<usize>>>()?;
                set.into_iter().collect()
            }
        };
        if out.is_empty() {
            return Err(Error::InvalidArgument("region is empty".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Rect(r) => {
                for (i, (lo, hi)) in r.lo.iter().zip(&r.hi).enumerate() {
                    if i > 0 {
                        write!(f, "x")?;
                    }
                    write!(f, "[{lo},{hi}]")?;
                }
                Ok(())
            }
            Region::Dyadic(r) => write!(f, "{r}"),
            Region::Points(p) => write!(f, "points[{}]", p.len()),
        }
    }
}

fn check_same_shape(a: &Signal, b: &Signal) -> Result<()> {
    if a.shape != b.shape || a.values.len() != b.values.len() {
        return Err(Error::InvalidArgument(format!(
            "signals over {} and {} differ in shape",
            a.shape, b.shape
        )));
    }
    Ok(())
}

/// Mean squared error over the given linear indices.
pub fn mse_at(pred: &[f64], truth: &[f64], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("region is empty".into()));
    }
    let sum: f64 = indices.iter().map(|&i| (pred[i] - truth[i]).powi(2)).sum();
    Ok(sum / indices.len() as f64)
}

pub fn mse(pred: &Signal, truth: &Signal, region: &Region) -> Result<f64> {
    check_same_shape(pred, truth)?;
    mse_at(&pred.values, &truth.values, &region.indices(&pred.shape)?)
}

/// MSE over the whole grid.
pub fn global_mse(pred: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), truth.len());
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    sum / pred.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub region: String,
    pub size: usize,
    pub mse: f64,
}

/// One row per region, in input order.
pub fn regional_report(pred: &Signal, truth: &Signal, regions: &[Region]) -> Result<Vec<RegionRow>> {
    check_same_shape(pred, truth)?;
    regions
        .par_iter()
        .map(|region| {
            let indices = region.indices(&pred.shape)?;
            Ok(RegionRow {
                region: region.to_string(),
                size: indices.len(),
                mse: mse_at(&pred.values, &truth.values, &indices)?,
            })
        })
        .collect()
}

/// Comparator values on one piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Constant(f64),
    /// Coefficients on the regression rule's feature map.
    Polynomial(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub rect: Rect,
    pub comparator: Comparator,
}

/// Disjoint rectangles with comparator values, covering a region exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectPartition {
    shape: GridShape,
    pieces: Vec<Piece>,
    members: Vec<Vec<usize>>,
}

impl RectPartition {
    pub fn new(shape: GridShape, region: &Region, pieces: Vec<Piece>) -> Result<Self> {
        let target = region.indices(&shape)?;
        let mut owner = vec![usize::MAX; shape.size()];
        let mut members = Vec::with_capacity(pieces.len());
        for (k, piece) in pieces.iter().enumerate() {
            let idx = Region::Rect(piece.rect.clone()).indices(&shape)?;
            for &i in &idx {
                if owner[i] != usize::MAX {
                    return Err(Error::Validation(format!(
                        "pieces {} and {k} overlap at {}",
                        owner[i],
                        shape.point(i)?
                    )));
                }
                owner[i] = k;
            }
            members.push(idx);
        }
        let covered = owner.iter().filter(|&&o| o != usize::MAX).count();
        if covered != target.len() || target.iter().any(|&i| owner[i] == usize::MAX) {
            return Err(Error::Validation("pieces do not cover exactly the region".into()));
        }
        Ok(RectPartition { shape, pieces, members })
    }

    /// Partition whose comparator on each piece is the mean of `y` there.
    pub fn with_piece_means(shape: GridShape, region: &Region, rects: Vec<Rect>, y: &Signal) -> Result<Self> {
        let pieces = rects
            .into_iter()
            .map(|rect| {
                let idx = Region::Rect(rect.clone()).indices(&shape)?;
                let mean = idx.iter().map(|&i| y.values[i]).sum::<f64>() / idx.len() as f64;
                Ok(Piece {
                    rect,
                    comparator: Comparator::Constant(mean),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RectPartition::new(shape, region, pieces)
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

/// Excess squared error of each piece's standalone expert, replayed over the
/// points of the piece in reveal order, relative to the comparator values,
/// summed over pieces.
pub fn partition_regret(
    y: &Signal,
    partition: &RectPartition,
    rule: &ExpertRuleKind,
    ordering: &Ordering,
) -> Result<f64> {
    let shape = partition.shape;
    if y.shape != shape || *ordering.shape() != shape {
        return Err(Error::Protocol(format!(
            "ordering over {} does not cover a partition over {shape}",
            ordering.shape()
        )));
    }
    let mut piece_of = vec![usize::MAX; shape.size()];
    for (k, idx) in partition.members.iter().enumerate() {
        for &i in idx {
            piece_of[i] = k;
        }
    }
    let mut states: Vec<_> = partition.pieces.iter().map(|_| rule.fresh_state()).collect();
    let mut online_loss = vec![0.0; partition.len()];
    let mut features = Vec::new();
    let mut scratch = VawScratch::default();
    for &i in ordering.indices() {
        let k = piece_of[i];
        if k == usize::MAX {
            continue;
        }
        let p = shape.point(i)?;
        rule.featurize_into(&p.coords, &mut features);
        let pred = states[k].predict(&features, &mut scratch)?;
        online_loss[k] += (y.values[i] - pred).powi(2);
        states[k].update(&features, y.values[i])?;
    }

    let mut total = 0.0;
    for (k, piece) in partition.pieces.iter().enumerate() {
        let comparator_loss: f64 = match &piece.comparator {
            Comparator::Constant(c) => partition.members[k].iter().map(|&i| (y.values[i] - c).powi(2)).sum(),
            Comparator::Polynomial(coef) => {
                let ExpertRuleKind::Vaw(map) = rule else {
                    return Err(Error::InvalidArgument(
                        "polynomial comparator needs the regression rule".into(),
                    ));
                };
                if coef.len() != map.len() {
                    return Err(Error::InvalidArgument(format!(
                        "comparator has {} coefficients, feature map has {}",
                        coef.len(),
                        map.len()
                    )));
                }
                partition.members[k]
                    .iter()
                    .map(|&i| {
                        let x = map.featurize(&shape.point(i).expect("in range"));
                        let fit: f64 = x.iter().zip(coef).map(|(a, b)| a * b).sum();
                        (y.values[i] - fit).powi(2)
                    })
                    .sum()
            }
        };
        total += online_loss[k] - comparator_loss;
    }
    Ok(total)
}
