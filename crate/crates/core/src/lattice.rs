//! Grid geometry: lattice points, dyadic intervals and rectangles, and reveal
//! orderings.
//!
//! Points carry 1-based coordinates in `[1, n]^d`. Grid arrays are stored in
//! lexicographic order with the first coordinate varying slowest, so the
//! linear index of `(u_1, .., u_d)` is `sum_i (u_i - 1) * n^(d-1-i)`.
//!
//! # Expert identifiers
//!
//! Each dyadic interval `((a-1)2^s, a 2^s]` on an axis of length `n = 2^k`
//! gets the per-axis ordinal `2n - 2^(k+1-s) + (a - 1)`: all scale-0 intervals
//! first, then scale 1, and so on up to the full axis with ordinal `2n - 2`.
//! A rectangle's [`ExpertId`] is the mixed-radix number (base `2n - 1`) formed
//! by its per-axis ordinals, first axis most significant. Identifiers are
//! therefore dense in `[0, (2n-1)^d)`, coincide with the position in
//! [`enumerate_experts`], and depend only on the grid shape.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawShape", into = "RawShape")]
pub struct GridShape {
    d: usize,
    n: usize,
    log2_n: u32,
    size: usize,
}

#[derive(Serialize, Deserialize)]
struct RawShape {
    d: usize,
    n: usize,
}

impl TryFrom<RawShape> for GridShape {
    type Error = Error;

    fn try_from(raw: RawShape) -> Result<Self> {
        GridShape::new(raw.d, raw.n)
    }
}

impl From<GridShape> for RawShape {
    fn from(shape: GridShape) -> Self {
        RawShape { d: shape.d, n: shape.n }
    }
}

impl GridShape {
    /// Grid `[n]^d`. `n` must be a power of two and `d` positive.
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension d must be at least 1".into()));
        }
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Config(format!("side length n = {n} is not a power of two")));
        }
        let size = u32::try_from(d)
            .ok()
            .and_then(|d| n.checked_pow(d))
            .ok_or_else(|| Error::Config(format!("grid {n}^{d} overflows")))?;
        let axis = 2 * n - 1;
        if u32::try_from(d)
            .ok()
            .and_then(|d| (axis as u64).checked_pow(d))
            .is_none()
        {
            return Err(Error::Config(format!(
                "expert family (2*{n}-1)^{d} overflows 64-bit identifiers"
            )));
        }
        Ok(GridShape {
            d,
            n,
            log2_n: n.trailing_zeros(),
            size,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `k` with `n = 2^k`.
    pub fn log2_n(&self) -> u32 {
        self.log2_n
    }

    /// Total number of lattice points `N = n^d`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of dyadic intervals on one axis, `2n - 1`.
    pub fn intervals_per_axis(&self) -> usize {
        2 * self.n - 1
    }

    /// Exact size of the expert family, `(2n - 1)^d`.
    pub fn num_experts(&self) -> u64 {
        (self.intervals_per_axis() as u64).pow(self.d as u32)
    }

    /// Number of dyadic rectangles containing any fixed point, `(k + 1)^d`.
    pub fn experts_per_point(&self) -> usize {
        (self.log2_n as usize + 1).pow(self.d as u32)
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        p.coords.len() == self.d && p.coords.iter().all(|&u| u >= 1 && u <= self.n)
    }

    pub fn check(&self, p: &LatticePoint) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "point {p} is outside the grid [{}]^{}",
                self.n, self.d
            )))
        }
    }

    pub fn linear_index(&self, p: &LatticePoint) -> Result<usize> {
        self.check(p)?;
        Ok(self.linear_index_unchecked(&p.coords))
    }

    pub(crate) fn linear_index_unchecked(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &u| acc * self.n + (u - 1))
    }

    pub fn point(&self, index: usize) -> Result<LatticePoint> {
        if index >= self.size {
            return Err(Error::InvalidArgument(format!(
                "linear index {index} out of range for {} points",
                self.size
            )));
        }
        let mut coords = vec![0; self.d];
        let mut rest = index;
        for c in coords.iter_mut().rev() {
            *c = rest % self.n + 1;
            rest /= self.n;
        }
        Ok(LatticePoint { coords })
    }

    /// Iterates all points in lexicographic order.
    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..self.size).map(move |i| self.point(i).expect("index in range"))
    }

    /// Per-axis ordinal of a dyadic interval.
    pub fn interval_ordinal(&self, iv: DyadicInterval) -> usize {
        let offset = 2 * self.n - (1usize << (self.log2_n + 1 - iv.scale));
        offset + iv.position - 1
    }

    fn interval_from_ordinal(&self, ordinal: usize) -> DyadicInterval {
        let mut rest = ordinal;
        let mut scale = 0;
        loop {
            let count = self.n >> scale;
            if rest < count {
                return DyadicInterval {
                    scale,
                    position: rest + 1,
                };
            }
            rest -= count;
            scale += 1;
        }
    }

    pub fn expert_id(&self, rect: &DyadicRect) -> Result<ExpertId> {
        if rect.intervals.len() != self.d {
            return Err(Error::InvalidArgument(format!(
                "rectangle has {} axes, grid has {}",
                rect.intervals.len(),
                self.d
            )));
        }
        let base = self.intervals_per_axis() as u64;
        let mut id = 0u64;
        for iv in &rect.intervals {
            if iv.scale > self.log2_n || iv.position == 0 || iv.position > self.n >> iv.scale {
                return Err(Error::InvalidArgument(format!(
                    "interval {iv} is not dyadic in [1, {}]",
                    self.n
                )));
            }
            id = id * base + self.interval_ordinal(*iv) as u64;
        }
        Ok(ExpertId(id))
    }

    pub fn rect(&self, id: ExpertId) -> Result<DyadicRect> {
        if id.0 >= self.num_experts() {
            return Err(Error::InvalidArgument(format!("expert id {} out of range", id.0)));
        }
        let base = self.intervals_per_axis() as u64;
        let mut intervals = vec![DyadicInterval::unit(1); self.d];
        let mut rest = id.0;
        for iv in intervals.iter_mut().rev() {
            *iv = self.interval_from_ordinal((rest % base) as usize);
            rest /= base;
        }
        Ok(DyadicRect { intervals })
    }

    /// The rectangle `[1, n]^d`.
    pub fn full_rect(&self) -> DyadicRect {
        DyadicRect {
            intervals: vec![
                DyadicInterval {
                    scale: self.log2_n,
                    position: 1
                };
                self.d
            ],
        }
    }

    /// Writes the identifiers of all rectangles containing `coords` into
    /// `out` in ascending order. `coords` must be in-grid.
    pub(crate) fn containing_ids_into(&self, coords: &[usize], out: &mut Vec<ExpertId>) {
        out.clear();
        out.push(ExpertId(0));
        let base = self.intervals_per_axis() as u64;
        let levels = self.log2_n + 1;
        for &u in coords {
            let prev = out.len();
            for i in 0..prev {
                let head = out[i].0 * base;
                for scale in 0..levels {
                    let iv = DyadicInterval {
                        scale,
                        position: ((u - 1) >> scale) + 1,
                    };
                    out.push(ExpertId(head + self.interval_ordinal(iv) as u64));
                }
            }
            out.drain(..prev);
        }
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]^{}", self.n, self.d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticePoint {
    pub coords: Vec<usize>,
}

impl LatticePoint {
    pub fn new(coords: impl Into<Vec<usize>>) -> Self {
        LatticePoint { coords: coords.into() }
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// The integer range `((position - 1) * 2^scale, position * 2^scale]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub scale: u32,
    pub position: usize,
}

impl DyadicInterval {
    pub fn new(scale: u32, position: usize) -> Self {
        DyadicInterval { scale, position }
    }

    /// The singleton interval `(u-1, u]`.
    pub fn unit(u: usize) -> Self {
        DyadicInterval { scale: 0, position: u }
    }

    pub fn len(&self) -> usize {
        1 << self.scale
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Exclusive lower end.
    pub fn lo(&self) -> usize {
        (self.position - 1) << self.scale
    }

    /// Inclusive upper end.
    pub fn hi(&self) -> usize {
        self.position << self.scale
    }

    #[inline]
    pub fn contains(&self, u: usize) -> bool {
        u >= 1 && ((u - 1) >> self.scale) + 1 == self.position
    }
}

impl fmt::Display for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{}]", self.lo(), self.hi())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicRect {
    pub intervals: Vec<DyadicInterval>,
}

impl DyadicRect {
    pub fn new(intervals: impl Into<Vec<DyadicInterval>>) -> Self {
        DyadicRect {
            intervals: intervals.into(),
        }
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        self.contains_coords(&p.coords)
    }

    pub(crate) fn contains_coords(&self, coords: &[usize]) -> bool {
        coords.len() == self.intervals.len() && self.intervals.iter().zip(coords).all(|(iv, &u)| iv.contains(u))
    }

    pub fn volume(&self) -> usize {
        self.intervals.iter().map(DyadicInterval::len).product()
    }
}

impl fmt::Display for DyadicRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, iv) in self.intervals.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{iv}")?;
        }
        Ok(())
    }
}

/// Stable identifier of a dyadic rectangle within a fixed grid shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpertId(pub u64);

/// All `(2n - 1)^d` dyadic rectangles, ordered by [`ExpertId`].
///
/// Along each axis intervals are sorted by scale (finest first) and then by
/// position; axes combine lexicographically.
pub fn enumerate_experts(shape: &GridShape) -> Vec<DyadicRect> {
    (0..shape.num_experts())
        .map(|id| shape.rect(ExpertId(id)).expect("id in range"))
        .collect()
}

/// Identifiers of the `(log2 n + 1)^d` dyadic rectangles containing `p`, in
/// ascending order.
pub fn experts_containing(shape: &GridShape, p: &LatticePoint) -> Result<Vec<ExpertId>> {
    shape.check(p)?;
    let mut out = Vec::with_capacity(shape.experts_per_point());
    shape.containing_ids_into(&p.coords, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingKind {
    /// Lexicographic order of the points.
    Forward,
    /// Reverse lexicographic order.
    Backward,
    /// Uniform random permutation from a seeded generator.
    Random { seed: u64 },
    /// Caller-supplied permutation of 0-based linear indices.
    Explicit(Vec<usize>),
}

impl fmt::Display for OrderingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingKind::Forward => write!(f, "forward"),
            OrderingKind::Backward => write!(f, "backward"),
            OrderingKind::Random { seed } => write!(f, "random:{seed}"),
            OrderingKind::Explicit(v) => write!(f, "explicit[{}]", v.len()),
        }
    }
}

/// A realized reveal order: `indices[t]` is the linear index of the point
/// revealed in round `t + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering {
    kind: OrderingKind,
    shape: GridShape,
    indices: Vec<usize>,
}

impl Ordering {
    pub fn kind(&self) -> &OrderingKind {
        &self.kind
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        self.indices
            .iter()
            .map(move |&i| self.shape.point(i).expect("ordering indices are in range"))
    }
}

pub fn make_ordering(shape: &GridShape, kind: OrderingKind) -> Result<Ordering> {
    let size = shape.size();
    let indices = match &kind {
        OrderingKind::Forward => (0..size).collect(),
        OrderingKind::Backward => (0..size).rev().collect(),
        OrderingKind::Random { seed } => {
            let mut v: Vec<usize> = (0..size).collect();
            v.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            v
        }
        OrderingKind::Explicit(list) => {
            if list.len() != size {
                return Err(Error::Validation(format!(
                    "explicit ordering has {} entries, grid has {size} points",
                    list.len()
                )));
            }
            let mut hit = vec![false; size];
            for &i in list {
                if i >= size || std::mem::replace(&mut hit[i], true) {
                    return Err(Error::Validation(format!(
                        "explicit ordering is not a permutation (bad or repeated index {i})"
                    )));
                }
            }
            list.clone()
        }
    };
    Ok(Ordering {
        kind,
        shape: *shape,
        indices,
    })
}
