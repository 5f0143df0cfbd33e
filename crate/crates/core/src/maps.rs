//! Piecewise-affine fiber maps on `[-1, 1]`: paired tent maps, the
//! m-block chain generalization, and their holes.
//!
//! A map is a list of affine branches tiling `[-1, 1]` plus the boundary
//! points `-1 = b_0 < b_1 < … < b_m = 1` of the initially invariant intervals
//! `I_i = [b_{i-1}, b_i]`. Every branch lies inside one `I_i`, so the hole
//! `H_{i,j} = I_i ∩ T^{-1}(I_j)` is the union of exact affine preimages.

use crate::error::{Error, Result};

const IMAGE_SLACK: f64 = 1e-12;
/// Preimage endpoints this close to a branch endpoint are snapped onto it.
const SNAP: f64 = 1e-14;

/// `x ↦ slope·x + intercept` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl Branch {
    pub fn new(lo: f64, hi: f64, slope: f64, intercept: f64) -> Self {
        Self {
            lo,
            hi,
            slope,
            intercept,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Image interval, ordered.
    pub fn image(&self) -> (f64, f64) {
        let (u, v) = (self.eval(self.lo), self.eval(self.hi));
        if u <= v {
            (u, v)
        } else {
            (v, u)
        }
    }

    /// `{x ∈ [lo, hi] : T(x) ∈ [c, d]}`, if non-empty.
    pub fn preimage(&self, c: f64, d: f64) -> Option<(f64, f64)> {
        let (u, v) = (
            (c - self.intercept) / self.slope,
            (d - self.intercept) / self.slope,
        );
        let (u, v) = if u <= v { (u, v) } else { (v, u) };
        let snap = |x: f64| {
            if (x - self.lo).abs() <= SNAP {
                self.lo
            } else if (x - self.hi).abs() <= SNAP {
                self.hi
            } else {
                x
            }
        };
        let lo = snap(u).max(self.lo);
        let hi = snap(v).min(self.hi);
        (lo <= hi).then_some((lo, hi))
    }
}

/// One connected piece of a hole: points of the source interval that land
/// in `target` after one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hole {
    pub target: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Hole {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Holes grouped by source interval.
#[derive(Debug, Clone, PartialEq)]
pub struct HoleSet {
    pub by_source: Vec<Vec<Hole>>,
}

impl HoleSet {
    pub fn source(&self, i: usize) -> &[Hole] {
        &self.by_source[i]
    }

    /// Holes of source `i` leading to `target`.
    pub fn between(&self, i: usize, target: usize) -> impl Iterator<Item = &Hole> {
        self.by_source[i].iter().filter(move |h| h.target == target)
    }
}

/// A piecewise-affine, uniformly expanding map of `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearMap {
    branches: Vec<Branch>,
    critical_set: Vec<f64>,
    boundary_points: Vec<f64>,
    /// Isolated points whose value is set explicitly (e.g. `T(0) = 0`).
    point_values: Vec<(f64, f64)>,
}

impl PiecewiseLinearMap {
    pub fn new(
        branches: Vec<Branch>,
        boundary_points: Vec<f64>,
        point_values: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidMap("no branches".into()));
        }
        if branches[0].lo != -1.0 || branches[branches.len() - 1].hi != 1.0 {
            return Err(Error::InvalidMap("branches must cover [-1, 1]".into()));
        }
        for w in branches.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(Error::InvalidMap(format!(
                    "branches do not tile: {} then {}",
                    w[0].hi, w[1].lo
                )));
            }
        }
        for b in &branches {
            if !(b.lo < b.hi) {
                return Err(Error::InvalidMap(format!(
                    "empty branch [{}, {}]",
                    b.lo, b.hi
                )));
            }
            if !(b.slope.abs() > 1.0) {
                return Err(Error::InvalidMap(format!(
                    "slope {} is not expanding",
                    b.slope
                )));
            }
            let (u, v) = b.image();
            if u < -1.0 - IMAGE_SLACK || v > 1.0 + IMAGE_SLACK {
                return Err(Error::InvalidMap(format!(
                    "branch [{}, {}] maps outside [-1, 1]",
                    b.lo, b.hi
                )));
            }
        }
        if boundary_points.len() < 2
            || boundary_points[0] != -1.0
            || boundary_points[boundary_points.len() - 1] != 1.0
            || boundary_points.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::InvalidMap("malformed boundary points".into()));
        }
        for b in &branches {
            let i = boundary_points.partition_point(|&p| p <= b.lo) - 1;
            if b.hi > boundary_points[i + 1] {
                return Err(Error::InvalidMap(format!(
                    "branch [{}, {}] straddles a boundary point",
                    b.lo, b.hi
                )));
            }
        }
        let mut critical_set: Vec<f64> = branches.iter().map(|b| b.lo).collect();
        critical_set.push(1.0);
        Ok(Self {
            branches,
            critical_set,
            boundary_points,
            point_values,
        })
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn critical_set(&self) -> &[f64] {
        &self.critical_set
    }

    pub fn boundary_points(&self) -> &[f64] {
        &self.boundary_points
    }

    /// Number of initially invariant intervals `m`.
    pub fn interval_count(&self) -> usize {
        self.boundary_points.len() - 1
    }

    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.boundary_points[i], self.boundary_points[i + 1])
    }

    /// Index of the interval containing the branch.
    fn interval_of_branch(&self, b: &Branch) -> usize {
        self.boundary_points.partition_point(|&p| p <= b.lo) - 1
    }

    /// `T(x)`. At shared branch endpoints the left branch is used.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain(x));
        }
        if let Some(&(_, y)) = self.point_values.iter().find(|(p, _)| *p == x) {
            return Ok(y);
        }
        let i = self.branches.partition_point(|b| b.hi < x);
        Ok(self.branches[i].eval(x))
    }

    /// All holes `H_{i,j} = I_i ∩ T^{-1}(I_j)`, `j ≠ i`.
    ///
    /// Degenerate holes located on a boundary point are dropped, so that at
    /// zero leakage only `T^{-1}(𝔅) \ 𝔅` survives.
    pub fn holes(&self) -> HoleSet {
        let m = self.interval_count();
        let mut by_source = vec![Vec::new(); m];
        for b in &self.branches {
            let source = self.interval_of_branch(b);
            for target in (0..m).filter(|&j| j != source) {
                let (c, d) = self.interval(target);
                if let Some((lo, hi)) = b.preimage(c, d) {
                    by_source[source].push(Hole { target, lo, hi });
                }
            }
        }
        for holes in &mut by_source {
            holes.sort_by(|p, q| p.lo.total_cmp(&q.lo));
            let mut merged: Vec<Hole> = Vec::with_capacity(holes.len());
            for h in holes.drain(..) {
                match merged.last_mut() {
                    Some(prev) if prev.target == h.target && h.lo <= prev.hi => {
                        prev.hi = prev.hi.max(h.hi);
                    }
                    _ => merged.push(h),
                }
            }
            merged.retain(|h| h.len() > 0.0 || !self.boundary_points.contains(&h.lo));
            *holes = merged;
        }
        HoleSet { by_source }
    }

    /// `μ_i(H_i)`, with `μ_i` normalized Lebesgue on `I_i`.
    pub fn hole_measure(&self, source: usize) -> f64 {
        let (lo, hi) = self.interval(source);
        let holes = self.holes();
        holes.source(source).iter().map(Hole::len).sum::<f64>() / (hi - lo)
    }

    /// `μ_i(H_{i,j})`.
    pub fn hole_measure_to(&self, source: usize, target: usize) -> f64 {
        let (lo, hi) = self.interval(source);
        let holes = self.holes();
        holes.between(source, target).map(Hole::len).sum::<f64>() / (hi - lo)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidMap(format!("{name} = {v} outside [0, 1]")))
    }
}

/// The paired tent map `T_{a,b}`: two tent maps on `I_L = [-1, 0]` and
/// `I_R = [0, 1]`; `b` lifts the left peak into `I_R`, `a` drops the right
/// valley into `I_L`. `T(0) = 0`.
pub fn paired_tent(a: f64, b: f64) -> Result<PiecewiseLinearMap> {
    check_unit("a", a)?;
    check_unit("b", b)?;
    let sb = 2.0 * (1.0 + b);
    let sa = 2.0 * (1.0 + a);
    PiecewiseLinearMap::new(
        vec![
            Branch::new(-1.0, -0.5, sb, sb - 1.0),
            Branch::new(-0.5, 0.0, -sb, -1.0),
            Branch::new(0.0, 0.5, -sa, 1.0),
            Branch::new(0.5, 1.0, sa, 1.0 - sa),
        ],
        vec![-1.0, 0.0, 1.0],
        vec![(0.0, 0.0)],
    )
}

/// `m` equal blocks of `[-1, 1]`; block `i` leaks into its neighbours at
/// first-order rates `(left, right)` = `leaks[i]`.
///
/// The first block is an upright tent and the last an inverted one, exactly
/// as in [`paired_tent`], so `m = 2` with `leaks = [(0, b), (a, 0)]` is
/// `T_{a,b}`. Interior blocks are three-branch zigzags fixing both block
/// endpoints: up to `hi + 3/2·right·h`, down to `lo − 3/2·left·h`, up to `hi`.
/// Mass entering a block therefore lands next to a fixed point, and
/// `μ_i(H_{i,i±1}) = leak + O(leak²)`.
pub fn chain_tent(m: usize, leaks: &[(f64, f64)]) -> Result<PiecewiseLinearMap> {
    if m < 2 {
        return Err(Error::InvalidMap(format!("need m >= 2 blocks, got {m}")));
    }
    if leaks.len() != m {
        return Err(Error::InvalidMap(format!(
            "leak table has {} rows, expected {m}",
            leaks.len()
        )));
    }
    if leaks[0].0 != 0.0 {
        return Err(Error::InvalidMap("first block cannot leak left".into()));
    }
    if leaks[m - 1].1 != 0.0 {
        return Err(Error::InvalidMap("last block cannot leak right".into()));
    }

    let h = 2.0 / m as f64;
    let mut boundary_points: Vec<f64> = (0..=m).map(|i| -1.0 + i as f64 * h).collect();
    boundary_points[m] = 1.0;
    let mut branches = Vec::with_capacity(3 * m);
    for (i, &(left, right)) in leaks.iter().enumerate() {
        let (lo, hi) = (boundary_points[i], boundary_points[i + 1]);
        if i == 0 || i == m - 1 {
            check_unit("leak", left)?;
            check_unit("leak", right)?;
            let mid = 0.5 * (lo + hi);
            let s = 2.0 * (1.0 + left + right);
            if i == 0 {
                let bottom = lo;
                branches.push(Branch::new(lo, mid, s, bottom - s * lo));
                branches.push(Branch::new(mid, hi, -s, bottom + s * hi));
            } else {
                let top = hi;
                branches.push(Branch::new(lo, mid, -s, top + s * lo));
                branches.push(Branch::new(mid, hi, s, top - s * hi));
            }
            continue;
        }
        let (left, right) = (1.5 * left, 1.5 * right);
        check_unit("overshoot", left)?;
        check_unit("overshoot", right)?;
        let top = hi + right * h;
        let (p1, p2) = (lo + h / 3.0, lo + 2.0 * h / 3.0);
        let (s1, s2, s3) = (
            3.0 * (1.0 + right),
            3.0 * (1.0 + left + right),
            3.0 * (1.0 + left),
        );
        branches.push(Branch::new(lo, p1, s1, lo - s1 * lo));
        branches.push(Branch::new(p1, p2, -s2, top + s2 * p1));
        branches.push(Branch::new(p2, hi, s3, hi - s3 * hi));
    }
    let point_values = boundary_points[1..m].iter().map(|&p| (p, p)).collect();
    PiecewiseLinearMap::new(branches, boundary_points, point_values)
}

/// How driving values become a fiber map at a given `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFamily {
    /// Values `(a, b)`; the fiber map is `T_{εa, εb}`.
    PairedTent,
    /// Values `(β_{1,2}, β_{2,1}, β_{2,3}, β_{3,2}, …)`; block `i` leaks at
    /// rates `(εβ_{i,i-1}, εβ_{i,i+1})` in [`chain_tent`].
    Chain { m: usize },
}

impl MapFamily {
    pub fn interval_count(&self) -> usize {
        match *self {
            MapFamily::PairedTent => 2,
            MapFamily::Chain { m } => m,
        }
    }

    pub fn value_dim(&self) -> usize {
        match *self {
            MapFamily::PairedTent => 2,
            MapFamily::Chain { m } => 2 * m.saturating_sub(1),
        }
    }

    pub fn fiber_map(&self, values: &[f64], epsilon: f64) -> Result<PiecewiseLinearMap> {
        if values.len() != self.value_dim() {
            return Err(Error::InvalidMap(format!(
                "{} driving values, family needs {}",
                values.len(),
                self.value_dim()
            )));
        }
        match *self {
            MapFamily::PairedTent => paired_tent(epsilon * values[0], epsilon * values[1]),
            MapFamily::Chain { m } => {
                let leaks: Vec<(f64, f64)> = (0..m)
                    .map(|i| {
                        let left = if i > 0 { values[2 * i - 1] } else { 0.0 };
                        let right = if i + 1 < m { values[2 * i] } else { 0.0 };
                        (epsilon * left, epsilon * right)
                    })
                    .collect();
                chain_tent(m, &leaks)
            }
        }
    }
}
