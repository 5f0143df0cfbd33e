//! Invertible ergodic base systems with finite-range fiber observables.
//!
//! Two bases are provided:
//!
//! * an irrational circle rotation `θ ↦ θ + α mod 1`, with `α` stored as an
//!   odd dyadic rational `p / 2^60` so that forward and backward iteration are
//!   exact integer arithmetic (the orbit period is `2^60`);
//! * a two-sided Bernoulli shift whose symbol window `[-N_w, N_w]` is drawn
//!   once from a seeded generator.
//!
//! Observables are piecewise constant: every fiber carries a *symbol* (an arc
//! index or an alphabet letter) and each symbol owns one value vector. The
//! finite range of `ω ↦ T_ω` is therefore enforced by construction, and all
//! `P`-averages are computed from arc lengths or symbol probabilities.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const ROTATION_BITS: u32 = 60;
const ROTATION_MODULUS: u64 = 1 << ROTATION_BITS;
const ROTATION_MASK: u64 = ROTATION_MODULUS - 1;

/// Golden-mean rotation number `(√5 − 1) / 2`.
pub fn golden_angle() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

/// One arc `[start, next_start)` of a piecewise-constant circle observable.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub start: f64,
    pub values: Vec<f64>,
}

impl Arc {
    pub fn new(start: f64, values: Vec<f64>) -> Self {
        Self { start, values }
    }
}

/// One letter of a Bernoulli alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Symbol {
    pub probability: f64,
    pub values: Vec<f64>,
}

impl Symbol {
    pub fn new(probability: f64, values: Vec<f64>) -> Self {
        Self {
            probability,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrivingKind {
    Rotation,
    TwoSidedShift,
}

#[derive(Debug, Clone)]
enum Base {
    Rotation {
        step: u64,
        start: u64,
        /// Arc starts scaled to `[0, 2^60)`.
        thresholds: Vec<u64>,
    },
    Shift {
        radius: i64,
        symbols: Vec<u32>,
    },
}

/// An invertible measure-preserving base `σ` together with a finite-range
/// vector observable on it. Immutable after construction.
#[derive(Debug, Clone)]
pub struct DrivingSystem {
    base: Base,
    /// Value vector per symbol.
    values: Vec<Vec<f64>>,
    /// `P`-measure per symbol (arc lengths or letter probabilities).
    weights: Vec<f64>,
}

fn validate_values<'a>(vectors: impl Iterator<Item = &'a Vec<f64>>) -> Result<usize> {
    let mut dim = None;
    for v in vectors {
        if v.is_empty() {
            return Err(Error::InvalidDriving("empty value vector".into()));
        }
        if let Some(&bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidDriving(format!(
                "observable value {bad} outside [0, 1]"
            )));
        }
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::InvalidDriving(format!(
                    "value vectors have unequal lengths ({d} vs {})",
                    v.len()
                )))
            }
            _ => {}
        }
    }
    dim.ok_or_else(|| Error::InvalidDriving("no arcs or symbols given".into()))
}

fn to_fixed(x: f64) -> u64 {
    ((x * ROTATION_MODULUS as f64).round() as u64) & ROTATION_MASK
}

impl DrivingSystem {
    /// Rotation by `angle` with a piecewise-constant observable given by `arcs`.
    /// The base point `ω₀` is 0; see [`DrivingSystem::with_start`].
    pub fn rotation(angle: f64, arcs: Vec<Arc>) -> Result<Self> {
        if !(angle > 0.0 && angle < 1.0) {
            return Err(Error::InvalidDriving(format!(
                "rotation angle {angle} not in (0, 1)"
            )));
        }
        if arcs.is_empty() {
            return Err(Error::InvalidDriving("no arcs given".into()));
        }
        if arcs[0].start != 0.0 {
            return Err(Error::InvalidDriving("first arc must start at 0".into()));
        }
        for w in arcs.windows(2) {
            if !(w[1].start > w[0].start) {
                return Err(Error::InvalidDriving(format!(
                    "arc starts not strictly increasing ({} then {})",
                    w[0].start, w[1].start
                )));
            }
        }
        let last = arcs[arcs.len() - 1].start;
        if !(last < 1.0) {
            return Err(Error::InvalidDriving(format!(
                "arc start {last} not below 1"
            )));
        }
        validate_values(arcs.iter().map(|a| &a.values))?;

        let weights = arcs
            .iter()
            .enumerate()
            .map(|(i, a)| arcs.get(i + 1).map_or(1.0, |b| b.start) - a.start)
            .collect();
        let thresholds = arcs.iter().map(|a| to_fixed(a.start)).collect();
        // An odd numerator makes the rotation a single cycle of length 2^60.
        let step = to_fixed(angle) | 1;
        Ok(Self {
            base: Base::Rotation {
                step,
                start: 0,
                thresholds,
            },
            values: arcs.into_iter().map(|a| a.values).collect(),
            weights,
        })
    }

    /// Replaces the rotation base point `ω₀ ∈ [0, 1)`. No effect on shifts.
    pub fn with_start(mut self, omega0: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&omega0) {
            return Err(Error::InvalidDriving(format!(
                "base point {omega0} not in [0, 1)"
            )));
        }
        if let Base::Rotation { start, .. } = &mut self.base {
            *start = to_fixed(omega0);
        }
        Ok(self)
    }

    /// Two-sided Bernoulli shift over `alphabet`, materialized on `[-radius, radius]`.
    pub fn shift(alphabet: Vec<Symbol>, seed: u64, radius: usize) -> Result<Self> {
        if radius < 1 {
            return Err(Error::InvalidDriving("window radius must be >= 1".into()));
        }
        if alphabet.is_empty() {
            return Err(Error::InvalidDriving("empty alphabet".into()));
        }
        if let Some(s) = alphabet
            .iter()
            .find(|s| !(s.probability >= 0.0 && s.probability.is_finite()))
        {
            return Err(Error::InvalidDriving(format!(
                "symbol probability {} is negative",
                s.probability
            )));
        }
        let total: f64 = alphabet.iter().map(|s| s.probability).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDriving(format!(
                "symbol probabilities sum to {total}, not 1"
            )));
        }
        validate_values(alphabet.iter().map(|s| &s.values))?;

        let weights: Vec<f64> = alphabet.iter().map(|s| s.probability).collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidDriving(format!("bad symbol weights: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let symbols = (0..2 * radius + 1)
            .map(|_| dist.sample(&mut rng) as u32)
            .collect();
        Ok(Self {
            base: Base::Shift {
                radius: radius as i64,
                symbols,
            },
            values: alphabet.into_iter().map(|s| s.values).collect(),
            weights,
        })
    }

    pub fn kind(&self) -> DrivingKind {
        match self.base {
            Base::Rotation { .. } => DrivingKind::Rotation,
            Base::Shift { .. } => DrivingKind::TwoSidedShift,
        }
    }

    /// Length of every value vector.
    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Number of distinct symbols (arcs or letters).
    pub fn num_symbols(&self) -> usize {
        self.values.len()
    }

    /// `P`-measure of each symbol.
    pub fn symbol_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn symbol_values(&self, symbol: usize) -> &[f64] {
        &self.values[symbol]
    }

    /// Largest index magnitude that can be queried, `None` when unbounded.
    pub fn window_radius(&self) -> Option<i64> {
        match self.base {
            Base::Rotation { .. } => None,
            Base::Shift { radius, .. } => Some(radius),
        }
    }

    /// Whether every index in `[lo, hi]` can be queried.
    pub fn covers(&self, lo: i64, hi: i64) -> bool {
        self.window_radius().map_or(true, |r| lo >= -r && hi <= r)
    }

    /// Orbit point of `σ^k ω` on the circle, for rotations.
    pub fn orbit_point(&self, k: i64) -> Option<f64> {
        match self.base {
            Base::Rotation { step, start, .. } => {
                Some(rotate(start, step, k) as f64 / ROTATION_MODULUS as f64)
            }
            Base::Shift { .. } => None,
        }
    }

    /// Symbol carried by the fiber `σ^k ω`.
    pub fn fiber_symbol(&self, k: i64) -> Result<usize> {
        match &self.base {
            Base::Rotation {
                step,
                start,
                thresholds,
            } => Ok(arc_of(thresholds, rotate(*start, *step, k))),
            Base::Shift { radius, symbols } => {
                if k.abs() > *radius {
                    return Err(Error::OutOfWindow {
                        index: k,
                        radius: *radius,
                    });
                }
                Ok(symbols[(k + radius) as usize] as usize)
            }
        }
    }

    /// Value vector of the fiber `σ^k ω`.
    pub fn fiber_params(&self, k: i64) -> Result<&[f64]> {
        Ok(&self.values[self.fiber_symbol(k)?])
    }

    /// Exact `∫ f_c dP` of one observable component.
    pub fn average_observable(&self, component: usize) -> Result<f64> {
        if component >= self.dim() {
            return Err(Error::InvalidDriving(format!(
                "component {component} out of range (dim {})",
                self.dim()
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v[component])
            .sum())
    }

    /// `n⁻¹ Σ_{j<n} f_c(σ^{from+j} ω)` along the orbit.
    pub fn birkhoff_average(&self, component: usize, from: i64, n: usize) -> Result<f64> {
        if n == 0 {
            return Ok(0.0);
        }
        let mut cursor = self.cursor(from);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += cursor.params()?[component];
            cursor.forward();
        }
        Ok(sum / n as f64)
    }

    /// A cursor positioned at fiber `σ^k ω` that can be stepped by `σ^{±1}`.
    pub fn cursor(&self, k: i64) -> Cursor<'_> {
        let state = match self.base {
            Base::Rotation { step, start, .. } => CursorState::Rotation(rotate(start, step, k)),
            Base::Shift { .. } => CursorState::Shift(k),
        };
        Cursor { ds: self, state }
    }
}

fn rotate(start: u64, step: u64, k: i64) -> u64 {
    let offset = (step as i128 * k as i128).rem_euclid(ROTATION_MODULUS as i128) as u64;
    start.wrapping_add(offset) & ROTATION_MASK
}

fn arc_of(thresholds: &[u64], pos: u64) -> usize {
    thresholds.partition_point(|&t| t <= pos) - 1
}

#[derive(Debug, Clone, Copy)]
enum CursorState {
    Rotation(u64),
    Shift(i64),
}

/// Walks a base orbit one step at a time in either direction.
#[derive(Debug, Clone)]
pub struct Cursor<'a> {
    ds: &'a DrivingSystem,
    state: CursorState,
}

impl Cursor<'_> {
    pub fn forward(&mut self) {
        self.state = match (self.state, &self.ds.base) {
            (CursorState::Rotation(p), Base::Rotation { step, .. }) => {
                CursorState::Rotation(p.wrapping_add(*step) & ROTATION_MASK)
            }
            (CursorState::Shift(k), _) => CursorState::Shift(k + 1),
            _ => unreachable!(),
        }
    }

    pub fn backward(&mut self) {
        self.state = match (self.state, &self.ds.base) {
            (CursorState::Rotation(p), Base::Rotation { step, .. }) => {
                CursorState::Rotation(p.wrapping_sub(*step) & ROTATION_MASK)
            }
            (CursorState::Shift(k), _) => CursorState::Shift(k - 1),
            _ => unreachable!(),
        }
    }

    pub fn symbol(&self) -> Result<usize> {
        match (self.state, &self.ds.base) {
            (CursorState::Rotation(p), Base::Rotation { thresholds, .. }) => {
                Ok(arc_of(thresholds, p))
            }
            (CursorState::Shift(k), _) => self.ds.fiber_symbol(k),
            _ => unreachable!(),
        }
    }

    pub fn params(&self) -> Result<&[f64]> {
        Ok(&self.ds.values[self.symbol()?])
    }
}
