//! Grid densities and exact Ulam discretizations of Perron–Frobenius operators.
//!
//! The grid on `[-1, 1]` has an even number `n` of cells of width `2/n`, so
//! `0` is always a node and `1_{I_L}`, `1_{I_R}` are represented exactly.
//! For an affine branch the mass of a source cell is spread uniformly over
//! its image, which gives the Ulam entries
//! `M[i][j] = Leb(cell_j ∩ T^{-1} cell_i) / Leb(cell_j)` in closed form.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maps::PiecewiseLinearMap;

fn check_grid(n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        Err(Error::InvalidGrid(n))
    } else {
        Ok(())
    }
}

#[inline]
fn node(n: usize, i: usize) -> f64 {
    if i == n {
        1.0
    } else {
        -1.0 + 2.0 * i as f64 / n as f64
    }
}

/// Compensated (Neumaier) summation.
fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// A piecewise-constant function on the uniform grid, stored as cell values.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    values: Vec<f64>,
}

impl Density {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        check_grid(values.len())?;
        Ok(Self { values })
    }

    pub fn zeros(grid_n: usize) -> Result<Self> {
        Self::from_values(vec![0.0; grid_n])
    }

    pub fn constant(grid_n: usize, c: f64) -> Result<Self> {
        Self::from_values(vec![c; grid_n])
    }

    /// Cell averages of `1_{[lo, hi]}`.
    pub fn indicator(grid_n: usize, lo: f64, hi: f64) -> Result<Self> {
        check_grid(grid_n)?;
        let w = 2.0 / grid_n as f64;
        let values = (0..grid_n)
            .map(|i| {
                let (a, b) = (node(grid_n, i), node(grid_n, i + 1));
                ((b.min(hi) - a.max(lo)).max(0.0) / w).min(1.0)
            })
            .collect();
        Ok(Self { values })
    }

    /// `1_{I_L}` with `I_L = [-1, 0]`.
    pub fn left_indicator(grid_n: usize) -> Result<Self> {
        check_grid(grid_n)?;
        let half = grid_n / 2;
        Ok(Self {
            values: (0..grid_n)
                .map(|i| if i < half { 1.0 } else { 0.0 })
                .collect(),
        })
    }

    /// `1_{I_R}` with `I_R = [0, 1]`.
    pub fn right_indicator(grid_n: usize) -> Result<Self> {
        check_grid(grid_n)?;
        let half = grid_n / 2;
        Ok(Self {
            values: (0..grid_n)
                .map(|i| if i < half { 0.0 } else { 1.0 })
                .collect(),
        })
    }

    pub fn grid_n(&self) -> usize {
        self.values.len()
    }

    pub fn cell_width(&self) -> f64 {
        2.0 / self.values.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `∫ f dLeb`.
    pub fn integral(&self) -> f64 {
        self.cell_width() * neumaier(self.values.iter().copied())
    }

    /// `‖f‖_{L¹(Leb)}`.
    pub fn l1_norm(&self) -> f64 {
        self.cell_width() * neumaier(self.values.iter().map(|v| v.abs()))
    }

    /// `‖f‖_{L¹(Leb̄)}` with `Leb̄` the normalized Lebesgue measure on `[-1, 1]`.
    pub fn l1_norm_normalized(&self) -> f64 {
        0.5 * self.l1_norm()
    }

    /// Total variation of the step function (interior jumps only).
    pub fn variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// `∫_{[lo, hi]} f dLeb`.
    pub fn mass_on(&self, lo: f64, hi: f64) -> f64 {
        let n = self.grid_n();
        neumaier((0..n).map(|i| {
            let (a, b) = (node(n, i), node(n, i + 1));
            (b.min(hi) - a.max(lo)).max(0.0) * self.values[i]
        }))
    }

    /// `∫_{I_L} f dLeb`, an exact cell sum.
    pub fn left_mass(&self) -> f64 {
        self.cell_width() * neumaier(self.values[..self.grid_n() / 2].iter().copied())
    }

    /// `∫_{I_R} f dLeb`, an exact cell sum.
    pub fn right_mass(&self) -> f64 {
        self.cell_width() * neumaier(self.values[self.grid_n() / 2..].iter().copied())
    }

    pub fn l1_distance(&self, other: &Density) -> Result<f64> {
        if self.grid_n() != other.grid_n() {
            return Err(Error::GridMismatch {
                expected: self.grid_n(),
                found: other.grid_n(),
            });
        }
        Ok(self.cell_width()
            * neumaier(
                self.values
                    .iter()
                    .zip(&other.values)
                    .map(|(a, b)| (a - b).abs()),
            ))
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.scale(c);
        self
    }

    /// `α·self + β·other`.
    pub fn combine(&self, alpha: f64, other: &Density, beta: f64) -> Result<Density> {
        if self.grid_n() != other.grid_n() {
            return Err(Error::GridMismatch {
                expected: self.grid_n(),
                found: other.grid_n(),
            });
        }
        Ok(Density {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        })
    }

    /// Piecewise-constant refinement onto a grid `factor` times finer.
    pub fn refine(&self, factor: usize) -> Density {
        Density {
            values: self
                .values
                .iter()
                .flat_map(|&v| std::iter::repeat(v).take(factor))
                .collect(),
        }
    }

    /// `grid_n,<n>` header followed by one value per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "grid_n,{}", self.grid_n())?;
        for v in &self.values {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let n = parse_header(lines.next())?;
        let values = lines
            .take(n)
            .enumerate()
            .map(|(i, line)| {
                let line = line.map_err(|e| Error::Parse(e.to_string()))?;
                line.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != n {
            return Err(Error::Parse(format!(
                "expected {n} values, found {}",
                values.len()
            )));
        }
        Self::from_values(values)
    }
}

fn parse_header(line: Option<std::io::Result<String>>) -> Result<usize> {
    let line = line
        .ok_or_else(|| Error::Parse("empty input".into()))?
        .map_err(|e| Error::Parse(e.to_string()))?;
    line.trim()
        .strip_prefix("grid_n,")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse(format!("line 1: bad header {line:?}")))
}

/// Column-stochastic Ulam matrix in compressed-column form.
#[derive(Debug, Clone, PartialEq)]
pub struct UlamOperator {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    vals: Vec<f64>,
}

/// Ulam discretization of the transfer operator of `map` on `grid_n` cells.
pub fn ulam_matrix(map: &PiecewiseLinearMap, grid_n: usize) -> Result<UlamOperator> {
    check_grid(grid_n)?;
    let n = grid_n;
    let w = 2.0 / n as f64;
    let cell_of = |y: f64| (((y + 1.0) / w).floor().max(0.0) as usize).min(n - 1);

    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    let mut vals = Vec::new();
    let mut column: Vec<(u32, f64)> = Vec::new();
    col_ptr.push(0);

    let branches = map.branches();
    let mut first = 0;
    for j in 0..n {
        let (xa, xb) = (node(n, j), node(n, j + 1));
        column.clear();
        while branches[first].hi <= xa {
            first += 1;
        }
        for b in branches[first..].iter().take_while(|b| b.lo < xb) {
            let (sa, sb) = (xa.max(b.lo), xb.min(b.hi));
            if sb <= sa {
                continue;
            }
            let share = (sb - sa) / w;
            let (mut y0, mut y1) = (b.eval(sa), b.eval(sb));
            if y0 > y1 {
                std::mem::swap(&mut y0, &mut y1);
            }
            let (y0, y1) = (y0.clamp(-1.0, 1.0), y1.clamp(-1.0, 1.0));
            let span = y1 - y0;
            if span <= 0.0 {
                column.push((cell_of(y0) as u32, share));
                continue;
            }
            for i in cell_of(y0)..=cell_of(y1) {
                let overlap = y1.min(node(n, i + 1)) - y0.max(node(n, i));
                if overlap > 0.0 {
                    column.push((i as u32, share * overlap / span));
                }
            }
        }
        column.sort_unstable_by_key(|e| e.0);
        let start = row_idx.len();
        for &(i, v) in &column {
            if row_idx.len() > start && *row_idx.last().unwrap() == i {
                *vals.last_mut().unwrap() += v;
            } else {
                row_idx.push(i);
                vals.push(v);
            }
        }
        col_ptr.push(row_idx.len());
    }
    Ok(UlamOperator {
        n,
        col_ptr,
        row_idx,
        vals,
    })
}

impl UlamOperator {
    pub fn grid_n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(row, value)` pairs of column `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        self.column(j).map(|(_, v)| v).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.column(j)
            .find(|&(r, _)| r == i)
            .map_or(0.0, |(_, v)| v)
    }

    /// Dense copy, row-major. Intended for small grids.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for j in 0..self.n {
            for (i, v) in self.column(j) {
                m[i][j] = v;
            }
        }
        m
    }

    /// `y = M x` on raw cell values.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[k] as usize] += self.vals[k] * xj;
            }
        }
    }

    pub fn apply(&self, f: &Density) -> Result<Density> {
        if f.grid_n() != self.n {
            return Err(Error::GridMismatch {
                expected: self.n,
                found: f.grid_n(),
            });
        }
        let mut out = vec![0.0; self.n];
        self.apply_into(f.values(), &mut out);
        Ok(Density { values: out })
    }

    /// `grid_n,<n>` header followed by `row,col,value` triplets.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "grid_n,{}", self.n)?;
        for j in 0..self.n {
            for (i, v) in self.column(j) {
                writeln!(w, "{i},{j},{v}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let n = parse_header(lines.next())?;
        check_grid(n)?;
        let mut triplets = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("line {}: bad triplet {line:?}", k + 2));
            let mut parts = line.split(',');
            let i: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?;
            let j: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?;
            let v: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?;
            if i >= n || j >= n {
                return Err(bad());
            }
            triplets.push((j, i, v));
        }
        triplets.sort_by_key(|&(j, i, _)| (j, i));
        let mut col_ptr = vec![0; n + 1];
        for &(j, _, _) in &triplets {
            col_ptr[j + 1] += 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        Ok(UlamOperator {
            n,
            col_ptr,
            row_idx: triplets.iter().map(|t| t.1 as u32).collect(),
            vals: triplets.iter().map(|t| t.2).collect(),
        })
    }
}

/// Contraction factor per two steps in the variation inequality for paired tent cocycles.
pub const LY_CONTRACTION: f64 = 0.75;
/// Constant of the iterated (uniform) variation inequality, against `‖f‖_{L¹(Leb̄)}`.
pub const LY_CONSTANT: f64 = 26.0;

/// Upper bound `(3/4)^n Var(f) + 26 ‖f‖_{L¹(Leb̄)}` after `2n` steps.
pub fn ly_bound(two_n: usize, variation: f64, l1_normalized: f64) -> f64 {
    LY_CONTRACTION.powi((two_n / 2) as i32) * variation + LY_CONSTANT * l1_normalized
}

/// One `(trial, horizon)` comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyCheck {
    pub horizon: usize,
    pub observed: f64,
    pub bound: f64,
}

impl LyCheck {
    pub fn slack(&self) -> f64 {
        self.bound - self.observed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyReport {
    pub checks: usize,
    pub violations: usize,
    /// Smallest `bound − observed` seen.
    pub min_slack: f64,
    /// Largest `bound − observed` seen.
    pub max_slack: f64,
}

impl LyReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Evolves `f` through the discretized cocycle and compares the variation
/// at every even horizon with [`ly_bound`].
pub fn ly_check_density(cocycle: &[UlamOperator], f: &Density) -> Result<Vec<LyCheck>> {
    let var0 = f.variation();
    let norm0 = f.l1_norm_normalized();
    let mut cur = f.clone();
    let mut out = Vec::new();
    for (step, op) in cocycle.iter().enumerate() {
        cur = op.apply(&cur)?;
        let horizon = step + 1;
        if horizon % 2 == 0 {
            out.push(LyCheck {
                horizon,
                observed: cur.variation(),
                bound: ly_bound(horizon, var0, norm0),
            });
        }
    }
    Ok(out)
}

/// A random step function with up to `max_jumps` jumps on grid-aligned breakpoints.
pub fn random_step_density<R: Rng>(
    rng: &mut R,
    grid_n: usize,
    max_jumps: usize,
) -> Result<Density> {
    check_grid(grid_n)?;
    let jumps = rng.gen_range(1..=max_jumps.max(1));
    let mut cuts: Vec<usize> = (0..jumps).map(|_| rng.gen_range(1..grid_n)).collect();
    cuts.push(grid_n);
    cuts.sort_unstable();
    cuts.dedup();
    let signed = rng.gen_bool(0.5);
    let amplitude = rng.gen_range(0.1..10.0);
    let mut values = Vec::with_capacity(grid_n);
    for &end in &cuts {
        let v = if signed {
            rng.gen_range(-1.0..1.0)
        } else {
            rng.gen_range(0.0..1.0)
        } * amplitude;
        values.resize(end, v);
    }
    Density::from_values(values)
}

/// Runs the variation inequality on `trials` random step densities, pushing
/// each through the Ulam cocycle of `cocycle` (consecutive fiber maps).
pub fn verify_ly(
    cocycle: &[PiecewiseLinearMap],
    trials: usize,
    grid_n: usize,
    seed: u64,
) -> Result<LyReport> {
    let ops = cocycle
        .iter()
        .map(|m| ulam_matrix(m, grid_n))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = LyReport {
        checks: 0,
        violations: 0,
        min_slack: f64::INFINITY,
        max_slack: f64::NEG_INFINITY,
    };
    for _ in 0..trials {
        let f = random_step_density(&mut rng, grid_n, 200)?;
        for check in ly_check_density(&ops, &f)? {
            report.checks += 1;
            let slack = check.slack();
            if slack < 0.0 {
                report.violations += 1;
            }
            report.min_slack = report.min_slack.min(slack);
            report.max_slack = report.max_slack.max(slack);
        }
    }
    Ok(report)
}
