//! Markov chains in random environments induced by the leak rates.
//!
//! For `m` states with neighbour rates `β_{i,j,ω}` (`|i − j| = 1`), the
//! one-step matrix is the column-stochastic
//!
//! ```text
//! M_ω = I − εΔ_ω + εN_ω,   Δ_ω = diag(Σ_j β_{i,j,ω}),   (N_ω)_{ij} = β_{j,i,ω}.
//! ```
//!
//! All `P`-averages are exact sums over the finitely many symbols of the
//! driving system, and the `o(ε)` corrections of the map level are zero here.

use nalgebra::{DMatrix, DVector, Matrix2};

use rand::Rng;

use crate::driving::{golden_angle, Arc, DrivingSystem};
use crate::error::{Error, Result};

/// Singular values at or below this are treated as zero in the kernel solve.
pub const KERNEL_TOL: f64 = 1e-10;

/// Random-environment chain over a driving system with finite-range rates.
#[derive(Debug, Clone)]
pub struct EnvChain {
    m: usize,
    driving: DrivingSystem,
    /// `β` table per driving symbol; zero diagonal, neighbour entries only.
    tables: Vec<DMatrix<f64>>,
    epsilon: f64,
    /// Cached `(Δ, N)` per symbol.
    decompositions: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// Cached `M^ε` per symbol.
    transitions: Vec<DMatrix<f64>>,
}

impl EnvChain {
    /// Builds the chain from one `m×m` rate table per driving symbol.
    pub fn new(driving: DrivingSystem, tables: Vec<DMatrix<f64>>, epsilon: f64) -> Result<Self> {
        if tables.len() != driving.num_symbols() {
            return Err(Error::InvalidChain(format!(
                "{} rate tables for {} driving symbols",
                tables.len(),
                driving.num_symbols()
            )));
        }
        let m = tables.first().map_or(0, |t| t.nrows());
        if m < 2 {
            return Err(Error::InvalidChain("need at least two states".into()));
        }
        for t in &tables {
            if t.nrows() != m || t.ncols() != m {
                return Err(Error::InvalidChain("rate tables must all be m×m".into()));
            }
            for i in 0..m {
                for j in 0..m {
                    let b = t[(i, j)];
                    if !(b.is_finite() && b >= 0.0) {
                        return Err(Error::InvalidChain(format!("rate β[{i}][{j}] = {b}")));
                    }
                    if b != 0.0 && i.abs_diff(j) != 1 {
                        return Err(Error::InvalidChain(format!(
                            "rate β[{i}][{j}] couples non-neighbouring states"
                        )));
                    }
                }
            }
        }
        let decompositions = tables.iter().map(decompose).collect();
        let mut chain = Self {
            m,
            driving,
            tables,
            epsilon: 0.0,
            decompositions,
            transitions: Vec::new(),
        };
        chain.set_epsilon(epsilon)?;
        Ok(chain)
    }

    /// Reads `(β_{1,2}, β_{2,1}, β_{2,3}, β_{3,2}, …)` from each driving value
    /// vector, which must have length `2(m − 1)`.
    pub fn from_neighbor_rates(driving: DrivingSystem, m: usize, epsilon: f64) -> Result<Self> {
        if m < 2 || driving.dim() != 2 * (m - 1) {
            return Err(Error::InvalidChain(format!(
                "value vectors of length {} do not hold rates for {m} states",
                driving.dim()
            )));
        }
        let tables = (0..driving.num_symbols())
            .map(|s| {
                let v = driving.symbol_values(s);
                let mut t = DMatrix::zeros(m, m);
                for i in 0..m - 1 {
                    t[(i, i + 1)] = v[2 * i];
                    t[(i + 1, i)] = v[2 * i + 1];
                }
                t
            })
            .collect();
        Self::new(driving, tables, epsilon)
    }

    /// Chain induced by paired tent maps whose driving values are `(a, b)`:
    /// the left interval leaks at rate `β_L = b`, the right at `β_R = a`.
    pub fn from_paired_tent(driving: DrivingSystem, epsilon: f64) -> Result<Self> {
        if driving.dim() != 2 {
            return Err(Error::InvalidChain(
                "paired tent values must be (a, b)".into(),
            ));
        }
        let tables = (0..driving.num_symbols())
            .map(|s| {
                let v = driving.symbol_values(s);
                DMatrix::from_row_slice(2, 2, &[0.0, v[1], v[0], 0.0])
            })
            .collect();
        Self::new(driving, tables, epsilon)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn driving(&self) -> &DrivingSystem {
        &self.driving
    }

    /// Declared `‖β‖_∞`: the largest rate over all symbols.
    pub fn rate_bound(&self) -> f64 {
        self.tables
            .iter()
            .flat_map(|t| t.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InadmissibleEpsilon {
                epsilon,
                diagonal: f64::NAN,
            });
        }
        for (delta, _) in &self.decompositions {
            for i in 0..self.m {
                let diagonal = 1.0 - epsilon * delta[(i, i)];
                if diagonal < 0.0 {
                    return Err(Error::InadmissibleEpsilon { epsilon, diagonal });
                }
            }
        }
        self.epsilon = epsilon;
        self.transitions = self
            .decompositions
            .iter()
            .map(|(d, n)| compose(epsilon, d, n))
            .collect();
        Ok(())
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.set_epsilon(epsilon)?;
        Ok(self)
    }

    /// `β` table at fiber `σ^k ω`.
    pub fn rates(&self, k: i64) -> Result<&DMatrix<f64>> {
        Ok(&self.tables[self.driving.fiber_symbol(k)?])
    }

    /// `M^ε_{σ^k ω}`.
    pub fn transition_matrix(&self, k: i64) -> Result<&DMatrix<f64>> {
        Ok(&self.transitions[self.driving.fiber_symbol(k)?])
    }

    /// `(Δ_{σ^k ω}, N_{σ^k ω})`; independent of `ε`.
    pub fn delta_n_decompose(&self, k: i64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok(self.decompositions[self.driving.fiber_symbol(k)?].clone())
    }

    /// Exact `(∫Δ dP, ∫N dP)`.
    pub fn averaged_delta_n(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut d = DMatrix::zeros(self.m, self.m);
        let mut n = DMatrix::zeros(self.m, self.m);
        for (w, (dd, nn)) in self
            .driving
            .symbol_weights()
            .iter()
            .zip(&self.decompositions)
        {
            d += dd * *w;
            n += nn * *w;
        }
        (d, n)
    }

    /// Limit vector `v⁰` from the exact averages.
    pub fn limit(&self) -> Result<ChainLimit> {
        let (delta_avg, n_avg) = self.averaged_delta_n();
        let v0 = solve_v0(&delta_avg, &n_avg)?;
        Ok(ChainLimit {
            v0,
            delta_avg,
            n_avg,
        })
    }

    fn check_window(&self, lo: i64, hi: i64) -> Result<()> {
        if self.driving.covers(lo, hi) {
            Ok(())
        } else {
            let radius = self.driving.window_radius().unwrap_or(i64::MAX);
            let index = if lo < -radius { lo } else { hi };
            Err(Error::OutOfWindow { index, radius })
        }
    }

    /// `M_{σ^{-1}ω} ⋯ M_{σ^{-n}ω}` for `ω` the fiber at index `k`.
    pub fn backward_product(&self, k: i64, n: usize) -> Result<DMatrix<f64>> {
        self.check_window(k - n as i64, k - 1)?;
        let mut q = DMatrix::identity(self.m, self.m);
        let mut tmp = DMatrix::zeros(self.m, self.m);
        let mut cursor = self.driving.cursor(k);
        for _ in 0..n {
            cursor.backward();
            q.mul_to(&self.transitions[cursor.symbol()?], &mut tmp);
            std::mem::swap(&mut q, &mut tmp);
        }
        Ok(q)
    }

    fn two_state(&self) -> Result<()> {
        if self.m == 2 {
            Ok(())
        } else {
            Err(Error::InvalidChain(format!(
                "operation needs m = 2, chain has m = {}",
                self.m
            )))
        }
    }

    /// `(β_L, β_R)` of the symbol at the cursor, for two-state chains.
    fn lr(&self, symbol: usize) -> (f64, f64) {
        let t = &self.tables[symbol];
        (t[(0, 1)], t[(1, 0)])
    }

    /// Entrywise summed form of the two-state backward product,
    /// `ε Σ_k β_{·,σ^{-k-1}ω} Π_{i<k}(1 − εγ_{σ^{-i-1}ω})`.
    pub fn backward_product_closed_form(&self, k: i64, n: usize) -> Result<Matrix2<f64>> {
        self.two_state()?;
        self.check_window(k - n as i64, k - 1)?;
        let eps = self.epsilon;
        let (mut sum_l, mut sum_r, mut prod) = (0.0, 0.0, 1.0);
        let mut cursor = self.driving.cursor(k);
        for _ in 0..n {
            cursor.backward();
            let (bl, br) = self.lr(cursor.symbol()?);
            sum_l += bl * prod;
            sum_r += br * prod;
            prod *= 1.0 - eps * (bl + br);
        }
        Ok(Matrix2::new(
            1.0 - eps * sum_l,
            eps * sum_r,
            eps * sum_l,
            1.0 - eps * sum_r,
        ))
    }

    /// `π^ε_ω = Σ_n εβ_{R,σ^{-n-1}ω} Π_{k<n}(1 − εγ_{σ^{-k-1}ω})` truncated once
    /// the remaining tail is certified to be at most `tail_tol`.
    ///
    /// Since `εβ_R ≤ εγ`, the tail after `n` terms telescopes to at most the
    /// running product `Π_{k<n}(1 − εγ)`, which is tracked exactly.
    pub fn pi_series(&self, k: i64, tail_tol: f64) -> Result<PiSeries> {
        self.two_state()?;
        let eps = self.epsilon;
        let gamma_avg = self.averaged_gamma();
        if eps == 0.0 || gamma_avg == 0.0 {
            return Err(Error::ZeroDenominator);
        }
        let available = self
            .driving
            .window_radius()
            .map_or(usize::MAX, |r| (k + r).max(0) as usize);
        let mut cursor = self.driving.cursor(k);
        let (mut sum, mut prod, mut terms) = (0.0, 1.0, 0usize);
        while prod > tail_tol {
            if terms >= available || terms >= MAX_SERIES_TERMS {
                let observed = if prod > 0.0 && terms > 0 {
                    -prod.ln() / terms as f64
                } else {
                    0.0
                };
                let rate = if observed > 0.0 {
                    observed
                } else {
                    -(1.0 - eps * gamma_avg).ln()
                };
                let required = ((1.0 / tail_tol).ln() / rate).ceil() as usize;
                return Err(Error::TruncationNotCertified {
                    required,
                    available: terms,
                });
            }
            cursor.backward();
            let (bl, br) = self.lr(cursor.symbol()?);
            sum += eps * br * prod;
            prod *= 1.0 - eps * (bl + br);
            terms += 1;
        }
        Ok(PiSeries {
            value: sum,
            terms,
            tail_bound: prod,
        })
    }

    /// Iterates `p ↦ p(1 − εγ) + εβ_R` from fiber `k − n` up to fiber `k`.
    pub fn p_recursion(&self, k: i64, n: usize, p_start: f64) -> Result<f64> {
        self.two_state()?;
        if !(0.0..=1.0).contains(&p_start) {
            return Err(Error::InvalidChain(format!(
                "p_start = {p_start} not in [0, 1]"
            )));
        }
        self.check_window(k - n as i64, k - 1)?;
        let eps = self.epsilon;
        let mut cursor = self.driving.cursor(k - n as i64);
        let mut p = p_start;
        for _ in 0..n {
            let (bl, br) = self.lr(cursor.symbol()?);
            p = p * (1.0 - eps * (bl + br)) + eps * br;
            cursor.forward();
        }
        Ok(p)
    }

    /// `∫ γ dP = ∫ (β_L + β_R) dP` for two-state chains.
    fn averaged_gamma(&self) -> f64 {
        let (d, _) = self.averaged_delta_n();
        d.trace()
    }

    /// `∫β_R dP / ∫(β_L + β_R) dP`.
    pub fn pi_limit(&self) -> Result<f64> {
        self.two_state()?;
        let (d, _) = self.averaged_delta_n();
        let gamma = d[(0, 0)] + d[(1, 1)];
        if gamma == 0.0 {
            return Err(Error::ZeroDenominator);
        }
        Ok(d[(1, 1)] / gamma)
    }

    /// Smallest positive `(∫Δ)_{ii}`, which sets the saturation horizon.
    pub fn min_positive_rate(&self) -> Option<f64> {
        let (d, _) = self.averaged_delta_n();
        (0..self.m)
            .map(|i| d[(i, i)])
            .filter(|&x| x > 0.0)
            .min_by(f64::total_cmp)
    }

    /// Products are saturated when `n ≥ 20 / (ε · min_i (∫Δ)_{ii})`.
    pub fn saturation_horizon(&self) -> Option<usize> {
        let rate = self.min_positive_rate()?;
        (self.epsilon > 0.0).then(|| (20.0 / (self.epsilon * rate)).ceil() as usize)
    }
}

const MAX_SERIES_TERMS: usize = 100_000_000;

fn decompose(beta: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = beta.nrows();
    let mut delta = DMatrix::zeros(m, m);
    for i in 0..m {
        delta[(i, i)] = beta.row(i).sum();
    }
    (delta, beta.transpose())
}

fn compose(epsilon: f64, delta: &DMatrix<f64>, n: &DMatrix<f64>) -> DMatrix<f64> {
    let m = delta.nrows();
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0 - epsilon * delta[(i, i)]
        } else {
            epsilon * n[(i, j)]
        }
    })
}

/// Truncated weight series with its certified tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiSeries {
    pub value: f64,
    pub terms: usize,
    pub tail_bound: f64,
}

/// `v⁰` together with the averaged matrices it was solved from.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLimit {
    pub v0: DVector<f64>,
    pub delta_avg: DMatrix<f64>,
    pub n_avg: DMatrix<f64>,
}

impl ChainLimit {
    /// `‖(I − (∫Δ)^{-1} ∫N) v⁰‖_∞`, or `None` when `∫Δ` is singular.
    pub fn residual(&self) -> Option<f64> {
        let a = limit_operator(&self.delta_avg, &self.n_avg)?;
        Some((a * &self.v0).amax())
    }
}

fn limit_operator(delta_avg: &DMatrix<f64>, n_avg: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = delta_avg.nrows();
    if (0..m).any(|i| delta_avg[(i, i)] == 0.0) {
        return None;
    }
    let mut a = DMatrix::identity(m, m);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] -= n_avg[(i, j)] / delta_avg[(i, i)];
        }
    }
    Some(a)
}

/// Solves `(I − (∫Δ)^{-1} ∫N) v = 0`, `Σ v_i = 1`, `v ≥ 0`.
///
/// Exactly one zero diagonal entry of `∫Δ` marks an absorbing state; when
/// every other state can reach it the limit is that state's indicator.
pub fn solve_v0(delta_avg: &DMatrix<f64>, n_avg: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = delta_avg.nrows();
    if m < 2 || delta_avg.ncols() != m || n_avg.shape() != (m, m) {
        return Err(Error::InvalidChain(
            "averaged matrices must be m×m, m >= 2".into(),
        ));
    }
    let zeros: Vec<usize> = (0..m).filter(|&i| delta_avg[(i, i)] == 0.0).collect();
    match zeros.len() {
        0 => {}
        1 => return absorbing_limit(zeros[0], n_avg),
        z => return Err(Error::SingularDelta { zero_diagonals: z }),
    }

    let a = limit_operator(delta_avg, n_avg).expect("diagonal checked non-zero");
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let kernel: Vec<usize> = (0..m)
        .filter(|&i| svd.singular_values[i] <= KERNEL_TOL)
        .collect();
    if kernel.len() != 1 {
        return Err(Error::KernelDimension(kernel.len()));
    }
    let mut v: DVector<f64> = v_t.row(kernel[0]).transpose();
    let total = v.sum();
    if total == 0.0 {
        return Err(Error::KernelDimension(0));
    }
    v /= total;
    if v.iter().any(|&x| x < -1e-12) {
        return Err(Error::InvalidChain("kernel vector has mixed signs".into()));
    }
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(v)
}

fn absorbing_limit(state: usize, n_avg: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = n_avg.nrows();
    // Mass moves j -> i at averaged rate n_avg[(i, j)]; every state must reach `state`.
    let mut reaches = vec![false; m];
    reaches[state] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for j in 0..m {
            if !reaches[j] && (0..m).any(|i| reaches[i] && n_avg[(i, j)] > 0.0) {
                reaches[j] = true;
                changed = true;
            }
        }
    }
    let stranded = reaches.iter().filter(|r| !**r).count();
    if stranded > 0 {
        return Err(Error::KernelDimension(1 + stranded));
    }
    let mut v = DVector::zeros(m);
    v[state] = 1.0;
    Ok(v)
}

/// One `(ε, fiber, column)` distance between the backward product and `v⁰`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainLimitRow {
    pub epsilon: f64,
    pub fiber: i64,
    pub n: usize,
    pub col: usize,
    pub max_dist_to_v0: f64,
    /// `n` is below the saturation horizon for this `ε`.
    pub unsaturated: bool,
}

/// Distances between every column of `M_{σ^{-1}ω} ⋯ M_{σ^{-n}ω}` and `v⁰`,
/// for each `ε` and fiber. Rows are ordered by `ε`, then fiber, then column.
pub fn chain_limit_check(
    chain: &EnvChain,
    eps_list: &[f64],
    n: usize,
    fibers: &[i64],
) -> Result<Vec<ChainLimitRow>> {
    let v0 = chain.limit()?.v0;
    let mut rows = Vec::new();
    for &eps in eps_list {
        let c = chain.clone().with_epsilon(eps)?;
        let unsaturated = c.saturation_horizon().map_or(true, |h| n < h);
        for &k in fibers {
            let q = c.backward_product(k, n)?;
            for col in 0..c.m() {
                let dist = (q.column(col) - &v0).amax();
                rows.push(ChainLimitRow {
                    epsilon: eps,
                    fiber: k,
                    n,
                    col,
                    max_dist_to_v0: dist,
                    unsaturated,
                });
            }
        }
    }
    Ok(rows)
}

/// A two-state chain with rates drawn from `[0.05, 1]`: constant with
/// probability one half, otherwise piecewise constant over 2 to 4 random arcs
/// of a golden-angle rotation. Returns the chain and whether it varies.
pub fn random_two_state<R: Rng>(rng: &mut R, epsilon: f64) -> Result<(EnvChain, bool)> {
    let varying = rng.gen_bool(0.5);
    let arcs = if varying { rng.gen_range(2..=4) } else { 1 };
    let mut starts: Vec<f64> = (1..arcs).map(|_| rng.gen_range(0.0..1.0)).collect();
    starts.push(0.0);
    starts.sort_by(f64::total_cmp);
    starts.dedup();
    let arcs = starts
        .into_iter()
        .map(|s| {
            Arc::new(
                s,
                vec![rng.gen_range(0.05..=1.0), rng.gen_range(0.05..=1.0)],
            )
        })
        .collect();
    let driving = DrivingSystem::rotation(golden_angle(), arcs)?;
    Ok((EnvChain::from_neighbor_rates(driving, 2, epsilon)?, varying))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driving::Symbol;

    fn constant(values: Vec<f64>) -> DrivingSystem {
        DrivingSystem::rotation(golden_angle(), vec![Arc::new(0.0, values)]).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn two_state_transition() {
        let chain = EnvChain::from_neighbor_rates(constant(vec![1.0, 1.0]), 2, 0.1).unwrap();
        let m = chain.transition_matrix(0).unwrap();
        assert_eq!(m, &DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]));
        let id = chain.clone().with_epsilon(0.0).unwrap();
        assert_eq!(id.transition_matrix(5).unwrap(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn three_state_middle_column() {
        let chain = EnvChain::from_neighbor_rates(constant(vec![1.0; 4]), 3, 0.1).unwrap();
        let m = chain.transition_matrix(0).unwrap();
        assert!(close(m[(0, 1)], 0.1, 1e-15));
        assert!(close(m[(1, 1)], 0.8, 1e-15));
        assert!(close(m[(2, 1)], 0.1, 1e-15));
        for j in 0..3 {
            assert!(close(m.column(j).sum(), 1.0, 1e-15));
        }
    }

    #[test]
    fn inadmissible_epsilon() {
        let chain = EnvChain::from_neighbor_rates(constant(vec![1.0; 4]), 3, 0.1).unwrap();
        assert!(matches!(
            chain.with_epsilon(0.6),
            Err(Error::InadmissibleEpsilon { .. })
        ));
    }

    #[test]
    fn non_neighbour_rates_rejected() {
        let mut t = DMatrix::zeros(3, 3);
        t[(0, 2)] = 0.5;
        assert!(EnvChain::new(constant(vec![0.0]), vec![t], 0.1).is_err());
    }

    #[test]
    fn backward_product_small_cases() {
        let chain = EnvChain::from_neighbor_rates(constant(vec![1.0, 1.0]), 2, 0.1).unwrap();
        assert_eq!(
            chain.backward_product(0, 0).unwrap(),
            DMatrix::identity(2, 2)
        );
        let q = chain.backward_product(0, 2).unwrap();
        assert!(close(q[(0, 1)], 0.18, 1e-15));
        assert!(close(q.column(0).sum(), 1.0, 1e-12));
        let cf = chain.backward_product_closed_form(0, 2).unwrap();
        assert!(close(cf[(0, 1)], 0.18, 1e-15));
    }

    #[test]
    fn decomposition_two_state() {
        let chain = EnvChain::from_neighbor_rates(constant(vec![0.3, 0.7]), 2, 0.1).unwrap();
        let (d, n) = chain.delta_n_decompose(0).unwrap();
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.7]));
        assert_eq!(n, DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.3, 0.0]));
        let other = chain.clone().with_epsilon(0.01).unwrap();
        assert_eq!(other.delta_n_decompose(0).unwrap(), (d.clone(), n.clone()));
        let eps = chain.epsilon();
        let rebuilt = DMatrix::identity(2, 2) - &d * eps + &n * eps;
        assert_eq!(&rebuilt, chain.transition_matrix(0).unwrap());
    }

    #[test]
    fn decomposition_middle_row() {
        let chain =
            EnvChain::from_neighbor_rates(constant(vec![0.2, 0.3, 0.4, 0.5]), 3, 0.1).unwrap();
        let (d, _) = chain.delta_n_decompose(3).unwrap();
        assert!(close(d[(1, 1)], 0.3 + 0.4, 1e-15));
    }

    #[test]
    fn pi_series_geometric_cases() {
        for &(c, eps) in &[(1.0, 0.1), (0.3, 0.05), (0.7, 0.01)] {
            let chain = EnvChain::from_neighbor_rates(constant(vec![c, c]), 2, eps).unwrap();
            let s = chain.pi_series(0, 1e-12).unwrap();
            assert!(close(s.value, 0.5, 1e-11), "{s:?}");
            assert!(s.tail_bound <= 1e-12);
        }
        let chain =
            EnvChain::from_neighbor_rates(constant(vec![3.0 / 4.0, 1.0 / 4.0]), 2, 0.01).unwrap();
        // β_L = 3, β_R = 1 scaled by 1/4 keeps rates in [0, 1]; ratio unchanged.
        assert!(close(chain.pi_series(0, 1e-13).unwrap().value, 0.25, 1e-12));
        let chain = EnvChain::from_neighbor_rates(constant(vec![0.5, 0.0]), 2, 0.1).unwrap();
        assert_eq!(chain.pi_series(0, 1e-12).unwrap().value, 0.0);
    }

    #[test]
    fn pi_series_window_too_small() {
        let ds = DrivingSystem::shift(vec![Symbol::new(1.0, vec![0.5, 0.5])], 0, 50).unwrap();
        let chain = EnvChain::from_neighbor_rates(ds, 2, 0.01).unwrap();
        match chain.pi_series(0, 1e-10) {
            Err(Error::TruncationNotCertified {
                required,
                available,
            }) => {
                assert_eq!(available, 50);
                assert!(required > 2000, "{required}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pi_limit_values() {
        let sym = EnvChain::from_neighbor_rates(constant(vec![0.4, 0.4]), 2, 0.1).unwrap();
        assert_eq!(sym.pi_limit().unwrap(), 0.5);
        let chain = EnvChain::from_neighbor_rates(constant(vec![0.6, 0.4]), 2, 0.1).unwrap();
        assert!(close(chain.pi_limit().unwrap(), 0.4, 1e-15));
        let ds = DrivingSystem::rotation(
            golden_angle(),
            vec![
                Arc::new(0.0, vec![0.5, 1.0]),
                Arc::new(0.25, vec![0.2, 0.0]),
            ],
        )
        .unwrap();
        let chain = EnvChain::from_neighbor_rates(ds, 2, 0.1).unwrap();
        let beta_l = 0.25 * 0.5 + 0.75 * 0.2;
        assert!(close(
            chain.pi_limit().unwrap(),
            0.25 / (0.25 + beta_l),
            1e-15
        ));
        let dead = EnvChain::from_neighbor_rates(constant(vec![0.0, 0.0]), 2, 0.1).unwrap();
        assert_eq!(dead.pi_limit(), Err(Error::ZeroDenominator));
    }

    #[test]
    fn p_recursion_cases() {
        let chain = EnvChain::from_neighbor_rates(constant(vec![1.0, 1.0]), 2, 0.1).unwrap();
        assert_eq!(chain.p_recursion(0, 0, 0.3).unwrap(), 0.3);
        assert!(close(chain.p_recursion(0, 1, 1.0).unwrap(), 0.9, 1e-15));
        for p in [0.0, 0.5, 1.0] {
            assert!(close(chain.p_recursion(0, 500, p).unwrap(), 0.5, 1e-10));
        }
        assert!(chain.p_recursion(0, 1, 1.5).is_err());
    }

    #[test]
    fn solve_v0_cases() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.6, 0.4]));
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 0.4, 0.6, 0.0]);
        let v = solve_v0(&d, &n).unwrap();
        assert!(close(v[0], 0.4, 1e-15) && close(v[1], 0.6, 1e-15), "{v}");

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5]));
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let v = solve_v0(&d, &n).unwrap();
        assert!(close(v[0], 0.5, 1e-15) && close(v[1], 0.5, 1e-15));

        let chain = EnvChain::from_neighbor_rates(constant(vec![1.0; 4]), 3, 0.1).unwrap();
        let lim = chain.limit().unwrap();
        for i in 0..3 {
            assert!(close(lim.v0[i], 1.0 / 3.0, 1e-14));
        }
        assert!(lim.residual().unwrap() <= 1e-12);
    }

    #[test]
    fn singular_and_absorbing() {
        let d = DMatrix::zeros(2, 2);
        let n = DMatrix::zeros(2, 2);
        assert_eq!(
            solve_v0(&d, &n),
            Err(Error::SingularDelta { zero_diagonals: 2 })
        );

        // State 0 never leaks; state 1 drains into it.
        let chain = EnvChain::from_neighbor_rates(constant(vec![0.0, 0.5]), 2, 0.1).unwrap();
        let v = chain.limit().unwrap().v0;
        assert_eq!(v.as_slice(), &[1.0, 0.0]);

        // States 1 and 2 exchange mass but never reach state 0.
        let mut t = DMatrix::zeros(3, 3);
        t[(1, 2)] = 0.5;
        t[(2, 1)] = 0.5;
        let chain = EnvChain::new(constant(vec![0.0]), vec![t], 0.1).unwrap();
        assert!(matches!(chain.limit(), Err(Error::KernelDimension(_))));
    }

    #[test]
    fn chain_limit_rows() {
        let chain = EnvChain::from_neighbor_rates(constant(vec![1.0, 1.0]), 2, 0.01).unwrap();
        let rows = chain_limit_check(&chain, &[0.01], 10_000, &[0, 7]).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows
            .iter()
            .all(|r| r.max_dist_to_v0 < 5e-3 && !r.unsaturated));

        let rows = chain_limit_check(&chain, &[0.0], 10, &[0]).unwrap();
        assert!(rows
            .iter()
            .all(|r| close(r.max_dist_to_v0, 0.5, 1e-15) && r.unsaturated));
    }

    #[test]
    fn paired_tent_rates_are_swapped() {
        let chain = EnvChain::from_paired_tent(constant(vec![0.6, 0.4]), 0.1).unwrap();
        let v = chain.limit().unwrap().v0;
        assert!(close(v[0], 0.6, 1e-15) && close(v[1], 0.4, 1e-15));
    }
}
