//! Random invariant densities, second Oseledets functions and the second
//! Lyapunov exponent of the discretized transfer operator cocycle.
//!
//! `φ_ω` is approximated by pulling the uniform density back along the base
//! orbit; `ψ_ω` by pushing the zero-mean seed `½1_{I_L} − ½1_{I_R}` through
//! the same orbit segment. Both converge at the rate of the spectral gap, so
//! the horizon is doubled until the result stops moving.

use rayon::prelude::*;

use crate::driving::DrivingSystem;
use crate::error::{Error, Result};
use crate::maps::MapFamily;
use crate::markov::EnvChain;
use crate::transfer::{ulam_matrix, Density, UlamOperator};

/// L1 change between horizons `N` and `2N` accepted as converged.
pub const DOUBLING_TOL: f64 = 1e-8;
/// Largest horizon tried by the doubling loop.
pub const MAX_HORIZON: usize = 1 << 16;
/// `|∫_{I_L} ψ|` below this leaves the sign of `ψ` undetermined.
pub const SIGN_TOL: f64 = 1e-12;

/// One experiment cell: `ε`, grid, starting horizon and the sampled fibers.
#[derive(Debug, Clone, PartialEq)]
pub struct CocycleRun {
    pub epsilon: f64,
    pub grid_n: usize,
    pub horizon: usize,
    pub fiber_indices: Vec<i64>,
    pub renorm_every: usize,
}

impl CocycleRun {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidRun(format!("epsilon = {}", self.epsilon)));
        }
        if self.grid_n < 2 || self.grid_n % 2 != 0 {
            return Err(Error::InvalidGrid(self.grid_n));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidRun("horizon must be at least 1".into()));
        }
        if self.renorm_every == 0 || self.horizon % self.renorm_every != 0 {
            return Err(Error::InvalidRun(format!(
                "renorm_every = {} does not divide horizon = {}",
                self.renorm_every, self.horizon
            )));
        }
        Ok(())
    }
}

/// Ulam operators for every driving symbol at a fixed `ε` and grid.
#[derive(Debug, Clone)]
pub struct DiscreteCocycle<'a> {
    driving: &'a DrivingSystem,
    family: MapFamily,
    epsilon: f64,
    ops: Vec<UlamOperator>,
}

impl<'a> DiscreteCocycle<'a> {
    pub fn new(
        driving: &'a DrivingSystem,
        family: MapFamily,
        epsilon: f64,
        grid_n: usize,
    ) -> Result<Self> {
        if driving.dim() != family.value_dim() {
            return Err(Error::InvalidRun(format!(
                "driving values have length {}, map family needs {}",
                driving.dim(),
                family.value_dim()
            )));
        }
        let ops = (0..driving.num_symbols())
            .into_par_iter()
            .map(|s| {
                ulam_matrix(
                    &family.fiber_map(driving.symbol_values(s), epsilon)?,
                    grid_n,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            driving,
            family,
            epsilon,
            ops,
        })
    }

    pub fn driving(&self) -> &DrivingSystem {
        self.driving
    }

    pub fn family(&self) -> MapFamily {
        self.family
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn grid_n(&self) -> usize {
        self.ops[0].grid_n()
    }

    /// `Π L_{σ^k ω}`.
    pub fn operator(&self, k: i64) -> Result<&UlamOperator> {
        Ok(&self.ops[self.driving.fiber_symbol(k)?])
    }

    /// `Π L^{(n)}_{σ^{from} ω} f`, without renormalization.
    pub fn push(&self, f: &Density, from: i64, n: usize) -> Result<Density> {
        self.check_grid(f)?;
        self.check_window(from, n)?;
        let mut x = f.values().to_vec();
        let mut y = vec![0.0; x.len()];
        let mut cursor = self.driving.cursor(from);
        for _ in 0..n {
            self.ops[cursor.symbol()?].apply_into(&x, &mut y);
            std::mem::swap(&mut x, &mut y);
            cursor.forward();
        }
        Density::from_values(x)
    }

    fn check_grid(&self, f: &Density) -> Result<()> {
        if f.grid_n() == self.grid_n() {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.grid_n(),
                found: f.grid_n(),
            })
        }
    }

    fn check_window(&self, from: i64, n: usize) -> Result<()> {
        let hi = from + n as i64 - 1;
        if n == 0 || self.driving.covers(from, hi) {
            return Ok(());
        }
        let radius = self.driving.window_radius().unwrap_or(i64::MAX);
        let index = if from < -radius { from } else { hi };
        Err(Error::OutOfWindow { index, radius })
    }

    /// Pushes `seed` from fiber `k − n` to fiber `k`, rescaling every
    /// `renorm_every` steps by `norm`. Returns the final iterate and the log of
    /// each rescaling factor together with the step count it covers.
    fn iterate(
        &self,
        seed: &Density,
        k: i64,
        n: usize,
        renorm_every: usize,
        zero_mean: bool,
        norm: impl Fn(&[f64], f64) -> f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_grid(seed)?;
        let from = k - n as i64;
        self.check_window(from, n)?;
        let w = 2.0 / self.grid_n() as f64;
        let mut x = seed.values().to_vec();
        let mut y = vec![0.0; x.len()];
        let mut logs = Vec::with_capacity(n / renorm_every);
        let mut cursor = self.driving.cursor(from);
        for step in 1..=n {
            self.ops[cursor.symbol()?].apply_into(&x, &mut y);
            std::mem::swap(&mut x, &mut y);
            cursor.forward();
            if zero_mean {
                // Rounding leaks a constant component, which the cocycle
                // preserves while ψ decays; project it back out.
                let mean = x.iter().sum::<f64>() / x.len() as f64;
                x.iter_mut().for_each(|v| *v -= mean);
            }
            if step % renorm_every == 0 || step == n {
                let s = norm(&x, w);
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::InvalidRun(format!(
                        "iterate collapsed at step {step}"
                    )));
                }
                x.iter_mut().for_each(|v| *v /= s);
                logs.push(s.ln());
            }
        }
        Ok((x, logs))
    }
}

fn integral(x: &[f64], w: f64) -> f64 {
    x.iter().sum::<f64>() * w
}

fn l1(x: &[f64], w: f64) -> f64 {
    x.iter().map(|v| v.abs()).sum::<f64>() * w
}

/// Pull-back approximation of `φ_ω` at one fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct Pullback {
    pub density: Density,
    pub horizon: usize,
    /// Mean log of the mass normalizers; zero up to rounding.
    pub lambda1: f64,
    pub doubling_change: f64,
    pub converged: bool,
}

/// Zero-mean iteration from fiber `k − n` to `k`, before sign fixing.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroMeanRun {
    /// L1-normalized final iterate.
    pub function: Density,
    /// `Σ log ρ` over the whole run.
    pub rho_log_sum: f64,
    /// Mean log growth per step after discarding the first quarter.
    pub lambda2: f64,
}

/// Second Oseledets function at one fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondFunction {
    pub psi: Density,
    pub lambda2: f64,
    pub rho_log_sum: f64,
    pub horizon: usize,
    pub doubling_change: f64,
    pub converged: bool,
}

/// `Π L^{(n)}_{σ^{-n}ω} 1̄` with mass renormalization; fixed horizon.
pub fn pullback_fixed(
    cocycle: &DiscreteCocycle<'_>,
    k: i64,
    n: usize,
    renorm_every: usize,
) -> Result<(Density, f64)> {
    let seed = Density::constant(cocycle.grid_n(), 0.5)?;
    let (x, logs) = cocycle.iterate(&seed, k, n, renorm_every, false, integral)?;
    let lambda1 = logs.iter().sum::<f64>() / n as f64;
    Ok((Density::from_values(x)?, lambda1))
}

/// Pushes a zero-mean `seed` from fiber `k − n` to `k` with L1 renormalization.
pub fn zero_mean_run(
    cocycle: &DiscreteCocycle<'_>,
    k: i64,
    n: usize,
    renorm_every: usize,
    seed: &Density,
) -> Result<ZeroMeanRun> {
    let (x, logs) = cocycle.iterate(seed, k, n, renorm_every, true, l1)?;
    let burn_in = n / 4;
    let (mut tail, mut counted) = (0.0, 0usize);
    for (i, log) in logs.iter().enumerate() {
        let end = ((i + 1) * renorm_every).min(n);
        let start = i * renorm_every;
        if start >= burn_in {
            tail += log;
            counted += end - start;
        }
    }
    let lambda2 = if counted > 0 {
        tail / counted as f64
    } else {
        0.0
    };
    Ok(ZeroMeanRun {
        function: Density::from_values(x)?,
        rho_log_sum: logs.iter().sum(),
        lambda2,
    })
}

/// Flips `f` so that `∫_{I_L} f > 0`.
pub fn fix_sign(mut f: Density) -> Result<Density> {
    let left = f.left_mass();
    if left.abs() < SIGN_TOL {
        return Err(Error::SignUndetermined(left));
    }
    if left < 0.0 {
        f.scale(-1.0);
    }
    Ok(f)
}

/// Doubles the horizon from `run.horizon` until successive results differ by
/// at most [`DOUBLING_TOL`] in L1, the cap is hit or the window runs out.
fn adaptive<T>(
    cocycle: &DiscreteCocycle<'_>,
    run: &CocycleRun,
    k: i64,
    compute: impl Fn(usize) -> Result<T>,
    distance: impl Fn(&T, &T) -> Result<f64>,
) -> Result<(T, usize, f64, bool)> {
    run.validate()?;
    let mut n = run.horizon;
    let mut prev = compute(n)?;
    loop {
        let next_n = 2 * n;
        if next_n > MAX_HORIZON || !cocycle.driving().covers(k - next_n as i64, k - 1) {
            return Ok((prev, n, f64::NAN, false));
        }
        let next = compute(next_n)?;
        let change = distance(&prev, &next)?;
        if change <= DOUBLING_TOL {
            return Ok((next, next_n, change, true));
        }
        prev = next;
        n = next_n;
    }
}

/// Random invariant density at fiber `k` with adaptive horizon.
pub fn pullback_density(
    cocycle: &DiscreteCocycle<'_>,
    run: &CocycleRun,
    k: i64,
) -> Result<Pullback> {
    let ((density, lambda1), horizon, doubling_change, converged) = adaptive(
        cocycle,
        run,
        k,
        |n| pullback_fixed(cocycle, k, n, run.renorm_every),
        |a, b| a.0.l1_distance(&b.0),
    )?;
    Ok(Pullback {
        density,
        horizon,
        lambda1,
        doubling_change,
        converged,
    })
}

/// Second Oseledets function at fiber `k` with adaptive horizon.
pub fn second_function(
    cocycle: &DiscreteCocycle<'_>,
    run: &CocycleRun,
    k: i64,
) -> Result<SecondFunction> {
    let seed = theoretical_psi0(cocycle.grid_n())?;
    let (r, horizon, doubling_change, converged) = adaptive(
        cocycle,
        run,
        k,
        |n| zero_mean_run(cocycle, k, n, run.renorm_every, &seed),
        |a, b| {
            let (a, b) = (fix_sign(a.function.clone())?, fix_sign(b.function.clone())?);
            a.l1_distance(&b)
        },
    )?;
    Ok(SecondFunction {
        psi: fix_sign(r.function)?,
        lambda2: r.lambda2,
        rho_log_sum: r.rho_log_sum,
        horizon,
        doubling_change,
        converged,
    })
}

/// `Σ_i v_i 1_{I_i} / |I_i|` over `m` equal blocks.
pub fn block_density(weights: &[f64], grid_n: usize) -> Result<Density> {
    let m = weights.len();
    let h = 2.0 / m as f64;
    let mut out = Density::zeros(grid_n)?;
    for (i, &w) in weights.iter().enumerate() {
        let lo = -1.0 + i as f64 * h;
        let hi = if i + 1 == m { 1.0 } else { lo + h };
        let ind = Density::indicator(grid_n, lo, hi)?;
        out = out.combine(1.0, &ind, w / h)?;
    }
    Ok(out)
}

/// `(∫a / ∫(a+b)) 1_{I_L} + (∫b / ∫(a+b)) 1_{I_R}` for driving values `(a, b)`.
pub fn theoretical_phi0(driving: &DrivingSystem, grid_n: usize) -> Result<Density> {
    if driving.dim() != 2 {
        return Err(Error::InvalidRun(
            "tent driving values must be (a, b)".into(),
        ));
    }
    let a = driving.average_observable(0)?;
    let b = driving.average_observable(1)?;
    let total = a + b;
    if total == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    block_density(&[a / total, b / total], grid_n)
}

/// `½ 1_{I_L} − ½ 1_{I_R}`.
pub fn theoretical_psi0(grid_n: usize) -> Result<Density> {
    Density::left_indicator(grid_n)?.combine(0.5, &Density::right_indicator(grid_n)?, -0.5)
}

/// Limit density for any map family, from the chain limit for `m` blocks.
pub fn family_phi0(driving: &DrivingSystem, family: MapFamily, grid_n: usize) -> Result<Density> {
    match family {
        MapFamily::PairedTent => theoretical_phi0(driving, grid_n),
        MapFamily::Chain { m } => {
            let chain = EnvChain::from_neighbor_rates(driving.clone(), m, 0.0)?;
            let v0 = chain.limit()?.v0;
            block_density(v0.as_slice(), grid_n)
        }
    }
}

/// `φ` and `ψ` at one fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberSpectrum {
    pub fiber: i64,
    pub phi: Density,
    pub psi: Density,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho_log_sum: f64,
    pub horizon: usize,
    pub converged: bool,
}

/// Spectral data over all fibers of a run; exponents averaged over fibers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub fibers: Vec<FiberSpectrum>,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub fn spectral(cocycle: &DiscreteCocycle<'_>, run: &CocycleRun) -> Result<SpectralResult> {
    let fibers = run
        .fiber_indices
        .par_iter()
        .map(|&k| {
            let p = pullback_density(cocycle, run, k)?;
            let s = second_function(cocycle, run, k)?;
            Ok(FiberSpectrum {
                fiber: k,
                phi: p.density,
                psi: s.psi,
                lambda1: p.lambda1,
                lambda2: s.lambda2,
                rho_log_sum: s.rho_log_sum,
                horizon: p.horizon.max(s.horizon),
                converged: p.converged && s.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let count = fibers.len().max(1) as f64;
    let lambda1 = fibers.iter().map(|f| f.lambda1).sum::<f64>() / count;
    let lambda2 = fibers.iter().map(|f| f.lambda2).sum::<f64>() / count;
    Ok(SpectralResult {
        fibers,
        lambda1,
        lambda2,
    })
}

/// `ε ↦ grid_n`.
#[derive(Debug, Clone, PartialEq)]
pub enum GridRule {
    /// `max(min, factor / ε)` rounded up to even; `min` at `ε = 0`.
    Coupled { min: usize, factor: f64 },
    /// Explicit `(ε, grid_n)` pairs.
    Table(Vec<(f64, usize)>),
}

impl Default for GridRule {
    fn default() -> Self {
        GridRule::Coupled {
            min: 1024,
            factor: 16.0,
        }
    }
}

impl GridRule {
    pub fn grid_for(&self, epsilon: f64) -> Result<usize> {
        let n = match self {
            GridRule::Coupled { min, factor } => {
                let coupled = if epsilon > 0.0 {
                    (factor / epsilon).ceil() as usize
                } else {
                    0
                };
                coupled.max(*min)
            }
            GridRule::Table(rows) => rows
                .iter()
                .find(|(e, _)| *e == epsilon)
                .map(|&(_, n)| n)
                .ok_or_else(|| {
                    Error::InvalidRun(format!("no grid size listed for ε = {epsilon}"))
                })?,
        };
        let n = n + n % 2;
        if n < 2 {
            return Err(Error::InvalidGrid(n));
        }
        Ok(n)
    }
}

/// Per-row diagnostics of a sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RowFlags {
    pub non_converged: bool,
    pub sign_undetermined: bool,
}

impl std::fmt::Display for RowFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.non_converged, self.sign_undetermined) {
            (false, false) => f.write_str("ok"),
            (true, false) => f.write_str("non_converged"),
            (false, true) => f.write_str("sign_undetermined"),
            (true, true) => f.write_str("non_converged|sign_undetermined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub fiber: i64,
    pub grid_n: usize,
    pub horizon: usize,
    pub l1_phi_dist: f64,
    /// `NaN` when `ψ⁰` is not defined for the family or the sign is undetermined.
    pub l1_psi_dist: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub flags: RowFlags,
}

/// Inputs of [`convergence_sweep`].
#[derive(Debug, Clone)]
pub struct Sweep<'a> {
    pub driving: &'a DrivingSystem,
    pub family: MapFamily,
    pub eps_list: Vec<f64>,
    pub grid_rule: GridRule,
    pub fibers: Vec<i64>,
    pub horizon: usize,
    pub renorm_every: usize,
}

/// Distances to `φ⁰`, `ψ⁰` and `λ₂` for every `(ε, fiber)`, ordered as
/// `eps_list` then `fibers`.
pub fn convergence_sweep(sweep: &Sweep<'_>) -> Result<Vec<SweepRow>> {
    if sweep.eps_list.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidRun(
            "eps_list must be strictly decreasing".into(),
        ));
    }
    let mut rows = Vec::new();
    for &eps in &sweep.eps_list {
        let grid_n = sweep.grid_rule.grid_for(eps)?;
        let phi0 = family_phi0(sweep.driving, sweep.family, grid_n)?;
        let psi0 = (sweep.family.interval_count() == 2)
            .then(|| theoretical_psi0(grid_n))
            .transpose()?;
        let cocycle = DiscreteCocycle::new(sweep.driving, sweep.family, eps, grid_n)?;
        let run = CocycleRun {
            epsilon: eps,
            grid_n,
            horizon: sweep.horizon,
            fiber_indices: sweep.fibers.clone(),
            renorm_every: sweep.renorm_every,
        };
        run.validate()?;
        let cell = |k: i64| -> Result<SweepRow> {
            let p = pullback_density(&cocycle, &run, k)?;
            let mut flags = RowFlags {
                non_converged: !p.converged,
                sign_undetermined: false,
            };
            let (psi_dist, lambda2, horizon) = match second_function(&cocycle, &run, k) {
                Ok(s) => {
                    flags.non_converged |= !s.converged;
                    let d = match &psi0 {
                        Some(t) => s.psi.l1_distance(t)?,
                        None => f64::NAN,
                    };
                    (d, s.lambda2, p.horizon.max(s.horizon))
                }
                Err(Error::SignUndetermined(_)) => {
                    flags.sign_undetermined = true;
                    let seed = theoretical_psi0(grid_n)?;
                    let r = zero_mean_run(&cocycle, k, p.horizon, run.renorm_every, &seed)?;
                    (f64::NAN, r.lambda2, p.horizon)
                }
                Err(e) => return Err(e),
            };
            Ok(SweepRow {
                epsilon: eps,
                fiber: k,
                grid_n,
                horizon,
                l1_phi_dist: p.density.l1_distance(&phi0)?,
                l1_psi_dist: psi_dist,
                lambda1: p.lambda1,
                lambda2,
                flags,
            })
        };
        let cells = sweep
            .fibers
            .par_iter()
            .map(|&k| cell(k))
            .collect::<Result<Vec<_>>>()?;
        rows.extend(cells);
    }
    Ok(rows)
}

/// Per fiber, checks `d(ε_{i+1}) ≤ (1 + slack) d(ε_i)` along the positive
/// part of the sweep. Returns the offending `(fiber, ε_i, ε_{i+1})` triples.
pub fn non_increasing_violations(
    rows: &[SweepRow],
    slack: f64,
    metric: impl Fn(&SweepRow) -> f64,
) -> Vec<(i64, f64, f64)> {
    let mut fibers: Vec<i64> = rows.iter().map(|r| r.fiber).collect();
    fibers.sort_unstable();
    fibers.dedup();
    let mut out = Vec::new();
    for k in fibers {
        let series: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.fiber == k && r.epsilon > 0.0)
            .collect();
        for w in series.windows(2) {
            if metric(w[1]) > (1.0 + slack) * metric(w[0]) {
                out.push((k, w[0].epsilon, w[1].epsilon));
            }
        }
    }
    out
}
