//! Config-driven experiments behind the `metastable` binary.
//!
//! Every subcommand reads one TOML file, writes one CSV into the output
//! directory and exits with 0 (pass), 1 (acceptance failure) or 2 (bad
//! config or I/O). CSVs end with a `# config_sha256=<hex>` footer.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::driving::{golden_angle, Arc, DrivingSystem, Symbol};
use crate::maps::MapFamily;
use crate::markov::{chain_limit_check, random_two_state, EnvChain};
use crate::oseledets::{convergence_sweep, non_increasing_violations, GridRule, Sweep, SweepRow};
use crate::transfer::{verify_ly, LyReport};

#[derive(Debug, Parser)]
#[command(
    name = "metastable",
    version,
    about = "Random metastable interval-map experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distance of the random invariant density to its small-ε limit.
    PhiConverge(Opts),
    /// Distance of the second Oseledets function to its small-ε limit.
    PsiConverge(Opts),
    /// First and second Lyapunov exponents across the ε sweep.
    Lambda2(Opts),
    /// Backward products of the random-environment chain against `v⁰`.
    Markov(Opts),
    /// Variation inequality on random densities and fiber sequences.
    LyCheck(Opts),
    /// Weight series against the one-step recursion on random chains.
    PiCheck(Opts),
}

#[derive(Debug, Clone, Args)]
pub struct Opts {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Why a run did not produce a verdict.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Model(#[from] crate::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub driving: DrivingConfig,
    #[serde(default, alias = "map")]
    pub maps: FamilyConfig,
    pub sweep: Option<SweepConfig>,
    pub markov: Option<MarkovConfig>,
    pub ly: Option<LyConfig>,
    pub pi: Option<PiConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DrivingConfig {
    Rotation {
        /// Defaults to the golden angle.
        angle: Option<f64>,
        #[serde(default)]
        start: f64,
        arcs: Vec<ArcConfig>,
    },
    Shift {
        #[serde(alias = "window_radius")]
        radius: usize,
        alphabet: Vec<SymbolConfig>,
        /// Defaults to the top-level seed.
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcConfig {
    pub start: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolConfig {
    pub probability: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    #[default]
    PairedTent,
    #[serde(alias = "chain_tent")]
    Chain { m: usize },
}

impl From<FamilyConfig> for MapFamily {
    fn from(f: FamilyConfig) -> Self {
        match f {
            FamilyConfig::PairedTent => MapFamily::PairedTent,
            FamilyConfig::Chain { m } => MapFamily::Chain { m },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridConfig {
    Coupled { min: usize, factor: f64 },
    Table { table: Vec<(f64, usize)> },
}

impl From<&GridConfig> for GridRule {
    fn from(g: &GridConfig) -> Self {
        match g {
            GridConfig::Coupled { min, factor } => GridRule::Coupled {
                min: *min,
                factor: *factor,
            },
            GridConfig::Table { table } => GridRule::Table(table.clone()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FiberConfig {
    List(Vec<i64>),
    Spread {
        count: usize,
        #[serde(default = "default_stride")]
        stride: i64,
        #[serde(default)]
        offset: i64,
    },
}

impl FiberConfig {
    pub fn indices(&self) -> Vec<i64> {
        match self {
            FiberConfig::List(v) => v.clone(),
            FiberConfig::Spread {
                count,
                stride,
                offset,
            } => (0..*count as i64).map(|i| offset + i * stride).collect(),
        }
    }
}

impl Default for FiberConfig {
    fn default() -> Self {
        FiberConfig::Spread {
            count: 10,
            stride: default_stride(),
            offset: 0,
        }
    }
}

fn default_stride() -> i64 {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps_list: Vec<f64>,
    pub grid: Option<GridConfig>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "one")]
    pub renorm_every: usize,
    #[serde(default)]
    pub fibers: FiberConfig,
    #[serde(default = "default_phi_tol")]
    pub phi_tolerance: f64,
    #[serde(default = "default_psi_tol")]
    pub psi_tolerance: f64,
    #[serde(default = "default_slack")]
    pub monotone_slack: f64,
}

fn default_horizon() -> usize {
    64
}
fn one() -> usize {
    1
}
fn default_phi_tol() -> f64 {
    0.03
}
fn default_psi_tol() -> f64 {
    0.05
}
fn default_slack() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovConfig {
    #[serde(default = "default_markov_eps")]
    pub eps_list: Vec<f64>,
    #[serde(default = "default_markov_n")]
    pub n: usize,
    #[serde(default)]
    pub fibers: FiberConfig,
    #[serde(default = "default_markov_tol")]
    pub tolerance: f64,
    #[serde(default = "default_residual_tol")]
    pub residual_tolerance: f64,
}

fn default_markov_eps() -> Vec<f64> {
    vec![0.01]
}
fn default_markov_n() -> usize {
    10_000
}
fn default_markov_tol() -> f64 {
    5e-3
}
fn default_residual_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_ly_horizon")]
    pub horizon: usize,
    #[serde(default = "default_ly_grid")]
    pub grid_n: usize,
    #[serde(default = "default_ly_eps")]
    pub epsilon: f64,
}

fn default_trials() -> usize {
    200
}
fn default_ly_horizon() -> usize {
    8
}
fn default_ly_grid() -> usize {
    1024
}
fn default_ly_eps() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiConfig {
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_pi_eps")]
    pub eps_list: Vec<f64>,
    #[serde(default = "default_pi_n")]
    pub max_n: usize,
    #[serde(default = "default_tail_tol")]
    pub tail_tolerance: f64,
    #[serde(default = "default_pi_tol")]
    pub tolerance: f64,
    #[serde(default = "default_closed_form_tol")]
    pub closed_form_tolerance: f64,
}

fn default_chains() -> usize {
    100
}
fn default_pi_eps() -> Vec<f64> {
    vec![0.1, 0.01]
}
fn default_pi_n() -> usize {
    1000
}
fn default_tail_tol() -> f64 {
    1e-12
}
fn default_pi_tol() -> f64 {
    1e-10
}
fn default_closed_form_tol() -> f64 {
    1e-12
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn build_driving(&self) -> Result<DrivingSystem, CliError> {
        let ds = match &self.driving {
            DrivingConfig::Rotation { angle, start, arcs } => DrivingSystem::rotation(
                angle.unwrap_or_else(golden_angle),
                arcs.iter()
                    .map(|a| Arc::new(a.start, a.values.clone()))
                    .collect(),
            )?
            .with_start(*start)?,
            DrivingConfig::Shift {
                radius,
                alphabet,
                seed,
            } => DrivingSystem::shift(
                alphabet
                    .iter()
                    .map(|s| Symbol::new(s.probability, s.values.clone()))
                    .collect(),
                seed.unwrap_or(self.seed),
                *radius,
            )?,
        };
        let family = MapFamily::from(self.maps);
        if ds.dim() != family.value_dim() {
            return Err(CliError::Config(format!(
                "driving values have length {}, map family needs {}",
                ds.dim(),
                family.value_dim()
            )));
        }
        Ok(ds)
    }

    fn sweep(&self) -> Result<&SweepConfig, CliError> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [sweep] table".into()))?;
        let eps = &s.eps_list;
        if eps.is_empty() {
            return Err(CliError::Config("sweep.eps_list is empty".into()));
        }
        if eps.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(CliError::Config(
                "sweep.eps_list entries must be >= 0".into(),
            ));
        }
        if eps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(CliError::Config(
                "sweep.eps_list must be strictly decreasing".into(),
            ));
        }
        if eps[..eps.len() - 1].contains(&0.0) {
            return Err(CliError::Config(
                "ε = 0 may only close sweep.eps_list".into(),
            ));
        }
        let rule = self.grid_rule();
        for &e in eps {
            let n = rule.grid_for(e)?;
            if e > 0.0 && (n as f64) < 16.0 / e {
                return Err(CliError::Config(format!(
                    "grid {n} at ε = {e} is coarser than 16/ε"
                )));
            }
        }
        if s.renorm_every == 0 || s.horizon % s.renorm_every != 0 {
            return Err(CliError::Config(
                "sweep.renorm_every must divide sweep.horizon".into(),
            ));
        }
        Ok(s)
    }

    fn grid_rule(&self) -> GridRule {
        self.sweep
            .as_ref()
            .and_then(|s| s.grid.as_ref())
            .map(GridRule::from)
            .unwrap_or_default()
    }
}

/// Result of one subcommand: a CSV body and the acceptance verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub file_name: &'static str,
    pub csv: String,
    pub passed: bool,
    pub diagnostics: Vec<String>,
}

const SWEEP_HEADER: &str = "epsilon,fiber,grid_n,horizon,l1_phi_dist,l1_psi_dist,lambda2,flags";

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epsilon,
            r.fiber,
            r.grid_n,
            r.horizon,
            r.l1_phi_dist,
            r.l1_psi_dist,
            r.lambda2,
            r.flags
        );
    }
    out
}

fn run_sweep(config: &ExperimentConfig) -> Result<(Vec<SweepRow>, &SweepConfig), CliError> {
    let s = config.sweep()?;
    let driving = config.build_driving()?;
    let rows = convergence_sweep(&Sweep {
        driving: &driving,
        family: config.maps.into(),
        eps_list: s.eps_list.clone(),
        grid_rule: config.grid_rule(),
        fibers: s.fibers.indices(),
        horizon: s.horizon,
        renorm_every: s.renorm_every,
    })?;
    Ok((rows, s))
}

/// Rows at the smallest positive `ε` of the sweep.
fn final_rows(rows: &[SweepRow]) -> Vec<&SweepRow> {
    let last = rows
        .iter()
        .map(|r| r.epsilon)
        .filter(|&e| e > 0.0)
        .fold(f64::INFINITY, f64::min);
    rows.iter().filter(|r| r.epsilon == last).collect()
}

pub fn cmd_phi_converge(config: &ExperimentConfig) -> Result<Report, CliError> {
    let (rows, s) = run_sweep(config)?;
    let mut diagnostics = Vec::new();
    for (k, e0, e1) in non_increasing_violations(&rows, s.monotone_slack, |r| r.l1_phi_dist) {
        diagnostics.push(format!(
            "fiber {k}: φ distance grows from ε = {e0} to ε = {e1}"
        ));
    }
    for r in final_rows(&rows) {
        if !(r.l1_phi_dist <= s.phi_tolerance) {
            diagnostics.push(format!(
                "fiber {}: final φ distance {} > {}",
                r.fiber, r.l1_phi_dist, s.phi_tolerance
            ));
        }
    }
    for r in rows.iter().filter(|r| r.flags.non_converged) {
        diagnostics.push(format!(
            "ε = {} fiber {}: horizon did not converge",
            r.epsilon, r.fiber
        ));
    }
    Ok(Report {
        file_name: "phi_converge.csv",
        csv: sweep_csv(&rows),
        passed: diagnostics.is_empty(),
        diagnostics,
    })
}

pub fn cmd_psi_converge(config: &ExperimentConfig) -> Result<Report, CliError> {
    let (rows, s) = run_sweep(config)?;
    let mut diagnostics = Vec::new();
    for r in rows.iter().filter(|r| r.flags.sign_undetermined) {
        diagnostics.push(format!(
            "ε = {} fiber {}: sign of ψ undetermined",
            r.epsilon, r.fiber
        ));
    }
    for r in final_rows(&rows) {
        if !(r.l1_psi_dist <= s.psi_tolerance) {
            diagnostics.push(format!(
                "fiber {}: final ψ distance {} > {}",
                r.fiber, r.l1_psi_dist, s.psi_tolerance
            ));
        }
    }
    Ok(Report {
        file_name: "psi_converge.csv",
        csv: sweep_csv(&rows),
        passed: diagnostics.is_empty(),
        diagnostics,
    })
}

/// `|λ₁| ≤ 1e-10` everywhere, `λ₂ < 0` for `ε > 0`, `|λ₂| ≤ 1e-8` at `ε = 0`
/// and the fiber-averaged `|λ₂|` strictly decreasing along the sweep.
pub fn cmd_lambda2(config: &ExperimentConfig) -> Result<Report, CliError> {
    let (rows, s) = run_sweep(config)?;
    let mut diagnostics = Vec::new();
    for r in &rows {
        if !(r.lambda1.abs() <= 1e-10) {
            diagnostics.push(format!(
                "ε = {} fiber {}: λ₁ = {}",
                r.epsilon, r.fiber, r.lambda1
            ));
        }
        if r.epsilon > 0.0 && !(r.lambda2 < 0.0) {
            diagnostics.push(format!(
                "ε = {} fiber {}: λ₂ = {}",
                r.epsilon, r.fiber, r.lambda2
            ));
        }
        if r.epsilon == 0.0 && !(r.lambda2.abs() <= 1e-8) {
            diagnostics.push(format!("ε = 0 fiber {}: λ₂ = {}", r.fiber, r.lambda2));
        }
    }
    let means = mean_abs_lambda2(&rows, &s.eps_list);
    for w in means.windows(2) {
        if !(w[1].1 < w[0].1) {
            diagnostics.push(format!(
                "|λ₂| does not decrease from ε = {} ({}) to ε = {} ({})",
                w[0].0, w[0].1, w[1].0, w[1].1
            ));
        }
    }
    Ok(Report {
        file_name: "lambda2.csv",
        csv: sweep_csv(&rows),
        passed: diagnostics.is_empty(),
        diagnostics,
    })
}

/// Fiber-averaged `|λ₂|` per `ε`, in sweep order.
pub fn mean_abs_lambda2(rows: &[SweepRow], eps_list: &[f64]) -> Vec<(f64, f64)> {
    eps_list
        .iter()
        .map(|&e| {
            let sel: Vec<f64> = rows
                .iter()
                .filter(|r| r.epsilon == e)
                .map(|r| r.lambda2.abs())
                .collect();
            (e, sel.iter().sum::<f64>() / sel.len().max(1) as f64)
        })
        .collect()
}

fn build_chain(config: &ExperimentConfig, epsilon: f64) -> Result<EnvChain, CliError> {
    let driving = config.build_driving()?;
    Ok(match config.maps {
        FamilyConfig::PairedTent => EnvChain::from_paired_tent(driving, epsilon)?,
        FamilyConfig::Chain { m } => EnvChain::from_neighbor_rates(driving, m, epsilon)?,
    })
}

pub fn cmd_markov(config: &ExperimentConfig) -> Result<Report, CliError> {
    let mc = config
        .markov
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [markov] table".into()))?;
    let chain = build_chain(config, 0.0)?;
    let limit = chain.limit()?;
    let rows = chain_limit_check(&chain, &mc.eps_list, mc.n, &mc.fibers.indices())?;

    let mut csv = String::from("epsilon,fiber,n,col,max_dist_to_v0\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.epsilon, r.fiber, r.n, r.col, r.max_dist_to_v0
        );
    }
    let mut diagnostics = Vec::new();
    let residual = limit.residual();
    if let Some(res) = residual {
        if !(res <= mc.residual_tolerance) {
            diagnostics.push(format!("v⁰ residual {res} > {}", mc.residual_tolerance));
        }
    }
    let worst = rows.iter().map(|r| r.max_dist_to_v0).fold(0.0, f64::max);
    if !(worst <= mc.tolerance) {
        diagnostics.push(format!("max column distance {worst} > {}", mc.tolerance));
    }
    if rows.iter().any(|r| r.unsaturated) {
        diagnostics.push("warning: n is below the saturation horizon for some ε".into());
    }
    let passed = !diagnostics.iter().any(|d| !d.starts_with("warning"));
    let v0: Vec<String> = limit.v0.iter().map(|v| format!("{v:.11e}")).collect();
    let _ = writeln!(
        csv,
        "summary,{},v0={},max_dist={},residual={}",
        verdict(passed),
        v0.join(" "),
        worst,
        residual.map_or("absorbing".to_string(), |r| r.to_string())
    );
    Ok(Report {
        file_name: "markov.csv",
        csv,
        passed,
        diagnostics,
    })
}

pub fn cmd_ly_check(config: &ExperimentConfig) -> Result<Report, CliError> {
    let ly = config
        .ly
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [ly] table".into()))?;
    if ly.horizon < 2 {
        return Err(CliError::Config("ly.horizon must be at least 2".into()));
    }
    let driving = config.build_driving()?;
    let family = MapFamily::from(config.maps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let reach = driving
        .window_radius()
        .map_or(1 << 40, |r| r - ly.horizon as i64);
    let starts: Vec<(i64, u64)> = (0..ly.trials)
        .map(|_| (rng.gen_range(-reach..=reach), rng.gen()))
        .collect();
    let reports = starts
        .par_iter()
        .map(|&(k, seed)| {
            let maps = (0..ly.horizon as i64)
                .map(|j| family.fiber_map(driving.fiber_params(k + j)?, ly.epsilon))
                .collect::<crate::Result<Vec<_>>>()?;
            verify_ly(&maps, 1, ly.grid_n, seed)
        })
        .collect::<crate::Result<Vec<LyReport>>>()?;

    let mut csv = String::from("trial,start_fiber,checks,violations,min_slack\n");
    for (i, (r, (k, _))) in reports.iter().zip(&starts).enumerate() {
        let _ = writeln!(csv, "{i},{k},{},{},{}", r.checks, r.violations, r.min_slack);
    }
    let violations: usize = reports.iter().map(|r| r.violations).sum();
    let checks: usize = reports.iter().map(|r| r.checks).sum();
    let min_slack = reports
        .iter()
        .map(|r| r.min_slack)
        .fold(f64::INFINITY, f64::min);
    let passed = violations == 0;
    let _ = writeln!(
        csv,
        "summary,{},checks={checks},violations={violations},min_slack={min_slack}",
        verdict(passed)
    );
    let diagnostics = if passed {
        Vec::new()
    } else {
        vec![format!(
            "{violations} of {checks} variation checks exceed the bound"
        )]
    };
    Ok(Report {
        file_name: "ly_check.csv",
        csv,
        passed,
        diagnostics,
    })
}

/// Oracle comparison for one random two-state chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiCheckRow {
    pub chain: usize,
    pub epsilon: f64,
    pub varying: bool,
    pub closed_form_gap: f64,
    pub series: f64,
    pub recursion: f64,
    pub gap: f64,
    pub terms: usize,
}

/// Random two-state chains: backward products against the summed closed
/// form for `n ∈ {1, 10, 100, …, max_n}`, and the truncated weight series
/// against the recursion run over the same depth.
pub fn pi_check_rows(pi: &PiConfig, seed: u64) -> crate::Result<Vec<PiCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut horizons = vec![1usize];
    while horizons.last().unwrap() * 10 <= pi.max_n {
        horizons.push(horizons.last().unwrap() * 10);
    }
    if *horizons.last().unwrap() != pi.max_n && pi.max_n > 0 {
        horizons.push(pi.max_n);
    }
    let mut rows = Vec::new();
    for chain_id in 0..pi.chains {
        let epsilon = pi.eps_list[chain_id % pi.eps_list.len()];
        let (chain, varying) = random_two_state(&mut rng, epsilon)?;
        let k = rng.gen_range(-1000..1000);
        let mut closed_form_gap: f64 = 0.0;
        for &n in &horizons {
            let q = chain.backward_product(k, n)?;
            let c = chain.backward_product_closed_form(k, n)?;
            for i in 0..2 {
                for j in 0..2 {
                    closed_form_gap = closed_form_gap.max((q[(i, j)] - c[(i, j)]).abs());
                }
            }
        }
        let series = chain.pi_series(k, pi.tail_tolerance)?;
        let recursion = chain.p_recursion(k, series.terms, rng.gen())?;
        rows.push(PiCheckRow {
            chain: chain_id,
            epsilon,
            varying,
            closed_form_gap,
            series: series.value,
            recursion,
            gap: (series.value - recursion).abs(),
            terms: series.terms,
        });
    }
    Ok(rows)
}

pub fn cmd_pi_check(config: &ExperimentConfig) -> Result<Report, CliError> {
    let pi = config
        .pi
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [pi] table".into()))?;
    if pi.eps_list.is_empty() {
        return Err(CliError::Config("pi.eps_list is empty".into()));
    }
    let rows = pi_check_rows(pi, config.seed)?;
    let mut csv =
        String::from("chain,epsilon,varying,closed_form_gap,pi_series,pi_recursion,gap,terms\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.chain, r.epsilon, r.varying, r.closed_form_gap, r.series, r.recursion, r.gap, r.terms
        );
    }
    let max_cf = rows.iter().map(|r| r.closed_form_gap).fold(0.0, f64::max);
    let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    let mut diagnostics = Vec::new();
    if !(max_cf <= pi.closed_form_tolerance) {
        diagnostics.push(format!(
            "closed form gap {max_cf} > {}",
            pi.closed_form_tolerance
        ));
    }
    if !(max_gap <= pi.tolerance) {
        diagnostics.push(format!(
            "series vs recursion gap {max_gap} > {}",
            pi.tolerance
        ));
    }
    let passed = diagnostics.is_empty();
    let _ = writeln!(
        csv,
        "summary,{},max_closed_form_gap={max_cf},max_gap={max_gap}",
        verdict(passed)
    );
    Ok(Report {
        file_name: "pi_check.csv",
        csv,
        passed,
        diagnostics,
    })
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "fail"
    }
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `report` into `dir` with the config-hash footer; returns the path.
pub fn write_report(dir: &Path, report: &Report, config_bytes: &[u8]) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(report.file_name);
    let mut body = report.csv.clone();
    let _ = writeln!(body, "# config_sha256={}", config_hash(config_bytes));
    fs::write(&path, body)?;
    Ok(path)
}

/// Loads the config, runs the subcommand and writes its CSV.
pub fn execute(command: &Command) -> Result<(Report, PathBuf), CliError> {
    let opts = match command {
        Command::PhiConverge(o)
        | Command::PsiConverge(o)
        | Command::Lambda2(o)
        | Command::Markov(o)
        | Command::LyCheck(o)
        | Command::PiCheck(o) => o,
    };
    let bytes = fs::read(&opts.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", opts.config.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config("config is not UTF-8".into()))?;
    let config = ExperimentConfig::parse(&text)?;
    let dir = opts
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory (use --out or output_dir)".into()))?;

    let run = || match command {
        Command::PhiConverge(_) => cmd_phi_converge(&config),
        Command::PsiConverge(_) => cmd_psi_converge(&config),
        Command::Lambda2(_) => cmd_lambda2(&config),
        Command::Markov(_) => cmd_markov(&config),
        Command::LyCheck(_) => cmd_ly_check(&config),
        Command::PiCheck(_) => cmd_pi_check(&config),
    };
    let report = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let path = write_report(&dir, &report, &bytes)?;
    Ok((report, path))
}

pub fn main_with(cli: Cli) -> ExitCode {
    match execute(&cli.command) {
        Ok((report, path)) => {
            for d in &report.diagnostics {
                eprintln!("{d}");
            }
            println!("{} {}", verdict(report.passed), path.display());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
