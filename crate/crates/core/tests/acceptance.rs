//! Exit criteria. Each test prints one `PASS`/`FAIL` line and asserts.

use std::sync::OnceLock;

use metastable::driving::{golden_angle, Arc, DrivingSystem};
use metastable::maps::{paired_tent, MapFamily};
use metastable::markov::{chain_limit_check, random_two_state, solve_v0, EnvChain};
use metastable::oseledets::{
    convergence_sweep, non_increasing_violations, theoretical_phi0, GridRule, Sweep, SweepRow,
};
use metastable::transfer::{ly_check_density, random_step_density, ulam_matrix, Density};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS_LIST: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0];
const FINAL_EPS: f64 = 0.025;

fn report(id: u32, name: &str, ok: bool, detail: String) {
    println!(
        "{} criterion {id} ({name}): {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

/// `∫a = 0.6`, `∫b = 0.4`: the right interval leaks on `[0, 0.6)`, the left
/// one on `[0.6, 1)`.
fn tent_driving() -> DrivingSystem {
    DrivingSystem::rotation(
        golden_angle(),
        vec![Arc::new(0.0, vec![1.0, 0.0]), Arc::new(0.6, vec![0.0, 1.0])],
    )
    .unwrap()
}

fn fibers() -> Vec<i64> {
    (0..10).map(|i| 1000 * i).collect()
}

fn sweep_rows() -> &'static [SweepRow] {
    static ROWS: OnceLock<Vec<SweepRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        let driving = tent_driving();
        convergence_sweep(&Sweep {
            driving: &driving,
            family: MapFamily::PairedTent,
            eps_list: EPS_LIST.to_vec(),
            grid_rule: GridRule::Coupled {
                min: 1024,
                factor: 16.0,
            },
            fibers: fibers(),
            horizon: 64,
            renorm_every: 1,
        })
        .unwrap()
    })
}

fn rows_at(eps: f64) -> Vec<&'static SweepRow> {
    sweep_rows().iter().filter(|r| r.epsilon == eps).collect()
}

#[test]
fn criterion_1_invariant_density_limit() {
    let driving = tent_driving();
    assert!((driving.average_observable(0).unwrap() - 0.6).abs() < 1e-15);
    assert!((driving.average_observable(1).unwrap() - 0.4).abs() < 1e-15);
    let rows = sweep_rows();
    for r in rows.iter().filter(|r| r.epsilon > 0.0) {
        assert_eq!(r.grid_n, 1024.max((16.0 / r.epsilon).ceil() as usize));
    }
    let violations = non_increasing_violations(rows, 0.1, |r| r.l1_phi_dist);
    let final_rows = rows_at(FINAL_EPS);
    let worst = final_rows.iter().map(|r| r.l1_phi_dist).fold(0.0, f64::max);
    let converged = rows.iter().all(|r| !r.flags.non_converged);
    let ok = violations.is_empty() && worst <= 0.03 && final_rows.len() == 10 && converged;
    report(
        1,
        "invariant density",
        ok,
        format!(
            "monotone violations {}, max L1 distance at ε = {FINAL_EPS}: {worst:.4} (limit 0.03)",
            violations.len()
        ),
    );
    assert!(violations.is_empty(), "{violations:?}");
    assert!(converged);
    assert!(worst <= 0.03, "max φ distance {worst}");
}

#[test]
fn criterion_2_second_function_limit() {
    let final_rows = rows_at(FINAL_EPS);
    let worst = final_rows.iter().map(|r| r.l1_psi_dist).fold(0.0, f64::max);
    let signs = sweep_rows().iter().all(|r| !r.flags.sign_undetermined);

    // Sign and integral of ψ itself, recomputed at the final ε.
    let driving = tent_driving();
    let grid_n = GridRule::default().grid_for(FINAL_EPS).unwrap();
    let cocycle = metastable::oseledets::DiscreteCocycle::new(
        &driving,
        MapFamily::PairedTent,
        FINAL_EPS,
        grid_n,
    )
    .unwrap();
    let run = metastable::oseledets::CocycleRun {
        epsilon: FINAL_EPS,
        grid_n,
        horizon: 64,
        fiber_indices: fibers(),
        renorm_every: 1,
    };
    let spectral = metastable::oseledets::spectral(&cocycle, &run).unwrap();
    let left_positive = spectral.fibers.iter().all(|f| f.psi.left_mass() > 0.0);
    let max_integral = spectral
        .fibers
        .iter()
        .map(|f| f.psi.integral().abs())
        .fold(0.0, f64::max);

    let ok = worst <= 0.05 && signs && left_positive && max_integral <= 1e-10;
    report(
        2,
        "second function",
        ok,
        format!(
            "max L1 distance at ε = {FINAL_EPS}: {worst:.4} (limit 0.05), sign ok {}, max |∫ψ| {max_integral:.1e}",
            signs && left_positive
        ),
    );
    assert!(signs && left_positive);
    assert!(max_integral <= 1e-10);
    assert!(worst <= 0.05, "max ψ distance {worst}");
}

#[test]
fn criterion_3_spectral_structure() {
    let rows = sweep_rows();
    let lambda1 = rows.iter().map(|r| r.lambda1.abs()).fold(0.0, f64::max);
    let negative = rows
        .iter()
        .filter(|r| r.epsilon > 0.0)
        .all(|r| r.lambda2 < 0.0);
    let positive_eps: Vec<f64> = EPS_LIST.iter().copied().filter(|&e| e > 0.0).collect();
    let means = metastable::cli::mean_abs_lambda2(rows, &positive_eps);
    let decreasing = means.windows(2).all(|w| w[1].1 < w[0].1);
    let at_zero = rows_at(0.0)
        .iter()
        .map(|r| r.lambda2.abs())
        .fold(0.0, f64::max);
    let ok = lambda1 <= 1e-10 && negative && decreasing && at_zero <= 1e-8;
    let listing: Vec<String> = means.iter().map(|(e, l)| format!("{e}:{l:.4}")).collect();
    report(
        3,
        "spectral structure",
        ok,
        format!(
            "max |λ₁| {lambda1:.1e}, mean |λ₂| by ε [{}], |λ₂| at ε = 0: {at_zero:.1e}",
            listing.join(", ")
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_4_markov_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_cf, mut worst_pi, mut varying_count) = (0.0f64, 0.0f64, 0);
    for i in 0..100 {
        let eps = if i % 2 == 0 { 0.1 } else { 0.01 };
        let (chain, varying) = random_two_state(&mut rng, eps).unwrap();
        varying_count += varying as usize;
        let k = rng.gen_range(-500..500);
        for n in [0, 1, 2, 10, 100, 1000] {
            let q = chain.backward_product(k, n).unwrap();
            let c = chain.backward_product_closed_form(k, n).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    worst_cf = worst_cf.max((q[(a, b)] - c[(a, b)]).abs());
                }
            }
        }
        let series = chain.pi_series(k, 1e-12).unwrap();
        assert!(series.tail_bound <= 1e-12);
        let p = chain.p_recursion(k, series.terms, rng.gen()).unwrap();
        worst_pi = worst_pi.max((series.value - p).abs());
    }
    let ok = worst_cf <= 1e-12 && worst_pi <= 1e-10 && varying_count > 0 && varying_count < 100;
    report(
        4,
        "markov oracles",
        ok,
        format!(
            "max closed-form gap {worst_cf:.1e}, max series/recursion gap {worst_pi:.1e}, {varying_count} of 100 fiber-varying"
        ),
    );
    assert!(ok);
}

fn criterion_5_chains() -> Vec<(usize, Vec<Arc>)> {
    vec![
        (2, vec![Arc::new(0.0, vec![0.7, 0.7])]),
        (
            2,
            vec![Arc::new(0.0, vec![0.3, 0.9]), Arc::new(0.5, vec![0.5, 0.7])],
        ),
        (3, vec![Arc::new(0.0, vec![1.0; 4])]),
        (
            3,
            vec![
                Arc::new(0.0, vec![0.8, 1.0, 1.0, 0.8]),
                Arc::new(0.3, vec![1.0, 0.8, 0.6, 1.0]),
            ],
        ),
        (4, vec![Arc::new(0.0, vec![0.5, 0.25, 0.5, 0.5, 0.25, 0.5])]),
        (
            4,
            vec![
                Arc::new(0.0, vec![0.2, 0.6, 0.8, 0.4, 0.5, 0.5]),
                Arc::new(0.25, vec![0.6, 0.2, 0.4, 0.8, 1.0, 0.3]),
                Arc::new(0.7, vec![0.4, 0.4, 0.6, 0.6, 0.2, 0.9]),
            ],
        ),
    ]
}

/// Birth-death chains balance neighbouring flows:
/// `v_{i+1} (∫β)_{i+1,i} = v_i (∫β)_{i,i+1}`.
fn detailed_balance(delta_n: &DMatrix<f64>) -> DVector<f64> {
    let m = delta_n.nrows();
    let mut v = DVector::from_element(m, 1.0);
    for i in 0..m - 1 {
        // (∫N)_{i+1,i} = (∫β)_{i,i+1}
        v[i + 1] = v[i] * delta_n[(i + 1, i)] / delta_n[(i, i + 1)];
    }
    let s = v.sum();
    v / s
}

#[test]
fn criterion_5_chain_limit() {
    let fibers: Vec<i64> = (0..10).map(|i| 997 * i - 4000).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for (m, arcs) in criterion_5_chains() {
        let driving = DrivingSystem::rotation(golden_angle(), arcs).unwrap();
        let chain = EnvChain::from_neighbor_rates(driving, m, 0.01).unwrap();
        let limit = chain.limit().unwrap();
        let residual = limit.residual().unwrap();
        let sum = limit.v0.sum();
        let nonneg = limit.v0.iter().all(|&x| x >= 0.0);
        let balance = detailed_balance(&limit.n_avg);
        let balance_gap = (&limit.v0 - &balance).amax();
        let rows = chain_limit_check(&chain, &[0.01], 10_000, &fibers).unwrap();
        let worst = rows.iter().map(|r| r.max_dist_to_v0).fold(0.0, f64::max);
        let saturated = rows.iter().all(|r| !r.unsaturated);
        let mut closed_gap = 0.0;
        if m == 2 {
            let d = &limit.delta_avg;
            let gamma = d[(0, 0)] + d[(1, 1)];
            let closed = [d[(1, 1)] / gamma, d[(0, 0)] / gamma];
            closed_gap = (limit.v0[0] - closed[0])
                .abs()
                .max((limit.v0[1] - closed[1]).abs());
        }
        let case_ok = residual <= 1e-12
            && (sum - 1.0).abs() <= 1e-12
            && nonneg
            && balance_gap <= 1e-12
            && worst <= 5e-3
            && saturated
            && closed_gap <= 1e-15;
        ok &= case_ok;
        lines.push(format!(
            "m={m} residual {residual:.1e} columns {worst:.2e} closed-form gap {closed_gap:.1e}"
        ));
    }
    report(5, "chain limit", ok, lines.join("; "));
    assert!(ok);
}

#[test]
fn criterion_6_variation_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid_n = 1024;
    let (mut checks, mut violations, mut min_slack) = (0usize, 0usize, f64::INFINITY);
    let mut horizons = std::collections::BTreeSet::new();
    for _ in 0..200 {
        let eps = rng.gen_range(0.0..=1.0);
        let ops = (0..8)
            .map(|_| {
                let map = paired_tent(eps * rng.gen::<f64>(), eps * rng.gen::<f64>()).unwrap();
                ulam_matrix(&map, grid_n).unwrap()
            })
            .collect::<Vec<_>>();
        let f = random_step_density(&mut rng, grid_n, 200).unwrap();
        for c in ly_check_density(&ops, &f).unwrap() {
            horizons.insert(c.horizon);
            checks += 1;
            if c.slack() < 0.0 {
                violations += 1;
            }
            min_slack = min_slack.min(c.slack());
        }
    }
    let covered = [2, 4, 8].iter().all(|h| horizons.contains(h));
    let ok = violations == 0 && covered;
    report(
        6,
        "variation inequality",
        ok,
        format!("{violations} violations in {checks} checks, min slack {min_slack:.3}"),
    );
    assert!(ok);
}

#[test]
fn criterion_7_structural_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut col, mut integral, mut hole, mut measure) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut positivity = true;
    for _ in 0..20 {
        let eps = rng.gen_range(0.001..0.5);
        let (a, b) = (rng.gen::<f64>(), rng.gen::<f64>());
        let map = paired_tent(eps * a, eps * b).unwrap();
        let grid_n = 2 * rng.gen_range(8..600);
        let op = ulam_matrix(&map, grid_n).unwrap();
        for j in 0..grid_n {
            col = col.max((op.column_sum(j) - 1.0).abs());
            positivity &= op.column(j).all(|(_, v)| v >= 0.0);
        }
        let f = random_step_density(&mut rng, grid_n, 50).unwrap();
        let g = op.apply(&f).unwrap();
        integral = integral.max((g.integral() - f.integral()).abs());
        let nonneg = Density::from_values(f.values().iter().map(|v| v.abs()).collect()).unwrap();
        positivity &= op
            .apply(&nonneg)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v >= 0.0);

        let (ea, eb) = (eps * a, eps * b);
        let holes = map.holes();
        let hl = &holes.source(0)[0];
        let hr = &holes.source(1)[0];
        let closed_l = (-1.0 + 1.0 / (2.0 * (1.0 + eb)), -1.0 / (2.0 * (1.0 + eb)));
        let closed_r = (1.0 / (2.0 * (1.0 + ea)), 1.0 - 1.0 / (2.0 * (1.0 + ea)));
        hole = hole
            .max((hl.lo - closed_l.0).abs())
            .max((hl.hi - closed_l.1).abs())
            .max((hr.lo - closed_r.0).abs())
            .max((hr.hi - closed_r.1).abs());
        measure = measure
            .max((map.hole_measure(0) - (1.0 - 1.0 / (1.0 + eb))).abs())
            .max((map.hole_measure(1) - (1.0 - 1.0 / (1.0 + ea))).abs());
    }
    let unperturbed = ulam_matrix(&paired_tent(0.0, 0.0).unwrap(), 512).unwrap();
    let half = 256;
    let block_diagonal =
        (0..512).all(|j| unperturbed.column(j).all(|(i, _)| (i < half) == (j < half)));

    let ok = col <= 1e-12
        && positivity
        && integral <= 1e-12
        && block_diagonal
        && hole <= 1e-14
        && measure <= 1e-15;
    report(
        7,
        "structural invariants",
        ok,
        format!(
            "column sums {col:.1e}, integrals {integral:.1e}, holes {hole:.1e}, hole measures {measure:.1e}, positivity {positivity}, block-diagonal {block_diagonal}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_8_cross_module_identification() {
    let configs = vec![
        tent_driving(),
        DrivingSystem::rotation(golden_angle(), vec![Arc::new(0.0, vec![1.0, 1.0])]).unwrap(),
        DrivingSystem::rotation(golden_angle(), vec![Arc::new(0.0, vec![0.5, 0.0])]).unwrap(),
        DrivingSystem::rotation(
            golden_angle(),
            vec![Arc::new(0.0, vec![0.7, 0.3]), Arc::new(0.5, vec![0.5, 0.5])],
        )
        .unwrap(),
    ];
    let mut worst = 0.0f64;
    for driving in configs {
        let phi0 = theoretical_phi0(&driving, 1024).unwrap();
        let chain = EnvChain::from_paired_tent(driving, 0.1).unwrap();
        let limit = chain.limit().unwrap();
        let direct = solve_v0(&limit.delta_avg, &limit.n_avg).unwrap();
        assert_eq!(direct, limit.v0);
        worst = worst
            .max((limit.v0[0] - phi0.left_mass()).abs())
            .max((limit.v0[1] - phi0.right_mass()).abs());
    }
    let ok = worst <= 1e-15;
    report(
        8,
        "cross-module identification",
        ok,
        format!("max |v⁰ − (mass on I_L, mass on I_R)| = {worst:.1e}"),
    );
    assert!(ok);
}
