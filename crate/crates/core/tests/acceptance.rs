//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured margins (run with `--nocapture` to see them).
//!
//! Numeric criteria run at fixed tolerances; trend criteria run the full
//! Monte Carlo comparisons at desk scale with paired seeds.

use thcf_sim::harness::{
    emit_results, run_sweep, ExperimentConfig, OutputFormat, SweepParameter,
};
use thcf_sim::jacobian::rate_jacobian_theta;
use thcf_sim::model::{
    quant_noise_variances, round_bits, sinr_and_rates, AnalogPhases, QuantMode, RxFrontEnd,
    ShortTermVars,
};
use thcf_sim::rng::{stream_rng, Stream};
use thcf_sim::scenario::{build_topology, draw_statistics, ChannelProcess};
use thcf_sim::ssca::{default_schedules, run_bcssca, update_grad_estimate, update_rate_estimate};
use thcf_sim::wmmse::{
    digital_filter_system, init_short_term, run_short_term, stack_digital, update_beta, update_d,
    update_u, update_v, update_w, wmmse_objective, ShortTermProblem, SolverState,
};
use thcf_sim::CVec;

use nalgebra::DMatrix;
use rand::Rng;

/// Noise power of a 2 MHz receiver at -169 dBm/Hz.
const NOISE_W: f64 = 2.5178508235883326e-14;

/// Random solver instance on a geometry-based channel draw.
fn geometric_instance(
    seed: u64,
    n_rrh: usize,
    m: usize,
    s: usize,
    k_users: usize,
    n_paths: usize,
    iters: usize,
) -> ShortTermProblem {
    let topo = build_topology(n_rrh, k_users, 250.0, &mut stream_rng(seed, Stream::Topology))
        .unwrap();
    let stats = draw_statistics(
        &topo,
        n_paths,
        10f64.to_radians(),
        NOISE_W,
        &mut stream_rng(seed, Stream::Statistics),
    )
    .unwrap();
    let mut fading = stream_rng(seed, Stream::Fading);
    let mut process = ChannelProcess::new(stats, m, 0.95, 0, &mut fading).unwrap();
    let sample = process.advance(&mut fading);
    let mut rng = stream_rng(seed, Stream::PhaseInit);
    let phases = AnalogPhases::random(n_rrh, m, s, &mut rng);
    let front = RxFrontEnd::from_phases(&phases, &sample).unwrap();
    let l = k_users.min(s);
    ShortTermProblem {
        front,
        mu: (0..k_users).map(|_| 0.5 + rng.gen::<f64>() * 1.5).collect(),
        power_caps: vec![1.0; k_users],
        bit_budgets: vec![4.0 * l as f64; n_rrh],
        proximal: 1e-4,
        iters,
    }
}

/// Same draw but returning the ingredients needed for Jacobian tests.
fn geometric_jacobian_instance(
    seed: u64,
    n_rrh: usize,
    m: usize,
    s: usize,
    k_users: usize,
) -> (AnalogPhases, ShortTermVars, thcf_sim::scenario::ChannelSample) {
    let topo = build_topology(n_rrh, k_users, 250.0, &mut stream_rng(seed, Stream::Topology))
        .unwrap();
    let stats = draw_statistics(
        &topo,
        3,
        10f64.to_radians(),
        NOISE_W,
        &mut stream_rng(seed, Stream::Statistics),
    )
    .unwrap();
    let mut fading = stream_rng(seed, Stream::Fading);
    let mut process = ChannelProcess::new(stats, m, 0.95, 0, &mut fading).unwrap();
    let sample = process.advance(&mut fading);
    let mut rng = stream_rng(seed, Stream::PhaseInit);
    let phases = AnalogPhases::random(n_rrh, m, s, &mut rng);
    let front = RxFrontEnd::from_phases(&phases, &sample).unwrap();
    let problem = ShortTermProblem {
        front,
        mu: vec![1.0; k_users],
        power_caps: vec![1.0; k_users],
        bit_budgets: vec![4.0 * k_users.min(s) as f64; n_rrh],
        proximal: 1e-4,
        iters: 3,
    };
    let (x, _) = run_short_term(&problem).unwrap();
    (phases, x, sample)
}

type BlockFn = fn(&ShortTermProblem, &mut SolverState) -> thcf_sim::Result<()>;

const BLOCKS: [(&str, BlockFn); 5] = [
    ("u", update_u),
    ("w", update_w),
    ("beta", update_beta),
    ("v", update_v),
    ("d", update_d),
];

#[test]
fn criterion_1_wmmse_block_monotonicity() {
    let start = std::time::Instant::now();
    let mut worst_increase: f64 = f64::NEG_INFINITY;
    for trial in 0..100 {
        let p = geometric_instance(1000 + trial, 2, 8, 4, 3, 3, 10);
        let mut st = init_short_term(&p).unwrap();
        let mut obj = wmmse_objective(&p, &st).unwrap();
        for _ in 0..10 {
            for (name, step) in BLOCKS {
                step(&p, &mut st).unwrap();
                let next = wmmse_objective(&p, &st).unwrap();
                worst_increase = worst_increase.max(next - obj);
                assert!(
                    next <= obj + 1e-8,
                    "instance {trial}: block {name} raised the objective by {}",
                    next - obj
                );
                obj = next;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 1 took {elapsed:.1} s (budget 30 s)");
    println!(
        "acceptance 1 (WMMSE block monotonicity <= 1e-8 on 100 instances): PASS \
         (worst increase {worst_increase:.2e}, {elapsed:.1} s)"
    );
}

#[test]
fn criterion_2_rate_identity_after_receiver_update() {
    let mut worst_rel: f64 = 0.0;
    // Same instance family and seeds as criterion 1.
    for trial in 0..100 {
        let p = geometric_instance(1000 + trial, 2, 8, 4, 3, 3, 10);
        let mut st = init_short_term(&p).unwrap();
        for _ in 0..3 {
            update_u(&p, &mut st).unwrap();
            update_w(&p, &mut st).unwrap();
            let rates = thcf_sim::wmmse::rates_of(&p, &st).unwrap();
            let lhs: f64 = p
                .mu
                .iter()
                .zip(&st.weights)
                .map(|(mu, w)| mu * w.ln())
                .sum();
            let rhs: f64 = p.mu.iter().zip(&rates).map(|(mu, r)| mu * r).sum();
            let rel = (lhs - rhs).abs() / rhs.abs().max(1e-12);
            worst_rel = worst_rel.max(rel);
            assert!(rel < 1e-6, "instance {trial}: identity off by {rel:.2e}");
            update_beta(&p, &mut st).unwrap();
            update_v(&p, &mut st).unwrap();
            update_d(&p, &mut st).unwrap();
        }
    }
    println!(
        "acceptance 2 (sum mu log w = sum mu r within 1e-6 relative): PASS \
         (worst {worst_rel:.2e})"
    );
}

#[test]
fn criterion_3_jacobian_matches_finite_differences() {
    let start = std::time::Instant::now();
    let mut worst_rel: f64 = 0.0;
    for trial in 0..20 {
        let (phases, x, sample) = geometric_jacobian_instance(3000 + trial, 1, 4, 2, 2);
        let jac = rate_jacobian_theta(&phases, &x, &sample).unwrap();
        let h = 1e-5;
        let dim = phases.as_slice().len();
        let scale = jac.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for idx in 0..dim {
            let mut plus = phases.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[idx] += h;
            minus[idx] -= h;
            let pp = AnalogPhases::clamped(plus, 1, 4, 2);
            let pm = AnalogPhases::clamped(minus, 1, 4, 2);
            let (_, rp) =
                thcf_sim::model::sinr_and_rates_under_phases(&pp, &x, &sample, QuantMode::Relaxed)
                    .unwrap();
            let (_, rm) =
                thcf_sim::model::sinr_and_rates_under_phases(&pm, &x, &sample, QuantMode::Relaxed)
                    .unwrap();
            for k in 0..2 {
                let fd = (rp[k] - rm[k]) / (2.0 * h);
                let denom = fd.abs().max(1e-8 * scale).max(1e-12);
                let rel = (jac[(idx, k)] - fd).abs() / denom;
                worst_rel = worst_rel.max(rel);
                assert!(
                    rel < 1e-4,
                    "instance {trial} entry ({idx},{k}): analytic {} vs fd {fd}",
                    jac[(idx, k)]
                );
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 3 took {elapsed:.1} s (budget 10 s)");
    println!(
        "acceptance 3 (phase Jacobian vs central differences, rel err < 1e-4): PASS \
         (worst {worst_rel:.2e}, {elapsed:.1} s)"
    );
}

#[test]
fn criterion_4_constraints_hold_after_every_update() {
    // Block-level checks on 30 random instances.
    let mut worst_budget_rel: f64 = 0.0;
    let mut worst_power_excess: f64 = f64::NEG_INFINITY;
    for trial in 0..30 {
        let p = geometric_instance(4000 + trial, 2, 8, 4, 3, 3, 4);
        let mut st = init_short_term(&p).unwrap();
        for _ in 0..4 {
            update_u(&p, &mut st).unwrap();
            update_w(&p, &mut st).unwrap();
            update_beta(&p, &mut st).unwrap();
            for (k, b) in st.beta.iter().enumerate() {
                worst_power_excess = worst_power_excess.max(b * b - p.power_caps[k]);
                assert!(b * b <= p.power_caps[k] + 1e-12, "power cap violated");
            }
            update_v(&p, &mut st).unwrap();
            update_d(&p, &mut st).unwrap();
            for (n, bits) in st.bits.iter().enumerate() {
                assert!(bits.iter().all(|&d| d >= 0.0));
                let sum: f64 = bits.iter().sum();
                let rel = (sum - p.bit_budgets[n]).abs() / p.bit_budgets[n];
                worst_budget_rel = worst_budget_rel.max(rel);
                assert!(rel <= 1e-6, "fronthaul equality violated: rel {rel}");
            }
        }
    }
    // Box feasibility of the phases over a full run (also asserted inside
    // the engine on every frame).
    let cfg = ExperimentConfig::preset("desk").unwrap();
    let mut scenario = cfg.scenario.clone();
    scenario.n_frames = 30;
    let sc = scenario.to_scenario().unwrap();
    let log = run_bcssca(&sc, &cfg.utility, &cfg.schedules, 3).unwrap();
    assert!(log
        .final_state
        .phases
        .as_slice()
        .iter()
        .all(|p| (0.0..=std::f64::consts::TAU).contains(p)));
    println!(
        "acceptance 4 (power caps, fronthaul equality, phase box on every run): PASS \
         (worst budget rel {worst_budget_rel:.2e}, worst power excess {worst_power_excess:.2e})"
    );
}

/// Projected-gradient oracle for the per-RRH bit subproblem
/// `min sum_l A_l 4^-d_l  s.t.  d >= 0, sum d <= budget`.
fn projected_gradient_bits(coeffs: &[f64], budget: f64) -> Vec<f64> {
    let l = coeffs.len();
    let project = |mut d: Vec<f64>| -> Vec<f64> {
        for v in &mut d {
            *v = v.max(0.0);
        }
        let s: f64 = d.iter().sum();
        if s <= budget {
            return d;
        }
        let mut sorted = d.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut cum = 0.0;
        let mut theta = 0.0;
        for (i, &v) in sorted.iter().enumerate() {
            cum += v;
            let t = (cum - budget) / (i + 1) as f64;
            if i + 1 == l || sorted[i + 1] <= t {
                theta = t;
                break;
            }
        }
        d.into_iter().map(|v| (v - theta).max(0.0)).collect()
    };
    let ln4 = 4f64.ln();
    let lip = coeffs.iter().cloned().fold(0.0f64, f64::max) * ln4 * ln4;
    let step = 1.0 / lip.max(1e-300);
    let mut d = project(vec![budget / l as f64; l]);
    for _ in 0..400_000 {
        let grad: Vec<f64> = coeffs
            .iter()
            .zip(&d)
            .map(|(&a, &dl)| -a * ln4 * 4f64.powf(-dl))
            .collect();
        let next = project(d.iter().zip(&grad).map(|(&dl, &g)| dl - step * g).collect());
        let delta: f64 = next
            .iter()
            .zip(&d)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        d = next;
        if delta < 1e-13 {
            break;
        }
    }
    d
}

/// Coefficients of the separable bit objective at the current iterate.
fn bit_objective_coeffs(p: &ShortTermProblem, st: &SolverState, n: usize) -> Vec<f64> {
    let l_streams = p.n_streams();
    let powers: Vec<f64> = st.beta.iter().map(|b| b * b).collect();
    (0..l_streams)
        .map(|l| {
            let v_col = CVec::from_column_slice(st.digital[n].column(l).as_slice());
            let mut input = v_col.dotc(&(&p.front.gram[n] * &v_col)).re;
            for (k, &pw) in powers.iter().enumerate() {
                input += pw * p.front.eff[n].column(k).dotc(&v_col).norm_sqr();
            }
            let usum: f64 = (0..p.n_users())
                .map(|k| p.mu[k] * st.weights[k] * st.rx[k][n * l_streams + l].norm_sqr())
                .sum();
            3.0 * usum * input
        })
        .collect()
}

#[test]
fn criterion_5_subproblem_oracle_equivalence() {
    let mut worst_bit_gap: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    for trial in 0..20 {
        let p = geometric_instance(5000 + trial, 2, 8, 4, 3, 3, 2);
        let mut st = init_short_term(&p).unwrap();
        update_u(&p, &mut st).unwrap();
        update_w(&p, &mut st).unwrap();
        update_beta(&p, &mut st).unwrap();

        // Digital filter: residual of the first-order system and descent of
        // the proximally regularized objective.
        let obj_before = wmmse_objective(&p, &st).unwrap();
        let prev = st.digital.clone();
        update_v(&p, &mut st).unwrap();
        let obj_after = wmmse_objective(&p, &st).unwrap();
        let prox_term: f64 = st
            .digital
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            * p.proximal;
        assert!(
            obj_after + prox_term <= obj_before + 1e-10,
            "instance {trial}: proximal objective increased"
        );
        let mut st_prev = st.clone();
        st_prev.digital = prev;
        let (b, rhs, prev_stacked) = digital_filter_system(&p, &st_prev);
        let v_new = stack_digital(&p.front, &st.digital, p.n_streams());
        let residual = (&b * &v_new - &rhs
            + (&v_new - &prev_stacked).map(|z| z * p.proximal))
            .norm();
        worst_residual = worst_residual.max(residual);
        assert!(
            residual < 1e-9,
            "instance {trial}: filter-block residual {residual:.2e}"
        );

        // Bit allocation vs the projected-gradient oracle.
        let before_d = st.clone();
        update_d(&p, &mut st).unwrap();
        for n in 0..2 {
            let coeffs = bit_objective_coeffs(&p, &before_d, n);
            let oracle = projected_gradient_bits(&coeffs, p.bit_budgets[n]);
            for l in 0..p.n_streams() {
                let gap = (st.bits[n][l] - oracle[l]).abs();
                worst_bit_gap = worst_bit_gap.max(gap);
                assert!(
                    gap < 1e-4,
                    "instance {trial} stream ({n},{l}): {} vs oracle {}",
                    st.bits[n][l],
                    oracle[l]
                );
            }
        }
    }
    println!(
        "acceptance 5 (bit block vs projected-gradient oracle < 1e-4; filter-block \
         residual < 1e-9 and descent): PASS (worst bit gap {worst_bit_gap:.2e}, worst \
         residual {worst_residual:.2e})"
    );
}

#[test]
fn criterion_6_rounding_budget_and_utility_loss() {
    // Budget exactness and per-stream deviation on random relaxed vectors.
    let mut rng = stream_rng(606, Stream::PhaseInit);
    for _ in 0..300 {
        let l = 2 + (rng.gen::<u64>() % 6) as usize;
        let budget = 1 + (rng.gen::<u64>() % 24) as u32;
        let raw: Vec<f64> = (0..l).map(|_| 0.01 + rng.gen::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let d_star: Vec<f64> = raw.iter().map(|x| x * budget as f64 / s).collect();
        let rounded = round_bits(&d_star, 2.0 * budget as f64, 1.0).unwrap();
        assert_eq!(rounded.iter().sum::<u32>(), budget);
        for (r, d) in rounded.iter().zip(&d_star) {
            assert!((*r as f64 - d).abs() < 1.0);
        }
    }

    // Utility loss of integer bits vs relaxed bits at the desk C = 64 Mbps
    // operating point (5% is an engineering bar, not a value from the
    // literature).
    let mut cfg = ExperimentConfig::preset("desk").unwrap();
    cfg.experiment.schemes = vec!["thcf".into()];
    cfg.experiment.seeds = vec![1, 2, 3];
    assert_eq!(cfg.scenario.fronthaul_capacity_bps, 64.0e6);
    let table = run_sweep(&cfg).unwrap();
    assert!(table.failures.is_empty());
    let mut worst_loss: f64 = f64::NEG_INFINITY;
    for row in &table.rows {
        let loss = (row.pfs_utility_relaxed - row.pfs_utility) / row.pfs_utility_relaxed.abs();
        worst_loss = worst_loss.max(loss);
        assert!(
            loss < 0.05,
            "seed {}: integer-bit utility loss {loss:.3}",
            row.seed
        );
        // Integer-bit sum rates never exceeded the relaxed-bit sum rates.
        assert!(row.sum_rate_bits <= row.sum_rate_relaxed_bits + 1e-9);
    }
    println!(
        "acceptance 6 (rounding hits budgets exactly; integer-vs-relaxed utility loss \
         < 5% at C = 64 Mbps): PASS (worst loss {worst_loss:.2e})"
    );
}

#[test]
fn criterion_7_bcssca_convergence_at_desk_scale() {
    let start = std::time::Instant::now();
    let cfg = ExperimentConfig::preset("desk").unwrap();
    let sc = cfg.scenario.to_scenario().unwrap();
    assert_eq!(sc.n_frames, 200);
    assert_eq!(sc.slots_per_frame, 10);
    // Canonical convergence run.
    let seed = 2;
    let log = run_bcssca(&sc, &cfg.utility, &cfg.schedules, seed).unwrap();

    // Relative standard deviation of g(r^) over the final 20 frames.
    let tail: Vec<f64> = log
        .frames
        .iter()
        .rev()
        .take(20)
        .map(|f| f.utility_estimate)
        .collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let rsd = (tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / tail.len() as f64)
        .sqrt()
        / mean.abs();
    assert!(rsd < 0.01, "utility-estimate RSD {rsd:.4}");

    // Weight tracking at the final frame.
    let st = &log.final_state;
    let mu_bar = cfg.utility.gradient(&st.rate_est);
    let mu_gap: f64 = st
        .mu
        .iter()
        .zip(&mu_bar)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(mu_gap < 1e-2, "weight tracking gap {mu_gap:.4}");

    // Stationarity of the final phases: moving toward any random feasible
    // point must not look like an ascent direction of the surrogate.
    let f = st.surrogate_gradient(&cfg.utility);
    let mut rng = stream_rng(700, Stream::PhaseInit);
    let mut worst_ip = f64::NEG_INFINITY;
    for _ in 0..100 {
        let other: Vec<f64> = (0..f.len())
            .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
            .collect();
        let diff: Vec<f64> = other
            .iter()
            .zip(st.phases.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        let ip: f64 = diff.iter().zip(&f).map(|(d, g)| d * g).sum();
        worst_ip = worst_ip.max(ip / norm);
    }
    assert!(worst_ip <= 1e-2, "stationarity inner product {worst_ip:.4}");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "criterion 7 took {elapsed:.1} s (budget 5 min)");
    println!(
        "acceptance 7 (desk PFS convergence, seed {seed}): PASS (RSD {rsd:.4}, mu gap \
         {mu_gap:.4}, stationarity {worst_ip:+.4}, {elapsed:.1} s)"
    );
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_err(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

#[test]
fn criterion_8_scheme_ordering_and_capacity_trend() {
    let mut cfg = ExperimentConfig::preset("desk").unwrap();
    cfg.experiment.schemes = vec![
        "thcf".into(),
        "scf-no-delay".into(),
        "ascf".into(),
        "sscf".into(),
    ];
    cfg.experiment.sweep_parameter = SweepParameter::FronthaulCapacity;
    cfg.experiment.sweep_values = vec![16.0e6, 32.0e6, 64.0e6, 128.0e6];
    cfg.experiment.seeds = (1..=20).collect();
    let table = run_sweep(&cfg).unwrap();
    assert!(table.failures.is_empty(), "{:?}", table.failures);

    let pfs = |scheme: &str, cap: f64, seed: u64| -> f64 {
        table
            .rows
            .iter()
            .find(|r| r.scheme == scheme && r.sweep_value == Some(cap) && r.seed == seed)
            .unwrap()
            .pfs_utility
    };
    let seeds: Vec<u64> = (1..=20).collect();

    // Ordering at the desk operating point (C = 64 Mbps), paired per seed;
    // every gap must exceed one standard error of the paired difference.
    let mut summary = String::new();
    for (hi, lo) in [
        ("scf-no-delay", "thcf"),
        ("thcf", "sscf"),
        ("thcf", "ascf"),
    ] {
        let diffs: Vec<f64> = seeds
            .iter()
            .map(|&s| pfs(hi, 64.0e6, s) - pfs(lo, 64.0e6, s))
            .collect();
        let m = mean(&diffs);
        let se = std_err(&diffs);
        assert!(
            m > se,
            "ordering {hi} >= {lo} not significant: mean {m:.4}, SE {se:.4}"
        );
        summary.push_str(&format!("{hi}-{lo}: {m:.3}+/-{se:.3}; "));
    }

    // Paired channel trajectories per (value, seed) across schemes.
    for &cap in &cfg.experiment.sweep_values {
        for &seed in &seeds {
            let hashes: Vec<u64> = table
                .rows
                .iter()
                .filter(|r| r.sweep_value == Some(cap) && r.seed == seed)
                .map(|r| r.channel_hash)
                .collect();
            assert!(hashes.windows(2).all(|w| w[0] == w[1]));
        }
    }

    // Mean sum throughput non-decreasing in the fronthaul capacity.
    for scheme in ["thcf", "scf-no-delay", "ascf", "sscf"] {
        let means: Vec<f64> = cfg
            .experiment
            .sweep_values
            .iter()
            .map(|&cap| mean(&seeds.iter().map(|&s| {
                table
                    .rows
                    .iter()
                    .find(|r| {
                        r.scheme == scheme && r.sweep_value == Some(cap) && r.seed == s
                    })
                    .unwrap()
                    .sum_rate_bits
            }).collect::<Vec<f64>>()))
            .collect();
        for i in 0..means.len() - 1 {
            assert!(
                means[i + 1] >= means[i] - 1e-9,
                "{scheme}: mean sum rate decreased from C index {i}: {means:?}"
            );
        }
    }
    println!("acceptance 8 (scheme ordering at 1 SE; sum rate non-decreasing in C): PASS ({summary})");
}

#[test]
fn criterion_9_csi_delay_robustness() {
    let mut cfg = ExperimentConfig::preset("desk").unwrap();
    cfg.experiment.schemes = vec!["thcf".into(), "scf".into()];
    cfg.experiment.sweep_parameter = SweepParameter::CsiDelayMs;
    cfg.experiment.sweep_values = vec![0.0, 2.0, 4.0, 8.0];
    cfg.experiment.seeds = (1..=20).collect();
    let table = run_sweep(&cfg).unwrap();
    assert!(table.failures.is_empty(), "{:?}", table.failures);

    let taus = [0.0, 2.0, 4.0, 8.0];
    let pfs = |scheme: &str, tau: f64, seed: u64| -> f64 {
        table
            .rows
            .iter()
            .find(|r| r.scheme == scheme && r.sweep_value == Some(tau) && r.seed == seed)
            .unwrap()
            .pfs_utility
    };
    let slope = |vals: &[f64]| -> f64 {
        let tbar = mean(&taus);
        let vbar = mean(vals);
        let num: f64 = taus
            .iter()
            .zip(vals)
            .map(|(t, v)| (t - tbar) * (v - vbar))
            .sum();
        let den: f64 = taus.iter().map(|t| (t - tbar).powi(2)).sum();
        num / den
    };
    let diffs: Vec<f64> = (1..=20)
        .map(|s| {
            let st = slope(&taus.map(|t| pfs("thcf", t, s)));
            let ss = slope(&taus.map(|t| pfs("scf", t, s)));
            st - ss
        })
        .collect();
    let m = mean(&diffs);
    let se = std_err(&diffs);
    assert!(
        m > se,
        "THCF did not degrade less than SCF: slope diff {m:.4} +/- {se:.4}"
    );

    // Zero-delay SCF is at least as good as delayed SCF on average.
    let d0: Vec<f64> = (1..=20).map(|s| pfs("scf", 0.0, s)).collect();
    let d4: Vec<f64> = (1..=20).map(|s| pfs("scf", 4.0, s)).collect();
    assert!(mean(&d0) >= mean(&d4));

    println!(
        "acceptance 9 (THCF degrades less than SCF over the delay sweep): PASS \
         (slope difference {m:+.4}/ms, SE {se:.4})"
    );
}

#[test]
fn criterion_10_determinism_and_estimator_consistency() {
    // Byte-identical CSV from identical config and seeds.
    let mut cfg = ExperimentConfig::preset("desk").unwrap();
    cfg.scenario.n_frames = 20;
    cfg.experiment.schemes = vec!["thcf".into(), "ascf".into()];
    cfg.experiment.seeds = vec![11, 12];
    cfg.experiment.burn_in_frames = 5;
    let dir = std::env::temp_dir().join("thcf_acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let a = dir.join("det_a.csv");
    let b = dir.join("det_b.csv");
    emit_results(&run_sweep(&cfg).unwrap(), &a, OutputFormat::Csv).unwrap();
    emit_results(&run_sweep(&cfg).unwrap(), &b, OutputFormat::Csv).unwrap();
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap(), "CSV output not byte-identical");

    // Estimator consistency with frozen phases/weights and i.i.d. channels:
    // the recursive estimates converge to independent Monte Carlo means.
    let (n_rrh, m, s, k_users, n_paths) = (1, 4, 2, 2, 2);
    let seed = 77;
    let topo =
        build_topology(n_rrh, k_users, 250.0, &mut stream_rng(seed, Stream::Topology)).unwrap();
    let stats = draw_statistics(
        &topo,
        n_paths,
        10f64.to_radians(),
        NOISE_W,
        &mut stream_rng(seed, Stream::Statistics),
    )
    .unwrap();
    let mut fading = stream_rng(seed, Stream::Fading);
    // slot correlation 0: every slot is an independent channel draw
    let mut process = ChannelProcess::new(stats, m, 0.0, 0, &mut fading).unwrap();
    let phases = AnalogPhases::random(n_rrh, m, s, &mut stream_rng(seed, Stream::PhaseInit));
    let mu = vec![1.0; k_users];
    let schedules = default_schedules();
    let solve = |sample: &thcf_sim::scenario::ChannelSample| -> (Vec<f64>, DMatrix<f64>) {
        let front = RxFrontEnd::from_phases(&phases, sample).unwrap();
        let problem = ShortTermProblem {
            front: front.clone(),
            mu: mu.clone(),
            power_caps: vec![1.0; k_users],
            bit_budgets: vec![4.0 * k_users.min(s) as f64; n_rrh],
            proximal: 1e-4,
            iters: 5,
        };
        let (x, _) = run_short_term(&problem).unwrap();
        let q = quant_noise_variances(&front, &x.powers, &x.digital, &x.bits, QuantMode::Relaxed)
            .unwrap();
        let (_, rates) = sinr_and_rates(&front, &x, &q);
        let jac = rate_jacobian_theta(&phases, &x, sample).unwrap();
        (rates, jac)
    };

    let t_s = 10;
    let frames = 500;
    let dim = n_rrh * m * s;
    let mut rate_est = vec![0.0; k_users];
    let mut jac_est = DMatrix::<f64>::zeros(dim, k_users);
    // Accumulated squared estimator weights: Var(est) = w2 * Var(sample).
    let mut w2 = 0.0;
    let mut frame_avgs: Vec<Vec<f64>> = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut frame_rates = Vec::with_capacity(t_s);
        let mut first_jac = None;
        for i in 0..t_s {
            let sample = process.advance(&mut fading);
            let (rates, jac) = solve(&sample);
            if i == 0 {
                first_jac = Some(jac);
            }
            frame_rates.push(rates);
        }
        let rho = schedules.rho(t);
        rate_est = update_rate_estimate(&rate_est, &frame_rates, rho);
        jac_est = update_grad_estimate(&jac_est, &first_jac.unwrap(), rho);
        w2 = (1.0 - rho) * (1.0 - rho) * w2 + rho * rho;
        frame_avgs.push((0..k_users)
            .map(|k| frame_rates.iter().map(|r| r[k]).sum::<f64>() / t_s as f64)
            .collect());
    }

    // Independent Monte Carlo over fresh draws from the same process.
    let n_mc = 2500;
    let mut mc_rates = vec![0.0; k_users];
    let mut mc_rate_sq = vec![0.0; k_users];
    let mut mc_jac = DMatrix::<f64>::zeros(dim, k_users);
    let mut mc_jac_sq = DMatrix::<f64>::zeros(dim, k_users);
    for _ in 0..n_mc {
        let sample = process.advance(&mut fading);
        let (rates, jac) = solve(&sample);
        for k in 0..k_users {
            mc_rates[k] += rates[k] / n_mc as f64;
            mc_rate_sq[k] += rates[k] * rates[k] / n_mc as f64;
        }
        mc_jac += &jac / n_mc as f64;
        mc_jac_sq += jac.map(|v| v * v) / n_mc as f64;
    }

    // Per-user rate comparison at 3 combined standard errors.
    for k in 0..k_users {
        let frame_var = {
            let vals: Vec<f64> = frame_avgs.iter().map(|f| f[k]).collect();
            let m = mean(&vals);
            vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        };
        let se_est = (frame_var * w2).sqrt();
        let mc_var = (mc_rate_sq[k] - mc_rates[k] * mc_rates[k]).max(0.0);
        let se_mc = (mc_var / n_mc as f64).sqrt();
        let gap = (rate_est[k] - mc_rates[k]).abs();
        let bound = 3.0 * (se_est * se_est + se_mc * se_mc).sqrt();
        assert!(
            gap <= bound,
            "user {k}: rate estimate {:.4} vs MC {:.4} (bound {bound:.4})",
            rate_est[k],
            mc_rates[k]
        );
    }

    // Surrogate gradient f = F^ grad g with sum-rate utility (row sums),
    // compared in norm against the Monte Carlo mean at 3 aggregate sigmas.
    let ones = nalgebra::DVector::from_element(k_users, 1.0);
    let f_est = &jac_est * &ones;
    let f_mc = &mc_jac * &ones;
    // Per-frame Jacobian samples scatter around the mean; w2 scales the
    // estimator variance, 1/n_mc the Monte Carlo variance.
    let slot_var: f64 = (0..dim)
        .map(|i| {
            (0..k_users)
                .map(|k| (mc_jac_sq[(i, k)] - mc_jac[(i, k)].powi(2)).max(0.0))
                .sum::<f64>()
        })
        .sum();
    let bound = 3.0 * ((w2 + 1.0 / n_mc as f64) * slot_var).sqrt() * (k_users as f64).sqrt();
    let gap = (&f_est - &f_mc).norm();
    assert!(gap <= bound, "gradient estimate gap {gap:.4} (bound {bound:.4})");

    println!(
        "acceptance 10 (byte-identical CSV; recursive estimates match Monte Carlo \
         within 3 SE over 500 frames): PASS (gradient gap {gap:.3} <= {bound:.3})"
    );
}
