//! Online two-timescale outer loop.
//!
//! Frames of `T_s` slots are processed in sequence. Within a frame the
//! analog phases `theta^t` and rate weights `mu^t` are frozen and every slot
//! solves its short-term subproblem on (possibly stale) effective CSI. At
//! the frame boundary the loop refreshes a recursive estimate of the average
//! rates and of the phase Jacobian from one (possibly stale) full channel
//! sample, maximizes a concave quadratic surrogate of the utility in closed
//! form (a projected gradient step onto the phase box), and applies
//! averaging updates to both `theta` and `mu`:
//!
//! ```text
//! r^_k      <- (1 - rho_t) r^_k + rho_t * mean_i r_k(i)
//! F^        <- (1 - rho_t) F^  + rho_t * J_theta(theta^t, x(first slot); H^t)
//! f         =  F^ grad g(r^)
//! theta_bar =  clamp(theta^t + f / (2 tau), 0, 2 pi)
//! theta^{t+1} = (1 - gamma_t) theta^t + gamma_t theta_bar
//! mu^{t+1}    = (1 - gamma_t) mu^t    + gamma_t grad g(r^)
//! ```
//!
//! The same engine drives all schemes; they differ in how the receive front
//! end is built, how much short-term optimization runs per slot, which
//! long-term blocks adapt, and which CSI delay the slot solver sees.

use crate::jacobian::rate_jacobian_theta;
use crate::model::{
    quant_noise_variances, sinr_and_rates, AnalogPhases, QuantMode, RxFrontEnd, ShortTermVars,
    UtilitySpec,
};
use crate::rng::{stream_rng, Stream};
use crate::scenario::{build_topology, draw_statistics, ChannelProcess, ChannelSample, Scenario};
use crate::wmmse::{leading_eigenvectors, mmse_receivers, run_short_term, ShortTermProblem};
use crate::{C64, CMat, Error, Result};
use nalgebra::DMatrix;
use std::f64::consts::TAU;

/// Step-size and inner-iteration schedules of the outer loop.
///
/// The defaults satisfy the standard two-timescale conditions by
/// construction: `rho_t = (t+1)^-0.6` (square-summable, `1/rho_t = O(t^0.6)`),
/// `gamma_t = (t+1)^-0.9` (non-summable but square-summable) and
/// `gamma_t / rho_t = (t+1)^-0.3 -> 0`; the inner iteration count grows to a
/// finite cap.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub rho_exponent: f64,
    /// Scale of the estimator step: `rho_t = min(1, rho_scale (t+1)^-rho_exponent)`.
    pub rho_scale: f64,
    pub gamma_exponent: f64,
    /// Scale of the averaging step: `gamma_t = min(1, gamma_scale (t+1)^-gamma_exponent)`.
    pub gamma_scale: f64,
    pub inner_base: usize,
    pub inner_growth_interval: usize,
    pub inner_cap: usize,
    /// Curvature `tau` of the concave surrogate.
    pub surrogate_curvature: f64,
    /// Proximal weight `epsilon` of the digital-filter block update.
    pub proximal_epsilon: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        default_schedules()
    }
}

/// Default schedules: `rho_t = (t+1)^-0.6`, `gamma_t = (t+1)^-0.9`,
/// `J_t = min(50, 10 + floor(t/10))`, `tau = 1`.
pub fn default_schedules() -> ScheduleSpec {
    ScheduleSpec {
        rho_exponent: 0.6,
        rho_scale: 1.0,
        gamma_exponent: 0.9,
        gamma_scale: 1.0,
        inner_base: 10,
        inner_growth_interval: 10,
        inner_cap: 50,
        surrogate_curvature: 1.0,
        proximal_epsilon: 1e-4,
    }
}

impl ScheduleSpec {
    pub fn rho(&self, frame: usize) -> f64 {
        (self.rho_scale * ((frame + 1) as f64).powf(-self.rho_exponent)).min(1.0)
    }

    pub fn gamma(&self, frame: usize) -> f64 {
        (self.gamma_scale * ((frame + 1) as f64).powf(-self.gamma_exponent)).min(1.0)
    }

    pub fn inner_iters(&self, frame: usize) -> usize {
        (self.inner_base + frame / self.inner_growth_interval.max(1)).min(self.inner_cap)
    }
}

/// Long-term iterate of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTermState {
    pub phases: AnalogPhases,
    pub mu: Vec<f64>,
    /// Recursive estimate of the per-user average rates (nats).
    pub rate_est: Vec<f64>,
    /// Recursive estimate of the phase Jacobian, `(N M S) x K`.
    pub jac_est: DMatrix<f64>,
    pub frame: usize,
}

impl LongTermState {
    pub fn new(phases: AnalogPhases, n_users: usize) -> Self {
        let dim = phases.as_slice().len();
        Self {
            phases,
            mu: vec![1.0; n_users],
            rate_est: vec![0.0; n_users],
            jac_est: DMatrix::zeros(dim, n_users),
            frame: 0,
        }
    }

    /// Current surrogate gradient `f = F^ grad g(r^)`.
    pub fn surrogate_gradient(&self, utility: &UtilitySpec) -> Vec<f64> {
        let g = utility.gradient(&self.rate_est);
        let gv = nalgebra::DVector::from_vec(g);
        (&self.jac_est * gv).as_slice().to_vec()
    }
}

/// `r^ <- (1 - rho) r^ + rho * (frame average)`.
pub fn update_rate_estimate(prev: &[f64], frame_rates: &[Vec<f64>], rho: f64) -> Vec<f64> {
    let t_s = frame_rates.len().max(1) as f64;
    prev.iter()
        .enumerate()
        .map(|(k, &r)| {
            let avg: f64 = frame_rates.iter().map(|slot| slot[k]).sum::<f64>() / t_s;
            (1.0 - rho) * r + rho * avg
        })
        .collect()
}

/// `F^ <- (1 - rho) F^ + rho * J_sample`.
pub fn update_grad_estimate(prev: &DMatrix<f64>, sample: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    prev * (1.0 - rho) + sample * rho
}

/// Closed-form maximizer of the quadratic surrogate over the phase box:
/// `clamp(theta + f / (2 tau), 0, 2 pi)` elementwise.
pub fn surrogate_argmax(phases: &AnalogPhases, gradient: &[f64], tau: f64) -> AnalogPhases {
    let moved: Vec<f64> = phases
        .as_slice()
        .iter()
        .zip(gradient)
        .map(|(p, g)| p + g / (2.0 * tau))
        .collect();
    AnalogPhases::clamped(moved, phases.n_rrh, phases.n_antennas, phases.n_rf)
}

/// Averaging updates `theta^{t+1} = (1-gamma) theta + gamma theta_bar`,
/// `mu^{t+1} = (1-gamma) mu + gamma mu_bar`. Convex combinations keep
/// `theta` in the box when both endpoints are.
pub fn averaging_updates(
    state: &mut LongTermState,
    theta_bar: &AnalogPhases,
    mu_bar: &[f64],
    gamma: f64,
) {
    let blended: Vec<f64> = state
        .phases
        .as_slice()
        .iter()
        .zip(theta_bar.as_slice())
        .map(|(a, b)| (1.0 - gamma) * a + gamma * b)
        .collect();
    state.phases = AnalogPhases::clamped(
        blended,
        state.phases.n_rrh,
        state.phases.n_antennas,
        state.phases.n_rf,
    );
    for (m, &mb) in state.mu.iter_mut().zip(mu_bar) {
        *m = (1.0 - gamma) * *m + gamma * mb;
    }
}

/// How a scheme builds the per-slot receive front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontKind {
    /// Analog phase-shifter filter from the long-term phases (THCF, S-SCF).
    PhaseFilter,
    /// Fully digital filtering: an orthonormal basis of the (delayed)
    /// channel column space stands in for the analog stage (SCF).
    ChannelBasis,
    /// Per-slot analog-only filter: entrywise phase projection of the top-S
    /// eigenvectors of the (delayed) channel Gram (A-SCF).
    EigenPhases,
}

/// How much short-term optimization runs per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerKind {
    /// Full block-coordinate rounds with the scheduled iteration count.
    BlockRounds,
    /// Initialization plus one MMSE receiver/weight pass only.
    InitOnly,
    /// Fixed analog-era point: max power, equal bits, identity-selection
    /// digital filter, MMSE receiver.
    FixedPoint,
}

/// Which CSI staleness the slot solver sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotDelay {
    Effective,
    Full,
    Zero,
}

/// Scheme-defining knobs for the shared engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineCfg {
    pub front: FrontKind,
    pub inner: InnerKind,
    pub adapt_phases: bool,
    pub adapt_weights: bool,
    pub slot_delay: SlotDelay,
}

/// Per-slot rate log: rates on the true current channel, under the relaxed
/// bits produced by the solver and under the deployable integer bits with a
/// re-derived MMSE receiver and the exact quantizer model.
#[derive(Debug, Clone)]
pub struct SlotRecord {
    pub slot: usize,
    pub rates_relaxed: Vec<f64>,
    pub rates_exact: Vec<f64>,
}

/// Per-frame trajectory record.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame: usize,
    pub utility_estimate: f64,
    pub phase_step_norm: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    /// Distance between the averaged weights and the current utility
    /// gradient at the rate estimate.
    pub mu_tracking_gap: f64,
    /// Per-user recursive rate estimates after this frame's update.
    pub rate_estimates: Vec<f64>,
    pub inner_iters: usize,
}

/// Output of one scheme run.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub slots: Vec<SlotRecord>,
    pub frames: Vec<FrameRecord>,
    /// FNV fingerprint of every channel sample consumed, in order.
    pub channel_hash: u64,
    pub final_state: LongTermState,
}

fn combine_hash(acc: u64, fp: u64) -> u64 {
    let mut h = acc;
    for b in fp.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Identity-selection digital filter: `S x L` with ones on the diagonal.
fn selection_filter(s: usize, l: usize) -> CMat {
    CMat::from_fn(s, l, |i, j| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Entrywise unit-modulus projection of the top-`S` eigenvectors of
/// `H H^H`, scaled to `1/sqrt(M)`: the analog approximation of the dominant
/// channel subspace.
pub fn eigen_phase_filter(h: &CMat, n_rf: usize) -> Result<CMat> {
    let m = h.nrows();
    let w = leading_eigenvectors(&(h * h.adjoint()), n_rf)?;
    let scale = 1.0 / (m as f64).sqrt();
    Ok(w.map(|z| C64::from_polar(scale, z.arg())))
}

/// Orthonormal basis of the channel column space (thin QR).
fn channel_basis(h: &CMat) -> CMat {
    h.clone().qr().q()
}

struct SlotFilter {
    /// Per-RRH filter matrices applied before the digital stage.
    filters: Vec<CMat>,
}

impl SlotFilter {
    fn front(&self, sample: &ChannelSample) -> Result<RxFrontEnd> {
        RxFrontEnd::from_filters(&self.filters, sample)
    }
}

/// Runs one scheme end to end over the scenario's frame/slot grid.
///
/// All schemes with the same `seed` construct identical topologies,
/// statistics and channel trajectories; scheme-specific randomness (the
/// initial phases) draws from its own stream.
pub fn run_engine(
    scenario: &Scenario,
    utility: &UtilitySpec,
    schedules: &ScheduleSpec,
    cfg: &EngineCfg,
    seed: u64,
) -> Result<RunLog> {
    validate_scenario(scenario)?;
    let n_users = scenario.n_users;
    let l_streams = scenario.n_streams();
    let budget = scenario.fronthaul_bit_budget();
    let topo = build_topology(
        scenario.n_rrh,
        n_users,
        scenario.cell_radius_m,
        &mut stream_rng(seed, Stream::Topology),
    )?;
    let stats = draw_statistics(
        &topo,
        scenario.n_paths,
        scenario.angle_spread_rad,
        scenario.noise_power_w,
        &mut stream_rng(seed, Stream::Statistics),
    )?;
    let mut fading = stream_rng(seed, Stream::Fading);
    let max_delay = scenario.full_csi_delay_slots.max(scenario.eff_csi_delay_slots);
    let mut process = ChannelProcess::new(
        stats,
        scenario.n_antennas,
        scenario.slot_correlation(),
        max_delay,
        &mut fading,
    )?;
    // Pre-roll so delayed views exist from the first in-run slot. The
    // pre-roll length depends only on the scenario, keeping paired schemes
    // on identical fading streams.
    for _ in 0..max_delay {
        process.advance(&mut fading);
    }

    let phases = AnalogPhases::random(
        scenario.n_rrh,
        scenario.n_antennas,
        scenario.n_rf,
        &mut stream_rng(seed, Stream::PhaseInit),
    );
    let mut state = LongTermState::new(phases, n_users);
    let slot_delay = match cfg.slot_delay {
        SlotDelay::Effective => scenario.eff_csi_delay_slots,
        SlotDelay::Full => scenario.full_csi_delay_slots,
        SlotDelay::Zero => 0,
    };

    let mut slots = Vec::with_capacity(scenario.n_frames * scenario.slots_per_frame);
    let mut frames = Vec::with_capacity(scenario.n_frames);
    let mut hash = 0xcbf29ce484222325u64;
    let power_caps = vec![scenario.tx_power_w; n_users];

    for frame in 0..scenario.n_frames {
        let inner_iters = match cfg.inner {
            InnerKind::BlockRounds => schedules.inner_iters(frame),
            _ => 0,
        };
        // Frame-constant analog filter for the phase-driven schemes.
        let frame_filter = match cfg.front {
            FrontKind::PhaseFilter => Some(SlotFilter {
                filters: state.phases.matrices(),
            }),
            _ => None,
        };
        let mut frame_rates: Vec<Vec<f64>> = Vec::with_capacity(scenario.slots_per_frame);
        let mut first_x: Option<ShortTermVars> = None;
        let mut jac_sample: Option<ChannelSample> = None;

        for s in 0..scenario.slots_per_frame {
            let truth = process.advance(&mut fading);
            hash = combine_hash(hash, truth.fingerprint());
            let stale = process.delayed_view(slot_delay)?;

            // Per-slot filter: frame-constant for phase schemes, rebuilt
            // from the stale channel otherwise.
            let slot_filter = match cfg.front {
                FrontKind::PhaseFilter => None,
                FrontKind::ChannelBasis => Some(SlotFilter {
                    filters: stale.per_rrh.iter().map(channel_basis).collect(),
                }),
                FrontKind::EigenPhases => Some(SlotFilter {
                    filters: stale
                        .per_rrh
                        .iter()
                        .map(|h| eigen_phase_filter(h, scenario.n_rf))
                        .collect::<Result<Vec<_>>>()?,
                }),
            };
            let filter = slot_filter
                .as_ref()
                .or(frame_filter.as_ref())
                .expect("a slot filter always exists");
            let front_solve = filter.front(stale)?;

            let x = match cfg.inner {
                InnerKind::BlockRounds | InnerKind::InitOnly => {
                    let problem = ShortTermProblem {
                        front: front_solve.clone(),
                        mu: state.mu.clone(),
                        power_caps: power_caps.clone(),
                        bit_budgets: vec![budget; scenario.n_rrh],
                        proximal: schedules.proximal_epsilon,
                        iters: inner_iters,
                    };
                    run_short_term(&problem)?.0
                }
                InnerKind::FixedPoint => {
                    let digital: Vec<CMat> = (0..scenario.n_rrh)
                        .map(|n| selection_filter(front_solve.n_rf(n), l_streams))
                        .collect();
                    let bits = vec![vec![budget / l_streams as f64; l_streams]; scenario.n_rrh];
                    let amps: Vec<f64> = power_caps.iter().map(|p| p.sqrt()).collect();
                    let q = quant_noise_variances(
                        &front_solve,
                        &power_caps,
                        &digital,
                        &bits,
                        QuantMode::Relaxed,
                    )?;
                    let rx = mmse_receivers(&front_solve, &digital, &amps, &q)?;
                    ShortTermVars {
                        powers: power_caps.clone(),
                        digital,
                        bits,
                        rx,
                    }
                }
            };

            // Rates on the true current channel under the same filter.
            let front_true = filter.front(&truth)?;
            let q_true = quant_noise_variances(
                &front_true,
                &x.powers,
                &x.digital,
                &x.bits,
                QuantMode::Relaxed,
            )?;
            let (_, rates_relaxed) = sinr_and_rates(&front_true, &x, &q_true);

            // Deployable evaluation: integer bits, re-derived MMSE receiver
            // on the stale CSI, exact quantizer on the true channel.
            let mut bits_exact = Vec::with_capacity(scenario.n_rrh);
            for n in 0..scenario.n_rrh {
                let rounded = crate::model::round_bits(
                    &x.bits[n],
                    scenario.fronthaul_capacity_bps,
                    scenario.bandwidth_hz,
                )?;
                bits_exact.push(rounded.into_iter().map(f64::from).collect::<Vec<f64>>());
            }
            let amps: Vec<f64> = x.powers.iter().map(|p| p.sqrt()).collect();
            let q_exact_stale = quant_noise_variances(
                &front_solve,
                &x.powers,
                &x.digital,
                &bits_exact,
                QuantMode::Exact,
            )?;
            let rx_exact = mmse_receivers(&front_solve, &x.digital, &amps, &q_exact_stale)?;
            let x_exact = ShortTermVars {
                powers: x.powers.clone(),
                digital: x.digital.clone(),
                bits: bits_exact,
                rx: rx_exact,
            };
            let q_exact_true = quant_noise_variances(
                &front_true,
                &x_exact.powers,
                &x_exact.digital,
                &x_exact.bits,
                QuantMode::Exact,
            )?;
            let (_, rates_exact) = sinr_and_rates(&front_true, &x_exact, &q_exact_true);

            if s == 0 {
                if cfg.adapt_phases {
                    jac_sample = Some(
                        process
                            .delayed_view(scenario.full_csi_delay_slots)?
                            .clone(),
                    );
                }
                first_x = Some(x.clone());
            }
            frame_rates.push(rates_relaxed.clone());
            slots.push(SlotRecord {
                slot: frame * scenario.slots_per_frame + s,
                rates_relaxed,
                rates_exact,
            });
        }

        // Long-term updates at the frame boundary.
        let rho = schedules.rho(frame);
        let gamma = schedules.gamma(frame);
        state.rate_est = update_rate_estimate(&state.rate_est, &frame_rates, rho);
        let mu_bar = utility.gradient(&state.rate_est);
        let mut phase_step = 0.0;
        if cfg.adapt_phases {
            let jac = rate_jacobian_theta(
                &state.phases,
                first_x.as_ref().expect("first slot recorded"),
                jac_sample.as_ref().expect("full sample recorded"),
            )?;
            state.jac_est = update_grad_estimate(&state.jac_est, &jac, rho);
            let f = state.surrogate_gradient(utility);
            let theta_bar = surrogate_argmax(&state.phases, &f, schedules.surrogate_curvature);
            let before = state.phases.as_slice().to_vec();
            let mu_next = if cfg.adapt_weights {
                mu_bar.clone()
            } else {
                state.mu.clone()
            };
            averaging_updates(&mut state, &theta_bar, &mu_next, gamma);
            phase_step = state
                .phases
                .as_slice()
                .iter()
                .zip(&before)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        } else if cfg.adapt_weights {
            for (m, &mb) in state.mu.iter_mut().zip(&mu_bar) {
                *m = (1.0 - gamma) * *m + gamma * mb;
            }
        }
        assert!(
            state.phases.as_slice().iter().all(|p| (0.0..=TAU).contains(p)),
            "phases left the feasible box at frame {frame}"
        );
        let mu_tracking_gap = state
            .mu
            .iter()
            .zip(&mu_bar)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        frames.push(FrameRecord {
            frame,
            utility_estimate: utility.value(&state.rate_est),
            phase_step_norm: phase_step,
            mu_min: state.mu.iter().cloned().fold(f64::INFINITY, f64::min),
            mu_max: state.mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mu_tracking_gap,
            rate_estimates: state.rate_est.clone(),
            inner_iters,
        });
        state.frame = frame + 1;
    }

    Ok(RunLog {
        slots,
        frames,
        channel_hash: hash,
        final_state: state,
    })
}

/// The full two-timescale scheme: analog phases and weights adapt per frame,
/// every slot runs the scheduled block-coordinate rounds on effective CSI.
pub fn run_bcssca(
    scenario: &Scenario,
    utility: &UtilitySpec,
    schedules: &ScheduleSpec,
    seed: u64,
) -> Result<RunLog> {
    run_engine(
        scenario,
        utility,
        schedules,
        &EngineCfg {
            front: FrontKind::PhaseFilter,
            inner: InnerKind::BlockRounds,
            adapt_phases: true,
            adapt_weights: true,
            slot_delay: SlotDelay::Effective,
        },
        seed,
    )
}

/// Validates a scenario before running.
pub fn validate_scenario(scenario: &Scenario) -> Result<()> {
    if scenario.n_rrh == 0 || scenario.n_users == 0 {
        return Err(Error::Config("need at least one RRH and one user".into()));
    }
    if scenario.n_rf > scenario.n_antennas {
        return Err(Error::Config(format!(
            "RF chains ({}) exceed antennas ({})",
            scenario.n_rf, scenario.n_antennas
        )));
    }
    if scenario.slots_per_frame == 0 || scenario.n_frames == 0 {
        return Err(Error::Config("need at least one frame and one slot".into()));
    }
    let budget = scenario.fronthaul_bit_budget();
    if budget < 0.0 || (budget - budget.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "fronthaul budget C/(2 B_W) = {budget} must be a nonnegative integer"
        )));
    }
    Ok(())
}
