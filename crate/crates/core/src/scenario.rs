//! Network geometry, channel statistics and the temporally correlated
//! channel process.
//!
//! The channel between RRH `n` and user `k` follows a geometry-based model
//! with `N_p` paths on a half-wavelength ULA:
//!
//! ```text
//! h_{n,k} = sum_i alpha_{n,k,i} a(phi_{n,k,i}),   alpha ~ CN(0, sigma^2_{n,k,i})
//! ```
//!
//! Path angles are the geometric bearing plus Laplacian offsets and stay
//! fixed for the whole statistics-coherence run; only the complex path gains
//! evolve, as a first-order autoregressive process whose one-lag correlation
//! is the Jakes value `J0(2 pi f_d T_slot)`. Channel gains are normalized by
//! the receiver noise power at statistics-generation time, so the additive
//! noise is exactly `CN(0, I)` everywhere downstream.

use crate::{C64, CMat, CVec, Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use std::collections::VecDeque;
use std::f64::consts::PI;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Resolved physical scenario in SI units and linear scales.
///
/// This is what the simulation consumes; the harness builds it from the
/// user-facing configuration (dBm, km/h, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n_rrh: usize,
    pub n_users: usize,
    /// Antennas per RRH (M).
    pub n_antennas: usize,
    /// RF chains per RRH (S).
    pub n_rf: usize,
    /// Paths per (RRH, user) pair.
    pub n_paths: usize,
    pub cell_radius_m: f64,
    pub angle_spread_rad: f64,
    /// Receiver noise power in watts (PSD x bandwidth); used to normalize gains.
    pub noise_power_w: f64,
    /// Per-user transmit power cap P_k in watts (uniform across users).
    pub tx_power_w: f64,
    /// Maximum Doppler frequency f_d = v f_c / c in Hz.
    pub doppler_hz: f64,
    pub slot_duration_s: f64,
    pub slots_per_frame: usize,
    pub n_frames: usize,
    /// Full-CSI acquisition delay in slots.
    pub full_csi_delay_slots: usize,
    /// Effective-CSI acquisition delay in slots (scales with S/M).
    pub eff_csi_delay_slots: usize,
    /// Per-RRH fronthaul capacity in bits per second.
    pub fronthaul_capacity_bps: f64,
    pub bandwidth_hz: f64,
}

impl Scenario {
    /// Streams after digital filtering: L = min(K, S).
    pub fn n_streams(&self) -> usize {
        self.n_users.min(self.n_rf)
    }

    /// Per-RRH quantization-bit budget C_n / (2 B_W).
    pub fn fronthaul_bit_budget(&self) -> f64 {
        self.fronthaul_capacity_bps / (2.0 * self.bandwidth_hz)
    }

    /// One-slot autoregressive correlation of the path gains.
    pub fn slot_correlation(&self) -> f64 {
        jakes_correlation(self.doppler_hz, self.slot_duration_s)
    }
}

/// RRH and user placement inside the cell disc.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub rrh_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    pub cell_radius_m: f64,
}

impl Topology {
    /// Distance in meters between RRH `n` and user `k`.
    pub fn distance(&self, n: usize, k: usize) -> f64 {
        let r = self.rrh_positions[n];
        let u = self.user_positions[k];
        ((r[0] - u[0]).powi(2) + (r[1] - u[1]).powi(2)).sqrt()
    }

    /// Bearing from RRH `n` to user `k`, in radians.
    pub fn bearing(&self, n: usize, k: usize) -> f64 {
        let r = self.rrh_positions[n];
        let u = self.user_positions[k];
        (u[1] - r[1]).atan2(u[0] - r[0])
    }
}

/// Places `n_rrh` RRHs equally spaced on a concentric circle of radius
/// `cell_radius / 2` and drops `n_users` users uniformly in the cell disc.
pub fn build_topology<R: Rng>(
    n_rrh: usize,
    n_users: usize,
    cell_radius_m: f64,
    rng: &mut R,
) -> Result<Topology> {
    if n_rrh == 0 || n_users == 0 {
        return Err(Error::InvalidArgument(
            "need at least one RRH and one user".into(),
        ));
    }
    if cell_radius_m <= 0.0 {
        return Err(Error::InvalidArgument("cell radius must be positive".into()));
    }
    let ring = cell_radius_m / 2.0;
    let rrh_positions = (0..n_rrh)
        .map(|n| {
            let ang = 2.0 * PI * n as f64 / n_rrh as f64;
            [ring * ang.cos(), ring * ang.sin()]
        })
        .collect();
    let user_positions = (0..n_users)
        .map(|_| {
            // Uniform over the disc: radius via sqrt of a uniform draw.
            let r = cell_radius_m * rng.gen::<f64>().sqrt();
            let ang = 2.0 * PI * rng.gen::<f64>();
            [r * ang.cos(), r * ang.sin()]
        })
        .collect();
    Ok(Topology {
        rrh_positions,
        user_positions,
        cell_radius_m,
    })
}

/// Distance-dependent pathloss `30.6 + 36.7 log10(dist)` in dB.
pub fn pathloss_db(dist_m: f64) -> Result<f64> {
    if dist_m <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "distance must be positive, got {dist_m}"
        )));
    }
    Ok(30.6 + 36.7 * dist_m.log10())
}

/// Array response of a half-wavelength ULA: element `m` is `exp(j pi m sin(phi))`.
pub fn array_response(phi: f64, n_antennas: usize) -> CVec {
    CVec::from_fn(n_antennas, |m, _| {
        C64::from_polar(1.0, PI * m as f64 * phi.sin())
    })
}

/// Jakes temporal correlation `J0(2 pi f_d lag)`.
pub fn jakes_correlation(doppler_hz: f64, lag_s: f64) -> f64 {
    libm::j0(2.0 * PI * doppler_hz * lag_s)
}

/// Jakes correlation from raw mobility parameters.
pub fn doppler_correlation(speed_mps: f64, carrier_hz: f64, lag_s: f64) -> f64 {
    jakes_correlation(speed_mps * carrier_hz / SPEED_OF_LIGHT, lag_s)
}

/// Per-(RRH, user) path angles, path variances and normalized channel gains.
///
/// Fixed over a statistics-coherence run. Variances satisfy
/// `sum_i sigma^2_{n,k,i} = G_{n,k}` exactly, where `G_{n,k}` is the linear
/// pathloss gain divided by the noise power.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStatistics {
    /// `angles[n][k][i]` in radians.
    pub angles: Vec<Vec<Vec<f64>>>,
    /// `variances[n][k][i]`, linear power relative to unit noise.
    pub variances: Vec<Vec<Vec<f64>>>,
    /// `gains[n][k] = sum_i variances[n][k][i]`.
    pub gains: Vec<Vec<f64>>,
    pub n_paths: usize,
}

/// Draws one Laplacian offset with the given standard deviation.
fn laplacian<R: Rng>(std_dev: f64, rng: &mut R) -> f64 {
    let scale = std_dev / std::f64::consts::SQRT_2;
    let u: f64 = rng.gen::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Draws path angles (bearing + Laplacian offsets) and exponential path
/// variances rescaled so they sum to the noise-normalized pathloss gain.
pub fn draw_statistics<R: Rng>(
    topology: &Topology,
    n_paths: usize,
    angle_spread_rad: f64,
    noise_power_w: f64,
    rng: &mut R,
) -> Result<ChannelStatistics> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    if noise_power_w <= 0.0 {
        return Err(Error::InvalidArgument("noise power must be positive".into()));
    }
    let n_rrh = topology.rrh_positions.len();
    let n_users = topology.user_positions.len();
    let mut angles = vec![vec![vec![0.0; n_paths]; n_users]; n_rrh];
    let mut variances = vec![vec![vec![0.0; n_paths]; n_users]; n_rrh];
    let mut gains = vec![vec![0.0; n_users]; n_rrh];
    for n in 0..n_rrh {
        for k in 0..n_users {
            let mean_angle = topology.bearing(n, k);
            let pl = pathloss_db(topology.distance(n, k))?;
            let gain = 10f64.powf(-pl / 10.0) / noise_power_w;
            gains[n][k] = gain;
            let mut draws = vec![0.0; n_paths];
            let mut total = 0.0;
            for i in 0..n_paths {
                angles[n][k][i] = mean_angle + laplacian(angle_spread_rad, rng);
                let e: f64 = Exp1.sample(rng);
                draws[i] = e;
                total += e;
            }
            for i in 0..n_paths {
                // Rescale so the per-pair variances sum exactly to the gain.
                variances[n][k][i] = if total > 0.0 {
                    gain * draws[i] / total
                } else {
                    gain / n_paths as f64
                };
            }
        }
    }
    Ok(ChannelStatistics {
        angles,
        variances,
        gains,
        n_paths,
    })
}

/// One channel realization: the per-RRH `M x K` matrices for a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    /// `per_rrh[n]` has shape `M x K`.
    pub per_rrh: Vec<CMat>,
    pub slot: usize,
}

impl ChannelSample {
    /// Order-insensitive 64-bit fingerprint of the sample, used to verify
    /// that paired schemes consume identical channel trajectories.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64; // FNV-1a
        let mut eat = |bits: u64| {
            for b in bits.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.slot as u64);
        for m in &self.per_rrh {
            for z in m.iter() {
                eat(z.re.to_bits());
                eat(z.im.to_bits());
            }
        }
        h
    }
}

/// Temporally correlated channel process with a bounded history for
/// delayed-CSI views.
///
/// Single-writer: [`ChannelProcess::advance`] mutates the path gains and
/// appends the assembled sample to the ring. Samples and statistics are
/// immutable values and safe to share.
#[derive(Debug, Clone)]
pub struct ChannelProcess {
    stats: ChannelStatistics,
    /// Cached steering vectors `a(phi_{n,k,i})`, fixed with the angles.
    steering: Vec<Vec<Vec<CVec>>>,
    /// Complex path gains `alpha_{n,k,i}`.
    gains: Vec<Vec<Vec<C64>>>,
    /// One-slot AR coefficient `rho_d` in [-1, 1].
    slot_corr: f64,
    history: VecDeque<ChannelSample>,
    history_depth: usize,
    next_slot: usize,
}

fn sample_cn<R: Rng>(variance: f64, rng: &mut R) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

impl ChannelProcess {
    /// Creates the process in its stationary distribution.
    ///
    /// `history_depth` must cover the largest configured CSI delay; the ring
    /// keeps `history_depth + 1` samples so `delayed_view(history_depth)` is
    /// always available once enough slots exist.
    pub fn new<R: Rng>(
        stats: ChannelStatistics,
        n_antennas: usize,
        slot_corr: f64,
        history_depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !(-1.0..=1.0).contains(&slot_corr) {
            return Err(Error::InvalidArgument(format!(
                "slot correlation must lie in [-1, 1], got {slot_corr}"
            )));
        }
        let n_rrh = stats.angles.len();
        let n_users = stats.angles.first().map_or(0, |a| a.len());
        let steering = (0..n_rrh)
            .map(|n| {
                (0..n_users)
                    .map(|k| {
                        (0..stats.n_paths)
                            .map(|i| array_response(stats.angles[n][k][i], n_antennas))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let gains = (0..n_rrh)
            .map(|n| {
                (0..n_users)
                    .map(|k| {
                        (0..stats.n_paths)
                            .map(|i| sample_cn(stats.variances[n][k][i], rng))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            stats,
            steering,
            gains,
            slot_corr,
            history: VecDeque::new(),
            history_depth,
            next_slot: 0,
        })
    }

    pub fn statistics(&self) -> &ChannelStatistics {
        &self.stats
    }

    /// Evolves every path gain one slot and returns the assembled sample.
    ///
    /// `alpha <- rho alpha + sqrt(1 - rho^2) CN(0, sigma^2)`, which preserves
    /// the stationary marginal `CN(0, sigma^2)`.
    pub fn advance<R: Rng>(&mut self, rng: &mut R) -> ChannelSample {
        let rho = self.slot_corr;
        let innov = (1.0 - rho * rho).max(0.0).sqrt();
        let n_rrh = self.gains.len();
        let n_users = self.gains.first().map_or(0, |g| g.len());
        for n in 0..n_rrh {
            for k in 0..n_users {
                for i in 0..self.stats.n_paths {
                    let w = sample_cn(self.stats.variances[n][k][i], rng);
                    self.gains[n][k][i] = rho * self.gains[n][k][i] + innov * w;
                }
            }
        }
        let sample = self.assemble(self.next_slot);
        self.next_slot += 1;
        if self.history.len() > self.history_depth {
            self.history.pop_front();
        }
        self.history.push_back(sample.clone());
        sample
    }

    fn assemble(&self, slot: usize) -> ChannelSample {
        let n_rrh = self.gains.len();
        let n_users = self.gains.first().map_or(0, |g| g.len());
        let m = self.steering[0][0][0].len();
        let per_rrh = (0..n_rrh)
            .map(|n| {
                let mut h = CMat::zeros(m, n_users);
                for k in 0..n_users {
                    let mut col = CVec::zeros(m);
                    for i in 0..self.stats.n_paths {
                        col.axpy(self.gains[n][k][i], &self.steering[n][k][i], C64::new(1.0, 0.0));
                    }
                    h.set_column(k, &col);
                }
                h
            })
            .collect();
        ChannelSample { per_rrh, slot }
    }

    /// Returns the sample from `delay_slots` ago (0 = latest `advance` output).
    pub fn delayed_view(&self, delay_slots: usize) -> Result<&ChannelSample> {
        let len = self.history.len();
        if delay_slots + 1 > len {
            return Err(Error::InsufficientHistory {
                requested: delay_slots,
                available: len.saturating_sub(1),
            });
        }
        Ok(&self.history[len - 1 - delay_slots])
    }
}

/// Effective-CSI delay in whole slots: `round(S/M * tau / T_slot)`, min 0.
pub fn effective_delay_slots(
    n_rf: usize,
    n_antennas: usize,
    full_delay_s: f64,
    slot_s: f64,
) -> usize {
    let frac = n_rf as f64 / n_antennas as f64;
    ((frac * full_delay_s / slot_s).round().max(0.0)) as usize
}

/// Full-CSI delay in whole slots: `round(tau / T_slot)`, min 0.
pub fn full_delay_slots(full_delay_s: f64, slot_s: f64) -> usize {
    ((full_delay_s / slot_s).round().max(0.0)) as usize
}
