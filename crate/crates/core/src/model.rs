//! Closed-form physics of the hybrid compress-and-forward chain.
//!
//! RRH `n` filters its received M-vector through an analog phase-shifter
//! matrix `F_n` (entries of modulus `1/sqrt(M)`) and a digital matrix
//! `V_n in C^{S x L}`, then quantizes the real and imaginary part of each of
//! the `L` output streams with `d_{n,l}` bits. Uniform scalar quantization of
//! a stream whose input power is `P` adds noise of variance `3 P / 4^d`.
//! The BBU decodes user `k` with a joint receive vector `u_k in C^{NL}`
//! (element `(n, l)` at position `n L + l`).
//!
//! Everything here is a pure function of immutable inputs; all rates use the
//! natural logarithm (convert to bits by dividing by `ln 2`).

use crate::scenario::ChannelSample;
use crate::{C64, CMat, CVec, Error, Result};
use rand::Rng;
use std::f64::consts::TAU;

/// Phase vector of the per-RRH analog filtering matrices.
///
/// Entry `(n, i, j)` (antenna `i`, RF chain `j` of RRH `n`) lives at index
/// `n M S + j M + i`, i.e. the per-RRH block is the column-major
/// vectorization of `F_n`. Every entry lies in the box `[0, 2 pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogPhases {
    phases: Vec<f64>,
    pub n_rrh: usize,
    pub n_antennas: usize,
    pub n_rf: usize,
}

impl AnalogPhases {
    pub fn new(phases: Vec<f64>, n_rrh: usize, n_antennas: usize, n_rf: usize) -> Result<Self> {
        if phases.len() != n_rrh * n_antennas * n_rf {
            return Err(Error::ShapeMismatch(format!(
                "phase vector has length {}, expected {}",
                phases.len(),
                n_rrh * n_antennas * n_rf
            )));
        }
        if phases.iter().any(|p| !(0.0..=TAU).contains(p)) {
            return Err(Error::InvalidArgument(
                "phase entries must lie in [0, 2 pi]".into(),
            ));
        }
        Ok(Self {
            phases,
            n_rrh,
            n_antennas,
            n_rf,
        })
    }

    /// Uniform random point of the feasible box.
    pub fn random<R: Rng>(n_rrh: usize, n_antennas: usize, n_rf: usize, rng: &mut R) -> Self {
        let phases = (0..n_rrh * n_antennas * n_rf)
            .map(|_| rng.gen::<f64>() * TAU)
            .collect();
        Self {
            phases,
            n_rrh,
            n_antennas,
            n_rf,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.phases
    }

    /// Phase block of RRH `n` (column-major vectorization of `F_n`).
    pub fn block(&self, n: usize) -> &[f64] {
        let sz = self.n_antennas * self.n_rf;
        &self.phases[n * sz..(n + 1) * sz]
    }

    /// All analog matrices `F_n`.
    pub fn matrices(&self) -> Vec<CMat> {
        (0..self.n_rrh)
            .map(|n| analog_matrix(self.block(n), self.n_antennas, self.n_rf))
            .collect()
    }

    /// Clamps a raw vector onto the box and wraps it as phases.
    pub fn clamped(phases: Vec<f64>, n_rrh: usize, n_antennas: usize, n_rf: usize) -> Self {
        let phases = phases.into_iter().map(|p| p.clamp(0.0, TAU)).collect();
        Self {
            phases,
            n_rrh,
            n_antennas,
            n_rf,
        }
    }
}

/// Builds `F_n` from its phase block: entry `(i, j) = exp(j theta_{i,j}) / sqrt(M)`.
pub fn analog_matrix(theta_block: &[f64], n_antennas: usize, n_rf: usize) -> CMat {
    debug_assert_eq!(theta_block.len(), n_antennas * n_rf);
    let scale = 1.0 / (n_antennas as f64).sqrt();
    CMat::from_fn(n_antennas, n_rf, |i, j| {
        C64::from_polar(scale, theta_block[j * n_antennas + i])
    })
}

/// Effective channel seen after the analog filter: `F_n^H H_n`.
pub fn effective_channel(f: &CMat, h: &CMat) -> Result<CMat> {
    if f.nrows() != h.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "analog filter has {} rows, channel has {}",
            f.nrows(),
            h.nrows()
        )));
    }
    Ok(f.adjoint() * h)
}

/// What the per-slot optimization sees of the channel: the per-RRH effective
/// channel `F_n^H H_n` and the filter Gram matrix `F_n^H F_n`.
///
/// Every downstream quantity (quantization noise, SINR, MSE) depends on the
/// analog filter and the raw channel only through these two objects, so the
/// same solver serves the hybrid scheme, the fully digital baseline (an
/// orthonormal basis in place of `F_n`) and the analog-only baseline.
#[derive(Debug, Clone)]
pub struct RxFrontEnd {
    /// `eff[n]` has shape `S_n x K`.
    pub eff: Vec<CMat>,
    /// `gram[n] = F_n^H F_n`, Hermitian PSD of shape `S_n x S_n`.
    pub gram: Vec<CMat>,
}

impl RxFrontEnd {
    pub fn from_phases(phases: &AnalogPhases, sample: &ChannelSample) -> Result<Self> {
        if sample.per_rrh.len() != phases.n_rrh {
            return Err(Error::ShapeMismatch(format!(
                "sample carries {} RRHs, phases carry {}",
                sample.per_rrh.len(),
                phases.n_rrh
            )));
        }
        let fs = phases.matrices();
        let eff = fs
            .iter()
            .zip(&sample.per_rrh)
            .map(|(f, h)| effective_channel(f, h))
            .collect::<Result<Vec<_>>>()?;
        let gram = fs.iter().map(|f| f.adjoint() * f).collect();
        Ok(Self { eff, gram })
    }

    /// Front end for explicit per-RRH filter matrices.
    pub fn from_filters(filters: &[CMat], sample: &ChannelSample) -> Result<Self> {
        let eff = filters
            .iter()
            .zip(&sample.per_rrh)
            .map(|(f, h)| effective_channel(f, h))
            .collect::<Result<Vec<_>>>()?;
        let gram = filters.iter().map(|f| f.adjoint() * f).collect();
        Ok(Self { eff, gram })
    }

    pub fn n_rrh(&self) -> usize {
        self.eff.len()
    }

    pub fn n_users(&self) -> usize {
        self.eff[0].ncols()
    }

    /// Filter output dimension of RRH `n`.
    pub fn n_rf(&self, n: usize) -> usize {
        self.eff[n].nrows()
    }
}

/// Short-term control variables for one time slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortTermVars {
    /// Transmit powers `p_k` in watts.
    pub powers: Vec<f64>,
    /// Digital filters `V_n in C^{S_n x L}`.
    pub digital: Vec<CMat>,
    /// Real-relaxed quantization bits `d_{n,l} >= 0`.
    pub bits: Vec<Vec<f64>>,
    /// Receive beamformers `u_k in C^{NL}`.
    pub rx: Vec<CVec>,
}

impl ShortTermVars {
    pub fn n_streams(&self) -> usize {
        self.digital[0].ncols()
    }
}

/// Quantizer model: the exact one is infinite at `d = 0` (the stream carries
/// no information), the relaxed one evaluates `3 P / 4^d` for any real `d >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    Exact,
    Relaxed,
}

/// Input power of stream `(n, l)`: `sum_k p_k |h_{n,k}^H v~_{n,l}|^2 + ||v~_{n,l}||^2`
/// with `v~_{n,l} = F_n v_{n,l}`, expressed through the front end.
fn stream_input_power(front: &RxFrontEnd, powers: &[f64], v_col: &CVec, n: usize) -> f64 {
    let eff = &front.eff[n];
    let mut acc = 0.0;
    for (k, &p) in powers.iter().enumerate() {
        let c = eff.column(k).dotc(v_col); // h_{n,k}^H F_n v = (F^H h)^H v
        acc += p * c.norm_sqr();
    }
    let gv = &front.gram[n] * v_col;
    acc + v_col.dotc(&gv).re
}

/// Per-stream quantization noise variances `q_{n,l}`.
pub fn quant_noise_variances(
    front: &RxFrontEnd,
    powers: &[f64],
    digital: &[CMat],
    bits: &[Vec<f64>],
    mode: QuantMode,
) -> Result<Vec<Vec<f64>>> {
    let mut q = Vec::with_capacity(front.n_rrh());
    for n in 0..front.n_rrh() {
        let l_streams = digital[n].ncols();
        let mut qn = Vec::with_capacity(l_streams);
        for l in 0..l_streams {
            let d = bits[n][l];
            if d < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "negative bit allocation d[{n}][{l}] = {d}"
                )));
            }
            if mode == QuantMode::Exact && d == 0.0 {
                qn.push(f64::INFINITY);
                continue;
            }
            let v_col = CVec::from_column_slice(digital[n].column(l).as_slice());
            let power = stream_input_power(front, powers, &v_col, n);
            qn.push(3.0 * 4f64.powf(-d) * power);
        }
        q.push(qn);
    }
    Ok(q)
}

/// Stacked receive-side channel of user `k`: `V~^H h_k in C^{NL}`.
pub fn stacked_rx_channel(front: &RxFrontEnd, digital: &[CMat], k: usize) -> CVec {
    let l_streams = digital[0].ncols();
    let mut out = CVec::zeros(front.n_rrh() * l_streams);
    for n in 0..front.n_rrh() {
        let block = digital[n].adjoint() * front.eff[n].column(k);
        out.rows_mut(n * l_streams, l_streams).copy_from(&block);
    }
    out
}

/// Per-RRH blocks of `V~^H V~ = diag(V_n^H F_n^H F_n V_n)`.
pub fn noise_gram_blocks(front: &RxFrontEnd, digital: &[CMat]) -> Vec<CMat> {
    (0..front.n_rrh())
        .map(|n| digital[n].adjoint() * &front.gram[n] * &digital[n])
        .collect()
}

/// `u^H (V~^H V~) u` for the filtered-noise power.
fn filtered_noise_power(noise_gram: &[CMat], u: &CVec) -> f64 {
    let l_streams = noise_gram[0].nrows();
    let mut acc = 0.0;
    for (n, g) in noise_gram.iter().enumerate() {
        let un = u.rows(n * l_streams, l_streams);
        let gu = g * un;
        acc += un.dotc(&gu).re;
    }
    acc
}

/// `u^H Q u` with the exclusion convention: infinite-variance dimensions on
/// which `u` is exactly zero contribute nothing; a nonzero weight on such a
/// dimension drives the result to infinity (the SINR then collapses to zero).
fn quant_penalty(q: &[Vec<f64>], u: &CVec) -> f64 {
    let l_streams = q[0].len();
    let mut acc = 0.0;
    for (n, qn) in q.iter().enumerate() {
        for (l, &qv) in qn.iter().enumerate() {
            let w = u[n * l_streams + l].norm_sqr();
            if qv.is_infinite() {
                if w > 0.0 {
                    return f64::INFINITY;
                }
            } else {
                acc += qv * w;
            }
        }
    }
    acc
}

/// Per-user SINR and achievable rate `log(1 + SINR)` (natural log).
pub fn sinr_and_rates(
    front: &RxFrontEnd,
    x: &ShortTermVars,
    q: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let n_users = front.n_users();
    let channels: Vec<CVec> = (0..n_users)
        .map(|k| stacked_rx_channel(front, &x.digital, k))
        .collect();
    let noise_gram = noise_gram_blocks(front, &x.digital);
    let mut sinr = vec![0.0; n_users];
    let mut rates = vec![0.0; n_users];
    for k in 0..n_users {
        let u = &x.rx[k];
        let signal = x.powers[k] * u.dotc(&channels[k]).norm_sqr();
        let mut denom = filtered_noise_power(&noise_gram, u) + quant_penalty(q, u);
        for l in 0..n_users {
            if l != k {
                denom += x.powers[l] * u.dotc(&channels[l]).norm_sqr();
            }
        }
        let s = if signal == 0.0 || denom.is_infinite() {
            0.0
        } else {
            signal / denom
        };
        sinr[k] = s;
        rates[k] = s.ln_1p();
    }
    (sinr, rates)
}

/// Per-user MSE `eta_k` of the joint linear receiver at transmit amplitudes
/// `beta` (so `p_k = beta_k^2`).
pub fn mse_per_user(
    front: &RxFrontEnd,
    beta: &[f64],
    digital: &[CMat],
    rx: &[CVec],
    q: &[Vec<f64>],
) -> Vec<f64> {
    let n_users = front.n_users();
    let channels: Vec<CVec> = (0..n_users)
        .map(|k| stacked_rx_channel(front, digital, k))
        .collect();
    let noise_gram = noise_gram_blocks(front, digital);
    (0..n_users)
        .map(|k| {
            let u = &rx[k];
            let direct = u.dotc(&channels[k]) * C64::new(beta[k], 0.0);
            let mut eta = (C64::new(1.0, 0.0) - direct).norm_sqr();
            for l in 0..n_users {
                if l != k {
                    eta += (u.dotc(&channels[l]) * C64::new(beta[l], 0.0)).norm_sqr();
                }
            }
            eta + filtered_noise_power(&noise_gram, u) + quant_penalty(q, u)
        })
        .collect()
}

/// SINR and rates straight from `(theta, x, H)`: builds the front end and the
/// quantization noise for the requested quantizer model, then evaluates.
pub fn sinr_and_rates_under_phases(
    phases: &AnalogPhases,
    x: &ShortTermVars,
    sample: &ChannelSample,
    mode: QuantMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let front = RxFrontEnd::from_phases(phases, sample)?;
    let q = quant_noise_variances(&front, &x.powers, &x.digital, &x.bits, mode)?;
    Ok(sinr_and_rates(&front, x, &q))
}

/// Network utility of the long-term average rate vector.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UtilitySpec {
    SumRate,
    /// `sum_k log(r_k + epsilon)`; epsilon avoids the singularity at zero rate.
    ProportionalFair { epsilon: f64 },
}

impl UtilitySpec {
    pub fn value(&self, avg_rates: &[f64]) -> f64 {
        match self {
            UtilitySpec::SumRate => avg_rates.iter().sum(),
            UtilitySpec::ProportionalFair { epsilon } => {
                avg_rates.iter().map(|r| (r + epsilon).ln()).sum()
            }
        }
    }

    pub fn gradient(&self, avg_rates: &[f64]) -> Vec<f64> {
        match self {
            UtilitySpec::SumRate => vec![1.0; avg_rates.len()],
            UtilitySpec::ProportionalFair { epsilon } => {
                avg_rates.iter().map(|r| 1.0 / (r + epsilon)).collect()
            }
        }
    }
}

/// Rounds a relaxed per-RRH bit allocation to integers that hit the fronthaul
/// budget `C_n / (2 B_W)` exactly.
///
/// Equivalent to the threshold rule `d_l = floor(d*_l)` if the fractional
/// part is at most `alpha_n`, else `ceil(d*_l)`, with `alpha_n` bisected so
/// the sum matches the budget; realized directly by ceiling the
/// `budget - sum(floor)` streams with the largest fractional parts (ties by
/// lower index), which is the smallest-alpha outcome.
pub fn round_bits(d_star: &[f64], capacity_bps: f64, bandwidth_hz: f64) -> Result<Vec<u32>> {
    let budget_f = capacity_bps / (2.0 * bandwidth_hz);
    let budget = budget_f.round();
    if (budget_f - budget).abs() > 1e-9 * budget_f.abs().max(1.0) || budget < 0.0 {
        return Err(Error::InfeasibleBudget(format!(
            "C/(2 B_W) = {budget_f} is not a nonnegative integer"
        )));
    }
    if d_star.iter().any(|&d| d < 0.0) {
        return Err(Error::InvalidArgument("negative relaxed bits".into()));
    }
    let sum: f64 = d_star.iter().sum();
    if (sum - budget).abs() > 1e-6 * budget.max(1.0) {
        return Err(Error::InfeasibleBudget(format!(
            "relaxed bits sum to {sum}, budget is {budget}"
        )));
    }
    let floors: Vec<u32> = d_star.iter().map(|&d| d.floor() as u32).collect();
    let floor_sum: u32 = floors.iter().sum();
    let to_ceil = (budget as i64 - floor_sum as i64).max(0) as usize;
    let mut order: Vec<usize> = (0..d_star.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = d_star[a] - d_star[a].floor();
        let fb = d_star[b] - d_star[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut out = floors;
    for &idx in order.iter().take(to_ceil) {
        out[idx] += 1;
    }
    let total: u32 = out.iter().sum();
    if total as f64 != budget {
        return Err(Error::InfeasibleBudget(format!(
            "rounding reached {total} bits, budget is {budget}"
        )));
    }
    Ok(out)
}
