//! Per-slot block-coordinate WMMSE solver for the weighted sum-rate
//! subproblem.
//!
//! The weighted sum-rate maximization over the short-term variables
//! `(p, V, d, u)` is handled through its weighted-MMSE reformulation
//!
//! ```text
//! min_{beta, v, d, u, w}  sum_k mu_k (w_k eta_k - log w_k)
//! ```
//!
//! with `p_k = beta_k^2`, solved by cyclic exact minimization over the five
//! blocks. Each block has a closed form: `u` is the MMSE receiver, `w` the
//! inverse MSE, `beta` a scalar quadratic with an optional power-cap
//! multiplier found by bisection, `v` a proximally regularized linear solve,
//! and `d` a per-RRH water-filling with the fronthaul multiplier found by
//! bisection. Every update leaves the objective non-increasing, which the
//! tests assert on random instances.

use crate::model::{
    mse_per_user, noise_gram_blocks, quant_noise_variances, sinr_and_rates, stacked_rx_channel,
    QuantMode, RxFrontEnd, ShortTermVars,
};
use crate::{C64, CMat, CVec, Error, Result};

const BISECTION_ITERS: usize = 60;
/// Trace-scaled ridge added before the linear solves.
const SOLVE_RIDGE: f64 = 1e-12;

/// One slot's weighted sum-rate subproblem.
#[derive(Debug, Clone)]
pub struct ShortTermProblem {
    pub front: RxFrontEnd,
    /// Positive rate weights `mu_k`.
    pub mu: Vec<f64>,
    /// Per-user power caps `P_k` in watts.
    pub power_caps: Vec<f64>,
    /// Per-RRH quantization-bit budgets `C_n / (2 B_W)`.
    pub bit_budgets: Vec<f64>,
    /// Proximal regularization weight for the digital-filter block.
    pub proximal: f64,
    /// Block-coordinate rounds `J` (0 = initialization plus one `u, w` pass).
    pub iters: usize,
}

impl ShortTermProblem {
    pub fn n_users(&self) -> usize {
        self.front.n_users()
    }

    pub fn n_streams(&self) -> usize {
        self.n_users().min((0..self.front.n_rrh()).map(|n| self.front.n_rf(n)).min().unwrap())
    }
}

/// Solver iterate: the short-term variables plus the WMMSE auxiliaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// Real transmit amplitudes with `p_k = beta_k^2`.
    pub beta: Vec<f64>,
    /// Positive MSE weights `w_k`.
    pub weights: Vec<f64>,
    pub digital: Vec<CMat>,
    pub bits: Vec<Vec<f64>>,
    pub rx: Vec<CVec>,
}

impl SolverState {
    pub fn vars(&self) -> ShortTermVars {
        ShortTermVars {
            powers: self.beta.iter().map(|b| b * b).collect(),
            digital: self.digital.clone(),
            bits: self.bits.clone(),
            rx: self.rx.clone(),
        }
    }

    fn powers(&self) -> Vec<f64> {
        self.beta.iter().map(|b| b * b).collect()
    }

    fn relaxed_q(&self, front: &RxFrontEnd) -> Result<Vec<Vec<f64>>> {
        quant_noise_variances(
            front,
            &self.powers(),
            &self.digital,
            &self.bits,
            QuantMode::Relaxed,
        )
    }
}

/// Top-`l` unit eigenvectors of a Hermitian PSD matrix, eigenvalues
/// descending, ties broken by index, each column rotated so its first
/// non-negligible entry is real positive.
pub fn leading_eigenvectors(mat: &CMat, l: usize) -> Result<CMat> {
    let dim = mat.nrows();
    let se = mat.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        se.eigenvalues[b]
            .partial_cmp(&se.eigenvalues[a])
            .ok_or(())
            .map_err(|_| ())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    if se.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigendecomposition produced non-finite values".into()));
    }
    let mut out = CMat::zeros(dim, l);
    for (j, &idx) in order.iter().take(l).enumerate() {
        let mut col = se.eigenvectors.column(idx).clone_owned();
        if let Some(first) = col.iter().find(|z| z.norm() > 1e-9) {
            let rot = first.conj() / first.norm();
            col *= rot;
        }
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Initialization: full power, equal bits, eigenvector digital filters.
///
/// `V_n` spans the top-`L` eigenvectors of the effective-channel Gram
/// `(F^H H)(F^H H)^H`; `u` and `w` are left for the first receiver pass.
pub fn init_short_term(problem: &ShortTermProblem) -> Result<SolverState> {
    let l_streams = problem.n_streams();
    let n_rrh = problem.front.n_rrh();
    let beta: Vec<f64> = problem.power_caps.iter().map(|p| p.sqrt()).collect();
    let bits: Vec<Vec<f64>> = (0..n_rrh)
        .map(|n| vec![problem.bit_budgets[n] / l_streams as f64; l_streams])
        .collect();
    let digital = (0..n_rrh)
        .map(|n| {
            let e = &problem.front.eff[n];
            leading_eigenvectors(&(e * e.adjoint()), l_streams)
        })
        .collect::<Result<Vec<_>>>()?;
    let rx = vec![CVec::zeros(n_rrh * l_streams); problem.n_users()];
    Ok(SolverState {
        beta,
        weights: vec![1.0; problem.n_users()],
        digital,
        bits,
        rx,
    })
}

/// MMSE receivers for given amplitudes and quantization noise.
///
/// Infinite-variance dimensions (exact model with `d = 0`) are excluded from
/// the solve and forced to zero weight in the output.
pub fn mmse_receivers(
    front: &RxFrontEnd,
    digital: &[CMat],
    amplitudes: &[f64],
    q: &[Vec<f64>],
) -> Result<Vec<CVec>> {
    let n_users = front.n_users();
    let l_streams = digital[0].ncols();
    let dim = front.n_rrh() * l_streams;
    let active: Vec<usize> = (0..dim)
        .filter(|&i| q[i / l_streams][i % l_streams].is_finite())
        .collect();
    if active.is_empty() {
        return Ok(vec![CVec::zeros(dim); n_users]);
    }
    let channels: Vec<CVec> = (0..n_users)
        .map(|k| stacked_rx_channel(front, digital, k))
        .collect();
    let noise_gram = noise_gram_blocks(front, digital);
    let na = active.len();
    let mut a = CMat::zeros(na, na);
    for (ri, &i) in active.iter().enumerate() {
        for (ci, &j) in active.iter().enumerate() {
            let mut val = C64::new(0.0, 0.0);
            for (k, amp) in amplitudes.iter().enumerate() {
                val += channels[k][i] * channels[k][j].conj() * (amp * amp);
            }
            if i / l_streams == j / l_streams {
                val += noise_gram[i / l_streams][(i % l_streams, j % l_streams)];
            }
            if i == j {
                val += C64::new(q[i / l_streams][i % l_streams], 0.0);
            }
            a[(ri, ci)] = val;
        }
    }
    let ridge = SOLVE_RIDGE * a.trace().re.max(1.0) / na as f64;
    for i in 0..na {
        a[(i, i)] += C64::new(ridge, 0.0);
    }
    let mut rhs = CMat::zeros(na, n_users);
    for k in 0..n_users {
        for (ri, &i) in active.iter().enumerate() {
            rhs[(ri, k)] = channels[k][i] * amplitudes[k];
        }
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("MMSE receiver solve failed".into()))?;
    let mut out = vec![CVec::zeros(dim); n_users];
    for k in 0..n_users {
        for (ri, &i) in active.iter().enumerate() {
            out[k][i] = sol[(ri, k)];
        }
    }
    Ok(out)
}

/// Receiver block: the MMSE solution for the current `(beta, v, d)`.
pub fn update_u(problem: &ShortTermProblem, state: &mut SolverState) -> Result<()> {
    let q = state.relaxed_q(&problem.front)?;
    state.rx = mmse_receivers(&problem.front, &state.digital, &state.beta, &q)?;
    Ok(())
}

/// Weight block: `w_k = (1 - u_k^H V~^H h_k beta_k)^{-1}`.
///
/// Requires the receivers to be fresh MMSE solutions, which makes the
/// denominator the (real, positive) MSE of user `k`.
pub fn update_w(problem: &ShortTermProblem, state: &mut SolverState) -> Result<()> {
    for k in 0..problem.n_users() {
        let c = stacked_rx_channel(&problem.front, &state.digital, k);
        let z = C64::new(1.0, 0.0) - state.rx[k].dotc(&c) * state.beta[k];
        if z.re <= 0.0 {
            return Err(Error::Numerical(format!(
                "weight update found nonpositive MSE denominator {z} for user {k}; receiver is stale"
            )));
        }
        state.weights[k] = 1.0 / z.re;
    }
    Ok(())
}

/// Amplitude block: the exact minimizer of the (convex, scalar-quadratic)
/// subproblem per user, with the power-cap multiplier bisected when the
/// unconstrained optimum would exceed `P_k`.
pub fn update_beta(problem: &ShortTermProblem, state: &mut SolverState) -> Result<()> {
    let n_users = problem.n_users();
    let l_streams = problem.n_streams();
    let front = &problem.front;
    let channels: Vec<CVec> = (0..n_users)
        .map(|k| stacked_rx_channel(front, &state.digital, k))
        .collect();
    let mw: Vec<f64> = problem
        .mu
        .iter()
        .zip(&state.weights)
        .map(|(m, w)| m * w)
        .collect();
    // Quantizer sensitivity of stream (n, l) to user k's power:
    // 3/4^d |h_{n,k}^H v~_{n,l}|^2, weighted by every receiver's energy there.
    let mut quant_coef = vec![0.0; n_users];
    for n in 0..front.n_rrh() {
        for l in 0..l_streams {
            let v_col = CVec::from_column_slice(state.digital[n].column(l).as_slice());
            let scale = 3.0 * 4f64.powf(-state.bits[n][l]);
            let wsum: f64 = (0..n_users)
                .map(|j| mw[j] * state.rx[j][n * l_streams + l].norm_sqr())
                .sum();
            for k in 0..n_users {
                let c = front.eff[n].column(k).dotc(&v_col);
                quant_coef[k] += scale * wsum * c.norm_sqr();
            }
        }
    }
    for k in 0..n_users {
        let num = mw[k] * state.rx[k].dotc(&channels[k]).re;
        let denom0: f64 = (0..n_users)
            .map(|j| mw[j] * state.rx[j].dotc(&channels[k]).norm_sqr())
            .sum::<f64>()
            + quant_coef[k];
        if num == 0.0 {
            state.beta[k] = 0.0;
            continue;
        }
        let cap = problem.power_caps[k];
        let unconstrained = num / denom0;
        if unconstrained * unconstrained <= cap {
            state.beta[k] = unconstrained;
        } else {
            // beta(lambda) = num / (denom0 + lambda) decreases in lambda.
            let mut hi = 1.0f64.max(denom0);
            while (num / (denom0 + hi)).powi(2) >= cap {
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::Numerical("power multiplier bracket diverged".into()));
                }
            }
            let mut lo = 0.0;
            for _ in 0..BISECTION_ITERS {
                let mid = 0.5 * (lo + hi);
                if (num / (denom0 + mid)).powi(2) > cap {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            state.beta[k] = num / (denom0 + hi);
        }
        debug_assert!(state.beta[k].powi(2) <= cap + 1e-12);
    }
    Ok(())
}

/// Offsets of the per-(RRH, stream) filter columns inside the stacked
/// digital-filter vector.
fn digital_offsets(front: &RxFrontEnd, l_streams: usize) -> Vec<usize> {
    let n_rrh = front.n_rrh();
    let mut v = Vec::with_capacity(n_rrh + 1);
    let mut acc = 0;
    for n in 0..n_rrh {
        v.push(acc);
        acc += front.n_rf(n) * l_streams;
    }
    v.push(acc);
    v
}

/// Stacks the digital filter columns into one vector.
pub fn stack_digital(front: &RxFrontEnd, digital: &[CMat], l_streams: usize) -> CVec {
    let offsets = digital_offsets(front, l_streams);
    let mut out = CVec::zeros(offsets[front.n_rrh()]);
    for n in 0..front.n_rrh() {
        let sn = front.n_rf(n);
        for l in 0..l_streams {
            out.rows_mut(offsets[n] + l * sn, sn)
                .copy_from(&digital[n].column(l));
        }
    }
    out
}

/// First-order system of the digital-filter block: the Hermitian quadratic
/// coefficient `B`, the linear term `J` and the stacked current filter, so
/// that the proximal update solves `(B + eps I) v = J + eps v_prev` and a
/// solution satisfies the residual `B v - J + eps (v - v_prev) = 0`.
pub fn digital_filter_system(
    problem: &ShortTermProblem,
    state: &SolverState,
) -> (CMat, CVec, CVec) {
    let front = &problem.front;
    let n_rrh = front.n_rrh();
    let n_users = problem.n_users();
    let l_streams = problem.n_streams();
    let powers = state.powers();
    let mw: Vec<f64> = problem
        .mu
        .iter()
        .zip(&state.weights)
        .map(|(m, w)| m * w)
        .collect();

    // Power-weighted effective-channel cross products
    // E_{n,n'} = sum_k p_k (F_n^H h_{n,k})(F_n'^H h_{n',k})^H.
    let cross: Vec<Vec<CMat>> = (0..n_rrh)
        .map(|n| {
            (0..n_rrh)
                .map(|np| {
                    let mut e = CMat::zeros(front.n_rf(n), front.n_rf(np));
                    for (k, &p) in powers.iter().enumerate() {
                        let cn = front.eff[n].column(k);
                        let cnp = front.eff[np].column(k);
                        e += (cn * cnp.adjoint()).map(|z| z * p);
                    }
                    e
                })
                .collect()
        })
        .collect();

    let offsets = digital_offsets(front, l_streams);
    let dim = offsets[n_rrh];
    let mut b = CMat::zeros(dim, dim);
    let mut rhs = CVec::zeros(dim);
    for n in 0..n_rrh {
        let sn = front.n_rf(n);
        for l in 0..l_streams {
            let row0 = offsets[n] + l * sn;
            // Right-hand side J_{n,l} = sum_k mu_k w_k beta_k u*_{k,n,l} F_n^H h_{n,k}.
            let mut j_vec = CVec::zeros(sn);
            for k in 0..n_users {
                let coef = state.rx[k][n * l_streams + l].conj() * (mw[k] * state.beta[k]);
                j_vec += front.eff[n].column(k) * coef;
            }
            rhs.rows_mut(row0, sn).copy_from(&j_vec);
            for np in 0..n_rrh {
                let snp = front.n_rf(np);
                for lp in 0..l_streams {
                    let col0 = offsets[np] + lp * snp;
                    let coupling: C64 = (0..n_users)
                        .map(|k| {
                            state.rx[k][n * l_streams + l].conj()
                                * state.rx[k][np * l_streams + lp]
                                * mw[k]
                        })
                        .sum();
                    let mut block = cross[n][np].map(|z| z * coupling);
                    if n == np {
                        block += front.gram[n].map(|z| z * coupling);
                    }
                    if n == np && l == lp {
                        let qscale: f64 = 3.0 * 4f64.powf(-state.bits[n][l])
                            * (0..n_users)
                                .map(|k| mw[k] * state.rx[k][n * l_streams + l].norm_sqr())
                                .sum::<f64>();
                        block += (&cross[n][n] + &front.gram[n]).map(|z| z * qscale);
                    }
                    b.view_mut((row0, col0), (sn, snp)).copy_from(&block);
                }
            }
        }
    }
    let prev = stack_digital(front, &state.digital, l_streams);
    (b, rhs, prev)
}

/// Digital-filter block: exact minimizer of the proximally regularized
/// quadratic, by one Hermitian linear solve over the stacked filter columns
/// followed by iterative refinement against the unregularized system.
pub fn update_v(problem: &ShortTermProblem, state: &mut SolverState) -> Result<()> {
    let front = &problem.front;
    let n_rrh = front.n_rrh();
    let l_streams = problem.n_streams();
    let offsets = digital_offsets(front, l_streams);
    let (b, rhs, prev) = digital_filter_system(problem, state);
    let dim = b.nrows();
    let eps = problem.proximal;
    let mut full = b;
    for i in 0..dim {
        full[(i, i)] += C64::new(eps, 0.0);
    }
    let ridge = SOLVE_RIDGE * full.trace().re.max(1.0) / dim as f64;
    let mut reg = full.clone();
    for i in 0..dim {
        reg[(i, i)] += C64::new(ridge, 0.0);
    }
    let lu = reg.lu();
    let target = rhs + prev.map(|z| z * eps);
    let mut sol = lu
        .solve(&target)
        .ok_or_else(|| Error::Numerical("digital filter solve failed".into()))?;
    for _ in 0..2 {
        let residual = &target - &full * &sol;
        if residual.norm() <= 1e-13 * target.norm().max(1.0) {
            break;
        }
        let correction = lu
            .solve(&residual)
            .ok_or_else(|| Error::Numerical("digital filter refinement failed".into()))?;
        sol += correction;
    }
    for n in 0..n_rrh {
        let sn = front.n_rf(n);
        for l in 0..l_streams {
            state.digital[n]
                .column_mut(l)
                .copy_from(&sol.rows(offsets[n] + l * sn, sn));
        }
    }
    Ok(())
}

/// Bit block: per-RRH water-filling
/// `d_{n,l}(lambda) = [log4(A_{n,l} ln 4 / lambda)]^+`, with `lambda`
/// bisected so the bits meet the fronthaul budget with equality.
pub fn update_d(problem: &ShortTermProblem, state: &mut SolverState) -> Result<()> {
    let front = &problem.front;
    let n_users = problem.n_users();
    let l_streams = problem.n_streams();
    let powers = state.powers();
    let mw: Vec<f64> = problem
        .mu
        .iter()
        .zip(&state.weights)
        .map(|(m, w)| m * w)
        .collect();
    for n in 0..front.n_rrh() {
        let budget = problem.bit_budgets[n];
        if budget <= 0.0 {
            state.bits[n] = vec![0.0; l_streams];
            continue;
        }
        // A_{n,l} = sum_k mu_k w_k * 3 |u_{k,n,l}|^2 * (stream input power).
        let mut coeffs = vec![0.0; l_streams];
        for l in 0..l_streams {
            let v_col = CVec::from_column_slice(state.digital[n].column(l).as_slice());
            let mut input = v_col.dotc(&(&front.gram[n] * &v_col)).re;
            for (k, &p) in powers.iter().enumerate() {
                input += p * front.eff[n].column(k).dotc(&v_col).norm_sqr();
            }
            let usum: f64 = (0..n_users)
                .map(|k| mw[k] * state.rx[k][n * l_streams + l].norm_sqr())
                .sum();
            coeffs[l] = 3.0 * usum * input;
        }
        if coeffs.iter().all(|&a| a <= 0.0) {
            // No stream is visible to any receiver; split the budget evenly
            // so the fronthaul equality still holds.
            state.bits[n] = vec![budget / l_streams as f64; l_streams];
            continue;
        }
        let alloc = |lam: f64| -> Vec<f64> {
            coeffs
                .iter()
                .map(|&a| {
                    if a <= 0.0 {
                        0.0
                    } else {
                        ((a * 4f64.ln() / lam).ln() / 4f64.ln()).max(0.0)
                    }
                })
                .collect()
        };
        let total = |lam: f64| -> f64 { alloc(lam).iter().sum() };
        let mut lo = 1.0;
        let mut hi = 1.0;
        while total(lo) < budget {
            lo *= 0.5;
            if lo < 1e-300 {
                break;
            }
        }
        while total(hi) > budget {
            hi *= 2.0;
            if hi > 1e300 {
                break;
            }
        }
        for _ in 0..BISECTION_ITERS {
            let mid = (lo * hi).sqrt();
            if total(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lam = (lo * hi).sqrt();
        let mut bits = alloc(lam);
        // Close any residual gap on the largest stream so the budget is met
        // with equality to machine precision.
        let gap = budget - bits.iter().sum::<f64>();
        if gap.abs() > 0.0 {
            let imax = (0..l_streams)
                .max_by(|&a, &b| bits[a].partial_cmp(&bits[b]).unwrap())
                .unwrap();
            bits[imax] = (bits[imax] + gap).max(0.0);
        }
        state.bits[n] = bits;
        let sum: f64 = state.bits[n].iter().sum();
        assert!(
            (sum - budget).abs() <= 1e-6 * budget.max(1.0),
            "fronthaul equality violated: {sum} vs {budget}"
        );
    }
    Ok(())
}

/// The WMMSE objective `sum_k mu_k (w_k eta_k - log w_k)` at the current iterate.
pub fn wmmse_objective(problem: &ShortTermProblem, state: &SolverState) -> Result<f64> {
    let q = state.relaxed_q(&problem.front)?;
    let eta = mse_per_user(
        &problem.front,
        &state.beta,
        &state.digital,
        &state.rx,
        &q,
    );
    Ok(problem
        .mu
        .iter()
        .zip(state.weights.iter().zip(&eta))
        .map(|(mu, (w, e))| mu * (w * e - w.ln()))
        .sum())
}

/// Instantaneous rates of the current iterate under the relaxed quantizer.
pub fn rates_of(problem: &ShortTermProblem, state: &SolverState) -> Result<Vec<f64>> {
    let q = state.relaxed_q(&problem.front)?;
    Ok(sinr_and_rates(&problem.front, &state.vars(), &q).1)
}

/// Runs the block-coordinate algorithm: initialization followed by `J`
/// rounds of `(u, w, beta, v, d)`; `J = 0` returns the initialization with
/// one MMSE receiver/weight pass appended.
pub fn run_short_term(problem: &ShortTermProblem) -> Result<(ShortTermVars, SolverState)> {
    let mut state = init_short_term(problem)?;
    if problem.iters == 0 {
        update_u(problem, &mut state)?;
        update_w(problem, &mut state)?;
    } else {
        for _ in 0..problem.iters {
            update_u(problem, &mut state)?;
            update_w(problem, &mut state)?;
            update_beta(problem, &mut state)?;
            update_v(problem, &mut state)?;
            update_d(problem, &mut state)?;
        }
    }
    for (k, b) in state.beta.iter().enumerate() {
        assert!(
            b * b <= problem.power_caps[k] + 1e-12,
            "power cap violated for user {k}"
        );
    }
    for (n, bits) in state.bits.iter().enumerate() {
        assert!(bits.iter().all(|&d| d >= 0.0), "negative bits at RRH {n}");
    }
    Ok((state.vars(), state))
}
