//! Analytic Jacobian of the instantaneous rates with respect to the analog
//! phases, for the relaxed quantizer model.
//!
//! Writing the rate as `r_k = log(Gamma_k) - log(Gamma_{-k})`, where
//! `Gamma_k` is the total received power of user `k`'s combiner output and
//! `Gamma_{-k}` drops only user `k`'s own signal term, the phase gradient of
//! either power has the elementwise form
//!
//! ```text
//! d Gamma / d theta_{n,i,j} = 2 Re[ sqrt(-1) [F_n]_{i,j} X_{i,j} ]
//! ```
//!
//! with an `M x S` coefficient matrix `X` assembled from three parts: the
//! signal/interference part, the filtered-noise part, and the
//! quantization-noise part (whose per-stream weights scale as `3/4^d`).
//! Every column of the result is validated against central finite
//! differences in the tests.

use crate::model::{
    quant_noise_variances, stacked_rx_channel, AnalogPhases, QuantMode, RxFrontEnd, ShortTermVars,
};
use crate::scenario::ChannelSample;
use crate::{C64, CVec, Result};
use nalgebra::DMatrix;

/// Jacobian of the rate vector w.r.t. the stacked phase vector.
///
/// Returns an `(N M S) x K` real matrix whose column `k` is the gradient of
/// `r_k(theta, x; H)` under the relaxed quantizer model, with the per-RRH
/// blocks laid out exactly like [`AnalogPhases`] (column-major inside each
/// RRH block).
pub fn rate_jacobian_theta(
    phases: &AnalogPhases,
    x: &ShortTermVars,
    sample: &ChannelSample,
) -> Result<DMatrix<f64>> {
    let (n_rrh, m, s) = (phases.n_rrh, phases.n_antennas, phases.n_rf);
    let l_streams = x.n_streams();
    let k_users = sample.per_rrh[0].ncols();
    let front = RxFrontEnd::from_phases(phases, sample)?;
    let filters = phases.matrices();
    let q = quant_noise_variances(&front, &x.powers, &x.digital, &x.bits, QuantMode::Relaxed)?;

    // Stacked receive channels and the combiner inner products a_{k,l} = u_k^H V~^H h_l.
    let channels: Vec<CVec> = (0..k_users)
        .map(|k| stacked_rx_channel(&front, &x.digital, k))
        .collect();
    let inner: Vec<Vec<C64>> = (0..k_users)
        .map(|k| (0..k_users).map(|l| x.rx[k].dotc(&channels[l])).collect())
        .collect();

    // Gamma_k and Gamma_{-k}: total and own-signal-free combiner output powers.
    let noise_gram = crate::model::noise_gram_blocks(&front, &x.digital);
    let mut gamma = vec![0.0; k_users];
    let mut gamma_less = vec![0.0; k_users];
    for k in 0..k_users {
        let u = &x.rx[k];
        let mut base = 0.0;
        for (n, g) in noise_gram.iter().enumerate() {
            let un = u.rows(n * l_streams, l_streams);
            base += un.dotc(&(g * un)).re;
        }
        for n in 0..n_rrh {
            for l in 0..l_streams {
                base += q[n][l] * u[n * l_streams + l].norm_sqr();
            }
        }
        let mut interference = 0.0;
        for l in 0..k_users {
            if l != k {
                interference += x.powers[l] * inner[k][l].norm_sqr();
            }
        }
        gamma_less[k] = base + interference;
        gamma[k] = gamma_less[k] + x.powers[k] * inner[k][k].norm_sqr();
    }

    // Per-(n, l) quantizer direction vectors, shared by every user:
    // w_{n,l} = sum_m p_m (h_{n,m}^H F v_{n,l}) h_{n,m} + F v_{n,l}.
    let mut quant_dirs: Vec<Vec<CVec>> = Vec::with_capacity(n_rrh);
    for n in 0..n_rrh {
        let mut per_stream = Vec::with_capacity(l_streams);
        for l in 0..l_streams {
            let v_col = CVec::from_column_slice(x.digital[n].column(l).as_slice());
            let mut w = &filters[n] * &v_col;
            for (mth, &p) in x.powers.iter().enumerate() {
                let b = front.eff[n].column(mth).dotc(&v_col); // h^H F v
                w += sample.per_rrh[n].column(mth) * (b * p);
            }
            per_stream.push(w);
        }
        quant_dirs.push(per_stream);
    }

    let mut jac = DMatrix::<f64>::zeros(n_rrh * m * s, k_users);
    for k in 0..k_users {
        for n in 0..n_rrh {
            let un = x.rx[k].rows(n * l_streams, l_streams).clone_owned();
            let g = &x.digital[n] * &un; // V_n u_{k,n} in C^S
            let fg = &filters[n] * &g;

            // Signal + interference coefficient vectors (with and without user k).
            let mut sig_all = CVec::zeros(m);
            for l in 0..k_users {
                let coef = x.powers[l] * inner[k][l];
                sig_all += sample.per_rrh[n].column(l).map(|z| z.conj()) * coef;
            }
            let own = sample.per_rrh[n].column(k).map(|z| z.conj())
                * (x.powers[k] * inner[k][k]);

            // X for Gamma_k: (sig_all + conj(F g)) g^T + quantization part.
            let base_col = &sig_all + fg.map(|z| z.conj());
            let mut x_full = &base_col * g.transpose();
            let mut x_less = (&base_col - &own) * g.transpose();
            for l in 0..l_streams {
                let coef = un[l].norm_sqr() * 3.0 * 4f64.powf(-x.bits[n][l]);
                if coef == 0.0 {
                    continue;
                }
                let v_col = x.digital[n].column(l);
                let contrib =
                    quant_dirs[n][l].map(|z| z.conj()) * v_col.transpose() * C64::new(coef, 0.0);
                x_full += &contrib;
                x_less += &contrib;
            }

            // d r_k / d theta = dGamma_k/Gamma_k - dGamma_{-k}/Gamma_{-k},
            // with dGamma = 2 Re[j F .* X] elementwise.
            let base = n * m * s;
            for j in 0..s {
                for i in 0..m {
                    let fij = filters[n][(i, j)];
                    let d_full = 2.0 * (C64::i() * fij * x_full[(i, j)]).re;
                    let d_less = 2.0 * (C64::i() * fij * x_less[(i, j)]).re;
                    jac[(base + j * m + i, k)] = d_full / gamma[k] - d_less / gamma_less[k];
                }
            }
        }
    }
    Ok(jac)
}
