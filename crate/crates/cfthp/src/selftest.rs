//! Quick built-in verification battery behind the `selftest` CLI command.
//!
//! Smaller and faster than the full acceptance suite; meant as a sanity
//! check that a build behaves on the machine it runs on.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{large_scale_coefficients, place_network, TauMode};
use crate::linalg::{lq_decompose, CMat};
use crate::metrics::{simulate_symbol_chain, EsrScenario, SinrForm};
use crate::modulation::Modulation;
use crate::precoders::{
    effective_precoder, feedback_encode, modulo, thp_filters, BetaMode, ThpStructure, ThpVariant,
};
use crate::rng::{draw_cn01, test_rng};
use crate::Result;

/// One named check outcome.
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_cmat(rows: usize, cols: usize, rng: &mut impl Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| draw_cn01(rng))
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

/// Run the battery; every check runs regardless of earlier failures.
pub fn run_selftest(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = test_rng(seed ^ 0x5e1f7e57);

    // LQ kernel on random shapes.
    {
        let mut worst_recon = 0.0f64;
        let mut worst_orth = 0.0f64;
        for _ in 0..200 {
            let k = rng.random_range(1..=12);
            let n = rng.random_range(k..=48);
            let m = random_cmat(k, n, &mut rng);
            let f = lq_decompose(&m)?;
            let recon = f.l_mat.matmul(&f.q_mat).sub(&m).frobenius_norm() / m.frobenius_norm();
            let orth = f
                .q_mat
                .matmul(&f.q_mat.hermitian())
                .sub(&CMat::identity(k))
                .frobenius_norm();
            worst_recon = worst_recon.max(recon);
            worst_orth = worst_orth.max(orth);
        }
        out.push(check(
            "lq-kernel",
            worst_recon < 1e-10 && worst_orth < 1e-10,
            format!("worst reconstruction {worst_recon:.2e}, worst orthogonality {worst_orth:.2e}"),
        ));
    }

    // Perfect-CSI interference cancellation, both structures.
    {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let g_t = random_cmat(6, 24, &mut rng);
            let fc = thp_filters(&g_t, ThpStructure::Centralized, 1.0, BetaMode::Classic)?;
            let pc = effective_precoder(&fc, ThpVariant::NetworkWide);
            worst = worst.max(
                g_t.matmul(&pc.p_mat)
                    .sub(&CMat::identity(6))
                    .frobenius_norm(),
            );
            let fd = thp_filters(&g_t, ThpStructure::Decentralized, 1.0, BetaMode::Classic)?;
            let pd = effective_precoder(&fd, ThpVariant::NetworkWide);
            worst = worst.max(
                fd.c_mat()
                    .matmul(&g_t.matmul(&pd.p_mat))
                    .sub(&CMat::identity(6))
                    .frobenius_norm(),
            );
        }
        out.push(check(
            "thp-cancellation",
            worst < 1e-9,
            format!("worst residual {worst:.2e}"),
        ));
    }

    // Modulo algebra and feedback lattice.
    {
        let lambda = Modulation::Qpsk.lambda();
        let mut ok = true;
        for _ in 0..500 {
            let v = Complex64::new(
                6.0 * (rng.random::<f64>() - 0.5),
                6.0 * (rng.random::<f64>() - 0.5),
            );
            let m = modulo(v, lambda);
            ok &= m.re >= -lambda / 2.0 && m.re < lambda / 2.0;
            ok &= m.im >= -lambda / 2.0 && m.im < lambda / 2.0;
            let shifted = modulo(v + Complex64::new(2.0 * lambda, -lambda), lambda);
            ok &= (shifted - m).norm() < 1e-9;
        }
        for _ in 0..100 {
            let k = 5;
            let mut b = CMat::identity(k);
            for i in 0..k {
                for j in 0..i {
                    b[(i, j)] = draw_cn01(&mut rng);
                }
            }
            let s: Vec<Complex64> = (0..k).map(|_| draw_cn01(&mut rng)).collect();
            let (encoded, _) = feedback_encode(&s, &b, lambda);
            let bs = b.mat_vec(&encoded);
            for i in 0..k {
                let r = (bs[i] - s[i]) / lambda;
                ok &= (r.re - r.re.round()).abs() < 1e-9 && (r.im - r.im.round()).abs() < 1e-9;
            }
        }
        out.push(check("modulo-lattice", ok, "range, periodicity, lattice".into()));
    }

    // Transmit power for the classic scaling; needs N >> K so the encoded
    // symbol variance stays near one.
    {
        let g_t = random_cmat(6, 96, &mut rng);
        let filters = thp_filters(&g_t, ThpStructure::Centralized, 2.5, BetaMode::Classic)?;
        let lambda = Modulation::Qpsk.lambda();
        let mut acc = 0.0;
        let trials = 2000;
        for _ in 0..trials {
            let s: Vec<Complex64> = (0..6).map(|_| Modulation::Qpsk.draw_symbol(&mut rng)).collect();
            let (encoded, _) = feedback_encode(&s, &filters.b_mat, lambda);
            let shaped: Vec<Complex64> = encoded
                .iter()
                .zip(&filters.c_diag)
                .map(|(sym, c)| sym * *c)
                .collect();
            let x = filters.f_mat.mat_vec(&shaped);
            acc += filters.beta * filters.beta
                * x.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let mean = acc / trials as f64;
        out.push(check(
            "power-constraint",
            (mean - 2.5).abs() / 2.5 < 0.10,
            format!("mean ‖x‖² = {mean:.4} vs P_t = 2.5"),
        ));
    }

    // Noiseless end-to-end chain.
    {
        let layout = place_network(8, 3, 1000.0, seed)?;
        let zeta = large_scale_coefficients(&layout, 8.0, 10.0, 50.0, seed)?;
        let scenario = EsrScenario {
            zeta,
            l_aps: 8,
            n_a: 1,
            cluster_max: 3,
            sigma_e2: 0.0,
            target_snr_db: 10.0,
            sigma_n2: 0.0,
            tau_mode: TauMode::Paper,
            beta_mode: BetaMode::Classic,
            square_beta_d: true,
            sinr_form: SinrForm::Printed,
        };
        let mut ok = true;
        for structure in [ThpStructure::Centralized, ThpStructure::Decentralized] {
            let ser = simulate_symbol_chain(&scenario, structure, Modulation::Qpsk, 500, seed)?;
            ok &= ser == 0.0;
        }
        out.push(check("symbol-chain", ok, "noiseless SER = 0".into()));
    }

    Ok(out)
}
