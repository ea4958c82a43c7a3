//! Network geometry, large- and small-scale fading, imperfect CSIT, noise.
//!
//! APs and users are dropped uniformly on a square. Large-scale gains come
//! from a three-slope path-loss model with log-normal shadowing; small-scale
//! fading is i.i.d. Rayleigh. Channel estimates carry a tunable error power
//! `σ_e²`, and the SNR is defined through the realized channel Frobenius
//! norm so the harness can solve for the transmit power at each sweep point.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{CMat, RMat};
use crate::rng::{self, StreamKind};
use crate::{Error, Result};

/// How the scale factor `τ` relating the true channel to estimate minus
/// error is chosen.
///
/// `Paper` restores the marginal channel variance when the error matrix is
/// redrawn independently of the estimate. `Consistent` matches the estimate
/// model identity `Ĝ − G̃ = sqrt(1−σ_e²)·sqrt(ζ)∘h` instead. The two only
/// agree at `σ_e = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauMode {
    #[default]
    Paper,
    Consistent,
}

impl TauMode {
    pub fn tau(self, sigma_e2: f64) -> f64 {
        match self {
            TauMode::Paper => (1.0 + sigma_e2).sqrt(),
            TauMode::Consistent => (1.0 - sigma_e2).sqrt(),
        }
    }
}

/// AP and user drop on a square, plus the RF constants attached to it.
#[derive(Debug, Clone)]
pub struct NetworkLayout {
    pub ap_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    pub side_m: f64,
    pub f_mhz: f64,
    pub h_ap_m: f64,
    pub h_user_m: f64,
}

impl NetworkLayout {
    pub fn n_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_positions.len()
    }

    /// Distance between AP `n` and user `k` in the plane.
    pub fn distance(&self, n: usize, k: usize) -> f64 {
        let a = self.ap_positions[n];
        let u = self.user_positions[k];
        ((a[0] - u[0]).powi(2) + (a[1] - u[1]).powi(2)).sqrt()
    }

    pub fn with_rf(mut self, f_mhz: f64, h_ap_m: f64, h_user_m: f64) -> Self {
        self.f_mhz = f_mhz;
        self.h_ap_m = h_ap_m;
        self.h_user_m = h_user_m;
        self
    }
}

/// Large-scale power gains `ζ` for every AP-user pair.
#[derive(Debug, Clone)]
pub struct LargeScaleMap {
    /// N×K linear power gain.
    pub zeta: RMat,
    pub shadow_sigma_db: f64,
    pub d0_m: f64,
    pub d1_m: f64,
}

impl LargeScaleMap {
    pub fn n_aps(&self) -> usize {
        self.zeta.rows()
    }

    pub fn n_users(&self) -> usize {
        self.zeta.cols()
    }
}

/// True channel, its estimate, and the estimation error, all N×K.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub g_true: CMat,
    pub g_hat: CMat,
    pub g_err: CMat,
    pub sigma_e: f64,
    pub tau: f64,
}

/// Thermal noise model; `sigma_n2` is the resulting variance in watts.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    pub t0_k: f64,
    pub boltzmann: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub sigma_n2: f64,
}

impl NoiseModel {
    pub fn new(t0_k: f64, boltzmann: f64, bandwidth_hz: f64, noise_figure_db: f64) -> Result<Self> {
        let sigma_n2 = noise_variance(t0_k, boltzmann, bandwidth_hz, noise_figure_db)?;
        Ok(Self {
            t0_k,
            boltzmann,
            bandwidth_hz,
            noise_figure_db,
            sigma_n2,
        })
    }
}

/// Drop `n_aps` APs and `n_users` users i.i.d. uniform on `[0, side_m]²`.
///
/// Deterministic for a fixed seed: positions come from the layout substream
/// only, AP coordinates first.
pub fn place_network(n_aps: usize, n_users: usize, side_m: f64, seed: u64) -> Result<NetworkLayout> {
    if n_aps == 0 || n_users == 0 {
        return Err(Error::invalid("place_network: counts must be at least 1"));
    }
    if !side_m.is_finite() || side_m <= 0.0 {
        return Err(Error::invalid("place_network: side must be positive"));
    }
    let mut rng = rng::stream(seed, StreamKind::Layout);
    let mut draw = |count: usize| -> Vec<[f64; 2]> {
        (0..count)
            .map(|_| {
                let x: f64 = rng.random::<f64>() * side_m;
                let y: f64 = rng.random::<f64>() * side_m;
                [x, y]
            })
            .collect()
    };
    Ok(NetworkLayout {
        ap_positions: draw(n_aps),
        user_positions: draw(n_users),
        side_m,
        f_mhz: 1900.0,
        h_ap_m: 15.0,
        h_user_m: 1.65,
    })
}

/// Hata-style attenuation constant `L` in dB.
pub fn attenuation_constant(f_mhz: f64, h_ap_m: f64, h_user_m: f64) -> Result<f64> {
    if !(f_mhz > 0.0 && h_ap_m > 0.0 && h_user_m > 0.0) {
        return Err(Error::invalid(
            "attenuation_constant: arguments must be positive",
        ));
    }
    let lf = f_mhz.log10();
    Ok(46.3 + 33.9 * lf - 13.82 * h_ap_m.log10() - (1.1 * lf - 0.7) * h_user_m
        + (1.56 * lf - 0.8))
}

/// Three-slope path loss in dB at distance `d` (meters).
///
/// Constant below `d0`, 20 dB/decade between `d0` and `d1`, 35 dB/decade
/// beyond; continuous at `d1` because 15·log10(d1) + 20·log10(d1) =
/// 35·log10(d1).
pub fn path_loss_db(d: f64, attenuation_db: f64, d0_m: f64, d1_m: f64) -> Result<f64> {
    if d.is_nan() || d < 0.0 {
        return Err(Error::invalid("path_loss_db: negative distance"));
    }
    if !(0.0 < d0_m && d0_m < d1_m) {
        return Err(Error::invalid("path_loss_db: need 0 < d0 < d1"));
    }
    let l = attenuation_db;
    Ok(if d > d1_m {
        -l - 35.0 * d.log10()
    } else if d > d0_m {
        -l - 15.0 * d1_m.log10() - 20.0 * d.log10()
    } else {
        -l - 15.0 * d1_m.log10() - 20.0 * d0_m.log10()
    })
}

/// Large-scale gains `ζ[n][k] = 10^((P_dB + σ_s·z)/10)` with standard
/// normal shadowing `z`, drawn on the shadowing substream.
pub fn large_scale_coefficients(
    layout: &NetworkLayout,
    shadow_sigma_db: f64,
    d0_m: f64,
    d1_m: f64,
    seed: u64,
) -> Result<LargeScaleMap> {
    let attenuation = attenuation_constant(layout.f_mhz, layout.h_ap_m, layout.h_user_m)?;
    let (n, k) = (layout.n_aps(), layout.n_users());
    let mut rng = rng::stream(seed, StreamKind::Shadowing);
    let mut zeta = RMat::zeros(n, k);
    for ap in 0..n {
        for user in 0..k {
            let p_db = path_loss_db(layout.distance(ap, user), attenuation, d0_m, d1_m)?;
            let z: f64 = rng.sample(StandardNormal);
            zeta[(ap, user)] = 10f64.powf((p_db + shadow_sigma_db * z) / 10.0);
        }
    }
    Ok(LargeScaleMap {
        zeta,
        shadow_sigma_db,
        d0_m,
        d1_m,
    })
}

/// Draw the unit-variance small-scale fading matrix `h` on `rng`.
pub fn draw_small_scale(n_aps: usize, n_users: usize, rng: &mut impl Rng) -> CMat {
    CMat::from_fn(n_aps, n_users, |_, _| rng::draw_cn01(rng))
}

/// True channel `g = sqrt(ζ)∘h` for a given small-scale draw.
pub fn apply_large_scale(zeta: &LargeScaleMap, h: &CMat) -> CMat {
    assert_eq!((h.rows(), h.cols()), (zeta.n_aps(), zeta.n_users()));
    CMat::from_fn(h.rows(), h.cols(), |n, k| {
        h[(n, k)] * zeta.zeta[(n, k)].sqrt()
    })
}

/// Draw `h` and the true channel in one call.
pub fn draw_channel(zeta: &LargeScaleMap, rng: &mut impl Rng) -> (CMat, CMat) {
    let h = draw_small_scale(zeta.n_aps(), zeta.n_users(), rng);
    let g_true = apply_large_scale(zeta, &h);
    (h, g_true)
}

/// Channel estimate with error power `σ_e²`:
/// `ĝ = sqrt(ζ)·(sqrt(1−σ_e²)·h + σ_e·h̃)` with `h̃` fresh on `err_rng`,
/// and `g̃ = σ_e·sqrt(ζ)·h̃`.
pub fn draw_estimate(
    zeta: &LargeScaleMap,
    h: &CMat,
    sigma_e: f64,
    tau_mode: TauMode,
    err_rng: &mut impl Rng,
) -> Result<ChannelSet> {
    if !(0.0..1.0).contains(&sigma_e) {
        return Err(Error::invalid("draw_estimate: sigma_e must be in [0, 1)"));
    }
    let (n, k) = (zeta.n_aps(), zeta.n_users());
    assert_eq!((h.rows(), h.cols()), (n, k));
    let true_part = (1.0 - sigma_e * sigma_e).sqrt();
    let mut g_hat = CMat::zeros(n, k);
    let mut g_err = CMat::zeros(n, k);
    for ap in 0..n {
        for user in 0..k {
            let root_zeta = zeta.zeta[(ap, user)].sqrt();
            let h_err = rng::draw_cn01(err_rng);
            g_hat[(ap, user)] = root_zeta * (true_part * h[(ap, user)] + sigma_e * h_err);
            g_err[(ap, user)] = root_zeta * sigma_e * h_err;
        }
    }
    Ok(ChannelSet {
        g_true: apply_large_scale(zeta, h),
        g_hat,
        g_err,
        sigma_e,
        tau: tau_mode.tau(sigma_e * sigma_e),
    })
}

/// Noise variance `σ_n² = T₀·k_B·B·10^(NF/10)` in watts.
pub fn noise_variance(t0_k: f64, boltzmann: f64, bandwidth_hz: f64, nf_db: f64) -> Result<f64> {
    if !(t0_k > 0.0 && boltzmann > 0.0 && bandwidth_hz > 0.0) {
        return Err(Error::invalid("noise_variance: arguments must be positive"));
    }
    Ok(t0_k * boltzmann * bandwidth_hz * 10f64.powf(nf_db / 10.0))
}

/// `SNR = P_t·Tr(GᵀG*)/(N·K·σ_n²)`; the trace equals the squared Frobenius
/// norm of `G`. Returns the linear ratio.
pub fn snr(p_t: f64, g_true: &CMat, sigma_n2: f64) -> Result<f64> {
    if sigma_n2 == 0.0 {
        return Err(Error::invalid("snr: zero noise variance"));
    }
    let nk = (g_true.rows() * g_true.cols()) as f64;
    Ok(p_t * g_true.frobenius_norm_sqr() / (nk * sigma_n2))
}

/// Transmit power that puts the realized channel at `snr_db`.
pub fn power_for_snr_db(snr_db: f64, g_true: &CMat, sigma_n2: f64) -> Result<f64> {
    let gain = g_true.frobenius_norm_sqr();
    if gain == 0.0 {
        return Err(Error::invalid("power_for_snr_db: zero channel"));
    }
    let nk = (g_true.rows() * g_true.cols()) as f64;
    Ok(10f64.powf(snr_db / 10.0) * nk * sigma_n2 / gain)
}
