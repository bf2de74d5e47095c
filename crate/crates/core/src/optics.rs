//! Laser, IQ modulator, fiber, attenuator and photodiode models.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dpd::{ImbalanceSet, RailVoltage};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, stream_rng};
use crate::signal::{bin_frequency, db10, fft_forward, from_db10, RealSignal, Waveform, C64};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserParams {
    pub power_dbm: f64,
    pub linewidth_hz: f64,
    /// `None` disables intensity noise.
    pub rin_dbc_hz: Option<f64>,
}

impl Default for LaserParams {
    fn default() -> Self {
        Self { power_dbm: 16.0, linewidth_hz: 100e3, rin_dbc_hz: Some(-150.0) }
    }
}

impl LaserParams {
    pub fn validate(&self) -> Result<()> {
        if !self.power_dbm.is_finite() {
            return Err(invalid("power_dbm", "must be finite"));
        }
        if !(self.linewidth_hz >= 0.0 && self.linewidth_hz.is_finite()) {
            return Err(invalid("linewidth_hz", format!("must be >= 0, got {}", self.linewidth_hz)));
        }
        if let Some(r) = self.rin_dbc_hz {
            if !r.is_finite() {
                return Err(invalid("rin_dbc_hz", "must be finite"));
            }
        }
        Ok(())
    }

    pub fn power_w(&self) -> f64 {
        dbm_to_w(self.power_dbm)
    }
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    1e-3 * from_db10(dbm)
}

pub fn w_to_dbm(w: f64) -> f64 {
    db10(w / 1e-3)
}

/// `√P·(1 + m)·e^{jφ}` with Wiener phase `φ` and white intensity ripple `m`.
pub fn laser_field(p: &LaserParams, n: usize, rate: f64, seed: u64) -> Result<Waveform> {
    p.validate()?;
    if n == 0 {
        return Err(invalid("n", "laser needs at least one sample"));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(invalid("rate", format!("must be positive, got {rate}")));
    }
    let amp = p.power_w().sqrt();
    let mut rng = stream_rng(seed, stream::LASER);
    let phase_std = (2.0 * PI * p.linewidth_hz / rate).sqrt();
    // RIN is the one-sided PSD of δI/I ≈ 2m over the Nyquist band.
    let rin_std = p.rin_dbc_hz.map(|r| (from_db10(r) * rate / 2.0).sqrt() / 2.0).unwrap_or(0.0);
    let mut phi = 0.0;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 && phase_std > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            phi += phase_std * z;
        }
        let m = if rin_std > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            rin_std * z
        } else {
            0.0
        };
        out.push(C64::from_polar(amp * (1.0 + m), phi));
    }
    Waveform::new(out, rate)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulatorParams {
    pub g: ImbalanceSet,
    pub v_pi_i: f64,
    pub v_pi_q: f64,
    pub v_pi_p: f64,
    pub v_bias_i: f64,
    pub v_bias_q: f64,
    pub v_p: f64,
}

impl ModulatorParams {
    /// Equal half-wave voltages, null-biased inner MZIs, outer MZI at quadrature.
    pub fn null_biased(g: ImbalanceSet, v_pi: f64) -> Self {
        Self { g, v_pi_i: v_pi, v_pi_q: v_pi, v_pi_p: v_pi, v_bias_i: 0.0, v_bias_q: 0.0, v_p: v_pi / 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.g.validate()?;
        for (name, v) in [("v_pi_i", self.v_pi_i), ("v_pi_q", self.v_pi_q), ("v_pi_p", self.v_pi_p)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn rail_i(&self) -> RailVoltage {
        RailVoltage { v_pi: self.v_pi_i, v_bias: self.v_bias_i }
    }

    pub fn rail_q(&self) -> RailVoltage {
        RailVoltage { v_pi: self.v_pi_q, v_bias: self.v_bias_q }
    }

    /// Field transfer for one pair of drive voltages.
    pub fn transfer(&self, v_i: f64, v_q: f64) -> C64 {
        let arm_i = inner_mzi(self.g.g_i, PI * (v_i + self.v_bias_i) / self.v_pi_i);
        let arm_q = inner_mzi(self.g.g_q, PI * (v_q + self.v_bias_q) / self.v_pi_q);
        let gp = self.g.g_p;
        let outer = PI * self.v_p / (2.0 * self.v_pi_p);
        let e = (gp / (1.0 + gp)).sqrt() * C64::from_polar(1.0, -outer) * arm_i
            + (1.0 / (1.0 + gp)).sqrt() * C64::from_polar(1.0, outer) * arm_q;
        // two ideal 3 dB combiners
        0.5 * e
    }
}

fn inner_mzi(g: f64, phase: f64) -> C64 {
    (g / (1.0 + g)).sqrt() * C64::from_polar(1.0, phase) + (1.0 / (1.0 + g)).sqrt() * C64::from_polar(1.0, -phase)
}

pub fn iq_modulate(e_in: &Waveform, v_i: &[f64], v_q: &[f64], m: &ModulatorParams) -> Result<Waveform> {
    m.validate()?;
    if v_i.len() != e_in.len() || v_q.len() != e_in.len() {
        return Err(Error::LengthMismatch {
            context: "iq_modulate drive vs field",
            left: e_in.len(),
            right: if v_i.len() != e_in.len() { v_i.len() } else { v_q.len() },
        });
    }
    let out = e_in
        .samples()
        .iter()
        .zip(v_i.iter().zip(v_q))
        .map(|(&e, (&vi, &vq))| e * m.transfer(vi, vq))
        .collect();
    Ok(Waveform::from_parts_unchecked(out, e_in.sample_rate()))
}

/// Carrier-to-signal power ratio in dB: power within `±carrier_bw/2` of DC
/// over the rest. Returns `+∞` when nothing lies outside the carrier band.
pub fn measure_cspr(e: &Waveform, carrier_bw: f64) -> Result<f64> {
    if !(carrier_bw > 0.0 && carrier_bw < e.sample_rate()) {
        return Err(invalid("carrier_bw", format!("must lie in (0, rate), got {carrier_bw}")));
    }
    let (carrier, signal) = split_power(e, carrier_bw);
    if signal <= carrier * 1e-24 || signal == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(db10(carrier / signal))
}

pub(crate) fn split_power(e: &Waveform, carrier_bw: f64) -> (f64, f64) {
    let n = e.len();
    let spec = fft_forward(e.samples());
    let (mut inside, mut outside) = (0.0, 0.0);
    for (k, x) in spec.iter().enumerate() {
        if bin_frequency(k, n, e.sample_rate()).abs() <= carrier_bw / 2.0 {
            inside += x.norm_sqr();
        } else {
            outside += x.norm_sqr();
        }
    }
    (inside, outside)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberParams {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    pub wavelength_nm: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        Self { length_km: 100.0, attenuation_db_per_km: 0.2, dispersion_ps_per_nm_km: 17.0, wavelength_nm: 1550.0 }
    }
}

impl FiberParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_km >= 0.0 && self.length_km.is_finite()) {
            return Err(invalid("length_km", format!("must be >= 0, got {}", self.length_km)));
        }
        if !(self.attenuation_db_per_km >= 0.0 && self.attenuation_db_per_km.is_finite()) {
            return Err(invalid("attenuation_db_per_km", "must be >= 0"));
        }
        if !self.dispersion_ps_per_nm_km.is_finite() {
            return Err(invalid("dispersion_ps_per_nm_km", "must be finite"));
        }
        if !(self.wavelength_nm > 0.0 && self.wavelength_nm.is_finite()) {
            return Err(invalid("wavelength_nm", "must be positive"));
        }
        Ok(())
    }

    /// Group-velocity dispersion β₂ in s²/m.
    pub fn beta2(&self) -> f64 {
        let d = self.dispersion_ps_per_nm_km * 1e-6; // s/m²
        let lambda = self.wavelength_nm * 1e-9;
        -d * lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT)
    }

    /// Accumulated CD phase `(β₂/2)·ω²·L` at baseband frequency `f`.
    pub fn cd_phase(&self, f: f64) -> f64 {
        let w = 2.0 * PI * f;
        0.5 * self.beta2() * w * w * self.length_km * 1e3
    }

    pub fn loss_db(&self) -> f64 {
        self.attenuation_db_per_km * self.length_km
    }
}

pub fn fiber_propagate(e: &Waveform, f: &FiberParams) -> Result<Waveform> {
    f.validate()?;
    let amp = from_db10(-f.loss_db()).sqrt();
    e.apply_spectral(|freq| C64::from_polar(amp, f.cd_phase(freq)))
}

#[derive(Clone, Debug)]
pub struct Attenuated {
    pub waveform: Waveform,
    /// Positive when the attenuator had to amplify.
    pub gain_db: f64,
}

impl Attenuated {
    pub fn is_gain(&self) -> bool {
        self.gain_db > 0.0
    }
}

/// Scales `e` so its mean power is `rop_dbm`.
pub fn set_rop(e: &Waveform, rop_dbm: f64) -> Result<Attenuated> {
    let p = e.power();
    if !(p > 0.0 && p.is_finite()) {
        return Err(invalid("e", "input power must be positive"));
    }
    if !rop_dbm.is_finite() {
        return Err(invalid("rop_dbm", "must be finite"));
    }
    let target = dbm_to_w(rop_dbm);
    Ok(Attenuated { waveform: e.scaled((target / p).sqrt()), gain_db: db10(target / p) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdParams {
    pub responsivity_a_per_w: f64,
    pub dark_current_a: f64,
    pub thermal_psd_a_per_rthz: f64,
}

impl Default for PdParams {
    fn default() -> Self {
        Self { responsivity_a_per_w: 0.8, dark_current_a: 5e-9, thermal_psd_a_per_rthz: 10e-12 }
    }
}

impl PdParams {
    pub fn noiseless(self) -> Self {
        Self { thermal_psd_a_per_rthz: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.responsivity_a_per_w > 0.0 && self.responsivity_a_per_w.is_finite()) {
            return Err(invalid("responsivity_a_per_w", "must be positive"));
        }
        if !(self.thermal_psd_a_per_rthz >= 0.0 && self.thermal_psd_a_per_rthz.is_finite()) {
            return Err(invalid("thermal_psd_a_per_rthz", "must be >= 0"));
        }
        if !self.dark_current_a.is_finite() {
            return Err(invalid("dark_current_a", "must be finite"));
        }
        Ok(())
    }

    /// Per-sample thermal-noise variance over the Nyquist band.
    pub fn thermal_variance(&self, rate: f64) -> f64 {
        self.thermal_psd_a_per_rthz.powi(2) * rate / 2.0
    }
}

/// `R·|e|² + I_dark + n`, `n ~ N(0, δ²)`.
pub fn photodiode(e: &Waveform, p: &PdParams, seed: u64) -> Result<RealSignal> {
    p.validate()?;
    let sigma = p.thermal_variance(e.sample_rate()).sqrt();
    let base = e.samples().iter().map(|x| p.responsivity_a_per_w * x.norm_sqr() + p.dark_current_a);
    let samples = if sigma > 0.0 {
        let mut rng = stream_rng(seed, stream::PHOTODIODE);
        let normal = Normal::new(0.0, sigma).map_err(|err| invalid("thermal_psd_a_per_rthz", err.to_string()))?;
        base.map(|i| i + normal.sample(&mut rng)).collect()
    } else {
        base.collect()
    };
    RealSignal::new(samples, e.sample_rate())
}

/// Inner-MZI drive phase offset at which the static transfer is minimal.
pub const NULL_PHASE: f64 = FRAC_PI_2;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpd::{er_to_imbalance, predistort, DpdCoefficients};
    use crate::tx::qam32_points;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const RATE: f64 = 160e9;

    fn unit_field(n: usize) -> Waveform {
        Waveform::new(vec![C64::new(1.0, 0.0); n], RATE).unwrap()
    }

    fn null_drive(m: &ModulatorParams) -> (f64, f64) {
        (-m.v_pi_i / 2.0 - m.v_bias_i, -m.v_pi_q / 2.0 - m.v_bias_q)
    }

    #[test]
    fn quiet_laser_is_constant() {
        let p = LaserParams { power_dbm: 3.0, linewidth_hz: 0.0, rin_dbc_hz: None };
        let w = laser_field(&p, 64, RATE, 1).unwrap();
        for x in w.samples() {
            assert_relative_eq!(x.norm_sqr(), dbm_to_w(3.0), max_relative = 1e-14);
        }
    }

    #[test]
    fn laser_phase_increment_variance() {
        let p = LaserParams { power_dbm: 0.0, linewidth_hz: 100e3, rin_dbc_hz: None };
        let n = 10_000_000;
        let w = laser_field(&p, n, RATE, 9).unwrap();
        let s = w.samples();
        let inc: Vec<f64> = s.windows(2).map(|p| (p[1] * p[0].conj()).arg()).collect();
        let m = crate::signal::mean(&inc);
        let var = inc.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
        let want = 2.0 * PI * 1e5 / RATE;
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
    }

    #[test]
    fn laser_rin_and_power() {
        let p = LaserParams::default();
        let n = 1 << 18;
        let w = laser_field(&p, n, RATE, 4).unwrap();
        assert!((w.power() / p.power_w() - 1.0).abs() < 0.01);
        // relative intensity fluctuation variance = RIN·rate/2
        let i: Vec<f64> = w.samples().iter().map(|x| x.norm_sqr() / p.power_w() - 1.0).collect();
        let var = i.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let want = from_db10(-150.0) * RATE / 2.0;
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
        assert_eq!(laser_field(&p, 128, RATE, 4).unwrap().samples(), &w.samples()[..128]);
    }

    #[test]
    fn ideal_null_extinguishes() {
        let m = ModulatorParams::null_biased(ImbalanceSet::IDEAL, 4.0);
        let (vi, vq) = null_drive(&m);
        let out = iq_modulate(&unit_field(8), &[vi; 8], &[vq; 8], &m).unwrap();
        for x in out.samples() {
            assert!(x.norm() < 1e-15);
        }
    }

    #[test]
    fn ideal_i_only_modulation_stays_on_one_axis() {
        let m = ModulatorParams { v_bias_i: 0.4, ..ModulatorParams::null_biased(ImbalanceSet::IDEAL, 4.0) };
        let (vi0, vq0) = null_drive(&m);
        let vi: Vec<f64> = (0..101).map(|k| vi0 - 4.0 + 8.0 * k as f64 / 100.0).collect();
        let out = iq_modulate(&unit_field(101), &vi, &[vq0; 101], &m).unwrap();
        let axis = C64::from_polar(1.0, -PI / 4.0);
        for x in out.samples() {
            assert!((x * axis.conj()).im.abs() < 1e-12);
        }
    }

    #[test]
    fn residual_carrier_grows_as_er_falls() {
        let mut last = 0.0;
        for er in [30.0, 20.0, 12.0, 7.0, 4.0] {
            let gi = er_to_imbalance(er).unwrap();
            let m = ModulatorParams::null_biased(ImbalanceSet::new(gi, gi, 1.0).unwrap(), 4.0);
            let (vi, vq) = null_drive(&m);
            let p = m.transfer(vi, vq).norm_sqr();
            assert!(p > last, "ER {er}: {p} <= {last}");
            last = p;
        }
    }

    #[test]
    fn modulator_rejects_length_mismatch() {
        let m = ModulatorParams::null_biased(ImbalanceSet::IDEAL, 4.0);
        assert!(iq_modulate(&unit_field(4), &[0.0; 3], &[0.0; 4], &m).is_err());
    }

    /// Least-squares fit `y ≈ κ·x + c`, returning the relative residual.
    fn affine_residual(x: &[C64], y: &[C64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<C64>() / n;
        let my = y.iter().sum::<C64>() / n;
        let sxy: C64 = x.iter().zip(y).map(|(a, b)| (a - mx).conj() * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).norm_sqr()).sum();
        let k = sxy / sxx;
        let c = my - k * mx;
        let err: f64 = x.iter().zip(y).map(|(a, b)| (b - (k * a + c)).norm_sqr()).sum();
        let tot: f64 = y.iter().map(|b| (b - my).norm_sqr()).sum();
        (err / tot).sqrt()
    }

    fn dpd_chain(g: ImbalanceSet, symbols: &[C64], scale: f64) -> (Vec<C64>, f64) {
        let m = ModulatorParams::null_biased(g, 4.0);
        let c = DpdCoefficients::compute(&g);
        let si: Vec<f64> = symbols.iter().map(|s| scale * s.re).collect();
        let sq: Vec<f64> = symbols.iter().map(|s| scale * s.im).collect();
        let d = predistort(&si, &sq, &c, m.rail_i(), m.rail_q()).unwrap();
        let out = iq_modulate(&unit_field(symbols.len()), &d.v_i, &d.v_q, &m).unwrap();
        (out.into_samples(), d.saturation_fraction)
    }

    fn qam_stream(n: usize, seed: u64) -> Vec<C64> {
        let pts = qam32_points();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| pts[rng.random_range(0..pts.len())]).collect()
    }

    #[test]
    fn ideal_dpd_chain_is_affine() {
        let s = qam_stream(4096, 1);
        let (out, sat) = dpd_chain(ImbalanceSet::IDEAL, &s, 0.4);
        assert_eq!(sat, 0.0);
        assert!(affine_residual(&s, &out) < 1e-6);
    }

    #[test]
    fn dpd_chain_residual_at_operating_point() {
        let g = ImbalanceSet::from_er_db(7.0, 25.0).unwrap();
        let s = qam_stream(4096, 2);
        let (out, sat) = dpd_chain(g, &s, 0.002);
        assert_eq!(sat, 0.0);
        let with = affine_residual(&s, &out);
        let floor = predicted_floor(&g);
        assert!((with / floor - 1.0).abs() < 0.1, "{with} vs {floor}");
        // without pre-distortion the same drive is far from affine
        let m = ModulatorParams::null_biased(g, 4.0);
        let vi: Vec<f64> = s.iter().map(|x| 4.0 / PI * (0.002 * x.re - NULL_PHASE)).collect();
        let vq: Vec<f64> = s.iter().map(|x| 4.0 / PI * (0.002 * x.im - NULL_PHASE)).collect();
        let raw = iq_modulate(&unit_field(s.len()), &vi, &vq, &m).unwrap();
        let without = affine_residual(&s, raw.samples());
        assert!(without > 10.0 * with, "{without} vs {with}");
    }

    #[test]
    fn dpd_chain_meets_tight_bound_at_high_er() {
        let g = ImbalanceSet::from_er_db(20.0, 25.0).unwrap();
        let (out, _) = dpd_chain(g, &qam_stream(4096, 3), 0.02);
        assert!(affine_residual(&qam_stream(4096, 3), &out) < 1e-4);
    }

    #[test]
    fn cspr_definition() {
        let tone = unit_field(1024);
        assert_eq!(measure_cspr(&tone, 2e9).unwrap(), f64::INFINITY);
        let n = 1024;
        let k = 100;
        let mix: Vec<C64> = (0..n)
            .map(|t| C64::new(1.0, 0.0) + C64::from_polar(1.0, 2.0 * PI * (k * t) as f64 / n as f64))
            .collect();
        let w = Waveform::new(mix, RATE).unwrap();
        assert!(measure_cspr(&w, 2e9).unwrap().abs() < 1e-9);
        assert!(measure_cspr(&w, 0.0).is_err());
    }

    #[test]
    fn fiber_cases() {
        let x = qam_stream(2048, 3);
        let w = Waveform::new(x, RATE).unwrap();
        let zero = FiberParams { length_km: 0.0, ..FiberParams::default() };
        let out = fiber_propagate(&w, &zero).unwrap();
        for (a, b) in out.samples().iter().zip(w.samples()) {
            assert!((a - b).norm() < 1e-12);
        }
        let loss_only = FiberParams { dispersion_ps_per_nm_km: 0.0, ..FiberParams::default() };
        let out = fiber_propagate(&w, &loss_only).unwrap();
        assert_relative_eq!(db10(w.power() / out.power()), 20.0, epsilon = 1e-9);
        let cd_only = FiberParams { attenuation_db_per_km: 0.0, ..FiberParams::default() };
        let out = fiber_propagate(&w, &cd_only).unwrap();
        let (a, b) = (fft_forward(w.samples()), fft_forward(out.samples()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x.norm() - y.norm()).abs() <= 1e-9 * x.norm().max(1e-12));
        }
    }

    #[test]
    fn beta2_of_standard_fiber() {
        // 17 ps/(nm·km) at 1550 nm is about −21.7 ps²/km
        let b2 = FiberParams::default().beta2() * 1e27;
        assert!((b2 + 21.68).abs() < 0.02, "{b2}");
    }

    #[test]
    fn rop_cases() {
        let w = Waveform::new(qam_stream(512, 5), RATE).unwrap();
        let now = w_to_dbm(w.power());
        let same = set_rop(&w, now).unwrap();
        assert!(same.gain_db.abs() < 1e-12);
        let down = set_rop(&w, now - db10(2.0)).unwrap();
        for (a, b) in down.waveform.samples().iter().zip(w.samples()) {
            assert!((a - b / 2f64.sqrt()).norm() < 1e-12);
        }
        assert!(!down.is_gain());
        let rop = set_rop(&w, -1.0).unwrap();
        assert_relative_eq!(rop.waveform.power(), 1e-3 * 10f64.powf(-0.1), max_relative = 1e-9);
        assert!(!rop.is_gain());
        assert!(set_rop(&rop.waveform, 2.0).unwrap().is_gain());
        assert!(set_rop(&Waveform::new(vec![C64::new(0.0, 0.0); 4], RATE).unwrap(), 0.0).is_err());
    }

    #[test]
    fn photodiode_cases() {
        let p = PdParams::default();
        let w = Waveform::new(vec![C64::new(0.03, 0.04); 16], RATE).unwrap();
        let i = photodiode(&w, &p.noiseless(), 0).unwrap();
        for x in &i.samples {
            assert_eq!(*x, 0.8 * 0.0025 + 5e-9);
        }
        let dark = Waveform::new(vec![C64::new(0.0, 0.0); 1_000_000], RATE).unwrap();
        let a = photodiode(&dark, &p, 1).unwrap();
        let m = a.mean();
        let var = a.samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
        assert!((var / p.thermal_variance(RATE) - 1.0).abs() < 0.02);
        let b = photodiode(&dark, &p, 2).unwrap();
        let c = photodiode(&dark, &p, 3).unwrap();
        for (x, y) in [(&a, &b), (&a, &c), (&b, &c)] {
            assert!(correlation(&x.samples, &y.samples).abs() < 0.01);
        }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (crate::signal::mean(a), crate::signal::mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn detection_splits_into_carrier_beat_and_signal_terms() {
        let c = C64::new(0.7, -0.2);
        let s = qam_stream(64, 6);
        let e: Vec<C64> = s.iter().map(|x| c + x).collect();
        let p = PdParams { dark_current_a: 0.0, thermal_psd_a_per_rthz: 0.0, responsivity_a_per_w: 1.0 };
        let i = photodiode(&Waveform::new(e, RATE).unwrap(), &p, 0).unwrap();
        for (got, x) in i.samples.iter().zip(&s) {
            let want = c.norm_sqr() + 2.0 * (c.conj() * x).re + x.norm_sqr();
            assert!((got - want).abs() < 1e-14);
        }
    }

    /// Small-drive cross-talk left by the second-order coefficients: the leak
    /// `√(1 − θ²)` is linearized about `θ = c` while the coefficients assume
    /// `1 − θ²/2`, leaving a real-linear (not complex-linear) I/Q coupling.
    fn predicted_floor(g: &ImbalanceSet) -> f64 {
        let c = DpdCoefficients::compute(g);
        let (gi, gq, gp) = (g.g_i, g.g_q, g.g_p);
        let k_i = (gp / (1.0 + gp)).sqrt();
        let k_q = (1.0 / (1.0 + gp)).sqrt();
        let l_i = (1.0 - gi.sqrt()) / (1.0 + gi).sqrt();
        let l_q = (1.0 - gq.sqrt()) / (1.0 + gq).sqrt();
        let slope = |t: f64| t / (1.0 - t * t).sqrt() - t;
        // ∂(real part)/∂s_Q and ∂(imag part)/∂s_I, normalized to unit gain
        let e_i = c.a_i * k_q * l_q * c.a_q * slope(c.c_q);
        let e_q = -c.a_q * k_i * l_i * c.a_i * slope(c.c_i);
        (e_i + e_q).abs() / 2.0
    }

    fn g_strategy() -> impl Strategy<Value = ImbalanceSet> {
        let lo = er_to_imbalance(4.0).unwrap();
        (lo..=1.0, lo..=1.0, lo..=1.0).prop_map(|(a, b, c)| ImbalanceSet::new(a, b, c).unwrap())
    }

    proptest! {
        #[test]
        fn modulator_is_passive(g in g_strategy(), vi in -12.0f64..12.0, vq in -12.0f64..12.0, vp in -8.0f64..8.0) {
            let m = ModulatorParams { v_p: vp, ..ModulatorParams::null_biased(g, 4.0) };
            prop_assert!(m.transfer(vi, vq).norm() <= 1.0 + 1e-12);
        }

        #[test]
        fn modulator_is_phase_covariant(g in g_strategy(), phi in -PI..PI, vi in -4.0f64..4.0, vq in -4.0f64..4.0) {
            let m = ModulatorParams::null_biased(g, 4.0);
            let e = Waveform::new(vec![C64::new(0.3, 0.1)], RATE).unwrap();
            let rot = e.map(|x| x * C64::from_polar(1.0, phi)).unwrap();
            let a = iq_modulate(&e, &[vi], &[vq], &m).unwrap().samples()[0] * C64::from_polar(1.0, phi);
            let b = iq_modulate(&rot, &[vi], &[vq], &m).unwrap().samples()[0];
            prop_assert!((a - b).norm() < 1e-15);
        }

        #[test]
        fn dpd_residual_tracks_cross_talk_floor(g in g_strategy(), seed in 0u64..1000) {
            let s = qam_stream(1024, seed);
            let (out, sat) = dpd_chain(g, &s, 0.002);
            prop_assert_eq!(sat, 0.0);
            let r = affine_residual(&s, &out);
            prop_assert!(r < 1.5 * predicted_floor(&g) + 1e-6, "residual {} floor {}", r, predicted_floor(&g));
        }
    }
}
