//! Three-branch phase-diverse direct-detection front end.
//!
//! The residual carrier is phase-shifted by +θ, 0 and −θ in three copies of
//! the received field. After square-law detection, two linear combinations of
//! the photocurrents recover the in-phase and quadrature components of the
//! signal while the signal–signal beat and the carrier power cancel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optics::{photodiode, PdParams};
use crate::rng::derive_seed;
use crate::signal::{RealSignal, Waveform, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiverParams {
    pub theta_rad: f64,
    /// Common deviation applied to both shifted branches.
    pub delta_theta_rad: f64,
    pub delta_theta_1_rad: f64,
    pub delta_theta_2_rad: f64,
    pub carrier_filter_bw_hz: f64,
    /// Field amplitude factor of the splitter, per branch.
    pub split_amplitude: f64,
}

impl Default for ReceiverParams {
    fn default() -> Self {
        Self {
            theta_rad: optimal_theta(),
            delta_theta_rad: 0.0,
            delta_theta_1_rad: 0.0,
            delta_theta_2_rad: 0.0,
            carrier_filter_bw_hz: 2e9,
            split_amplitude: 1.0 / 3f64.sqrt(),
        }
    }
}

impl ReceiverParams {
    pub fn validate(&self, guard_band_hz: f64) -> Result<()> {
        if !(self.theta_rad > 0.0 && self.theta_rad < PI) {
            return Err(invalid("theta_rad", format!("must lie in (0, π), got {}", self.theta_rad)));
        }
        for (name, v) in [
            ("delta_theta_rad", self.delta_theta_rad),
            ("delta_theta_1_rad", self.delta_theta_1_rad),
            ("delta_theta_2_rad", self.delta_theta_2_rad),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if !(self.carrier_filter_bw_hz > 0.0) {
            return Err(invalid("carrier_filter_bw_hz", "must be positive"));
        }
        if self.carrier_filter_bw_hz > guard_band_hz {
            return Err(invalid(
                "carrier_filter_bw_hz",
                format!("{} Hz exceeds the {guard_band_hz} Hz guard band", self.carrier_filter_bw_hz),
            ));
        }
        if !(self.split_amplitude > 0.0 && self.split_amplitude.is_finite()) {
            return Err(invalid("split_amplitude", "must be positive"));
        }
        Ok(())
    }

    /// Carrier phase applied in branches 1, 2 and 3.
    pub fn branch_phases(&self) -> [f64; 3] {
        [
            self.theta_rad + self.delta_theta_rad + self.delta_theta_1_rad,
            0.0,
            -(self.theta_rad + self.delta_theta_rad + self.delta_theta_2_rad),
        ]
    }
}

/// Splits `e` three ways and rotates only the spectral content within
/// `±carrier_filter_bw/2` of DC in each branch.
pub fn split_and_shift(e: &Waveform, r: &ReceiverParams, guard_band_hz: f64) -> Result<[Waveform; 3]> {
    r.validate(guard_band_hz)?;
    let half = r.carrier_filter_bw_hz / 2.0;
    let amp = r.split_amplitude;
    let shift = |phase: f64| {
        let rot = C64::from_polar(amp, phase);
        e.apply_spectral(|f| if f.abs() <= half { rot } else { C64::new(amp, 0.0) })
    };
    let [p1, _, p3] = r.branch_phases();
    Ok([shift(p1)?, e.scaled(amp), shift(p3)?])
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchCurrents {
    pub i1: RealSignal,
    pub i2: RealSignal,
    pub i3: RealSignal,
}

impl BranchCurrents {
    pub fn new(i1: RealSignal, i2: RealSignal, i3: RealSignal) -> Result<Self> {
        if i1.len() != i2.len() || i1.len() != i3.len() {
            return Err(Error::LengthMismatch {
                context: "branch currents",
                left: i1.len(),
                right: if i1.len() != i2.len() { i2.len() } else { i3.len() },
            });
        }
        if i1.sample_rate != i2.sample_rate || i1.sample_rate != i3.sample_rate {
            return Err(invalid("sample_rate", "branch currents must share a sample rate"));
        }
        Ok(Self { i1, i2, i3 })
    }

    pub fn len(&self) -> usize {
        self.i1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i1.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.i1.sample_rate
    }

    /// Subtracts each branch's own mean.
    pub fn remove_dc(&self) -> Self {
        let centre = |s: &RealSignal| {
            let m = s.mean();
            RealSignal { samples: s.samples.iter().map(|x| x - m).collect(), sample_rate: s.sample_rate }
        };
        Self { i1: centre(&self.i1), i2: centre(&self.i2), i3: centre(&self.i3) }
    }

    /// Restricts all branches to `range`.
    pub fn window(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start > range.end {
            return Err(invalid("range", format!("{range:?} outside 0..{}", self.len())));
        }
        let cut = |s: &RealSignal| RealSignal { samples: s.samples[range.clone()].to_vec(), sample_rate: s.sample_rate };
        Ok(Self { i1: cut(&self.i1), i2: cut(&self.i2), i3: cut(&self.i3) })
    }
}

/// Detects the three branches with independent noise seeds derived from `seed`.
pub fn detect_branches(branches: &[Waveform; 3], pd: &PdParams, seed: u64) -> Result<BranchCurrents> {
    let [a, b, c] = branches;
    if a.len() != b.len() || a.len() != c.len() {
        return Err(Error::LengthMismatch { context: "optical branches", left: a.len(), right: b.len().max(c.len()) });
    }
    BranchCurrents::new(
        photodiode(a, pd, derive_seed(seed, 1))?,
        photodiode(b, pd, derive_seed(seed, 2))?,
        photodiode(c, pd, derive_seed(seed, 3))?,
    )
}

fn check_theta(theta: f64) -> Result<()> {
    if !theta.is_finite() {
        return Err(Error::Singular { theta, reason: "theta is not finite" });
    }
    if (theta.cos() - 1.0).abs() < 1e-9 {
        return Err(Error::Singular { theta, reason: "cos(theta) - 1 vanishes; in-phase combination undefined" });
    }
    if theta.sin().abs() < 1e-9 {
        return Err(Error::Singular { theta, reason: "sin(theta) vanishes; quadrature combination undefined" });
    }
    Ok(())
}

/// `ŝ_i = (i1 + i3 − 2·i2)/(4c(cosθ − 1))`, `ŝ_q = (i1 − i3)/(4c·sinθ)`.
pub fn reconstruct(b: &BranchCurrents, c_amp: f64, theta: f64) -> Result<Waveform> {
    check_theta(theta)?;
    if !(c_amp > 0.0 && c_amp.is_finite()) {
        return Err(invalid("c_amp", format!("must be positive, got {c_amp}")));
    }
    let den_i = 4.0 * c_amp * (theta.cos() - 1.0);
    let den_q = 4.0 * c_amp * theta.sin();
    let out = b
        .i1
        .samples
        .iter()
        .zip(&b.i2.samples)
        .zip(&b.i3.samples)
        .map(|((&x1, &x2), &x3)| C64::new((x1 + x3 - 2.0 * x2) / den_i, (x1 - x3) / den_q))
        .collect();
    Waveform::new(out, b.sample_rate())
}

/// Noise variances of the reconstructed in-phase and quadrature components
/// for white branch noise of variance `delta²`.
pub fn noise_variances(c: f64, delta: f64, theta: f64) -> (f64, f64) {
    let d2 = delta * delta;
    (
        3.0 * d2 / (8.0 * c * c * (theta.cos() - 1.0).powi(2)),
        d2 / (8.0 * c * c * theta.sin().powi(2)),
    )
}

/// Per-quadrature SNRs `(SNR_i, SNR_q)` for signal power `p_s` split evenly
/// between the quadratures.
pub fn theoretical_snr(p_s: f64, c: f64, delta: f64, theta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(invalid("delta", format!("must be positive, got {delta}")));
    }
    let k = p_s * c * c / (delta * delta);
    Ok((4.0 * k * (theta.cos() - 1.0).powi(2) / 3.0, 4.0 * k * theta.sin().powi(2)))
}

/// `3·sin²θ − (cosθ − 1)²`; zero where both quadratures see equal SNR.
pub fn theta_balance_residual(theta: f64) -> f64 {
    3.0 * theta.sin().powi(2) - (theta.cos() - 1.0).powi(2)
}

pub fn optimal_theta() -> f64 {
    2.0 * PI / 3.0
}

/// Least-squares carrier current scale: regresses the unit-scale
/// reconstruction of `b` onto `reference` and returns `|⟨ref, ŝ⟩| / ‖ref‖²`.
/// The residual phase is left to the later constant rotation.
pub fn estimate_carrier_scale(b: &BranchCurrents, reference: &[C64], theta: f64) -> Result<f64> {
    if reference.len() != b.len() {
        return Err(Error::LengthMismatch { context: "carrier-scale reference", left: reference.len(), right: b.len() });
    }
    let energy: f64 = reference.iter().map(|x| x.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(invalid("reference", "zero-power preamble reference"));
    }
    let unit = reconstruct(b, 1.0, theta)?;
    let corr: C64 = reference.iter().zip(unit.samples()).map(|(r, u)| r.conj() * u).sum();
    let scale = corr.norm() / energy;
    if !(scale > 0.0) {
        return Err(invalid("reference", "reference is orthogonal to the received signal"));
    }
    Ok(scale)
}
