//! Closed-form pre-distortion and offset correction for an IQ modulator with
//! finite extinction ratio.
//!
//! The coefficients invert the modulator transfer of [`crate::optics::iq_modulate`]
//! to second order in the drive: the linear terms undo the arm-path imbalance,
//! the constant terms cancel the residual carrier leaking from the opposite
//! rail, and the quadratic terms cancel that leak's dependence on the
//! opposite rail's drive.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Split-ratio / path-loss imbalance of the inner (I, Q) and outer (P) MZIs.
/// `1` is a perfectly balanced interferometer (infinite extinction ratio).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSet {
    pub g_i: f64,
    pub g_q: f64,
    pub g_p: f64,
}

impl ImbalanceSet {
    pub fn new(g_i: f64, g_q: f64, g_p: f64) -> Result<Self> {
        for (name, g) in [("g_i", g_i), ("g_q", g_q), ("g_p", g_p)] {
            if !(g > 0.0 && g <= 1.0) {
                return Err(invalid(name, format!("must lie in (0, 1], got {g}")));
            }
        }
        Ok(Self { g_i, g_q, g_p })
    }

    pub const IDEAL: Self = Self { g_i: 1.0, g_q: 1.0, g_p: 1.0 };

    /// Inner extinction ratio applied to both I and Q, outer ratio to P.
    pub fn from_er_db(er_inner_db: f64, er_outer_db: f64) -> Result<Self> {
        let gi = er_to_imbalance(er_inner_db)?;
        let gp = er_to_imbalance(er_outer_db)?;
        Self::new(gi, gi, gp)
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.g_i, self.g_q, self.g_p).map(|_| ())
    }
}

/// Inverts `ER = ((1 + g)/(1 - g))²`. `f64::INFINITY` maps to `g = 1`.
pub fn er_to_imbalance(er_db: f64) -> Result<f64> {
    if er_db == f64::INFINITY {
        return Ok(1.0);
    }
    if !(er_db.is_finite() && er_db > 0.0) {
        return Err(invalid("er_db", format!("must be positive, got {er_db}")));
    }
    let root = 10f64.powf(er_db / 20.0);
    Ok((root - 1.0) / (root + 1.0))
}

/// Linear extinction ratio `((1 + g)/(1 - g))²`.
pub fn imbalance_to_er(g: f64) -> f64 {
    ((1.0 + g) / (1.0 - g)).powi(2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpdCoefficients {
    pub a_i: f64,
    pub b_i: f64,
    pub c_i: f64,
    pub d_i: f64,
    pub a_q: f64,
    pub b_q: f64,
    pub c_q: f64,
    pub d_q: f64,
}

impl DpdCoefficients {
    pub fn compute(g: &ImbalanceSet) -> Self {
        let (gi, gq, gp) = (g.g_i, g.g_q, g.g_p);
        let (ri, rq, rp) = (gi.sqrt(), gq.sqrt(), gp.sqrt());
        let path_i = ((1.0 + gp) * (1.0 + gi)).sqrt();
        let path_q = ((1.0 + gp) * (1.0 + gq)).sqrt();

        // a_Q and c_Q feed b_I, d_I; a_I and c_I feed b_Q, d_Q.
        let a_i = path_i / (rp * (1.0 + ri));
        let a_q = path_q / (1.0 + rq);
        // leak of the Q rail's carrier into I, and of I's into Q
        let leak_q = (rq - 1.0) / path_q;
        let leak_i = rp * (1.0 - ri) / path_i;

        let c_i = -a_i * leak_q;
        let c_q = -a_q * leak_i;
        let b_i = 0.5 * a_i * leak_q * a_q * a_q;
        let d_i = a_i * leak_q * a_q * c_q;
        let b_q = 0.5 * a_q * leak_i * a_i * a_i;
        let d_q = a_q * leak_i * a_i * c_i;

        Self { a_i, b_i, c_i, d_i, a_q, b_q, c_q, d_q }
    }

    /// Drive-domain targets `(θ_I, θ_Q)` for one target sample.
    pub fn theta(&self, s_i: f64, s_q: f64) -> (f64, f64) {
        (
            self.a_i * s_i + self.b_i * s_q * s_q + self.d_i * s_q + self.c_i,
            self.a_q * s_q + self.b_q * s_i * s_i + self.d_q * s_i + self.c_q,
        )
    }
}

/// Half-wave and bias voltage of one inner MZI rail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RailVoltage {
    pub v_pi: f64,
    pub v_bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriveSignals {
    pub v_i: Vec<f64>,
    pub v_q: Vec<f64>,
    /// Share of samples where either rail's `|θ| > 1` hit the arcsine limit.
    pub saturation_fraction: f64,
}

/// `v = (Vπ/π)(arcsin(sign(θ)·min(|θ|, 1)) − π/2) − V_bias` applied to the
/// pre-distorted targets.
pub fn predistort(
    s_i: &[f64],
    s_q: &[f64],
    coeffs: &DpdCoefficients,
    rail_i: RailVoltage,
    rail_q: RailVoltage,
) -> Result<DriveSignals> {
    if s_i.len() != s_q.len() {
        return Err(crate::Error::LengthMismatch {
            context: "predistort rails",
            left: s_i.len(),
            right: s_q.len(),
        });
    }
    let mut saturated = 0usize;
    let mut v_i = Vec::with_capacity(s_i.len());
    let mut v_q = Vec::with_capacity(s_q.len());
    for (&si, &sq) in s_i.iter().zip(s_q) {
        let (ti, tq) = coeffs.theta(si, sq);
        if ti.abs() > 1.0 || tq.abs() > 1.0 {
            saturated += 1;
        }
        v_i.push(arcsine_drive(ti, rail_i));
        v_q.push(arcsine_drive(tq, rail_q));
    }
    let saturation_fraction = if s_i.is_empty() { 0.0 } else { saturated as f64 / s_i.len() as f64 };
    Ok(DriveSignals { v_i, v_q, saturation_fraction })
}

fn arcsine_drive(theta: f64, rail: RailVoltage) -> f64 {
    let limited = theta.signum() * theta.abs().min(1.0);
    let limited = if theta == 0.0 { 0.0 } else { limited };
    rail.v_pi / PI * (limited.asin() - PI / 2.0) - rail.v_bias
}

/// Drive without pre-distortion: the target maps linearly onto arm phase
/// around the null, `v = (Vπ/π)(x − π/2) − V_bias`.
pub fn linear_drive(s_i: &[f64], s_q: &[f64], rail_i: RailVoltage, rail_q: RailVoltage) -> Result<DriveSignals> {
    if s_i.len() != s_q.len() {
        return Err(crate::Error::LengthMismatch {
            context: "linear drive rails",
            left: s_i.len(),
            right: s_q.len(),
        });
    }
    let map = |x: f64, r: RailVoltage| r.v_pi / PI * (x - PI / 2.0) - r.v_bias;
    Ok(DriveSignals {
        v_i: s_i.iter().map(|&x| map(x, rail_i)).collect(),
        v_q: s_q.iter().map(|&x| map(x, rail_q)).collect(),
        saturation_fraction: 0.0,
    })
}

/// How the offset correction uses the rail mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    /// `v − α·sign(⟨v⟩)·⟨v⟩`, i.e. subtract `α·|⟨v⟩|`.
    #[default]
    Literal,
    /// `v − α·⟨v⟩`.
    Signed,
}

pub fn offset_correct(v: &[f64], alpha: f64, mode: OffsetMode) -> Result<Vec<f64>> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("must be finite and >= 0, got {alpha}")));
    }
    let mean = crate::signal::mean(v);
    let shift = match mode {
        OffsetMode::Literal => alpha * sign(mean) * mean,
        OffsetMode::Signed => alpha * mean,
    };
    Ok(v.iter().map(|&x| x - shift).collect())
}

/// Signum with `sign(0) = 0`.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
