//! Transmit DSP: 32-QAM mapping, framing, RRC shaping, subcarrier
//! multiplexing and zero-forcing pre-emphasis.

use std::f64::consts::LN_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream, stream_rng};
use crate::signal::{fir_filter, frequency_shift, resample, rrc_taps, RrcSpec, Waveform, C64};

pub const BITS_PER_SYMBOL: usize = 5;
pub const QAM_ORDER: usize = 32;

/// Grid coordinates (odd integers) of each 5-bit label on the cross constellation.
///
/// Labels come from a 4×8 Gray-coded rectangle (3 bits on the 8 columns, 2 on
/// the 4 rows); the two outer columns are folded onto the top and bottom rows.
fn label_coordinates(label: usize) -> (i32, i32) {
    let col_bits = label >> 2;
    let row_bits = label & 0b11;
    let col = gray_decode(col_bits) as i32; // 0..8
    let row = gray_decode(row_bits) as i32; // 0..4
    let x = 2 * col - 7;
    let y = 2 * row - 3;
    if x.abs() == 7 {
        let fx = x.signum() * if y.abs() == 3 { 1 } else { 3 };
        (fx, y.signum() * 5)
    } else {
        (x, y)
    }
}

fn gray_decode(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

/// Unit-average-power 32-QAM cross constellation, indexed by label.
pub fn qam32_points() -> [C64; QAM_ORDER] {
    let scale = 1.0 / 20f64.sqrt();
    std::array::from_fn(|label| {
        let (x, y) = label_coordinates(label);
        C64::new(x as f64 * scale, y as f64 * scale)
    })
}

/// Maps bits (one per byte, 0 or 1) onto 32-QAM symbols, MSB first.
pub fn map_bits_to_qam(bits: &[u8], order: usize) -> Result<Vec<C64>> {
    if order != QAM_ORDER {
        return Err(invalid("order", format!("only 32-QAM is supported, got {order}")));
    }
    if !bits.len().is_multiple_of(BITS_PER_SYMBOL) {
        return Err(invalid(
            "bits",
            format!("length {} not divisible by {BITS_PER_SYMBOL}", bits.len()),
        ));
    }
    let points = qam32_points();
    Ok(bits
        .chunks_exact(BITS_PER_SYMBOL)
        .map(|chunk| {
            let label = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | usize::from(b & 1));
            points[label]
        })
        .collect())
}

/// Minimum-distance decision; returns the label.
pub fn decide_label(symbol: C64) -> usize {
    let points = qam32_points();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (label, p) in points.iter().enumerate() {
        let d = (symbol - p).norm_sqr();
        if d < best_d {
            best_d = d;
            best = label;
        }
    }
    best
}

pub fn label_bits(label: usize) -> [u8; BITS_PER_SYMBOL] {
    std::array::from_fn(|i| ((label >> (BITS_PER_SYMBOL - 1 - i)) & 1) as u8)
}

/// Hard-decision demapping back to bits.
pub fn demap(symbols: &[C64]) -> Vec<u8> {
    symbols.iter().flat_map(|&s| label_bits(decide_label(s))).collect()
}

/// Uniform random bits for `n_symbols` symbols.
pub fn random_bits(n_symbols: usize, seed: u64, band: u64) -> Vec<u8> {
    let mut rng = stream_rng(seed, stream::BITS + 256 * band);
    (0..n_symbols * BITS_PER_SYMBOL).map(|_| rng.random_range(0..2u8)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QamFrame {
    pub payload_symbols: Vec<C64>,
    pub preamble_symbols: Vec<C64>,
    pub payload_bits: Vec<u8>,
    pub bits_per_symbol: usize,
}

impl QamFrame {
    pub fn len(&self) -> usize {
        self.preamble_symbols.len() + self.payload_symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Preamble followed by payload.
    pub fn symbols(&self) -> Vec<C64> {
        let mut v = self.preamble_symbols.clone();
        v.extend_from_slice(&self.payload_symbols);
        v
    }
}

/// Seeded pseudo-random QPSK preamble drawn from the (±3 ± 3j) corner points
/// of the constellation.
pub fn preamble(len: usize, seed: u64) -> Vec<C64> {
    let a = 3.0 / 20f64.sqrt();
    let mut rng = stream_rng(seed, stream::PREAMBLE);
    (0..len)
        .map(|_| {
            let q: u8 = rng.random_range(0..4);
            C64::new(if q & 1 == 0 { a } else { -a }, if q & 2 == 0 { a } else { -a })
        })
        .collect()
}

pub fn build_frame(bits: &[u8], preamble_len: usize, seed: u64) -> Result<QamFrame> {
    if preamble_len < 64 {
        return Err(invalid("preamble_len", format!("must be >= 64, got {preamble_len}")));
    }
    let payload_symbols = map_bits_to_qam(bits, QAM_ORDER)?;
    Ok(QamFrame {
        payload_symbols,
        preamble_symbols: preamble(preamble_len, seed),
        payload_bits: bits.to_vec(),
        bits_per_symbol: BITS_PER_SYMBOL,
    })
}

/// Digital subcarrier layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubcarrierPlan {
    pub n_bands: usize,
    pub symbol_rate_hz: f64,
    pub guard_band_hz: f64,
    pub rolloff: f64,
}

impl SubcarrierPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_bands == 0 {
            return Err(invalid("n_bands", "must be >= 1"));
        }
        if !(self.symbol_rate_hz > 0.0) {
            return Err(invalid("symbol_rate_hz", "must be positive"));
        }
        if !(self.guard_band_hz >= 0.0) {
            return Err(invalid("guard_band_hz", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(invalid("rolloff", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Occupied bandwidth of one subcarrier.
    pub fn occupied_hz(&self) -> f64 {
        self.symbol_rate_hz * (1.0 + self.rolloff)
    }

    /// Center frequency of `band`; bands are spaced by occupied + guard and
    /// placed symmetrically around DC.
    pub fn center_offset_hz(&self, band: usize) -> f64 {
        let spacing = self.occupied_hz() + self.guard_band_hz;
        (band as f64 - (self.n_bands as f64 - 1.0) / 2.0) * spacing
    }

    /// Highest occupied frequency magnitude.
    pub fn band_edge_hz(&self) -> f64 {
        self.center_offset_hz(self.n_bands - 1).abs() + self.occupied_hz() / 2.0
    }

    pub fn line_rate_bps(&self) -> f64 {
        self.n_bands as f64 * self.symbol_rate_hz * BITS_PER_SYMBOL as f64
    }
}

/// Result of multiplexing: the unit-RMS composite plus what the receiver
/// needs to know about its layout.
#[derive(Clone, Debug)]
pub struct Composite {
    pub waveform: Waveform,
    /// Zero symbols placed before the preamble and after the payload.
    pub pad_symbols: usize,
    /// Factor applied to the raw sum to reach unit RMS.
    pub normalization: f64,
}

/// Zero symbols on each side of a frame so RRC tails are not truncated.
pub fn frame_padding(rrc: &RrcSpec) -> usize {
    rrc.span_symbols / 2 + 8
}

/// RRC-shaped single band at `rrc.samples_per_symbol` samples per symbol,
/// including the zero padding.
pub fn shape_band(frame: &QamFrame, rrc: &RrcSpec, symbol_rate_hz: f64) -> Result<Waveform> {
    let taps = rrc_taps(rrc)?;
    let sps = rrc.samples_per_symbol;
    let pad = frame_padding(rrc);
    let n_sym = frame.len() + 2 * pad;
    let mut up = vec![C64::new(0.0, 0.0); n_sym * sps];
    for (i, s) in frame.symbols().into_iter().enumerate() {
        up[(pad + i) * sps] = s;
    }
    let w = Waveform::new(up, symbol_rate_hz * sps as f64)?;
    fir_filter(&w, &taps)
}

/// Shapes each band, resamples to `out_rate`, shifts it to its center and sums.
pub fn shape_and_mux(
    frames: &[QamFrame],
    plan: &SubcarrierPlan,
    rrc: &RrcSpec,
    out_rate: f64,
) -> Result<Composite> {
    plan.validate()?;
    if frames.len() != plan.n_bands {
        return Err(invalid(
            "frames",
            format!("{} frames for {} bands", frames.len(), plan.n_bands),
        ));
    }
    if 2.0 * plan.band_edge_hz() >= out_rate {
        return Err(invalid(
            "out_rate",
            format!(
                "{out_rate} Hz cannot hold spectrum up to ±{} Hz without aliasing",
                plan.band_edge_hz()
            ),
        ));
    }
    let mut sum: Option<Vec<C64>> = None;
    for (band, frame) in frames.iter().enumerate() {
        let shaped = shape_band(frame, rrc, plan.symbol_rate_hz)?;
        let up = resample(&shaped, out_rate)?;
        let shifted = frequency_shift(&up, plan.center_offset_hz(band))?;
        match sum.as_mut() {
            None => sum = Some(shifted.into_samples()),
            Some(acc) => {
                if acc.len() != shifted.len() {
                    return Err(invalid("frames", "bands must have equal length"));
                }
                acc.iter_mut().zip(shifted.samples()).for_each(|(a, b)| *a += b);
            }
        }
    }
    let raw = Waveform::new(sum.unwrap_or_default(), out_rate)?;
    let p = raw.power();
    let normalization = if p > 0.0 { 1.0 / p.sqrt() } else { 1.0 };
    Ok(Composite {
        waveform: raw.scaled(normalization),
        pad_symbols: frame_padding(rrc),
        normalization,
    })
}

/// Magnitude response of the transmitter's analog path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyResponse {
    Flat,
    /// |H(f)| = exp(-(ln2/2)·(f/B)^(2N)): 3 dB down at `bandwidth_3db_hz`.
    SuperGaussian { order: u32, bandwidth_3db_hz: f64 },
}

impl FrequencyResponse {
    pub fn gain(&self, f: f64) -> f64 {
        match *self {
            FrequencyResponse::Flat => 1.0,
            FrequencyResponse::SuperGaussian { order, bandwidth_3db_hz } => {
                let x = (f / bandwidth_3db_hz).abs().powi(2 * order as i32);
                (-0.5 * LN_2 * x).exp()
            }
        }
    }
}

/// Applies the analog response (zero-phase).
pub fn apply_response(w: &Waveform, response: &FrequencyResponse) -> Result<Waveform> {
    if matches!(response, FrequencyResponse::Flat) {
        return Ok(w.clone());
    }
    w.apply_spectral(|f| C64::new(response.gain(f), 0.0))
}

/// Zero-forcing pre-emphasis: multiplies the spectrum by `1/H(f)` with the
/// boost capped at `max_boost_db`. `band_edge_hz` bounds the signal band in
/// which `|H|` must stay above `floor`.
pub fn pre_emphasis(
    w: &Waveform,
    response: &FrequencyResponse,
    max_boost_db: f64,
    band_edge_hz: f64,
    floor: f64,
) -> Result<Waveform> {
    if !(max_boost_db >= 0.0) {
        return Err(invalid("max_boost_db", "must be non-negative"));
    }
    if matches!(response, FrequencyResponse::Flat) {
        return Ok(w.clone());
    }
    // probe the signal band for nulls
    let probes = 1024;
    for i in 0..=probes {
        let f = band_edge_hz * i as f64 / probes as f64;
        if response.gain(f) < floor {
            return Err(invalid(
                "response",
                format!("|H({f:.3e} Hz)| = {:.3e} below floor {floor:.1e}", response.gain(f)),
            ));
        }
    }
    let max_gain = 10f64.powf(max_boost_db / 20.0);
    w.apply_spectral(|f| {
        let h = response.gain(f);
        let g = if h > 0.0 { (1.0 / h).min(max_gain) } else { max_gain };
        C64::new(g, 0.0)
    })
}
