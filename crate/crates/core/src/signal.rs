//! Sample-level signal types and primitives.
//!
//! Filters use zero-padded linear convolution with the group delay removed,
//! so every stage keeps its input's time base and length. Spectral operations
//! (resampling, frequency-domain masks) act on the whole waveform with an
//! exact-length transform.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type C64 = Complex<f64>;

/// Uniformly sampled complex baseband sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<C64>,
    sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<C64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(invalid("sample_rate", format!("must be positive, got {sample_rate}")));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(invalid("samples", format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Builds a waveform from real samples (imaginary part zero).
    pub fn from_real(samples: &[f64], sample_rate: f64) -> Result<Self> {
        Self::new(samples.iter().map(|&x| C64::new(x, 0.0)).collect(), sample_rate)
    }

    pub(crate) fn from_parts_unchecked(samples: Vec<C64>, sample_rate: f64) -> Self {
        debug_assert!(samples.iter().all(|s| s.re.is_finite() && s.im.is_finite()));
        Self { samples, sample_rate }
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<C64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of |x|².
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_parts_unchecked(self.samples.iter().map(|&s| s * factor).collect(), self.sample_rate)
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.re).collect()
    }

    pub fn imag_part(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.im).collect()
    }

    /// Applies a pointwise map, checking finiteness of the result.
    pub fn map(&self, f: impl Fn(C64) -> C64) -> Result<Self> {
        Self::new(self.samples.iter().map(|&s| f(s)).collect(), self.sample_rate)
    }

    /// Multiplies the spectrum by `gain(f)`, with `f` the signed bin frequency in Hz.
    pub fn apply_spectral(&self, gain: impl Fn(f64) -> C64) -> Result<Self> {
        let mut spec = fft_forward(&self.samples);
        for (k, bin) in spec.iter_mut().enumerate() {
            *bin *= gain(bin_frequency(k, self.len(), self.sample_rate));
        }
        Self::new(fft_inverse(spec), self.sample_rate)
    }
}

/// Real-valued uniformly sampled sequence (photocurrents, drive rails).
#[derive(Clone, Debug, PartialEq)]
pub struct RealSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl RealSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(invalid("sample_rate", format!("must be positive, got {sample_rate}")));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(invalid("samples", "non-finite sample"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.samples)
    }
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

pub fn mean_power(x: &[C64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|s| s.norm_sqr()).sum::<f64>() / x.len() as f64
    }
}

pub fn db10(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db10(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalized forward DFT.
pub fn fft_forward(x: &[C64]) -> Vec<C64> {
    let mut buf = x.to_vec();
    if !buf.is_empty() {
        plan(buf.len(), false).process(&mut buf);
    }
    buf
}

/// Inverse DFT normalized by 1/N.
pub fn fft_inverse(mut spec: Vec<C64>) -> Vec<C64> {
    let n = spec.len();
    if n == 0 {
        return spec;
    }
    plan(n, true).process(&mut spec);
    let scale = 1.0 / n as f64;
    spec.iter_mut().for_each(|s| *s *= scale);
    spec
}

/// Signed frequency of DFT bin `k` for an `n`-point transform.
pub fn bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k * sample_rate / n as f64
}

/// Root-raised-cosine pulse shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RrcSpec {
    pub rolloff: f64,
    pub span_symbols: usize,
    pub samples_per_symbol: usize,
}

impl RrcSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(invalid("rolloff", format!("must lie in [0, 1], got {}", self.rolloff)));
        }
        if self.span_symbols < 4 {
            return Err(invalid("span_symbols", format!("must be >= 4, got {}", self.span_symbols)));
        }
        if self.samples_per_symbol < 2 {
            return Err(invalid(
                "samples_per_symbol",
                format!("must be >= 2, got {}", self.samples_per_symbol),
            ));
        }
        Ok(())
    }

    pub fn num_taps(&self) -> usize {
        self.span_symbols * self.samples_per_symbol + 1
    }
}

/// Unit-energy RRC taps, `span·sps + 1` long and centered.
pub fn rrc_taps(spec: &RrcSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let beta = spec.rolloff;
    let sps = spec.samples_per_symbol as f64;
    let n = spec.num_taps();
    let center = (n - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - center) / sps;
            rrc_impulse(t, beta)
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    Ok(taps)
}

/// Continuous RRC impulse response at time `t` in symbol periods.
fn rrc_impulse(t: f64, beta: f64) -> f64 {
    if t.abs() < 1e-12 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    if beta > 0.0 && ((4.0 * beta * t).abs() - 1.0).abs() < 1e-9 {
        let a = PI / (4.0 * beta);
        return beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

/// Linear convolution with `taps`, shifted by `(taps.len() - 1) / 2` so the
/// output is time-aligned with the input and of equal length.
pub fn fir_filter(w: &Waveform, taps: &[f64]) -> Result<Waveform> {
    if taps.is_empty() {
        return Err(invalid("taps", "must be non-empty"));
    }
    let out = convolve_same(w.samples(), taps);
    Waveform::new(out, w.sample_rate())
}

pub(crate) fn convolve_same(x: &[C64], taps: &[f64]) -> Vec<C64> {
    if x.is_empty() {
        return Vec::new();
    }
    let delay = (taps.len() - 1) / 2;
    let full = x.len() + taps.len() - 1;
    if taps.len() <= 16 {
        return (0..x.len())
            .map(|k| {
                let j = k + delay;
                let lo = j.saturating_sub(x.len() - 1);
                let hi = j.min(taps.len() - 1);
                (lo..=hi).map(|t| x[j - t] * taps[t]).sum()
            })
            .collect();
    }
    let nfft = full.next_power_of_two();
    let mut a = vec![C64::new(0.0, 0.0); nfft];
    a[..x.len()].copy_from_slice(x);
    let mut b = vec![C64::new(0.0, 0.0); nfft];
    for (dst, &t) in b.iter_mut().zip(taps) {
        *dst = C64::new(t, 0.0);
    }
    let fa = fft_forward(&a);
    let fb = fft_forward(&b);
    let prod: Vec<C64> = fa.iter().zip(&fb).map(|(p, q)| p * q).collect();
    let conv = fft_inverse(prod);
    conv[delay..delay + x.len()].to_vec()
}

/// Band-limited rate conversion by spectral zero-padding or truncation.
///
/// The output length must come out integral: `len · new_rate / old_rate`.
pub fn resample(w: &Waveform, new_rate: f64) -> Result<Waveform> {
    if !(new_rate.is_finite() && new_rate > 0.0) {
        return Err(invalid("new_rate", format!("must be positive, got {new_rate}")));
    }
    let n = w.len();
    let exact = n as f64 * new_rate / w.sample_rate();
    let m = exact.round() as usize;
    if (exact - m as f64).abs() > 1e-6 * exact.max(1.0) {
        return Err(invalid(
            "new_rate",
            format!("output length {exact} is not integral for {n} samples"),
        ));
    }
    if m == n {
        return Waveform::new(w.samples().to_vec(), new_rate);
    }
    if n == 0 || m == 0 {
        return Waveform::new(Vec::new(), new_rate);
    }
    let x = fft_forward(w.samples());
    let mut y = vec![C64::new(0.0, 0.0); m];
    let l = n.min(m);
    let pos = l.div_ceil(2); // DC and positive bins below the shared Nyquist
    let neg = l / 2; // negative bins, including the shared Nyquist when l is even
    y[..pos].copy_from_slice(&x[..pos]);
    for i in 1..=neg {
        y[m - i] = x[n - i];
    }
    if l.is_multiple_of(2) {
        let k = l / 2;
        if m > n {
            // split the input Nyquist bin symmetrically
            let half = x[k] * 0.5;
            y[k] = half;
            y[m - k] = half;
        } else {
            y[k] = x[k] + x[n - k];
        }
    }
    let scale = m as f64 / n as f64;
    let out: Vec<C64> = fft_inverse(y).into_iter().map(|s| s * scale).collect();
    Waveform::new(out, new_rate)
}

/// Multiplies by `exp(j·2π·offset·t)`.
pub fn frequency_shift(w: &Waveform, offset: f64) -> Result<Waveform> {
    if !offset.is_finite() || offset.abs() >= w.sample_rate() / 2.0 {
        return Err(invalid(
            "offset",
            format!("|{offset}| must be below half the sample rate {}", w.sample_rate() / 2.0),
        ));
    }
    if offset == 0.0 {
        return Ok(w.clone());
    }
    let step = 2.0 * PI * offset / w.sample_rate();
    let out = w
        .samples()
        .iter()
        .enumerate()
        .map(|(k, &s)| s * C64::from_polar(1.0, step * k as f64))
        .collect();
    Waveform::new(out, w.sample_rate())
}

fn rail_rms(x: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = x.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Per-rail saturation at frozen levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clipper {
    pub level_re: f64,
    pub level_im: f64,
}

impl Clipper {
    /// Levels at `clipping_ratio_db` above each rail's RMS.
    pub fn from_ratio(w: &Waveform, clipping_ratio_db: f64) -> Result<Self> {
        if !clipping_ratio_db.is_finite() {
            return Err(invalid("clipping_ratio_db", "must be finite"));
        }
        let k = 10f64.powf(clipping_ratio_db / 20.0);
        Ok(Self {
            level_re: k * rail_rms(w.samples().iter().map(|s| s.re)),
            level_im: k * rail_rms(w.samples().iter().map(|s| s.im)),
        })
    }

    pub fn apply(&self, w: &Waveform) -> Waveform {
        let out = w
            .samples()
            .iter()
            .map(|s| {
                C64::new(
                    s.re.clamp(-self.level_re, self.level_re),
                    s.im.clamp(-self.level_im, self.level_im),
                )
            })
            .collect();
        Waveform::from_parts_unchecked(out, w.sample_rate())
    }
}

/// Clips each rail at `clipping_ratio_db` above its RMS.
pub fn clip(w: &Waveform, clipping_ratio_db: f64) -> Result<Waveform> {
    Ok(Clipper::from_ratio(w, clipping_ratio_db)?.apply(w))
}

/// Uniform mid-rise quantizer with per-rail ranges frozen at construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantizer {
    pub levels: u64,
    pub range_re: (f64, f64),
    pub range_im: (f64, f64),
}

impl Quantizer {
    pub fn with_ranges(enob: u32, range_re: (f64, f64), range_im: (f64, f64)) -> Result<Self> {
        if !(1..=52).contains(&enob) {
            return Err(invalid("enob", format!("must be in 1..=52, got {enob}")));
        }
        Ok(Self {
            levels: 1u64 << enob,
            range_re,
            range_im,
        })
    }

    /// Ranges taken from the per-rail minimum and maximum of `w`.
    pub fn fit(w: &Waveform, enob: u32) -> Result<Self> {
        let range = |f: fn(&C64) -> f64| {
            w.samples()
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let mut re = range(|s| s.re);
        let mut im = range(|s| s.im);
        if w.is_empty() {
            re = (0.0, 0.0);
            im = (0.0, 0.0);
        }
        Self::with_ranges(enob, re, im)
    }

    fn quantize_rail(&self, x: f64, (lo, hi): (f64, f64)) -> f64 {
        let span = hi - lo;
        if span <= 0.0 {
            return lo;
        }
        let step = span / self.levels as f64;
        let idx = ((x - lo) / step).floor().clamp(0.0, (self.levels - 1) as f64);
        lo + (idx + 0.5) * step
    }

    pub fn apply(&self, w: &Waveform) -> Waveform {
        let out = w
            .samples()
            .iter()
            .map(|s| {
                C64::new(
                    self.quantize_rail(s.re, self.range_re),
                    self.quantize_rail(s.im, self.range_im),
                )
            })
            .collect();
        Waveform::from_parts_unchecked(out, w.sample_rate())
    }

    pub fn apply_real(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.quantize_rail(v, self.range_re)).collect()
    }
}

/// Quantizes each rail to `enob` bits over its own min/max range.
pub fn quantize(w: &Waveform, enob: u32) -> Result<Waveform> {
    Ok(Quantizer::fit(w, enob)?.apply(w))
}
