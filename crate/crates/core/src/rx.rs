//! Receiver DSP after the optical front end: dispersion compensation, the
//! 3×1 adaptive equalizer, subcarrier demultiplexing, synchronization, phase
//! correction, decisions and link metrics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optics::FiberParams;
use crate::signal::{db10, fft_forward, fft_inverse, fir_filter, frequency_shift, resample, rrc_taps, RrcSpec, Waveform, C64};
use crate::tx::{decide_label, label_bits, qam32_points, QamFrame, SubcarrierPlan};

/// Inverse of the fiber's dispersion (conjugate phase, no amplitude change).
pub fn cd_compensate(s: &Waveform, f: &FiberParams) -> Result<Waveform> {
    f.validate()?;
    s.apply_spectral(|freq| C64::from_polar(1.0, -f.cd_phase(freq)))
}

/// Shifts `band` to DC, resamples to `rrc.samples_per_symbol` and applies the
/// matched RRC filter.
pub fn demux_subcarrier(s: &Waveform, plan: &SubcarrierPlan, rrc: &RrcSpec, band: usize) -> Result<Waveform> {
    plan.validate()?;
    if band >= plan.n_bands {
        return Err(invalid("band", format!("{band} out of range for {} bands", plan.n_bands)));
    }
    let centred = frequency_shift(s, -plan.center_offset_hz(band))?;
    let rate = plan.symbol_rate_hz * rrc.samples_per_symbol as f64;
    let down = resample(&centred, rate)?;
    fir_filter(&down, &rrc_taps(rrc)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyncResult {
    /// Sample index of the first preamble symbol.
    pub offset: usize,
    pub peak: f64,
    pub psr_db: f64,
}

/// Default minimum peak-to-sidelobe ratio accepted by [`synchronize`].
pub const SYNC_PSR_THRESHOLD_DB: f64 = 6.0;

/// Locates `preamble` (one symbol every `sps` samples) in `s` by
/// cross-correlation. Sidelobes exclude `±sps` samples around the peak.
pub fn synchronize(s: &Waveform, preamble: &[C64], sps: usize, threshold_db: f64) -> Result<SyncResult> {
    if preamble.is_empty() || sps == 0 {
        return Err(invalid("preamble", "empty preamble or zero samples per symbol"));
    }
    let span = (preamble.len() - 1) * sps + 1;
    if s.len() < span {
        return Err(Error::LengthMismatch { context: "signal shorter than preamble", left: s.len(), right: span });
    }
    let n = (s.len() + span).next_power_of_two();
    let mut x = s.samples().to_vec();
    x.resize(n, C64::new(0.0, 0.0));
    let mut p = vec![C64::new(0.0, 0.0); n];
    for (k, v) in preamble.iter().enumerate() {
        p[k * sps] = *v;
    }
    let (xf, pf) = (fft_forward(&x), fft_forward(&p));
    let corr = fft_inverse(xf.iter().zip(&pf).map(|(a, b)| a * b.conj()).collect());
    let valid = s.len() - span + 1;
    let mags: Vec<f64> = corr[..valid].iter().map(|c| c.norm()).collect();
    let (offset, peak) = mags
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, m)| if m > best.1 { (k, m) } else { best });
    let sidelobe = mags
        .iter()
        .enumerate()
        .filter(|(k, _)| k.abs_diff(offset) > sps)
        .map(|(_, m)| *m)
        .fold(0.0, f64::max);
    let psr_db = if sidelobe > 0.0 { 2.0 * db10(peak / sidelobe) } else { f64::INFINITY };
    if !(psr_db >= threshold_db) {
        return Err(Error::SyncFailure { psr_db, threshold_db });
    }
    Ok(SyncResult { offset, peak, psr_db })
}

/// Every `sps`-th sample starting at `offset`, `count` symbols.
pub fn downsample(s: &Waveform, offset: usize, sps: usize, count: usize) -> Result<Vec<C64>> {
    let last = offset + sps * count.saturating_sub(1);
    if count > 0 && last >= s.len() {
        return Err(Error::LengthMismatch { context: "downsample past end of signal", left: last + 1, right: s.len() });
    }
    Ok((0..count).map(|k| s.samples()[offset + k * sps]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseCorrection {
    pub phase: f64,
    pub gain: f64,
}

impl PhaseCorrection {
    /// Least-squares complex gain of `received` against `reference`.
    pub fn estimate(received: &[C64], reference: &[C64]) -> Result<Self> {
        if received.len() != reference.len() {
            return Err(Error::LengthMismatch { context: "phase window", left: received.len(), right: reference.len() });
        }
        let energy: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
        let corr: C64 = reference.iter().zip(received).map(|(r, x)| r.conj() * x).sum();
        if !(energy > 0.0) || corr.norm() == 0.0 {
            return Err(invalid("reference", "zero-energy estimation window"));
        }
        Ok(Self { phase: corr.arg(), gain: corr.norm() / energy })
    }

    pub fn apply(&self, symbols: &[C64]) -> Vec<C64> {
        let k = C64::from_polar(1.0 / self.gain, -self.phase);
        symbols.iter().map(|s| s * k).collect()
    }
}

/// Derotates (and rescales) `symbols` by the complex gain measured between
/// `received` and `reference`.
pub fn constant_phase_rotate(symbols: &[C64], received: &[C64], reference: &[C64]) -> Result<(Vec<C64>, PhaseCorrection)> {
    let pc = PhaseCorrection::estimate(received, reference)?;
    Ok((pc.apply(symbols), pc))
}

/// SNR reported when the error power is exactly zero.
pub const SNR_CAP_DB: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub bit_errors: u64,
    pub bits: u64,
    pub ber: f64,
    /// No errors observed: the true BER is only known to be below `1/bits`.
    pub ber_censored: bool,
    pub snr_db: f64,
    pub evm_db: f64,
}

/// Minimum-distance decisions against the payload of `frame`, with a
/// data-aided SNR.
pub fn decide_and_score(symbols: &[C64], frame: &QamFrame) -> Result<Score> {
    if symbols.len() != frame.payload_symbols.len() {
        return Err(Error::LengthMismatch {
            context: "received vs payload symbols",
            left: symbols.len(),
            right: frame.payload_symbols.len(),
        });
    }
    let mut bit_errors = 0u64;
    let mut err_pow = 0.0;
    let mut ref_pow = 0.0;
    for (k, (rx, tx)) in symbols.iter().zip(&frame.payload_symbols).enumerate() {
        let bits = label_bits(decide_label(*rx));
        let sent = &frame.payload_bits[k * frame.bits_per_symbol..(k + 1) * frame.bits_per_symbol];
        bit_errors += bits.iter().zip(sent).filter(|(a, b)| a != b).count() as u64;
        err_pow += (rx - tx).norm_sqr();
        ref_pow += tx.norm_sqr();
    }
    let bits = frame.payload_bits.len() as u64;
    let snr_db = if err_pow > 0.0 { db10(ref_pow / err_pow).min(SNR_CAP_DB) } else { SNR_CAP_DB };
    Ok(Score {
        bit_errors,
        bits,
        ber: if bits > 0 { bit_errors as f64 / bits as f64 } else { 0.0 },
        ber_censored: bit_errors == 0,
        snr_db,
        evm_db: -snr_db,
    })
}

/// `Π(1 + SNR_n)^{1/N} − 1` over linear SNRs.
pub fn global_snr(snrs: &[f64]) -> Result<f64> {
    if snrs.is_empty() {
        return Err(invalid("snrs", "empty SNR list"));
    }
    if let Some(bad) = snrs.iter().find(|s| !(**s >= 0.0)) {
        return Err(invalid("snrs", format!("negative or NaN SNR {bad}")));
    }
    if snrs.iter().all(|s| *s == snrs[0]) {
        return Ok(snrs[0]);
    }
    let mean_log = snrs.iter().map(|s| s.ln_1p()).sum::<f64>() / snrs.len() as f64;
    Ok(mean_log.exp_m1())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmsMode {
    /// Decision-directed updates continue after training.
    #[default]
    TrainThenTrack,
    /// Taps freeze after training.
    TrainOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmsConfig {
    pub taps_per_branch: usize,
    /// Normalized step size.
    pub step_size: f64,
    pub train_symbols: usize,
    /// Passes over the training symbols before the output pass.
    pub train_passes: usize,
    pub mode: LmsMode,
}

impl Default for LmsConfig {
    fn default() -> Self {
        Self { taps_per_branch: 15, step_size: 1e-2, train_symbols: 8192, train_passes: 4, mode: LmsMode::TrainThenTrack }
    }
}

impl LmsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps_per_branch == 0 || self.taps_per_branch.is_multiple_of(2) {
            return Err(invalid("taps_per_branch", format!("must be odd and >= 1, got {}", self.taps_per_branch)));
        }
        if !(self.step_size > 0.0 && self.step_size < 1.0) {
            return Err(invalid("step_size", format!("must lie in (0, 1), got {}", self.step_size)));
        }
        if self.train_passes == 0 {
            return Err(invalid("train_passes", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LmsOutput {
    /// One output per reference position.
    pub symbols: Vec<C64>,
    /// `taps[b][t]`, applied as `y = Σ conj(w)·x`.
    pub taps: [Vec<C64>; 3],
    /// Mean squared error over the last training pass.
    pub training_mse: f64,
}

const DIVERGENCE_WINDOW: usize = 512;
const DIVERGENCE_RATIO: f64 = 1e3;

/// Fractionally spaced 3×1 NLMS equalizer. `inputs` are the three branch
/// signals at `sps` samples per symbol; output `k` is centred on input
/// sample `start + k·sps` and trained toward `reference[k]`.
pub fn lms_equalize_3x1(
    inputs: &[Waveform; 3],
    cfg: &LmsConfig,
    reference: &[C64],
    start: usize,
    sps: usize,
) -> Result<LmsOutput> {
    cfg.validate()?;
    let n = inputs[0].len();
    if inputs.iter().any(|w| w.len() != n) {
        return Err(invalid("inputs", "branch signals differ in length"));
    }
    if sps == 0 {
        return Err(invalid("sps", "must be >= 1"));
    }
    let train = cfg.train_symbols.min(reference.len());
    // per-branch RMS normalization keeps the step size scale-free
    let norm: Vec<f64> = inputs.iter().map(|w| w.power().sqrt()).collect();
    let x: Vec<Vec<C64>> = inputs
        .iter()
        .zip(&norm)
        .map(|(w, &r)| {
            let k = if r > 0.0 { 1.0 / r } else { 0.0 };
            w.samples().iter().map(|v| v * k).collect()
        })
        .collect();
    let taps = cfg.taps_per_branch;
    let half = taps / 2;
    let mut w = vec![C64::new(0.0, 0.0); 3 * taps];
    let mut regressor = vec![C64::new(0.0, 0.0); 3 * taps];
    let fill = |k: usize, reg: &mut [C64]| {
        let centre = (start + k * sps) as isize;
        for (b, xb) in x.iter().enumerate() {
            for t in 0..taps {
                let idx = centre + t as isize - half as isize;
                reg[b * taps + t] = if idx >= 0 && (idx as usize) < n { xb[idx as usize] } else { C64::new(0.0, 0.0) };
            }
        }
    };
    let output = |w: &[C64], reg: &[C64]| w.iter().zip(reg).map(|(a, b)| a.conj() * b).sum::<C64>();
    let eps = 1e-12;
    let mut window = Monitor::default();
    let mut training_mse = 0.0;
    let step = |w: &mut [C64], reg: &[C64], e: C64| {
        let energy: f64 = reg.iter().map(|v| v.norm_sqr()).sum();
        let mu = cfg.step_size / (eps + energy);
        for (wi, xi) in w.iter_mut().zip(reg) {
            *wi += mu * xi * e.conj();
        }
    };
    let mut sample = 0usize;
    for pass in 0..cfg.train_passes {
        let mut acc = 0.0;
        for k in 0..train {
            fill(k, &mut regressor);
            let e = reference[k] - output(&w, &regressor);
            acc += e.norm_sqr();
            window.push(e.norm_sqr(), sample)?;
            sample += 1;
            step(&mut w, &regressor, e);
        }
        if pass + 1 == cfg.train_passes {
            training_mse = if train > 0 { acc / train as f64 } else { 0.0 };
        }
    }
    let points = qam32_points();
    let mut symbols = Vec::with_capacity(reference.len());
    for k in 0..reference.len() {
        fill(k, &mut regressor);
        let y = output(&w, &regressor);
        symbols.push(y);
        if k >= train && cfg.mode == LmsMode::TrainThenTrack {
            let e = points[decide_label(y)] - y;
            window.push(e.norm_sqr(), sample)?;
            sample += 1;
            step(&mut w, &regressor, e);
        }
    }
    // fold the input normalization back into the reported taps
    let mut out_taps: [Vec<C64>; 3] = Default::default();
    for (b, t) in out_taps.iter_mut().enumerate() {
        let k = if norm[b] > 0.0 { 1.0 / norm[b] } else { 0.0 };
        *t = w[b * taps..(b + 1) * taps].iter().map(|v| v * k).collect();
    }
    Ok(LmsOutput { symbols, taps: out_taps, training_mse })
}

/// Windowed MSE watchdog for the equalizer.
#[derive(Default)]
struct Monitor {
    acc: f64,
    count: usize,
    initial: Option<f64>,
}

impl Monitor {
    fn push(&mut self, e2: f64, sample: usize) -> Result<()> {
        if !e2.is_finite() {
            return Err(Error::Diverged { sample, mse: e2, initial_mse: self.initial.unwrap_or(f64::NAN) });
        }
        self.acc += e2;
        self.count += 1;
        if self.count == DIVERGENCE_WINDOW {
            let mse = self.acc / self.count as f64;
            match self.initial {
                None => self.initial = Some(mse.max(1e-30)),
                Some(init) if mse > DIVERGENCE_RATIO * init => {
                    return Err(Error::Diverged { sample, mse, initial_mse: init });
                }
                _ => {}
            }
            self.acc = 0.0;
            self.count = 0;
        }
        Ok(())
    }
}

/// Metrics of one link run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_subcarrier_snr_db: Vec<f64>,
    pub global_snr_db: f64,
    pub per_subcarrier_ber: Vec<f64>,
    /// Aggregate over all subcarriers.
    pub ber: f64,
    pub ber_censored: bool,
    pub cspr_db: f64,
    pub evm_db: f64,
    pub saturation_fraction: f64,
    pub samples_used: usize,
    pub config_digest: String,
}

impl MetricsReport {
    pub fn from_scores(scores: &[Score], cspr_db: f64, saturation_fraction: f64, config_digest: String) -> Result<Self> {
        if scores.is_empty() {
            return Err(invalid("scores", "no subcarrier scores"));
        }
        let lin: Vec<f64> = scores.iter().map(|s| crate::signal::from_db10(s.snr_db)).collect();
        let global = db10(global_snr(&lin)?);
        let errors: u64 = scores.iter().map(|s| s.bit_errors).sum();
        let bits: u64 = scores.iter().map(|s| s.bits).sum();
        let mean_evm = lin.iter().map(|s| 1.0 / s).sum::<f64>() / lin.len() as f64;
        Ok(Self {
            per_subcarrier_snr_db: scores.iter().map(|s| s.snr_db).collect(),
            global_snr_db: global,
            per_subcarrier_ber: scores.iter().map(|s| s.ber).collect(),
            ber: if bits > 0 { errors as f64 / bits as f64 } else { 0.0 },
            ber_censored: errors == 0,
            cspr_db,
            evm_db: db10(mean_evm),
            saturation_fraction,
            samples_used: scores.iter().map(|s| (s.bits / 5) as usize).sum(),
            config_digest,
        })
    }

    /// Checks `global_snr_db` against the per-subcarrier values.
    pub fn is_consistent(&self) -> bool {
        let lin: Vec<f64> = self.per_subcarrier_snr_db.iter().map(|s| crate::signal::from_db10(*s)).collect();
        match global_snr(&lin) {
            Ok(g) => (db10(g) - self.global_snr_db).abs() < 1e-9 && (0.0..=1.0).contains(&self.ber),
            Err(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::fiber_propagate;
    use crate::receiver::{optimal_theta, BranchCurrents};
    use crate::signal::RealSignal;
    use crate::tx::{build_frame, random_bits, shape_and_mux, shape_band};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const RATE: f64 = 160e9;

    fn noise(rng: &mut ChaCha8Rng, sigma: f64) -> C64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * (sigma / 2f64.sqrt())
    }

    fn frame(n: usize, seed: u64, band: u64) -> QamFrame {
        build_frame(&random_bits(n, seed, band), 512, seed).unwrap()
    }

    fn plan(n_bands: usize) -> SubcarrierPlan {
        SubcarrierPlan { n_bands, symbol_rate_hz: 40e9, guard_band_hz: 4e9, rolloff: 0.01 }
    }

    fn rrc(sps: usize) -> RrcSpec {
        RrcSpec { rolloff: 0.01, span_symbols: 256, samples_per_symbol: sps }
    }

    #[test]
    fn cd_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Waveform::new((0..8192).map(|_| noise(&mut rng, 1.0)).collect(), RATE).unwrap();
        let f = FiberParams { attenuation_db_per_km: 0.0, ..FiberParams::default() };
        let back = cd_compensate(&fiber_propagate(&w, &f).unwrap(), &f).unwrap();
        let err: f64 = back.samples().iter().zip(w.samples()).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!((err / (w.power() * w.len() as f64)).sqrt() < 1e-9);
        let zero = FiberParams { length_km: 0.0, ..f };
        let same = cd_compensate(&w, &zero).unwrap();
        assert!(same.samples().iter().zip(w.samples()).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn double_compensation_degrades_evm() {
        let f = FiberParams { attenuation_db_per_km: 0.0, ..FiberParams::default() };
        let fr = frame(2048, 3, 0);
        let comp = shape_and_mux(std::slice::from_ref(&fr), &plan(1), &rrc(2), RATE).unwrap();
        let rx = fiber_propagate(&comp.waveform, &f).unwrap();
        let once = cd_compensate(&rx, &f).unwrap();
        let twice = cd_compensate(&once, &f).unwrap();
        let snr = |w: &Waveform| {
            let d = demux_subcarrier(w, &plan(1), &rrc(2), 0).unwrap();
            let start = 2 * comp.pad_symbols + 2 * fr.preamble_symbols.len();
            let sym = downsample(&d, start, 2, fr.payload_symbols.len()).unwrap();
            let pre = downsample(&d, 2 * comp.pad_symbols, 2, fr.preamble_symbols.len()).unwrap();
            let (sym, _) = constant_phase_rotate(&sym, &pre, &fr.preamble_symbols).unwrap();
            decide_and_score(&sym, &fr).unwrap().snr_db
        };
        let (a, b) = (snr(&once), snr(&twice));
        assert!(a > 35.0, "{a}");
        assert!(b < a - 20.0, "{b} vs {a}");
    }

    #[test]
    fn single_band_demux_recovers_symbols() {
        let fr = frame(1024, 4, 0);
        let comp = shape_and_mux(std::slice::from_ref(&fr), &plan(1), &rrc(2), RATE).unwrap();
        let d = demux_subcarrier(&comp.waveform, &plan(1), &rrc(2), 0).unwrap();
        let sync = synchronize(&d, &fr.preamble_symbols, 2, SYNC_PSR_THRESHOLD_DB).unwrap();
        assert_eq!(sync.offset, 2 * comp.pad_symbols);
        let sym = downsample(&d, sync.offset + 1024, 2, 1024).unwrap();
        let pre = downsample(&d, sync.offset, 2, 512).unwrap();
        let (sym, _) = constant_phase_rotate(&sym, &pre, &fr.preamble_symbols).unwrap();
        let s = decide_and_score(&sym, &fr).unwrap();
        assert_eq!(s.bit_errors, 0);
        assert!(s.evm_db < -35.0, "{}", s.evm_db);
        assert!(demux_subcarrier(&comp.waveform, &plan(1), &rrc(2), 1).is_err());
    }

    #[test]
    fn two_band_demux_matches_solo_band() {
        let p = plan(2);
        let frames = [frame(1024, 5, 0), frame(1024, 5, 1)];
        let comp = shape_and_mux(&frames, &p, &rrc(2), RATE).unwrap();
        for band in 0..2 {
            let d = demux_subcarrier(&comp.waveform, &p, &rrc(2), band).unwrap();
            // solo reference: the same band alone, same normalization
            let solo = shape_band(&frames[band], &rrc(2), 40e9).unwrap();
            let solo = fir_filter(&solo, &rrc_taps(&rrc(2)).unwrap()).unwrap().scaled(comp.normalization);
            let err: f64 = d.samples().iter().zip(solo.samples()).map(|(a, b)| (a - b).norm_sqr()).sum();
            let tot: f64 = solo.samples().iter().map(|b| b.norm_sqr()).sum();
            assert!(db10(err / tot) < -40.0, "band {band}: {}", db10(err / tot));
        }
    }

    #[test]
    fn demux_is_isolated_from_other_band_content() {
        let p = plan(2);
        let a = [frame(512, 6, 0), frame(512, 6, 1)];
        let b = [frame(512, 6, 0), frame(512, 99, 1)];
        let da = demux_subcarrier(&shape_and_mux(&a, &p, &rrc(2), RATE).unwrap().waveform, &p, &rrc(2), 0).unwrap();
        let cb = shape_and_mux(&b, &p, &rrc(2), RATE).unwrap();
        let db = demux_subcarrier(&cb.waveform, &p, &rrc(2), 0).unwrap();
        // compare after undoing the (content-dependent) unit-RMS normalization
        let ka = 1.0 / shape_and_mux(&a, &p, &rrc(2), RATE).unwrap().normalization;
        let kb = 1.0 / cb.normalization;
        let err: f64 = da.samples().iter().zip(db.samples()).map(|(x, y)| (x * ka - y * kb).norm_sqr()).sum();
        let tot: f64 = da.samples().iter().map(|x| (x * ka).norm_sqr()).sum();
        assert!(db10(err / tot) < -40.0);
    }

    #[test]
    fn sync_finds_constructed_delays() {
        let pre = crate::tx::preamble(512, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for delay in [0usize, 17] {
            let mut x: Vec<C64> = (0..delay).map(|_| noise(&mut rng, 0.1)).collect();
            x.extend(pre.iter().copied());
            x.extend((0..300).map(|_| noise(&mut rng, 0.1)));
            let w = Waveform::new(x, 40e9).unwrap();
            assert_eq!(synchronize(&w, &pre, 1, SYNC_PSR_THRESHOLD_DB).unwrap().offset, delay);
        }
    }

    #[test]
    fn sync_survives_zero_db_snr() {
        let mut ok = 0;
        let trials = 200;
        for t in 0..trials {
            let pre = crate::tx::preamble(512, t);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
            let delay = rng.random_range(0..200);
            let p = crate::signal::mean_power(&pre).sqrt();
            let mut x: Vec<C64> = (0..delay).map(|_| noise(&mut rng, p)).collect();
            x.extend(pre.iter().map(|s| s + noise(&mut rng, p)));
            x.extend((0..200).map(|_| noise(&mut rng, p)));
            let w = Waveform::new(x, 40e9).unwrap();
            if matches!(synchronize(&w, &pre, 1, SYNC_PSR_THRESHOLD_DB), Ok(r) if r.offset == delay) {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.99 * trials as f64, "{ok}/{trials}");
    }

    #[test]
    fn sync_rejects_noise_only() {
        let pre = crate::tx::preamble(512, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Waveform::new((0..4096).map(|_| noise(&mut rng, 1.0)).collect(), 40e9).unwrap();
        assert!(matches!(synchronize(&w, &pre, 1, SYNC_PSR_THRESHOLD_DB), Err(Error::SyncFailure { .. })));
    }

    #[test]
    fn phase_rotation_cases() {
        let r = crate::tx::preamble(512, 9);
        let (_, pc) = constant_phase_rotate(&r, &r, &r).unwrap();
        assert!(pc.phase.abs() < 1e-15);
        let rot: Vec<C64> = r.iter().map(|x| x * C64::from_polar(1.0, std::f64::consts::PI / 7.0)).collect();
        let (out, pc) = constant_phase_rotate(&rot, &rot, &r).unwrap();
        assert!((pc.phase - std::f64::consts::PI / 7.0).abs() < 1e-9);
        assert!(out.iter().zip(&r).all(|(a, b)| (a - b).norm() < 1e-12));
        assert!(constant_phase_rotate(&r, &r, &vec![C64::new(0.0, 0.0); 512]).is_err());
    }

    #[test]
    fn phase_estimator_spread_at_20_db() {
        let mut within = 0;
        let trials = 500;
        for t in 0..trials {
            let r = crate::tx::preamble(512, t);
            let mut rng = ChaCha8Rng::seed_from_u64(t + 77);
            let truth = rng.random_range(-3.0..3.0);
            let sigma = (crate::signal::mean_power(&r) / 100.0).sqrt();
            let rx: Vec<C64> = r.iter().map(|x| x * C64::from_polar(1.0, truth) + noise(&mut rng, sigma)).collect();
            let pc = PhaseCorrection::estimate(&rx, &r).unwrap();
            let d = (pc.phase - truth + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
            if d.abs().to_degrees() < 1.0 {
                within += 1;
            }
        }
        assert!(within as f64 >= 0.99 * trials as f64);
    }

    #[test]
    fn score_of_exact_symbols() {
        let fr = frame(256, 10, 0);
        let s = decide_and_score(&fr.payload_symbols, &fr).unwrap();
        assert_eq!(s.bit_errors, 0);
        assert!(s.ber_censored);
        assert_eq!(s.snr_db, SNR_CAP_DB);
        assert!(decide_and_score(&fr.payload_symbols[1..], &fr).is_err());
    }

    #[test]
    fn snr_estimator_is_unbiased() {
        let fr = frame(1 << 15, 11, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for snr in [10.0, 15.0, 20.0, 25.0, 30.0] {
            let sigma = crate::signal::from_db10(-snr).sqrt();
            let rx: Vec<C64> = fr.payload_symbols.iter().map(|x| x + noise(&mut rng, sigma)).collect();
            let s = decide_and_score(&rx, &fr).unwrap();
            assert!((s.snr_db - snr).abs() < 0.2, "{} vs {snr}", s.snr_db);
        }
    }

    /// Nearest-neighbour union-bound approximation for Gray-coded cross
    /// 32-QAM: each symbol error costs about one bit.
    fn cross32_ber(snr_db: f64) -> f64 {
        let pts = qam32_points();
        let es = 1.0;
        let d = (pts[0] - pts.iter().skip(1).fold(pts[1], |b, p| if (pts[0] - p).norm() < (pts[0] - b).norm() { *p } else { b })).norm();
        let sigma = (es / crate::signal::from_db10(snr_db) / 2.0).sqrt();
        let q = |x: f64| 0.5 * libm_erfc(x / 2f64.sqrt());
        // average number of nearest neighbours of the cross constellation
        let mut nn = 0usize;
        for a in &pts {
            nn += pts.iter().filter(|b| ((*a - **b).norm() - d).abs() < 1e-9).count();
        }
        let avg_nn = nn as f64 / pts.len() as f64;
        avg_nn * q(d / 2.0 / sigma) / 5.0
    }

    fn libm_erfc(x: f64) -> f64 {
        // Numerical Recipes erfcc, |rel err| < 1.2e-7
        let z = x.abs();
        let t = 1.0 / (1.0 + 0.5 * z);
        let r = t * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
        if x >= 0.0 { r } else { 2.0 - r }
    }

    #[test]
    fn ber_matches_cross_qam_approximation() {
        let fr = frame(1 << 17, 12, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sigma = crate::signal::from_db10(-18.0).sqrt();
        let rx: Vec<C64> = fr.payload_symbols.iter().map(|x| x + noise(&mut rng, sigma)).collect();
        let s = decide_and_score(&rx, &fr).unwrap();
        let theory = cross32_ber(s.snr_db);
        assert!((s.ber / theory - 1.0).abs() < 0.3, "{} vs {theory}", s.ber);
    }

    #[test]
    fn global_snr_examples() {
        assert_eq!(global_snr(&[7.3]).unwrap(), 7.3);
        assert_eq!(global_snr(&[4.2; 5]).unwrap(), 4.2);
        assert_relative_eq!(global_snr(&[1.0, 0.0]).unwrap(), 2f64.sqrt() - 1.0, epsilon = 1e-15);
        assert!(global_snr(&[1.0, -0.1]).is_err());
        assert!(global_snr(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn global_snr_is_symmetric_and_bounded(mut v in proptest::collection::vec(0.0f64..1e4, 1..12), seed in any::<u64>()) {
            let g = global_snr(&v).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(0.0, f64::max);
            prop_assert!(g >= lo * (1.0 - 1e-12) && g <= hi * (1.0 + 1e-12));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..v.len()).rev() {
                let j = rng.random_range(0..=i);
                v.swap(i, j);
            }
            let h = global_snr(&v).unwrap();
            prop_assert!((g - h).abs() <= 1e-12 * g.max(1.0));
        }
    }

    fn synthetic_currents(s: &[C64], c: f64, theta: f64) -> BranchCurrents {
        let branch = |phase: f64| RealSignal {
            samples: s.iter().map(|x| (C64::from_polar(c, phase) + x).norm_sqr()).collect(),
            sample_rate: 40e9,
        };
        BranchCurrents::new(branch(theta), branch(0.0), branch(-theta)).unwrap().remove_dc()
    }

    fn as_complex(b: &BranchCurrents) -> [Waveform; 3] {
        [&b.i1, &b.i2, &b.i3].map(|x| Waveform::from_real(&x.samples, x.sample_rate).unwrap())
    }

    #[test]
    fn single_tap_lms_learns_reconstruction_weights() {
        let fr = frame(8192, 13, 0);
        // zero-mean target so per-branch DC removal loses nothing
        let reference = fr.symbols();
        let m = reference.iter().sum::<C64>() / reference.len() as f64;
        let reference: Vec<C64> = reference.iter().map(|x| x - m).collect();
        let s: Vec<C64> = reference.iter().map(|x| x * 0.3).collect();
        let theta = optimal_theta();
        let b = synthetic_currents(&s, 1.0, theta);
        let cfg = LmsConfig { taps_per_branch: 1, step_size: 0.01, train_symbols: s.len(), train_passes: 30, mode: LmsMode::TrainOnly };
        let out = lms_equalize_3x1(&as_complex(&b), &cfg, &reference, 0, 1).unwrap();
        let u = [
            C64::new(1.0 / (theta.cos() - 1.0), 1.0 / theta.sin()),
            C64::new(-2.0 / (theta.cos() - 1.0), 0.0),
            C64::new(1.0 / (theta.cos() - 1.0), -1.0 / theta.sin()),
        ];
        // taps act as conj(w); compare conj(w_b)/u_b across branches
        let k: Vec<C64> = (0..3).map(|i| out.taps[i][0].conj() / u[i]).collect();
        for i in 1..3 {
            assert!((k[i] / k[0] - 1.0).norm() < 1e-3, "{k:?}");
        }
    }

    #[test]
    fn lms_keeps_initial_taps_for_zero_input() {
        let z = Waveform::new(vec![C64::new(0.0, 0.0); 256], 80e9).unwrap();
        let fr = frame(128, 14, 0);
        let cfg = LmsConfig { taps_per_branch: 5, train_symbols: 100, ..LmsConfig::default() };
        let out = lms_equalize_3x1(&[z.clone(), z.clone(), z], &cfg, &fr.symbols(), 0, 2).unwrap();
        assert!(out.taps.iter().flatten().all(|t| *t == C64::new(0.0, 0.0)));
    }

    #[test]
    fn lms_rejects_bad_config() {
        let z = Waveform::new(vec![C64::new(1.0, 0.0); 16], 80e9).unwrap();
        for cfg in [
            LmsConfig { taps_per_branch: 4, ..LmsConfig::default() },
            LmsConfig { step_size: 1.5, ..LmsConfig::default() },
        ] {
            assert!(lms_equalize_3x1(&[z.clone(), z.clone(), z.clone()], &cfg, &[C64::new(1.0, 0.0)], 0, 1).is_err());
        }
    }

    #[test]
    fn metrics_report_is_consistent() {
        let score = |snr_db: f64, e: u64| Score { bit_errors: e, bits: 1000, ber: e as f64 / 1000.0, ber_censored: e == 0, snr_db, evm_db: -snr_db };
        let r = MetricsReport::from_scores(&[score(20.0, 3), score(17.0, 9)], -1.0, 0.0, "x".into()).unwrap();
        assert!(r.is_consistent());
        assert_relative_eq!(r.ber, 12.0 / 2000.0);
        assert!(!r.ber_censored);
    }
}
