use rand_distr::{Distribution, Normal};

use super::config::{AwgnLocation, LinkConfig, RxPath};
use crate::dpd::{linear_drive, offset_correct, predistort, DpdCoefficients, DriveSignals};
use crate::error::{Error, Result};
use crate::optics::{fiber_propagate, iq_modulate, laser_field, measure_cspr, set_rop, split_power};
use crate::receiver::{detect_branches, split_and_shift, BranchCurrents};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::rx::{
    cd_compensate, constant_phase_rotate, decide_and_score, demux_subcarrier, downsample, lms_equalize_3x1,
    synchronize, MetricsReport, Score,
};
use crate::signal::{clip, from_db10, mean, quantize, Quantizer, RealSignal, Waveform, C64};
use crate::tx::{apply_response, build_frame, pre_emphasis, random_bits, shape_and_mux, QamFrame};

/// Lowest in-band response magnitude the pre-emphasis accepts.
const RESPONSE_FLOOR: f64 = 1e-6;

/// Transmitter output and its bookkeeping.
#[derive(Clone, Debug)]
pub struct Transmitted {
    pub frames: Vec<QamFrame>,
    /// Unit-RMS composite before noise loading.
    pub composite: Waveform,
    pub v_i: Vec<f64>,
    pub v_q: Vec<f64>,
    /// Laser field before modulation.
    pub laser: Waveform,
    /// Modulated field.
    pub field: Waveform,
    pub cspr_db: f64,
    pub saturation_fraction: f64,
}

fn stage<T>(name: &'static str, digest: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage { stage: name, digest: digest.to_string(), cause: Box::new(e) },
    })
}

fn complex_noise(n: usize, variance: f64, seed: u64, stream_id: u64) -> Result<Vec<C64>> {
    let normal = Normal::new(0.0, (variance / 2.0).sqrt())
        .map_err(|e| crate::error::invalid("noise variance", e.to_string()))?;
    let mut rng = stream_rng(seed, stream_id);
    Ok((0..n).map(|_| C64::new(normal.sample(&mut rng), normal.sample(&mut rng))).collect())
}

fn add_noise(w: &Waveform, variance: f64, seed: u64, stream_id: u64) -> Result<Waveform> {
    let noise = complex_noise(w.len(), variance, seed, stream_id)?;
    Waveform::new(w.samples().iter().zip(noise).map(|(s, n)| s + n).collect(), w.sample_rate())
}

/// Bits through DPD, DAC, laser and modulator.
pub fn transmit(cfg: &LinkConfig) -> Result<Transmitted> {
    let digest = cfg.digest();
    let d = digest.as_str();
    stage("config", d, cfg.validate())?;
    let plan = cfg.tx.plan();
    let rrc = cfg.tx.rrc();

    let frames = stage(
        "framing",
        d,
        (0..plan.n_bands)
            .map(|band| {
                let bits = random_bits(cfg.tx.payload_symbols, cfg.seed, band as u64);
                build_frame(&bits, cfg.tx.preamble_symbols, derive_seed(cfg.seed, 1000 + band as u64))
            })
            .collect::<Result<Vec<_>>>(),
    )?;
    let composite = stage("shaping", d, shape_and_mux(&frames, &plan, &rrc, cfg.sample_rate_hz))?.waveform;
    let loaded = if cfg.awgn.location == AwgnLocation::Drive {
        stage(
            "awgn",
            d,
            add_noise(&composite, composite.power() * from_db10(-cfg.awgn.snr_db), cfg.seed, stream::DRIVE_AWGN),
        )?
    } else {
        composite.clone()
    };

    let m = stage("modulator", d, cfg.modulator.params())?;
    let drive: DriveSignals = stage("dpd", d, {
        if cfg.dpd.enabled {
            let k = cfg.dpd.drive_scale;
            let s_i: Vec<f64> = loaded.samples().iter().map(|s| k * s.re).collect();
            let s_q: Vec<f64> = loaded.samples().iter().map(|s| k * s.im).collect();
            let coeffs = DpdCoefficients::compute(&m.g);
            predistort(&s_i, &s_q, &coeffs, m.rail_i(), m.rail_q()).and_then(|mut dr| {
                dr.v_i = offset_correct(&dr.v_i, cfg.dpd.alpha, cfg.dpd.offset_mode)?;
                dr.v_q = offset_correct(&dr.v_q, cfg.dpd.alpha, cfg.dpd.offset_mode)?;
                Ok(dr)
            })
        } else {
            let k = cfg.modulator.drive_scale_rad;
            let s_i: Vec<f64> = loaded.samples().iter().map(|s| k * s.re).collect();
            let s_q: Vec<f64> = loaded.samples().iter().map(|s| k * s.im).collect();
            linear_drive(&s_i, &s_q, m.rail_i(), m.rail_q())
        }
    })?;

    // The DAC and driver are AC coupled: bias stays out of the digital path.
    let (dc_i, dc_q) = (mean(&drive.v_i), mean(&drive.v_q));
    let (v_i, v_q) = stage("dac", d, {
        (|| {
            let ac: Vec<C64> = drive.v_i.iter().zip(&drive.v_q).map(|(i, q)| C64::new(i - dc_i, q - dc_q)).collect();
            let mut w = Waveform::new(ac, cfg.sample_rate_hz)?;
            w = pre_emphasis(
                &w,
                &cfg.tx.response,
                cfg.tx.pre_emphasis_max_boost_db,
                plan.band_edge_hz(),
                RESPONSE_FLOOR,
            )?;
            if cfg.tx.clipping_ratio_db.is_finite() {
                w = clip(&w, cfg.tx.clipping_ratio_db)?;
            }
            if cfg.tx.dac_enob > 0 {
                w = quantize(&w, cfg.tx.dac_enob)?;
            }
            w = apply_response(&w, &cfg.tx.response)?;
            Ok((
                w.samples().iter().map(|s| s.re + dc_i).collect::<Vec<f64>>(),
                w.samples().iter().map(|s| s.im + dc_q).collect::<Vec<f64>>(),
            ))
        })()
    })?;

    let laser = stage("laser", d, laser_field(&cfg.laser, composite.len(), cfg.sample_rate_hz, cfg.seed))?;
    let mut field = stage("modulator", d, iq_modulate(&laser, &v_i, &v_q, &m))?;
    if cfg.awgn.location == AwgnLocation::Optical {
        let (carrier, signal) = split_power(&field, cfg.receiver.carrier_filter_bw_hz);
        let p_sig = field.power() * signal / (carrier + signal).max(f64::MIN_POSITIVE);
        field = stage("awgn", d, add_noise(&field, p_sig * from_db10(-cfg.awgn.snr_db), cfg.seed, stream::DRIVE_AWGN))?;
    }
    let cspr_db = stage("cspr", d, measure_cspr(&field, cfg.receiver.carrier_filter_bw_hz))?;
    Ok(Transmitted {
        frames,
        composite,
        v_i,
        v_q,
        laser,
        field,
        cspr_db,
        saturation_fraction: drive.saturation_fraction,
    })
}

/// Sync on the preamble, then a data-aided constant rotation and score.
fn score_band(y: &Waveform, frame: &QamFrame, sps: usize, threshold_db: f64) -> Result<Score> {
    let p = frame.preamble_symbols.len();
    let sync = synchronize(y, &frame.preamble_symbols, sps, threshold_db)?;
    let rx_pre = downsample(y, sync.offset, sps, p)?;
    let payload = downsample(y, sync.offset + p * sps, sps, frame.payload_symbols.len())?;
    let (corrected, _) = constant_phase_rotate(&payload, &rx_pre, &frame.preamble_symbols)?;
    decide_and_score(&corrected, frame)
}

fn quantize_real(x: &RealSignal, enob: u32) -> Result<RealSignal> {
    let lo = x.samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let q = Quantizer::with_ranges(enob, (lo, hi), (0.0, 0.0))?;
    RealSignal::new(q.apply_real(&x.samples), x.sample_rate)
}

/// Field at the receiver input: fiber, then the attenuator.
fn channel(cfg: &LinkConfig, field: &Waveform, d: &str) -> Result<Waveform> {
    let rx = stage("fiber", d, fiber_propagate(field, &cfg.fiber))?;
    Ok(stage("voa", d, set_rop(&rx, cfg.rop_dbm))?.waveform)
}

/// Photocurrents of the three branches after the ADC, DC removed.
pub fn receive_branches(cfg: &LinkConfig, e: &Waveform) -> Result<BranchCurrents> {
    let d = cfg.digest();
    let branches = stage("receiver", &d, split_and_shift(e, &cfg.receiver.params(), cfg.tx.guard_band_hz))?;
    let mut b = stage(
        "photodiode",
        &d,
        detect_branches(&branches, &cfg.photodiode, derive_seed(cfg.seed, stream::PHOTODIODE)),
    )?
    .remove_dc();
    if cfg.receiver.adc_enob > 0 {
        let q = |s: &RealSignal| quantize_real(s, cfg.receiver.adc_enob);
        b = stage("adc", &d, (|| BranchCurrents::new(q(&b.i1)?, q(&b.i2)?, q(&b.i3)?))())?;
    }
    Ok(b)
}

/// Full link: transmitter, fiber, phase-diverse receiver and Rx DSP.
pub fn run_link(cfg: &LinkConfig) -> Result<MetricsReport> {
    let digest = cfg.digest();
    let d = digest.as_str();
    let tx = transmit(cfg)?;
    let e = channel(cfg, &tx.field, d)?;
    let b = receive_branches(cfg, &e)?;
    let plan = cfg.tx.plan();
    let rrc = cfg.tx.rrc();
    let sps = cfg.tx.samples_per_symbol;
    let thr = cfg.rxdsp.sync_threshold_db;

    let scores = match cfg.rxdsp.path {
        RxPath::Analytic => {
            let theta = cfg.receiver.theta_deg.to_radians();
            let s = stage("reconstruct", d, crate::receiver::reconstruct(&b, 1.0, theta))?;
            let s = stage("cd_compensation", d, cd_compensate(&s, &cfg.fiber))?;
            let mut scores = Vec::with_capacity(plan.n_bands);
            for (band, frame) in tx.frames.iter().enumerate() {
                let y = stage("demux", d, demux_subcarrier(&s, &plan, &rrc, band))?;
                scores.push(stage("score", d, score_band(&y, frame, sps, thr))?);
            }
            scores
        }
        RxPath::Lms => {
            let per_branch = stage(
                "cd_compensation",
                d,
                [&b.i1, &b.i2, &b.i3]
                    .into_iter()
                    .map(|i| cd_compensate(&Waveform::from_real(&i.samples, i.sample_rate)?, &cfg.fiber))
                    .collect::<Result<Vec<_>>>(),
            )?;
            let mut scores = Vec::with_capacity(plan.n_bands);
            for (band, frame) in tx.frames.iter().enumerate() {
                let demuxed = stage(
                    "demux",
                    d,
                    per_branch.iter().map(|w| demux_subcarrier(w, &plan, &rrc, band)).collect::<Result<Vec<_>>>(),
                )?;
                let inputs: [Waveform; 3] = [demuxed[0].clone(), demuxed[1].clone(), demuxed[2].clone()];
                let sync = stage("sync", d, synchronize(&inputs[0], &frame.preamble_symbols, sps, thr))?;
                let out = stage("lms", d, lms_equalize_3x1(&inputs, &cfg.rxdsp.lms, &frame.symbols(), sync.offset, sps))?;
                let p = frame.preamble_symbols.len();
                scores.push(stage("score", d, decide_and_score(&out.symbols[p..], frame))?);
            }
            scores
        }
    };
    stage("metrics", d, MetricsReport::from_scores(&scores, tx.cspr_db, tx.saturation_fraction, digest.clone()))
}

/// Same transmitter and fiber, detected by an ideal homodyne receiver locked
/// to the transmit laser: `R·E·e^{-jφ}` plus complex noise of variance `δ²`.
pub fn run_coherent_baseline(cfg: &LinkConfig) -> Result<MetricsReport> {
    let digest = cfg.digest();
    let d = digest.as_str();
    let tx = transmit(cfg)?;
    let e = channel(cfg, &tx.field, d)?;
    let r = cfg.photodiode.responsivity_a_per_w;
    let detected: Vec<C64> = e
        .samples()
        .iter()
        .zip(tx.laser.samples())
        .map(|(x, lo)| {
            let n = lo.norm();
            if n > 0.0 {
                r * x * lo.conj() / n
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    let variance = cfg.photodiode.thermal_variance(cfg.sample_rate_hz);
    let y = stage("coherent_detection", d, Waveform::new(detected, cfg.sample_rate_hz))?;
    let y = if variance > 0.0 {
        stage("coherent_detection", d, add_noise(&y, variance, cfg.seed, stream::COHERENT_NOISE))?
    } else {
        y
    };
    let y = stage("cd_compensation", d, cd_compensate(&y, &cfg.fiber))?;
    let plan = cfg.tx.plan();
    let rrc = cfg.tx.rrc();
    let mut scores = Vec::with_capacity(plan.n_bands);
    for (band, frame) in tx.frames.iter().enumerate() {
        let z = stage("demux", d, demux_subcarrier(&y, &plan, &rrc, band))?;
        scores.push(stage(
            "score",
            d,
            score_band(&z, frame, cfg.tx.samples_per_symbol, cfg.rxdsp.sync_threshold_db),
        )?);
    }
    stage("metrics", d, MetricsReport::from_scores(&scores, tx.cspr_db, tx.saturation_fraction, digest.clone()))
}
