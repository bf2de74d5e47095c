use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::LinkConfig;
use super::link::{run_coherent_baseline, run_link};
use crate::error::{invalid, Result};
use crate::rng::derive_seed;
use crate::rx::MetricsReport;

/// Which receiver produced a sweep point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    PhaseDiverse,
    CoherentBaseline,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::PhaseDiverse => "phase_diverse",
            Variant::CoherentBaseline => "coherent_baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub variant: Variant,
    /// Values in the order of `SweepResult::axis_names`.
    pub axes: Vec<f64>,
    pub seed: u64,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

impl SweepPoint {
    pub fn global_snr_db(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.global_snr_db)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub axis_names: Vec<String>,
    pub points: Vec<SweepPoint>,
    pub base: LinkConfig,
    pub base_digest: String,
    pub master_seed: u64,
    pub code_version: String,
}

impl SweepResult {
    fn empty(name: &str, axis_names: &[&str], base: &LinkConfig) -> Self {
        Self {
            name: name.to_string(),
            axis_names: axis_names.iter().map(|s| s.to_string()).collect(),
            points: Vec::new(),
            base: base.clone(),
            base_digest: base.digest(),
            master_seed: base.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }

    pub fn variant(&self, v: Variant) -> impl Iterator<Item = &SweepPoint> {
        self.points.iter().filter(move |p| p.variant == v)
    }
}

struct Job {
    variant: Variant,
    axes: Vec<f64>,
    cfg: Result<LinkConfig>,
}

/// Runs `jobs` in parallel. Point `k` uses seed `derive_seed(master, k)`, so
/// results do not depend on evaluation order or worker count.
fn execute(mut result: SweepResult, jobs: Vec<Job>) -> SweepResult {
    let master = result.master_seed;
    result.points = jobs
        .into_par_iter()
        .enumerate()
        .map(|(index, job)| {
            let seed = derive_seed(master, index as u64);
            let outcome = job.cfg.and_then(|mut cfg| {
                cfg.seed = seed;
                match job.variant {
                    Variant::PhaseDiverse => run_link(&cfg),
                    Variant::CoherentBaseline => run_coherent_baseline(&cfg),
                }
            });
            let (report, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepPoint { index, variant: job.variant, axes: job.axes, seed, report, error }
        })
        .collect();
    result
}

fn non_empty(name: &'static str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(invalid(name, "grid must be non-empty"));
    }
    Ok(())
}

/// Global-SNR and CSPR over an (ER_i, ER_o) grid, row-major in ER_i.
pub fn sweep_er_grid(base: &LinkConfig, er_i_db: &[f64], er_o_db: &[f64], dpd: bool) -> Result<SweepResult> {
    non_empty("er_i_db", er_i_db)?;
    non_empty("er_o_db", er_o_db)?;
    let mut jobs = Vec::with_capacity(er_i_db.len() * er_o_db.len());
    for &ei in er_i_db {
        for &eo in er_o_db {
            let mut c = base.clone();
            c.modulator.er_i_db = ei;
            c.modulator.er_o_db = eo;
            c.dpd.enabled = dpd;
            jobs.push(Job { variant: Variant::PhaseDiverse, axes: vec![ei, eo], cfg: c.validate().map(|_| c) });
        }
    }
    let name = if dpd { "er_grid_dpd" } else { "er_grid_no_dpd" };
    Ok(execute(SweepResult::empty(name, &["er_i_db", "er_o_db"], base), jobs))
}

/// Receiver phase deviations to sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum PhaseGrid {
    /// Common deviation Δθ on both shifted branches, degrees.
    Common(Vec<f64>),
    /// Independent (Δθ₁, Δθ₂) grid, degrees, row-major in Δθ₁.
    Branch { dtheta_1_deg: Vec<f64>, dtheta_2_deg: Vec<f64> },
}

pub fn sweep_phase_deviation(base: &LinkConfig, grid: &PhaseGrid) -> Result<SweepResult> {
    let mut jobs = Vec::new();
    let result = match grid {
        PhaseGrid::Common(list) => {
            non_empty("dtheta_deg", list)?;
            for &dt in list {
                let mut c = base.clone();
                c.receiver.delta_theta_deg = dt;
                jobs.push(Job { variant: Variant::PhaseDiverse, axes: vec![dt], cfg: c.validate().map(|_| c) });
            }
            SweepResult::empty("phase_common", &["delta_theta_deg"], base)
        }
        PhaseGrid::Branch { dtheta_1_deg, dtheta_2_deg } => {
            non_empty("dtheta_1_deg", dtheta_1_deg)?;
            non_empty("dtheta_2_deg", dtheta_2_deg)?;
            for &d1 in dtheta_1_deg {
                for &d2 in dtheta_2_deg {
                    let mut c = base.clone();
                    c.receiver.delta_theta_1_deg = d1;
                    c.receiver.delta_theta_2_deg = d2;
                    jobs.push(Job { variant: Variant::PhaseDiverse, axes: vec![d1, d2], cfg: c.validate().map(|_| c) });
                }
            }
            SweepResult::empty("phase_branch", &["delta_theta_1_deg", "delta_theta_2_deg"], base)
        }
    };
    Ok(execute(result, jobs))
}

/// BER versus received optical power for the configured link, with the
/// coherent baseline (pre-distortion off) as an overlay.
pub fn sweep_rop(base: &LinkConfig, rop_dbm: &[f64], with_baseline: bool) -> Result<SweepResult> {
    non_empty("rop_dbm", rop_dbm)?;
    let mut jobs = Vec::new();
    for &rop in rop_dbm {
        let mut c = base.clone();
        c.rop_dbm = rop;
        jobs.push(Job { variant: Variant::PhaseDiverse, axes: vec![rop], cfg: c.validate().map(|_| c) });
    }
    if with_baseline {
        for &rop in rop_dbm {
            let mut c = base.clone();
            c.rop_dbm = rop;
            c.dpd.enabled = false;
            jobs.push(Job { variant: Variant::CoherentBaseline, axes: vec![rop], cfg: c.validate().map(|_| c) });
        }
    }
    Ok(execute(SweepResult::empty("rop", &["rop_dbm"], base), jobs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSearch {
    pub best_alpha: f64,
    pub best_global_snr_db: f64,
    pub curve: SweepResult,
    /// More than one local maximum rises above the Monte-Carlo tolerance.
    pub multimodal: bool,
}

/// Local maxima separated by a dip deeper than this count as distinct modes.
pub const MODE_TOLERANCE_DB: f64 = 0.1;

/// Grid search of Global-SNR over the offset correction factor, DPD on.
pub fn optimize_alpha(base: &LinkConfig, alphas: &[f64]) -> Result<AlphaSearch> {
    non_empty("alphas", alphas)?;
    let jobs = alphas
        .iter()
        .map(|&a| {
            let mut c = base.clone();
            c.dpd.enabled = true;
            c.dpd.alpha = a;
            Job { variant: Variant::PhaseDiverse, axes: vec![a], cfg: c.validate().map(|_| c) }
        })
        .collect();
    let curve = execute(SweepResult::empty("alpha", &["alpha"], base), jobs);
    let valid: Vec<(f64, f64)> =
        curve.points.iter().filter_map(|p| p.global_snr_db().map(|s| (p.axes[0], s))).collect();
    let (best_alpha, best_global_snr_db) = valid
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, p| match best {
            Some(b) if b.1 >= p.1 => Some(b),
            _ => Some(p),
        })
        .ok_or_else(|| invalid("alphas", "every alpha point failed"))?;
    let snr: Vec<f64> = valid.iter().map(|p| p.1).collect();
    Ok(AlphaSearch { best_alpha, best_global_snr_db, multimodal: count_modes(&snr, MODE_TOLERANCE_DB) > 1, curve })
}

/// Number of peaks in `y` that stand out by more than `tol` from the valleys
/// on both sides.
pub fn count_modes(y: &[f64], tol: f64) -> usize {
    if y.is_empty() {
        return 0;
    }
    let mut modes = 0;
    let mut valley = f64::NEG_INFINITY; // the left boundary never limits a peak
    let mut peak = y[0];
    let mut rising = true;
    for &v in &y[1..] {
        if rising {
            if v > peak {
                peak = v;
            } else if peak - v > tol {
                if peak - valley > tol {
                    modes += 1;
                }
                rising = false;
                valley = v;
            }
        } else if v < valley {
            valley = v;
        } else if v - valley > tol {
            rising = true;
            peak = v;
        }
    }
    if rising {
        modes += 1;
    }
    modes
}
