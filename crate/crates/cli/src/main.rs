use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pdlink::harness::{
    emit_report, optimize_alpha, run_coherent_baseline, run_link, sweep_er_grid, sweep_phase_deviation, sweep_rop,
    LinkConfig, PhaseGrid, SweepResult,
};

/// Finite-extinction-ratio IQ modulator link with a phase-diverse receiver.
#[derive(Parser)]
#[command(name = "pdlink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; missing fields take defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a field by dotted path, e.g. `--set modulator.er_i_db=6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Use the 2^14-symbol payload profile.
    #[arg(long)]
    fast: bool,
    /// Output directory for CSV and manifest files.
    #[arg(long, short, default_value = "results")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<LinkConfig> {
        let mut cfg = match &self.config {
            Some(p) => LinkConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => LinkConfig::default(),
        };
        if self.fast {
            cfg.tx.payload_symbols = LinkConfig::fast().tx.payload_symbols;
        }
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else { bail!("override '{o}' is not KEY=VALUE") };
            cfg = cfg.with_override(k.trim(), v.trim()).with_context(|| format!("applying --set {o}"))?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// One link run; prints the metrics as JSON.
    Run(Common),
    /// One coherent-baseline run; prints the metrics as JSON.
    Baseline(Common),
    /// Global-SNR and CSPR over an extinction-ratio grid.
    SweepEr {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        er_i_db: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "25")]
        er_o_db: Vec<f64>,
        /// Pre-distortion and offset correction on.
        #[arg(long)]
        dpd: bool,
    },
    /// Global-SNR versus receiver phase deviation.
    SweepPhase {
        #[command(flatten)]
        common: Common,
        /// Common deviation list in degrees.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with_all = ["dtheta1_deg", "dtheta2_deg"])]
        dtheta_deg: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "dtheta2_deg")]
        dtheta1_deg: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "dtheta1_deg")]
        dtheta2_deg: Vec<f64>,
    },
    /// BER versus received optical power, with the coherent baseline.
    SweepRop {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        rop_dbm: Vec<f64>,
        #[arg(long)]
        no_baseline: bool,
    },
    /// Grid search of the offset correction factor.
    OptimizeAlpha {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.02,0.04,0.06,0.08,0.1,0.12,0.15,0.2")]
        alpha: Vec<f64>,
    },
}

// A closed stdout (e.g. piped into `head`) is not an error.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn finish(result: &SweepResult, out: &Path) -> Result<ExitCode> {
    let files = emit_report(result, out)?;
    eprintln!("wrote {} and {}", files.csv.display(), files.manifest.display());
    let failures = result.failures();
    if failures > 0 {
        for p in result.points.iter().filter(|p| p.error.is_some()) {
            eprintln!("point {} failed: {}", p.index, p.error.as_deref().unwrap_or(""));
        }
        eprintln!("{failures} of {} points failed", result.points.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(common) => {
            let report = run_link(&common.load()?)?;
            emit(&serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Baseline(common) => {
            let report = run_coherent_baseline(&common.load()?)?;
            emit(&serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepEr { common, er_i_db, er_o_db, dpd } => {
            let result = sweep_er_grid(&common.load()?, &er_i_db, &er_o_db, dpd)?;
            finish(&result, &common.out)
        }
        Command::SweepPhase { common, dtheta_deg, dtheta1_deg, dtheta2_deg } => {
            let grid = if dtheta1_deg.is_empty() {
                PhaseGrid::Common(if dtheta_deg.is_empty() { vec![0.0] } else { dtheta_deg })
            } else {
                PhaseGrid::Branch { dtheta_1_deg: dtheta1_deg, dtheta_2_deg: dtheta2_deg }
            };
            let result = sweep_phase_deviation(&common.load()?, &grid)?;
            finish(&result, &common.out)
        }
        Command::SweepRop { common, rop_dbm, no_baseline } => {
            let result = sweep_rop(&common.load()?, &rop_dbm, !no_baseline)?;
            finish(&result, &common.out)
        }
        Command::OptimizeAlpha { common, alpha } => {
            let search = optimize_alpha(&common.load()?, &alpha)?;
            emit(&format!(
                "best alpha {} at Global-SNR {:.3} dB{}",
                search.best_alpha,
                search.best_global_snr_db,
                if search.multimodal { " (curve is multimodal)" } else { "" }
            ));
            finish(&search.curve, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
