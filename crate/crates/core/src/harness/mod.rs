//! Configuration, link orchestration, sweeps and report output.

pub mod config;
pub mod link;
pub mod report;
pub mod sweep;

pub use config::{
    AwgnConfig, AwgnLocation, DpdConfig, LinkConfig, ModulatorConfig, ReceiverConfig, RxDspConfig, RxPath, TxConfig,
};
pub use link::{receive_branches, run_coherent_baseline, run_link, transmit, Transmitted};
pub use report::{emit_report, ReportFiles};
pub use sweep::{
    optimize_alpha, sweep_er_grid, sweep_phase_deviation, sweep_rop, AlphaSearch, PhaseGrid, SweepPoint, SweepResult,
    Variant,
};
