//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("plane-wave cutoff L={cutoff} too small: need n_bands={n_bands} <= 2L and L >= 4")]
    CutoffTooSmall { cutoff: usize, n_bands: usize },

    #[error("crystal momentum k={k} outside the Brillouin zone [-1, 1]")]
    OutOfZone { k: f64 },

    #[error("eigensolver failed to converge at k={k} (eigenvalue index {index})")]
    EigenNoConverge { k: f64, index: usize },

    #[error("near-degenerate gap |E_{n} - E_{m}| = {gap:.3e} E_r at k={k}; value withheld")]
    DegenerateGap { n: usize, m: usize, k: f64, gap: f64 },

    #[error("wavepacket support [{lo:.4}, {hi:.4}] reaches the zone edge")]
    SupportTouchesZoneEdge { lo: f64, hi: f64 },

    #[error("envelope too narrow: sigma_z = {sigma:.3} / k_r leaks into the zone edge")]
    EnvelopeTooNarrow { sigma: f64 },

    #[error("time step too large: s*dt/t_r = {value:.3} > 0.5")]
    TimeStepTooLarge { value: f64 },

    #[error("box too small: {mass:.3e} of the norm within {margin} sites of the box edge at t = {t:.3} t_r")]
    BoxTooSmall { mass: f64, margin: usize, t: f64 },

    #[error("fit did not converge after {iterations} iterations; residual history: {history:?}")]
    FitNoConverge { iterations: usize, history: Vec<f64> },

    #[error("spectral peaks indistinct; candidate frequencies: {candidates:?}")]
    PeaksIndistinct { candidates: Vec<f64> },

    #[error("unstable mass estimate: |cos(omega_B t0 + phi_B)| = {value:.3e} too close to zero")]
    UnstableMassEstimate { value: f64 },

    #[error("low-pass cutoff {cutoff:.3e} outside (0, {nyquist:.3e})")]
    BadCutoff { cutoff: f64, nyquist: f64 },

    #[error("trace too short: {samples} samples in fit window, need at least {needed}")]
    TraceTooShort { samples: usize, needed: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
