//! The simulated measurement chain: wavefunction snapshots → time-of-flight
//! profiles → Gaussian-comb fits → amplitude-weighted velocity trace.
//!
//! This mirrors how the velocity is actually measured: the reconstructed
//! trace inherits the finite fit window, so diffraction orders outside it
//! bias the result exactly the way a finite imaging window does.

use rand::SeedableRng;
use rayon::prelude::*;

use crate::analysis::{fit_diffraction, reconstruct_velocity, DiffractionFit, DiffractionHints};
use crate::error::Result;
use crate::propagator::{tof_expand, Wavefunction};
use crate::trace::VelocityTrace;
use crate::units::LatticeConfig;

/// Settings of the synthetic measurement.
#[derive(Debug, Clone, Copy)]
pub struct MeasurementConfig {
    /// Time-of-flight duration, seconds.
    pub tof_time: f64,
    /// Analysis window in units of `v_r * tof_time`. The default covers the
    /// four diffraction slots -4..+2 ħk_r (for a positive force); higher
    /// orders drift outside and are lost, as in a finite imaging window.
    pub window_vr: (f64, f64),
    pub n_profile_points: usize,
    pub n_peaks: usize,
    /// Additive Gaussian noise on each profile, relative to its peak density.
    pub noise_relative: f64,
    pub seed: u64,
    /// Window-mass fraction below which frames are flagged as clipped.
    pub clip_threshold: f64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            tof_time: 20e-3,
            window_vr: (-5.15, 3.45),
            n_profile_points: 768,
            n_peaks: 4,
            noise_relative: 0.0,
            seed: 1,
            clip_threshold: 0.9965,
        }
    }
}

/// Outcome of the measurement chain.
#[derive(Debug, Clone)]
pub struct MeasuredTrace {
    /// Velocity in v_r, times in t_r (converted back from the TOF scale).
    pub trace: VelocityTrace,
    pub fits: Vec<DiffractionFit>,
    /// Frames whose fitted comb had zero weight.
    pub dropped_frames: Vec<usize>,
    /// True if any frame had cloud mass outside the analysis window.
    pub window_clipped: bool,
}

/// Run TOF + comb fit on every snapshot and reconstruct the velocity trace.
pub fn diffraction_trace(
    cfg: &LatticeConfig,
    snapshots: &[Wavefunction],
    mcfg: &MeasurementConfig,
) -> Result<MeasuredTrace> {
    let scale = cfg.recoil_velocity() * mcfg.tof_time;
    let window = (mcfg.window_vr.0 * scale, mcfg.window_vr.1 * scale);
    let hints = DiffractionHints { spacing: Some(2.0 * scale), clip_threshold: mcfg.clip_threshold };

    let fits: Vec<(f64, DiffractionFit)> = snapshots
        .par_iter()
        .enumerate()
        .map(|(i, psi)| -> Result<(f64, DiffractionFit)> {
            let mut profile = tof_expand(psi, cfg, mcfg.tof_time, window, mcfg.n_profile_points);
            if mcfg.noise_relative > 0.0 {
                let peak = profile.density.iter().cloned().fold(0.0, f64::max);
                let mut rng = rand_chacha_rng(mcfg.seed, i as u64);
                crate::analysis::add_gaussian_noise(
                    &mut profile.density,
                    mcfg.noise_relative * peak,
                    &mut rng,
                );
            }
            let fit = fit_diffraction(&profile, mcfg.n_peaks, &hints)?;
            Ok((psi.time, fit))
        })
        .collect::<Result<_>>()?;

    let window_clipped = fits.iter().any(|(_, f)| f.peak_outside_window);
    let (trace_si, dropped) = reconstruct_velocity(&fits, mcfg.tof_time);
    // back to recoil units (times are already t_r)
    let velocity: Vec<f64> = trace_si
        .velocity
        .iter()
        .map(|v| cfg.velocity_to_recoil(*v))
        .collect();
    let mut trace = VelocityTrace::new(trace_si.times.clone(), velocity);
    trace.peak_amplitudes = trace_si.peak_amplitudes.clone();

    Ok(MeasuredTrace {
        trace,
        fits: fits.into_iter().map(|(_, f)| f).collect(),
        dropped_frames: dropped,
        window_clipped,
    })
}

fn rand_chacha_rng(seed: u64, stream: u64) -> impl rand::Rng {
    // one independent, deterministic stream per frame regardless of the
    // parallel execution order
    rand::rngs::StdRng::seed_from_u64(seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(stream))
}
