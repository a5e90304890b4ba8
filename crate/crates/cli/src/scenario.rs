//! Scenario orchestration: bands → state preparation → propagation →
//! measurement pipeline → fits → masses, emitted as a deterministic bundle.

use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

use blochdyn_core::analysis::{
    extract_masses, fit_two_sine, geometric_cutoff, lowpass_guide, MassEstimate, TwoSineFit,
    TwoSineGuess,
};
use blochdyn_core::bandstructure::{solve_bands, BandData, KGrid};
use blochdyn_core::pipeline::{diffraction_trace, MeasurementConfig};
use blochdyn_core::propagator::{
    evolve, prepare_ground_state, EvolveOptions, Evolution, ForceSchedule, GridSpec,
};
use blochdyn_core::trace::VelocityTrace;
use blochdyn_core::units::{constants, LatticeConfig};

use crate::config::ScenarioConfig;
use crate::manifest::{emit, Manifest};

/// Validation failures carry their report so the caller can exit with the
/// dedicated code.
#[derive(Debug)]
pub struct ValidationFailed(pub String);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration invalid:\n{}", self.0)
    }
}

impl std::error::Error for ValidationFailed {}

/// Condensed two-sinusoid fit record for summaries.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub a_fast: f64,
    pub omega_fast: f64,
    pub phi_fast: f64,
    pub a_slow: f64,
    pub omega_slow: f64,
    pub phi_slow: f64,
    pub sigma: [f64; 6],
    pub residual_norm: f64,
    pub window: (f64, f64),
}

impl From<&TwoSineFit> for FitSummary {
    fn from(f: &TwoSineFit) -> Self {
        Self {
            a_fast: f.a_fast,
            omega_fast: f.omega_fast,
            phi_fast: f.phi_fast,
            a_slow: f.a_slow,
            omega_slow: f.omega_slow,
            phi_slow: f.phi_slow,
            sigma: f.sigma,
            residual_norm: f.residual_norm,
            window: f.window,
        }
    }
}

/// Everything a scenario point reports; all frequencies are in rad/s and all
/// times in seconds unless suffixed otherwise.
#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    pub name: String,
    pub depth: f64,
    pub accel: f64,
    pub force_recoil: f64,
    pub gap_k0_si: f64,
    pub gap_edge_si: f64,
    pub h_over_gap_si: f64,
    pub m_band_ratio: f64,
    pub omega_bloch_predicted_si: f64,
    pub bloch_period_si: f64,
    pub window_clipped: bool,
    pub fit_window: Option<FitSummary>,
    pub fit_full: Option<FitSummary>,
    pub fit_error: Option<String>,
    pub masses: Option<MassEstimate>,
    pub mass_error: Option<String>,
}

/// Run a full scenario (or sweep) into `out_dir`.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> anyhow::Result<Vec<PointSummary>> {
    let report = config.validate();
    if !report.is_ok() {
        return Err(ValidationFailed(report.render()).into());
    }
    std::fs::create_dir_all(out_dir)?;

    let points: Vec<(PathBuf, ScenarioConfig)> = match &config.sweep {
        None => vec![(out_dir.to_path_buf(), config.clone())],
        Some(sweep) => sweep
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cfg = config.with_override(&sweep.parameter, v)?;
                Ok((out_dir.join(format!("point_{i:03}")), cfg))
            })
            .collect::<anyhow::Result<_>>()?,
    };

    let summaries: Vec<PointSummary> = points
        .par_iter()
        .map(|(dir, cfg)| run_point(cfg, dir))
        .collect::<anyhow::Result<_>>()?;

    // reducer: one summary row per point, plus the root manifest
    if config.sweep.is_some() {
        let mut manifest = Manifest::new(&config.to_toml(), config.output.seed);
        let csv = summary_csv(config, &summaries);
        emit(&mut manifest, out_dir, "summary.csv", csv.as_bytes())?;
        emit(&mut manifest, out_dir, "config.toml", config.to_toml().as_bytes())?;
        manifest.write(out_dir)?;
    }
    Ok(summaries)
}

fn summary_csv(config: &ScenarioConfig, summaries: &[PointSummary]) -> String {
    let param = config.sweep.as_ref().map(|s| s.parameter.clone()).unwrap_or_default();
    let values = config.sweep.as_ref().map(|s| s.values.clone()).unwrap_or_default();
    let mut out = String::from(
        "point,parameter,value,depth,accel,omega_d_fit,omega_d_sigma,omega_b_fit,omega_b_sigma,\
         omega_b_predicted,gap_k0,gap_edge,m_dyn,m_dyn_sigma,m_eff,m_eff_sigma,m_band,clipped\n",
    );
    for (i, s) in summaries.iter().enumerate() {
        let wd = s.fit_window.as_ref();
        let wf = s.fit_full.as_ref();
        let m = s.masses.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            i,
            param,
            values.get(i).copied().unwrap_or(f64::NAN),
            s.depth,
            s.accel,
            wd.map(|f| f.omega_fast).unwrap_or(f64::NAN),
            wd.map(|f| f.sigma[1]).unwrap_or(f64::NAN),
            wf.map(|f| f.omega_slow).unwrap_or(f64::NAN),
            wf.map(|f| f.sigma[4]).unwrap_or(f64::NAN),
            s.omega_bloch_predicted_si,
            s.gap_k0_si,
            s.gap_edge_si,
            m.map(|m| m.m_dyn).unwrap_or(f64::NAN),
            m.map(|m| m.m_dyn_sigma).unwrap_or(f64::NAN),
            m.map(|m| m.m_eff).unwrap_or(f64::NAN),
            m.map(|m| m.m_eff_sigma).unwrap_or(f64::NAN),
            s.m_band_ratio,
            s.window_clipped,
        ));
    }
    out
}

/// Solve the band structure a scenario needs.
pub fn solve_scenario_bands(config: &ScenarioConfig) -> anyhow::Result<(LatticeConfig, BandData)> {
    let cfg = config.lattice_config()?;
    let grid = KGrid::uniform(config.bands.k_points);
    let bands = solve_bands(&cfg, &grid, config.bands.n_bands, config.bands.cutoff)?;
    Ok((cfg, bands))
}

/// Propagate the scenario's wavepacket; returns the lattice config, the
/// dimensionless force, and the evolution (with snapshots at every sample).
pub fn propagate(config: &ScenarioConfig) -> anyhow::Result<(LatticeConfig, f64, Evolution)> {
    let cfg = config.lattice_config()?;
    let force = cfg.accel_to_force(config.force.accel);
    let grid = GridSpec::new(config.grid.sites, config.grid.points_per_site)?;
    let sigma_z = 1.0 / (2.0 * config.packet.sigma_k);
    let psi = prepare_ground_state(cfg.depth(), &grid, sigma_z, config.packet.k0)?;
    let schedule = ForceSchedule::from_si(
        &cfg,
        config.force.delay_us * 1e-6,
        config.force.rise_us * 1e-6,
        config.force.accel,
    );
    let sample = cfg.time_to_recoil(config.propagation.sample_us * 1e-6);
    let opts = EvolveOptions {
        dt: config.propagation.dt_tr,
        t_final: cfg.time_to_recoil(config.propagation.duration_us * 1e-6),
        g: config.propagation.nonlinearity,
        sample_interval: sample,
        snapshot_interval: Some(sample),
        n_peak_windows: 7,
        guard_sites: config.propagation.guard_sites,
        potential_offset: 0.0,
    };
    let evo = evolve(&psi, cfg.depth(), &schedule, &opts)?;
    Ok((cfg, force, evo))
}

fn measurement_config(config: &ScenarioConfig) -> MeasurementConfig {
    MeasurementConfig {
        tof_time: config.tof.time_ms * 1e-3,
        window_vr: config.tof.window_vr,
        n_profile_points: config.tof.profile_points,
        n_peaks: config.tof.n_peaks,
        noise_relative: config.tof.noise,
        seed: config.output.seed,
        ..Default::default()
    }
}

/// Run one resolved scenario point and write its bundle.
pub fn run_point(config: &ScenarioConfig, dir: &Path) -> anyhow::Result<PointSummary> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest::new(&config.to_toml(), config.output.seed);
    emit(&mut manifest, dir, "config.toml", config.to_toml().as_bytes())?;

    let (cfg, bands) = solve_scenario_bands(config)?;
    let mut buf = Vec::new();
    bands.write_csv(&mut buf)?;
    emit(&mut manifest, dir, "bands.csv", &buf)?;

    let (_, force, evo) = propagate(config).context("propagation failed")?;
    let mut buf = Vec::new();
    evo.trace.write_csv(&mut buf)?;
    emit(&mut manifest, dir, "trace_direct.csv", &buf)?;

    if config.propagation.dump_snapshots {
        for (i, snap) in evo.snapshots.iter().enumerate() {
            let mut buf = Vec::new();
            snap.write_csv(&mut buf)?;
            emit(&mut manifest, dir, &format!("snapshot_{i:04}.csv"), &buf)?;
        }
    }

    // measurement pipeline
    let mut window_clipped = false;
    let analysis_trace: VelocityTrace = if config.analysis.pipeline == "diffraction" {
        let measured = diffraction_trace(&cfg, &evo.snapshots, &measurement_config(config))?;
        window_clipped = measured.window_clipped;
        let mut buf = Vec::new();
        measured.trace.write_csv(&mut buf)?;
        emit(&mut manifest, dir, "trace_measured.csv", &buf)?;
        let frames = serde_json::to_string_pretty(&measured.fits)?;
        emit(&mut manifest, dir, "diffraction_fits.json", frames.as_bytes())?;
        measured.trace
    } else {
        evo.trace.clone()
    };

    // two-sinusoid fits: fast-component window and the full trace
    let gap0 = bands.gap_at(1, 0, config.packet.k0);
    let guess = TwoSineGuess {
        omega_fast: Some(gap0),
        omega_slow: Some(std::f64::consts::PI * force),
    };
    let window_tr = cfg.time_to_recoil(config.analysis.fit_window_us * 1e-6);
    let fit_window = fit_two_sine(&analysis_trace, Some((0.0, window_tr)), &guess);
    let fit_full = fit_two_sine(&analysis_trace, None, &guess);

    let mut fit_error = None;
    let masses = match &fit_window {
        Ok(f) => match extract_masses(f, force) {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        },
        Err(e) => {
            fit_error = Some(e.to_string());
            (None, Some("window fit unavailable".to_string()))
        }
    };
    let (masses, mass_error) = masses;

    // residuals of the window fit
    if let Ok(f) = &fit_window {
        let mut text = String::from("t,v,model,residual\n");
        for i in 0..analysis_trace.times.len() {
            let t = analysis_trace.times[i];
            if t < f.window.0 || t > f.window.1 {
                continue;
            }
            let v = analysis_trace.velocity[i];
            let model = f.eval(t);
            text.push_str(&format!("{t},{v},{model},{}\n", v - model));
        }
        emit(&mut manifest, dir, "residuals.csv", text.as_bytes())?;
    }

    // low-pass guide curve
    if config.analysis.lowpass_guide {
        let cutoff = geometric_cutoff(std::f64::consts::PI * force, gap0);
        if let Ok(guide) = lowpass_guide(&analysis_trace, cutoff) {
            let mut text = String::from("t,v_guide\n");
            for (t, v) in analysis_trace.times.iter().zip(&guide) {
                text.push_str(&format!("{t},{v}\n"));
            }
            emit(&mut manifest, dir, "guide.csv", text.as_bytes())?;
        }
    }

    let fits_json = serde_json::json!({
        "two_sine_window": fit_window.as_ref().ok(),
        "two_sine_full": fit_full.as_ref().ok(),
        "masses": masses,
    });
    emit(&mut manifest, dir, "fits.json", serde_json::to_string_pretty(&fits_json)?.as_bytes())?;

    let gap_edge = bands.gap_at(1, 0, 1.0);
    let summary = PointSummary {
        name: config.name.clone(),
        depth: cfg.depth(),
        accel: config.force.accel,
        force_recoil: force,
        gap_k0_si: cfg.frequency_to_si(gap0),
        gap_edge_si: cfg.frequency_to_si(gap_edge),
        h_over_gap_si: constants::PLANCK / cfg.energy_to_si(gap0),
        m_band_ratio: 1.0 / bands.inverse_eff_mass_at(0, config.packet.k0),
        omega_bloch_predicted_si: cfg.bloch_frequency_si(force),
        bloch_period_si: 2.0 * std::f64::consts::PI / cfg.bloch_frequency_si(force),
        window_clipped,
        fit_window: fit_window.as_ref().ok().map(FitSummary::from),
        fit_full: fit_full.as_ref().ok().map(FitSummary::from),
        fit_error,
        masses,
        mass_error,
    };
    emit(&mut manifest, dir, "summary.json", serde_json::to_string_pretty(&summary)?.as_bytes())?;
    manifest.write(dir)?;
    Ok(summary)
}

/// Weighted linear regression y = a + b x with per-point standard deviations.
/// Returns (intercept, intercept_sigma, slope, slope_sigma).
pub fn weighted_linear_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> (f64, f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s).max(1e-300)).collect();
    let sw: f64 = w.iter().sum();
    let swx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let swy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let swxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let swxy: f64 = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (x, y))| w * x * y)
        .sum();
    let denom = sw * swxx - swx * swx;
    let slope = (sw * swxy - swx * swy) / denom;
    let intercept = (swxx * swy - swx * swxy) / denom;
    let slope_sigma = (sw / denom).sqrt();
    let intercept_sigma = (swxx / denom).sqrt();
    (intercept, intercept_sigma, slope, slope_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_regression_recovers_a_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|x| 0.5 + 2.0 * x).collect();
        let s = [0.1; 4];
        let (a, _, b, _) = weighted_linear_fit(&x, &y, &s);
        approx::assert_abs_diff_eq!(a, 0.5, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(b, 2.0, epsilon = 1e-12);
    }
}
