//! Built-in scenarios that regenerate the headline results numerically:
//! `fig2` (momentum-resolved velocity trace at the reference depth and force),
//! `fig3` (frequency scalings with force and depth), and `fig4` (effective
//! and dynamical mass versus depth).

use std::path::Path;

use serde::Serialize;

use crate::config::{
    AnalysisSection, ForceSection, GridSection, LatticeSection, PacketSection,
    PropagationSection, ScenarioConfig, SweepSection,
};
use crate::manifest::{emit, Manifest};
use crate::scenario::{run_scenario, weighted_linear_fit};
use rayon::prelude::*;
use blochdyn_core::units::constants;

fn base_config(name: &str, depth: f64) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: crate::config::SCHEMA_VERSION,
        name: name.to_string(),
        lattice: LatticeSection::rb87_1064(depth),
        force: ForceSection::default(),
        packet: PacketSection::default(),
        grid: GridSection { sites: 256, points_per_site: 16 },
        propagation: PropagationSection::default(),
        bands: Default::default(),
        tof: Default::default(),
        analysis: AnalysisSection::default(),
        output: Default::default(),
        sweep: None,
    }
}

/// Reference run: s = 9.4, F/m0 = 11.7 m/s², 20 µs delay + 20 µs ramp, 2 ms
/// of dynamics sampled every 4 µs through the full measurement pipeline.
pub fn fig2_config(seed: u64) -> ScenarioConfig {
    let mut cfg = base_config("fig2", 9.4);
    cfg.force = ForceSection { accel: 11.7, delay_us: 20.0, rise_us: 20.0 };
    // two full milliseconds: higher-band tails travel, so use the full box
    cfg.grid = GridSection { sites: 512, points_per_site: 16 };
    cfg.propagation.duration_us = 2000.0;
    cfg.output.seed = seed;
    cfg
}

#[derive(Debug, Serialize)]
pub struct Fig2Summary {
    pub omega_bloch_predicted_si: f64,
    pub omega_bloch_fit_si: f64,
    pub omega_bloch_fit_sigma_si: f64,
    pub bloch_period_si: f64,
    pub omega_gap_fit_si: f64,
    pub gap_k0_si: f64,
    pub gap_edge_si: f64,
    pub h_over_gap_si: f64,
    pub m_dyn: Option<f64>,
    pub m_eff: Option<f64>,
    pub window_clipped: bool,
}

pub fn fig2(out: &Path, seed: u64) -> anyhow::Result<Fig2Summary> {
    let config = fig2_config(seed);
    let summaries = run_scenario(&config, out)?;
    let s = &summaries[0];
    let cfg = config.lattice_config()?;
    let t_r = cfg.recoil_time();

    // first-order prediction on the same cadence, for side-by-side plots of
    // the acceleration decomposition against the measured trace
    {
        let bands = blochdyn_core::bandstructure::solve_bands(
            &cfg,
            &blochdyn_core::bandstructure::KGrid::uniform(config.bands.k_points),
            config.bands.n_bands,
            config.bands.cutoff,
        )?;
        let spec = blochdyn_core::analytic::WavepacketSpec::gaussian(
            0,
            config.packet.k0,
            config.packet.sigma_k,
        );
        let force = cfg.accel_to_force(config.force.accel);
        let sample = cfg.time_to_recoil(config.propagation.sample_us * 1e-6);
        let n = (cfg.time_to_recoil(750e-6) / sample).round() as usize;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * sample).collect();
        let run = blochdyn_core::analytic::perturbative_run(
            &bands,
            &spec,
            force,
            &times,
            &blochdyn_core::analytic::PerturbativeOptions::default(),
        )?;
        let mut buf = Vec::new();
        blochdyn_core::analytic::write_run_csv(&run, &mut buf)?;
        let mut manifest = Manifest::read(out)?;
        emit(&mut manifest, out, "perturbative.csv", &buf)?;
        manifest.write(out)?;
    }
    let full = s.fit_full.as_ref();
    let window = s.fit_window.as_ref();
    let summary = Fig2Summary {
        omega_bloch_predicted_si: s.omega_bloch_predicted_si,
        omega_bloch_fit_si: full.map(|f| f.omega_slow / t_r).unwrap_or(f64::NAN),
        omega_bloch_fit_sigma_si: full.map(|f| f.sigma[4] / t_r).unwrap_or(f64::NAN),
        bloch_period_si: s.bloch_period_si,
        omega_gap_fit_si: window.map(|f| f.omega_fast / t_r).unwrap_or(f64::NAN),
        gap_k0_si: s.gap_k0_si,
        gap_edge_si: s.gap_edge_si,
        h_over_gap_si: s.h_over_gap_si,
        m_dyn: s.masses.as_ref().map(|m| m.m_dyn),
        m_eff: s.masses.as_ref().map(|m| m.m_eff),
        window_clipped: s.window_clipped,
    };
    let mut manifest = Manifest::read(out)?;
    emit(
        &mut manifest,
        out,
        "fig2_summary.json",
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    manifest.write(out)?;
    Ok(summary)
}

/// Force values of the Bloch-frequency sweep (m/s²).
pub const FIG3_FORCES: [f64; 5] = [4.0, 6.0, 8.0, 10.0, 12.0];
/// Depths of the gap-frequency sweep.
pub const FIG3_DEPTHS: [f64; 4] = [3.0, 6.0, 9.4, 12.0];
/// Force trio of the gap-frequency force-independence scan (m/s²).
pub const FIG3_GAP_FORCES: [f64; 3] = [1.5, 3.0, 4.5];
/// Fixed force of the depth sweep (m/s²).
pub const FIG3_GAP_FORCE: f64 = 3.0;
/// Profile noise of the frequency scans, relative to the peak density; gives
/// the fits experiment-like error bars.
pub const FIG3_NOISE: f64 = 0.01;

#[derive(Debug, Serialize)]
pub struct Fig3Summary {
    /// ω_B(F) regression against F in newtons: slope should be d/ħ.
    pub slope_si: f64,
    pub slope_sigma_si: f64,
    pub intercept_si: f64,
    pub intercept_sigma_si: f64,
    pub d_over_hbar: f64,
    pub slope_relative_deviation: f64,
    /// per-force (accel, ω_d fit, 1σ) at s = 9.4, rad/s
    pub omega_gap_vs_force: Vec<(f64, f64, f64)>,
    /// per-depth: (s, ω_d fit, σ, gap(0)/ħ, gap(k_r)/ħ) in rad/s
    pub omega_gap_vs_depth: Vec<(f64, f64, f64, f64, f64)>,
}

pub fn fig3(out: &Path, seed: u64) -> anyhow::Result<Fig3Summary> {
    std::fs::create_dir_all(out)?;

    // (a) Bloch frequency vs force. Each run covers exactly two Bloch
    // periods so the single-sinusoid fit of the (slightly anharmonic) slow
    // component is unbiased by spectral leakage.
    let bloch_points: Vec<(std::path::PathBuf, ScenarioConfig)> = FIG3_FORCES
        .iter()
        .enumerate()
        .map(|(i, &accel)| {
            let mut cfg = base_config("fig3_bloch", 9.4);
            cfg.grid = GridSection { sites: 512, points_per_site: 16 };
            cfg.force.accel = accel;
            // frequency metrology wants every visible order inside the window
            cfg.tof.n_peaks = 5;
            cfg.tof.window_vr = (-5.15, 5.15);
            cfg.tof.profile_points = 1024;
            cfg.tof.noise = FIG3_NOISE;
            cfg.output.seed = seed + i as u64;
            let lattice = cfg.lattice_config().expect("builtin config");
            let period = 2.0 * std::f64::consts::PI
                / lattice.bloch_frequency_si(lattice.accel_to_force(accel));
            cfg.propagation.duration_us = 2.0 * period * 1e6 + cfg.propagation.sample_us;
            (out.join(format!("bloch_{i}")), cfg)
        })
        .collect();
    let bloch: Vec<crate::scenario::PointSummary> = bloch_points
        .par_iter()
        .map(|(dir, cfg)| crate::scenario::run_point(cfg, dir))
        .collect::<anyhow::Result<_>>()?;

    // (b) gap frequency vs depth at a fixed gentle force, short traces.
    let mut gap_cfg = base_config("fig3_gap", 9.4);
    gap_cfg.output.seed = seed;
    gap_cfg.force.accel = FIG3_GAP_FORCE;
    gap_cfg.tof.n_peaks = 5;
    gap_cfg.tof.window_vr = (-5.15, 5.15);
    gap_cfg.tof.profile_points = 1024;
    gap_cfg.propagation.duration_us = 400.0;
    gap_cfg.sweep = Some(SweepSection {
        parameter: "lattice.depth".into(),
        values: FIG3_DEPTHS.to_vec(),
    });
    let gap = run_scenario(&gap_cfg, &out.join("gap"))?;

    // (c) gap frequency across a factor-3 force scan at fixed depth.
    let mut gf_cfg = base_config("fig3_gap_force", 9.4);
    gf_cfg.output.seed = seed + 100;
    gf_cfg.tof.noise = FIG3_NOISE;
    gf_cfg.propagation.duration_us = 400.0;
    gf_cfg.sweep = Some(SweepSection {
        parameter: "force.accel".into(),
        values: FIG3_GAP_FORCES.to_vec(),
    });
    let gap_force = run_scenario(&gf_cfg, &out.join("gap_force"))?;

    let cfg = gap_cfg.lattice_config()?;
    let t_r = cfg.recoil_time();
    let mass = cfg.bare_mass();

    // regression of fitted ω_B against F (newtons)
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ss = Vec::new();
    for (accel, point) in FIG3_FORCES.iter().zip(&bloch) {
        let fit = point
            .fit_full
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("Bloch fit failed at F/m0 = {accel}"))?;
        xs.push(accel * mass);
        ys.push(fit.omega_slow / t_r);
        ss.push((fit.sigma[4] / t_r).max(1e-6 * fit.omega_slow / t_r));
    }
    let (intercept, intercept_sigma, slope, slope_sigma) = weighted_linear_fit(&xs, &ys, &ss);
    let d_over_hbar = cfg.lattice_constant() / constants::HBAR;

    let omega_gap_vs_force = FIG3_GAP_FORCES
        .iter()
        .zip(&gap_force)
        .filter_map(|(accel, point)| {
            point
                .fit_window
                .as_ref()
                .map(|f| (*accel, f.omega_fast / t_r, f.sigma[1] / t_r))
        })
        .collect();
    let omega_gap_vs_depth = FIG3_DEPTHS
        .iter()
        .zip(&gap)
        .map(|(s, point)| {
            let (w, sig) = point
                .fit_window
                .as_ref()
                .map(|f| (f.omega_fast / t_r, f.sigma[1] / t_r))
                .unwrap_or((f64::NAN, f64::NAN));
            (*s, w, sig, point.gap_k0_si, point.gap_edge_si)
        })
        .collect();

    let summary = Fig3Summary {
        slope_si: slope,
        slope_sigma_si: slope_sigma,
        intercept_si: intercept,
        intercept_sigma_si: intercept_sigma,
        d_over_hbar,
        slope_relative_deviation: slope / d_over_hbar - 1.0,
        omega_gap_vs_force,
        omega_gap_vs_depth,
    };

    let mut manifest = Manifest::new(&gap_cfg.to_toml(), seed);
    let mut csv = String::from("accel,force_N,omega_b_fit,omega_b_sigma,omega_b_predicted\n");
    for (i, point) in bloch.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            FIG3_FORCES[i], xs[i], ys[i], ss[i], point.omega_bloch_predicted_si
        ));
    }
    emit(&mut manifest, out, "bloch_frequencies.csv", csv.as_bytes())?;
    let mut csv = String::from("depth,omega_d_fit,omega_d_sigma,gap_k0,gap_edge\n");
    for row in &summary.omega_gap_vs_depth {
        csv.push_str(&format!("{},{},{},{},{}\n", row.0, row.1, row.2, row.3, row.4));
    }
    emit(&mut manifest, out, "gap_frequencies.csv", csv.as_bytes())?;
    let mut csv = String::from("accel,omega_d_fit,omega_d_sigma\n");
    for row in &summary.omega_gap_vs_force {
        csv.push_str(&format!("{},{},{}\n", row.0, row.1, row.2));
    }
    emit(&mut manifest, out, "gap_vs_force.csv", csv.as_bytes())?;
    emit(
        &mut manifest,
        out,
        "fig3_summary.json",
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    manifest.write(out)?;
    Ok(summary)
}

/// Depths of the mass-extraction sweep.
pub const FIG4_DEPTHS: [f64; 9] = [2.0, 3.5, 5.0, 6.5, 8.0, 9.4, 10.0, 12.0, 15.0];
/// Gentle drive of the mass sweep (m/s²): short-window slope reading stays in
/// the band-bottom region.
pub const FIG4_FORCE: f64 = 3.0;
/// Fast-component fit window (µs).
pub const FIG4_WINDOW_US: f64 = 250.0;

pub fn fig4_config(seed: u64) -> ScenarioConfig {
    let mut cfg = base_config("fig4", 9.4);
    cfg.force = ForceSection { accel: FIG4_FORCE, delay_us: 0.0, rise_us: 0.0 };
    cfg.packet = PacketSection { sigma_k: 0.005, k0: 0.0 };
    cfg.grid = GridSection { sites: 512, points_per_site: 16 };
    cfg.propagation.duration_us = 270.0;
    cfg.analysis.fit_window_us = FIG4_WINDOW_US;
    cfg.output.seed = seed;
    cfg.sweep = Some(SweepSection {
        parameter: "lattice.depth".into(),
        values: FIG4_DEPTHS.to_vec(),
    });
    cfg
}

#[derive(Debug, Serialize)]
pub struct Fig4Row {
    pub depth: f64,
    pub m_dyn: Option<f64>,
    pub m_dyn_sigma: Option<f64>,
    pub m_eff: Option<f64>,
    pub m_eff_sigma: Option<f64>,
    pub m_band: f64,
    pub window_clipped: bool,
}

pub fn fig4(out: &Path, seed: u64) -> anyhow::Result<Vec<Fig4Row>> {
    let config = fig4_config(seed);
    let summaries = run_scenario(&config, out)?;
    let rows: Vec<Fig4Row> = summaries
        .iter()
        .map(|s| Fig4Row {
            depth: s.depth,
            m_dyn: s.masses.as_ref().map(|m| m.m_dyn),
            m_dyn_sigma: s.masses.as_ref().map(|m| m.m_dyn_sigma),
            m_eff: s.masses.as_ref().map(|m| m.m_eff),
            m_eff_sigma: s.masses.as_ref().map(|m| m.m_eff_sigma),
            m_band: s.m_band_ratio,
            window_clipped: s.window_clipped,
        })
        .collect();

    let mut manifest = Manifest::read(out)?;
    let mut csv =
        String::from("depth,m_dyn,m_dyn_sigma,m_eff,m_eff_sigma,m_band,window_clipped\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.depth,
            r.m_dyn.unwrap_or(f64::NAN),
            r.m_dyn_sigma.unwrap_or(f64::NAN),
            r.m_eff.unwrap_or(f64::NAN),
            r.m_eff_sigma.unwrap_or(f64::NAN),
            r.m_band,
            r.window_clipped,
        ));
    }
    emit(&mut manifest, out, "masses.csv", csv.as_bytes())?;
    emit(
        &mut manifest,
        out,
        "fig4_summary.json",
        serde_json::to_string_pretty(&rows)?.as_bytes(),
    )?;
    manifest.write(out)?;
    Ok(rows)
}

/// Return type of [`run`]: which summaries were produced.
pub enum ReproduceOutcome {
    Fig2(Fig2Summary),
    Fig3(Fig3Summary),
    Fig4(Vec<Fig4Row>),
}

pub fn run(which: &str, out: &Path, seed: u64) -> anyhow::Result<ReproduceOutcome> {
    match which {
        "fig2" => Ok(ReproduceOutcome::Fig2(fig2(out, seed)?)),
        "fig3" => Ok(ReproduceOutcome::Fig3(fig3(out, seed)?)),
        "fig4" => Ok(ReproduceOutcome::Fig4(fig4(out, seed)?)),
        other => anyhow::bail!("unknown scenario {other:?} (expected fig2, fig3, or fig4)"),
    }
}
