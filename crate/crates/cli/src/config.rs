//! Declarative scenario configuration: a versioned TOML schema whose defaults
//! mirror the library defaults; everything is echoed into the output bundle.

use blochdyn_core::bandstructure;
use blochdyn_core::units::{constants, LatticeConfig};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    pub lattice: LatticeSection,
    #[serde(default)]
    pub force: ForceSection,
    #[serde(default)]
    pub packet: PacketSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub propagation: PropagationSection,
    #[serde(default)]
    pub bands: BandsSection,
    #[serde(default)]
    pub tof: TofSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_name() -> String {
    "scenario".into()
}

/// Physical lattice parameters; all three are required.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSection {
    /// Dimensionless depth s = U_L/E_r.
    pub depth: Option<f64>,
    pub wavelength_nm: Option<f64>,
    pub mass_amu: Option<f64>,
}

impl LatticeSection {
    pub fn rb87_1064(depth: f64) -> Self {
        Self {
            depth: Some(depth),
            wavelength_nm: Some(1064.0),
            mass_amu: Some(constants::RB87_MASS_AMU),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceSection {
    /// Plateau acceleration F/m0 in m/s².
    pub accel: f64,
    pub delay_us: f64,
    pub rise_us: f64,
}

impl Default for ForceSection {
    fn default() -> Self {
        Self { accel: 11.7, delay_us: 0.0, rise_us: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacketSection {
    /// Crystal-momentum width of the packet, units of k_r.
    pub sigma_k: f64,
    /// Center crystal momentum, units of k_r.
    pub k0: f64,
}

impl Default for PacketSection {
    fn default() -> Self {
        Self { sigma_k: 0.02, k0: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub sites: usize,
    pub points_per_site: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { sites: 512, points_per_site: 16 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationSection {
    /// Step size in units of t_r.
    pub dt_tr: f64,
    pub duration_us: f64,
    pub sample_us: f64,
    /// Mean-field strength g (0 = linear Schrödinger).
    pub nonlinearity: f64,
    pub guard_sites: usize,
    /// Dump wavefunction snapshots alongside the traces.
    pub dump_snapshots: bool,
}

impl Default for PropagationSection {
    fn default() -> Self {
        Self {
            dt_tr: 1.0 / 500.0,
            duration_us: 2000.0,
            sample_us: 4.0,
            nonlinearity: 0.0,
            guard_sites: 50,
            dump_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsSection {
    pub n_bands: usize,
    pub cutoff: usize,
    pub k_points: usize,
}

impl Default for BandsSection {
    fn default() -> Self {
        Self {
            n_bands: bandstructure::DEFAULT_BANDS,
            cutoff: bandstructure::DEFAULT_CUTOFF,
            k_points: bandstructure::DEFAULT_KPOINTS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TofSection {
    pub time_ms: f64,
    /// Analysis window in units of v_r * tof_time.
    pub window_vr: (f64, f64),
    pub profile_points: usize,
    pub n_peaks: usize,
    /// Additive Gaussian noise relative to each profile's peak density.
    pub noise: f64,
}

impl Default for TofSection {
    fn default() -> Self {
        let m = blochdyn_core::pipeline::MeasurementConfig::default();
        Self {
            time_ms: m.tof_time * 1e3,
            window_vr: m.window_vr,
            profile_points: m.n_profile_points,
            n_peaks: m.n_peaks,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Window of the fast-component fit, microseconds.
    pub fit_window_us: f64,
    /// "diffraction" (full synthetic measurement) or "direct" (use <p>/m0).
    pub pipeline: String,
    pub lowpass_guide: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { fit_window_us: 300.0, pipeline: "diffraction".into(), lowpass_guide: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub seed: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { seed: 1 }
    }
}

/// One-parameter sweep; each value produces an independent point directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Dotted path, e.g. "force.accel" or "lattice.depth".
    pub parameter: String,
    pub values: Vec<f64>,
}

/// Validation report: hard errors (exit code 2) and advisory warnings.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.errors {
            out.push_str(&format!("error: {e}\n"));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        if self.is_ok() && self.warnings.is_empty() {
            out.push_str("configuration valid\n");
        }
        out
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn lattice_config(&self) -> anyhow::Result<LatticeConfig> {
        let depth = self.lattice.depth.ok_or_else(|| anyhow::anyhow!("lattice.depth missing"))?;
        let wl = self
            .lattice
            .wavelength_nm
            .ok_or_else(|| anyhow::anyhow!("lattice.wavelength_nm missing"))?;
        let mass = self
            .lattice
            .mass_amu
            .ok_or_else(|| anyhow::anyhow!("lattice.mass_amu missing"))?;
        Ok(LatticeConfig::new(depth, wl * 1e-9, mass * constants::ATOMIC_MASS_KG)?)
    }

    /// Apply a sweep override along a dotted parameter path.
    pub fn with_override(&self, path: &str, value: f64) -> anyhow::Result<Self> {
        let mut cfg = self.clone();
        cfg.sweep = None;
        match path {
            "lattice.depth" => cfg.lattice.depth = Some(value),
            "force.accel" => cfg.force.accel = value,
            "force.delay_us" => cfg.force.delay_us = value,
            "force.rise_us" => cfg.force.rise_us = value,
            "packet.sigma_k" => cfg.packet.sigma_k = value,
            "packet.k0" => cfg.packet.k0 = value,
            "propagation.duration_us" => cfg.propagation.duration_us = value,
            "propagation.nonlinearity" => cfg.propagation.nonlinearity = value,
            "analysis.fit_window_us" => cfg.analysis.fit_window_us = value,
            other => anyhow::bail!("unknown sweep parameter {other:?}"),
        }
        Ok(cfg)
    }

    /// Schema and physics guards, reported without running the scenario.
    /// Errors enumerate every offending field.
    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();
        if self.schema_version != SCHEMA_VERSION {
            rep.errors.push(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }

        // lattice
        match self.lattice.depth {
            None => rep.errors.push("lattice.depth is required".into()),
            Some(s) if !(s >= 0.0) => {
                rep.errors.push(format!("lattice.depth = {s} must be >= 0"))
            }
            _ => {}
        }
        match self.lattice.wavelength_nm {
            None => rep.errors.push("lattice.wavelength_nm is required".into()),
            Some(w) if !(w > 0.0) => {
                rep.errors.push(format!("lattice.wavelength_nm = {w} must be > 0"))
            }
            _ => {}
        }
        match self.lattice.mass_amu {
            None => rep.errors.push("lattice.mass_amu is required".into()),
            Some(m) if !(m > 0.0) => {
                rep.errors.push(format!("lattice.mass_amu = {m} must be > 0"))
            }
            _ => {}
        }

        // time step guard
        if let Some(s) = self.lattice.depth {
            let sdt = s * self.propagation.dt_tr;
            if sdt > 0.5 {
                rep.errors.push(format!(
                    "time step too large: s*dt/t_r = {sdt:.3} violates the s*dt/t_r <= 0.5 rule"
                ));
            }
        }
        if !(self.propagation.dt_tr > 0.0) {
            rep.errors.push("propagation.dt_tr must be > 0".into());
        }
        if !(self.propagation.duration_us > 0.0) {
            rep.errors.push("propagation.duration_us must be > 0".into());
        }
        if self.propagation.nonlinearity < 0.0 {
            rep.errors.push("propagation.nonlinearity must be >= 0".into());
        }

        // grid
        let n = self.grid.sites * self.grid.points_per_site;
        if !n.is_power_of_two() || self.grid.points_per_site < 8 {
            rep.errors.push(format!(
                "grid {}x{} invalid: total points must be a power of two with >= 8 points per site",
                self.grid.sites, self.grid.points_per_site
            ));
        }

        // packet
        if !(self.packet.sigma_k > 0.0) {
            rep.errors.push("packet.sigma_k must be > 0".into());
        } else {
            let (lo, hi) =
                (self.packet.k0 - 7.0 * self.packet.sigma_k, self.packet.k0 + 7.0 * self.packet.sigma_k);
            if lo <= -1.0 || hi >= 1.0 {
                rep.errors.push(format!(
                    "packet support [{lo:.3}, {hi:.3}] reaches the zone edge"
                ));
            }
            // box margin: envelope plus the guarded edge band must fit
            let sigma_z = 1.0 / (2.0 * self.packet.sigma_k);
            let half_box = 0.5 * self.grid.sites as f64 * std::f64::consts::PI;
            let guard = self.propagation.guard_sites as f64 * std::f64::consts::PI;
            if 6.0 * sigma_z + guard > half_box {
                rep.errors.push(format!(
                    "box margin: envelope 6σ_z = {:.0}/k_r plus guard {:.0}/k_r exceeds the half box {:.0}/k_r",
                    6.0 * sigma_z, guard, half_box
                ));
            }
        }

        // bands
        if self.bands.n_bands == 0 || self.bands.n_bands > 2 * self.bands.cutoff {
            rep.errors.push(format!(
                "bands.n_bands = {} needs 1..=2*cutoff (cutoff {})",
                self.bands.n_bands, self.bands.cutoff
            ));
        }
        if self.bands.k_points < 5 || self.bands.k_points % 2 == 0 {
            rep.errors.push("bands.k_points must be odd and >= 5".into());
        }

        // tof / analysis
        if !(self.tof.window_vr.0 < self.tof.window_vr.1) {
            rep.errors.push("tof.window_vr must be an increasing pair".into());
        }
        if self.tof.n_peaks == 0 {
            rep.errors.push("tof.n_peaks must be >= 1".into());
        }
        if self.tof.noise < 0.0 {
            rep.errors.push("tof.noise must be >= 0".into());
        }
        match self.analysis.pipeline.as_str() {
            "diffraction" | "direct" => {}
            other => rep.errors.push(format!(
                "analysis.pipeline = {other:?} (expected \"diffraction\" or \"direct\")"
            )),
        }

        // sweep
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                rep.errors.push("sweep.values must be nonempty".into());
            }
            if let Err(e) = self.with_override(&sweep.parameter, sweep.values.first().copied().unwrap_or(0.0)) {
                rep.errors.push(e.to_string());
            }
        }

        // physics advisories requiring the lattice scales
        if let Ok(cfg) = self.lattice_config() {
            if self.propagation.sample_us * 1e-6 < cfg.time_to_si(self.propagation.dt_tr) {
                rep.errors.push(format!(
                    "propagation.sample_us = {} is below one time step",
                    self.propagation.sample_us
                ));
            }
            // deep-lattice caveat of the four-peak window
            if let Some(s) = self.lattice.depth {
                if s > 10.0 && self.tof.n_peaks <= 4 {
                    rep.warnings.push(format!(
                        "depth s = {s} with {} fitted peaks: higher diffraction orders fall outside \
                         the window and bias the reconstructed velocity",
                        self.tof.n_peaks
                    ));
                }
            }
            // first-order validity guard via a coarse band solve
            if let Some(ratio) = self.perturbative_guard_ratio() {
                if ratio > blochdyn_core::analytic::DEFAULT_GUARD_THRESHOLD {
                    rep.warnings.push(format!(
                        "first-order amplitude ratio max|F x_nN/E_nN| = {ratio:.2} exceeds {}",
                        blochdyn_core::analytic::DEFAULT_GUARD_THRESHOLD
                    ));
                }
            }
        }
        rep
    }

    /// Coarse estimate of max |F x_10/E_10| over the packet support.
    fn perturbative_guard_ratio(&self) -> Option<f64> {
        let cfg = self.lattice_config().ok()?;
        let force = cfg.accel_to_force(self.force.accel);
        let grid = bandstructure::KGrid::uniform(33);
        let bands = bandstructure::solve_bands(&cfg, &grid, 2, 16).ok()?;
        let mut max_ratio: f64 = 0.0;
        for &k in grid.points() {
            let gap = bands.gap_at(1, 0, k);
            if gap.abs() < 1e-6 {
                continue;
            }
            let p = bands.momentum_at(1, 0, k);
            max_ratio = max_ratio.max(2.0 * force.abs() * p.abs() / (gap * gap));
        }
        Some(max_ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
[lattice]
depth = 9.4
wavelength_nm = 1064.0
mass_amu = 86.909180527
"#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ScenarioConfig::from_toml(minimal_toml()).unwrap();
        assert_eq!(cfg.schema_version, SCHEMA_VERSION);
        assert_eq!(cfg.grid.sites, 512);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn missing_mass_is_an_error() {
        let text = r#"
[lattice]
depth = 9.4
wavelength_nm = 1064.0
"#;
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        let rep = cfg.validate();
        assert!(!rep.is_ok());
        assert!(rep.errors.iter().any(|e| e.contains("mass_amu")));
    }

    #[test]
    fn negative_depth_is_an_error() {
        let mut cfg = ScenarioConfig::from_toml(minimal_toml()).unwrap();
        cfg.lattice.depth = Some(-1.0);
        let rep = cfg.validate();
        assert!(rep.errors.iter().any(|e| e.contains("lattice.depth")));
    }

    #[test]
    fn oversized_time_step_names_the_rule() {
        let mut cfg = ScenarioConfig::from_toml(minimal_toml()).unwrap();
        cfg.propagation.dt_tr = 0.1;
        let rep = cfg.validate();
        assert!(rep.errors.iter().any(|e| e.contains("s*dt/t_r")));
    }

    #[test]
    fn all_offending_fields_are_enumerated() {
        let text = r#"
[lattice]
depth = -2.0
wavelength_nm = 0.0
mass_amu = -1.0
"#;
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        let rep = cfg.validate();
        assert!(rep.errors.len() >= 3, "{:?}", rep.errors);
    }

    #[test]
    fn sweep_overrides_apply() {
        let cfg = ScenarioConfig::from_toml(minimal_toml()).unwrap();
        let over = cfg.with_override("force.accel", 4.0).unwrap();
        assert_eq!(over.force.accel, 4.0);
        assert!(cfg.with_override("bogus.path", 1.0).is_err());
    }

    #[test]
    fn config_echo_round_trips() {
        let cfg = ScenarioConfig::from_toml(minimal_toml()).unwrap();
        let echoed = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(echoed.lattice.depth, cfg.lattice.depth);
        assert_eq!(echoed.tof.window_vr, cfg.tof.window_vr);
    }
}
