//! Lattice parameters and recoil-unit conversions.
//!
//! Everything downstream works in recoil units: energies in `E_r`, momenta in
//! `ħ k_r`, lengths in `1/k_r`, times in `t_r = ħ/E_r`, velocities in
//! `v_r = ħ k_r / m0`. A force `F` is carried as the dimensionless
//! `f = F / (k_r E_r)`; with that choice an acceleration `F/m0` equals `f`
//! in units of `v_r/t_r`, and the Bloch frequency is `ω_B t_r = π f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod constants {
    /// Reduced Planck constant, J s.
    pub const HBAR: f64 = 1.054_571_817e-34;
    /// Planck constant, J s.
    pub const PLANCK: f64 = 6.626_070_15e-34;
    /// Atomic mass unit, kg.
    pub const ATOMIC_MASS_KG: f64 = 1.660_539_066_60e-27;
    /// Mass of an atom of rubidium-87 in atomic mass units.
    pub const RB87_MASS_AMU: f64 = 86.909_180_527;
}

/// Physical parameters of the optical lattice and the particle in it.
///
/// `depth` is the dimensionless lattice depth `s = U_L/E_r`; the lattice
/// constant is `d = λ/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    depth: f64,
    wavelength: f64,
    bare_mass: f64,
}

impl LatticeConfig {
    /// Build a configuration, validating `s >= 0`, `λ > 0`, `m0 > 0`.
    pub fn new(depth: f64, wavelength: f64, bare_mass: f64) -> Result<Self> {
        let mut issues = Vec::new();
        if !(depth >= 0.0) {
            issues.push(format!("depth s = {depth} must be >= 0"));
        }
        if !(wavelength > 0.0) {
            issues.push(format!("wavelength = {wavelength} must be > 0"));
        }
        if !(bare_mass > 0.0) {
            issues.push(format!("bare mass = {bare_mass} must be > 0"));
        }
        if !issues.is_empty() {
            return Err(Error::InvalidConfig(issues.join("; ")));
        }
        Ok(Self { depth, wavelength, bare_mass })
    }

    /// Rubidium-87 in a 1064 nm standing wave (532 nm lattice constant).
    pub fn rb87_1064nm(depth: f64) -> Result<Self> {
        Self::new(
            depth,
            1.064e-6,
            constants::RB87_MASS_AMU * constants::ATOMIC_MASS_KG,
        )
    }

    /// Dimensionless lattice depth `s = U_L / E_r`.
    pub fn depth(&self) -> f64 {
        self.depth
    }

    /// Copy of this configuration at a different depth.
    pub fn with_depth(&self, depth: f64) -> Result<Self> {
        Self::new(depth, self.wavelength, self.bare_mass)
    }

    /// Laser wavelength λ, m.
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Particle mass m0, kg.
    pub fn bare_mass(&self) -> f64 {
        self.bare_mass
    }

    /// Lattice constant `d = λ/2`, m.
    pub fn lattice_constant(&self) -> f64 {
        0.5 * self.wavelength
    }

    /// Photon wavevector `k_r = 2π/λ`, 1/m.
    pub fn recoil_wavevector(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }

    /// Recoil energy `E_r = ħ²k_r²/(2 m0)`, J.
    pub fn recoil_energy(&self) -> f64 {
        let hk = constants::HBAR * self.recoil_wavevector();
        hk * hk / (2.0 * self.bare_mass)
    }

    /// Recoil velocity `v_r = ħ k_r / m0`, m/s.
    pub fn recoil_velocity(&self) -> f64 {
        constants::HBAR * self.recoil_wavevector() / self.bare_mass
    }

    /// Recoil time `t_r = ħ / E_r`, s.
    pub fn recoil_time(&self) -> f64 {
        constants::HBAR / self.recoil_energy()
    }

    // --- conversions: SI <-> recoil ---

    pub fn time_to_recoil(&self, t_si: f64) -> f64 {
        t_si / self.recoil_time()
    }

    pub fn time_to_si(&self, t: f64) -> f64 {
        t * self.recoil_time()
    }

    pub fn length_to_recoil(&self, z_si: f64) -> f64 {
        z_si * self.recoil_wavevector()
    }

    pub fn length_to_si(&self, z: f64) -> f64 {
        z / self.recoil_wavevector()
    }

    pub fn velocity_to_recoil(&self, v_si: f64) -> f64 {
        v_si / self.recoil_velocity()
    }

    pub fn velocity_to_si(&self, v: f64) -> f64 {
        v * self.recoil_velocity()
    }

    pub fn energy_to_recoil(&self, e_si: f64) -> f64 {
        e_si / self.recoil_energy()
    }

    pub fn energy_to_si(&self, e: f64) -> f64 {
        e * self.recoil_energy()
    }

    /// Dimensionless force `f = F/(k_r E_r)` from the acceleration `F/m0` in m/s².
    pub fn accel_to_force(&self, accel_si: f64) -> f64 {
        accel_si * self.bare_mass / (self.recoil_wavevector() * self.recoil_energy())
    }

    /// Acceleration `F/m0` in m/s² from the dimensionless force.
    pub fn force_to_accel(&self, f: f64) -> f64 {
        f * self.recoil_wavevector() * self.recoil_energy() / self.bare_mass
    }

    /// Angular frequency in rad/s from its value in 1/t_r.
    pub fn frequency_to_si(&self, omega: f64) -> f64 {
        omega / self.recoil_time()
    }

    /// Angular frequency in 1/t_r from rad/s.
    pub fn frequency_to_recoil(&self, omega_si: f64) -> f64 {
        omega_si * self.recoil_time()
    }

    /// Bloch frequency `ω_B = F d / ħ` in rad/s for a dimensionless force.
    pub fn bloch_frequency_si(&self, f: f64) -> f64 {
        self.frequency_to_si(std::f64::consts::PI * f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rb87_recoil_scales_match_known_values() {
        let cfg = LatticeConfig::rb87_1064nm(9.4).unwrap();
        // v_r = 4.3 um/ms and E_r/h close to 2.03 kHz for this species/wavelength
        assert_relative_eq!(cfg.recoil_velocity(), 4.315e-3, max_relative = 1e-3);
        assert_relative_eq!(
            cfg.recoil_energy() / constants::PLANCK,
            2.028e3,
            max_relative = 1e-3
        );
        assert_relative_eq!(cfg.recoil_time(), 7.849e-5, max_relative = 1e-3);
        assert_relative_eq!(cfg.lattice_constant(), 532e-9, max_relative = 1e-12);
    }

    #[test]
    fn bloch_frequency_for_typical_force() {
        let cfg = LatticeConfig::rb87_1064nm(9.4).unwrap();
        let f = cfg.accel_to_force(11.7);
        let omega_b = cfg.bloch_frequency_si(f);
        // F d / ħ evaluated directly in SI
        let direct = 11.7 * cfg.bare_mass() * cfg.lattice_constant() / constants::HBAR;
        assert_relative_eq!(omega_b, direct, max_relative = 1e-12);
        assert!((omega_b - 8.5e3).abs() < 1.0e2, "omega_B = {omega_b}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(LatticeConfig::new(-1.0, 1e-6, 1e-25).is_err());
        assert!(LatticeConfig::new(1.0, 0.0, 1e-25).is_err());
        assert!(LatticeConfig::new(1.0, 1e-6, -1e-25).is_err());
        assert!(LatticeConfig::new(f64::NAN, 1e-6, 1e-25).is_err());
    }
}
