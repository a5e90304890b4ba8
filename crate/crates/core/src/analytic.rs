//! First-order-in-force predictions for the response of a narrow single-band
//! wavepacket: the short-time acceleration formula, the full perturbative
//! acceleration/velocity trace with Bloch drift, force-dressed ("modified")
//! band amplitudes, and the decomposition of the acceleration into intraband,
//! interband, and coherence contributions.
//!
//! Everything is expressed in recoil units. Accelerations carry units of
//! `F/m0`, i.e. the value 1 means the bare-mass response; multiply by the
//! dimensionless force to get recoil acceleration (`v_r/t_r`).
//!
//! Key relations (band quantities from [`BandData`], all dimensionless):
//!
//! - sum rule: `m0/m*_N(k) + Σ_{n≠N} 4 p_nN²/Δ_nN = 1`
//! - drift: `κ = k - f t`, with `f t` the accumulated crystal-momentum kick
//! - phases: `γ_n(κ,t) = ∫_0^t [E_n(κ + f t') - f ξ_nn(κ + f t')] dt'`
//! - acceleration (units F/m0):
//!   `∫dκ |c_N(κ)|² { m0/m*_N(k) + 4 Σ_{n≠N} [ (Δ_nN(k)/Δ_nN(κ)²) p_Nn(k) p_nN(κ) cos γ_Nn - p_nN(k)²/Δ_nN(k) ] } + 1 - m0/m*` ...
//!   organized below as intra + inter + coherence, with `k = κ + f t`.

use num_complex::Complex64;

use crate::bandstructure::BandData;
use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson_vec, gauss_legendre_on};
use crate::trace::VelocityTrace;

/// Default quadrature order over the wavepacket support.
pub const DEFAULT_QUAD_NODES: usize = 129;
/// Default half-width of the support in units of sigma.
pub const DEFAULT_SUPPORT_SIGMAS: f64 = 7.0;
/// Default validity-guard threshold on the first-order amplitude ratio.
pub const DEFAULT_GUARD_THRESHOLD: f64 = 0.3;
/// Default absolute tolerance of the phase quadrature, E_r t_r.
pub const DEFAULT_PHASE_TOL: f64 = 1e-10;

/// A single-band wavepacket with a Gaussian crystal-momentum distribution:
/// `c_N(k) ∝ exp(-(k-k0)²/(4σ²))`, normalized so `∫|c_N|² dk = 1`.
#[derive(Debug, Clone, Copy)]
pub struct WavepacketSpec {
    /// Band index N (0 = ground band).
    pub band: usize,
    /// Center k0 in units of k_r.
    pub center: f64,
    /// Width σ_k in units of k_r.
    pub sigma: f64,
    /// Gauss–Legendre nodes across the support.
    pub n_nodes: usize,
    /// Support half-width in units of σ_k.
    pub support_sigmas: f64,
}

impl WavepacketSpec {
    pub fn gaussian(band: usize, center: f64, sigma: f64) -> Self {
        Self {
            band,
            center,
            sigma,
            n_nodes: DEFAULT_QUAD_NODES,
            support_sigmas: DEFAULT_SUPPORT_SIGMAS,
        }
    }

    /// Normalized amplitude c_N(k).
    pub fn amplitude(&self, k: f64) -> f64 {
        let norm = (2.0 * std::f64::consts::PI * self.sigma * self.sigma).powf(-0.25);
        norm * (-(k - self.center).powi(2) / (4.0 * self.sigma * self.sigma)).exp()
    }

    pub fn support(&self) -> (f64, f64) {
        (
            self.center - self.support_sigmas * self.sigma,
            self.center + self.support_sigmas * self.sigma,
        )
    }

    fn validate(&self, bands: &BandData) -> Result<()> {
        if self.band >= bands.n_bands() {
            return Err(Error::InvalidConfig(format!(
                "band {} not resolved ({} bands available)",
                self.band,
                bands.n_bands()
            )));
        }
        if !(self.sigma > 0.0) || self.n_nodes < 8 {
            return Err(Error::InvalidConfig("wavepacket needs sigma > 0 and >= 8 nodes".into()));
        }
        let (lo, hi) = self.support();
        if lo <= -1.0 || hi >= 1.0 {
            return Err(Error::SupportTouchesZoneEdge { lo, hi });
        }
        Ok(())
    }

    /// Quadrature nodes and weights over the support.
    pub fn quadrature(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.support();
        gauss_legendre_on(self.n_nodes, lo, hi)
    }
}

/// Options of the perturbative evaluation.
#[derive(Debug, Clone, Copy)]
pub struct PerturbativeOptions {
    /// Number of bands kept in interband sums (including band N).
    pub n_sum_bands: usize,
    /// Absolute tolerance of the adaptive-Simpson phase integrals.
    pub phase_tol: f64,
    /// Flag threshold on max |F x_nN / E_nN|.
    pub guard_threshold: f64,
}

impl Default for PerturbativeOptions {
    fn default() -> Self {
        Self {
            n_sum_bands: 8,
            phase_tol: DEFAULT_PHASE_TOL,
            guard_threshold: DEFAULT_GUARD_THRESHOLD,
        }
    }
}

/// First-order validity diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ValidityReport {
    /// Largest |F x_nN/E_nN| encountered over the support and the drift path.
    pub max_amplitude_ratio: f64,
    pub guard_threshold: f64,
    /// True when the first-order treatment is being stretched.
    pub exceeded: bool,
}

/// Acceleration split into the population term of band N (intraband +
/// interband) and the interband-coherence term; units of F/m0 throughout.
/// `total = band_intra + band_inter + coherence` holds sample by sample.
#[derive(Debug, Clone)]
pub struct AccelDecomposition {
    pub times: Vec<f64>,
    pub total: Vec<f64>,
    pub band_intra: Vec<f64>,
    pub band_inter: Vec<f64>,
    pub coherence: Vec<f64>,
}

impl AccelDecomposition {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,a_total,a_intra,a_inter,a_coherence")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.times[i], self.total[i], self.band_intra[i], self.band_inter[i],
                self.coherence[i]
            )?;
        }
        Ok(())
    }
}

/// Short-time acceleration of Eq.-(4) form, in units of F/m0:
/// `⟨ m0/m*_N + Σ_{n≠N} 4 p_nN²/Δ_nN cos(Δ_nN t) ⟩` averaged over |c_N(k)|².
///
/// Valid for times short against the Bloch period (no drift included); at
/// t = 0 the sum rule collapses it to 1 for any lattice depth. Matrix
/// elements and gaps are evaluated by fresh eigensolves at the quadrature
/// nodes (the sum-rule identity is sensitive to interpolation noise across
/// narrowly avoided crossings in shallow lattices); only the smooth m0/m* of
/// band N comes from the tabulated stencil.
pub fn short_time_acceleration(
    bands: &BandData,
    spec: &WavepacketSpec,
    t: f64,
    opts: &PerturbativeOptions,
) -> Result<f64> {
    spec.validate(bands)?;
    let n_sum = opts.n_sum_bands.min(bands.n_bands());
    let cutoff = bands.cutoff();
    let dim = 2 * cutoff + 1;
    let (nodes, weights) = spec.quadrature();
    let mut acc = 0.0;
    for (&k, &w) in nodes.iter().zip(&weights) {
        let c2 = spec.amplitude(k).powi(2);
        let (energies, coeffs) =
            crate::bandstructure::solve_bloch_state(bands.depth(), k, cutoff, n_sum)?;
        let cn = &coeffs[spec.band];
        let mut bracket = bands.inverse_eff_mass_at(spec.band, k);
        for n in 0..n_sum {
            if n == spec.band {
                continue;
            }
            let mut p = 0.0;
            for j in 0..dim {
                let q = k + 2.0 * (j as f64 - cutoff as f64);
                p += coeffs[n][j] * q * cn[j];
            }
            let gap = energies[n] - energies[spec.band];
            bracket += 4.0 * p * p / gap * (gap * t).cos();
        }
        acc += w * c2 * bracket;
    }
    Ok(acc)
}

/// Everything the perturbative engine produces on a time grid.
#[derive(Debug, Clone)]
pub struct PerturbativeRun {
    pub decomposition: AccelDecomposition,
    /// Velocity trace in recoil units (times t_r, velocity v_r, acceleration
    /// v_r/t_r); acceleration is `f * total`.
    pub trace: VelocityTrace,
    pub validity: ValidityReport,
}

/// Evaluate the first-order acceleration and integrated velocity on `times`
/// (ascending, in t_r) under constant dimensionless force `force`.
pub fn perturbative_run(
    bands: &BandData,
    spec: &WavepacketSpec,
    force: f64,
    times: &[f64],
    opts: &PerturbativeOptions,
) -> Result<PerturbativeRun> {
    spec.validate(bands)?;
    let n_sum = opts.n_sum_bands.min(bands.n_bands());
    if spec.band >= n_sum {
        return Err(Error::InvalidConfig(format!(
            "band {} outside the {}-band sum",
            spec.band, n_sum
        )));
    }
    assert!(times.windows(2).all(|w| w[1] >= w[0]), "times must ascend");

    let (nodes, quad_w) = spec.quadrature();
    let weights: Vec<f64> = nodes
        .iter()
        .zip(&quad_w)
        .map(|(&k, &w)| w * spec.amplitude(k).powi(2))
        .collect();

    // Accumulated phases γ_n(κ_j, t), per node and band.
    let mut gamma = vec![0.0; nodes.len() * n_sum];
    let mut t_now = 0.0;
    let mut guard_max: f64 = 0.0;

    let n_t = times.len();
    let mut dec = AccelDecomposition {
        times: times.to_vec(),
        total: vec![0.0; n_t],
        band_intra: vec![0.0; n_t],
        band_inter: vec![0.0; n_t],
        coherence: vec![0.0; n_t],
    };

    for (it, &t) in times.iter().enumerate() {
        // Advance phases from t_now to t.
        if t > t_now {
            for (j, &kappa) in nodes.iter().enumerate() {
                let mut integrand = |tau: f64, out: &mut [f64]| {
                    let k = kappa + force * tau;
                    for (n, slot) in out.iter_mut().enumerate() {
                        *slot = bands.energy_at(n, k) - force * bands.lax_diag_at(n, k);
                    }
                };
                let inc =
                    adaptive_simpson_vec(&mut integrand, t_now, t, opts.phase_tol, n_sum);
                for n in 0..n_sum {
                    gamma[j * n_sum + n] += inc[n];
                }
            }
            t_now = t;
        }

        let (mut intra, mut inter, mut coh) = (0.0, 0.0, 0.0);
        for (j, &kappa) in nodes.iter().enumerate() {
            let w = weights[j];
            let k = kappa + force * t;
            let inv_m = bands.inverse_eff_mass_at(spec.band, k);
            intra += w * inv_m;
            inter += w * (1.0 - inv_m);
            let gamma_n0 = gamma[j * n_sum + spec.band];
            for n in 0..n_sum {
                if n == spec.band {
                    continue;
                }
                let gap_k = bands.gap_at(n, spec.band, k);
                let gap_kap = bands.gap_at(n, spec.band, kappa);
                let p_k = bands.momentum_at(spec.band, n, k);
                let p_kap = bands.momentum_at(n, spec.band, kappa);
                let g_nn = gamma_n0 - gamma[j * n_sum + n];
                coh += w
                    * 4.0
                    * ((gap_k / (gap_kap * gap_kap)) * p_k * p_kap * g_nn.cos()
                        - p_k * p_k / gap_k);
                let ratio = 2.0 * force.abs() * p_k.abs() / (gap_k * gap_k);
                guard_max = guard_max.max(ratio);
            }
        }
        dec.band_intra[it] = intra;
        dec.band_inter[it] = inter;
        dec.coherence[it] = coh;
        dec.total[it] = intra + inter + coh;
    }

    // Velocity: initial group velocity plus the cumulative integral of the
    // recoil acceleration f * total (trapezoid on the sample grid).
    let v0: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&k, &w)| w * bands.momentum_at(spec.band, spec.band, k))
        .sum();
    let accel: Vec<f64> = dec.total.iter().map(|a| force * a).collect();
    let mut velocity = vec![v0; n_t];
    for i in 1..n_t {
        let dt = times[i] - times[i - 1];
        velocity[i] = velocity[i - 1] + 0.5 * dt * (accel[i] + accel[i - 1]);
    }
    let mut trace = VelocityTrace::new(times.to_vec(), velocity);
    trace.acceleration = Some(accel);

    let validity = ValidityReport {
        max_amplitude_ratio: guard_max,
        guard_threshold: opts.guard_threshold,
        exceeded: guard_max > opts.guard_threshold,
    };
    Ok(PerturbativeRun { decomposition: dec, trace, validity })
}

/// First-order velocity trace (recoil units) with Bloch drift; the trace's
/// `acceleration` field is its exact derivative on the sample grid.
pub fn perturbative_velocity_trace(
    bands: &BandData,
    spec: &WavepacketSpec,
    force: f64,
    times: &[f64],
    opts: &PerturbativeOptions,
) -> Result<(VelocityTrace, ValidityReport)> {
    let run = perturbative_run(bands, spec, force, times, opts)?;
    Ok((run.trace, run.validity))
}

/// Acceleration decomposition (units F/m0) on a time grid.
pub fn acceleration_decomposition(
    bands: &BandData,
    spec: &WavepacketSpec,
    force: f64,
    times: &[f64],
    opts: &PerturbativeOptions,
) -> Result<(AccelDecomposition, ValidityReport)> {
    let run = perturbative_run(bands, spec, force, times, opts)?;
    Ok((run.decomposition, run.validity))
}

/// Phases γ_n(κ, t) for all bands below `n_sum`.
fn gammas_at(
    bands: &BandData,
    kappa: f64,
    force: f64,
    t: f64,
    n_sum: usize,
    tol: f64,
) -> Vec<f64> {
    let mut integrand = |tau: f64, out: &mut [f64]| {
        let k = kappa + force * tau;
        for (n, slot) in out.iter_mut().enumerate() {
            *slot = bands.energy_at(n, k) - force * bands.lax_diag_at(n, k);
        }
    };
    adaptive_simpson_vec(&mut integrand, 0.0, t, tol, n_sum)
}

/// First-order amplitude factor `F x_nN(k)/E_nN(k) = -2i f p_nN(k)/Δ_nN(k)²`.
fn dressing_ratio(bands: &BandData, n: usize, band_n: usize, k: f64, force: f64) -> Complex64 {
    let p = bands.momentum_at(n, band_n, k);
    let gap = bands.gap_at(n, band_n, k);
    Complex64::new(0.0, -2.0 * force * p / (gap * gap))
}

/// Amplitudes `b_n(k, t)` of the wavepacket on the modified (force-dressed)
/// band basis, evaluated at the given lab-frame momenta; rows are bands
/// `0..n_sum`, columns follow `ks`.
pub fn modified_bloch_amplitudes(
    bands: &BandData,
    spec: &WavepacketSpec,
    force: f64,
    t: f64,
    ks: &[f64],
    opts: &PerturbativeOptions,
) -> Result<Vec<Vec<Complex64>>> {
    spec.validate(bands)?;
    let n_sum = opts.n_sum_bands.min(bands.n_bands());
    let mut out = vec![vec![Complex64::new(0.0, 0.0); ks.len()]; n_sum];
    for (col, &k) in ks.iter().enumerate() {
        let kappa = k - force * t;
        let c = spec.amplitude(kappa);
        let gamma = gammas_at(bands, kappa, force, t, n_sum, opts.phase_tol);
        for n in 0..n_sum {
            let phase = Complex64::from_polar(1.0, -gamma[n]);
            out[n][col] = if n == spec.band {
                c * phase
            } else {
                let gap = bands.gap_at(n, spec.band, k);
                if gap.abs() < crate::bandstructure::DEGENERACY_FLOOR {
                    return Err(Error::DegenerateGap { n, m: spec.band, k, gap: gap.abs() });
                }
                -c * dressing_ratio(bands, n, spec.band, k, force) * phase
            };
        }
    }
    Ok(out)
}

/// Amplitudes `c_n(k, t)` of the same state on the ordinary Bloch basis.
/// For n ≠ N the two dressed terms cancel exactly at t = 0.
pub fn bloch_basis_amplitudes(
    bands: &BandData,
    spec: &WavepacketSpec,
    force: f64,
    t: f64,
    ks: &[f64],
    opts: &PerturbativeOptions,
) -> Result<Vec<Vec<Complex64>>> {
    spec.validate(bands)?;
    let n_sum = opts.n_sum_bands.min(bands.n_bands());
    let mut out = vec![vec![Complex64::new(0.0, 0.0); ks.len()]; n_sum];
    for (col, &k) in ks.iter().enumerate() {
        let kappa = k - force * t;
        let c = spec.amplitude(kappa);
        let gamma = gammas_at(bands, kappa, force, t, n_sum, opts.phase_tol);
        let phase_n = Complex64::from_polar(1.0, -gamma[spec.band]);
        for n in 0..n_sum {
            out[n][col] = if n == spec.band {
                c * phase_n
            } else {
                let gap_k = bands.gap_at(n, spec.band, k);
                let gap_kap = bands.gap_at(n, spec.band, kappa);
                if gap_k.abs() < crate::bandstructure::DEGENERACY_FLOOR
                    || gap_kap.abs() < crate::bandstructure::DEGENERACY_FLOOR
                {
                    return Err(Error::DegenerateGap {
                        n,
                        m: spec.band,
                        k,
                        gap: gap_k.abs().min(gap_kap.abs()),
                    });
                }
                let phase_own = Complex64::from_polar(1.0, -gamma[n]);
                c * (dressing_ratio(bands, n, spec.band, k, force) * phase_n
                    - dressing_ratio(bands, n, spec.band, kappa, force) * phase_own)
            };
        }
    }
    Ok(out)
}

/// Export a perturbative run as CSV: time, acceleration components (F/m0),
/// and velocity (v_r).
pub fn write_run_csv<W: std::io::Write>(run: &PerturbativeRun, mut w: W) -> Result<()> {
    writeln!(w, "t,a_total,a_intra,a_inter,a_coherence,v")?;
    let d = &run.decomposition;
    for i in 0..d.times.len() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            d.times[i],
            d.total[i],
            d.band_intra[i],
            d.band_inter[i],
            d.coherence[i],
            run.trace.velocity[i]
        )?;
    }
    Ok(())
}
