//! Non-perturbative time evolution of the 1D wavefunction under
//! `V(ζ,t) = s cos²ζ - f(t) ζ + g|ψ|²` by spectral split-step (Strang)
//! integration, plus state preparation, observables, and synthetic
//! time-of-flight expansion.
//!
//! All propagator quantities are in recoil units: position ζ = k_r z, time in
//! t_r, momenta in k_r (so the equation of motion is
//! `i ∂ψ/∂τ = [-∂²_ζ + V] ψ`). The box is periodic; the linear force term is
//! applied directly on the finite box, so runs must keep the wavepacket away
//! from the edges (guarded below).

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::bandstructure::solve_bloch_state;
use crate::error::{Error, Result};
use crate::trace::VelocityTrace;
use crate::units::LatticeConfig;

/// Lattice sites per box and grid points per site; the total point count must
/// be a power of two and the site must be resolved by at least 8 points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    sites: usize,
    points_per_site: usize,
}

impl GridSpec {
    pub fn new(sites: usize, points_per_site: usize) -> Result<Self> {
        let n = sites * points_per_site;
        if points_per_site < 8 {
            return Err(Error::InvalidConfig(format!(
                "points_per_site = {points_per_site} must be >= 8"
            )));
        }
        if !n.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "total grid points {n} must be a power of two"
            )));
        }
        Ok(Self { sites, points_per_site })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn points_per_site(&self) -> usize {
        self.points_per_site
    }

    pub fn n_points(&self) -> usize {
        self.sites * self.points_per_site
    }

    /// Box length in 1/k_r (each site is d = π/k_r long).
    pub fn length(&self) -> f64 {
        self.sites as f64 * std::f64::consts::PI
    }

    pub fn dz(&self) -> f64 {
        std::f64::consts::PI / self.points_per_site as f64
    }

    /// Position of grid point `i`, centered on the box.
    pub fn z(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * self.n_points() as f64) * self.dz()
    }

    /// Momentum of FFT bin `j` in units of k_r.
    pub fn momentum(&self, j: usize) -> f64 {
        let n = self.n_points();
        let signed = if j < n / 2 { j as isize } else { j as isize - n as isize };
        2.0 * signed as f64 / self.sites as f64
    }
}

/// Complex amplitudes on the spatial grid; normalized so `∫|ψ|² dζ = 1`.
#[derive(Debug, Clone)]
pub struct Wavefunction {
    pub grid: GridSpec,
    pub amplitudes: Vec<Complex64>,
    /// Current time, t_r.
    pub time: f64,
}

impl Wavefunction {
    pub fn norm(&self) -> f64 {
        (self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dz()).sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for a in &mut self.amplitudes {
                *a /= n;
            }
        }
    }

    /// ⟨ζ⟩ over the box.
    pub fn mean_position(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, a) in self.amplitudes.iter().enumerate() {
            let w = a.norm_sqr();
            num += w * self.grid.z(i);
            den += w;
        }
        num / den
    }

    /// Standard deviation of the density, 1/k_r.
    pub fn position_sigma(&self) -> f64 {
        let mean = self.mean_position();
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, a) in self.amplitudes.iter().enumerate() {
            let w = a.norm_sqr();
            let d = self.grid.z(i) - mean;
            num += w * d * d;
            den += w;
        }
        (num / den).sqrt()
    }

    /// Snapshot dump: `z, re_psi, im_psi` (recoil units).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "z,re_psi,im_psi")?;
        for (i, a) in self.amplitudes.iter().enumerate() {
            writeln!(w, "{},{},{}", self.grid.z(i), a.re, a.im)?;
        }
        Ok(())
    }
}

/// Force protocol: zero during the delay, linear ramp over `rise`, then the
/// plateau value. All in recoil units (times t_r, force `F/(k_r E_r)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSchedule {
    pub delay: f64,
    pub rise: f64,
    pub plateau: f64,
}

impl ForceSchedule {
    pub fn instant(plateau: f64) -> Self {
        Self { delay: 0.0, rise: 0.0, plateau }
    }

    /// Build from SI quantities: delay and rise in seconds, plateau as the
    /// acceleration F/m0 in m/s².
    pub fn from_si(cfg: &LatticeConfig, delay_s: f64, rise_s: f64, accel: f64) -> Self {
        Self {
            delay: cfg.time_to_recoil(delay_s),
            rise: cfg.time_to_recoil(rise_s),
            plateau: cfg.accel_to_force(accel),
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        if t < self.delay {
            0.0
        } else if t < self.delay + self.rise {
            self.plateau * (t - self.delay) / self.rise
        } else {
            self.plateau
        }
    }
}

/// Prepare a band-`0` Bloch wavepacket at crystal momentum `k0` under a
/// Gaussian envelope with density standard deviation `sigma_z` (1/k_r).
///
/// The state is synthesized from the Bloch coefficients at `k0` and then
/// projected exactly onto the ground-band subspace (the numerical counterpart
/// of a perfectly adiabatic load), so residual excited-band population is at
/// machine level.
pub fn prepare_ground_state(
    depth: f64,
    grid: &GridSpec,
    sigma_z: f64,
    k0: f64,
) -> Result<Wavefunction> {
    let sigma_q = 1.0 / (2.0 * sigma_z);
    if sigma_z < 8.0 {
        return Err(Error::EnvelopeTooNarrow { sigma: sigma_z });
    }
    if (1.0 - k0.abs()) / sigma_q < 4.0 {
        // momentum tails would leak past the zone edge
        return Err(Error::EnvelopeTooNarrow { sigma: sigma_z });
    }
    if 6.0 * sigma_z > 0.5 * grid.length() {
        return Err(Error::InvalidConfig(format!(
            "envelope sigma {sigma_z:.1} does not fit the {:.1}-long box",
            grid.length()
        )));
    }

    let cutoff = crate::bandstructure::DEFAULT_CUTOFF;
    let (_, coeffs) = solve_bloch_state(depth, k0, cutoff, 1)?;
    let c0 = &coeffs[0];

    let n = grid.n_points();
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); n];
    for (i, amp) in amplitudes.iter_mut().enumerate() {
        let z = grid.z(i);
        let envelope = (-z * z / (4.0 * sigma_z * sigma_z)).exp();
        let mut bloch = Complex64::new(0.0, 0.0);
        for (j, &c) in c0.iter().enumerate() {
            if c.abs() < 1e-14 {
                continue;
            }
            let q = k0 + 2.0 * (j as f64 - cutoff as f64);
            bloch += c * Complex64::from_polar(1.0, q * z);
        }
        *amp = envelope * bloch;
    }
    let mut psi = Wavefunction { grid: *grid, amplitudes, time: 0.0 };
    psi.normalize();

    let (projected, overlap) = project_band(&psi, depth, 0, cutoff)?;
    if overlap < 0.999 {
        return Err(Error::EnvelopeTooNarrow { sigma: sigma_z });
    }
    Ok(projected)
}

/// Decompose a state over the lattice bands: grid momenta are grouped by
/// reduced crystal momentum and projected on the Bloch coefficient vectors.
/// Returns per-band populations (they sum to <= 1; the remainder lives above
/// `n_bands`).
pub fn band_populations(
    psi: &Wavefunction,
    depth: f64,
    n_bands: usize,
    cutoff: usize,
) -> Result<Vec<f64>> {
    let (pops, _, _) = band_decomposition(psi, depth, n_bands, cutoff)?;
    Ok(pops)
}

/// Project a state onto one band; returns the projected (renormalized) state
/// and the fraction of the original norm it retains.
pub fn project_band(
    psi: &Wavefunction,
    depth: f64,
    band: usize,
    cutoff: usize,
) -> Result<(Wavefunction, f64)> {
    let (_, mut spectral, plans) = band_decomposition_keep(psi, depth, band + 1, cutoff)?;
    let n = psi.grid.n_points();
    // spectral now holds only the band-`band` component
    let retained: f64 = spectral.iter().map(|a| a.norm_sqr()).sum::<f64>()
        / psi.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>();
    plans.inverse.process(&mut spectral);
    let scale = 1.0 / n as f64;
    for a in &mut spectral {
        *a *= scale;
    }
    let mut out = Wavefunction { grid: psi.grid, amplitudes: spectral, time: psi.time };
    out.normalize();
    Ok((out, retained))
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plan_pair(n: usize) -> FftPair {
    let mut planner = FftPlanner::new();
    FftPair { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
}

/// Shared machinery for band decomposition: populations per band, and the
/// spectral amplitudes filtered to the last requested band.
fn band_decomposition_keep(
    psi: &Wavefunction,
    depth: f64,
    n_bands: usize,
    cutoff: usize,
) -> Result<(Vec<f64>, Vec<Complex64>, FftPair)> {
    let n = psi.grid.n_points();
    let sites = psi.grid.sites();
    let plans = plan_pair(n);
    let mut spectral = psi.amplitudes.clone();
    plans.forward.process(&mut spectral);

    let total: f64 = spectral.iter().map(|a| a.norm_sqr()).sum();
    // group FFT bins by reduced crystal momentum: bin j has q = 2*signed/M,
    // signed = m + M*l once reduced
    let mut group_bins: Vec<Vec<usize>> = vec![Vec::new(); sites];
    for j in 0..n {
        let signed = if j < n / 2 { j as isize } else { j as isize - n as isize };
        let m = signed.rem_euclid(sites as isize) as usize;
        group_bins[m].push(j);
    }

    let mut pops = vec![0.0; n_bands];
    let mut kept = vec![Complex64::new(0.0, 0.0); n];
    for (m, bins) in group_bins.iter().enumerate() {
        let weight: f64 = bins.iter().map(|&j| spectral[j].norm_sqr()).sum();
        if weight <= 1e-30 * total {
            continue;
        }
        // reduced momentum in [-1, 1)
        let q0 = 2.0 * m as f64 / sites as f64;
        let k_red = q0 - 2.0 * ((q0 + 1.0) / 2.0).floor();
        let (_, coeffs) = solve_bloch_state(depth, k_red, cutoff, n_bands)?;
        for (b, cb) in coeffs.iter().enumerate() {
            // α_b = Σ_ℓ c_b(ℓ) ψ̃(k_red + 2ℓ)
            let mut alpha = Complex64::new(0.0, 0.0);
            let mut used: Vec<(usize, f64)> = Vec::new();
            for &j in bins {
                let q = psi.grid.momentum(j);
                let l = ((q - k_red) / 2.0).round() as isize + cutoff as isize;
                if l < 0 || l as usize >= cb.len() {
                    continue;
                }
                let c = cb[l as usize];
                alpha += c * spectral[j];
                used.push((j, c));
            }
            pops[b] += alpha.norm_sqr() / total;
            if b + 1 == n_bands {
                for (j, c) in used {
                    kept[j] = alpha * c;
                }
            }
        }
    }
    Ok((pops, kept, plans))
}

fn band_decomposition(
    psi: &Wavefunction,
    depth: f64,
    n_bands: usize,
    cutoff: usize,
) -> Result<(Vec<f64>, Vec<Complex64>, FftPair)> {
    band_decomposition_keep(psi, depth, n_bands, cutoff)
}

/// Raised-cosine adiabatic load: evolve from the free-particle envelope state
/// while the lattice depth rises as `s(t) = s (1 - cos(π t/T))/2`. Slower but
/// closer to how the experiment prepares the state; for fidelity studies.
pub fn ramp_load(
    depth: f64,
    grid: &GridSpec,
    sigma_z: f64,
    duration: f64,
    dt: f64,
) -> Result<Wavefunction> {
    let n = grid.n_points();
    let mut psi = {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); n];
        for (i, a) in amplitudes.iter_mut().enumerate() {
            let z = grid.z(i);
            *a = Complex64::new((-z * z / (4.0 * sigma_z * sigma_z)).exp(), 0.0);
        }
        let mut psi = Wavefunction { grid: *grid, amplitudes, time: 0.0 };
        psi.normalize();
        psi
    };

    let plans = plan_pair(n);
    let steps = (duration / dt).ceil() as usize;
    let dt = duration / steps as f64;
    let kin_half: Vec<Complex64> = (0..n)
        .map(|j| {
            let q = grid.momentum(j);
            Complex64::from_polar(1.0 / n as f64, -q * q * dt / 2.0)
        })
        .collect();
    for step in 0..steps {
        let t_mid = (step as f64 + 0.5) * dt;
        let s_now = depth * 0.5 * (1.0 - (std::f64::consts::PI * t_mid / duration).cos());
        kick(&plans, &mut psi.amplitudes, &kin_half);
        for (i, a) in psi.amplitudes.iter_mut().enumerate() {
            let z = grid.z(i);
            let v = s_now * z.cos().powi(2);
            *a *= Complex64::from_polar(1.0, -v * dt);
        }
        kick(&plans, &mut psi.amplitudes, &kin_half);
    }
    psi.time = 0.0;
    psi.normalize();
    Ok(psi)
}

fn kick(plans: &FftPair, amps: &mut [Complex64], phase: &[Complex64]) {
    plans.forward.process(amps);
    for (a, p) in amps.iter_mut().zip(phase) {
        *a *= p;
    }
    plans.inverse.process(amps);
}

/// Options of a split-step run. Times in t_r.
#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    /// Step size; must satisfy `s * dt <= 0.5`.
    pub dt: f64,
    pub t_final: f64,
    /// Mean-field strength; 0 is the linear Schrödinger equation.
    pub g: f64,
    /// Observable sampling interval.
    pub sample_interval: f64,
    /// Keep full wavefunction snapshots this often (None: only the final one).
    pub snapshot_interval: Option<f64>,
    /// Number of momentum peak windows (odd; centered on 0, spacing 2 k_r).
    pub n_peak_windows: usize,
    /// Edge margin, in sites, that the wavepacket must not populate.
    pub guard_sites: usize,
    /// Constant added to the potential (observables must not change).
    pub potential_offset: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            dt: 1.0 / 500.0,
            t_final: 1.0,
            g: 0.0,
            sample_interval: 0.05,
            snapshot_interval: None,
            n_peak_windows: 7,
            guard_sites: 50,
            potential_offset: 0.0,
        }
    }
}

/// Result of a split-step run: sampled observables (velocity in v_r,
/// acceleration in v_r/t_r, per-window momentum peak populations) and any
/// requested snapshots.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub trace: VelocityTrace,
    pub snapshots: Vec<Wavefunction>,
}

/// Instantaneous observables of a state.
#[derive(Debug, Clone)]
pub struct Observables {
    /// ⟨v⟩ = ⟨p⟩/m0 in v_r.
    pub mean_velocity: f64,
    /// Ehrenfest acceleration `f(t) - ⟨∂V/∂ζ⟩` in v_r/t_r.
    pub mean_acceleration: f64,
    /// (momenta k_r, density per k_r), ascending.
    pub momentum_distribution: (Vec<f64>, Vec<f64>),
    /// Population within |q - 2c| <= 1/2 for window centers c.
    pub peak_populations: Vec<f64>,
}

/// Observables of a state under instantaneous force `force_now`.
pub fn observables(
    psi: &Wavefunction,
    depth: f64,
    force_now: f64,
    n_peak_windows: usize,
) -> Observables {
    let plans = plan_pair(psi.grid.n_points());
    observables_with(&plans, psi, depth, force_now, n_peak_windows)
}

fn observables_with(
    plans: &FftPair,
    psi: &Wavefunction,
    depth: f64,
    force_now: f64,
    n_peak_windows: usize,
) -> Observables {
    assert!(n_peak_windows % 2 == 1, "peak windows must be odd-counted");
    let n = psi.grid.n_points();
    let mut spectral = psi.amplitudes.clone();
    plans.forward.process(&mut spectral);

    let total: f64 = spectral.iter().map(|a| a.norm_sqr()).sum();
    let mut mean_q = 0.0;
    let half = n_peak_windows / 2;
    let mut peaks = vec![0.0; n_peak_windows];
    for (j, a) in spectral.iter().enumerate() {
        let q = psi.grid.momentum(j);
        let w = a.norm_sqr();
        mean_q += q * w;
        let c = (q / 2.0).round();
        if (q - 2.0 * c).abs() <= 0.5 && c.abs() <= half as f64 {
            peaks[(c as isize + half as isize) as usize] += w;
        }
    }
    mean_q /= total;
    for p in &mut peaks {
        *p /= total;
    }

    // ⟨∂V_lat/∂ζ⟩ = -s ⟨sin 2ζ⟩
    let mut sin2 = 0.0;
    let mut den = 0.0;
    for (i, a) in psi.amplitudes.iter().enumerate() {
        let w = a.norm_sqr();
        sin2 += w * (2.0 * psi.grid.z(i)).sin();
        den += w;
    }
    sin2 /= den;

    // sorted distribution
    let dq = 2.0 / psi.grid.sites() as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| psi.grid.momentum(a).total_cmp(&psi.grid.momentum(b)));
    let qs: Vec<f64> = order.iter().map(|&j| psi.grid.momentum(j)).collect();
    let rho: Vec<f64> = order
        .iter()
        .map(|&j| spectral[j].norm_sqr() / (total * dq))
        .collect();

    Observables {
        mean_velocity: mean_q,
        mean_acceleration: force_now + depth * sin2,
        momentum_distribution: (qs, rho),
        peak_populations: peaks,
    }
}

/// Total energy ⟨H⟩ in E_r of a state in the static potential
/// `s cos²ζ - f ζ + offset` with mean-field strength `g`.
pub fn energy(psi: &Wavefunction, depth: f64, force: f64, g: f64, offset: f64) -> f64 {
    let n = psi.grid.n_points();
    let plans = plan_pair(n);
    let mut spectral = psi.amplitudes.clone();
    plans.forward.process(&mut spectral);
    let total: f64 = spectral.iter().map(|a| a.norm_sqr()).sum();
    let mut kinetic = 0.0;
    for (j, a) in spectral.iter().enumerate() {
        let q = psi.grid.momentum(j);
        kinetic += q * q * a.norm_sqr();
    }
    kinetic /= total;

    let dz = psi.grid.dz();
    let norm: f64 = psi.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * dz;
    let mut potential = 0.0;
    for (i, a) in psi.amplitudes.iter().enumerate() {
        let z = psi.grid.z(i);
        let w = a.norm_sqr() * dz / norm;
        potential += w * (depth * z.cos().powi(2) - force * z + offset);
        potential += 0.5 * g * a.norm_sqr() * w;
    }
    kinetic + potential
}

/// Strang split-step evolution: half kinetic, full potential (lattice, force
/// at the step midpoint, optional mean field), half kinetic. Kinetic
/// half-steps of adjacent steps are fused between observable samples.
pub fn evolve(
    psi0: &Wavefunction,
    depth: f64,
    schedule: &ForceSchedule,
    opts: &EvolveOptions,
) -> Result<Evolution> {
    if depth * opts.dt > 0.5 {
        return Err(Error::TimeStepTooLarge { value: depth * opts.dt });
    }
    if opts.sample_interval < opts.dt {
        return Err(Error::InvalidConfig("sample_interval must be >= dt".into()));
    }
    let grid = psi0.grid;
    let n = grid.n_points();
    if 2 * opts.guard_sites * grid.points_per_site() >= n {
        return Err(Error::InvalidConfig("guard margin covers the whole box".into()));
    }

    let steps_per_sample = (opts.sample_interval / opts.dt).round().max(1.0) as usize;
    let dt = opts.sample_interval / steps_per_sample as f64;
    let n_intervals = ((opts.t_final / opts.sample_interval) - 1e-9).ceil().max(1.0) as usize;

    let plans = plan_pair(n);
    let inv_n = 1.0 / n as f64;
    let kin_half: Vec<Complex64> = (0..n)
        .map(|j| {
            let q = grid.momentum(j);
            Complex64::from_polar(inv_n, -q * q * dt / 2.0)
        })
        .collect();
    let kin_full: Vec<Complex64> = (0..n)
        .map(|j| {
            let q = grid.momentum(j);
            Complex64::from_polar(inv_n, -q * q * dt)
        })
        .collect();
    // time-independent part of the potential phase
    let static_phase: Vec<Complex64> = (0..n)
        .map(|i| {
            let z = grid.z(i);
            Complex64::from_polar(1.0, -(depth * z.cos().powi(2) + opts.potential_offset) * dt)
        })
        .collect();
    let zs: Vec<f64> = (0..n).map(|i| grid.z(i)).collect();

    let mut force_cache: Option<(f64, Vec<Complex64>)> = None;
    let mut apply_potential =
        |amps: &mut [Complex64], f_now: f64, g: f64| {
            if g != 0.0 {
                for i in 0..n {
                    let v = -f_now * zs[i] + g * amps[i].norm_sqr();
                    amps[i] *= static_phase[i] * Complex64::from_polar(1.0, -v * dt);
                }
                return;
            }
            if f_now == 0.0 {
                for i in 0..n {
                    amps[i] *= static_phase[i];
                }
                return;
            }
            let rebuild = match &force_cache {
                Some((f, _)) => *f != f_now,
                None => true,
            };
            if rebuild {
                let arr: Vec<Complex64> = zs
                    .iter()
                    .map(|&z| Complex64::from_polar(1.0, f_now * z * dt))
                    .collect();
                force_cache = Some((f_now, arr));
            }
            let (_, arr) = force_cache.as_ref().unwrap();
            for i in 0..n {
                amps[i] *= static_phase[i] * arr[i];
            }
        };

    let guard_pts = opts.guard_sites * grid.points_per_site();
    let check_guard = |amps: &[Complex64], t: f64| -> Result<()> {
        let dz = grid.dz();
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * dz;
        let mut edge = 0.0;
        for i in 0..guard_pts {
            edge += amps[i].norm_sqr() + amps[n - 1 - i].norm_sqr();
        }
        edge *= dz / norm;
        if edge > 1e-6 {
            return Err(Error::BoxTooSmall { mass: edge, margin: opts.guard_sites, t });
        }
        Ok(())
    };

    let mut psi = psi0.clone();
    let t0 = psi.time;
    let mut times = Vec::with_capacity(n_intervals + 1);
    let mut velocity = Vec::with_capacity(n_intervals + 1);
    let mut acceleration = Vec::with_capacity(n_intervals + 1);
    let mut peaks_series = Vec::with_capacity(n_intervals + 1);
    let mut snapshots = Vec::new();

    let record = |psi: &Wavefunction,
                      times: &mut Vec<f64>,
                      velocity: &mut Vec<f64>,
                      acceleration: &mut Vec<f64>,
                      peaks_series: &mut Vec<Vec<f64>>|
     {
        let obs = observables_with(&plans, psi, depth, schedule.at(psi.time), opts.n_peak_windows);
        times.push(psi.time);
        velocity.push(obs.mean_velocity);
        acceleration.push(obs.mean_acceleration);
        peaks_series.push(obs.peak_populations);
    };

    check_guard(&psi.amplitudes, psi.time)?;
    record(&psi, &mut times, &mut velocity, &mut acceleration, &mut peaks_series);
    let snap_every = opts.snapshot_interval.map(|si| {
        ((si / opts.sample_interval).round().max(1.0)) as usize
    });
    if snap_every.is_some() {
        snapshots.push(psi.clone());
    }

    for interval in 0..n_intervals {
        let block_t0 = t0 + interval as f64 * opts.sample_interval;
        // fused Strang block: K/2 (V K)^(m-1) V K/2
        kick(&plans, &mut psi.amplitudes, &kin_half);
        for step in 0..steps_per_sample {
            let t_mid = block_t0 + (step as f64 + 0.5) * dt;
            apply_potential(&mut psi.amplitudes, schedule.at(t_mid), opts.g);
            let phase = if step + 1 == steps_per_sample { &kin_half } else { &kin_full };
            kick(&plans, &mut psi.amplitudes, phase);
        }
        psi.time = t0 + (interval + 1) as f64 * opts.sample_interval;
        check_guard(&psi.amplitudes, psi.time)?;
        record(&psi, &mut times, &mut velocity, &mut acceleration, &mut peaks_series);
        if let Some(every) = snap_every {
            if (interval + 1) % every == 0 {
                snapshots.push(psi.clone());
            }
        }
    }
    if snapshots.last().map(|s| s.time) != Some(psi.time) {
        snapshots.push(psi);
    }

    let mut trace = VelocityTrace::new(times, velocity);
    trace.acceleration = Some(acceleration);
    trace.peak_amplitudes = Some(peaks_series);
    Ok(Evolution { trace, snapshots })
}

/// Synthetic 1D density profile after free time-of-flight expansion.
///
/// The momentum distribution is mapped to the far-field positions
/// `z = v t_tof` and convolved with the initial cloud size (which dominates
/// the peak width at laboratory expansion times). Positions in meters,
/// density per meter, normalized over the full line, so the window integral
/// equals the enclosed momentum-space mass.
#[derive(Debug, Clone)]
pub struct Profile {
    pub positions: Vec<f64>,
    pub density: Vec<f64>,
    /// Fraction of the cloud inside the window; None when unknown (external data).
    pub mass_in_window: Option<f64>,
}

impl Profile {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        crate::io::write_numeric_csv(
            &mut w,
            &["z_m", "density_per_m"],
            &[&self.positions, &self.density],
        )
    }
}

pub fn tof_expand(
    psi: &Wavefunction,
    cfg: &LatticeConfig,
    tof_time: f64,
    window: (f64, f64),
    n_points: usize,
) -> Profile {
    let n = psi.grid.n_points();
    let plans = plan_pair(n);
    let mut spectral = psi.amplitudes.clone();
    plans.forward.process(&mut spectral);
    let total: f64 = spectral.iter().map(|a| a.norm_sqr()).sum();

    // initial cloud size sets the far-field peak width
    let sigma = psi.position_sigma() / cfg.recoil_wavevector();
    let v_r = cfg.recoil_velocity();

    let (lo, hi) = window;
    let dx = (hi - lo) / (n_points - 1) as f64;
    let positions: Vec<f64> = (0..n_points).map(|i| lo + i as f64 * dx).collect();
    let mut density = vec![0.0; n_points];
    let mut mass = 0.0;
    let gauss_norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let reach = (8.0 * sigma / dx).ceil() as isize;
    for (j, a) in spectral.iter().enumerate() {
        let pop = a.norm_sqr() / total;
        if pop < 1e-16 {
            continue;
        }
        let center = psi.grid.momentum(j) * v_r * tof_time;
        let i0 = ((center - lo) / dx).round() as isize;
        for i in (i0 - reach).max(0)..=(i0 + reach).min(n_points as isize - 1) {
            let x = positions[i as usize] - center;
            density[i as usize] += pop * gauss_norm * (-x * x / (2.0 * sigma * sigma)).exp();
        }
        mass += pop * (phi((hi - center) / sigma) - phi((lo - center) / sigma));
    }
    Profile { positions, density, mass_in_window: Some(mass) }
}

/// Standard normal CDF (Abramowitz–Stegun 7.1.26 based erf, ~1e-7 absolute).
fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}
