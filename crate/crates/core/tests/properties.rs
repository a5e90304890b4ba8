//! Property tests of the structural invariants.

use blochdyn_core::bandstructure::KGrid;
use blochdyn_core::propagator::ForceSchedule;
use blochdyn_core::tridiag::eigh_tridiagonal;
use blochdyn_core::units::LatticeConfig;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Converting a physical quantity to recoil units and back reproduces it
    /// to 12 significant digits.
    #[test]
    fn unit_conversions_round_trip(
        depth in 0.0..30.0f64,
        wavelength in 0.4e-6..2.0e-6f64,
        mass_amu in 1.0..250.0f64,
        value in prop::num::f64::POSITIVE.prop_filter("sane", |v| (1e-12..1e12).contains(v)),
    ) {
        let cfg = LatticeConfig::new(
            depth,
            wavelength,
            mass_amu * blochdyn_core::units::constants::ATOMIC_MASS_KG,
        ).unwrap();
        let checks = [
            cfg.time_to_si(cfg.time_to_recoil(value)),
            cfg.length_to_si(cfg.length_to_recoil(value)),
            cfg.velocity_to_si(cfg.velocity_to_recoil(value)),
            cfg.energy_to_si(cfg.energy_to_recoil(value)),
            cfg.force_to_accel(cfg.accel_to_force(value)),
            cfg.frequency_to_si(cfg.frequency_to_recoil(value)),
        ];
        for back in checks {
            prop_assert!((back - value).abs() <= 1e-12 * value.abs());
        }
    }

    /// The force protocol is zero before the delay, the plateau after the
    /// ramp, and monotone in between.
    #[test]
    fn force_schedule_is_monotone(
        delay in 0.0..5.0f64,
        rise in 1e-6..5.0f64,
        plateau in prop::num::f64::NORMAL.prop_filter("bounded", |p| p.abs() < 1e3),
    ) {
        let s = ForceSchedule { delay, rise, plateau };
        prop_assert_eq!(s.at(delay - 1e-9), 0.0);
        prop_assert_eq!(s.at(delay + rise), plateau);
        let mut last = 0.0;
        for i in 0..=100 {
            let v = s.at(delay + rise * i as f64 / 100.0) * plateau.signum();
            prop_assert!(v >= last - 1e-12 * plateau.abs());
            last = v;
        }
    }

    /// k-grids are uniform and exactly mirror-symmetric.
    #[test]
    fn k_grids_are_symmetric(half in 2usize..400) {
        let n = 2 * half + 1;
        let grid = KGrid::uniform(n);
        let pts = grid.points();
        prop_assert_eq!(pts.len(), n);
        prop_assert_eq!(pts[0], -1.0);
        prop_assert_eq!(pts[n - 1], 1.0);
        prop_assert_eq!(pts[half], 0.0);
        for i in 0..n {
            prop_assert_eq!(pts[i], -pts[n - 1 - i]);
        }
        let h = grid.spacing();
        for w in pts.windows(2) {
            prop_assert!((w[1] - w[0] - h).abs() < 1e-12);
        }
    }

    /// The QL eigensolver agrees with a dense symmetric eigensolver.
    #[test]
    fn tridiagonal_spectra_match_a_dense_oracle(
        n in 2usize..24,
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let diag: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let off: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-5.0..5.0)).collect();

        let mine = eigh_tridiagonal(&diag, &off, true).unwrap();

        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = diag[i];
            if i + 1 < n {
                dense[(i, i + 1)] = off[i];
                dense[(i + 1, i)] = off[i];
            }
        }
        let mut oracle: Vec<f64> = dense.symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(|a, b| a.total_cmp(b));

        let scale = oracle.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in mine.values.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-10 * scale, "{a} vs {b}");
        }
        // eigenvectors are orthonormal and satisfy the eigen equation
        let vecs = mine.vectors.unwrap();
        for (j, v) in vecs.iter().enumerate() {
            let norm: f64 = v.iter().map(|x| x * x).sum();
            prop_assert!((norm - 1.0).abs() < 1e-10);
            let mut resid: f64 = 0.0;
            for i in 0..n {
                let mut hv = diag[i] * v[i];
                if i > 0 { hv += off[i - 1] * v[i - 1]; }
                if i + 1 < n { hv += off[i] * v[i + 1]; }
                resid = resid.max((hv - mine.values[j] * v[i]).abs());
            }
            prop_assert!(resid < 1e-9 * scale.max(1.0));
        }
    }

    /// Trace CSV round-trips bit-exactly for finite values.
    #[test]
    fn trace_csv_round_trips(
        values in prop::collection::vec(prop::num::f64::NORMAL.prop_filter("bounded", |v| v.abs() < 1e30), 2..40),
    ) {
        let n = values.len();
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
        let trace = blochdyn_core::VelocityTrace::new(times, values);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = blochdyn_core::VelocityTrace::read_csv(std::io::Cursor::new(buf)).unwrap();
        prop_assert_eq!(back.velocity, trace.velocity);
        prop_assert_eq!(back.times, trace.times);
    }
}
